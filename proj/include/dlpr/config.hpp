#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>

#include "dlpr/optics.hpp"

namespace dlpr::cfg {

// Line-oriented "key = value" settings with '#' comments and dotted section
// keys (optics.distance = 0.375). Flags override file values; the resolved
// set is echoed next to every run's outputs.
class KeyValues {
 public:
  static KeyValues load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) {
    values_[key] = value;
  }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  unsigned get_unsigned(const std::string& key, unsigned fallback) const;

  void echo(std::ostream& os) const;
  void write_resolved(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace dlpr::cfg
