#include "dlpr/config.hpp"

#include <fstream>

namespace dlpr::cfg {

namespace {

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r\n");
  const size_t b = s.find_last_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

}  // namespace

KeyValues KeyValues::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("config " + path.string() + ":" + std::to_string(lineno) +
                       ": expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto val = trim(line.substr(eq + 1));
    if (key.empty())
      throw UsageError("config " + path.string() + ":" + std::to_string(lineno) +
                       ": empty key");
    kv.values_[key] = val;
  }
  return kv;
}

std::string KeyValues::get(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValues::get_double(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw UsageError("config key '" + key + "': '" + it->second +
                     "' is not a number");
  }
}

int KeyValues::get_int(const std::string& key, int fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw UsageError("config key '" + key + "': '" + it->second +
                     "' is not an integer");
  }
}

unsigned KeyValues::get_unsigned(const std::string& key, unsigned fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return static_cast<unsigned>(std::stoul(it->second));
  } catch (const std::exception&) {
    throw UsageError("config key '" + key + "': '" + it->second +
                     "' is not an unsigned integer");
  }
}

void KeyValues::echo(std::ostream& os) const {
  for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
}

void KeyValues::write_resolved(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  echo(out);
  if (!out) throw IoError("write failure on " + path.string());
}

}  // namespace dlpr::cfg
