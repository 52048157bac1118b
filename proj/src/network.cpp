#include "dlpr/network.hpp"

#include <fstream>
#include <sstream>

namespace dlpr::net {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  size_t b = s.find_last_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

}  // namespace

int NetworkSpec::encoder_channels(int block) const {
  int c = base_channels;
  for (int i = 0; i < block; ++i) c *= channel_growth;
  return c;
}

int NetworkSpec::decoder_channels(int block) const {
  const int idx = down_blocks - 2 - block;
  return idx >= 0 ? encoder_channels(idx) : base_channels;
}

void NetworkSpec::validate() const {
  if (input_size < 2) throw UsageError("spec: input_size must be >= 2");
  if (down_blocks < 1) throw UsageError("spec: down_blocks must be >= 1");
  if (up_blocks < 0 || tail_blocks < 0)
    throw UsageError("spec: negative block count");
  if (base_channels < 1 || channel_growth < 1)
    throw UsageError("spec: base_channels and channel_growth must be >= 1");
  if (head != "logistic" && head != "up2-logistic")
    throw UsageError("spec: unknown head '" + head + "'");

  int extent = input_size;
  for (int i = 0; i < down_blocks; ++i) {
    if (extent % 2 != 0)
      throw UsageError("spec: input_size " + std::to_string(input_size) +
                       " is not divisible by 2^down_blocks (extent " +
                       std::to_string(extent) + " at down block " +
                       std::to_string(i) + ")");
    extent /= 2;
  }
  if (extent < 1)
    throw UsageError("spec: spatial extent collapses below 1 after down blocks");
  long restored = extent;
  for (int i = 0; i < up_blocks; ++i) restored *= 2;
  if (head_upsamples()) restored *= 2;
  if (restored != input_size)
    throw UsageError(
        "spec: up_blocks/head do not restore the input extent (got " +
        std::to_string(restored) + ", need " + std::to_string(input_size) + ")");

  for (auto [e, d] : skip_pairs) {
    if (e < 0 || e >= down_blocks || d < 0 || d >= up_blocks)
      throw UsageError("spec: skip pair (" + std::to_string(e) + "," +
                       std::to_string(d) + ") out of block range");
    // encoder block e output extent: input/2^(e+1); decoder block d output
    // extent: bottleneck * 2^(d+1)
    long enc_ext = input_size >> (e + 1);
    long dec_ext = (input_size >> down_blocks) << (d + 1);
    if (enc_ext != dec_ext)
      throw UsageError("spec: skip pair (" + std::to_string(e) + "," +
                       std::to_string(d) + ") connects extents " +
                       std::to_string(enc_ext) + " and " +
                       std::to_string(dec_ext));
  }
  for (size_t i = 0; i < dilations.size(); ++i)
    if (dilations[i] < 1) throw UsageError("spec: dilation must be >= 1");
}

std::string NetworkSpec::serialize() const {
  std::ostringstream os;
  os << "input_size = " << input_size << "\n"
     << "down_blocks = " << down_blocks << "\n"
     << "up_blocks = " << up_blocks << "\n"
     << "tail_blocks = " << tail_blocks << "\n"
     << "base_channels = " << base_channels << "\n"
     << "channel_growth = " << channel_growth << "\n";
  os << "dilations = ";
  for (size_t i = 0; i < dilations.size(); ++i)
    os << (i ? "," : "") << dilations[i];
  os << "\nskip_pairs = ";
  for (size_t i = 0; i < skip_pairs.size(); ++i)
    os << (i ? "," : "") << skip_pairs[i].first << ":" << skip_pairs[i].second;
  os << "\nhead = " << head << "\n";
  return os.str();
}

NetworkSpec NetworkSpec::parse(const std::string& text) {
  NetworkSpec spec;
  spec.dilations.clear();
  spec.skip_pairs.clear();
  bool saw_dil = false, saw_skip = false;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("spec: malformed line '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.rfind("meta.", 0) == 0) continue;  // checkpoint metadata lines
    try {
      if (key == "input_size") spec.input_size = std::stoi(val);
      else if (key == "down_blocks") spec.down_blocks = std::stoi(val);
      else if (key == "up_blocks") spec.up_blocks = std::stoi(val);
      else if (key == "tail_blocks") spec.tail_blocks = std::stoi(val);
      else if (key == "base_channels") spec.base_channels = std::stoi(val);
      else if (key == "channel_growth") spec.channel_growth = std::stoi(val);
      else if (key == "head") spec.head = val;
      else if (key == "dilations") {
        saw_dil = true;
        if (!val.empty())
          for (const auto& tok : split(val, ','))
            spec.dilations.push_back(std::stoi(trim(tok)));
      } else if (key == "skip_pairs") {
        saw_skip = true;
        if (!val.empty())
          for (const auto& tok : split(val, ',')) {
            const auto pair = split(trim(tok), ':');
            if (pair.size() != 2)
              throw UsageError("spec: bad skip pair '" + tok + "'");
            spec.skip_pairs.emplace_back(std::stoi(trim(pair[0])),
                                         std::stoi(trim(pair[1])));
          }
      } else {
        throw UsageError("spec: unknown key '" + key + "'");
      }
    } catch (const std::invalid_argument&) {
      throw UsageError("spec: non-numeric value for '" + key + "'");
    }
  }
  if (!saw_dil) spec.dilations = {1, 2, 4};
  if (!saw_skip && spec.down_blocks == 3 && spec.up_blocks == 3)
    spec.skip_pairs = {{1, 0}, {0, 1}};
  spec.validate();
  return spec;
}

NetworkSpec NetworkSpec::load_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open spec file " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace dlpr::net
