#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dlpr/graph.hpp"
#include "dlpr/tensor.hpp"

namespace dlpr::net {

// Residual encoder-decoder layout. Down blocks halve the spatial extent via
// a strided convolution (1x1 strided shortcut); up blocks double it via a
// transposed convolution (2x2 transposed shortcut); declared skip pairs
// concatenate an encoder output onto a decoder output and project back with
// a 1x1 convolution; tail blocks refine at full resolution; the head maps
// to phase via -pi * logistic(x).
struct NetworkSpec {
  int input_size = 64;
  int down_blocks = 3;
  int up_blocks = 3;
  int tail_blocks = 2;
  int base_channels = 16;
  int channel_growth = 2;
  std::vector<int> dilations = {1, 2, 4};  // per down block; padded with 1s
  std::vector<std::pair<int, int>> skip_pairs = {{1, 0}, {0, 1}};  // (enc, dec)
  std::string head = "logistic";  // "logistic" | "up2-logistic"

  void validate() const;
  std::string serialize() const;
  static NetworkSpec parse(const std::string& text);
  static NetworkSpec load_file(const std::filesystem::path& p);

  int encoder_channels(int block) const;  // output channels of down block
  int decoder_channels(int block) const;  // output channels of up block
  bool head_upsamples() const { return head == "up2-logistic"; }
};

struct CheckpointMeta {
  int epoch = 0;
  unsigned seed = 0;
  std::string optics_digest;
};

enum class ConvKind { Conv, Transpose };

template <typename T>
struct ConvParam {
  TensorPtr<T> W;
  TensorPtr<T> b;
  ConvKind kind = ConvKind::Conv;
  int stride = 1;
  int dilation = 1;
  int padding = 0;
  std::string name;
};

template <typename T>
class Model {
 public:
  static Model build(const NetworkSpec& spec, unsigned seed);

  // Full forward pass; output shape equals input shape, values in [-pi, 0].
  TensorPtr<T> forward(Graph<T>& g, const TensorPtr<T>& x) const {
    return run(g, x, -1);
  }
  // Pre-activation output of the conv layer with the given flat index.
  TensorPtr<T> forward_to_conv(Graph<T>& g, const TensorPtr<T>& x,
                               int conv_index) const {
    if (conv_index < 0 || conv_index >= static_cast<int>(convs_.size()))
      throw UsageError("conv layer index " + std::to_string(conv_index) +
                       " out of range (model has " +
                       std::to_string(convs_.size()) + " conv layers)");
    return run(g, x, conv_index);
  }

  std::vector<TensorPtr<T>> parameters() const;
  long parameter_count() const;
  int conv_layer_count() const { return static_cast<int>(convs_.size()); }
  int filters_of_conv(int idx) const;
  T bias_of(int conv_idx, int filter) const {
    return convs_[static_cast<size_t>(conv_idx)].b->val[static_cast<size_t>(filter)];
  }
  const std::string& conv_name(int idx) const { return convs_[static_cast<size_t>(idx)].name; }
  const NetworkSpec& spec() const { return spec_; }
  CheckpointMeta& meta() { return meta_; }
  const CheckpointMeta& meta() const { return meta_; }

  // FNV-1a over the little-endian f32 image of all parameters; the
  // "sweeps leave the model untouched" witness.
  std::string parameter_digest() const;

  template <typename U>
  Model<U> cast() const;

  void save_checkpoint(const std::filesystem::path& path) const;
  static Model load_checkpoint(const std::filesystem::path& path);
  // Load while requiring the checkpoint to match `expected`; a mismatch is
  // reported with the first differing tensor named.
  static Model load_checkpoint(const std::filesystem::path& path,
                               const NetworkSpec& expected);

  template <typename U>
  friend class Model;

 private:
  TensorPtr<T> run(Graph<T>& g, const TensorPtr<T>& x, int stop_conv) const;
  TensorPtr<T> apply(Graph<T>& g, const TensorPtr<T>& x, int conv_idx) const;

  struct Down {
    int conv1, conv2, shortcut;
  };
  struct Up {
    int convt1, conv2, shortcut;
    int skip_enc = -1;  // encoder block concatenated after this up block
    int skip_proj = -1;
  };
  struct Tail {
    int conv1, conv2;
  };

  NetworkSpec spec_;
  CheckpointMeta meta_;
  std::vector<ConvParam<T>> convs_;
  std::vector<Down> down_;
  std::vector<Up> up_;
  std::vector<Tail> tail_;
  int head_up_ = -1;
  int head_ = -1;
};

using ModelF = Model<float>;
using ModelD = Model<double>;

// ---- template implementation -------------------------------------------

namespace detail {

template <typename T>
ConvParam<T> make_conv(std::mt19937& rng, ConvKind kind, int a, int b, int kh,
                       int kw, int stride, int dil, int pad,
                       const std::string& name, bool zero_init = false) {
  // kernel (out,in,kh,kw) for Conv, (in,out,kh,kw) for Transpose
  ConvParam<T> cp;
  cp.kind = kind;
  cp.stride = stride;
  cp.dilation = dil;
  cp.padding = pad;
  cp.name = name;
  cp.W = make_tensor<T>({a, b, kh, kw});
  const int out_ch = (kind == ConvKind::Conv) ? a : b;
  const int fan_in = ((kind == ConvKind::Conv) ? b : a) * kh * kw;
  if (!zero_init) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (auto& v : cp.W->val) v = static_cast<T>(dist(rng));
  }
  cp.b = make_tensor<T>({out_ch});
  cp.W->requires_grad = true;
  cp.b->requires_grad = true;
  return cp;
}

}  // namespace detail

template <typename T>
Model<T> Model<T>::build(const NetworkSpec& spec, unsigned seed) {
  spec.validate();
  Model<T> m;
  m.spec_ = spec;
  m.meta_.seed = seed;
  std::mt19937 rng(seed);

  auto dil_of = [&](int block) {
    return block < static_cast<int>(spec.dilations.size())
               ? spec.dilations[static_cast<size_t>(block)]
               : 1;
  };
  auto add = [&](ConvParam<T> cp) {
    m.convs_.push_back(std::move(cp));
    return static_cast<int>(m.convs_.size()) - 1;
  };

  int in_ch = 1;
  for (int i = 0; i < spec.down_blocks; ++i) {
    const int out_ch = spec.encoder_channels(i);
    const int dil = dil_of(i);
    const std::string tag = "down" + std::to_string(i);
    Down d;
    d.conv1 = add(detail::make_conv<T>(rng, ConvKind::Conv, out_ch, in_ch, 3, 3,
                                       2, 1, 1, tag + ".conv1"));
    d.conv2 = add(detail::make_conv<T>(rng, ConvKind::Conv, out_ch, out_ch, 3,
                                       3, 1, dil, dil, tag + ".conv2"));
    d.shortcut = add(detail::make_conv<T>(rng, ConvKind::Conv, out_ch, in_ch, 1,
                                          1, 2, 1, 0, tag + ".shortcut"));
    m.down_.push_back(d);
    in_ch = out_ch;
  }

  for (int j = 0; j < spec.up_blocks; ++j) {
    const int out_ch = spec.decoder_channels(j);
    const std::string tag = "up" + std::to_string(j);
    Up u;
    u.convt1 = add(detail::make_conv<T>(rng, ConvKind::Transpose, in_ch, out_ch,
                                        4, 4, 2, 1, 1, tag + ".convt1"));
    u.conv2 = add(detail::make_conv<T>(rng, ConvKind::Conv, out_ch, out_ch, 3,
                                       3, 1, 1, 1, tag + ".conv2"));
    u.shortcut = add(detail::make_conv<T>(rng, ConvKind::Transpose, in_ch,
                                          out_ch, 2, 2, 2, 1, 0,
                                          tag + ".shortcut"));
    for (auto [e, dd] : spec.skip_pairs) {
      if (dd != j) continue;
      u.skip_enc = e;
      const int cat_ch = out_ch + spec.encoder_channels(e);
      u.skip_proj = add(detail::make_conv<T>(rng, ConvKind::Conv, out_ch,
                                             cat_ch, 1, 1, 1, 1, 0,
                                             tag + ".skip_proj"));
    }
    m.up_.push_back(u);
    in_ch = out_ch;
  }

  for (int t = 0; t < spec.tail_blocks; ++t) {
    const std::string tag = "tail" + std::to_string(t);
    Tail tb;
    tb.conv1 = add(detail::make_conv<T>(rng, ConvKind::Conv, in_ch, in_ch, 3, 3,
                                        1, 1, 1, tag + ".conv1"));
    tb.conv2 = add(detail::make_conv<T>(rng, ConvKind::Conv, in_ch, in_ch, 3, 3,
                                        1, 1, 1, tag + ".conv2"));
    m.tail_.push_back(tb);
  }

  if (spec.head_upsamples())
    m.head_up_ = add(detail::make_conv<T>(rng, ConvKind::Transpose, in_ch,
                                          in_ch, 2, 2, 2, 1, 0, "head.up"));
  // Zero-initialized head: the untrained network emits a uniform -pi/2 and
  // the logistic stays in its responsive region early in training.
  m.head_ = add(detail::make_conv<T>(rng, ConvKind::Conv, 1, in_ch, 1, 1, 1, 1,
                                     0, "head.conv", /*zero_init=*/true));
  return m;
}

template <typename T>
TensorPtr<T> Model<T>::apply(Graph<T>& g, const TensorPtr<T>& x,
                             int conv_idx) const {
  const auto& cp = convs_[static_cast<size_t>(conv_idx)];
  if (cp.kind == ConvKind::Conv)
    return conv2d(g, x, cp.W, cp.b, {cp.stride, cp.dilation, cp.padding});
  return conv2d_transpose(g, x, cp.W, cp.b, cp.stride, cp.padding);
}

template <typename T>
TensorPtr<T> Model<T>::run(Graph<T>& g, const TensorPtr<T>& x,
                           int stop_conv) const {
  if (!x || x->shape.size() != 4)
    throw UsageError("model forward expects a 4-D (n,1,h,w) tensor");
  if (stop_conv < 0 &&
      (x->shape[2] != spec_.input_size || x->shape[3] != spec_.input_size))
    throw UsageError("model forward: input is " + shape_str(x->shape) +
                     " but spec.input_size = " + std::to_string(spec_.input_size));

  TensorPtr<T> stopped;
  auto conv_at = [&](const TensorPtr<T>& in, int idx) {
    auto out = apply(g, in, idx);
    if (idx == stop_conv) stopped = out;
    return out;
  };

  std::vector<TensorPtr<T>> enc;
  TensorPtr<T> cur = x;
  for (const auto& d : down_) {
    auto m1 = conv_at(cur, d.conv1);
    if (stopped) return stopped;
    auto m2 = conv_at(relu(g, m1), d.conv2);
    if (stopped) return stopped;
    auto s = conv_at(cur, d.shortcut);
    if (stopped) return stopped;
    cur = relu(g, residual_add(g, m2, s));
    enc.push_back(cur);
  }
  for (const auto& u : up_) {
    auto m1 = conv_at(cur, u.convt1);
    if (stopped) return stopped;
    auto m2 = conv_at(relu(g, m1), u.conv2);
    if (stopped) return stopped;
    auto s = conv_at(cur, u.shortcut);
    if (stopped) return stopped;
    cur = relu(g, residual_add(g, m2, s));
    if (u.skip_enc >= 0) {
      auto cat = concat_channels(g, cur, enc[static_cast<size_t>(u.skip_enc)]);
      auto p = conv_at(cat, u.skip_proj);
      if (stopped) return stopped;
      cur = relu(g, p);
    }
  }
  for (const auto& t : tail_) {
    auto m1 = conv_at(cur, t.conv1);
    if (stopped) return stopped;
    auto m2 = conv_at(relu(g, m1), t.conv2);
    if (stopped) return stopped;
    cur = relu(g, residual_add(g, m2, cur));
  }
  if (head_up_ >= 0) {
    cur = conv_at(cur, head_up_);
    if (stopped) return stopped;
  }
  auto pre = conv_at(cur, head_);
  if (stopped) return stopped;
  return scaled_sigmoid(g, pre, static_cast<T>(-3.14159265358979323846));
}

template <typename T>
std::vector<TensorPtr<T>> Model<T>::parameters() const {
  std::vector<TensorPtr<T>> out;
  out.reserve(convs_.size() * 2);
  for (const auto& c : convs_) {
    out.push_back(c.W);
    out.push_back(c.b);
  }
  return out;
}

template <typename T>
long Model<T>::parameter_count() const {
  long n = 0;
  for (const auto& c : convs_) n += c.W->size() + c.b->size();
  return n;
}

template <typename T>
int Model<T>::filters_of_conv(int idx) const {
  const auto& c = convs_[static_cast<size_t>(idx)];
  return c.kind == ConvKind::Conv ? c.W->shape[0] : c.W->shape[1];
}

template <typename T>
std::string Model<T>::parameter_digest() const {
  std::string bytes;
  for (const auto& c : convs_)
    for (const auto* t : {c.W.get(), c.b.get()})
      for (T v : t->val) {
        const float f = static_cast<float>(v);
        bytes.append(reinterpret_cast<const char*>(&f), 4);
      }
  return to_hex(fnv1a(bytes));
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> out = Model<U>::build(spec_, meta_.seed);
  out.meta_ = meta_;
  for (size_t i = 0; i < convs_.size(); ++i) {
    for (int which = 0; which < 2; ++which) {
      const auto& src = which ? convs_[i].b : convs_[i].W;
      auto& dst = which ? out.convs_[i].b : out.convs_[i].W;
      for (size_t k = 0; k < src->val.size(); ++k)
        dst->val[k] = static_cast<U>(src->val[k]);
    }
  }
  return out;
}

template <typename T>
void Model<T>::save_checkpoint(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write("DLPR", 4);
  const std::uint16_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), 2);
  std::string text = spec_.serialize();
  text += "meta.epoch = " + std::to_string(meta_.epoch) + "\n";
  text += "meta.seed = " + std::to_string(meta_.seed) + "\n";
  text += "meta.optics_digest = " + meta_.optics_digest + "\n";
  const std::uint32_t len = static_cast<std::uint32_t>(text.size());
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& c : convs_) {
    for (const auto* t : {c.W.get(), c.b.get()}) {
      const std::uint8_t rank = static_cast<std::uint8_t>(t->shape.size());
      out.write(reinterpret_cast<const char*>(&rank), 1);
      for (int e : t->shape) {
        const std::uint32_t ext = static_cast<std::uint32_t>(e);
        out.write(reinterpret_cast<const char*>(&ext), 4);
      }
      for (T v : t->val) {
        const float f = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&f), 4);
      }
    }
  }
  if (!out) throw IoError("write failure on checkpoint " + path.string());
}

template <typename T>
Model<T> Model<T>::load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "DLPR")
    throw ArtifactMismatch("checkpoint " + path.string() + ": bad magic");
  std::uint16_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 2);
  if (!in || version != 1)
    throw ArtifactMismatch("checkpoint " + path.string() +
                           ": unsupported format version " +
                           std::to_string(version));
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 4);
  if (!in || len > (1u << 20))
    throw ArtifactMismatch("checkpoint " + path.string() + ": bad text block");
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (!in) throw IoError("checkpoint " + path.string() + ": truncated text block");

  auto spec = NetworkSpec::parse(text);
  CheckpointMeta meta;
  {
    std::istringstream ts(text);
    std::string line;
    while (std::getline(ts, line)) {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto key = line.substr(0, line.find(" ="));
      auto val = line.substr(eq + 1);
      while (!val.empty() && val.front() == ' ') val.erase(val.begin());
      if (key == "meta.epoch") meta.epoch = std::stoi(val);
      else if (key == "meta.seed") meta.seed = static_cast<unsigned>(std::stoul(val));
      else if (key == "meta.optics_digest") meta.optics_digest = val;
    }
  }

  Model<T> m = Model<T>::build(spec, meta.seed);
  m.meta_ = meta;
  for (auto& c : m.convs_) {
    for (int which = 0; which < 2; ++which) {
      auto& t = which ? c.b : c.W;
      std::uint8_t rank = 0;
      in.read(reinterpret_cast<char*>(&rank), 1);
      if (!in)
        throw IoError("checkpoint " + path.string() +
                      ": truncated before tensor " + c.name);
      std::vector<int> shape(rank);
      for (auto& e : shape) {
        std::uint32_t ext = 0;
        in.read(reinterpret_cast<char*>(&ext), 4);
        e = static_cast<int>(ext);
      }
      if (!in || shape != t->shape)
        throw ArtifactMismatch("checkpoint " + path.string() + ": tensor " +
                               c.name + (which ? ".bias" : ".weight") +
                               " has shape " + shape_str(shape) +
                               ", expected " + shape_str(t->shape));
      for (auto& v : t->val) {
        float f = 0;
        in.read(reinterpret_cast<char*>(&f), 4);
        v = static_cast<T>(f);
      }
      if (!in)
        throw IoError("checkpoint " + path.string() +
                      ": truncated data in tensor " + c.name);
    }
  }
  return m;
}

template <typename T>
Model<T> Model<T>::load_checkpoint(const std::filesystem::path& path,
                                   const NetworkSpec& expected) {
  auto m = load_checkpoint(path);
  expected.validate();
  auto probe = Model<T>::build(expected, 0);
  const auto a = m.parameters();
  const auto b = probe.parameters();
  const size_t n = std::min(a.size(), b.size());
  for (size_t i = 0; i < n; ++i) {
    if (a[i]->shape != b[i]->shape) {
      const auto& name = m.convs_[i / 2].name;
      throw ArtifactMismatch(
          "checkpoint " + path.string() + " does not match the expected spec: "
          "tensor " + name + (i % 2 ? ".bias" : ".weight") + " is " +
          shape_str(a[i]->shape) + ", expected " + shape_str(b[i]->shape));
    }
  }
  if (a.size() != b.size())
    throw ArtifactMismatch("checkpoint " + path.string() +
                           " parameter count differs from the expected spec");
  return m;
}

}  // namespace dlpr::net
