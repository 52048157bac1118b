#pragma once

#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dlpr/util.hpp"

namespace dlpr {

using Shape = std::vector<int>;

inline long numel(const Shape& s) {
  long n = 1;
  for (int e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

// N-dimensional real tensor with a lazily materialized gradient buffer.
// 4-D tensors follow (batch, channels, height, width) row-major layout.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> val;
  std::vector<T> grad;  // empty until ensure_grad()
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0))
      : shape(std::move(s)), val(static_cast<size_t>(numel(shape)), fill) {}
  Tensor(Shape s, std::vector<T> v) : shape(std::move(s)), val(std::move(v)) {
    if (static_cast<long>(val.size()) != numel(shape))
      throw UsageError("tensor value count " + std::to_string(val.size()) +
                       " does not match shape " + shape_str(shape));
  }

  long size() const { return static_cast<long>(val.size()); }

  void ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), T(0));
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
  }

  // 4-D accessors; no bounds checks on the hot path.
  T& at4(int n, int c, int h, int w) {
    return val[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  T at4(int n, int c, int h, int w) const {
    return val[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <typename T>
TensorPtr<T> make_tensor(Shape s, T fill = T(0)) {
  return std::make_shared<Tensor<T>>(std::move(s), fill);
}

template <typename T>
TensorPtr<T> make_tensor(Shape s, std::vector<T> v) {
  return std::make_shared<Tensor<T>>(std::move(s), std::move(v));
}

template <typename T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape == b.shape;
}

}  // namespace dlpr
