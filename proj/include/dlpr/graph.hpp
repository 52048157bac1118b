#pragma once
#include <type_traits>

// Reverse-mode autodiff over N-d tensors. A Graph is a tape of backward
// closures recorded in execution order; backward() replays it in reverse.
// Convolutions are im2col + GEMM; the naive-loop references live in the
// test suite, not here.

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <random>
#include <unordered_set>
#include <vector>

#include "dlpr/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dlpr {

template <typename T>
using MatMap =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
class Graph {
 public:
  // Registers a leaf (parameter or network input).
  TensorPtr<T> leaf(TensorPtr<T> t) {
    known_.insert(t.get());
    return t;
  }

  bool knows(const Tensor<T>* t) const { return known_.count(t) > 0; }

  void record(const TensorPtr<T>& out, std::function<void()> back) {
    known_.insert(out.get());
    produced_.push_back(out);
    tape_.push_back(std::move(back));
  }

  void note_input(const TensorPtr<T>& in) { known_.insert(in.get()); }

  // Populates d(loss)/d(t) for every tensor with requires_grad on the tape.
  // Leaf gradients accumulate across calls; intermediate gradients are
  // cleared per pass so a replayed tape stays correct.
  void backward(const TensorPtr<T>& loss) {
    if (!loss || loss->size() != 1)
      throw UsageError("backward expects a scalar loss tensor");
    bool attached = false;
    for (const auto& p : produced_)
      if (p.get() == loss.get()) attached = true;
    if (!attached)
      throw UsageError("backward called on a tensor not attached to this graph");
    for (const auto& p : produced_) p->zero_grad();
    loss->ensure_grad();
    loss->grad[0] = T(1);
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
  }

  size_t node_count() const { return tape_.size(); }

 private:
  std::vector<std::function<void()>> tape_;
  std::vector<TensorPtr<T>> produced_;
  std::unordered_set<const Tensor<T>*> known_;
};

namespace detail {

// Gather: src (C,SH,SW) -> cols (C*kh*kw, oh*ow). (i,j) walks the strided
// output grid; out-of-range taps contribute zero.
template <typename T>
void im2col(const T* src, int C, int SH, int SW, int kh, int kw, int st,
            int dil, int pad, int oh, int ow, T* cols) {
  const long M = static_cast<long>(oh) * ow;
  for (int c = 0; c < C; ++c) {
    const T* sc = src + static_cast<size_t>(c) * SH * SW;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        T* row = cols + (static_cast<size_t>(c) * kh * kw + ki * kw + kj) * M;
        for (int i = 0; i < oh; ++i) {
          const int si = i * st - pad + ki * dil;
          T* r = row + static_cast<size_t>(i) * ow;
          if (si < 0 || si >= SH) {
            std::fill(r, r + ow, T(0));
            continue;
          }
          const T* ss = sc + static_cast<size_t>(si) * SW;
          for (int j = 0; j < ow; ++j) {
            const int sj = j * st - pad + kj * dil;
            r[j] = (sj >= 0 && sj < SW) ? ss[sj] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add: the adjoint of im2col with identical geometry.
template <typename T>
void col2im_add(const T* cols, int C, int SH, int SW, int kh, int kw, int st,
                int dil, int pad, int oh, int ow, T* dst) {
  const long M = static_cast<long>(oh) * ow;
  for (int c = 0; c < C; ++c) {
    T* dc = dst + static_cast<size_t>(c) * SH * SW;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const T* row = cols + (static_cast<size_t>(c) * kh * kw + ki * kw + kj) * M;
        for (int i = 0; i < oh; ++i) {
          const int si = i * st - pad + ki * dil;
          if (si < 0 || si >= SH) continue;
          T* ds = dc + static_cast<size_t>(si) * SW;
          const T* r = row + static_cast<size_t>(i) * ow;
          for (int j = 0; j < ow; ++j) {
            const int sj = j * st - pad + kj * dil;
            if (sj >= 0 && sj < SW) ds[sj] += r[j];
          }
        }
      }
    }
  }
}

inline int conv_out_extent(int in, int k, int st, int dil, int pad) {
  return (in + 2 * pad - dil * (k - 1) - 1) / st + 1;
}

template <typename T>
void require_4d(const TensorPtr<T>& t, const char* what) {
  if (!t || t->shape.size() != 4)
    throw UsageError(std::string(what) + " must be 4-D, got " +
                     (t ? shape_str(t->shape) : std::string("null")));
}

}  // namespace detail

struct ConvOpts {
  int stride = 1;
  int dilation = 1;
  int padding = 0;
};

// Cross-correlation (no kernel flip) with zero padding.
// input (n,C,H,W), kernel (O,C,kh,kw), bias (O) or empty.
template <typename T>
TensorPtr<T> conv2d(Graph<T>& g, const TensorPtr<T>& x, const TensorPtr<T>& k,
                    const std::type_identity_t<TensorPtr<T>>& b, ConvOpts o = {}) {
  detail::require_4d(x, "conv2d input");
  detail::require_4d(k, "conv2d kernel");
  if (o.stride < 1 || o.dilation < 1 || o.padding < 0)
    throw UsageError("conv2d requires stride>=1, dilation>=1, padding>=0");
  const int n = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  const int O = k->shape[0], kh = k->shape[2], kw = k->shape[3];
  if (k->shape[1] != C)
    throw UsageError("conv2d channel mismatch: input " + shape_str(x->shape) +
                     " vs kernel " + shape_str(k->shape));
  if (b && b->size() != O)
    throw UsageError("conv2d bias size " + std::to_string(b->size()) +
                     " != out channels " + std::to_string(O));
  const int oh = detail::conv_out_extent(H, kh, o.stride, o.dilation, o.padding);
  const int ow = detail::conv_out_extent(W, kw, o.stride, o.dilation, o.padding);
  if (oh < 1 || ow < 1)
    throw UsageError("conv2d produces empty output for input " +
                     shape_str(x->shape) + " kernel " + shape_str(k->shape));

  const long K = static_cast<long>(C) * kh * kw;
  const long M = static_cast<long>(oh) * ow;
  const bool plain = (kh == 1 && kw == 1 && o.stride == 1 && o.padding == 0);

  auto out = make_tensor<T>({n, O, oh, ow});
  out->requires_grad =
      x->requires_grad || k->requires_grad || (b && b->requires_grad);
  g.note_input(x);
  g.note_input(k);
  if (b) g.note_input(b);

  ConstMatMap<T> Wm(k->val.data(), O, K);
#pragma omp parallel for schedule(static)
  for (int s = 0; s < n; ++s) {
    ensure_thread_fp();
    const T* xs = x->val.data() + static_cast<size_t>(s) * C * H * W;
    MatMap<T> Ym(out->val.data() + static_cast<size_t>(s) * O * M, O, M);
    if (plain) {
      ConstMatMap<T> Xm(xs, K, M);
      Ym.noalias() = Wm * Xm;
    } else {
      std::vector<T> cols(static_cast<size_t>(K) * M);
      detail::im2col(xs, C, H, W, kh, kw, o.stride, o.dilation, o.padding, oh,
                     ow, cols.data());
      ConstMatMap<T> Xm(cols.data(), K, M);
      Ym.noalias() = Wm * Xm;
    }
    if (b) {
      for (int oc = 0; oc < O; ++oc)
        Ym.row(oc).array() += b->val[static_cast<size_t>(oc)];
    }
  }

  g.record(out, [x, k, b, out, o, n, C, H, W, O, kh, kw, oh, ow, K, M, plain] {
    if (out->grad.empty()) return;
    if (x->requires_grad) x->ensure_grad();
    if (k->requires_grad) k->ensure_grad();
    if (b && b->requires_grad) b->ensure_grad();

    ConstMatMap<T> Wm(k->val.data(), O, K);
    int nthreads = 1;
#ifdef _OPENMP
    nthreads = omp_get_max_threads();
#endif
    // Per-thread kernel-gradient buffers, reduced in thread order so the
    // accumulation order is fixed for a given thread count.
    std::vector<std::vector<T>> kbuf;
    if (k->requires_grad)
      kbuf.assign(static_cast<size_t>(nthreads),
                  std::vector<T>(k->val.size(), T(0)));

#pragma omp parallel for schedule(static)
    for (int s = 0; s < n; ++s) {
      ensure_thread_fp();
      int tid = 0;
#ifdef _OPENMP
      tid = omp_get_thread_num();
#endif
      const T* gys = out->grad.data() + static_cast<size_t>(s) * O * M;
      ConstMatMap<T> Gm(gys, O, M);
      if (x->requires_grad) {
        T* gxs = x->grad.data() + static_cast<size_t>(s) * C * H * W;
        if (plain) {
          MatMap<T> GX(gxs, K, M);
          GX.noalias() += Wm.transpose() * Gm;
        } else {
          std::vector<T> dcols(static_cast<size_t>(K) * M);
          MatMap<T> DC(dcols.data(), K, M);
          DC.noalias() = Wm.transpose() * Gm;
          detail::col2im_add(dcols.data(), C, H, W, kh, kw, o.stride,
                             o.dilation, o.padding, oh, ow, gxs);
        }
      }
      if (k->requires_grad) {
        const T* xs = x->val.data() + static_cast<size_t>(s) * C * H * W;
        MatMap<T> DW(kbuf[static_cast<size_t>(tid)].data(), O, K);
        if (plain) {
          ConstMatMap<T> Xm(xs, K, M);
          DW.noalias() += Gm * Xm.transpose();
        } else {
          std::vector<T> cols(static_cast<size_t>(K) * M);
          detail::im2col(xs, C, H, W, kh, kw, o.stride, o.dilation, o.padding,
                         oh, ow, cols.data());
          ConstMatMap<T> Xm(cols.data(), K, M);
          DW.noalias() += Gm * Xm.transpose();
        }
      }
    }
    if (k->requires_grad) {
      for (int t = 0; t < nthreads; ++t)
        for (size_t i = 0; i < k->grad.size(); ++i) k->grad[i] += kbuf[t][i];
    }
    if (b && b->requires_grad) {
      for (int s = 0; s < n; ++s) {
        const T* gys = out->grad.data() + static_cast<size_t>(s) * O * M;
        for (int oc = 0; oc < O; ++oc) {
          T acc = T(0);
          for (long m = 0; m < M; ++m) acc += gys[oc * M + m];
          b->grad[static_cast<size_t>(oc)] += acc;
        }
      }
    }
  });
  return out;
}

// Fractionally strided (transposed) convolution; the adjoint of conv2d with
// the same kernel tensor and hyperparameters.
// input (n,Cin,H,W), kernel (Cin,Cout,kh,kw), bias (Cout) or empty.
template <typename T>
TensorPtr<T> conv2d_transpose(Graph<T>& g, const TensorPtr<T>& x,
                              const TensorPtr<T>& k,
                              const std::type_identity_t<TensorPtr<T>>& b,
                              int stride = 1, int padding = 0) {
  detail::require_4d(x, "conv2d_transpose input");
  detail::require_4d(k, "conv2d_transpose kernel");
  if (stride < 1 || padding < 0)
    throw UsageError("conv2d_transpose requires stride>=1, padding>=0");
  const int n = x->shape[0], Cin = x->shape[1], H = x->shape[2], W = x->shape[3];
  const int Cout = k->shape[1], kh = k->shape[2], kw = k->shape[3];
  if (k->shape[0] != Cin)
    throw UsageError("conv2d_transpose channel mismatch: input " +
                     shape_str(x->shape) + " vs kernel " + shape_str(k->shape));
  if (b && b->size() != Cout)
    throw UsageError("conv2d_transpose bias size mismatch");
  const int OH = (H - 1) * stride - 2 * padding + kh;
  const int OW = (W - 1) * stride - 2 * padding + kw;
  if (OH < 1 || OW < 1)
    throw UsageError("conv2d_transpose produces empty output");

  const long K = static_cast<long>(Cout) * kh * kw;
  const long Min = static_cast<long>(H) * W;

  auto out = make_tensor<T>({n, Cout, OH, OW});
  out->requires_grad =
      x->requires_grad || k->requires_grad || (b && b->requires_grad);
  g.note_input(x);
  g.note_input(k);
  if (b) g.note_input(b);

  ConstMatMap<T> Wm(k->val.data(), Cin, K);
#pragma omp parallel for schedule(static)
  for (int s = 0; s < n; ++s) {
    ensure_thread_fp();
    const T* xs = x->val.data() + static_cast<size_t>(s) * Cin * Min;
    ConstMatMap<T> Xm(xs, Cin, Min);
    std::vector<T> cols(static_cast<size_t>(K) * Min);
    MatMap<T> Cm(cols.data(), K, Min);
    Cm.noalias() = Wm.transpose() * Xm;
    T* ys = out->val.data() + static_cast<size_t>(s) * Cout * OH * OW;
    detail::col2im_add(cols.data(), Cout, OH, OW, kh, kw, stride, 1, padding,
                       H, W, ys);
    if (b) {
      for (int oc = 0; oc < Cout; ++oc) {
        T* yc = ys + static_cast<size_t>(oc) * OH * OW;
        for (long i = 0; i < static_cast<long>(OH) * OW; ++i)
          yc[i] += b->val[static_cast<size_t>(oc)];
      }
    }
  }

  g.record(out, [x, k, b, out, stride, padding, n, Cin, Cout, H, W, kh, kw, OH,
                 OW, K, Min] {
    if (out->grad.empty()) return;
    if (x->requires_grad) x->ensure_grad();
    if (k->requires_grad) k->ensure_grad();
    if (b && b->requires_grad) b->ensure_grad();

    ConstMatMap<T> Wm(k->val.data(), Cin, K);
    int nthreads = 1;
#ifdef _OPENMP
    nthreads = omp_get_max_threads();
#endif
    std::vector<std::vector<T>> kbuf;
    if (k->requires_grad)
      kbuf.assign(static_cast<size_t>(nthreads),
                  std::vector<T>(k->val.size(), T(0)));

#pragma omp parallel for schedule(static)
    for (int s = 0; s < n; ++s) {
      ensure_thread_fp();
      int tid = 0;
#ifdef _OPENMP
      tid = omp_get_thread_num();
#endif
      const T* gys = out->grad.data() + static_cast<size_t>(s) * Cout * OH * OW;
      std::vector<T> gcols(static_cast<size_t>(K) * Min);
      detail::im2col(gys, Cout, OH, OW, kh, kw, stride, 1, padding, H, W,
                     gcols.data());
      ConstMatMap<T> GC(gcols.data(), K, Min);
      if (x->requires_grad) {
        T* gxs = x->grad.data() + static_cast<size_t>(s) * Cin * Min;
        MatMap<T> GX(gxs, Cin, Min);
        GX.noalias() += Wm * GC;
      }
      if (k->requires_grad) {
        const T* xs = x->val.data() + static_cast<size_t>(s) * Cin * Min;
        ConstMatMap<T> Xm(xs, Cin, Min);
        MatMap<T> DW(kbuf[static_cast<size_t>(tid)].data(), Cin, K);
        DW.noalias() += Xm * GC.transpose();
      }
    }
    if (k->requires_grad) {
      for (int t = 0; t < nthreads; ++t)
        for (size_t i = 0; i < k->grad.size(); ++i) k->grad[i] += kbuf[t][i];
    }
    if (b && b->requires_grad) {
      const long MO = static_cast<long>(OH) * OW;
      for (int s = 0; s < n; ++s) {
        const T* gys = out->grad.data() + static_cast<size_t>(s) * Cout * MO;
        for (int oc = 0; oc < Cout; ++oc) {
          T acc = T(0);
          for (long i = 0; i < MO; ++i) acc += gys[oc * MO + i];
          b->grad[static_cast<size_t>(oc)] += acc;
        }
      }
    }
  });
  return out;
}

// max(0, x); subgradient at 0 is 0.
template <typename T>
TensorPtr<T> relu(Graph<T>& g, const TensorPtr<T>& x) {
  auto out = make_tensor<T>(x->shape);
  out->requires_grad = x->requires_grad;
  g.note_input(x);
  for (size_t i = 0; i < x->val.size(); ++i)
    out->val[i] = x->val[i] > T(0) ? x->val[i] : T(0);
  g.record(out, [x, out] {
    if (out->grad.empty() || !x->requires_grad) return;
    x->ensure_grad();
    for (size_t i = 0; i < x->val.size(); ++i)
      if (x->val[i] > T(0)) x->grad[i] += out->grad[i];
  });
  return out;
}

// Elementwise sum of identically shaped tensors. Shape adaptation (shortcut
// projections) is the caller's responsibility; mismatches are rejected.
template <typename T>
TensorPtr<T> residual_add(Graph<T>& g, const TensorPtr<T>& a,
                          const TensorPtr<T>& b) {
  if (!same_shape(*a, *b))
    throw UsageError("residual_add shape mismatch: " + shape_str(a->shape) +
                     " vs " + shape_str(b->shape) +
                     " (no shortcut configured)");
  auto out = make_tensor<T>(a->shape);
  out->requires_grad = a->requires_grad || b->requires_grad;
  g.note_input(a);
  g.note_input(b);
  for (size_t i = 0; i < a->val.size(); ++i) out->val[i] = a->val[i] + b->val[i];
  g.record(out, [a, b, out] {
    if (out->grad.empty()) return;
    if (a->requires_grad) {
      a->ensure_grad();
      for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += out->grad[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (size_t i = 0; i < b->grad.size(); ++i) b->grad[i] += out->grad[i];
    }
  });
  return out;
}

// Channel concatenation for skip connections: (n,ca,h,w)+(n,cb,h,w).
template <typename T>
TensorPtr<T> concat_channels(Graph<T>& g, const TensorPtr<T>& a,
                             const TensorPtr<T>& b) {
  detail::require_4d(a, "concat input");
  detail::require_4d(b, "concat input");
  if (a->shape[0] != b->shape[0] || a->shape[2] != b->shape[2] ||
      a->shape[3] != b->shape[3])
    throw UsageError("concat_channels spatial/batch mismatch: " +
                     shape_str(a->shape) + " vs " + shape_str(b->shape));
  const int n = a->shape[0], ca = a->shape[1], cb = b->shape[1];
  const long hw = static_cast<long>(a->shape[2]) * a->shape[3];
  auto out = make_tensor<T>({n, ca + cb, a->shape[2], a->shape[3]});
  out->requires_grad = a->requires_grad || b->requires_grad;
  g.note_input(a);
  g.note_input(b);
  for (int s = 0; s < n; ++s) {
    T* dst = out->val.data() + static_cast<size_t>(s) * (ca + cb) * hw;
    std::copy_n(a->val.data() + static_cast<size_t>(s) * ca * hw, ca * hw, dst);
    std::copy_n(b->val.data() + static_cast<size_t>(s) * cb * hw, cb * hw,
                dst + static_cast<size_t>(ca) * hw);
  }
  g.record(out, [a, b, out, n, ca, cb, hw] {
    if (out->grad.empty()) return;
    for (int s = 0; s < n; ++s) {
      const T* src = out->grad.data() + static_cast<size_t>(s) * (ca + cb) * hw;
      if (a->requires_grad) {
        a->ensure_grad();
        T* ga = a->grad.data() + static_cast<size_t>(s) * ca * hw;
        for (long i = 0; i < ca * hw; ++i) ga[i] += src[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        T* gb = b->grad.data() + static_cast<size_t>(s) * cb * hw;
        for (long i = 0; i < cb * hw; ++i)
          gb[i] += src[static_cast<size_t>(ca) * hw + i];
      }
    }
  });
  return out;
}

// scale * logistic(x); with scale = -pi this is the phase head mapping into
// [-pi, 0].
template <typename T>
TensorPtr<T> scaled_sigmoid(Graph<T>& g, const TensorPtr<T>& x, T scale) {
  auto out = make_tensor<T>(x->shape);
  out->requires_grad = x->requires_grad;
  g.note_input(x);
  for (size_t i = 0; i < x->val.size(); ++i) {
    const T s = T(1) / (T(1) + std::exp(-x->val[i]));
    out->val[i] = scale * s;
  }
  g.record(out, [x, out, scale] {
    if (out->grad.empty() || !x->requires_grad) return;
    x->ensure_grad();
    for (size_t i = 0; i < x->val.size(); ++i) {
      const T s = out->val[i] / scale;
      x->grad[i] += out->grad[i] * scale * s * (T(1) - s);
    }
  });
  return out;
}

// Mean absolute error, averaged over every element (trailing spatial dims
// per sample, then over the batch). Subgradient of |0| is 0.
template <typename T>
TensorPtr<T> l1_loss(Graph<T>& g, const TensorPtr<T>& y, const TensorPtr<T>& t) {
  if (!same_shape(*y, *t))
    throw UsageError("l1_loss shape mismatch: " + shape_str(y->shape) + " vs " +
                     shape_str(t->shape));
  auto out = make_tensor<T>(Shape{1});
  out->requires_grad = y->requires_grad || t->requires_grad;
  g.note_input(y);
  g.note_input(t);
  const T inv = T(1) / static_cast<T>(y->size());
  T acc = T(0);
  for (size_t i = 0; i < y->val.size(); ++i)
    acc += std::abs(y->val[i] - t->val[i]);
  out->val[0] = acc * inv;
  g.record(out, [y, t, out, inv] {
    if (out->grad.empty()) return;
    const T go = out->grad[0] * inv;
    if (y->requires_grad) {
      y->ensure_grad();
      for (size_t i = 0; i < y->val.size(); ++i) {
        const T d = y->val[i] - t->val[i];
        if (d > T(0))
          y->grad[i] += go;
        else if (d < T(0))
          y->grad[i] -= go;
      }
    }
    if (t->requires_grad) {
      t->ensure_grad();
      for (size_t i = 0; i < y->val.size(); ++i) {
        const T d = y->val[i] - t->val[i];
        if (d > T(0))
          t->grad[i] -= go;
        else if (d < T(0))
          t->grad[i] += go;
      }
    }
  });
  return out;
}

// Mean over batch and spatial positions of one channel; the MAP objective.
template <typename T>
TensorPtr<T> mean_channel(Graph<T>& g, const TensorPtr<T>& x, int channel) {
  detail::require_4d(x, "mean_channel input");
  if (channel < 0 || channel >= x->shape[1])
    throw UsageError("mean_channel: channel " + std::to_string(channel) +
                     " out of range for " + shape_str(x->shape));
  const int n = x->shape[0], C = x->shape[1];
  const long hw = static_cast<long>(x->shape[2]) * x->shape[3];
  auto out = make_tensor<T>(Shape{1});
  out->requires_grad = x->requires_grad;
  g.note_input(x);
  const T inv = T(1) / static_cast<T>(n * hw);
  T acc = T(0);
  for (int s = 0; s < n; ++s) {
    const T* xc = x->val.data() + (static_cast<size_t>(s) * C + channel) * hw;
    for (long i = 0; i < hw; ++i) acc += xc[i];
  }
  out->val[0] = acc * inv;
  g.record(out, [x, out, channel, n, C, hw, inv] {
    if (out->grad.empty() || !x->requires_grad) return;
    x->ensure_grad();
    const T go = out->grad[0] * inv;
    for (int s = 0; s < n; ++s) {
      T* gc = x->grad.data() + (static_cast<size_t>(s) * C + channel) * hw;
      for (long i = 0; i < hw; ++i) gc[i] += go;
    }
  });
  return out;
}

struct GradCheckOptions {
  int samples_per_tensor = 4;
  int max_retries = 6;
  unsigned seed = 1234;
};

// Central finite differences against the recorded gradients.
// `build(with_grad)` evaluates the scalar loss from the current parameter
// values; when with_grad it must also run backward() so the parameters carry
// fresh gradients. Sample points that straddle a kink (detected by an
// epsilon-halving instability test) are resampled a bounded number of times.
template <typename Builder>
double grad_check(Builder&& build,
                  const std::vector<TensorPtr<double>>& params, double eps,
                  GradCheckOptions opt = {}) {
  if (eps <= 0) throw UsageError("grad_check requires epsilon > 0");
  for (const auto& p : params) p->zero_grad();
  build(true);
  std::vector<std::vector<double>> saved;
  saved.reserve(params.size());
  for (const auto& p : params) {
    if (p->grad.size() != p->val.size())
      throw UsageError("grad_check: parameter missing gradient after build");
    saved.push_back(p->grad);
  }

  std::mt19937 rng(opt.seed);
  double max_rel = 0.0;
  auto eval = [&] { return build(false); };

  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = *params[pi];
    const long n = p.size();
    const int want = static_cast<int>(std::min<long>(opt.samples_per_tensor, n));
    std::uniform_int_distribution<long> pick(0, n - 1);
    for (int s = 0; s < want; ++s) {
      bool accepted = false;
      for (int r = 0; r <= opt.max_retries && !accepted; ++r) {
        const long i = (s == 0 && r == 0) ? 0 : pick(rng);
        const double v = p.val[static_cast<size_t>(i)];
        auto fd_at = [&](double h) {
          p.val[static_cast<size_t>(i)] = v + h;
          const double lp = eval();
          p.val[static_cast<size_t>(i)] = v - h;
          const double lm = eval();
          p.val[static_cast<size_t>(i)] = v;
          return (lp - lm) / (2 * h);
        };
        const double fd = fd_at(eps);
        const double fd2 = fd_at(eps / 2);
        const double scale = std::max({std::abs(fd), std::abs(fd2), 1e-8});
        if (std::abs(fd - fd2) > 0.05 * scale) continue;  // kink: resample
        const double a = saved[pi][static_cast<size_t>(i)];
        const double rel = std::abs(a - fd) / std::max(1.0, std::abs(a));
        max_rel = std::max(max_rel, rel);
        accepted = true;
      }
      if (!accepted)
        throw Error("grad_check: could not find a smooth sample point after " +
                    std::to_string(opt.max_retries) + " retries");
    }
  }
  return max_rel;
}

}  // namespace dlpr
