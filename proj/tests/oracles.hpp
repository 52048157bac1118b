#pragma once

// Independent reference implementations used by the test suites. These stay
// naive on purpose: nested loops and direct summation, no im2col, no FFT.

#include <cmath>
#include <complex>
#include <vector>

#include "dlpr/optics.hpp"
#include "dlpr/tensor.hpp"

namespace dlpr::oracle {

// Direct nested-loop cross-correlation, zero padding.
// x (n,C,H,W), k (O,C,kh,kw), bias size O (may be empty).
template <typename T>
Tensor<T> conv2d_ref(const Tensor<T>& x, const Tensor<T>& k,
                     const std::vector<T>& bias, int stride, int dilation,
                     int pad) {
  const int n = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int O = k.shape[0], kh = k.shape[2], kw = k.shape[3];
  const int oh = (H + 2 * pad - dilation * (kh - 1) - 1) / stride + 1;
  const int ow = (W + 2 * pad - dilation * (kw - 1) - 1) / stride + 1;
  Tensor<T> out({n, O, oh, ow});
  for (int s = 0; s < n; ++s)
    for (int o = 0; o < O; ++o)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          T acc = bias.empty() ? T(0) : bias[static_cast<size_t>(o)];
          for (int c = 0; c < C; ++c)
            for (int ki = 0; ki < kh; ++ki)
              for (int kj = 0; kj < kw; ++kj) {
                const int si = i * stride - pad + ki * dilation;
                const int sj = j * stride - pad + kj * dilation;
                if (si < 0 || si >= H || sj < 0 || sj >= W) continue;
                acc += x.at4(s, c, si, sj) *
                       k.val[((static_cast<size_t>(o) * C + c) * kh + ki) * kw + kj];
              }
          out.at4(s, o, i, j) = acc;
        }
  return out;
}

// Direct scatter transposed convolution. x (n,Cin,H,W), k (Cin,Cout,kh,kw).
template <typename T>
Tensor<T> conv2d_transpose_ref(const Tensor<T>& x, const Tensor<T>& k,
                               const std::vector<T>& bias, int stride, int pad) {
  const int n = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int Cout = k.shape[1], kh = k.shape[2], kw = k.shape[3];
  const int OH = (H - 1) * stride - 2 * pad + kh;
  const int OW = (W - 1) * stride - 2 * pad + kw;
  Tensor<T> out({n, Cout, OH, OW});
  for (int s = 0; s < n; ++s) {
    for (int co = 0; co < Cout; ++co)
      if (!bias.empty())
        for (int i = 0; i < OH; ++i)
          for (int j = 0; j < OW; ++j)
            out.at4(s, co, i, j) = bias[static_cast<size_t>(co)];
    for (int ci = 0; ci < Cin; ++ci)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
          for (int co = 0; co < Cout; ++co)
            for (int ki = 0; ki < kh; ++ki)
              for (int kj = 0; kj < kw; ++kj) {
                const int oi = i * stride - pad + ki;
                const int oj = j * stride - pad + kj;
                if (oi < 0 || oi >= OH || oj < 0 || oj >= OW) continue;
                out.at4(s, co, oi, oj) +=
                    x.at4(s, ci, i, j) *
                    k.val[((static_cast<size_t>(ci) * Cout + co) * kh + ki) * kw + kj];
              }
  }
  return out;
}

// O(N^4) direct summation of the first Rayleigh-Sommerfeld kernel:
//   h(x,y,z) = (z / 2pi) * exp(i k r) * (1/r - i k) / r^2,  r^2 = x^2+y^2+z^2
// over all source pixels, each weighted by pitch^2.
inline optics::ComplexField rayleigh_sommerfeld_ref(
    const optics::ComplexField& src, double wavelength, double pitch,
    double distance) {
  const int n = src.height;
  const double k = 2.0 * 3.14159265358979323846 / wavelength;
  const double area = pitch * pitch;
  optics::ComplexField out;
  out.height = n;
  out.width = n;
  out.values.assign(static_cast<size_t>(n) * n, {0.0, 0.0});
  for (int si = 0; si < n; ++si)
    for (int sj = 0; sj < n; ++sj) {
      const std::complex<double> amp = src.values[static_cast<size_t>(si) * n + sj];
      if (amp == std::complex<double>(0.0, 0.0)) continue;
      for (int ti = 0; ti < n; ++ti)
        for (int tj = 0; tj < n; ++tj) {
          const double dx = (ti - si) * pitch;
          const double dy = (tj - sj) * pitch;
          const double r2 = dx * dx + dy * dy + distance * distance;
          const double r = std::sqrt(r2);
          const std::complex<double> kern =
              (distance / (2.0 * 3.14159265358979323846)) *
              std::polar(1.0, k * r) *
              (std::complex<double>(1.0 / r, -k)) / r2;
          out.values[static_cast<size_t>(ti) * n + tj] += amp * kern * area;
        }
    }
  return out;
}

}  // namespace dlpr::oracle
