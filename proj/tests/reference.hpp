#pragma once

// Naive single-threaded loop implementations, independent of the library's
// kernels. These are the oracles the test suites compare against.

#include <cmath>
#include <vector>

#include "rtsdoa/kernels.hpp"
#include "rtsdoa/tensor.hpp"

namespace testref {

using rtsdoa::core::Conv2dSpec;
using rtsdoa::core::Tensor;

template <class S>
Tensor<S> conv2d_naive(const Tensor<S>& x, const Tensor<S>& w, const std::vector<S>& b,
                       const Conv2dSpec& sp) {
  const int B = x.dim(0), Ci = x.dim(1), T = x.dim(2), F = x.dim(3);
  const int Co = w.dim(0), Kt = w.dim(2), Kf = w.dim(3);
  const int Cig = Ci / sp.groups, Cog = Co / sp.groups;
  const int To = (T + sp.pad_t_lo + sp.pad_t_hi - Kt) / sp.stride_t + 1;
  const int Fo = (F + sp.pad_f_lo + sp.pad_f_hi - Kf) / sp.stride_f + 1;
  Tensor<S> out({B, Co, To, Fo});
  for (int bb = 0; bb < B; ++bb)
    for (int co = 0; co < Co; ++co)
      for (int to = 0; to < To; ++to)
        for (int fo = 0; fo < Fo; ++fo) {
          S acc = b.empty() ? S(0) : b[co];
          const int g = co / Cog;
          for (int cig = 0; cig < Cig; ++cig)
            for (int kt = 0; kt < Kt; ++kt)
              for (int kf = 0; kf < Kf; ++kf) {
                const int ti = to * sp.stride_t + kt - sp.pad_t_lo;
                const int fi = fo * sp.stride_f + kf - sp.pad_f_lo;
                if (ti < 0 || ti >= T || fi < 0 || fi >= F) continue;
                acc += x.at(bb, g * Cig + cig, ti, fi) * w.at(co, cig, kt, kf);
              }
          out.at(bb, co, to, fo) = acc;
        }
  return out;
}

// 1-D convolution of a single channel, used to check that grouped conv with
// groups == channels equals per-channel convolution.
template <class S>
std::vector<S> conv1d_channel_naive(const std::vector<S>& x, const std::vector<S>& k,
                                    S bias, int stride, int pad_lo, int pad_hi) {
  const int F = static_cast<int>(x.size());
  const int K = static_cast<int>(k.size());
  const int Fo = (F + pad_lo + pad_hi - K) / stride + 1;
  std::vector<S> out(static_cast<size_t>(Fo));
  for (int fo = 0; fo < Fo; ++fo) {
    S acc = bias;
    for (int kk = 0; kk < K; ++kk) {
      const int fi = fo * stride + kk - pad_lo;
      if (fi < 0 || fi >= F) continue;
      acc += x[static_cast<size_t>(fi)] * k[static_cast<size_t>(kk)];
    }
    out[static_cast<size_t>(fo)] = acc;
  }
  return out;
}

template <class S>
Tensor<S> attention_naive(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                          int heads, bool causal) {
  const int N = q.dim(0), T = q.dim(1), D = q.dim(2);
  const int dh = D / heads;
  Tensor<S> out({N, T, D});
  for (int n = 0; n < N; ++n)
    for (int h = 0; h < heads; ++h) {
      const int off = h * dh;
      for (int i = 0; i < T; ++i) {
        const int jmax = causal ? i + 1 : T;
        std::vector<double> s(static_cast<size_t>(jmax));
        double mx = -1e300;
        for (int j = 0; j < jmax; ++j) {
          double acc = 0;
          for (int d = 0; d < dh; ++d)
            acc += static_cast<double>(q.at(n, i, off + d)) * k.at(n, j, off + d);
          s[static_cast<size_t>(j)] = acc / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, s[static_cast<size_t>(j)]);
        }
        double z = 0;
        for (int j = 0; j < jmax; ++j) {
          s[static_cast<size_t>(j)] = std::exp(s[static_cast<size_t>(j)] - mx);
          z += s[static_cast<size_t>(j)];
        }
        for (int d = 0; d < dh; ++d) {
          double acc = 0;
          for (int j = 0; j < jmax; ++j)
            acc += s[static_cast<size_t>(j)] / z * v.at(n, j, off + d);
          out.at(n, i, off + d) = static_cast<S>(acc);
        }
      }
    }
  return out;
}

// Eq.-style gated conv oracle: tanh(conv(x,w1,b1)) * sigmoid(conv(x,w2,b2)),
// evaluated entirely with scalar loops.
template <class S>
Tensor<S> conv_glu_naive(const Tensor<S>& x, const Tensor<S>& w1, const std::vector<S>& b1,
                         const Tensor<S>& w2, const std::vector<S>& b2,
                         const Conv2dSpec& sp) {
  Tensor<S> a = conv2d_naive(x, w1, b1, sp);
  Tensor<S> g = conv2d_naive(x, w2, b2, sp);
  Tensor<S> out(a.shape);
  for (long long i = 0; i < a.numel(); ++i)
    out[i] = std::tanh(a[i]) * (S(1) / (S(1) + std::exp(-g[i])));
  return out;
}

}  // namespace testref
