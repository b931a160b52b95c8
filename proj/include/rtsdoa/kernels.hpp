#pragma once

#include <cstddef>

// Low-level compute kernels behind the autodiff graph. Every kernel has one
// loop nest parallelized over output elements; each element is accumulated in
// a fixed serial order, so results are bit-identical for any thread count.
// `parallel=false` runs the same loop single-threaded (the benchmark target
// compares the two).

namespace rtsdoa::core {

bool parallel_enabled();
void set_parallel(bool on);

struct Conv2dSpec {
  int stride_t = 1;
  int stride_f = 1;
  int pad_t_lo = 0;  // zeros prepended on the time axis (causal padding)
  int pad_t_hi = 0;
  int pad_f_lo = 0;
  int pad_f_hi = 0;
  int groups = 1;
};

inline int conv_out_dim(int in, int k, int stride, int pad_lo, int pad_hi) {
  return (in + pad_lo + pad_hi - k) / stride + 1;
}

// x: (B,Ci,T,F) w: (Co,Ci/groups,Kt,Kf) bias: (Co) or null, out: (B,Co,To,Fo)
template <class S>
void conv2d_fwd(const S* x, int B, int Ci, int T, int F, const S* w, int Co, int Kt,
                int Kf, const S* bias, const Conv2dSpec& sp, S* out, int To, int Fo,
                bool parallel);

// dx/dw/db may be null; dw/db must be zero-initialized by the caller.
template <class S>
void conv2d_bwd(const S* x, int B, int Ci, int T, int F, const S* w, int Co, int Kt,
                int Kf, const Conv2dSpec& sp, const S* dout, int To, int Fo, S* dx,
                S* dw, S* db, bool parallel);

// Transposed convolution in gather form. x: (B,Ci,T,F) w: (Ci,Co,Kt,Kf),
// out: (B,Co,To,Fo) with To/Fo supplied by the caller; pad_*_lo act as output
// crops mirroring the forward conv padding. Positions with no contributing
// input are left at the bias value.
template <class S>
void conv_transpose2d_fwd(const S* x, int B, int Ci, int T, int F, const S* w, int Co,
                          int Kt, int Kf, const S* bias, const Conv2dSpec& sp, S* out,
                          int To, int Fo, bool parallel);

template <class S>
void conv_transpose2d_bwd(const S* x, int B, int Ci, int T, int F, const S* w, int Co,
                          int Kt, int Kf, const Conv2dSpec& sp, const S* dout, int To,
                          int Fo, S* dx, S* dw, S* db, bool parallel);

// y (N,Do) = x (N,Di) * W(Do,Di)^T + b
template <class S>
void linear_fwd(const S* x, int N, int Di, const S* w, int Do, const S* bias, S* y,
                bool parallel);

template <class S>
void linear_bwd(const S* x, int N, int Di, const S* w, int Do, const S* dy, S* dx,
                S* dw, S* db, bool parallel);

// Scaled dot-product attention over q,k,v of shape (N,T,D) with `heads` heads.
// Softmax over keys; optional causal mask. Attention weights are recomputed in
// the backward pass instead of being stored.
template <class S>
void attention_fwd(const S* q, const S* k, const S* v, int N, int T, int D, int heads,
                   bool causal, S* out, bool parallel);

template <class S>
void attention_bwd(const S* q, const S* k, const S* v, int N, int T, int D, int heads,
                   bool causal, const S* dout, S* dq, S* dk, S* dv, bool parallel);

// Single-layer LSTM over the full sequence, zero initial state.
// x: (B,T,D)  wih: (4H,D)  whh: (4H,H)  b: (4H)  y: (B,T,H)
// Gate order i,f,g,o. `gates` (B,T,4H, post-activation) and `cells` (B,T,H)
// are filled for the backward pass.
template <class S>
void lstm_fwd(const S* x, int B, int T, int D, const S* wih, const S* whh, const S* b,
              int H, S* y, S* gates, S* cells, bool parallel);

template <class S>
void lstm_bwd(const S* x, int B, int T, int D, const S* wih, const S* whh, int H,
              const S* y, const S* gates, const S* cells, const S* dy, S* dx, S* dwih,
              S* dwhh, S* db, bool parallel);

// Layer normalization over the channel axis of (B,C,T,F) with per-channel
// gain/bias.
template <class S>
void layernorm_channels_fwd(const S* x, int B, int C, int T, int F, const S* gain,
                            const S* bias, S eps, S* y, bool parallel);

template <class S>
void layernorm_channels_bwd(const S* x, int B, int C, int T, int F, const S* gain,
                            S eps, const S* dy, S* dx, S* dgain, S* dbias,
                            bool parallel);

// Row-wise softmax over the last dimension (rows = numel/K).
template <class S>
void softmax_lastdim_fwd(const S* x, long long rows, int K, S* y, bool parallel);

template <class S>
void softmax_lastdim_bwd(const S* y, long long rows, int K, const S* dy, S* dx,
                         bool parallel);

}  // namespace rtsdoa::core
