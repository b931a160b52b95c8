#include "rtsdoa/kernels.hpp"

#include <omp.h>

#include <atomic>
#include <cmath>
#include <limits>
#include <vector>

namespace rtsdoa::core {

namespace {
std::atomic<bool> g_parallel{true};
}

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

template <class S>
void conv2d_fwd(const S* x, int B, int Ci, int T, int F, const S* w, int Co, int Kt,
                int Kf, const S* bias, const Conv2dSpec& sp, S* out, int To, int Fo,
                bool parallel) {
  const int Cig = Ci / sp.groups;
  const int Cog = Co / sp.groups;
  const long long n_out_rows = static_cast<long long>(B) * Co * To;
#pragma omp parallel for schedule(static) if (parallel)
  for (long long row = 0; row < n_out_rows; ++row) {
    const int to = static_cast<int>(row % To);
    const int co = static_cast<int>((row / To) % Co);
    const int b = static_cast<int>(row / (static_cast<long long>(To) * Co));
    const int g = co / Cog;
    S* orow = out + (row * Fo);
    for (int fo = 0; fo < Fo; ++fo) orow[fo] = bias ? bias[co] : S(0);
    for (int cig = 0; cig < Cig; ++cig) {
      const int ci = g * Cig + cig;
      for (int kt = 0; kt < Kt; ++kt) {
        const int ti = to * sp.stride_t + kt - sp.pad_t_lo;
        if (ti < 0 || ti >= T) continue;
        const S* xrow = x + ((static_cast<long long>(b) * Ci + ci) * T + ti) * F;
        const S* wrow = w + ((static_cast<long long>(co) * Cig + cig) * Kt + kt) * Kf;
        for (int kf = 0; kf < Kf; ++kf) {
          const S wv = wrow[kf];
          const int fi0 = kf - sp.pad_f_lo;
          for (int fo = 0; fo < Fo; ++fo) {
            const int fi = fo * sp.stride_f + fi0;
            if (fi < 0 || fi >= F) continue;
            orow[fo] += wv * xrow[fi];
          }
        }
      }
    }
  }
}

template <class S>
void conv2d_bwd(const S* x, int B, int Ci, int T, int F, const S* w, int Co, int Kt,
                int Kf, const Conv2dSpec& sp, const S* dout, int To, int Fo, S* dx,
                S* dw, S* db, bool parallel) {
  const int Cig = Ci / sp.groups;
  const int Cog = Co / sp.groups;
  if (db) {
#pragma omp parallel for schedule(static) if (parallel)
    for (int co = 0; co < Co; ++co) {
      S acc = 0;
      for (int b = 0; b < B; ++b) {
        const S* drow = dout + ((static_cast<long long>(b) * Co + co) * To) * Fo;
        for (long long i = 0; i < static_cast<long long>(To) * Fo; ++i) acc += drow[i];
      }
      db[co] += acc;
    }
  }
  if (dw) {
    const long long n_w = static_cast<long long>(Co) * Cig * Kt * Kf;
#pragma omp parallel for schedule(static) if (parallel)
    for (long long wi = 0; wi < n_w; ++wi) {
      const int kf = static_cast<int>(wi % Kf);
      const int kt = static_cast<int>((wi / Kf) % Kt);
      const int cig = static_cast<int>((wi / (Kf * Kt)) % Cig);
      const int co = static_cast<int>(wi / (static_cast<long long>(Kf) * Kt * Cig));
      const int g = co / Cog;
      const int ci = g * Cig + cig;
      S acc = 0;
      for (int b = 0; b < B; ++b) {
        for (int to = 0; to < To; ++to) {
          const int ti = to * sp.stride_t + kt - sp.pad_t_lo;
          if (ti < 0 || ti >= T) continue;
          const S* xrow = x + ((static_cast<long long>(b) * Ci + ci) * T + ti) * F;
          const S* drow = dout + ((static_cast<long long>(b) * Co + co) * To + to) * Fo;
          for (int fo = 0; fo < Fo; ++fo) {
            const int fi = fo * sp.stride_f + kf - sp.pad_f_lo;
            if (fi < 0 || fi >= F) continue;
            acc += xrow[fi] * drow[fo];
          }
        }
      }
      dw[wi] += acc;
    }
  }
  if (dx) {
    const long long n_in_rows = static_cast<long long>(B) * Ci * T;
#pragma omp parallel for schedule(static) if (parallel)
    for (long long row = 0; row < n_in_rows; ++row) {
      const int ti = static_cast<int>(row % T);
      const int ci = static_cast<int>((row / T) % Ci);
      const int b = static_cast<int>(row / (static_cast<long long>(T) * Ci));
      const int g = ci / Cig;
      const int cig = ci % Cig;
      S* dxrow = dx + row * F;
      for (int cog = 0; cog < Cog; ++cog) {
        const int co = g * Cog + cog;
        for (int kt = 0; kt < Kt; ++kt) {
          const int tnum = ti + sp.pad_t_lo - kt;
          if (tnum < 0 || tnum % sp.stride_t != 0) continue;
          const int to = tnum / sp.stride_t;
          if (to >= To) continue;
          const S* drow = dout + ((static_cast<long long>(b) * Co + co) * To + to) * Fo;
          const S* wrow = w + ((static_cast<long long>(co) * Cig + cig) * Kt + kt) * Kf;
          for (int kf = 0; kf < Kf; ++kf) {
            const int fnum0 = sp.pad_f_lo - kf;
            const S wv = wrow[kf];
            for (int fi = 0; fi < F; ++fi) {
              const int fnum = fi + fnum0;
              if (fnum < 0 || fnum % sp.stride_f != 0) continue;
              const int fo = fnum / sp.stride_f;
              if (fo >= Fo) continue;
              dxrow[fi] += wv * drow[fo];
            }
          }
        }
      }
    }
  }
}

template <class S>
void conv_transpose2d_fwd(const S* x, int B, int Ci, int T, int F, const S* w, int Co,
                          int Kt, int Kf, const S* bias, const Conv2dSpec& sp, S* out,
                          int To, int Fo, bool parallel) {
  const long long n_out_rows = static_cast<long long>(B) * Co * To;
#pragma omp parallel for schedule(static) if (parallel)
  for (long long row = 0; row < n_out_rows; ++row) {
    const int to = static_cast<int>(row % To);
    const int co = static_cast<int>((row / To) % Co);
    const int b = static_cast<int>(row / (static_cast<long long>(To) * Co));
    S* orow = out + row * Fo;
    for (int fo = 0; fo < Fo; ++fo) orow[fo] = bias ? bias[co] : S(0);
    for (int kt = 0; kt < Kt; ++kt) {
      const int tnum = to + sp.pad_t_lo - kt;
      if (tnum < 0 || tnum % sp.stride_t != 0) continue;
      const int ti = tnum / sp.stride_t;
      if (ti >= T) continue;
      for (int ci = 0; ci < Ci; ++ci) {
        const S* xrow = x + ((static_cast<long long>(b) * Ci + ci) * T + ti) * F;
        const S* wrow = w + ((static_cast<long long>(ci) * Co + co) * Kt + kt) * Kf;
        for (int kf = 0; kf < Kf; ++kf) {
          const S wv = wrow[kf];
          for (int fo = 0; fo < Fo; ++fo) {
            const int fnum = fo + sp.pad_f_lo - kf;
            if (fnum < 0 || fnum % sp.stride_f != 0) continue;
            const int fi = fnum / sp.stride_f;
            if (fi >= F) continue;
            orow[fo] += wv * xrow[fi];
          }
        }
      }
    }
  }
}

template <class S>
void conv_transpose2d_bwd(const S* x, int B, int Ci, int T, int F, const S* w, int Co,
                          int Kt, int Kf, const Conv2dSpec& sp, const S* dout, int To,
                          int Fo, S* dx, S* dw, S* db, bool parallel) {
  if (db) {
#pragma omp parallel for schedule(static) if (parallel)
    for (int co = 0; co < Co; ++co) {
      S acc = 0;
      for (int b = 0; b < B; ++b) {
        const S* drow = dout + ((static_cast<long long>(b) * Co + co) * To) * Fo;
        for (long long i = 0; i < static_cast<long long>(To) * Fo; ++i) acc += drow[i];
      }
      db[co] += acc;
    }
  }
  if (dw) {
    const long long n_w = static_cast<long long>(Ci) * Co * Kt * Kf;
#pragma omp parallel for schedule(static) if (parallel)
    for (long long wi = 0; wi < n_w; ++wi) {
      const int kf = static_cast<int>(wi % Kf);
      const int kt = static_cast<int>((wi / Kf) % Kt);
      const int co = static_cast<int>((wi / (Kf * Kt)) % Co);
      const int ci = static_cast<int>(wi / (static_cast<long long>(Kf) * Kt * Co));
      S acc = 0;
      for (int b = 0; b < B; ++b) {
        for (int ti = 0; ti < T; ++ti) {
          const int to = ti * sp.stride_t + kt - sp.pad_t_lo;
          if (to < 0 || to >= To) continue;
          const S* xrow = x + ((static_cast<long long>(b) * Ci + ci) * T + ti) * F;
          const S* drow = dout + ((static_cast<long long>(b) * Co + co) * To + to) * Fo;
          for (int fi = 0; fi < F; ++fi) {
            const int fo = fi * sp.stride_f + kf - sp.pad_f_lo;
            if (fo < 0 || fo >= Fo) continue;
            acc += xrow[fi] * drow[fo];
          }
        }
      }
      dw[wi] += acc;
    }
  }
  if (dx) {
    const long long n_in_rows = static_cast<long long>(B) * Ci * T;
#pragma omp parallel for schedule(static) if (parallel)
    for (long long row = 0; row < n_in_rows; ++row) {
      const int ti = static_cast<int>(row % T);
      const int ci = static_cast<int>((row / T) % Ci);
      const int b = static_cast<int>(row / (static_cast<long long>(T) * Ci));
      S* dxrow = dx + row * F;
      for (int co = 0; co < Co; ++co) {
        const S* dbase = dout + ((static_cast<long long>(b) * Co + co) * To) * Fo;
        const S* wbase = w + ((static_cast<long long>(ci) * Co + co) * Kt) * Kf;
        for (int kt = 0; kt < Kt; ++kt) {
          const int to = ti * sp.stride_t + kt - sp.pad_t_lo;
          if (to < 0 || to >= To) continue;
          const S* drow = dbase + static_cast<long long>(to) * Fo;
          const S* wrow = wbase + static_cast<long long>(kt) * Kf;
          for (int kf = 0; kf < Kf; ++kf) {
            const S wv = wrow[kf];
            for (int fi = 0; fi < F; ++fi) {
              const int fo = fi * sp.stride_f + kf - sp.pad_f_lo;
              if (fo < 0 || fo >= Fo) continue;
              dxrow[fi] += wv * drow[fo];
            }
          }
        }
      }
    }
  }
}

template <class S>
void linear_fwd(const S* x, int N, int Di, const S* w, int Do, const S* bias, S* y,
                bool parallel) {
#pragma omp parallel for schedule(static) if (parallel)
  for (int n = 0; n < N; ++n) {
    const S* xr = x + static_cast<long long>(n) * Di;
    S* yr = y + static_cast<long long>(n) * Do;
    for (int o = 0; o < Do; ++o) {
      const S* wr = w + static_cast<long long>(o) * Di;
      S acc = bias ? bias[o] : S(0);
      for (int i = 0; i < Di; ++i) acc += xr[i] * wr[i];
      yr[o] = acc;
    }
  }
}

template <class S>
void linear_bwd(const S* x, int N, int Di, const S* w, int Do, const S* dy, S* dx,
                S* dw, S* db, bool parallel) {
  if (dx) {
#pragma omp parallel for schedule(static) if (parallel)
    for (int n = 0; n < N; ++n) {
      const S* dyr = dy + static_cast<long long>(n) * Do;
      S* dxr = dx + static_cast<long long>(n) * Di;
      for (int o = 0; o < Do; ++o) {
        const S g = dyr[o];
        const S* wr = w + static_cast<long long>(o) * Di;
        for (int i = 0; i < Di; ++i) dxr[i] += g * wr[i];
      }
    }
  }
  if (dw) {
#pragma omp parallel for schedule(static) if (parallel)
    for (int o = 0; o < Do; ++o) {
      S* dwr = dw + static_cast<long long>(o) * Di;
      for (int n = 0; n < N; ++n) {
        const S g = dy[static_cast<long long>(n) * Do + o];
        const S* xr = x + static_cast<long long>(n) * Di;
        for (int i = 0; i < Di; ++i) dwr[i] += g * xr[i];
      }
    }
  }
  if (db) {
#pragma omp parallel for schedule(static) if (parallel)
    for (int o = 0; o < Do; ++o) {
      S acc = 0;
      for (int n = 0; n < N; ++n) acc += dy[static_cast<long long>(n) * Do + o];
      db[o] += acc;
    }
  }
}

namespace {

template <class S>
void attn_scores(const S* q, const S* k, int T, int D, int dh, int off, bool causal,
                 S inv_sqrt, S* p) {
  // p <- softmax(q k^T / sqrt(dh)) for one (sequence, head) pair
  for (int i = 0; i < T; ++i) {
    const S* qi = q + static_cast<long long>(i) * D + off;
    S* pi = p + static_cast<long long>(i) * T;
    const int jmax = causal ? i + 1 : T;
    S mx = -std::numeric_limits<S>::infinity();
    for (int j = 0; j < jmax; ++j) {
      const S* kj = k + static_cast<long long>(j) * D + off;
      S acc = 0;
      for (int d = 0; d < dh; ++d) acc += qi[d] * kj[d];
      acc *= inv_sqrt;
      pi[j] = acc;
      if (acc > mx) mx = acc;
    }
    S denom = 0;
    for (int j = 0; j < jmax; ++j) {
      pi[j] = std::exp(pi[j] - mx);
      denom += pi[j];
    }
    const S inv = S(1) / denom;
    for (int j = 0; j < jmax; ++j) pi[j] *= inv;
    for (int j = jmax; j < T; ++j) pi[j] = 0;
  }
}

}  // namespace

template <class S>
void attention_fwd(const S* q, const S* k, const S* v, int N, int T, int D, int heads,
                   bool causal, S* out, bool parallel) {
  const int dh = D / heads;
  const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));
  const long long n_seq = static_cast<long long>(N) * heads;
#pragma omp parallel for schedule(static) if (parallel)
  for (long long s = 0; s < n_seq; ++s) {
    const int h = static_cast<int>(s % heads);
    const int n = static_cast<int>(s / heads);
    const int off = h * dh;
    const S* qn = q + static_cast<long long>(n) * T * D;
    const S* kn = k + static_cast<long long>(n) * T * D;
    const S* vn = v + static_cast<long long>(n) * T * D;
    S* on = out + static_cast<long long>(n) * T * D;
    std::vector<S> p(static_cast<size_t>(T) * T);
    attn_scores(qn, kn, T, D, dh, off, causal, inv_sqrt, p.data());
    for (int i = 0; i < T; ++i) {
      const S* pi = p.data() + static_cast<long long>(i) * T;
      S* oi = on + static_cast<long long>(i) * D + off;
      for (int d = 0; d < dh; ++d) oi[d] = 0;
      const int jmax = causal ? i + 1 : T;
      for (int j = 0; j < jmax; ++j) {
        const S pj = pi[j];
        const S* vj = vn + static_cast<long long>(j) * D + off;
        for (int d = 0; d < dh; ++d) oi[d] += pj * vj[d];
      }
    }
  }
}

template <class S>
void attention_bwd(const S* q, const S* k, const S* v, int N, int T, int D, int heads,
                   bool causal, const S* dout, S* dq, S* dk, S* dv, bool parallel) {
  const int dh = D / heads;
  const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));
  const long long n_seq = static_cast<long long>(N) * heads;
#pragma omp parallel for schedule(static) if (parallel)
  for (long long s = 0; s < n_seq; ++s) {
    const int h = static_cast<int>(s % heads);
    const int n = static_cast<int>(s / heads);
    const int off = h * dh;
    const long long base = static_cast<long long>(n) * T * D;
    const S* qn = q + base;
    const S* kn = k + base;
    const S* vn = v + base;
    const S* dn = dout + base;
    std::vector<S> p(static_cast<size_t>(T) * T);
    std::vector<S> dp(static_cast<size_t>(T) * T);
    attn_scores(qn, kn, T, D, dh, off, causal, inv_sqrt, p.data());
    // dV = P^T dOut, dP = dOut V^T
    for (int i = 0; i < T; ++i) {
      S* dpi = dp.data() + static_cast<long long>(i) * T;
      const S* di = dn + static_cast<long long>(i) * D + off;
      const int jmax = causal ? i + 1 : T;
      for (int j = 0; j < jmax; ++j) {
        const S* vj = vn + static_cast<long long>(j) * D + off;
        S acc = 0;
        for (int d = 0; d < dh; ++d) acc += di[d] * vj[d];
        dpi[j] = acc;
      }
      for (int j = jmax; j < T; ++j) dpi[j] = 0;
    }
    for (int j = 0; j < T; ++j) {
      S* dvj = dv + base + static_cast<long long>(j) * D + off;
      const int imin = causal ? j : 0;
      for (int i = imin; i < T; ++i) {
        const S pij = p[static_cast<size_t>(i) * T + j];
        const S* di = dn + static_cast<long long>(i) * D + off;
        for (int d = 0; d < dh; ++d) dvj[d] += pij * di[d];
      }
    }
    // dS = P * (dP - rowsum(P*dP)); dQ = dS K / sqrt, dK = dS^T Q / sqrt
    for (int i = 0; i < T; ++i) {
      const S* pi = p.data() + static_cast<long long>(i) * T;
      S* dpi = dp.data() + static_cast<long long>(i) * T;
      const int jmax = causal ? i + 1 : T;
      S dot = 0;
      for (int j = 0; j < jmax; ++j) dot += pi[j] * dpi[j];
      for (int j = 0; j < jmax; ++j) dpi[j] = pi[j] * (dpi[j] - dot);
    }
    for (int i = 0; i < T; ++i) {
      const S* dpi = dp.data() + static_cast<long long>(i) * T;
      S* dqi = dq + base + static_cast<long long>(i) * D + off;
      const int jmax = causal ? i + 1 : T;
      for (int j = 0; j < jmax; ++j) {
        const S g = dpi[j] * inv_sqrt;
        const S* kj = kn + static_cast<long long>(j) * D + off;
        for (int d = 0; d < dh; ++d) dqi[d] += g * kj[d];
      }
    }
    for (int j = 0; j < T; ++j) {
      S* dkj = dk + base + static_cast<long long>(j) * D + off;
      const int imin = causal ? j : 0;
      for (int i = imin; i < T; ++i) {
        const S g = dp[static_cast<size_t>(i) * T + j] * inv_sqrt;
        const S* qi = qn + static_cast<long long>(i) * D + off;
        for (int d = 0; d < dh; ++d) dkj[d] += g * qi[d];
      }
    }
  }
}

template <class S>
void lstm_fwd(const S* x, int B, int T, int D, const S* wih, const S* whh, const S* b,
              int H, S* y, S* gates, S* cells, bool parallel) {
  const int G = 4 * H;
#pragma omp parallel for schedule(static) if (parallel)
  for (int bi = 0; bi < B; ++bi) {
    std::vector<S> h(static_cast<size_t>(H), S(0));
    std::vector<S> c(static_cast<size_t>(H), S(0));
    std::vector<S> pre(static_cast<size_t>(G));
    for (int t = 0; t < T; ++t) {
      const S* xt = x + (static_cast<long long>(bi) * T + t) * D;
      for (int g = 0; g < G; ++g) {
        const S* wr = wih + static_cast<long long>(g) * D;
        S acc = b ? b[g] : S(0);
        for (int i = 0; i < D; ++i) acc += wr[i] * xt[i];
        const S* ur = whh + static_cast<long long>(g) * H;
        for (int i = 0; i < H; ++i) acc += ur[i] * h[i];
        pre[static_cast<size_t>(g)] = acc;
      }
      S* gt = gates + (static_cast<long long>(bi) * T + t) * G;
      S* ct = cells + (static_cast<long long>(bi) * T + t) * H;
      S* yt = y + (static_cast<long long>(bi) * T + t) * H;
      for (int u = 0; u < H; ++u) {
        const S ig = S(1) / (S(1) + std::exp(-pre[static_cast<size_t>(u)]));
        const S fg = S(1) / (S(1) + std::exp(-pre[static_cast<size_t>(H + u)]));
        const S gg = std::tanh(pre[static_cast<size_t>(2 * H + u)]);
        const S og = S(1) / (S(1) + std::exp(-pre[static_cast<size_t>(3 * H + u)]));
        const S cn = fg * c[static_cast<size_t>(u)] + ig * gg;
        gt[u] = ig;
        gt[H + u] = fg;
        gt[2 * H + u] = gg;
        gt[3 * H + u] = og;
        ct[u] = cn;
        c[static_cast<size_t>(u)] = cn;
        const S hn = og * std::tanh(cn);
        h[static_cast<size_t>(u)] = hn;
        yt[u] = hn;
      }
    }
  }
}

template <class S>
void lstm_bwd(const S* x, int B, int T, int D, const S* wih, const S* whh, int H,
              const S* y, const S* gates, const S* cells, const S* dy, S* dx, S* dwih,
              S* dwhh, S* db, bool parallel) {
  const int G = 4 * H;
  // Per-batch weight gradient partials are merged serially in batch order so
  // the result does not depend on the thread count.
  std::vector<std::vector<S>> dwih_part(static_cast<size_t>(B));
  std::vector<std::vector<S>> dwhh_part(static_cast<size_t>(B));
  std::vector<std::vector<S>> db_part(static_cast<size_t>(B));
#pragma omp parallel for schedule(static) if (parallel)
  for (int bi = 0; bi < B; ++bi) {
    std::vector<S>& dwihp = dwih_part[static_cast<size_t>(bi)];
    std::vector<S>& dwhhp = dwhh_part[static_cast<size_t>(bi)];
    std::vector<S>& dbp = db_part[static_cast<size_t>(bi)];
    dwihp.assign(static_cast<size_t>(G) * D, S(0));
    dwhhp.assign(static_cast<size_t>(G) * H, S(0));
    dbp.assign(static_cast<size_t>(G), S(0));
    std::vector<S> dh(static_cast<size_t>(H), S(0));
    std::vector<S> dc(static_cast<size_t>(H), S(0));
    std::vector<S> dpre(static_cast<size_t>(G));
    for (int t = T - 1; t >= 0; --t) {
      const long long bt = static_cast<long long>(bi) * T + t;
      const S* gt = gates + bt * G;
      const S* ct = cells + bt * H;
      const S* dyt = dy + bt * H;
      const S* cprev = t > 0 ? cells + (bt - 1) * H : nullptr;
      for (int u = 0; u < H; ++u) {
        const S ig = gt[u], fg = gt[H + u], gg = gt[2 * H + u], og = gt[3 * H + u];
        const S tc = std::tanh(ct[u]);
        const S dhu = dh[static_cast<size_t>(u)] + dyt[u];
        const S dcu = dc[static_cast<size_t>(u)] + dhu * og * (S(1) - tc * tc);
        const S cp = cprev ? cprev[u] : S(0);
        dpre[static_cast<size_t>(u)] = dcu * gg * ig * (S(1) - ig);
        dpre[static_cast<size_t>(H + u)] = dcu * cp * fg * (S(1) - fg);
        dpre[static_cast<size_t>(2 * H + u)] = dcu * ig * (S(1) - gg * gg);
        dpre[static_cast<size_t>(3 * H + u)] = dhu * tc * og * (S(1) - og);
        dc[static_cast<size_t>(u)] = dcu * fg;
      }
      const S* xt = x + bt * D;
      const S* hprev = t > 0 ? y + (bt - 1) * H : nullptr;
      for (int g = 0; g < G; ++g) {
        const S dg = dpre[static_cast<size_t>(g)];
        dbp[static_cast<size_t>(g)] += dg;
        S* dwr = dwihp.data() + static_cast<long long>(g) * D;
        for (int i = 0; i < D; ++i) dwr[i] += dg * xt[i];
        if (hprev) {
          S* dur = dwhhp.data() + static_cast<long long>(g) * H;
          for (int i = 0; i < H; ++i) dur[i] += dg * hprev[i];
        }
      }
      if (dx) {
        S* dxt = dx + bt * D;
        for (int g = 0; g < G; ++g) {
          const S dg = dpre[static_cast<size_t>(g)];
          const S* wr = wih + static_cast<long long>(g) * D;
          for (int i = 0; i < D; ++i) dxt[i] += dg * wr[i];
        }
      }
      std::fill(dh.begin(), dh.end(), S(0));
      for (int g = 0; g < G; ++g) {
        const S dg = dpre[static_cast<size_t>(g)];
        const S* ur = whh + static_cast<long long>(g) * H;
        for (int i = 0; i < H; ++i) dh[static_cast<size_t>(i)] += dg * ur[i];
      }
    }
  }
  for (int bi = 0; bi < B; ++bi) {
    if (dwih)
      for (size_t i = 0; i < dwih_part[bi].size(); ++i) dwih[i] += dwih_part[bi][i];
    if (dwhh)
      for (size_t i = 0; i < dwhh_part[bi].size(); ++i) dwhh[i] += dwhh_part[bi][i];
    if (db)
      for (size_t i = 0; i < db_part[bi].size(); ++i) db[i] += db_part[bi][i];
  }
}

template <class S>
void layernorm_channels_fwd(const S* x, int B, int C, int T, int F, const S* gain,
                            const S* bias, S eps, S* y, bool parallel) {
  const long long n_pos = static_cast<long long>(B) * T * F;
  const long long plane = static_cast<long long>(T) * F;
#pragma omp parallel for schedule(static) if (parallel)
  for (long long pos = 0; pos < n_pos; ++pos) {
    const long long b = pos / plane;
    const long long tf = pos % plane;
    const S* xp = x + b * C * plane + tf;
    S* yp = y + b * C * plane + tf;
    S mu = 0;
    for (int c = 0; c < C; ++c) mu += xp[c * plane];
    mu /= static_cast<S>(C);
    S var = 0;
    for (int c = 0; c < C; ++c) {
      const S d = xp[c * plane] - mu;
      var += d * d;
    }
    var /= static_cast<S>(C);
    const S inv = S(1) / std::sqrt(var + eps);
    for (int c = 0; c < C; ++c)
      yp[c * plane] = gain[c] * ((xp[c * plane] - mu) * inv) + bias[c];
  }
}

template <class S>
void layernorm_channels_bwd(const S* x, int B, int C, int T, int F, const S* gain,
                            S eps, const S* dy, S* dx, S* dgain, S* dbias,
                            bool parallel) {
  const long long n_pos = static_cast<long long>(B) * T * F;
  const long long plane = static_cast<long long>(T) * F;
  if (dx) {
#pragma omp parallel for schedule(static) if (parallel)
    for (long long pos = 0; pos < n_pos; ++pos) {
      const long long b = pos / plane;
      const long long tf = pos % plane;
      const S* xp = x + b * C * plane + tf;
      const S* dyp = dy + b * C * plane + tf;
      S* dxp = dx + b * C * plane + tf;
      S mu = 0;
      for (int c = 0; c < C; ++c) mu += xp[c * plane];
      mu /= static_cast<S>(C);
      S var = 0;
      for (int c = 0; c < C; ++c) {
        const S d = xp[c * plane] - mu;
        var += d * d;
      }
      var /= static_cast<S>(C);
      const S inv = S(1) / std::sqrt(var + eps);
      S sum_g = 0, sum_gx = 0;
      for (int c = 0; c < C; ++c) {
        const S xhat = (xp[c * plane] - mu) * inv;
        const S g = dyp[c * plane] * gain[c];
        sum_g += g;
        sum_gx += g * xhat;
      }
      for (int c = 0; c < C; ++c) {
        const S xhat = (xp[c * plane] - mu) * inv;
        const S g = dyp[c * plane] * gain[c];
        dxp[c * plane] +=
            inv * (g - (sum_g + xhat * sum_gx) / static_cast<S>(C));
      }
    }
  }
  if (dgain || dbias) {
#pragma omp parallel for schedule(static) if (parallel)
    for (int c = 0; c < C; ++c) {
      S dg = 0, dbv = 0;
      for (long long b = 0; b < B; ++b) {
        const S* xb = x + b * C * plane;
        const S* dyb = dy + b * C * plane;
        for (long long tf = 0; tf < plane; ++tf) {
          S mu = 0;
          for (int cc = 0; cc < C; ++cc) mu += xb[cc * plane + tf];
          mu /= static_cast<S>(C);
          S var = 0;
          for (int cc = 0; cc < C; ++cc) {
            const S d = xb[cc * plane + tf] - mu;
            var += d * d;
          }
          var /= static_cast<S>(C);
          const S inv = S(1) / std::sqrt(var + eps);
          dg += dyb[c * plane + tf] * ((xb[c * plane + tf] - mu) * inv);
          dbv += dyb[c * plane + tf];
        }
      }
      if (dgain) dgain[c] += dg;
      if (dbias) dbias[c] += dbv;
    }
  }
}

template <class S>
void softmax_lastdim_fwd(const S* x, long long rows, int K, S* y, bool parallel) {
#pragma omp parallel for schedule(static) if (parallel)
  for (long long r = 0; r < rows; ++r) {
    const S* xr = x + r * K;
    S* yr = y + r * K;
    S mx = xr[0];
    for (int i = 1; i < K; ++i)
      if (xr[i] > mx) mx = xr[i];
    S denom = 0;
    for (int i = 0; i < K; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      denom += yr[i];
    }
    const S inv = S(1) / denom;
    for (int i = 0; i < K; ++i) yr[i] *= inv;
  }
}

template <class S>
void softmax_lastdim_bwd(const S* y, long long rows, int K, const S* dy, S* dx,
                         bool parallel) {
#pragma omp parallel for schedule(static) if (parallel)
  for (long long r = 0; r < rows; ++r) {
    const S* yr = y + r * K;
    const S* dyr = dy + r * K;
    S* dxr = dx + r * K;
    S dot = 0;
    for (int i = 0; i < K; ++i) dot += yr[i] * dyr[i];
    for (int i = 0; i < K; ++i) dxr[i] += yr[i] * (dyr[i] - dot);
  }
}

#define RTSDOA_INSTANTIATE(S)                                                          \
  template void conv2d_fwd<S>(const S*, int, int, int, int, const S*, int, int, int,  \
                              const S*, const Conv2dSpec&, S*, int, int, bool);        \
  template void conv2d_bwd<S>(const S*, int, int, int, int, const S*, int, int, int,  \
                              const Conv2dSpec&, const S*, int, int, S*, S*, S*,      \
                              bool);                                                   \
  template void conv_transpose2d_fwd<S>(const S*, int, int, int, int, const S*, int,  \
                                        int, int, const S*, const Conv2dSpec&, S*,    \
                                        int, int, bool);                               \
  template void conv_transpose2d_bwd<S>(const S*, int, int, int, int, const S*, int,  \
                                        int, int, const Conv2dSpec&, const S*, int,   \
                                        int, S*, S*, S*, bool);                        \
  template void linear_fwd<S>(const S*, int, int, const S*, int, const S*, S*, bool); \
  template void linear_bwd<S>(const S*, int, int, const S*, int, const S*, S*, S*,    \
                              S*, bool);                                               \
  template void attention_fwd<S>(const S*, const S*, const S*, int, int, int, int,    \
                                 bool, S*, bool);                                      \
  template void attention_bwd<S>(const S*, const S*, const S*, int, int, int, int,    \
                                 bool, const S*, S*, S*, S*, bool);                    \
  template void lstm_fwd<S>(const S*, int, int, int, const S*, const S*, const S*,    \
                            int, S*, S*, S*, bool);                                    \
  template void lstm_bwd<S>(const S*, int, int, int, const S*, const S*, int,         \
                            const S*, const S*, const S*, const S*, S*, S*, S*, S*,   \
                            bool);                                                     \
  template void layernorm_channels_fwd<S>(const S*, int, int, int, int, const S*,     \
                                          const S*, S, S*, bool);                      \
  template void layernorm_channels_bwd<S>(const S*, int, int, int, int, const S*, S,  \
                                          const S*, S*, S*, S*, bool);                 \
  template void softmax_lastdim_fwd<S>(const S*, long long, int, S*, bool);           \
  template void softmax_lastdim_bwd<S>(const S*, long long, int, const S*, S*, bool);

RTSDOA_INSTANTIATE(float)
RTSDOA_INSTANTIATE(double)
#undef RTSDOA_INSTANTIATE

}  // namespace rtsdoa::core
