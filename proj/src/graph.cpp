#include "rtsdoa/graph.hpp"

#include <cmath>
#include <cstring>
#include <memory>

namespace rtsdoa::core {

namespace {

constexpr long long kParMin = 1 << 14;

template <class S, class F>
void ew_loop(long long n, F f) {
  const bool par = parallel_enabled() && n > kParMin;
#pragma omp parallel for schedule(static) if (par)
  for (long long i = 0; i < n; ++i) f(i);
}

template <class S>
Graph<S>* same_graph(Var<S> a, Var<S> b, const char* op) {
  if (!a.valid() || !b.valid())
    throw std::invalid_argument(std::string(op) + ": unbound operand");
  if (a.g != b.g)
    throw std::invalid_argument(std::string(op) + ": operands from different graphs");
  return a.g;
}

template <class S>
void require_shape(const Tensor<S>& t, int rank, const char* op, const char* what) {
  if (t.rank() != rank)
    throw std::invalid_argument(std::string(op) + ": " + what + " must be rank-" +
                                std::to_string(rank) + ", got " + shape_str(t.shape));
}

}  // namespace

template <class S>
void Graph<S>::backward(Var<S> loss) {
  if (loss.g != this) throw std::invalid_argument("backward: loss not from this graph");
  Node& ln = nodes_[loss.idx];
  if (ln.value.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_str(ln.value.shape));
  for (auto& n : nodes_)
    if (n.requires_grad) n.grad = Tensor<S>::zeros(n.value.shape);
  if (!ln.requires_grad) return;
  ln.grad.data[0] = S(1);
  for (int i = loss.idx; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.back) n.back();
  }
}

template <class S>
Var<S> identity(Var<S> x) {
  Graph<S>* g = x.g;
  Tensor<S> out = g->val(x);
  const bool rg = g->wants_grad(x);
  const int xi = x.idx;
  const int oi = static_cast<int>(g->num_nodes());
  return g->add_node(std::move(out), rg,
                     rg ? std::function<void()>([g, xi, oi]() {
                       auto& dx = g->node(xi).grad;
                       const auto& dy = g->node(oi).grad;
                       ew_loop<S>(dx.numel(), [&](long long i) { dx[i] += dy[i]; });
                     })
                        : std::function<void()>(),
                     "identity");
}

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
  Graph<S>* g = same_graph(a, b, "add");
  const Tensor<S>& av = g->val(a);
  const Tensor<S>& bv = g->val(b);
  if (av.shape != bv.shape)
    throw std::invalid_argument("add: shape mismatch " + shape_str(av.shape) + " vs " +
                                shape_str(bv.shape));
  Tensor<S> out(av.shape);
  ew_loop<S>(out.numel(), [&](long long i) { out[i] = av[i] + bv[i]; });
  const bool rg = g->wants_grad(a) || g->wants_grad(b);
  const int ai = a.idx, bi = b.idx;
  const int oi = static_cast<int>(g->num_nodes());
  return g->add_node(std::move(out), rg,
                     rg ? std::function<void()>([g, ai, bi, oi]() {
                       const auto& dy = g->node(oi).grad;
                       if (g->node(ai).requires_grad) {
                         auto& da = g->node(ai).grad;
                         ew_loop<S>(dy.numel(), [&](long long i) { da[i] += dy[i]; });
                       }
                       if (g->node(bi).requires_grad) {
                         auto& db = g->node(bi).grad;
                         ew_loop<S>(dy.numel(), [&](long long i) { db[i] += dy[i]; });
                       }
                     })
                        : std::function<void()>(),
                     "add");
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
  Graph<S>* g = same_graph(a, b, "sub");
  const Tensor<S>& av = g->val(a);
  const Tensor<S>& bv = g->val(b);
  if (av.shape != bv.shape)
    throw std::invalid_argument("sub: shape mismatch " + shape_str(av.shape) + " vs " +
                                shape_str(bv.shape));
  Tensor<S> out(av.shape);
  ew_loop<S>(out.numel(), [&](long long i) { out[i] = av[i] - bv[i]; });
  const bool rg = g->wants_grad(a) || g->wants_grad(b);
  const int ai = a.idx, bi = b.idx;
  const int oi = static_cast<int>(g->num_nodes());
  return g->add_node(std::move(out), rg,
                     rg ? std::function<void()>([g, ai, bi, oi]() {
                       const auto& dy = g->node(oi).grad;
                       if (g->node(ai).requires_grad) {
                         auto& da = g->node(ai).grad;
                         ew_loop<S>(dy.numel(), [&](long long i) { da[i] += dy[i]; });
                       }
                       if (g->node(bi).requires_grad) {
                         auto& db = g->node(bi).grad;
                         ew_loop<S>(dy.numel(), [&](long long i) { db[i] -= dy[i]; });
                       }
                     })
                        : std::function<void()>(),
                     "sub");
}

template <class S>
Var<S> mul(Var<S> a, Var<S> b) {
  Graph<S>* g = same_graph(a, b, "mul");
  const Tensor<S>& av = g->val(a);
  const Tensor<S>& bv = g->val(b);
  if (av.shape != bv.shape)
    throw std::invalid_argument("mul: shape mismatch " + shape_str(av.shape) + " vs " +
                                shape_str(bv.shape));
  Tensor<S> out(av.shape);
  ew_loop<S>(out.numel(), [&](long long i) { out[i] = av[i] * bv[i]; });
  const bool rg = g->wants_grad(a) || g->wants_grad(b);
  const int ai = a.idx, bi = b.idx;
  const int oi = static_cast<int>(g->num_nodes());
  return g->add_node(std::move(out), rg,
                     rg ? std::function<void()>([g, ai, bi, oi]() {
                       const auto& dy = g->node(oi).grad;
                       const auto& av2 = g->node(ai).value;
                       const auto& bv2 = g->node(bi).value;
                       if (g->node(ai).requires_grad) {
                         auto& da = g->node(ai).grad;
                         ew_loop<S>(dy.numel(),
                                    [&](long long i) { da[i] += dy[i] * bv2[i]; });
                       }
                       if (g->node(bi).requires_grad) {
                         auto& db = g->node(bi).grad;
                         ew_loop<S>(dy.numel(),
                                    [&](long long i) { db[i] += dy[i] * av2[i]; });
                       }
                     })
                        : std::function<void()>(),
                     "mul");
}

template <class S>
Var<S> scale(Var<S> a, double s) {
  Graph<S>* g = a.g;
  const Tensor<S>& av = g->val(a);
  Tensor<S> out(av.shape);
  const S sv = static_cast<S>(s);
  ew_loop<S>(out.numel(), [&](long long i) { out[i] = av[i] * sv; });
  const bool rg = g->wants_grad(a);
  const int ai = a.idx;
  const int oi = static_cast<int>(g->num_nodes());
  return g->add_node(std::move(out), rg,
                     rg ? std::function<void()>([g, ai, oi, sv]() {
                       const auto& dy = g->node(oi).grad;
                       auto& da = g->node(ai).grad;
                       ew_loop<S>(dy.numel(), [&](long long i) { da[i] += dy[i] * sv; });
                     })
                        : std::function<void()>(),
                     "scale");
}

template <class S>
Var<S> tanh(Var<S> a) {
  Graph<S>* g = a.g;
  const Tensor<S>& av = g->val(a);
  Tensor<S> out(av.shape);
  ew_loop<S>(out.numel(), [&](long long i) { out[i] = std::tanh(av[i]); });
  const bool rg = g->wants_grad(a);
  const int ai = a.idx;
  const int oi = static_cast<int>(g->num_nodes());
  return g->add_node(std::move(out), rg,
                     rg ? std::function<void()>([g, ai, oi]() {
                       const auto& dy = g->node(oi).grad;
                       const auto& y = g->node(oi).value;
                       auto& da = g->node(ai).grad;
                       ew_loop<S>(dy.numel(), [&](long long i) {
                         da[i] += dy[i] * (S(1) - y[i] * y[i]);
                       });
                     })
                        : std::function<void()>(),
                     "tanh");
}

template <class S>
Var<S> sigmoid(Var<S> a) {
  Graph<S>* g = a.g;
  const Tensor<S>& av = g->val(a);
  Tensor<S> out(av.shape);
  ew_loop<S>(out.numel(),
             [&](long long i) { out[i] = S(1) / (S(1) + std::exp(-av[i])); });
  const bool rg = g->wants_grad(a);
  const int ai = a.idx;
  const int oi = static_cast<int>(g->num_nodes());
  return g->add_node(std::move(out), rg,
                     rg ? std::function<void()>([g, ai, oi]() {
                       const auto& dy = g->node(oi).grad;
                       const auto& y = g->node(oi).value;
                       auto& da = g->node(ai).grad;
                       ew_loop<S>(dy.numel(), [&](long long i) {
                         da[i] += dy[i] * y[i] * (S(1) - y[i]);
                       });
                     })
                        : std::function<void()>(),
                     "sigmoid");
}

template <class S>
Var<S> conv2d(Var<S> x, Var<S> w, Var<S> b, const Conv2dSpec& sp) {
  Graph<S>* g = same_graph(x, w, "conv2d");
  const Tensor<S>& xv = g->val(x);
  const Tensor<S>& wv = g->val(w);
  require_shape(xv, 4, "conv2d", "input");
  require_shape(wv, 4, "conv2d", "weight");
  const int B = xv.dim(0), Ci = xv.dim(1), T = xv.dim(2), F = xv.dim(3);
  const int Co = wv.dim(0), Kt = wv.dim(2), Kf = wv.dim(3);
  if (Ci % sp.groups != 0 || Co % sp.groups != 0 || wv.dim(1) != Ci / sp.groups)
    throw std::invalid_argument("conv2d: channel/group mismatch, input " +
                                shape_str(xv.shape) + " weight " + shape_str(wv.shape) +
                                " groups " + std::to_string(sp.groups));
  const S* bias = nullptr;
  if (b.valid()) {
    const Tensor<S>& bv = g->val(b);
    if (bv.rank() != 1 || bv.dim(0) != Co)
      throw std::invalid_argument("conv2d: bias must be [" + std::to_string(Co) +
                                  "], got " + shape_str(bv.shape));
    bias = bv.data.data();
  }
  const int To = conv_out_dim(T, Kt, sp.stride_t, sp.pad_t_lo, sp.pad_t_hi);
  const int Fo = conv_out_dim(F, Kf, sp.stride_f, sp.pad_f_lo, sp.pad_f_hi);
  if (To <= 0 || Fo <= 0)
    throw std::invalid_argument("conv2d: empty output for input " + shape_str(xv.shape) +
                                " weight " + shape_str(wv.shape));
  Tensor<S> out({B, Co, To, Fo});
  conv2d_fwd(xv.data.data(), B, Ci, T, F, wv.data.data(), Co, Kt, Kf, bias, sp,
             out.data.data(), To, Fo, parallel_enabled());
  const bool rg = g->wants_grad(x) || g->wants_grad(w) || (b.valid() && g->wants_grad(b));
  const int xi = x.idx, wi = w.idx, bi = b.valid() ? b.idx : -1;
  const int oi = static_cast<int>(g->num_nodes());
  auto back = [g, xi, wi, bi, oi, sp, B, Ci, T, F, Co, Kt, Kf, To, Fo]() {
    const auto& dout = g->node(oi).grad;
    const auto& xv2 = g->node(xi).value;
    const auto& wv2 = g->node(wi).value;
    S* dx = g->node(xi).requires_grad ? g->node(xi).grad.data.data() : nullptr;
    S* dw = g->node(wi).requires_grad ? g->node(wi).grad.data.data() : nullptr;
    S* db = bi >= 0 && g->node(bi).requires_grad ? g->node(bi).grad.data.data() : nullptr;
    conv2d_bwd(xv2.data.data(), B, Ci, T, F, wv2.data.data(), Co, Kt, Kf, sp,
               dout.data.data(), To, Fo, dx, dw, db, parallel_enabled());
  };
  return g->add_node(std::move(out), rg,
                     rg ? std::function<void()>(back) : std::function<void()>(),
                     "conv2d");
}

template <class S>
Var<S> conv_transpose2d(Var<S> x, Var<S> w, Var<S> b, const Conv2dSpec& sp, int t_out,
                        int f_out) {
  Graph<S>* g = same_graph(x, w, "conv_transpose2d");
  const Tensor<S>& xv = g->val(x);
  const Tensor<S>& wv = g->val(w);
  require_shape(xv, 4, "conv_transpose2d", "input");
  require_shape(wv, 4, "conv_transpose2d", "weight");
  const int B = xv.dim(0), Ci = xv.dim(1), T = xv.dim(2), F = xv.dim(3);
  const int Co = wv.dim(1), Kt = wv.dim(2), Kf = wv.dim(3);
  if (wv.dim(0) != Ci)
    throw std::invalid_argument("conv_transpose2d: input " + shape_str(xv.shape) +
                                " does not match weight " + shape_str(wv.shape));
  const S* bias = nullptr;
  if (b.valid()) {
    const Tensor<S>& bv = g->val(b);
    if (bv.rank() != 1 || bv.dim(0) != Co)
      throw std::invalid_argument("conv_transpose2d: bias must be [" +
                                  std::to_string(Co) + "], got " + shape_str(bv.shape));
    bias = bv.data.data();
  }
  Tensor<S> out({B, Co, t_out, f_out});
  conv_transpose2d_fwd(xv.data.data(), B, Ci, T, F, wv.data.data(), Co, Kt, Kf, bias,
                       sp, out.data.data(), t_out, f_out, parallel_enabled());
  const bool rg = g->wants_grad(x) || g->wants_grad(w) || (b.valid() && g->wants_grad(b));
  const int xi = x.idx, wi = w.idx, bi = b.valid() ? b.idx : -1;
  const int oi = static_cast<int>(g->num_nodes());
  auto back = [g, xi, wi, bi, oi, sp, B, Ci, T, F, Co, Kt, Kf, t_out, f_out]() {
    const auto& dout = g->node(oi).grad;
    S* dx = g->node(xi).requires_grad ? g->node(xi).grad.data.data() : nullptr;
    S* dw = g->node(wi).requires_grad ? g->node(wi).grad.data.data() : nullptr;
    S* db = bi >= 0 && g->node(bi).requires_grad ? g->node(bi).grad.data.data() : nullptr;
    conv_transpose2d_bwd(g->node(xi).value.data.data(), B, Ci, T, F,
                         g->node(wi).value.data.data(), Co, Kt, Kf, sp,
                         dout.data.data(), t_out, f_out, dx, dw, db,
                         parallel_enabled());
  };
  return g->add_node(std::move(out), rg,
                     rg ? std::function<void()>(back) : std::function<void()>(),
                     "conv_transpose2d");
}

template <class S>
Var<S> linear(Var<S> x, Var<S> w, Var<S> b) {
  Graph<S>* g = same_graph(x, w, "linear");
  const Tensor<S>& xv = g->val(x);
  const Tensor<S>& wv = g->val(w);
  require_shape(wv, 2, "linear", "weight");
  if (xv.rank() < 1)
    throw std::invalid_argument("linear: input must have at least one axis");
  const int Di = xv.dim(xv.rank() - 1);
  const int Do = wv.dim(0);
  if (wv.dim(1) != Di)
    throw std::invalid_argument("linear: input " + shape_str(xv.shape) +
                                " does not match weight " + shape_str(wv.shape));
  const S* bias = nullptr;
  if (b.valid()) {
    const Tensor<S>& bv = g->val(b);
    if (bv.rank() != 1 || bv.dim(0) != Do)
      throw std::invalid_argument("linear: bias must be [" + std::to_string(Do) +
                                  "], got " + shape_str(bv.shape));
    bias = bv.data.data();
  }
  const int N = static_cast<int>(xv.numel() / Di);
  Shape oshape = xv.shape;
  oshape.back() = Do;
  Tensor<S> out(oshape);
  linear_fwd(xv.data.data(), N, Di, wv.data.data(), Do, bias, out.data.data(),
             parallel_enabled());
  const bool rg = g->wants_grad(x) || g->wants_grad(w) || (b.valid() && g->wants_grad(b));
  const int xi = x.idx, wi = w.idx, bi = b.valid() ? b.idx : -1;
  const int oi = static_cast<int>(g->num_nodes());
  auto back = [g, xi, wi, bi, oi, N, Di, Do]() {
    const auto& dout = g->node(oi).grad;
    S* dx = g->node(xi).requires_grad ? g->node(xi).grad.data.data() : nullptr;
    S* dw = g->node(wi).requires_grad ? g->node(wi).grad.data.data() : nullptr;
    S* db = bi >= 0 && g->node(bi).requires_grad ? g->node(bi).grad.data.data() : nullptr;
    linear_bwd(g->node(xi).value.data.data(), N, Di, g->node(wi).value.data.data(), Do,
               dout.data.data(), dx, dw, db, parallel_enabled());
  };
  return g->add_node(std::move(out), rg,
                     rg ? std::function<void()>(back) : std::function<void()>(),
                     "linear");
}

template <class S>
Var<S> lstm(Var<S> x, Var<S> wih, Var<S> whh, Var<S> b) {
  Graph<S>* g = same_graph(x, wih, "lstm");
  const Tensor<S>& xv = g->val(x);
  const Tensor<S>& wihv = g->val(wih);
  const Tensor<S>& whhv = g->val(whh);
  require_shape(xv, 3, "lstm", "input");
  require_shape(wihv, 2, "lstm", "wih");
  require_shape(whhv, 2, "lstm", "whh");
  const int B = xv.dim(0), T = xv.dim(1), D = xv.dim(2);
  const int H = whhv.dim(1);
  if (wihv.dim(0) != 4 * H || whhv.dim(0) != 4 * H || wihv.dim(1) != D)
    throw std::invalid_argument("lstm: weight shapes " + shape_str(wihv.shape) + ", " +
                                shape_str(whhv.shape) + " do not match input " +
                                shape_str(xv.shape));
  const S* bias = nullptr;
  if (b.valid()) {
    const Tensor<S>& bv = g->val(b);
    if (bv.rank() != 1 || bv.dim(0) != 4 * H)
      throw std::invalid_argument("lstm: bias must be [" + std::to_string(4 * H) +
                                  "], got " + shape_str(bv.shape));
    bias = bv.data.data();
  }
  Tensor<S> out({B, T, H});
  auto gates = std::make_shared<Tensor<S>>(Shape{B, T, 4 * H});
  auto cells = std::make_shared<Tensor<S>>(Shape{B, T, H});
  lstm_fwd(xv.data.data(), B, T, D, wihv.data.data(), whhv.data.data(), bias, H,
           out.data.data(), gates->data.data(), cells->data.data(), parallel_enabled());
  const bool rg = g->wants_grad(x) || g->wants_grad(wih) || g->wants_grad(whh) ||
                  (b.valid() && g->wants_grad(b));
  const int xi = x.idx, wihi = wih.idx, whhi = whh.idx, bi = b.valid() ? b.idx : -1;
  const int oi = static_cast<int>(g->num_nodes());
  auto back = [g, xi, wihi, whhi, bi, oi, gates, cells, B, T, D, H]() {
    const auto& dout = g->node(oi).grad;
    S* dx = g->node(xi).requires_grad ? g->node(xi).grad.data.data() : nullptr;
    S* dwih = g->node(wihi).requires_grad ? g->node(wihi).grad.data.data() : nullptr;
    S* dwhh = g->node(whhi).requires_grad ? g->node(whhi).grad.data.data() : nullptr;
    S* db = bi >= 0 && g->node(bi).requires_grad ? g->node(bi).grad.data.data() : nullptr;
    lstm_bwd(g->node(xi).value.data.data(), B, T, D, g->node(wihi).value.data.data(),
             g->node(whhi).value.data.data(), H, g->node(oi).value.data.data(),
             gates->data.data(), cells->data.data(), dout.data.data(), dx, dwih, dwhh,
             db, parallel_enabled());
  };
  return g->add_node(std::move(out), rg,
                     rg ? std::function<void()>(back) : std::function<void()>(),
                     "lstm");
}

template <class S>
Var<S> attention(Var<S> q, Var<S> k, Var<S> v, int heads, bool causal) {
  Graph<S>* g = same_graph(q, k, "attention");
  same_graph(k, v, "attention");
  const Tensor<S>& qv = g->val(q);
  const Tensor<S>& kv = g->val(k);
  const Tensor<S>& vv = g->val(v);
  require_shape(qv, 3, "attention", "q");
  if (qv.shape != kv.shape || qv.shape != vv.shape)
    throw std::invalid_argument("attention: q/k/v shapes differ: " + shape_str(qv.shape) +
                                ", " + shape_str(kv.shape) + ", " + shape_str(vv.shape));
  const int N = qv.dim(0), T = qv.dim(1), D = qv.dim(2);
  if (heads <= 0 || D % heads != 0)
    throw std::invalid_argument("attention: model dim " + std::to_string(D) +
                                " not divisible by heads " + std::to_string(heads));
  Tensor<S> out({N, T, D});
  attention_fwd(qv.data.data(), kv.data.data(), vv.data.data(), N, T, D, heads, causal,
                out.data.data(), parallel_enabled());
  const bool rg = g->wants_grad(q) || g->wants_grad(k) || g->wants_grad(v);
  const int qi = q.idx, ki = k.idx, vi = v.idx;
  const int oi = static_cast<int>(g->num_nodes());
  auto back = [g, qi, ki, vi, oi, N, T, D, heads, causal]() {
    const auto& dout = g->node(oi).grad;
    // all three gradients are produced in one pass
    auto need = [&](int idx) { return g->node(idx).requires_grad; };
    if (!need(qi) && !need(ki) && !need(vi)) return;
    Tensor<S> dq_tmp, dk_tmp, dv_tmp;
    auto buf = [&](int idx, Tensor<S>& tmp) -> S* {
      if (need(idx)) return g->node(idx).grad.data.data();
      tmp = Tensor<S>::zeros(g->node(idx).value.shape);
      return tmp.data.data();
    };
    S* dq = buf(qi, dq_tmp);
    S* dk = buf(ki, dk_tmp);
    S* dv = buf(vi, dv_tmp);
    attention_bwd(g->node(qi).value.data.data(), g->node(ki).value.data.data(),
                  g->node(vi).value.data.data(), N, T, D, heads, causal,
                  dout.data.data(), dq, dk, dv, parallel_enabled());
  };
  return g->add_node(std::move(out), rg,
                     rg ? std::function<void()>(back) : std::function<void()>(),
                     "attention");
}

template <class S>
Var<S> softmax_lastdim(Var<S> x) {
  Graph<S>* g = x.g;
  const Tensor<S>& xv = g->val(x);
  if (xv.rank() < 1)
    throw std::invalid_argument("softmax: input must have at least one axis");
  const int K = xv.dim(xv.rank() - 1);
  const long long rows = xv.numel() / K;
  Tensor<S> out(xv.shape);
  softmax_lastdim_fwd(xv.data.data(), rows, K, out.data.data(), parallel_enabled());
  const bool rg = g->wants_grad(x);
  const int xi = x.idx;
  const int oi = static_cast<int>(g->num_nodes());
  auto back = [g, xi, oi, rows, K]() {
    softmax_lastdim_bwd(g->node(oi).value.data.data(), rows, K,
                        g->node(oi).grad.data.data(), g->node(xi).grad.data.data(),
                        parallel_enabled());
  };
  return g->add_node(std::move(out), rg,
                     rg ? std::function<void()>(back) : std::function<void()>(),
                     "softmax");
}

template <class S>
Var<S> layernorm_channels(Var<S> x, Var<S> gain, Var<S> bias, double eps) {
  Graph<S>* g = same_graph(x, gain, "layernorm");
  const Tensor<S>& xv = g->val(x);
  const Tensor<S>& gv = g->val(gain);
  const Tensor<S>& bv = g->val(bias);
  require_shape(xv, 4, "layernorm", "input");
  const int B = xv.dim(0), C = xv.dim(1), T = xv.dim(2), F = xv.dim(3);
  if (gv.rank() != 1 || gv.dim(0) != C || bv.rank() != 1 || bv.dim(0) != C)
    throw std::invalid_argument("layernorm: gain/bias must be [" + std::to_string(C) +
                                "], got " + shape_str(gv.shape) + ", " +
                                shape_str(bv.shape));
  Tensor<S> out(xv.shape);
  layernorm_channels_fwd(xv.data.data(), B, C, T, F, gv.data.data(), bv.data.data(),
                         static_cast<S>(eps), out.data.data(), parallel_enabled());
  const bool rg = g->wants_grad(x) || g->wants_grad(gain) || g->wants_grad(bias);
  const int xi = x.idx, gi = gain.idx, bi = bias.idx;
  const int oi = static_cast<int>(g->num_nodes());
  auto back = [g, xi, gi, bi, oi, B, C, T, F, eps]() {
    const auto& dout = g->node(oi).grad;
    S* dx = g->node(xi).requires_grad ? g->node(xi).grad.data.data() : nullptr;
    S* dg = g->node(gi).requires_grad ? g->node(gi).grad.data.data() : nullptr;
    S* db = g->node(bi).requires_grad ? g->node(bi).grad.data.data() : nullptr;
    layernorm_channels_bwd(g->node(xi).value.data.data(), B, C, T, F,
                           g->node(gi).value.data.data(), static_cast<S>(eps),
                           dout.data.data(), dx, dg, db, parallel_enabled());
  };
  return g->add_node(std::move(out), rg,
                     rg ? std::function<void()>(back) : std::function<void()>(),
                     "layernorm");
}

template <class S>
Var<S> concat_channels(const std::vector<Var<S>>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat: no inputs");
  Graph<S>* g = xs[0].g;
  int Ctot = 0;
  const Tensor<S>& first = g->val(xs[0]);
  require_shape(first, 4, "concat", "input");
  const int B = first.dim(0), T = first.dim(2), F = first.dim(3);
  for (const auto& x : xs) {
    const Tensor<S>& t = g->val(x);
    require_shape(t, 4, "concat", "input");
    if (t.dim(0) != B || t.dim(2) != T || t.dim(3) != F)
      throw std::invalid_argument("concat: incompatible shapes " +
                                  shape_str(first.shape) + " vs " + shape_str(t.shape));
    Ctot += t.dim(1);
  }
  Tensor<S> out({B, Ctot, T, F});
  const long long plane = static_cast<long long>(T) * F;
  bool rg = false;
  std::vector<int> idxs;
  std::vector<int> chans;
  for (const auto& x : xs) {
    rg = rg || g->wants_grad(x);
    idxs.push_back(x.idx);
    chans.push_back(g->val(x).dim(1));
  }
  for (int b = 0; b < B; ++b) {
    int coff = 0;
    for (size_t i = 0; i < idxs.size(); ++i) {
      const Tensor<S>& t = g->node(idxs[i]).value;
      std::memcpy(out.data.data() + ((static_cast<long long>(b) * Ctot + coff) * plane),
                  t.data.data() + (static_cast<long long>(b) * chans[i] * plane),
                  sizeof(S) * static_cast<size_t>(chans[i] * plane));
      coff += chans[i];
    }
  }
  const int oi = static_cast<int>(g->num_nodes());
  auto back = [g, idxs, chans, oi, B, Ctot, plane]() {
    const auto& dy = g->node(oi).grad;
    for (int b = 0; b < B; ++b) {
      int coff = 0;
      for (size_t i = 0; i < idxs.size(); ++i) {
        if (g->node(idxs[i]).requires_grad) {
          auto& dxi = g->node(idxs[i]).grad;
          const S* src = dy.data.data() + ((static_cast<long long>(b) * Ctot + coff) * plane);
          S* dst = dxi.data.data() + (static_cast<long long>(b) * chans[i] * plane);
          const long long n = static_cast<long long>(chans[i]) * plane;
          for (long long j = 0; j < n; ++j) dst[j] += src[j];
        }
        coff += chans[i];
      }
    }
  };
  return g->add_node(std::move(out), rg,
                     rg ? std::function<void()>(back) : std::function<void()>(),
                     "concat");
}

namespace {

// out multi-index -> input flat index for a permutation
template <class S>
void permute_copy(const Tensor<S>& in, const std::vector<int>& perm, Tensor<S>& out,
                  bool backward_accum, Tensor<S>* acc) {
  const int r = in.rank();
  std::vector<long long> istrides(r, 1);
  for (int i = r - 2; i >= 0; --i) istrides[i] = istrides[i + 1] * in.dim(i + 1);
  std::vector<long long> ostrides_in(r);  // stride in input space per output axis
  for (int j = 0; j < r; ++j) ostrides_in[j] = istrides[perm[j]];
  Shape oshape(r);
  for (int j = 0; j < r; ++j) oshape[j] = in.dim(perm[j]);
  const long long n = in.numel();
  // A permutation is a bijection, so the accumulate path writes each input
  // slot exactly once and stays deterministic under parallelism.
  const bool par = parallel_enabled() && n > kParMin;
#pragma omp parallel for schedule(static) if (par)
  for (long long o = 0; o < n; ++o) {
    long long tmp = o;
    long long iflat = 0;
    for (int j = r - 1; j >= 0; --j) {
      const long long d = oshape[j];
      iflat += (tmp % d) * ostrides_in[j];
      tmp /= d;
    }
    if (backward_accum)
      acc->data[static_cast<size_t>(iflat)] += out.data[static_cast<size_t>(o)];
    else
      out.data[static_cast<size_t>(o)] = in.data[static_cast<size_t>(iflat)];
  }
}

}  // namespace

template <class S>
Var<S> permute(Var<S> x, const std::vector<int>& perm) {
  Graph<S>* g = x.g;
  const Tensor<S>& xv = g->val(x);
  const int r = xv.rank();
  if (static_cast<int>(perm.size()) != r)
    throw std::invalid_argument("permute: perm size " + std::to_string(perm.size()) +
                                " vs rank " + std::to_string(r));
  std::vector<bool> seen(r, false);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[p]) throw std::invalid_argument("permute: invalid perm");
    seen[p] = true;
  }
  Shape oshape(r);
  for (int j = 0; j < r; ++j) oshape[j] = xv.dim(perm[j]);
  Tensor<S> out(oshape);
  permute_copy(xv, perm, out, false, static_cast<Tensor<S>*>(nullptr));
  const bool rg = g->wants_grad(x);
  const int xi = x.idx;
  const int oi = static_cast<int>(g->num_nodes());
  auto back = [g, xi, oi, perm]() {
    auto& dx = g->node(xi).grad;
    auto& dy = g->node(oi).grad;
    permute_copy(g->node(xi).value, perm, dy, true, &dx);
  };
  return g->add_node(std::move(out), rg,
                     rg ? std::function<void()>(back) : std::function<void()>(),
                     "permute");
}

template <class S>
Var<S> reshape(Var<S> x, Shape shape) {
  Graph<S>* g = x.g;
  const Tensor<S>& xv = g->val(x);
  if (shape_numel(shape) != xv.numel())
    throw std::invalid_argument("reshape: cannot view " + shape_str(xv.shape) + " as " +
                                shape_str(shape));
  Tensor<S> out;
  out.shape = std::move(shape);
  out.data = xv.data;
  const bool rg = g->wants_grad(x);
  const int xi = x.idx;
  const int oi = static_cast<int>(g->num_nodes());
  auto back = [g, xi, oi]() {
    auto& dx = g->node(xi).grad;
    const auto& dy = g->node(oi).grad;
    ew_loop<S>(dx.numel(), [&](long long i) { dx[i] += dy[i]; });
  };
  return g->add_node(std::move(out), rg,
                     rg ? std::function<void()>(back) : std::function<void()>(),
                     "reshape");
}

template <class S>
Var<S> reduce_mean_lastdim(Var<S> x) {
  Graph<S>* g = x.g;
  const Tensor<S>& xv = g->val(x);
  if (xv.rank() < 1)
    throw std::invalid_argument("reduce_mean: input must have at least one axis");
  const int K = xv.dim(xv.rank() - 1);
  const long long rows = xv.numel() / K;
  Shape oshape(xv.shape.begin(), xv.shape.end() - 1);
  Tensor<S> out(oshape);
  const S inv = S(1) / static_cast<S>(K);
#pragma omp parallel for schedule(static) if (parallel_enabled() && rows > kParMin)
  for (long long r = 0; r < rows; ++r) {
    S acc = 0;
    const S* xr = xv.data.data() + r * K;
    for (int i = 0; i < K; ++i) acc += xr[i];
    out.data[static_cast<size_t>(r)] = acc * inv;
  }
  const bool rg = g->wants_grad(x);
  const int xi = x.idx;
  const int oi = static_cast<int>(g->num_nodes());
  auto back = [g, xi, oi, rows, K, inv]() {
    auto& dx = g->node(xi).grad;
    const auto& dy = g->node(oi).grad;
    for (long long r = 0; r < rows; ++r) {
      const S gval = dy.data[static_cast<size_t>(r)] * inv;
      S* dxr = dx.data.data() + r * K;
      for (int i = 0; i < K; ++i) dxr[i] += gval;
    }
  };
  return g->add_node(std::move(out), rg,
                     rg ? std::function<void()>(back) : std::function<void()>(),
                     "reduce_mean");
}

template <class S>
Var<S> broadcast_map(Var<S> v, int t, int f) {
  Graph<S>* g = v.g;
  const Tensor<S>& vv = g->val(v);
  require_shape(vv, 2, "broadcast_map", "input");
  const int B = vv.dim(0), C = vv.dim(1);
  Tensor<S> out({B, C, t, f});
  const long long plane = static_cast<long long>(t) * f;
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const S val = vv.at(b, c);
      S* dst = out.data.data() + (static_cast<long long>(b) * C + c) * plane;
      for (long long i = 0; i < plane; ++i) dst[i] = val;
    }
  const bool rg = g->wants_grad(v);
  const int vi = v.idx;
  const int oi = static_cast<int>(g->num_nodes());
  auto back = [g, vi, oi, B, C, plane]() {
    auto& dv = g->node(vi).grad;
    const auto& dy = g->node(oi).grad;
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const S* src = dy.data.data() + (static_cast<long long>(b) * C + c) * plane;
        S acc = 0;
        for (long long i = 0; i < plane; ++i) acc += src[i];
        dv.data[static_cast<size_t>(b) * C + c] += acc;
      }
  };
  return g->add_node(std::move(out), rg,
                     rg ? std::function<void()>(back) : std::function<void()>(),
                     "broadcast_map");
}

template <class S>
Var<S> sum_all(Var<S> x) {
  Graph<S>* g = x.g;
  const Tensor<S>& xv = g->val(x);
  S acc = 0;
  for (S v : xv.data) acc += v;
  Tensor<S> out = Tensor<S>::scalar(acc);
  const bool rg = g->wants_grad(x);
  const int xi = x.idx;
  const int oi = static_cast<int>(g->num_nodes());
  auto back = [g, xi, oi]() {
    auto& dx = g->node(xi).grad;
    const S gval = g->node(oi).grad.data[0];
    ew_loop<S>(dx.numel(), [&](long long i) { dx[i] += gval; });
  };
  return g->add_node(std::move(out), rg,
                     rg ? std::function<void()>(back) : std::function<void()>(),
                     "sum_all");
}

template <class S>
Var<S> mean_all(Var<S> x) {
  const long long n = x.g->val(x).numel();
  return scale(sum_all(x), 1.0 / static_cast<double>(n));
}

template <class S>
Var<S> cross_entropy(Var<S> logits, const std::vector<int>& labels) {
  Graph<S>* g = logits.g;
  const Tensor<S>& lv = g->val(logits);
  require_shape(lv, 2, "cross_entropy", "logits");
  const int N = lv.dim(0), K = lv.dim(1);
  if (static_cast<int>(labels.size()) != N)
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(N) + " rows");
  for (int lab : labels)
    if (lab < 0 || lab >= K)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(lab) +
                                  " out of range [0," + std::to_string(K) + ")");
  auto probs = std::make_shared<Tensor<S>>(Shape{N, K});
  softmax_lastdim_fwd(lv.data.data(), N, K, probs->data.data(), parallel_enabled());
  double acc = 0;
  for (int n = 0; n < N; ++n) {
    const S p = probs->data[static_cast<size_t>(n) * K + labels[n]];
    acc -= std::log(static_cast<double>(p) + 1e-30);
  }
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(acc / N));
  const bool rg = g->wants_grad(logits);
  const int xi = logits.idx;
  const int oi = static_cast<int>(g->num_nodes());
  auto labels_copy = std::make_shared<std::vector<int>>(labels);
  auto back = [g, xi, oi, probs, labels_copy, N, K]() {
    auto& dx = g->node(xi).grad;
    const S gval = g->node(oi).grad.data[0] / static_cast<S>(N);
    for (int n = 0; n < N; ++n) {
      const S* pr = probs->data.data() + static_cast<size_t>(n) * K;
      S* dr = dx.data.data() + static_cast<size_t>(n) * K;
      const int lab = (*labels_copy)[n];
      for (int k = 0; k < K; ++k) dr[k] += gval * (pr[k] - (k == lab ? S(1) : S(0)));
    }
  };
  return g->add_node(std::move(out), rg,
                     rg ? std::function<void()>(back) : std::function<void()>(),
                     "cross_entropy");
}

template <class S>
Var<S> mse_complex(Var<S> a, Var<S> b) {
  Graph<S>* g = same_graph(a, b, "mse_complex");
  const Tensor<S>& av = g->val(a);
  if (av.shape != g->val(b).shape)
    throw std::invalid_argument("mse_complex: shape mismatch " + shape_str(av.shape) +
                                " vs " + shape_str(g->val(b).shape));
  if (av.numel() % 2 != 0)
    throw std::invalid_argument("mse_complex: odd element count " +
                                shape_str(av.shape));
  Var<S> d = sub(a, b);
  return scale(sum_all(mul(d, d)), 2.0 / static_cast<double>(av.numel()));
}

#define RTSDOA_INST_OPS(S)                                                              \
  template class Graph<S>;                                                              \
  template Var<S> identity<S>(Var<S>);                                                 \
  template Var<S> add<S>(Var<S>, Var<S>);                                              \
  template Var<S> sub<S>(Var<S>, Var<S>);                                              \
  template Var<S> mul<S>(Var<S>, Var<S>);                                              \
  template Var<S> scale<S>(Var<S>, double);                                            \
  template Var<S> tanh<S>(Var<S>);                                                     \
  template Var<S> sigmoid<S>(Var<S>);                                                  \
  template Var<S> conv2d<S>(Var<S>, Var<S>, Var<S>, const Conv2dSpec&);                \
  template Var<S> conv_transpose2d<S>(Var<S>, Var<S>, Var<S>, const Conv2dSpec&, int,  \
                                      int);                                             \
  template Var<S> linear<S>(Var<S>, Var<S>, Var<S>);                                   \
  template Var<S> lstm<S>(Var<S>, Var<S>, Var<S>, Var<S>);                             \
  template Var<S> attention<S>(Var<S>, Var<S>, Var<S>, int, bool);                     \
  template Var<S> softmax_lastdim<S>(Var<S>);                                          \
  template Var<S> layernorm_channels<S>(Var<S>, Var<S>, Var<S>, double);               \
  template Var<S> concat_channels<S>(const std::vector<Var<S>>&);                      \
  template Var<S> permute<S>(Var<S>, const std::vector<int>&);                         \
  template Var<S> reshape<S>(Var<S>, Shape);                                           \
  template Var<S> reduce_mean_lastdim<S>(Var<S>);                                      \
  template Var<S> broadcast_map<S>(Var<S>, int, int);                                  \
  template Var<S> sum_all<S>(Var<S>);                                                  \
  template Var<S> mean_all<S>(Var<S>);                                                 \
  template Var<S> cross_entropy<S>(Var<S>, const std::vector<int>&);                   \
  template Var<S> mse_complex<S>(Var<S>, Var<S>);

RTSDOA_INST_OPS(float)
RTSDOA_INST_OPS(double)
#undef RTSDOA_INST_OPS

}  // namespace rtsdoa::core
