#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rtsdoa/kernels.hpp"
#include "rtsdoa/params.hpp"
#include "rtsdoa/tensor.hpp"

namespace rtsdoa::core {

template <class S>
class Graph;

// Lightweight handle into a graph's node arena. A default-constructed Var is
// "absent" (used for optional biases).
template <class S>
struct Var {
  Graph<S>* g = nullptr;
  int idx = -1;
  bool valid() const { return g != nullptr; }
};

// Reverse-mode autodiff tape. Ops append nodes eagerly during the forward
// pass, so creation order is a topological order; backward() walks it in
// reverse, summing gradients over fan-out. One graph instance is meant to be
// used from one thread; separate instances are independent.
template <class S>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<S> input(Tensor<S> value, std::string name = "input") {
    return add_leaf(std::move(value), std::move(name), false);
  }

  Var<S> constant(Tensor<S> value) { return add_leaf(std::move(value), "const", false); }

  // Binds a named parameter as a gradient-carrying leaf. Repeated binds of the
  // same name return the same node so fan-out accumulates on one gradient.
  Var<S> param(const ParameterStore<S>& store, const std::string& name) {
    auto it = param_cache_.find(name);
    if (it != param_cache_.end()) return Var<S>{this, it->second};
    Var<S> v = add_leaf(store.at(name), name, true);
    param_cache_[name] = v.idx;
    param_nodes_.emplace_back(name, v.idx);
    return v;
  }

  const Tensor<S>& val(Var<S> v) const { return nodes_[v.idx].value; }
  const Tensor<S>& grad(Var<S> v) const { return nodes_[v.idx].grad; }

  // Seeds d(loss)/d(loss) = 1 and accumulates into every gradient-carrying
  // node. loss must be scalar.
  void backward(Var<S> loss);

  std::vector<std::pair<std::string, const Tensor<S>*>> param_grads() const {
    std::vector<std::pair<std::string, const Tensor<S>*>> out;
    out.reserve(param_nodes_.size());
    for (const auto& [name, idx] : param_nodes_)
      out.emplace_back(name, &nodes_[idx].grad);
    return out;
  }

  size_t num_nodes() const { return nodes_.size(); }

  // --- used by the op implementations ---
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    std::function<void()> back;
    bool requires_grad = false;
    std::string name;
  };

  Var<S> add_node(Tensor<S> value, bool requires_grad, std::function<void()> back,
                  const char* name) {
    nodes_.push_back(Node{std::move(value), Tensor<S>{}, std::move(back),
                          requires_grad, name});
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  Node& node(int idx) { return nodes_[idx]; }
  bool wants_grad(Var<S> v) const { return nodes_[v.idx].requires_grad; }

 private:
  Var<S> add_leaf(Tensor<S> value, std::string name, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), Tensor<S>{}, nullptr, requires_grad,
                          std::move(name)});
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> param_cache_;
  std::vector<std::pair<std::string, int>> param_nodes_;
};

// ---- primitive ops ----
// Every op validates shapes and reports the primitive plus both shapes on
// mismatch.

template <class S> Var<S> identity(Var<S> x);
template <class S> Var<S> add(Var<S> a, Var<S> b);
template <class S> Var<S> sub(Var<S> a, Var<S> b);
template <class S> Var<S> mul(Var<S> a, Var<S> b);
template <class S> Var<S> scale(Var<S> a, double s);
template <class S> Var<S> tanh(Var<S> a);
template <class S> Var<S> sigmoid(Var<S> a);

// x (B,Ci,T,F), w (Co,Ci/groups,Kt,Kf), optional bias (Co)
template <class S> Var<S> conv2d(Var<S> x, Var<S> w, Var<S> b, const Conv2dSpec& sp);

// x (B,Ci,T,F), w (Ci,Co,Kt,Kf); output size is explicit, pads act as crops
template <class S>
Var<S> conv_transpose2d(Var<S> x, Var<S> w, Var<S> b, const Conv2dSpec& sp, int t_out,
                        int f_out);

// x (...,Di), w (Do,Di), optional bias (Do)
template <class S> Var<S> linear(Var<S> x, Var<S> w, Var<S> b);

// x (B,T,D), wih (4H,D), whh (4H,H), bias (4H); zero initial state
template <class S> Var<S> lstm(Var<S> x, Var<S> wih, Var<S> whh, Var<S> b);

// q,k,v (N,T,D). Softmax over keys per head; optional causal mask.
template <class S> Var<S> attention(Var<S> q, Var<S> k, Var<S> v, int heads, bool causal);

template <class S> Var<S> softmax_lastdim(Var<S> x);

// x (B,C,T,F) normalized over C with per-channel gain/bias
template <class S>
Var<S> layernorm_channels(Var<S> x, Var<S> gain, Var<S> bias, double eps = 1e-5);

template <class S> Var<S> concat_channels(const std::vector<Var<S>>& xs);
template <class S> Var<S> permute(Var<S> x, const std::vector<int>& perm);
template <class S> Var<S> reshape(Var<S> x, Shape shape);
template <class S> Var<S> reduce_mean_lastdim(Var<S> x);

// v (B,C) tiled to (B,C,T,F); backward sums over the tiles
template <class S> Var<S> broadcast_map(Var<S> v, int t, int f);

template <class S> Var<S> sum_all(Var<S> x);
template <class S> Var<S> mean_all(Var<S> x);

// logits (N,K); mean over rows of -log softmax(row)[label]
template <class S> Var<S> cross_entropy(Var<S> logits, const std::vector<int>& labels);

// Mean over complex points of |a-b|^2 where a,b stack real/imag parts as
// channels: sum of squared differences divided by numel/2.
template <class S> Var<S> mse_complex(Var<S> a, Var<S> b);

// x * sigmoid(x)
template <class S>
inline Var<S> silu(Var<S> x) {
  return mul(x, sigmoid(x));
}

}  // namespace rtsdoa::core
