#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "reference.hpp"
#include "rtsdoa/gradcheck.hpp"
#include "rtsdoa/graph.hpp"
#include "rtsdoa/params.hpp"
#include "rtsdoa/rng.hpp"

using namespace rtsdoa::core;

namespace {

template <class S>
Tensor<S> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<S> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

Tensor<double>& make_param(ParameterStore<double>& ps, const std::string& name,
                           Shape shape, Rng& rng) {
  Tensor<double>& t = ps.create(name, std::move(shape));
  for (auto& v : t.data) v = rng.uniform(-0.8, 0.8);
  return t;
}

}  // namespace

TEST_CASE("identity node returns its input") {
  Graph<float> g;
  Rng rng(1);
  auto x = g.input(random_tensor<float>({3, 4}, rng));
  auto y = identity(x);
  CHECK(g.val(y).data == g.val(x).data);
}

TEST_CASE("tanh of zero tensor is zero") {
  Graph<float> g;
  auto x = g.input(Tensor<float>::zeros({2, 5}));
  auto y = tanh(x);
  for (float v : g.val(y).data) CHECK(v == 0.0f);
}

TEST_CASE("conv2d of ones 4x4 with ones 3x3 kernel, zero pad: center is 9") {
  Graph<double> g;
  auto x = g.input(Tensor<double>::full({1, 1, 4, 4}, 1.0));
  auto w = g.input(Tensor<double>::full({1, 1, 3, 3}, 1.0));
  Conv2dSpec sp;
  sp.pad_t_lo = sp.pad_t_hi = sp.pad_f_lo = sp.pad_f_hi = 1;
  auto y = conv2d(x, w, Var<double>{}, sp);
  // direct-summation oracle over the same geometry
  Tensor<double> oracle = testref::conv2d_naive<double>(
      Tensor<double>::full({1, 1, 4, 4}, 1.0), Tensor<double>::full({1, 1, 3, 3}, 1.0),
      {}, sp);
  REQUIRE(g.val(y).shape == Shape{1, 1, 4, 4});
  for (long long i = 0; i < oracle.numel(); ++i) CHECK(g.val(y)[i] == oracle[i]);
  CHECK(g.val(y).at(0, 0, 1, 1) == 9.0);
  CHECK(g.val(y).at(0, 0, 2, 2) == 9.0);
  CHECK(g.val(y).at(0, 0, 0, 0) == 4.0);
}

TEST_CASE("backward of sum(x) is ones; backward of sum(x*x) is 2x") {
  ParameterStore<double> ps;
  Rng rng(7);
  make_param(ps, "x", {3, 4}, rng);
  Graph<double> g;
  auto x = g.param(ps, "x");
  g.backward(sum_all(x));
  for (double v : g.grad(x).data) CHECK(v == 1.0);

  Graph<double> g2;
  auto x2 = g2.param(ps, "x");
  g2.backward(sum_all(mul(x2, x2)));
  for (size_t i = 0; i < ps.at("x").data.size(); ++i)
    CHECK(g2.grad(x2).data[i] == doctest::Approx(2.0 * ps.at("x").data[i]).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar loss") {
  Graph<double> g;
  auto x = g.input(Tensor<double>::zeros({2, 2}));
  CHECK_THROWS_AS(g.backward(identity(x)), std::invalid_argument);
}

TEST_CASE("gradient accumulates over fan-out") {
  ParameterStore<double> ps;
  Rng rng(3);
  make_param(ps, "x", {4}, rng);
  Graph<double> g;
  auto x = g.param(ps, "x");
  auto y = add(x, x);
  g.backward(sum_all(y));
  for (double v : g.grad(x).data) CHECK(v == 2.0);
}

TEST_CASE("random composite graph matches finite differences") {
  ParameterStore<double> ps;
  Rng rng(11);
  make_param(ps, "w", {5, 6}, rng);
  make_param(ps, "b", {5}, rng);
  make_param(ps, "g", {5}, rng);
  Tensor<double> xin = random_tensor<double>({7, 6}, rng);
  auto simple_fn = [&](Graph<double>& g, ParameterStore<double>& p) {
    auto x = g.input(xin);
    auto h = tanh(linear(x, g.param(p, "w"), g.param(p, "b")));
    auto s = softmax_lastdim(h);
    auto m = mul(s, h);
    return mean_all(mul(m, sigmoid(m)));
  };
  auto report = grad_check(ps, simple_fn);
  CHECK(report.pass);
  CHECK(report.worst < 1e-4);
}

TEST_CASE("grad check: gated conv block") {
  ParameterStore<double> ps;
  Rng rng(21);
  make_param(ps, "w1", {3, 4, 2, 3}, rng);
  make_param(ps, "b1", {3}, rng);
  make_param(ps, "w2", {3, 4, 2, 3}, rng);
  make_param(ps, "b2", {3}, rng);
  Tensor<double> xin = random_tensor<double>({2, 4, 8, 16}, rng);
  Conv2dSpec sp;
  sp.stride_f = 2;
  sp.pad_t_lo = 1;
  sp.pad_f_lo = sp.pad_f_hi = 1;
  auto fn = [&](Graph<double>& g, ParameterStore<double>& p) {
    auto x = g.input(xin);
    auto a = conv2d(x, g.param(p, "w1"), g.param(p, "b1"), sp);
    auto b = conv2d(x, g.param(p, "w2"), g.param(p, "b2"), sp);
    return mean_all(mul(tanh(a), sigmoid(b)));
  };
  auto report = grad_check(ps, fn);
  INFO("worst rel err ", report.worst);
  CHECK(report.pass);
}

TEST_CASE("grad check: recurrent cell unrolled 5 steps") {
  ParameterStore<double> ps;
  Rng rng(22);
  const int H = 4, D = 3;
  make_param(ps, "wih", {4 * H, D}, rng);
  make_param(ps, "whh", {4 * H, H}, rng);
  make_param(ps, "b", {4 * H}, rng);
  Tensor<double> xin = random_tensor<double>({2, 5, D}, rng);
  auto fn = [&](Graph<double>& g, ParameterStore<double>& p) {
    auto y = lstm(g.input(xin), g.param(p, "wih"), g.param(p, "whh"), g.param(p, "b"));
    return mean_all(mul(y, y));
  };
  auto report = grad_check(ps, fn);
  INFO("worst rel err ", report.worst);
  CHECK(report.pass);
}

TEST_CASE("grad check: attention block, 2 heads, 8 frames") {
  ParameterStore<double> ps;
  Rng rng(23);
  const int D = 6;
  make_param(ps, "wq", {D, D}, rng);
  make_param(ps, "wk", {D, D}, rng);
  make_param(ps, "wv", {D, D}, rng);
  Tensor<double> xin = random_tensor<double>({3, 8, D}, rng);
  for (bool causal : {false, true}) {
    auto fn = [&](Graph<double>& g, ParameterStore<double>& p) {
      auto x = g.input(xin);
      auto q = linear(x, g.param(p, "wq"), Var<double>{});
      auto k = linear(x, g.param(p, "wk"), Var<double>{});
      auto v = linear(x, g.param(p, "wv"), Var<double>{});
      auto o = attention(q, k, v, 2, causal);
      return mean_all(mul(o, o));
    };
    auto report = grad_check(ps, fn);
    INFO("causal=", causal, " worst=", report.worst);
    CHECK(report.pass);
  }
}

TEST_CASE("grad check: transposed conv, layernorm, concat, broadcast, reductions") {
  ParameterStore<double> ps;
  Rng rng(24);
  make_param(ps, "wt", {3, 2, 2, 3}, rng);
  make_param(ps, "bt", {2}, rng);
  make_param(ps, "ln_g", {2}, rng);
  make_param(ps, "ln_b", {2}, rng);
  make_param(ps, "v", {1, 2}, rng);
  Tensor<double> xin = random_tensor<double>({1, 3, 4, 5}, rng);
  Conv2dSpec sp;
  sp.stride_f = 2;
  sp.pad_t_lo = 1;
  auto fn = [&](Graph<double>& g, ParameterStore<double>& p) {
    auto x = g.input(xin);
    auto y = conv_transpose2d(x, g.param(p, "wt"), g.param(p, "bt"), sp, 4, 11);
    auto n = layernorm_channels(y, g.param(p, "ln_g"), g.param(p, "ln_b"));
    auto bmap = broadcast_map(g.param(p, "v"), 4, 11);
    auto c = concat_channels<double>({n, bmap});
    auto pooled = reduce_mean_lastdim(permute(c, {0, 2, 3, 1}));
    return mean_all(mul(pooled, pooled));
  };
  auto report = grad_check(ps, fn);
  INFO("worst rel err ", report.worst);
  CHECK(report.pass);
}

TEST_CASE("grad check: cross entropy") {
  ParameterStore<double> ps;
  Rng rng(25);
  make_param(ps, "logits", {6, 5}, rng);
  std::vector<int> labels = {0, 3, 4, 1, 1, 2};
  auto fn = [&](Graph<double>& g, ParameterStore<double>& p) {
    return cross_entropy(g.param(p, "logits"), labels);
  };
  auto report = grad_check(ps, fn);
  CHECK(report.pass);
}

TEST_CASE("grouped conv1d with groups == channels equals per-channel convolution") {
  Rng rng(31);
  const int C = 5, F = 17, K = 5;
  Tensor<double> x = random_tensor<double>({1, C, 1, F}, rng);
  Tensor<double> w = random_tensor<double>({C, 1, 1, K}, rng);
  Tensor<double> b = random_tensor<double>({C}, rng);
  Conv2dSpec sp;
  sp.groups = C;
  sp.pad_f_lo = sp.pad_f_hi = 2;
  Graph<double> g;
  auto y = conv2d(g.input(x), g.input(w), g.input(b), sp);
  for (int c = 0; c < C; ++c) {
    std::vector<double> xc(F), kc(K);
    for (int f = 0; f < F; ++f) xc[f] = x.at(0, c, 0, f);
    for (int k = 0; k < K; ++k) kc[k] = w.at(c, 0, 0, k);
    auto oracle = testref::conv1d_channel_naive<double>(xc, kc, b.at(c), 1, 2, 2);
    REQUIRE(static_cast<int>(oracle.size()) == g.val(y).dim(3));
    for (size_t f = 0; f < oracle.size(); ++f)
      CHECK(g.val(y).at(0, c, 0, static_cast<int>(f)) ==
            doctest::Approx(oracle[f]).epsilon(1e-14));
  }
}

TEST_CASE("attention forward matches naive oracle") {
  Rng rng(32);
  Tensor<double> q = random_tensor<double>({2, 7, 6}, rng);
  Tensor<double> k = random_tensor<double>({2, 7, 6}, rng);
  Tensor<double> v = random_tensor<double>({2, 7, 6}, rng);
  for (bool causal : {false, true}) {
    Graph<double> g;
    auto o = attention(g.input(q), g.input(k), g.input(v), 2, causal);
    Tensor<double> oracle = testref::attention_naive(q, k, v, 2, causal);
    for (long long i = 0; i < oracle.numel(); ++i)
      CHECK(g.val(o)[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
  }
}

TEST_CASE("attention with one frame is an identity over values") {
  Rng rng(33);
  Tensor<double> q = random_tensor<double>({3, 1, 4}, rng);
  Tensor<double> k = random_tensor<double>({3, 1, 4}, rng);
  Tensor<double> v = random_tensor<double>({3, 1, 4}, rng);
  Graph<double> g;
  auto o = attention(g.input(q), g.input(k), g.input(v), 2, false);
  for (long long i = 0; i < v.numel(); ++i)
    CHECK(g.val(o)[i] == doctest::Approx(v[i]).epsilon(1e-14));
}

TEST_CASE("parallel and serial kernels agree bit-for-bit") {
  Rng rng(41);
  Tensor<float> x = random_tensor<float>({2, 6, 20, 33}, rng);
  Tensor<float> w = random_tensor<float>({8, 6, 2, 3}, rng);
  Tensor<float> b = random_tensor<float>({8}, rng);
  Conv2dSpec sp;
  sp.stride_f = 2;
  sp.pad_t_lo = 1;
  sp.pad_f_lo = sp.pad_f_hi = 1;

  auto run = [&](bool par) {
    set_parallel(par);
    Graph<float> g;
    ParameterStore<float> ps;
    ps.create("w", {8, 6, 2, 3}).data = w.data;
    ps.create("b", {8}).data = b.data;
    auto y = conv2d(g.input(x), g.param(ps, "w"), g.param(ps, "b"), sp);
    auto q = reshape(y, {2, 8, static_cast<int>(g.val(y).numel() / (2 * 8 * 17)), 17});
    auto o = attention(reshape(q, {16, g.val(y).dim(2), 17}),
                       reshape(q, {16, g.val(y).dim(2), 17}),
                       reshape(q, {16, g.val(y).dim(2), 17}), 1, false);
    auto loss = mean_all(mul(o, o));
    g.backward(loss);
    std::pair<std::vector<float>, std::vector<float>> out{g.val(loss).data,
                                                          g.grad(g.param(ps, "w")).data};
    return out;
  };
  auto serial = run(false);
  auto parallel = run(true);
  set_parallel(true);
  CHECK(serial.first == parallel.first);
  CHECK(serial.second == parallel.second);
}

TEST_CASE("forward is deterministic within one build") {
  Rng rng(42);
  Tensor<float> x = random_tensor<float>({1, 4, 11, 19}, rng);
  Tensor<float> w = random_tensor<float>({4, 4, 2, 3}, rng);
  auto run = [&]() {
    Graph<float> g;
    Conv2dSpec sp;
    sp.pad_t_lo = 1;
    sp.pad_f_lo = sp.pad_f_hi = 1;
    auto y = tanh(conv2d(g.input(x), g.input(w), Var<float>{}, sp));
    return g.val(y).data;
  };
  CHECK(run() == run());
}

TEST_CASE("primitives keep finite inputs finite") {
  Rng rng(43);
  Tensor<float> x = random_tensor<float>({1, 3, 9, 15}, rng, -3.0, 3.0);
  Graph<float> g;
  auto xv = g.input(x);
  auto w = g.input(random_tensor<float>({6, 3, 2, 3}, rng));
  Conv2dSpec sp;
  sp.pad_t_lo = 1;
  sp.pad_f_lo = sp.pad_f_hi = 1;
  auto y = conv2d(xv, w, Var<float>{}, sp);
  CHECK(all_finite(g.val(y)));
  CHECK(all_finite(g.val(sigmoid(y))));
  CHECK(all_finite(g.val(tanh(y))));
  CHECK(all_finite(g.val(softmax_lastdim(y))));
}

TEST_CASE("shape errors name the primitive and shapes") {
  Graph<float> g;
  auto a = g.input(Tensor<float>::zeros({2, 3}));
  auto b = g.input(Tensor<float>::zeros({3, 2}));
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("add"), std::invalid_argument);

  auto x = g.input(Tensor<float>::zeros({1, 3, 4, 5}));
  auto w = g.input(Tensor<float>::zeros({2, 4, 2, 3}));
  try {
    conv2d(x, w, Var<float>{}, Conv2dSpec{});
    FAIL("expected exception");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("conv2d") != std::string::npos);
    CHECK(msg.find("[1,3,4,5]") != std::string::npos);
    CHECK(msg.find("[2,4,2,3]") != std::string::npos);
  }
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  ParameterStore<float> ps;
  Rng rng(44);
  ps.create("a.w", {3, 4}).data = random_tensor<float>({3, 4}, rng).data;
  ps.create("a.b", {4}).data = random_tensor<float>({4}, rng).data;
  const std::string path = "test_core_ckpt.bin";
  save_checkpoint(path, ps);
  ParameterStore<float> loaded;
  load_checkpoint(path, loaded);
  REQUIRE(loaded.size() == ps.size());
  CHECK(loaded.at("a.w").data == ps.at("a.w").data);
  CHECK(loaded.at("a.b").data == ps.at("a.b").data);
  std::remove(path.c_str());
}
