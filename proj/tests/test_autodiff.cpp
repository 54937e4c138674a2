// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "loupe/autodiff.hpp"
#include "loupe/gradcheck.hpp"
#include "oracles.hpp"

using namespace loupe;
using oracle::random_tensor;

namespace {

Tensor<double> ones(Shape s) { return Tensor<double>(s, 1.0); }

// Sum of y * r for y of any shape, using only elementary ops on the graph.
double weighted_sum(const Tensor<double>& y, const Tensor<double>& r) {
  double acc = 0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * r[i];
  return acc;
}

// Records a loss = sum(op(x) * r) with a custom node so the probe itself
// carries no differentiation logic under test.
Var<double> dot_with(Var<double> y, const Tensor<double>& r) {
  Graph<double>& g = *y.graph;
  Tensor<double> out({1, 1, 1, 1}, weighted_sum(y.value(), r));
  return g.record(std::move(out), {y}, [y, r](Graph<double>& gr, const Tensor<double>&, const Tensor<double>& og) {
    if (Tensor<double>* slot = gr.grad_slot(y)) {
      for (std::size_t i = 0; i < slot->size(); ++i) (*slot)[i] += og[0] * r[i];
    }
  });
}

}  // namespace

TEST_CASE("tensor shape and storage") {
  Tensor<float> t({2, 3, 4, 5});
  CHECK(t.size() == 120);
  t(1, 2, 3, 4) = 7.0f;
  CHECK(t[119] == 7.0f);
  CHECK_THROWS_AS(Tensor<float>({1, 1, 2, 2}, std::vector<float>(3)), DimensionError);
  CHECK(t.all_finite());
  t[0] = NAN;
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("conv2d overlap counting") {
  Graph<double> g;
  Var<double> y = conv2d(g.constant(ones({1, 1, 3, 3})), g.constant(ones({1, 1, 3, 3})),
                         g.constant(Tensor<double>({1, 1, 1, 1})), {1});
  CHECK(y.value()(0, 0, 1, 1) == 9.0);
  CHECK(y.value()(0, 0, 0, 0) == 4.0);
  CHECK(y.value()(0, 0, 2, 2) == 4.0);
  CHECK(y.value()(0, 0, 0, 1) == 6.0);
}

TEST_CASE("conv2d 1x1 identity") {
  std::mt19937_64 rng(1);
  Tensor<double> x = random_tensor({2, 1, 4, 5}, rng);
  Graph<double> g;
  Var<double> y = conv2d(g.constant(x), g.constant(ones({1, 1, 1, 1})), g.constant(Tensor<double>({1, 1, 1, 1})));
  CHECK(y.value() == x);
}

TEST_CASE("conv2d matches direct summation") {
  std::mt19937_64 rng(2);
  const Tensor<double> x = random_tensor({2, 3, 5, 5}, rng);
  const Tensor<double> w = random_tensor({4, 3, 3, 3}, rng);
  const Tensor<double> b = random_tensor({4, 1, 1, 1}, rng);
  Graph<double> g;
  Var<double> y = conv2d(g.constant(x), g.constant(w), g.constant(b), {1});
  CHECK(oracle::max_rel_err(y.value(), oracle::conv2d(x, w, b, 1)) < 1e-12);
}

TEST_CASE("conv2d errors") {
  Graph<double> g;
  Var<double> x = g.constant(Tensor<double>({1, 3, 4, 4}));
  Var<double> b = g.constant(Tensor<double>({2, 1, 1, 1}));
  SUBCASE("channel mismatch names the axis") {
    try {
      conv2d(x, g.constant(Tensor<double>({2, 2, 3, 3})), b, {1});
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      CHECK(std::string(e.what()).find("channel") != std::string::npos);
    }
  }
  SUBCASE("non-finite input") {
    Tensor<double> bad({1, 3, 4, 4});
    bad[5] = INFINITY;
    CHECK_THROWS_AS(conv2d(g.constant(bad), g.constant(Tensor<double>({2, 3, 3, 3})), b, {1}), NumericError);
  }
}

TEST_CASE("conv2d is linear in its input") {
  std::mt19937_64 rng(3);
  const Tensor<double> x = random_tensor({1, 2, 4, 4}, rng), y = random_tensor({1, 2, 4, 4}, rng);
  const Tensor<double> w = random_tensor({3, 2, 3, 3}, rng);
  const Tensor<double> zero({3, 1, 1, 1});
  const double a = 0.7, c = -1.3;
  Tensor<double> mix(x.shape());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + c * y[i];
  Graph<double> g;
  const Tensor<double>& lhs = conv2d(g.constant(mix), g.constant(w), g.constant(zero), {1}).value();
  const Tensor<double>& cx = conv2d(g.constant(x), g.constant(w), g.constant(zero), {1}).value();
  const Tensor<double>& cy = conv2d(g.constant(y), g.constant(w), g.constant(zero), {1}).value();
  for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(lhs[i] == doctest::Approx(a * cx[i] + c * cy[i]).epsilon(1e-12));
}

TEST_CASE("pointwise functions") {
  Graph<double> g;
  Var<double> r = relu(g.constant(Tensor<double>({1, 1, 1, 3}, {-2.0, 0.0, 3.0})));
  CHECK(r.value() == Tensor<double>({1, 1, 1, 3}, {0.0, 0.0, 3.0}));
  CHECK(sigmoid(g.constant(Tensor<double>({1, 1, 1, 1}))).value()[0] == 0.5);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> d(0.0, 5.0);
  for (int i = 0; i < 100; ++i) {
    const double x = d(rng);
    CHECK(stable_sigmoid(x) + stable_sigmoid(-x) == doctest::Approx(1.0).epsilon(1e-15));
  }
  for (double x : {-1e4, -800.0, -100.0, 100.0, 800.0, 1e4}) {
    CHECK(stable_sigmoid(x) > 0.0);
    CHECK(stable_sigmoid(x) < 1.0);
    CHECK(stable_sigmoid(static_cast<float>(x)) > 0.0f);
    CHECK(stable_sigmoid(static_cast<float>(x)) < 1.0f);
  }
}

TEST_CASE("sigmoid derivative at zero") {
  Graph<double> g;
  Var<double> x = g.leaf(Tensor<double>({1, 1, 1, 1}));
  g.backward(sigmoid(x));
  CHECK(g.grad(x)->data()[0] == 0.25);
}

TEST_CASE("relu derivative is zero at zero") {
  Graph<double> g;
  Var<double> x = g.leaf(Tensor<double>({1, 1, 1, 3}, {-1.0, 0.0, 2.0}));
  g.backward(dot_with(relu(x), ones({1, 1, 1, 3})));
  CHECK(*g.grad(x) == Tensor<double>({1, 1, 1, 3}, {0.0, 0.0, 1.0}));
}

TEST_CASE("broadcast_mul cases") {
  std::mt19937_64 rng(5);
  const Tensor<double> f = random_tensor({2, 3, 4, 4}, rng);
  Graph<double> g;
  CHECK(broadcast_mul(g.constant(f), g.constant(ones({2, 1, 4, 4}))).value() == f);

  Graph<double> g0;
  Var<double> fv = g0.leaf(f);
  Var<double> out = broadcast_mul(fv, g0.constant(Tensor<double>({2, 1, 4, 4})));
  for (double v : out.value().data()) CHECK(v == 0.0);
  g0.backward(dot_with(out, random_tensor(f.shape(), rng)));
  for (double v : g0.grad(fv)->data()) CHECK(v == 0.0);

  Tensor<double> half = ones({2, 1, 4, 4});
  half(1, 0, 2, 3) = 0.5;
  const Tensor<double>& h = broadcast_mul(g.constant(f), g.constant(half)).value();
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(h(1, c, 2, 3) == f(1, c, 2, 3) * 0.5);
    CHECK(h(1, c, 2, 2) == f(1, c, 2, 2));
  }
  CHECK_THROWS_AS(broadcast_mul(g.constant(f), g.constant(ones({2, 1, 4, 3}))), DimensionError);
}

TEST_CASE("broadcast_mul scales the feature adjoint by the map") {
  std::mt19937_64 rng(6);
  const Tensor<double> f = random_tensor({2, 3, 3, 3}, rng);
  const Tensor<double> m = random_tensor({2, 1, 3, 3}, rng, 0.0, 1.0);
  const Tensor<double> r = random_tensor(f.shape(), rng);
  Graph<double> g;
  Var<double> fv = g.leaf(f);
  g.backward(dot_with(broadcast_mul(fv, g.constant(m)), r));
  const Tensor<double>& gf = *g.grad(fv);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(gf(n, c, i, j) == m(n, 0, i, j) * r(n, c, i, j));
}

TEST_CASE("linear cases") {
  std::mt19937_64 rng(7);
  const Tensor<double> x = random_tensor({2, 3, 1, 1}, rng);
  Graph<double> g;
  Tensor<double> eye({3, 3, 1, 1});
  for (std::size_t i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  CHECK(linear(g.constant(x), g.constant(eye), g.constant(Tensor<double>({3, 1, 1, 1}))).value() == x);

  const Tensor<double> b = random_tensor({4, 1, 1, 1}, rng);
  const Tensor<double>& y = linear(g.constant(x), g.constant(Tensor<double>({4, 3, 1, 1})), g.constant(b)).value();
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t k = 0; k < 4; ++k) CHECK(y[n * 4 + k] == b[k]);

  const Tensor<double> w = random_tensor({4, 3, 1, 1}, rng);
  CHECK(oracle::max_rel_err(linear(g.constant(x), g.constant(w), g.constant(b)).value(), oracle::linear(x, w, b)) <
        1e-12);
  CHECK_THROWS_AS(linear(g.constant(x), g.constant(Tensor<double>({4, 2, 1, 1})), g.constant(b)), DimensionError);
}

TEST_CASE("patch_merge cases") {
  std::mt19937_64 rng(8);
  const std::size_t c = 3;
  Graph<double> g;
  const Tensor<double> big = random_tensor({1, c, 28, 28}, rng);
  Var<double> merged = patch_merge(g.constant(big), g.constant(Tensor<double>({2 * c, 4 * c, 1, 1})),
                                   g.constant(Tensor<double>({2 * c, 1, 1, 1})));
  CHECK(merged.shape() == Shape{1, 2 * c, 14, 14});

  // Selector: output channel o < C copies the top-left sub-pixel of channel o.
  Tensor<double> sel({2 * c, 4 * c, 1, 1});
  for (std::size_t o = 0; o < c; ++o) sel[o * 4 * c + o] = 1.0;
  const Tensor<double> x = random_tensor({2, c, 6, 4}, rng);
  const Tensor<double>& y = patch_merge(g.constant(x), g.constant(sel), g.constant(Tensor<double>({2 * c, 1, 1, 1}))).value();
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < c; ++o)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j) CHECK(y(n, o, i, j) == x(n, o, 2 * i, 2 * j));

  const Tensor<double> w = random_tensor({2 * c, 4 * c, 1, 1}, rng), b = random_tensor({2 * c, 1, 1, 1}, rng);
  CHECK(oracle::max_rel_err(patch_merge(g.constant(x), g.constant(w), g.constant(b)).value(),
                            oracle::patch_merge(x, w, b)) < 1e-12);
  CHECK_THROWS_AS(patch_merge(g.constant(Tensor<double>({1, c, 5, 4})), g.constant(w), g.constant(b)), DimensionError);
}

TEST_CASE("global_avg_pool cases") {
  Graph<double> g;
  CHECK(global_avg_pool(g.constant(Tensor<double>({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0}))).value()[0] == 2.5);
  CHECK(global_avg_pool(g.constant(Tensor<double>({1, 1, 3, 3}, 0.375))).value()[0] == 0.375);
  std::mt19937_64 rng(9);
  const Tensor<double> x = random_tensor({2, 3, 4, 5}, rng);
  const Tensor<double>& y = global_avg_pool(g.constant(x)).value();
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0;
      for (std::size_t i = 0; i < 20; ++i) s += x[(n * 3 + c) * 20 + i];
      CHECK(y[n * 3 + c] == doctest::Approx(s / 20).epsilon(1e-14));
    }
}

TEST_CASE("softmax_cross_entropy cases") {
  Graph<double> g;
  const std::vector<int> label0{0};
  CHECK(softmax_cross_entropy(g.constant(Tensor<double>({1, 200, 1, 1})), label0).value()[0] ==
        doctest::Approx(std::log(200.0)).epsilon(1e-14));
  Tensor<double> peaked({1, 5, 1, 1});
  peaked[2] = 50.0;
  const std::vector<int> label2{2};
  CHECK(softmax_cross_entropy(g.constant(peaked), label2).value()[0] < 1e-9);

  std::mt19937_64 rng(10);
  const Tensor<double> z = random_tensor({4, 6, 1, 1}, rng, -3.0, 3.0);
  const std::vector<int> labels{0, 5, 2, 2};
  CHECK(softmax_cross_entropy(g.constant(z), labels).value()[0] ==
        doctest::Approx(oracle::softmax_cross_entropy(z, labels)).epsilon(1e-12));
  const std::vector<int> bad{0, 6, 1, 1};
  CHECK_THROWS_AS(softmax_cross_entropy(g.constant(z), bad), IndexError);
  const std::vector<int> negative{0, -1, 1, 1};
  CHECK_THROWS_AS(softmax_cross_entropy(g.constant(z), negative), IndexError);
}

TEST_CASE("softmax_cross_entropy adjoint") {
  std::mt19937_64 rng(11);
  const Tensor<double> z = random_tensor({3, 4, 1, 1}, rng);
  const std::vector<int> labels{1, 3, 0};
  Graph<double> g;
  Var<double> zv = g.leaf(z);
  g.backward(softmax_cross_entropy(zv, labels));
  for (std::size_t n = 0; n < 3; ++n) {
    double denom = 0;
    for (std::size_t k = 0; k < 4; ++k) denom += std::exp(z[n * 4 + k]);
    for (std::size_t k = 0; k < 4; ++k) {
      const double expected = (std::exp(z[n * 4 + k]) / denom - (static_cast<int>(k) == labels[n])) / 3.0;
      CHECK(g.grad(zv)->data()[n * 4 + k] == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("l1_reduce cases") {
  Graph<double> g;
  CHECK(l1_reduce(g.constant(ones({1, 1, 28, 28})), L1Mode::kSumPerSample).value()[0] == 784.0);
  CHECK(l1_reduce(g.constant(ones({3, 1, 28, 28})), L1Mode::kMeanPerElement).value()[0] == 1.0);
  CHECK(l1_reduce(g.constant(Tensor<double>({2, 1, 4, 4})), L1Mode::kSumPerSample).value()[0] == 0.0);
  std::mt19937_64 rng(12);
  const Tensor<double> m = random_tensor({3, 1, 5, 4}, rng);
  double s = 0;
  for (double v : m.data()) s += std::abs(v);
  CHECK(l1_reduce(g.constant(m), L1Mode::kSumPerSample).value()[0] == doctest::Approx(s / 3).epsilon(1e-14));
  CHECK(l1_reduce(g.constant(m), L1Mode::kMeanPerElement).value()[0] == doctest::Approx(s / 60).epsilon(1e-14));
}

TEST_CASE("l1_reduce adjoint on a positive map is constant") {
  std::mt19937_64 rng(13);
  Graph<double> g;
  Var<double> m = g.leaf(random_tensor({4, 1, 3, 3}, rng, 0.01, 1.0));
  g.backward(l1_reduce(m, L1Mode::kSumPerSample));
  for (double v : g.grad(m)->data()) CHECK(v == 0.25);
}

TEST_CASE("backward contract") {
  Graph<double> g;
  Var<double> x = g.leaf(ones({1, 1, 2, 2}));
  CHECK_THROWS_AS(g.backward(relu(x)), ContractError);
  Var<double> loss = l1_reduce(x, L1Mode::kSumPerSample);
  g.backward(loss);
  CHECK_THROWS_AS(g.backward(loss), StateError);
}

TEST_CASE("gradients accumulate once per use") {
  Graph<double> g;
  Var<double> x = g.leaf(Tensor<double>({1, 1, 1, 1}, 0.3));
  Var<double> twice = add(x, x);
  g.backward(l1_reduce(twice, L1Mode::kSumPerSample));
  CHECK(g.grad(x)->data()[0] == 2.0);
}

TEST_CASE("parameters receive gradients") {
  Parameter<double> p("w", Tensor<double>({1, 1, 1, 1}, 2.0));
  for (int round = 0; round < 2; ++round) {
    Graph<double> g;
    g.backward(l1_reduce(scale(g.param(p), 3.0), L1Mode::kSumPerSample));
  }
  CHECK(p.grad[0] == 6.0);
  p.zero_grad();
  CHECK(p.grad[0] == 0.0);
}

TEST_CASE("no-grad graphs still evaluate") {
  Graph<double> g(false);
  Var<double> x = g.leaf(ones({1, 1, 2, 2}));
  CHECK(l1_reduce(x, L1Mode::kSumPerSample).value()[0] == 4.0);
}

TEST_CASE("every op matches central differences") {
  std::mt19937_64 rng(14);
  auto check_op = [&](const char* name, std::vector<Tensor<double>> inputs,
                      const std::function<Var<double>(Graph<double>&, std::vector<Var<double>>&)>& op) {
    CAPTURE(name);
    Tensor<double> r;
    auto eval = [&](bool backward, std::vector<Tensor<double>>* grads) {
      Graph<double> g(backward);
      std::vector<Var<double>> vars;
      for (auto& t : inputs) vars.push_back(g.leaf(t));
      Var<double> y = op(g, vars);
      if (r.empty()) r = random_tensor(y.shape(), rng);
      Var<double> loss = dot_with(y, r);
      if (backward) {
        g.backward(loss);
        for (auto& v : vars) grads->push_back(*g.grad(v));
      }
      return loss.value()[0];
    };
    std::vector<Tensor<double>> analytic;
    eval(true, &analytic);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const Tensor<double> numeric = oracle::numeric_grad([&] { return eval(false, nullptr); }, inputs[i]);
      CHECK(oracle::grad_rel_err(analytic[i], numeric) < 1e-5);
    }
  };
  auto away_from_zero = [&](Shape s) {
    Tensor<double> t = random_tensor(s, rng);
    for (double& v : t.data()) v += v < 0 ? -0.05 : 0.05;
    return t;
  };

  check_op("conv3x3", {random_tensor({2, 2, 4, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3, 1, 1, 1}, rng)},
           [](Graph<double>&, auto& v) { return conv2d(v[0], v[1], v[2], {1}); });
  check_op("conv stride", {random_tensor({1, 2, 8, 8}, rng), random_tensor({3, 2, 4, 4}, rng), random_tensor({3, 1, 1, 1}, rng)},
           [](Graph<double>&, auto& v) { return conv2d(v[0], v[1], v[2], {0, 4}); });
  check_op("relu", {away_from_zero({2, 3, 3, 3})}, [](Graph<double>&, auto& v) { return relu(v[0]); });
  check_op("sigmoid", {random_tensor({2, 3, 3, 3}, rng, -4, 4)}, [](Graph<double>&, auto& v) { return sigmoid(v[0]); });
  check_op("broadcast_mul", {random_tensor({2, 3, 3, 4}, rng), random_tensor({2, 1, 3, 4}, rng)},
           [](Graph<double>&, auto& v) { return broadcast_mul(v[0], v[1]); });
  check_op("linear", {random_tensor({3, 2, 2, 2}, rng), random_tensor({4, 8, 1, 1}, rng), random_tensor({4, 1, 1, 1}, rng)},
           [](Graph<double>&, auto& v) { return linear(v[0], v[1], v[2]); });
  check_op("patch_merge", {random_tensor({2, 2, 4, 6}, rng), random_tensor({4, 8, 1, 1}, rng), random_tensor({4, 1, 1, 1}, rng)},
           [](Graph<double>&, auto& v) { return patch_merge(v[0], v[1], v[2]); });
  check_op("global_avg_pool", {random_tensor({2, 3, 3, 2}, rng)},
           [](Graph<double>&, auto& v) { return global_avg_pool(v[0]); });
  const std::vector<int> labels{2, 0, 4};
  check_op("softmax_cross_entropy", {random_tensor({3, 5, 1, 1}, rng, -2, 2)},
           [&](Graph<double>&, auto& v) { return softmax_cross_entropy(v[0], labels); });
  check_op("l1 sum", {random_tensor({2, 1, 3, 3}, rng, 0.05, 1.0)},
           [](Graph<double>&, auto& v) { return l1_reduce(v[0], L1Mode::kSumPerSample); });
  check_op("l1 mean", {away_from_zero({2, 1, 3, 3})},
           [](Graph<double>&, auto& v) { return l1_reduce(v[0], L1Mode::kMeanPerElement); });
  check_op("add_scaled", {random_tensor({1, 2, 2, 2}, rng), random_tensor({1, 2, 2, 2}, rng)},
           [](Graph<double>&, auto& v) { return add_scaled(v[0], v[1], 0.3); });
}

TEST_CASE("replayed graphs give bit-identical gradients") {
  std::mt19937_64 rng(15);
  const Tensor<double> x = random_tensor({2, 3, 5, 5}, rng);
  Parameter<double> w("w", random_tensor({4, 3, 3, 3}, rng));
  Parameter<double> b("b", random_tensor({4, 1, 1, 1}, rng));
  auto run = [&] {
    w.zero_grad();
    Graph<double> g;
    Var<double> y = relu(conv2d(g.constant(x), g.param(w), g.param(b), {1}));
    g.backward(softmax_cross_entropy(global_avg_pool(y), std::vector<int>{1, 3}));
    return w.grad;
  };
  CHECK(run() == run());
}

TEST_CASE("grad_check basics") {
  Parameter<double> theta("theta", Tensor<double>({1, 1, 1, 1}, 3.0));
  auto f = [&] { return theta.value[0] * theta.value[0]; };
  theta.grad[0] = 6.0;
  std::vector<Parameter<double>*> params{&theta};
  GradCheckReport r = grad_check(f, params, {1e-4, 1, 0});
  // Central differences are exact for a quadratic up to rounding in f.
  CHECK(r.max_rel_err < 1e-10);
  CHECK(r.coordinates == 1);

  theta.grad[0] = -6.0;
  r = grad_check(f, params, {1e-4, 1, 0});
  CHECK(r.max_rel_err == doctest::Approx(1.0));
  CHECK(r.worst_param == "theta");

  CHECK_THROWS_AS(grad_check(f, params, {1e-7, 1, 0}), ArgumentError);
  CHECK_THROWS_AS(grad_check(f, params, {0.1, 1, 0}), ArgumentError);
  int calls = 0;
  CHECK_THROWS_AS(grad_check([&] { return static_cast<double>(++calls); }, params, {}), ContractError);
}

TEST_CASE("grad_check samples at least the requested coordinates") {
  std::mt19937_64 rng(16);
  Parameter<double> a("a", random_tensor({10, 10, 1, 1}, rng));
  Parameter<double> b("b", random_tensor({3, 1, 1, 1}, rng));
  auto f = [&] {
    double s = 0;
    for (double v : a.value.data()) s += v * v * v + v;
    for (double v : b.value.data()) s += std::sin(v);
    return s;
  };
  for (std::size_t i = 0; i < a.size(); ++i) a.grad[i] = 3 * a.value[i] * a.value[i] + 1;
  for (std::size_t i = 0; i < b.size(); ++i) b.grad[i] = std::cos(b.value[i]);
  std::vector<Parameter<double>*> params{&a, &b};
  const GradCheckReport r = grad_check(f, params, {1e-4, 50, 1});
  CHECK(r.coordinates >= 50);
  CHECK(r.checked_params == std::vector<std::string>{"a", "b"});
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("relu kink signature") {
  auto signature = [](double shift) {
    Graph<double> g(false);
    g.track_kinks(true);
    relu(g.constant(Tensor<double>({1, 1, 1, 3}, std::vector<double>{-1.0, shift, 2.0})));
    return g.kink_signature();
  };
  CHECK(signature(0.5) == signature(0.25));
  CHECK(signature(0.5) != signature(-0.5));
  CHECK(signature(0.0) == signature(-0.5));  // zero sits on the inactive side
  Graph<double> off(false);
  const std::uint64_t fresh = off.kink_signature();
  relu(off.constant(Tensor<double>({1, 1, 1, 1}, 1.0)));
  CHECK(off.kink_signature() == fresh);
}

TEST_CASE("grad_check skips coordinates that straddle a kink") {
  // theta[0] sits 0.5 eps above a relu kink, theta[1] far from it.
  Parameter<double> theta("theta", Tensor<double>({2, 1, 1, 1}, std::vector<double>{0.5e-4, 1.0}));
  auto f = [&] {
    Graph<double> g(false);
    g.track_kinks(true);
    const Tensor<double>& y = relu(g.constant(theta.value)).value();
    return GradCheckEval{y[0] + y[1] * y[1], g.kink_signature()};
  };
  theta.grad[0] = 1.0;
  theta.grad[1] = 2.0;
  std::vector<Parameter<double>*> params{&theta};

  const GradCheckReport plain = grad_check([&] { return f().value; }, params, {1e-4, 2, 0});
  CHECK(plain.max_rel_err > 0.1);
  CHECK(plain.kinks_skipped == 0);

  const GradCheckReport aware = grad_check(std::function<GradCheckEval()>(f), params, {1e-4, 2, 0});
  CHECK(aware.kinks_skipped == 1);
  CHECK(aware.coordinates == 1);
  CHECK(aware.max_rel_err < 1e-10);
  CHECK(aware.worst_index == 1);
}
