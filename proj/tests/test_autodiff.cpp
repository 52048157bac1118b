#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "dlpr/graph.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dlpr;
using testutil::dot;
using testutil::random_tensor;

namespace {
constexpr double kPi = 3.14159265358979323846;

template <typename T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}
}  // namespace

TEST_CASE("conv2d identity kernel") {
  std::mt19937 rng(1);
  Graph<double> g;
  auto x = random_tensor<double>({2, 3, 5, 5}, rng);
  auto k = make_tensor<double>({3, 3, 1, 1});
  for (int o = 0; o < 3; ++o) k->val[static_cast<size_t>(o) * 3 + o] = 1.0;
  auto b = make_tensor<double>({3});
  auto y = conv2d(g, x, k, b, {1, 1, 0});
  CHECK(y->shape == Shape{2, 3, 5, 5});
  CHECK(max_abs_diff(y->val, x->val) == doctest::Approx(0.0));
}

TEST_CASE("conv2d all-ones 3x3 on constant input") {
  Graph<double> g;
  auto x = make_tensor<double>({1, 1, 6, 6}, 2.5);
  auto k = make_tensor<double>({1, 1, 3, 3}, 1.0);
  auto y = conv2d(g, x, k, nullptr, {1, 1, 1});
  // interior pixels see the full 9-tap window
  for (int i = 1; i < 5; ++i)
    for (int j = 1; j < 5; ++j)
      CHECK(y->at4(0, 0, i, j) == doctest::Approx(9 * 2.5));
  CHECK(y->at4(0, 0, 0, 0) == doctest::Approx(4 * 2.5));
}

TEST_CASE("conv2d matches nested-loop oracle incl. dilation") {
  std::mt19937 rng(7);
  for (auto [st, dil, pad, kh] : {std::tuple{1, 2, 2, 3},
                                  std::tuple{2, 1, 1, 3},
                                  std::tuple{1, 1, 0, 1},
                                  std::tuple{2, 1, 1, 4},
                                  std::tuple{3, 2, 3, 3}}) {
    Graph<double> g;
    auto x = random_tensor<double>({1, 1, 8, 8}, rng);
    auto k = random_tensor<double>({2, 1, kh, kh}, rng);
    auto b = random_tensor<double>({2}, rng);
    auto y = conv2d(g, x, k, b, {st, dil, pad});
    auto ref = oracle::conv2d_ref(*x, *k, b->val, st, dil, pad);
    REQUIRE(y->shape == ref.shape);
    CHECK(max_abs_diff(y->val, ref.val) < 1e-12);
  }
  // multi-channel batch
  Graph<double> g;
  auto x = random_tensor<double>({3, 4, 9, 7}, rng);
  auto k = random_tensor<double>({5, 4, 3, 3}, rng);
  auto b = random_tensor<double>({5}, rng);
  auto y = conv2d(g, x, k, b, {2, 1, 1});
  auto ref = oracle::conv2d_ref(*x, *k, b->val, 2, 1, 1);
  CHECK(max_abs_diff(y->val, ref.val) < 1e-12);
}

TEST_CASE("conv2d rejects shape mismatches") {
  Graph<double> g;
  auto x = make_tensor<double>({1, 2, 4, 4});
  auto k = make_tensor<double>({1, 3, 3, 3});
  CHECK_THROWS_AS(conv2d(g, x, k, nullptr, {1, 1, 1}), UsageError);
  auto k2 = make_tensor<double>({1, 2, 3, 3});
  auto bad_bias = make_tensor<double>({2});
  CHECK_THROWS_AS(conv2d(g, x, k2, bad_bias, {1, 1, 1}), UsageError);
  CHECK_THROWS_AS(conv2d(g, x, k2, nullptr, {0, 1, 1}), UsageError);
}

TEST_CASE("conv2d_transpose identity and shape doubling") {
  std::mt19937 rng(3);
  Graph<double> g;
  auto x = random_tensor<double>({1, 2, 5, 5}, rng);
  auto k = make_tensor<double>({2, 2, 1, 1});
  k->val[0] = 1.0;
  k->val[3] = 1.0;  // unit 1x1 kernel per channel
  auto y = conv2d_transpose(g, x, k, nullptr, 1, 0);
  CHECK(y->shape == x->shape);
  CHECK(max_abs_diff(y->val, x->val) < 1e-15);

  auto k4 = random_tensor<double>({2, 3, 4, 4}, rng);
  auto y2 = conv2d_transpose(g, x, k4, nullptr, 2, 1);
  CHECK(y2->shape == Shape{1, 3, 10, 10});

  auto ref = oracle::conv2d_transpose_ref(*x, *k4, std::vector<double>{}, 2, 1);
  CHECK(max_abs_diff(y2->val, ref.val) < 1e-12);
}

TEST_CASE("conv / conv_transpose adjoint identity") {
  // <conv(x), y> == <x, conv_T(y)> with a shared kernel, on geometries where
  // the strided output tiling is exact.
  std::mt19937 rng(11);
  for (auto [H, kh, st, pad] : {std::tuple{9, 3, 2, 1},
                                std::tuple{8, 4, 2, 1},
                                std::tuple{7, 3, 1, 1},
                                std::tuple{6, 2, 2, 0}}) {
    Graph<double> g;
    auto x = random_tensor<double>({2, 3, H, H}, rng);
    auto k = random_tensor<double>({4, 3, kh, kh}, rng);
    auto cx = conv2d(g, x, k, nullptr, {st, 1, pad});
    auto y = random_tensor<double>({2, 4, cx->shape[2], cx->shape[3]}, rng);
    // conv kernel (O,C,kh,kw) is consumed by the transpose as (Cin=O, Cout=C).
    auto ty = conv2d_transpose(g, y, k, nullptr, st, pad);
    REQUIRE(ty->shape == x->shape);
    const double lhs = dot(*cx, *y);
    const double rhs = dot(*x, *ty);
    CHECK(std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)) < 1e-12);
  }
}

TEST_CASE("relu values and gradient") {
  Graph<double> g;
  auto x = make_tensor<double>({1, 1, 1, 4}, std::vector<double>{-1.0, 2.5, 0.0, -3.0});
  x->requires_grad = true;
  auto y = relu(g, x);
  CHECK(y->val == std::vector<double>{0.0, 2.5, 0.0, 0.0});
  auto target = make_tensor<double>({1, 1, 1, 4}, std::vector<double>{-5, -5, -5, -5});
  auto loss = l1_loss(g, y, target);
  g.backward(loss);
  // dloss/dy = 1/4 everywhere (y > target); relu passes it only where x > 0
  CHECK(x->grad[0] == 0.0);
  CHECK(x->grad[1] == doctest::Approx(0.25));
  CHECK(x->grad[2] == 0.0);
  CHECK(x->grad[3] == 0.0);
}

TEST_CASE("residual_add") {
  std::mt19937 rng(5);
  Graph<double> g;
  auto a = random_tensor<double>({1, 2, 3, 3}, rng, -1.0, 1.0, true);
  auto z = make_tensor<double>({1, 2, 3, 3});
  auto s = residual_add(g, a, z);
  CHECK(max_abs_diff(s->val, a->val) == 0.0);
  auto d = residual_add(g, a, a);
  for (size_t i = 0; i < a->val.size(); ++i)
    CHECK(d->val[i] == doctest::Approx(2 * a->val[i]));
  auto bad = make_tensor<double>({1, 2, 4, 4});
  CHECK_THROWS_AS(residual_add(g, a, bad), UsageError);
}

TEST_CASE("l1_loss examples") {
  Graph<double> g;
  auto y = make_tensor<double>({1, 1, 1, 2}, std::vector<double>{0.0, -1.0});
  auto t = make_tensor<double>({1, 1, 1, 2}, std::vector<double>{-0.5, -0.5});
  auto l = l1_loss(g, y, t);
  CHECK(l->val[0] == doctest::Approx(0.5));  // (0.5 + 0.5)/2

  auto same = l1_loss(g, y, y);
  CHECK(same->val[0] == 0.0);

  auto yc = make_tensor<double>({1, 1, 1, 2}, std::vector<double>{-0.5 + 0.3, -0.5 + 0.3});
  auto lc = l1_loss(g, yc, t);
  CHECK(lc->val[0] == doctest::Approx(0.3));

  auto bad = make_tensor<double>({1, 1, 2, 2});
  CHECK_THROWS_AS(l1_loss(g, y, bad), UsageError);
}

TEST_CASE("backward: l1 subgradient scale and accumulation") {
  std::mt19937 rng(9);
  Graph<double> g;
  auto y = random_tensor<double>({2, 1, 3, 4}, rng, 1.0, 2.0, true);
  auto t = make_tensor<double>({2, 1, 3, 4}, 0.0);  // y - t > 0 everywhere
  auto l = l1_loss(g, y, t);
  g.backward(l);
  const double expect = 1.0 / (2 * 3 * 4);
  for (double v : y->grad) CHECK(v == doctest::Approx(expect));
  // repeated backward without reset accumulates
  g.backward(l);
  for (double v : y->grad) CHECK(v == doctest::Approx(2 * expect));
  // with reset: identical to the first pass
  y->zero_grad();
  g.backward(l);
  for (double v : y->grad) CHECK(v == doctest::Approx(expect));
}

TEST_CASE("backward rejects detached tensors and non-scalars") {
  Graph<double> g;
  auto x = make_tensor<double>({1}, 1.0);
  CHECK_THROWS_AS(g.backward(x), UsageError);
  std::mt19937 rng(2);
  auto a = random_tensor<double>({1, 1, 2, 2}, rng, -1.0, 1.0, true);
  auto y = relu(g, a);
  CHECK_THROWS_AS(g.backward(y), UsageError);
}

TEST_CASE("constant graph yields zero parameter grads") {
  std::mt19937 rng(4);
  Graph<double> g;
  auto p = random_tensor<double>({1, 1, 2, 2}, rng, -1.0, 1.0, true);
  auto t = make_tensor<double>({1, 1, 2, 2}, 0.5);
  auto l = l1_loss(g, t, t);  // does not involve p
  p->ensure_grad();
  g.backward(l);
  for (double v : p->grad) CHECK(v == 0.0);
}

TEST_CASE("concat_channels forward/backward") {
  std::mt19937 rng(6);
  Graph<double> g;
  auto a = random_tensor<double>({1, 2, 2, 2}, rng, 0.5, 1.5, true);
  auto b = random_tensor<double>({1, 3, 2, 2}, rng, 0.5, 1.5, true);
  auto c = concat_channels(g, a, b);
  CHECK(c->shape == Shape{1, 5, 2, 2});
  CHECK(c->val[0] == a->val[0]);
  CHECK(c->val[2 * 4] == b->val[0]);
  auto t = make_tensor<double>({1, 5, 2, 2}, 0.0);
  auto l = l1_loss(g, c, t);
  g.backward(l);
  for (double v : a->grad) CHECK(v == doctest::Approx(1.0 / 20));
  for (double v : b->grad) CHECK(v == doctest::Approx(1.0 / 20));
}

TEST_CASE("scaled_sigmoid head maps into (-pi, 0)") {
  Graph<double> g;
  auto x = make_tensor<double>({1, 1, 1, 3}, std::vector<double>{0.0, 50.0, -50.0});
  auto y = scaled_sigmoid(g, x, -kPi);
  CHECK(y->val[0] == doctest::Approx(-kPi / 2));
  CHECK(y->val[1] == doctest::Approx(-kPi));
  CHECK(y->val[2] == doctest::Approx(0.0));
  for (double v : y->val) {
    CHECK(v <= 0.0);
    CHECK(v >= -kPi);
  }
}

TEST_CASE("grad_check: linear graph is exact") {
  std::mt19937 rng(21);
  auto k = random_tensor<double>({2, 3, 1, 1}, rng, -1.0, 1.0, true);
  auto b = random_tensor<double>({2}, rng, -1.0, 1.0, true);
  auto x = random_tensor<double>({1, 3, 4, 4}, rng);
  auto t = make_tensor<double>({1, 2, 4, 4}, -10.0);  // keeps |y - t| off zero
  auto build = [&](bool with_grad) {
    Graph<double> g;
    auto y = conv2d(g, x, k, b, {1, 1, 0});
    auto l = l1_loss(g, y, t);
    if (with_grad) g.backward(l);
    return l->val[0];
  };
  const double err = grad_check(build, {k, b}, 1e-5);
  CHECK(err < 1e-10);
}

TEST_CASE("grad_check: conv + relu + l1 composite") {
  std::mt19937 rng(22);
  auto k = random_tensor<double>({3, 2, 3, 3}, rng, -0.7, 0.7, true);
  auto b = random_tensor<double>({3}, rng, 0.2, 0.4, true);
  auto x = random_tensor<double>({2, 2, 6, 6}, rng, 0.1, 1.0);
  auto t = make_tensor<double>({2, 3, 6, 6}, -3.0);
  auto build = [&](bool with_grad) {
    Graph<double> g;
    auto y = relu(g, conv2d(g, x, k, b, {1, 1, 1}));
    auto l = l1_loss(g, y, t);
    if (with_grad) g.backward(l);
    return l->val[0];
  };
  const double err = grad_check(build, {k, b}, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("grad_check: transpose conv and deeper composite") {
  std::mt19937 rng(23);
  auto k1 = random_tensor<double>({4, 2, 3, 3}, rng, -0.5, 0.5, true);
  auto b1 = random_tensor<double>({4}, rng, 0.1, 0.3, true);
  auto k2 = random_tensor<double>({4, 2, 4, 4}, rng, -0.5, 0.5, true);
  auto b2 = random_tensor<double>({2}, rng, 0.1, 0.3, true);
  auto x = random_tensor<double>({1, 2, 8, 8}, rng, 0.1, 1.0);
  auto t = make_tensor<double>({1, 2, 8, 8}, -4.0);
  auto build = [&](bool with_grad) {
    Graph<double> g;
    auto h = relu(g, conv2d(g, x, k1, b1, {2, 1, 1}));
    auto y = conv2d_transpose(g, h, k2, b2, 2, 1);
    auto l = l1_loss(g, y, t);
    if (with_grad) g.backward(l);
    return l->val[0];
  };
  const double err = grad_check(build, {k1, b1, k2, b2}, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("grad_check rejects epsilon = 0") {
  auto k = make_tensor<double>({1, 1, 1, 1}, 1.0);
  k->requires_grad = true;
  auto build = [&](bool) { return 0.0; };
  CHECK_THROWS_AS(grad_check(build, {k}, 0.0), UsageError);
}

TEST_CASE("forward determinism") {
  std::mt19937 rng_a(42), rng_b(42);
  Graph<float> ga, gb;
  auto xa = random_tensor<float>({2, 3, 16, 16}, rng_a);
  auto ka = random_tensor<float>({4, 3, 3, 3}, rng_a);
  auto xb = random_tensor<float>({2, 3, 16, 16}, rng_b);
  auto kb = random_tensor<float>({4, 3, 3, 3}, rng_b);
  auto ya = conv2d(ga, xa, ka, nullptr, {2, 1, 1});
  auto yb = conv2d(gb, xb, kb, nullptr, {2, 1, 1});
  CHECK(ya->val == yb->val);  // bit-identical
}
