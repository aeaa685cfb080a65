// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference gradient checks for every differentiable tensor op, plus
// graph-mechanics tests (detach, NoGrad, requires_grad pruning, accumulation).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "saggan/autodiff.hpp"
#include "test_util.hpp"

using namespace saggan;
using testutil::check_grads;
using testutil::rand_t;
using testutil::rand_u;

namespace {
Rng rng(20240901);
}

TEST_CASE("elementwise arithmetic gradients") {
  auto a = make_leaf(rand_t<double>(Shape{2, 3}, rng), true);
  auto b = make_leaf(rand_t<double>(Shape{2, 3}, rng), true);
  CHECK(check_grads({a, b}, [&] {
          return mean_all(mul(add(a, b), sub(a, mul_scalar(b, 0.7))));
        }) == 0);
  CHECK(check_grads({a}, [&] {
          return mean_all(one_minus(add_scalar(a, 0.25)));
        }) == 0);
}

TEST_CASE("activation gradients") {
  auto a = make_leaf(rand_t<double>(Shape{3, 4}, rng), true);
  CHECK(check_grads({a}, [&] { return mean_all(relu(a)); }) == 0);
  CHECK(check_grads({a}, [&] { return mean_all(leaky_relu(a, 0.2)); }) == 0);
  CHECK(check_grads({a}, [&] { return mean_all(sigmoid(a)); }) == 0);
  CHECK(check_grads({a}, [&] { return mean_all(tanh_act(a)); }) == 0);
  CHECK(check_grads({a}, [&] { return mean_all(vabs(a)); }) == 0);
  CHECK(check_grads({a}, [&] { return mean_all(clamp(a, -0.5, 0.5)); }) == 0);
  auto pos = make_leaf(rand_u<double>(Shape{3, 4}, rng, 0.2, 2.0), true);
  CHECK(check_grads({pos}, [&] { return mean_all(vlog(pos)); }) == 0);
}

TEST_CASE("shape ops gradients") {
  auto a = make_leaf(rand_t<double>(Shape{2, 2, 3, 3}, rng), true);
  auto b = make_leaf(rand_t<double>(Shape{2, 3, 3, 3}, rng), true);
  CHECK(check_grads({a, b}, [&] {
          return mean_all(sigmoid(concat_ch(a, b)));
        }) == 0);
  CHECK(check_grads({a}, [&] {
          return mean_all(mul(reshape(a, Shape{4, 9}), reshape(a, Shape{4, 9})));
        }) == 0);
}

TEST_CASE("spatial reductions and channel scaling gradients") {
  auto x = make_leaf(rand_t<double>(Shape{2, 3, 4, 4}, rng), true);
  auto s = make_leaf(rand_u<double>(Shape{2, 3}, rng, 0.1, 0.9), true);
  CHECK(check_grads({x}, [&] { return mean_all(spatial_mean(x)); }) == 0);
  CHECK(check_grads({x}, [&] { return mean_all(spatial_max(x)); }) == 0);
  CHECK(check_grads({x, s}, [&] { return mean_all(mul_channel(x, s)); }) == 0);
}

TEST_CASE("linear layer gradients") {
  auto x = make_leaf(rand_t<double>(Shape{4, 5}, rng), true);
  auto w = make_leaf(rand_t<double>(Shape{3, 5}, rng), true);
  auto b = make_leaf(rand_t<double>(Shape{3}, rng), true);
  CHECK(check_grads({x, w, b}, [&] {
          return mean_all(sigmoid(linear(x, w, b)));
        }) == 0);
}

TEST_CASE("conv2d gradients") {
  auto x = make_leaf(rand_t<double>(Shape{2, 2, 6, 6}, rng), true);
  auto w = make_leaf(rand_t<double>(Shape{3, 2, 3, 3}, rng, 0.3), true);
  auto b = make_leaf(rand_t<double>(Shape{3}, rng), true);
  CHECK(check_grads({x, w, b}, [&] {
          auto y = conv2d(x, w, b, 2, 1);
          return mean_all(mul(y, y));
        }) == 0);
  auto w2 = make_leaf(rand_t<double>(Shape{2, 2, 5, 5}, rng, 0.2), true);
  auto b2 = make_leaf(rand_t<double>(Shape{2}, rng), true);
  CHECK(check_grads({x, w2, b2}, [&] {
          return mean_all(tanh_act(conv2d(x, w2, b2, 1, 2)));
        }) == 0);
}

TEST_CASE("conv_transpose2d gradients") {
  auto x = make_leaf(rand_t<double>(Shape{2, 3, 3, 3}, rng), true);
  auto w = make_leaf(rand_t<double>(Shape{3, 2, 3, 3}, rng, 0.3), true);
  auto b = make_leaf(rand_t<double>(Shape{2}, rng), true);
  CHECK(check_grads({x, w, b}, [&] {
          auto y = conv_transpose2d(x, w, b, 2, 1, 1);
          return mean_all(mul(y, y));
        }) == 0);
}

TEST_CASE("instance_norm gradients") {
  auto x = make_leaf(rand_t<double>(Shape{2, 2, 4, 4}, rng), true);
  auto g = make_leaf(rand_u<double>(Shape{2}, rng, 0.5, 1.5), true);
  auto b = make_leaf(rand_t<double>(Shape{2}, rng), true);
  CHECK(check_grads({x, g, b}, [&] {
          auto y = instance_norm(x, g, b);
          return mean_all(mul(y, y));
        }) == 0);
}

TEST_CASE("bce_with_logits gradient and stability") {
  auto z = make_leaf(rand_t<double>(Shape{4, 1}, rng, 2.0), true);
  Tensor<double> yt(Shape{4, 1});
  yt[0] = 1;
  yt[1] = 0;
  yt[2] = 1;
  yt[3] = 0;
  auto y = constant(yt);
  CHECK(check_grads({z}, [&] { return bce_with_logits(z, y); }) == 0);

  // Extreme logits must stay finite (the log-sum-exp form never overflows).
  Tensor<double> big(Shape{2, 1});
  big[0] = 500.0;
  big[1] = -500.0;
  Tensor<double> lab(Shape{2, 1});
  lab[0] = 0.0;
  lab[1] = 1.0;
  auto loss = bce_with_logits(make_leaf(big, true), constant(lab));
  CHECK(std::isfinite(loss.item()));
  CHECK(loss.item() == doctest::Approx(500.0).epsilon(1e-9));
}

TEST_CASE("detach blocks gradient flow") {
  auto a = make_leaf(rand_t<double>(Shape{2, 2}, rng), true);
  auto loss = mean_all(mul(detach(a), a));
  backward(loss);
  // d/da mean(c * a) = c / n with c = detach(a): gradient equals a.val()/4,
  // with no quadratic (2a/4) term from the detached factor.
  for (int64_t i = 0; i < 4; ++i)
    CHECK(a.grad()[i] == doctest::Approx(a.val()[i] / 4.0).epsilon(1e-12));
}

TEST_CASE("NoGrad builds constant nodes") {
  auto a = make_leaf(rand_t<double>(Shape{2, 2}, rng), true);
  Var<double> y;
  {
    NoGrad guard;
    y = mul(a, a);
  }
  CHECK_FALSE(y.requires_grad());
  CHECK(y.n->parents.empty());
}

TEST_CASE("requires_grad pruning skips constant branches") {
  auto a = make_leaf(rand_t<double>(Shape{2, 2}, rng), true);
  auto c = constant(rand_t<double>(Shape{2, 2}, rng));
  auto loss = mean_all(mul(a, c));
  backward(loss);
  CHECK(c.n->grad.size() == 0);  // never touched
  CHECK(a.grad().size() == 4);
}

TEST_CASE("gradients accumulate across uses of one leaf") {
  Tensor<double> t(Shape{1}, 3.0);
  auto a = make_leaf(t, true);
  auto loss = mean_all(mul(a, a));  // d/da a^2 = 2a = 6
  backward(loss);
  CHECK(a.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
}
