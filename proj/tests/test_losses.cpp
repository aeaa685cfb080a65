// SPDX-License-Identifier: Apache-2.0
//
// Loss functions: composition identities and convexity bound, adversarial
// fixed points against hand-computed values, cycle/supervision behavior,
// binary-mask validation, total-loss weighting and finiteness guards.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "saggan/losses.hpp"
#include "test_util.hpp"

using namespace saggan;
using testutil::check_grads;
using testutil::rand_t;
using testutil::rand_u;

namespace {
Rng rng(31337);

Var<double> probs(std::initializer_list<double> ps) {
  Tensor<double> t(Shape{static_cast<int64_t>(ps.size()), 1, 1, 1});
  int64_t i = 0;
  for (double p : ps) t[i++] = p;
  return constant(std::move(t));
}
}  // namespace

TEST_CASE("composition with an all-ones mask returns the generated image") {
  Tensor<double> n = rand_u<double>(Shape{2, 1, 4, 4}, rng, -1.0, 1.0);
  Tensor<double> g = rand_u<double>(Shape{2, 1, 4, 4}, rng, -1.0, 1.0);
  Var<double> out = compose(constant(n), constant(g), constant(Tensor<double>(n.shape, 1.0)));
  for (int64_t i = 0; i < n.size(); ++i) CHECK(out.val()[i] == g[i]);
}

TEST_CASE("composition with an all-zeros mask returns the input image") {
  Tensor<double> n = rand_u<double>(Shape{2, 1, 4, 4}, rng, -1.0, 1.0);
  Tensor<double> g = rand_u<double>(Shape{2, 1, 4, 4}, rng, -1.0, 1.0);
  Var<double> out = compose(constant(n), constant(g), constant(Tensor<double>(n.shape, 0.0)));
  for (int64_t i = 0; i < n.size(); ++i) CHECK(out.val()[i] == n[i]);
}

TEST_CASE("composition stays inside the convex hull of its two images") {
  for (int trial = 0; trial < 100; ++trial) {
    Tensor<double> n = rand_u<double>(Shape{1, 1, 5, 5}, rng, -1.0, 1.0);
    Tensor<double> g = rand_u<double>(Shape{1, 1, 5, 5}, rng, -1.0, 1.0);
    Tensor<double> m = rand_u<double>(Shape{1, 1, 5, 5}, rng, 0.0, 1.0);
    Var<double> out = compose(constant(n), constant(g), constant(m));
    for (int64_t i = 0; i < n.size(); ++i) {
      CHECK(out.val()[i] >= std::min(n[i], g[i]) - 1e-12);
      CHECK(out.val()[i] <= std::max(n[i], g[i]) + 1e-12);
    }
  }
}

TEST_CASE("composition is differentiable in all three inputs") {
  auto n = make_leaf(rand_u<double>(Shape{1, 1, 3, 3}, rng, -1.0, 1.0), true);
  auto g = make_leaf(rand_u<double>(Shape{1, 1, 3, 3}, rng, -1.0, 1.0), true);
  auto m = make_leaf(rand_u<double>(Shape{1, 1, 3, 3}, rng, 0.1, 0.9), true);
  CHECK(check_grads({n, g, m}, [&] {
          auto y = compose(n, g, m);
          return mean_all(mul(y, y));
        }) == 0);
}

TEST_CASE("discriminator loss at the uninformative fixed point is 2 ln 2") {
  auto loss = adv_loss_d_probs(probs({0.5, 0.5}), probs({0.5, 0.5}));
  CHECK(loss.item() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("generator loss at the uninformative fixed point is ln 2") {
  auto loss = adv_loss_g_probs(probs({0.5, 0.5, 0.5}));
  CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("discriminator loss on mixed probabilities matches a hand computation") {
  // real probs {0.8, 0.6}, fake probs {0.3, 0.1}:
  // -(ln .8 + ln .6)/2 - (ln .7 + ln .9)/2
  auto loss = adv_loss_d_probs(probs({0.8, 0.6}), probs({0.3, 0.1}));
  const double want = -(std::log(0.8) + std::log(0.6)) / 2.0 -
                      (std::log(0.7) + std::log(0.9)) / 2.0;
  CHECK(want == doctest::Approx(0.5980023173).epsilon(1e-7));  // frozen
  CHECK(loss.item() == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("generator loss on mixed probabilities matches a hand computation") {
  // fake probs {0.25, 0.75}: -(ln .25 + ln .75)/2
  auto loss = adv_loss_g_probs(probs({0.25, 0.75}));
  const double want = -(std::log(0.25) + std::log(0.75)) / 2.0;
  CHECK(want == doctest::Approx(0.8369882168).epsilon(1e-7));  // frozen
  CHECK(loss.item() == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("probability clamp keeps extreme predictions finite") {
  auto d_loss = adv_loss_d_probs(probs({0.0, 1.0}), probs({1.0, 0.0}));
  CHECK(std::isfinite(d_loss.item()));
  auto g_loss = adv_loss_g_probs(probs({0.0}));
  CHECK(std::isfinite(g_loss.item()));
  CHECK(g_loss.item() == doctest::Approx(-std::log(kProbEps)).epsilon(1e-6));
}

TEST_CASE("cycle loss vanishes on perfect reconstruction and is symmetric in scale") {
  Tensor<double> n = rand_u<double>(Shape{2, 1, 4, 4}, rng, -1.0, 1.0);
  Tensor<double> t = rand_u<double>(Shape{2, 1, 4, 4}, rng, -1.0, 1.0);
  auto zero = cycle_loss(constant(n), constant(n), constant(t), constant(t));
  CHECK(zero.item() == 0.0);

  // mean-L1 semantics: shifting one reconstruction by +0.25 adds exactly 0.25
  Tensor<double> n_shift = n;
  for (int64_t i = 0; i < n_shift.size(); ++i) n_shift[i] += 0.25;
  auto shifted = cycle_loss(constant(n), constant(n_shift), constant(t), constant(t));
  CHECK(shifted.item() == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("attention supervision is the mean absolute gap to the mask") {
  Tensor<double> mask(Shape{1, 1, 2, 2}, 0.0);
  mask[0] = 1.0;
  mask[3] = 1.0;
  Tensor<double> pred(Shape{1, 1, 2, 2});
  pred[0] = 0.9;   // gap 0.1
  pred[1] = 0.2;   // gap 0.2
  pred[2] = 0.0;   // gap 0.0
  pred[3] = 0.5;   // gap 0.5
  auto loss = attention_supervision_loss(constant(mask), constant(pred));
  CHECK(loss.item() == doctest::Approx(0.2).epsilon(1e-12));

  auto perfect = attention_supervision_loss(constant(mask), constant(mask));
  CHECK(perfect.item() == 0.0);
}

TEST_CASE("attention supervision rejects non-binary masks, naming the entry") {
  Tensor<double> mask(Shape{1, 1, 2, 2}, 0.0);
  mask[2] = 0.4;
  Tensor<double> pred(Shape{1, 1, 2, 2}, 0.5);
  CHECK_THROWS_WITH_AS(
      static_cast<void>(attention_supervision_loss(constant(mask), constant(pred))),
      "attention_supervision_loss: mask entry 0.4 at 2 is not binary", ValidationError);
}

TEST_CASE("total loss applies the configured weights linearly") {
  LossWeights w;
  w.lambda_gan = 1.0;
  w.lambda_cyc = 10.0;
  CHECK(total_loss(0.3, 0.4, 0.05, 0.02, w) ==
        doctest::Approx(1.0 * (0.3 + 0.4) + 10.0 * 0.05 + 0.02).epsilon(1e-12));

  // coefficient perturbation: the partial derivative w.r.t. each weight is the
  // corresponding component sum
  const double base = total_loss(0.3, 0.4, 0.05, 0.02, w);
  LossWeights w2 = w;
  w2.lambda_gan += 1.0;
  CHECK(total_loss(0.3, 0.4, 0.05, 0.02, w2) - base == doctest::Approx(0.7).epsilon(1e-12));
  LossWeights w3 = w;
  w3.lambda_cyc += 1.0;
  CHECK(total_loss(0.3, 0.4, 0.05, 0.02, w3) - base == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("loss bundle mirrors its inputs and total") {
  LossWeights w;
  LossBundle b = make_loss_bundle(0.1, 0.2, 0.03, 0.004, w);
  CHECK(b.adv_n == 0.1);
  CHECK(b.adv_t == 0.2);
  CHECK(b.cycle == 0.03);
  CHECK(b.attn_sup == 0.004);
  CHECK(b.total == doctest::Approx(total_loss(0.1, 0.2, 0.03, 0.004, w)).epsilon(1e-15));
}

TEST_CASE("non-finite components are rejected with the component name") {
  LossWeights w;
  CHECK_THROWS_WITH_AS(static_cast<void>(total_loss(std::nan(""), 0, 0, 0, w)),
                       "total_loss: component adv_N is not finite (nan)", ValidationError);
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_WITH_AS(static_cast<void>(total_loss(0, 0, inf, 0, w)),
                       "total_loss: component cycle is not finite (inf)", ValidationError);
  CHECK_THROWS_AS(static_cast<void>(check_finite_component(inf, "adv_D")), ValidationError);
}

TEST_CASE("graph total loss agrees with the scalar total loss") {
  LossWeights w;
  w.lambda_gan = 2.0;
  w.lambda_cyc = 5.0;
  auto scalar = [&](double v) { return constant(Tensor<double>(Shape{1}, v)); };
  auto total = total_loss_var(scalar(0.3), scalar(0.4), scalar(0.05), scalar(0.02), w);
  CHECK(total.item() == doctest::Approx(total_loss(0.3, 0.4, 0.05, 0.02, w)).epsilon(1e-12));
}

TEST_CASE("adversarial losses are differentiable through the probabilities") {
  auto p = make_leaf(rand_u<double>(Shape{3, 1, 2, 2}, rng, 0.1, 0.9), true);
  auto q = make_leaf(rand_u<double>(Shape{3, 1, 2, 2}, rng, 0.1, 0.9), true);
  CHECK(check_grads({p, q}, [&] { return adv_loss_d_probs(p, q); }) == 0);
  CHECK(check_grads({p}, [&] { return adv_loss_g_probs(p); }) == 0);
}
