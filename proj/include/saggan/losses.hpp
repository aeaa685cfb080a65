// SPDX-License-Identifier: Apache-2.0
#pragma once

// Attention-gated composition and every training loss, as pure functions over
// network outputs. Probabilities are clamped before logs; L1 terms are
// per-pixel means so the loss weights stay image-size independent.

#include <cmath>

#include "saggan/autodiff.hpp"
#include "saggan/networks.hpp"

namespace saggan {

constexpr double kProbEps = 1e-7;

// mask ⊙ gen + (1 - mask) ⊙ input
template <typename T>
Var<T> compose(const Var<T>& input_img, const Var<T>& gen_img, const Var<T>& mask) {
  check_same_shape(input_img.val(), gen_img.val(), "compose(input, gen)");
  check_same_shape(input_img.val(), mask.val(), "compose(input, mask)");
  return add(mul(mask, gen_img), mul(one_minus(mask), input_img));
}

// -mean log p, over the patch map and batch.
template <typename T>
Var<T> neg_mean_log(const Var<T>& p) {
  return mul_scalar(mean_all(vlog(clamp(p, T(kProbEps), T(1.0 - kProbEps)))), T(-1));
}

template <typename T>
Var<T> adv_loss_d_probs(const Var<T>& p_real, const Var<T>& p_fake) {
  return add(neg_mean_log(p_real), neg_mean_log(one_minus(p_fake)));
}

template <typename T>
Var<T> adv_loss_g_probs(const Var<T>& p_fake) {
  return neg_mean_log(p_fake);
}

// L_D = -mean log D(real) - mean log(1 - D(fake)); inputs already masked.
template <typename T>
Var<T> adv_loss_discriminator(const Var<T>& real_masked, const Var<T>& fake_masked,
                              const PatchDiscriminator<T>& d) {
  return adv_loss_d_probs(d.forward(real_masked), d.forward(fake_masked));
}

// Non-saturating generator objective: -mean log D(fake).
template <typename T>
Var<T> adv_loss_generator(const Var<T>& fake_masked, const PatchDiscriminator<T>& d) {
  return adv_loss_g_probs(d.forward(fake_masked));
}

template <typename T>
Var<T> l1_mean(const Var<T>& a, const Var<T>& b) {
  return mean_all(vabs(sub(a, b)));
}

// mean|n_rec - n| + mean|t_rec - t|
template <typename T>
Var<T> cycle_loss(const Var<T>& n, const Var<T>& n_rec, const Var<T>& t, const Var<T>& t_rec) {
  return add(l1_mean(n_rec, n), l1_mean(t_rec, t));
}

// mean|M - A_T(t)|; the ground-truth mask must be binary. Supervision applies
// to the tumor-side attention net only; the normal side has no labels.
template <typename T>
Var<T> attention_supervision_loss(const Var<T>& seg_mask, const Var<T>& pred_map) {
  check_same_shape(seg_mask.val(), pred_map.val(), "attention_supervision_loss");
  for (int64_t i = 0; i < seg_mask.val().size(); ++i) {
    const T v = seg_mask.val()[i];
    SAGGAN_CHECK(std::abs(v) <= T(1e-6) || std::abs(v - T(1)) <= T(1e-6),
                 "attention_supervision_loss: mask entry %g at %lld is not binary",
                 static_cast<double>(v), static_cast<long long>(i));
  }
  return l1_mean(seg_mask, pred_map);
}

struct LossWeights {
  double lambda_gan = 1.0;
  double lambda_cyc = 10.0;
};

struct LossBundle {
  double adv_n = 0.0;
  double adv_t = 0.0;
  double cycle = 0.0;
  double attn_sup = 0.0;
  double total = 0.0;
};

inline void check_finite_component(double v, const char* name) {
  SAGGAN_CHECK(std::isfinite(v), "total_loss: component %s is not finite (%g)", name, v);
}

inline double total_loss(double adv_n, double adv_t, double cycle, double attn_sup,
                         const LossWeights& w) {
  check_finite_component(adv_n, "adv_N");
  check_finite_component(adv_t, "adv_T");
  check_finite_component(cycle, "cycle");
  check_finite_component(attn_sup, "attn_sup");
  return w.lambda_gan * (adv_n + adv_t) + w.lambda_cyc * cycle + attn_sup;
}

inline LossBundle make_loss_bundle(double adv_n, double adv_t, double cycle, double attn_sup,
                                   const LossWeights& w) {
  LossBundle b;
  b.adv_n = adv_n;
  b.adv_t = adv_t;
  b.cycle = cycle;
  b.attn_sup = attn_sup;
  b.total = total_loss(adv_n, adv_t, cycle, attn_sup, w);
  return b;
}

// Graph-building variant used by the generator update.
template <typename T>
Var<T> total_loss_var(const Var<T>& adv_n, const Var<T>& adv_t, const Var<T>& cycle,
                      const Var<T>& attn_sup, const LossWeights& w) {
  Var<T> adv = mul_scalar(add(adv_n, adv_t), static_cast<T>(w.lambda_gan));
  Var<T> cyc = mul_scalar(cycle, static_cast<T>(w.lambda_cyc));
  return add(add(adv, cyc), attn_sup);
}

}  // namespace saggan
