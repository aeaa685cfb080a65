// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "saggan/autodiff.hpp"

namespace saggan {

// Adaptive moment estimation over a fixed parameter group. Moments and the
// step counter are exposed for checkpointing.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Var<T>> params, double lr, double beta1 = 0.5, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(p.shape(), T(0));
      v_.emplace_back(p.shape(), T(0));
    }
  }

  void zero_grad() {
    for (auto& p : params_)
      if (!p.n->grad.data.empty()) p.n->grad.fill(T(0));
  }

  void step() {
    ++t_;
    const T bc1 = T(1) - static_cast<T>(std::pow(beta1_, t_));
    const T bc2 = T(1) - static_cast<T>(std::pow(beta2_, t_));
    const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    const T lr = static_cast<T>(lr_), eps = static_cast<T>(eps_);
    for (size_t k = 0; k < params_.size(); ++k) {
      Var<T>& p = params_[k];
      if (p.n->grad.data.empty()) continue;
      Tensor<T>& g = p.n->grad;
      Tensor<T>& m = m_[k];
      Tensor<T>& v = v_[k];
      Tensor<T>& w = p.val();
      for (int64_t i = 0; i < w.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
      }
    }
  }

  const std::vector<Var<T>>& params() const { return params_; }
  std::vector<Tensor<T>>& moments_m() { return m_; }
  std::vector<Tensor<T>>& moments_v() { return v_; }
  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }

 private:
  std::vector<Var<T>> params_;
  std::vector<Tensor<T>> m_, v_;
  double lr_ = 2e-4, beta1_ = 0.5, beta2_ = 0.999, eps_ = 1e-8;
  int64_t t_ = 0;
};

}  // namespace saggan
