// SPDX-License-Identifier: Apache-2.0
//
// Shared test helpers: a finite-difference gradient checker that tolerates
// the kinks of piecewise-linear activations, random tensor factories, and an
// SVD top-singular-value oracle.
#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "saggan/autodiff.hpp"
#include "saggan/blocks.hpp"
#include "saggan/common.hpp"

namespace saggan::testutil {

template <typename T>
Tensor<T> rand_t(Shape s, Rng& rng, double scale = 1.0) {
  Tensor<T> t(std::move(s));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.normal(0.0, scale));
  return t;
}

template <typename T>
Tensor<T> rand_u(Shape s, Rng& rng, double lo, double hi) {
  Tensor<T> t(std::move(s));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Checks the analytic gradient of every leaf against central finite
// differences of the rebuilt graph. Coordinates where halving the step
// changes the FD estimate by more than a relative 1e-5 sit on a kink
// (relu/max selections switch branches there) and are skipped: a genuine
// gradient bug produces a consistent FD mismatch across step sizes.
inline int check_grads(const std::vector<Var<double>>& leaves,
                       const std::function<Var<double>()>& build, double tol = 1e-4) {
  for (const auto& l : leaves) l.n->grad = Tensor<double>();
  Var<double> loss = build();
  backward(loss);
  std::vector<Tensor<double>> analytic;
  analytic.reserve(leaves.size());
  for (const auto& l : leaves) analytic.push_back(l.n->ensure_grad());
  int bad = 0;
  const double h = 1e-5;
  for (size_t k = 0; k < leaves.size(); ++k) {
    Tensor<double>& w = leaves[k].n->value;
    for (int64_t i = 0; i < w.size(); ++i) {
      const double orig = w[i];
      w[i] = orig + h;
      const double fp = build().item();
      w[i] = orig - h;
      const double fm = build().item();
      w[i] = orig;
      const double fd = (fp - fm) / (2 * h);
      const double an = analytic[k][i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      if (std::abs(fd - an) / denom > tol && std::abs(fd - an) > 1e-7) {
        const double h2 = h / 2;
        w[i] = orig + h2;
        const double fp2 = build().item();
        w[i] = orig - h2;
        const double fm2 = build().item();
        w[i] = orig;
        const double fd2 = (fp2 - fm2) / (2 * h2);
        const double drift =
            std::abs(fd - fd2) / std::max({std::abs(fd), std::abs(fd2), 1e-8});
        if (drift > 1e-5) continue;  // non-smooth point
        ++bad;
      }
    }
  }
  return bad;
}

// Top singular value of a tensor flattened to [shape[0], rest].
template <typename T>
double svd_sigma(const Tensor<T>& w) {
  const int64_t rows = w.shape.at(0);
  const int64_t cols = w.size() / rows;
  Eigen::MatrixXd m(rows, cols);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) m(r, c) = static_cast<double>(w[r * cols + c]);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues()(0);
}

// O(P*N) AUC definition: mean over positive/negative pairs of 1 / 0.5 / 0.
inline double auc_pairwise_oracle(const std::vector<double>& scores,
                                  const std::vector<int>& labels) {
  double num = 0;
  int64_t pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j])
        num += 1.0;
      else if (scores[i] == scores[j])
        num += 0.5;
    }
  }
  return num / static_cast<double>(pairs);
}

// Straight-line double reimplementation of the channel-attention residual
// block forward pass, every stage written as explicit loops.
inline Tensor<double> amse_oracle(const Tensor<double>& x, const AmseParams<double>& p) {
  const int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  auto conv3 = [&](const Tensor<double>& in, const Tensor<double>& w,
                   const Tensor<double>& b) {
    Tensor<double> out(Shape{N, C, H, W}, 0.0);
    for (int64_t n = 0; n < N; ++n)
      for (int64_t co = 0; co < C; ++co)
        for (int64_t y = 0; y < H; ++y)
          for (int64_t xx = 0; xx < W; ++xx) {
            double acc = b[co];
            for (int64_t ci = 0; ci < C; ++ci)
              for (int64_t ky = 0; ky < 3; ++ky)
                for (int64_t kx = 0; kx < 3; ++kx) {
                  const int64_t sy = y + ky - 1, sx = xx + kx - 1;
                  if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                  acc += w[((co * C + ci) * 3 + ky) * 3 + kx] *
                         in[((n * C + ci) * H + sy) * W + sx];
                }
            out[((n * C + co) * H + y) * W + xx] = acc;
          }
    return out;
  };
  auto inorm = [&](const Tensor<double>& in, const Tensor<double>& g,
                   const Tensor<double>& b) {
    Tensor<double> out(in.shape);
    const int64_t HW = H * W;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) {
        double mu = 0, var = 0;
        for (int64_t i = 0; i < HW; ++i) mu += in[(n * C + c) * HW + i];
        mu /= static_cast<double>(HW);
        for (int64_t i = 0; i < HW; ++i) {
          const double d = in[(n * C + c) * HW + i] - mu;
          var += d * d;
        }
        var /= static_cast<double>(HW);
        const double is = 1.0 / std::sqrt(var + 1e-5);
        for (int64_t i = 0; i < HW; ++i)
          out[(n * C + c) * HW + i] = g[c] * (in[(n * C + c) * HW + i] - mu) * is + b[c];
      }
    return out;
  };

  Tensor<double> h = inorm(conv3(x, p.conv1.w.val(), p.conv1.b.val()), p.in1.gamma.val(),
                           p.in1.beta.val());
  for (int64_t i = 0; i < h.size(); ++i) h[i] = std::max(0.0, h[i]);
  Tensor<double> u = inorm(conv3(h, p.conv2.w.val(), p.conv2.b.val()), p.in2.gamma.val(),
                           p.in2.beta.val());

  // squeeze: per-channel spatial mean + spatial max of the transform output
  Tensor<double> z(Shape{N, C});
  const int64_t HW = H * W;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      double mean = 0, mx = u[(n * C + c) * HW];
      for (int64_t i = 0; i < HW; ++i) {
        mean += u[(n * C + c) * HW + i];
        mx = std::max(mx, u[(n * C + c) * HW + i]);
      }
      z[n * C + c] = mean / static_cast<double>(HW) + mx;
    }

  // gate: sigmoid(fc2(relu(fc1(z))))
  const int64_t R = C / p.reduction;
  Tensor<double> gate(Shape{N, C});
  for (int64_t n = 0; n < N; ++n) {
    std::vector<double> hid(static_cast<size_t>(R));
    for (int64_t o = 0; o < R; ++o) {
      double acc = p.fc1.b.val()[o];
      for (int64_t i = 0; i < C; ++i) acc += p.fc1.w.val()[o * C + i] * z[n * C + i];
      hid[static_cast<size_t>(o)] = std::max(0.0, acc);
    }
    for (int64_t o = 0; o < C; ++o) {
      double acc = p.fc2.b.val()[o];
      for (int64_t i = 0; i < R; ++i)
        acc += p.fc2.w.val()[o * R + i] * hid[static_cast<size_t>(i)];
      gate[n * C + o] = 1.0 / (1.0 + std::exp(-acc));
    }
  }

  Tensor<double> out(x.shape);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < HW; ++i)
        out[(n * C + c) * HW + i] =
            gate[n * C + c] * u[(n * C + c) * HW + i] + x[(n * C + c) * HW + i];
  return out;
}

}  // namespace saggan::testutil
