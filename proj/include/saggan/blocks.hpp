// SPDX-License-Identifier: Apache-2.0
#pragma once

// Channel-attention residual block (mean+max squeeze, two-layer gate) and
// power-iteration spectral normalization for discriminator weights.

#include <cmath>

#include "saggan/autodiff.hpp"
#include "saggan/common.hpp"

namespace saggan {

// ---------------------------------------------------------------------------
// Squeeze / excite / residual block
// ---------------------------------------------------------------------------

// Z(p) = spatial mean + spatial max of channel p.
template <typename T>
Var<T> squeeze(const Var<T>& u) {
  return add(spatial_mean(u), spatial_max(u));
}

template <typename T>
struct LinearLayer {
  Var<T> w, b;  // w [out,in], b [out]

  void init(int64_t out, int64_t in, Rng& rng, T wstd = T(0.02)) {
    Tensor<T> wt(Shape{out, in});
    for (int64_t i = 0; i < wt.size(); ++i) wt[i] = static_cast<T>(rng.normal(0.0, wstd));
    w = param(std::move(wt));
    b = param(Tensor<T>(Shape{out}, T(0)));
  }

  Var<T> operator()(const Var<T>& x) const { return linear(x, w, b); }
};

template <typename T>
struct Conv2dLayer {
  Var<T> w, b;  // w [Cout,Cin,kh,kw]
  int64_t stride = 1, pad = 0;

  void init(int64_t cout, int64_t cin, int64_t k, int64_t stride_, int64_t pad_, Rng& rng,
            T wstd = T(0.02)) {
    stride = stride_;
    pad = pad_;
    Tensor<T> wt(Shape{cout, cin, k, k});
    for (int64_t i = 0; i < wt.size(); ++i) wt[i] = static_cast<T>(rng.normal(0.0, wstd));
    w = param(std::move(wt));
    b = param(Tensor<T>(Shape{cout}, T(0)));
  }

  Var<T> operator()(const Var<T>& x) const { return conv2d(x, w, b, stride, pad); }
};

template <typename T>
struct ConvT2dLayer {
  Var<T> w, b;  // w [Cin,Cout,kh,kw]
  int64_t stride = 2, pad = 1, out_pad = 1;

  void init(int64_t cin, int64_t cout, int64_t k, int64_t stride_, int64_t pad_,
            int64_t out_pad_, Rng& rng, T wstd = T(0.02)) {
    stride = stride_;
    pad = pad_;
    out_pad = out_pad_;
    Tensor<T> wt(Shape{cin, cout, k, k});
    for (int64_t i = 0; i < wt.size(); ++i) wt[i] = static_cast<T>(rng.normal(0.0, wstd));
    w = param(std::move(wt));
    b = param(Tensor<T>(Shape{cout}, T(0)));
  }

  Var<T> operator()(const Var<T>& x) const {
    return conv_transpose2d(x, w, b, stride, pad, out_pad);
  }
};

template <typename T>
struct InstanceNormLayer {
  Var<T> gamma, beta;

  void init(int64_t c) {
    gamma = param(Tensor<T>(Shape{c}, T(1)));
    beta = param(Tensor<T>(Shape{c}, T(0)));
  }

  Var<T> operator()(const Var<T>& x) const { return instance_norm(x, gamma, beta); }
};

// Residual transform (conv3x3 -> IN -> ReLU -> conv3x3 -> IN) plus the gate MLP.
template <typename T>
struct AmseParams {
  Conv2dLayer<T> conv1, conv2;
  InstanceNormLayer<T> in1, in2;
  LinearLayer<T> fc1, fc2;
  int64_t channels = 0;
  int64_t reduction = 4;

  void init(int64_t c, int64_t r, Rng& rng) {
    SAGGAN_CHECK(r >= 1 && c % r == 0, "amse: reduction %lld must divide channels %lld",
                 static_cast<long long>(r), static_cast<long long>(c));
    channels = c;
    reduction = r;
    conv1.init(c, c, 3, 1, 1, rng);
    in1.init(c);
    conv2.init(c, c, 3, 1, 1, rng);
    in2.init(c);
    fc1.init(c / r, c, rng);
    fc2.init(c, c / r, rng);
  }
};

// Z' = sigmoid(fc2(relu(fc1(z)))), entries in (0,1).
template <typename T>
Var<T> excite(const Var<T>& z, const AmseParams<T>& p) {
  SAGGAN_CHECK(z.shape().size() == 2 && z.shape()[1] == p.channels,
               "excite: input %s does not match %lld channels", shape_str(z.shape()).c_str(),
               static_cast<long long>(p.channels));
  return sigmoid(p.fc2(relu(p.fc1(z))));
}

template <typename T>
Var<T> amse_transform(const Var<T>& x, const AmseParams<T>& p) {
  SAGGAN_CHECK(x.shape().size() == 4 && x.shape()[1] == p.channels,
               "amse: input %s does not match %lld channels", shape_str(x.shape()).c_str(),
               static_cast<long long>(p.channels));
  return p.in2(p.conv2(relu(p.in1(p.conv1(x)))));
}

// X' = gate ⊙ U + X with U the residual transform of X. An explicit gate
// overrides the learned one (used to pin the gate at exactly 0 or 1).
template <typename T>
Var<T> amse_forward(const Var<T>& x, const AmseParams<T>& p,
                    const Var<T>* injected_gate = nullptr) {
  Var<T> u = amse_transform(x, p);
  Var<T> gate = injected_gate ? *injected_gate : excite(squeeze(u), p);
  return add(mul_channel(u, gate), x);
}

// ---------------------------------------------------------------------------
// Spectral normalization
// ---------------------------------------------------------------------------

constexpr double kSpectralEps = 1e-12;

template <typename T>
struct SpectralState {
  Tensor<T> u;  // unit left singular-vector estimate, length = rows of W
  bool warned = false;
};

template <typename T>
SpectralState<T> make_spectral_state(int64_t rows, Rng& rng) {
  Tensor<T> u(Shape{rows});
  T norm = T(0);
  for (int64_t i = 0; i < rows; ++i) {
    u[i] = static_cast<T>(rng.normal());
    norm += u[i] * u[i];
  }
  norm = std::sqrt(norm);
  if (norm < T(kSpectralEps)) {
    u.fill(T(0));
    u[0] = T(1);
  } else {
    for (int64_t i = 0; i < rows; ++i) u[i] /= norm;
  }
  return SpectralState<T>{std::move(u), false};
}

namespace detail {

// Weight tensors flatten to [rows = shape[0], cols = rest].
template <typename T>
std::pair<int64_t, int64_t> flat_dims(const Tensor<T>& w) {
  SAGGAN_CHECK(w.shape.size() >= 2, "spectral: weight must have >= 2 dims, got %s",
               shape_str(w.shape).c_str());
  return {w.shape[0], w.size() / w.shape[0]};
}

template <typename T>
bool normalize_vec(std::vector<T>& v) {
  T n = T(0);
  for (T x : v) n += x * x;
  n = std::sqrt(n);
  if (n < T(kSpectralEps)) return false;
  for (T& x : v) x /= n;
  return true;
}

}  // namespace detail

// One power-iteration pair per call: v = normalize(W^T u), u = normalize(W v).
// Returns false (and sets warned) when W is numerically zero.
template <typename T>
bool spectral_refresh(const Tensor<T>& w, SpectralState<T>& st, int iters = 1) {
  auto [rows, cols] = detail::flat_dims(w);
  SAGGAN_CHECK(st.u.size() == rows, "spectral: state u length %lld != rows %lld",
               static_cast<long long>(st.u.size()), static_cast<long long>(rows));
  MapCM<T> wm(w.ptr(), rows, cols);
  std::vector<T> u(st.u.data.begin(), st.u.data.end());
  std::vector<T> v(static_cast<size_t>(cols));
  for (int it = 0; it < iters; ++it) {
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> um(u.data(), rows);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> vm(v.data(), cols);
    vm.noalias() = wm.transpose() * um;
    if (!detail::normalize_vec(v)) {
      st.warned = true;
      return false;
    }
    um.noalias() = wm * vm;
    if (!detail::normalize_vec(u)) {
      st.warned = true;
      return false;
    }
  }
  std::copy(u.begin(), u.end(), st.u.data.begin());
  return true;
}

// sigma = ||W^T u|| for the persisted u (exact for the frozen-u forward).
template <typename T>
T spectral_sigma(const Tensor<T>& w, const SpectralState<T>& st) {
  auto [rows, cols] = detail::flat_dims(w);
  MapCM<T> wm(w.ptr(), rows, cols);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> um(st.u.ptr(), rows);
  return (wm.transpose() * um).norm();
}

// Runs `iters` power iterations (persisting u), then returns W / sigma.
// A numerically zero W is returned unchanged with state.warned set.
template <typename T>
Tensor<T> spectral_normalize(const Tensor<T>& w, SpectralState<T>& st, int iters = 1) {
  if (!spectral_refresh(w, st, iters)) return w;
  const T sigma = spectral_sigma(w, st);
  if (sigma < T(kSpectralEps)) {
    st.warned = true;
    return w;
  }
  Tensor<T> out(w.shape);
  for (int64_t i = 0; i < w.size(); ++i) out[i] = w[i] / sigma;
  return out;
}

// Differentiable W / sigma with u frozen (no state update). Since
// sigma = ||W^T u|| exactly, dsigma/dW = u v^T and
// dL/dW = (g - <g, W_sn> u v^T) / sigma for upstream g.
template <typename T>
Var<T> spectral_norm_weight(const Var<T>& w, SpectralState<T>& st) {
  auto [rows, cols] = detail::flat_dims(w.val());
  SAGGAN_CHECK(st.u.size() == rows, "spectral: state u length %lld != rows %lld",
               static_cast<long long>(st.u.size()), static_cast<long long>(rows));
  MapCM<T> wm(w.val().ptr(), rows, cols);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> um(st.u.ptr(), rows);
  Eigen::Matrix<T, Eigen::Dynamic, 1> vraw = wm.transpose() * um;
  const T sigma = vraw.norm();
  if (sigma < T(kSpectralEps)) {
    st.warned = true;
    VarNode<T>* pw = w.n.get();
    return make_node<T>(w.val(), {w}, [pw](VarNode<T>* self) {
      if (pw->requires_grad) accum(pw->ensure_grad(), self->grad);
    });
  }
  Tensor<T> out(w.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = w.val()[i] / sigma;
  std::vector<T> u(st.u.data.begin(), st.u.data.end());
  std::vector<T> v(vraw.data(), vraw.data() + cols);
  for (T& x : v) x /= sigma;
  VarNode<T>* pw = w.n.get();
  return make_node<T>(std::move(out), {w},
                      [pw, rows, cols, sigma, u = std::move(u), v = std::move(v)](
                          VarNode<T>* self) {
                        if (!pw->requires_grad) return;
                        T dot = T(0);
                        for (int64_t i = 0; i < self->grad.size(); ++i)
                          dot += self->grad[i] * self->value[i];
                        Tensor<T>& g = pw->ensure_grad();
                        for (int64_t r = 0; r < rows; ++r)
                          for (int64_t c = 0; c < cols; ++c) {
                            const int64_t i = r * cols + c;
                            g[i] += (self->grad[i] -
                                     dot * u[static_cast<size_t>(r)] * v[static_cast<size_t>(c)]) /
                                    sigma;
                          }
                      });
}

}  // namespace saggan
