// SPDX-License-Identifier: Apache-2.0
#pragma once

// The six networks: two attention-guided generators (encoder, channel-attention
// residual trunk, decoder, tanh head), two attention nets (encoder-decoder with
// skip connections, sigmoid head), two spectrally normalized patch
// discriminators (70x70 receptive field, probability map head).

#include <string>
#include <utility>
#include <vector>

#include "saggan/blocks.hpp"
#include "saggan/optim.hpp"

namespace saggan {

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Var<T>>>;

template <typename T>
using NamedSpectral = std::vector<std::pair<std::string, SpectralState<T>*>>;

struct NetConfig {
  int64_t image_size = 64;
  int64_t k_blocks = 4;
  int64_t gen_base = 32;    // first generator width; trunk runs at 4x
  int64_t attn_base = 16;   // attention encoder widths: base, 2x, 4x
  int64_t disc_base = 64;   // discriminator widths: base, 2x, 4x, 8x
  int64_t reduction = 4;
  uint64_t seed = 17;

  void validate() const {
    SAGGAN_CHECK(image_size >= 32, "config: image_size %lld must be >= 32",
                 static_cast<long long>(image_size));
    SAGGAN_CHECK(image_size % 4 == 0, "config: image_size %lld must be divisible by 4",
                 static_cast<long long>(image_size));
    SAGGAN_CHECK(k_blocks >= 1, "config: k_blocks must be positive");
    SAGGAN_CHECK(gen_base >= 1 && attn_base >= 1 && disc_base >= 1,
                 "config: channel widths must be positive");
    SAGGAN_CHECK(reduction >= 1 && (4 * gen_base) % reduction == 0,
                 "config: reduction %lld must divide trunk width %lld",
                 static_cast<long long>(reduction), static_cast<long long>(4 * gen_base));
  }
};

template <typename T>
struct Generator {
  Conv2dLayer<T> enc1, enc2, enc3, out_conv;
  InstanceNormLayer<T> in1, in2, in3, din1, din2;
  ConvT2dLayer<T> dec1, dec2;
  std::vector<AmseParams<T>> blocks;
  int64_t image_size = 0;

  void init(const NetConfig& cfg, Rng& rng) {
    image_size = cfg.image_size;
    const int64_t c1 = cfg.gen_base, c2 = 2 * c1, c3 = 4 * c1;
    enc1.init(c1, 1, 7, 1, 3, rng);
    in1.init(c1);
    enc2.init(c2, c1, 3, 2, 1, rng);
    in2.init(c2);
    enc3.init(c3, c2, 3, 2, 1, rng);
    in3.init(c3);
    blocks.resize(static_cast<size_t>(cfg.k_blocks));
    for (auto& blk : blocks) blk.init(c3, cfg.reduction, rng);
    dec1.init(c3, c2, 3, 2, 1, 1, rng);
    din1.init(c2);
    dec2.init(c2, c1, 3, 2, 1, 1, rng);
    din2.init(c1);
    out_conv.init(1, c1, 7, 1, 3, rng);
  }

  Var<T> forward(const Var<T>& x) const {
    SAGGAN_CHECK(x.shape().size() == 4 && x.shape()[1] == 1 && x.shape()[2] == image_size &&
                     x.shape()[3] == image_size,
                 "generator: input %s does not match configured 1x%lldx%lld",
                 shape_str(x.shape()).c_str(), static_cast<long long>(image_size),
                 static_cast<long long>(image_size));
    Var<T> h = relu(in1(enc1(x)));
    h = relu(in2(enc2(h)));
    h = relu(in3(enc3(h)));
    for (const auto& blk : blocks) h = amse_forward(h, blk);
    h = relu(din1(dec1(h)));
    h = relu(din2(dec2(h)));
    return tanh_act(out_conv(h));
  }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    out.emplace_back(prefix + ".enc1.w", enc1.w);
    out.emplace_back(prefix + ".enc1.b", enc1.b);
    out.emplace_back(prefix + ".in1.gamma", in1.gamma);
    out.emplace_back(prefix + ".in1.beta", in1.beta);
    out.emplace_back(prefix + ".enc2.w", enc2.w);
    out.emplace_back(prefix + ".enc2.b", enc2.b);
    out.emplace_back(prefix + ".in2.gamma", in2.gamma);
    out.emplace_back(prefix + ".in2.beta", in2.beta);
    out.emplace_back(prefix + ".enc3.w", enc3.w);
    out.emplace_back(prefix + ".enc3.b", enc3.b);
    out.emplace_back(prefix + ".in3.gamma", in3.gamma);
    out.emplace_back(prefix + ".in3.beta", in3.beta);
    for (size_t k = 0; k < blocks.size(); ++k) {
      const std::string bp = prefix + ".block" + std::to_string(k);
      const AmseParams<T>& blk = blocks[k];
      out.emplace_back(bp + ".conv1.w", blk.conv1.w);
      out.emplace_back(bp + ".conv1.b", blk.conv1.b);
      out.emplace_back(bp + ".in1.gamma", blk.in1.gamma);
      out.emplace_back(bp + ".in1.beta", blk.in1.beta);
      out.emplace_back(bp + ".conv2.w", blk.conv2.w);
      out.emplace_back(bp + ".conv2.b", blk.conv2.b);
      out.emplace_back(bp + ".in2.gamma", blk.in2.gamma);
      out.emplace_back(bp + ".in2.beta", blk.in2.beta);
      out.emplace_back(bp + ".fc1.w", blk.fc1.w);
      out.emplace_back(bp + ".fc1.b", blk.fc1.b);
      out.emplace_back(bp + ".fc2.w", blk.fc2.w);
      out.emplace_back(bp + ".fc2.b", blk.fc2.b);
    }
    out.emplace_back(prefix + ".dec1.w", dec1.w);
    out.emplace_back(prefix + ".dec1.b", dec1.b);
    out.emplace_back(prefix + ".din1.gamma", din1.gamma);
    out.emplace_back(prefix + ".din1.beta", din1.beta);
    out.emplace_back(prefix + ".dec2.w", dec2.w);
    out.emplace_back(prefix + ".dec2.b", dec2.b);
    out.emplace_back(prefix + ".din2.gamma", din2.gamma);
    out.emplace_back(prefix + ".din2.beta", din2.beta);
    out.emplace_back(prefix + ".out.w", out_conv.w);
    out.emplace_back(prefix + ".out.b", out_conv.b);
  }
};

template <typename T>
struct AttentionNet {
  Conv2dLayer<T> enc1, enc2, enc3, fuse2, fuse1, head;
  InstanceNormLayer<T> in1, in2, in3, din2, dfn2, din1, dfn1;
  ConvT2dLayer<T> dec2, dec1;
  int64_t image_size = 0;

  void init(const NetConfig& cfg, Rng& rng) {
    image_size = cfg.image_size;
    const int64_t c1 = cfg.attn_base, c2 = 2 * c1, c3 = 4 * c1;
    enc1.init(c1, 1, 3, 1, 1, rng);
    in1.init(c1);
    enc2.init(c2, c1, 3, 2, 1, rng);
    in2.init(c2);
    enc3.init(c3, c2, 3, 2, 1, rng);
    in3.init(c3);
    dec2.init(c3, c2, 3, 2, 1, 1, rng);
    din2.init(c2);
    fuse2.init(c2, 2 * c2, 3, 1, 1, rng);
    dfn2.init(c2);
    dec1.init(c2, c1, 3, 2, 1, 1, rng);
    din1.init(c1);
    fuse1.init(c1, 2 * c1, 3, 1, 1, rng);
    dfn1.init(c1);
    head.init(1, c1, 3, 1, 1, rng);
  }

  Var<T> forward(const Var<T>& x) const {
    SAGGAN_CHECK(x.shape().size() == 4 && x.shape()[1] == 1 && x.shape()[2] == image_size &&
                     x.shape()[3] == image_size,
                 "attention: input %s does not match configured 1x%lldx%lld",
                 shape_str(x.shape()).c_str(), static_cast<long long>(image_size),
                 static_cast<long long>(image_size));
    Var<T> e1 = relu(in1(enc1(x)));
    Var<T> e2 = relu(in2(enc2(e1)));
    Var<T> e3 = relu(in3(enc3(e2)));
    Var<T> d2 = relu(din2(dec2(e3)));
    d2 = relu(dfn2(fuse2(concat_ch(d2, e2))));
    Var<T> d1 = relu(din1(dec1(d2)));
    d1 = relu(dfn1(fuse1(concat_ch(d1, e1))));
    return sigmoid(head(d1));
  }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    auto conv = [&](const std::string& name, const Conv2dLayer<T>& c) {
      out.emplace_back(prefix + "." + name + ".w", c.w);
      out.emplace_back(prefix + "." + name + ".b", c.b);
    };
    auto norm = [&](const std::string& name, const InstanceNormLayer<T>& n) {
      out.emplace_back(prefix + "." + name + ".gamma", n.gamma);
      out.emplace_back(prefix + "." + name + ".beta", n.beta);
    };
    conv("enc1", enc1);
    norm("in1", in1);
    conv("enc2", enc2);
    norm("in2", in2);
    conv("enc3", enc3);
    norm("in3", in3);
    out.emplace_back(prefix + ".dec2.w", dec2.w);
    out.emplace_back(prefix + ".dec2.b", dec2.b);
    norm("din2", din2);
    conv("fuse2", fuse2);
    norm("dfn2", dfn2);
    out.emplace_back(prefix + ".dec1.w", dec1.w);
    out.emplace_back(prefix + ".dec1.b", dec1.b);
    norm("din1", din1);
    conv("fuse1", fuse1);
    norm("dfn1", dfn1);
    conv("head", head);
  }
};

// Strided conv with spectral normalization on the weight; bias unnormalized.
template <typename T>
struct SNConv2dLayer {
  Conv2dLayer<T> conv;
  SpectralState<T> sn;

  void init(int64_t cout, int64_t cin, int64_t k, int64_t stride, int64_t pad, Rng& rng) {
    conv.init(cout, cin, k, stride, pad, rng);
    sn = make_spectral_state<T>(cout, rng);
    spectral_refresh(conv.w.val(), sn, 20);  // warm start so early sigma is tight
  }

  Var<T> operator()(const Var<T>& x) const {
    Var<T> wsn = spectral_norm_weight(conv.w, const_cast<SpectralState<T>&>(sn));
    return conv2d(x, wsn, conv.b, conv.stride, conv.pad);
  }

  void refresh() { spectral_refresh(conv.w.val(), sn, 1); }

  Tensor<T> normalized_weight() const {
    Tensor<T> out(conv.w.shape());
    const T sigma = spectral_sigma(conv.w.val(), sn);
    if (sigma < T(kSpectralEps)) return conv.w.val();
    for (int64_t i = 0; i < out.size(); ++i) out[i] = conv.w.val()[i] / sigma;
    return out;
  }
};

template <typename T>
struct PatchDiscriminator {
  SNConv2dLayer<T> c1, c2, c3, c4, head;
  int64_t image_size = 0;

  void init(const NetConfig& cfg, Rng& rng) {
    image_size = cfg.image_size;
    const int64_t b = cfg.disc_base;
    c1.init(b, 1, 4, 2, 1, rng);
    c2.init(2 * b, b, 4, 2, 1, rng);
    c3.init(4 * b, 2 * b, 4, 2, 1, rng);
    c4.init(8 * b, 4 * b, 4, 1, 1, rng);
    head.init(1, 8 * b, 4, 1, 1, rng);
  }

  // Probability map over patches; spectral normalization applied per weight.
  Var<T> forward(const Var<T>& x_masked) const {
    SAGGAN_CHECK(x_masked.shape().size() == 4 && x_masked.shape()[1] == 1 &&
                     x_masked.shape()[2] == image_size && x_masked.shape()[3] == image_size,
                 "discriminator: input %s does not match configured 1x%lldx%lld",
                 shape_str(x_masked.shape()).c_str(), static_cast<long long>(image_size),
                 static_cast<long long>(image_size));
    const T slope = T(0.2);
    Var<T> h = leaky_relu(c1(x_masked), slope);
    h = leaky_relu(c2(h), slope);
    h = leaky_relu(c3(h), slope);
    h = leaky_relu(c4(h), slope);
    return sigmoid(head(h));
  }

  void refresh_spectral() {
    c1.refresh();
    c2.refresh();
    c3.refresh();
    c4.refresh();
    head.refresh();
  }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    auto layer = [&](const std::string& name, const SNConv2dLayer<T>& l) {
      out.emplace_back(prefix + "." + name + ".w", l.conv.w);
      out.emplace_back(prefix + "." + name + ".b", l.conv.b);
    };
    layer("c1", c1);
    layer("c2", c2);
    layer("c3", c3);
    layer("c4", c4);
    layer("head", head);
  }

  void collect_spectral(const std::string& prefix, NamedSpectral<T>& out) {
    out.emplace_back(prefix + ".c1.w", &c1.sn);
    out.emplace_back(prefix + ".c2.w", &c2.sn);
    out.emplace_back(prefix + ".c3.w", &c3.sn);
    out.emplace_back(prefix + ".c4.w", &c4.sn);
    out.emplace_back(prefix + ".head.w", &head.sn);
  }

  std::vector<std::pair<std::string, Tensor<T>>> normalized_weights() const {
    return {{"c1.w", c1.normalized_weight()},
            {"c2.w", c2.normalized_weight()},
            {"c3.w", c3.normalized_weight()},
            {"c4.w", c4.normalized_weight()},
            {"head.w", head.normalized_weight()}};
  }
};

// g_nt: normal -> tumor, g_tn: tumor -> normal; a_n / a_t attend to the normal
// and tumor domains; d_t / d_n judge masked tumor-like and normal-like images.
template <typename T>
struct Models {
  Generator<T> g_nt, g_tn;
  AttentionNet<T> a_n, a_t;
  PatchDiscriminator<T> d_t, d_n;
  NetConfig config;

  NamedParams<T> generator_side_params() const {
    NamedParams<T> out;
    g_nt.collect("g_nt", out);
    g_tn.collect("g_tn", out);
    a_n.collect("a_n", out);
    a_t.collect("a_t", out);
    return out;
  }

  NamedParams<T> discriminator_side_params() const {
    NamedParams<T> out;
    d_t.collect("d_t", out);
    d_n.collect("d_n", out);
    return out;
  }

  NamedParams<T> named_params() const {
    NamedParams<T> out = generator_side_params();
    NamedParams<T> d = discriminator_side_params();
    out.insert(out.end(), d.begin(), d.end());
    return out;
  }

  NamedSpectral<T> named_spectral() {
    NamedSpectral<T> out;
    d_t.collect_spectral("d_t", out);
    d_n.collect_spectral("d_n", out);
    return out;
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& [name, p] : named_params()) n += p.val().size();
    return n;
  }
};

template <typename T>
Models<T> build_models(const NetConfig& cfg) {
  cfg.validate();
  Models<T> m;
  m.config = cfg;
  Rng rng(derive_seed(cfg.seed, "model-init"));
  m.g_nt.init(cfg, rng);
  m.g_tn.init(cfg, rng);
  m.a_n.init(cfg, rng);
  m.a_t.init(cfg, rng);
  m.d_t.init(cfg, rng);
  m.d_n.init(cfg, rng);
  return m;
}

}  // namespace saggan
