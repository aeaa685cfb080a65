// SPDX-License-Identifier: Apache-2.0
//
// Downstream lesion classifier: a small residual network (three residual
// stages, global average pooling, one logit) trained with binary
// cross-entropy, returning the best-validation-accuracy parameters.
#pragma once

#include <cstdint>
#include <vector>

#include "config.hpp"
#include "saggan/blocks.hpp"
#include "saggan/networks.hpp"

namespace saggan {

template <typename T>
struct ResBlock {
  Conv2dLayer<T> conv1, conv2;
  InstanceNormLayer<T> in1, in2;

  void init(int64_t c, Rng& rng) {
    conv1.init(c, c, 3, 1, 1, rng);
    in1.init(c);
    conv2.init(c, c, 3, 1, 1, rng);
    in2.init(c);
  }

  Var<T> forward(const Var<T>& x) const {
    Var<T> h = relu(in1(conv1(x)));
    h = in2(conv2(h));
    return relu(add(h, x));
  }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    out.emplace_back(prefix + ".conv1.w", conv1.w);
    out.emplace_back(prefix + ".conv1.b", conv1.b);
    out.emplace_back(prefix + ".in1.gamma", in1.gamma);
    out.emplace_back(prefix + ".in1.beta", in1.beta);
    out.emplace_back(prefix + ".conv2.w", conv2.w);
    out.emplace_back(prefix + ".conv2.b", conv2.b);
    out.emplace_back(prefix + ".in2.gamma", in2.gamma);
    out.emplace_back(prefix + ".in2.beta", in2.beta);
  }
};

struct ResidualClassifier {
  Conv2dLayer<float> stem;
  InstanceNormLayer<float> stem_in;
  ResBlock<float> block1, block2, block3;
  Conv2dLayer<float> down1, down2;
  InstanceNormLayer<float> dn1, dn2;
  LinearLayer<float> fc;
  int64_t image_size = 0;

  void init(int64_t image_size_, Rng& rng, int64_t base = 16);
  // [B,1,S,S] -> [B,1] logits
  Var<float> forward(const Var<float>& x) const;
  NamedParams<float> named_params() const;
  int64_t param_count() const;
};

struct ClassifierTrainResult {
  ResidualClassifier net;
  int64_t best_epoch = 0;        // 1-based epoch whose weights were kept
  double best_val_accuracy = 0;  // validation accuracy of those weights
};

// Deterministic given seed; ties in validation accuracy keep the earlier
// epoch's weights. Throws when the training set holds a single class.
ClassifierTrainResult train_classifier(const std::vector<Tensor<float>>& train_images,
                                       const std::vector<int>& train_labels,
                                       const std::vector<Tensor<float>>& val_images,
                                       const std::vector<int>& val_labels,
                                       const ClassifierConfig& cfg, uint64_t seed,
                                       int64_t image_size);

// Sigmoid probabilities of the positive (tumor) class, in input order.
std::vector<double> classifier_scores(const ResidualClassifier& net,
                                      const std::vector<Tensor<float>>& images);

}  // namespace saggan
