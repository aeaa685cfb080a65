// SPDX-License-Identifier: Apache-2.0
#include "classifier.hpp"

#include <algorithm>

#include "metrics.hpp"

namespace saggan {

void ResidualClassifier::init(int64_t image_size_, Rng& rng, int64_t base) {
  SAGGAN_CHECK(image_size_ >= 8 && image_size_ % 4 == 0,
               "classifier: image_size %lld must be >= 8 and divisible by 4",
               static_cast<long long>(image_size_));
  image_size = image_size_;
  const int64_t c1 = base, c2 = 2 * base, c3 = 4 * base;
  stem.init(c1, 1, 3, 1, 1, rng);
  stem_in.init(c1);
  block1.init(c1, rng);
  down1.init(c2, c1, 3, 2, 1, rng);
  dn1.init(c2);
  block2.init(c2, rng);
  down2.init(c3, c2, 3, 2, 1, rng);
  dn2.init(c3);
  block3.init(c3, rng);
  fc.init(1, c3, rng);
}

Var<float> ResidualClassifier::forward(const Var<float>& x) const {
  SAGGAN_CHECK(x.shape().size() == 4 && x.shape()[1] == 1 && x.shape()[2] == image_size &&
                   x.shape()[3] == image_size,
               "classifier: input %s does not match configured 1x%lldx%lld",
               shape_str(x.shape()).c_str(), static_cast<long long>(image_size),
               static_cast<long long>(image_size));
  Var<float> h = relu(stem_in(stem(x)));
  h = block1.forward(h);
  h = relu(dn1(down1(h)));
  h = block2.forward(h);
  h = relu(dn2(down2(h)));
  h = block3.forward(h);
  return fc(spatial_mean(h));  // global average pool, then one logit
}

NamedParams<float> ResidualClassifier::named_params() const {
  NamedParams<float> out;
  out.emplace_back("stem.w", stem.w);
  out.emplace_back("stem.b", stem.b);
  out.emplace_back("stem_in.gamma", stem_in.gamma);
  out.emplace_back("stem_in.beta", stem_in.beta);
  block1.collect("block1", out);
  out.emplace_back("down1.w", down1.w);
  out.emplace_back("down1.b", down1.b);
  out.emplace_back("dn1.gamma", dn1.gamma);
  out.emplace_back("dn1.beta", dn1.beta);
  block2.collect("block2", out);
  out.emplace_back("down2.w", down2.w);
  out.emplace_back("down2.b", down2.b);
  out.emplace_back("dn2.gamma", dn2.gamma);
  out.emplace_back("dn2.beta", dn2.beta);
  block3.collect("block3", out);
  out.emplace_back("fc.w", fc.w);
  out.emplace_back("fc.b", fc.b);
  return out;
}

int64_t ResidualClassifier::param_count() const {
  int64_t n = 0;
  for (const auto& [name, p] : named_params()) n += p.val().size();
  return n;
}

namespace {

Tensor<float> gather(const std::vector<Tensor<float>>& images, const std::vector<size_t>& idx,
                     size_t start, size_t count, int64_t image_size) {
  Tensor<float> out(Shape{static_cast<int64_t>(count), 1, image_size, image_size});
  const int64_t hw = image_size * image_size;
  for (size_t i = 0; i < count; ++i) {
    const Tensor<float>& src = images[idx[start + i]];
    SAGGAN_CHECK(src.shape == (Shape{image_size, image_size}),
                 "classifier: image %s does not match configured %lldx%lld",
                 shape_str(src.shape).c_str(), static_cast<long long>(image_size),
                 static_cast<long long>(image_size));
    std::copy(src.data.begin(), src.data.end(),
              out.data.begin() + static_cast<int64_t>(i) * hw);
  }
  return out;
}

}  // namespace

std::vector<double> classifier_scores(const ResidualClassifier& net,
                                      const std::vector<Tensor<float>>& images) {
  NoGrad freeze;
  std::vector<double> scores;
  scores.reserve(images.size());
  std::vector<size_t> idx(images.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const size_t batch = 32;
  for (size_t start = 0; start < images.size(); start += batch) {
    const size_t count = std::min(batch, images.size() - start);
    Var<float> logits =
        net.forward(constant(gather(images, idx, start, count, net.image_size)));
    for (size_t i = 0; i < count; ++i) {
      const double z = static_cast<double>(logits.val()[static_cast<int64_t>(i)]);
      scores.push_back(1.0 / (1.0 + std::exp(-z)));
    }
  }
  return scores;
}

ClassifierTrainResult train_classifier(const std::vector<Tensor<float>>& train_images,
                                       const std::vector<int>& train_labels,
                                       const std::vector<Tensor<float>>& val_images,
                                       const std::vector<int>& val_labels,
                                       const ClassifierConfig& cfg, uint64_t seed,
                                       int64_t image_size) {
  SAGGAN_CHECK(train_images.size() == train_labels.size(),
               "train_classifier: %zu train images but %zu labels", train_images.size(),
               train_labels.size());
  SAGGAN_CHECK(val_images.size() == val_labels.size(),
               "train_classifier: %zu val images but %zu labels", val_images.size(),
               val_labels.size());
  SAGGAN_CHECK(!val_images.empty(), "train_classifier: empty validation set");
  int64_t n_pos = 0;
  for (int l : train_labels) {
    SAGGAN_CHECK(l == 0 || l == 1, "train_classifier: label %d not in {0,1}", l);
    n_pos += l;
  }
  SAGGAN_CHECK(n_pos > 0 && n_pos < static_cast<int64_t>(train_labels.size()),
               "train_classifier: training set contains a single class (%lld of %zu positive)",
               static_cast<long long>(n_pos), train_labels.size());

  ClassifierTrainResult result;
  Rng init_rng(derive_seed(seed, "clf-init"));
  result.net.init(image_size, init_rng);
  NamedParams<float> named = result.net.named_params();
  std::vector<Var<float>> params;
  for (auto& [name, p] : named) params.push_back(p);
  Adam<float> opt(params, cfg.learning_rate, cfg.beta1, cfg.beta2);
  Rng loop_rng(derive_seed(seed, "clf-loop"));

  std::vector<Tensor<float>> best_params;
  double best_acc = -1.0;
  int64_t best_epoch = 0;

  std::vector<size_t> idx(train_images.size());
  for (int64_t e = 1; e <= cfg.epochs; ++e) {
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    loop_rng.shuffle(idx);
    for (size_t start = 0; start < idx.size();
         start += static_cast<size_t>(cfg.batch_size)) {
      const size_t count =
          std::min(static_cast<size_t>(cfg.batch_size), idx.size() - start);
      Tensor<float> x = gather(train_images, idx, start, count, image_size);
      Tensor<float> y(Shape{static_cast<int64_t>(count), 1});
      for (size_t i = 0; i < count; ++i)
        y[static_cast<int64_t>(i)] = static_cast<float>(train_labels[idx[start + i]]);
      Var<float> loss = bce_with_logits(result.net.forward(constant(x)), constant(y));
      SAGGAN_CHECK(std::isfinite(loss.item()),
                   "train_classifier: non-finite loss at epoch %lld",
                   static_cast<long long>(e));
      opt.zero_grad();
      backward(loss);
      opt.step();
    }
    const std::vector<double> scores = classifier_scores(result.net, val_images);
    const double acc = accuracy(confusion(scores, val_labels));
    if (acc > best_acc) {  // strict: ties keep the earlier epoch
      best_acc = acc;
      best_epoch = e;
      best_params.clear();
      for (const auto& [name, p] : named) best_params.push_back(p.val());
    }
  }
  for (size_t k = 0; k < named.size(); ++k) named[k].second.val() = best_params[k];
  result.best_epoch = best_epoch;
  result.best_val_accuracy = best_acc;
  return result;
}

}  // namespace saggan
