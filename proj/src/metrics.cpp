// SPDX-License-Identifier: Apache-2.0
#include "metrics.hpp"

#include <algorithm>
#include <numeric>

namespace saggan {

namespace {

void check_labels(const std::vector<double>& scores, const std::vector<int>& labels,
                  const char* who) {
  SAGGAN_CHECK(scores.size() == labels.size(), "%s: %zu scores but %zu labels", who,
               scores.size(), labels.size());
  SAGGAN_CHECK(!scores.empty(), "%s: empty input", who);
  for (size_t i = 0; i < labels.size(); ++i)
    SAGGAN_CHECK(labels[i] == 0 || labels[i] == 1, "%s: label %d at index %zu not in {0,1}",
                 who, labels[i], i);
}

}  // namespace

ConfusionCounts confusion(const std::vector<double>& scores, const std::vector<int>& labels,
                          double threshold) {
  check_labels(scores, labels, "confusion");
  ConfusionCounts c;
  for (size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i] == 1)
      (pred ? c.tp : c.fn)++;
    else
      (pred ? c.fp : c.tn)++;
  }
  return c;
}

double accuracy(const ConfusionCounts& c) {
  SAGGAN_CHECK(c.total() > 0, "accuracy undefined: no evaluated samples");
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

double tpr(const ConfusionCounts& c) {
  SAGGAN_CHECK(c.tp + c.fn > 0, "TPR undefined: no positive samples");
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

double tnr(const ConfusionCounts& c) {
  SAGGAN_CHECK(c.tn + c.fp > 0, "TNR undefined: no negative samples");
  return static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_labels(scores, labels, "auc");
  const int64_t n = static_cast<int64_t>(scores.size());
  int64_t pos = std::accumulate(labels.begin(), labels.end(), int64_t{0});
  int64_t neg = n - pos;
  SAGGAN_CHECK(pos > 0 && neg > 0, "auc undefined: only one class present (%lld positives)",
               static_cast<long long>(pos));

  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int64_t a, int64_t b) { return scores[static_cast<size_t>(a)] <
                                               scores[static_cast<size_t>(b)]; });

  // Walk tie groups in ascending score order. Each positive in a group beats
  // every negative strictly below (2 half-units) and ties every negative in
  // its own group (1 half-unit).
  int64_t numer_half = 0;  // counted in half-pairs
  int64_t neg_below = 0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    int64_t gp = 0, gn = 0;
    const double s = scores[static_cast<size_t>(order[i])];
    while (j < order.size() && scores[static_cast<size_t>(order[j])] == s) {
      (labels[static_cast<size_t>(order[j])] == 1 ? gp : gn)++;
      ++j;
    }
    numer_half += gp * (2 * neg_below + gn);
    neg_below += gn;
    i = j;
  }
  return static_cast<double>(numer_half) / static_cast<double>(2 * pos * neg);
}

double dice(const Tensor<float>& a, const Tensor<float>& b) {
  check_same_shape(a, b, "dice");
  int64_t inter = 0, sa = 0, sb = 0;
  for (int64_t i = 0; i < a.size(); ++i) {
    const bool pa = a[i] != 0.0f, pb = b[i] != 0.0f;
    SAGGAN_CHECK((a[i] == 0.0f || a[i] == 1.0f) && (b[i] == 0.0f || b[i] == 1.0f),
                 "dice: non-binary entry at index %lld", static_cast<long long>(i));
    inter += pa && pb;
    sa += pa;
    sb += pb;
  }
  if (sa + sb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(sa + sb);
}

}  // namespace saggan
