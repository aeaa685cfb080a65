// SPDX-License-Identifier: Apache-2.0
//
// Classification metrics: confusion counts, accuracy, TPR/TNR, tie-adjusted
// AUC via exact pair counting, and mask-overlap Dice.
#pragma once

#include <cstdint>
#include <vector>

#include "saggan/common.hpp"
#include "saggan/tensor.hpp"

namespace saggan {

struct ConfusionCounts {
  int64_t tp = 0;
  int64_t fp = 0;
  int64_t tn = 0;
  int64_t fn = 0;
  int64_t total() const { return tp + fp + tn + fn; }
};

// Predicted-positive iff score >= threshold.
ConfusionCounts confusion(const std::vector<double>& scores, const std::vector<int>& labels,
                          double threshold = 0.5);

double accuracy(const ConfusionCounts& c);
// TP/(TP+FN); throws when no positive samples exist.
double tpr(const ConfusionCounts& c);
// TN/(TN+FP); throws when no negative samples exist.
double tnr(const ConfusionCounts& c);

// Probability a random positive outscores a random negative, ties counted
// half. Exact pair counting; throws when either class is absent.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// 2|A∩B| / (|A|+|B|) for binary masks; 1.0 when both are empty.
double dice(const Tensor<float>& a, const Tensor<float>& b);

}  // namespace saggan
