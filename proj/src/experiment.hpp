// SPDX-License-Identifier: Apache-2.0
//
// The augmentation experiment: five arms (no augmentation, classic
// transforms, oversampling, undersampling, GAN synthesis) trained and
// evaluated under an identical classifier protocol across several seeds.
#pragma once

#include <string>
#include <vector>

#include "classifier.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "metrics.hpp"
#include "train.hpp"

namespace saggan {

struct ArmResult {
  std::string arm;
  uint64_t seed = 0;
  double accuracy = 0;
  double auc = 0;
  double tpr = 0;
  double tnr = 0;
  ConfusionCounts conf;
};

struct ExperimentReport {
  std::vector<ArmResult> rows;  // grouped by arm, seeds in ascending order
  RunConfig config;
};

// `gan_models` is required iff the config lists the sag_gan arm. Tumor
// scarcity (experiment.tumor_keep_fraction) applies to the train split before
// any arm-specific balancing; val/test splits stay untouched.
ExperimentReport run_experiment(const std::vector<SampleRecord>& dataset, const RunConfig& cfg,
                                const Models<float>* gan_models);

// Writes report.csv (one row per arm/seed) and report.json (per-arm means,
// summed confusion counts, per-seed detail, config echo) into `dir`.
void write_report(const ExperimentReport& report, const std::string& dir);

}  // namespace saggan
