// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one JSON document with sections `data`, `gan`,
// `classifier`, `experiment`. Every field has a default, unknown keys are
// rejected with their full path, and the fully-resolved document hashes to a
// canonical hex digest that stamps all artifacts.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "saggan/common.hpp"

namespace saggan {

struct DataConfig {
  int64_t n_samples = 400;
  int64_t image_size = 64;
  double tumor_fraction = 0.5;
  int64_t bumps_min = 5;
  int64_t bumps_max = 15;
  double noise_amp = 0.02;
  double lesion_amp_min = 0.4;
  double lesion_amp_max = 0.9;
  double lesion_radius_min = 0.08;
  double lesion_radius_max = 0.25;
  std::array<double, 3> split_ratios{0.70, 0.20, 0.10};
};

struct GanConfig {
  int64_t epochs = 30;
  int64_t batch_size = 4;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double lambda_gan = 1.0;
  double lambda_cyc = 10.0;
  int64_t image_size = 64;
  int64_t blocks = 4;  // AMSE residual blocks in each generator
  int64_t checkpoint_every = 10;
  bool attention_supervision = true;
  double mask_threshold = 0.5;  // pseudo-mask binarization for synthesis
};

struct ClassifierConfig {
  int64_t epochs = 20;
  int64_t batch_size = 16;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
};

struct ExperimentConfig {
  double tumor_keep_fraction = 0.25;
  int64_t n_seeds = 3;
  std::vector<std::string> arms{"no_da", "classic_da", "oversample", "undersample", "sag_gan"};
};

struct RunConfig {
  uint64_t seed = 1234;
  DataConfig data;
  GanConfig gan;
  ClassifierConfig classifier;
  ExperimentConfig experiment;
};

// Applies `doc` over the defaults. Unknown keys, type mismatches, and
// constraint violations throw ValidationError naming the key path.
RunConfig parse_config_json(const nlohmann::json& doc);
RunConfig parse_config(const std::string& path);

// Fully-resolved document (defaults filled in); key order is canonical.
nlohmann::json config_to_json(const RunConfig& cfg);

// FNV-1a 64-bit hex digest of the canonical compact dump.
std::string config_hash(const RunConfig& cfg);

}  // namespace saggan
