// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic single-channel phantoms with ground-truth lesion masks: a textured
// elliptical "skull" on a dark background, tumor samples carrying one bright
// soft-edged elliptical lesion whose hard support is the mask.

#include <string>
#include <vector>

#include "saggan/common.hpp"
#include "saggan/tensor.hpp"

namespace saggan {

enum class Domain { normal, tumor };

inline const char* domain_name(Domain d) { return d == Domain::tumor ? "tumor" : "normal"; }

struct SampleRecord {
  std::string id;
  Tensor<float> image;  // [H,W], values in [-1,1]
  Domain domain = Domain::normal;
  Tensor<float> mask;   // [H,W] in {0,1}; empty unless domain == tumor
  int label = 0;        // 0 normal, 1 tumor
  std::string split;    // "", "train", "val", "test"
};

struct LesionParams {
  double amp_min = 0.4;
  double amp_max = 0.9;
  double radius_min_frac = 0.08;  // semi-axis bounds as fraction of image size
  double radius_max_frac = 0.25;
};

struct PhantomParams {
  int64_t bumps_min = 5;
  int64_t bumps_max = 15;
  double noise_amp = 0.02;
  LesionParams lesion;
};

std::vector<SampleRecord> generate_phantom(uint64_t seed, int64_t n_samples, int64_t image_size,
                                           double tumor_fraction,
                                           const PhantomParams& params = {});

// Oracle separability margin: mean intensity inside the mask minus mean over
// the rest of the skull interior. Requires a tumor record.
double lesion_contrast_margin(const SampleRecord& rec);

}  // namespace saggan
