// SPDX-License-Identifier: Apache-2.0
//
// Classic geometric augmentation: crop-and-resize, rotation, flip, and
// translation applied as a single composite affine map so image and mask stay
// aligned.
#pragma once

#include <utility>

#include "saggan/common.hpp"
#include "saggan/tensor.hpp"

namespace saggan {

struct AugmentSpec {
  bool flip = false;          // horizontal mirror
  double rotate_deg = 0.0;    // clamped to [-15, 15]
  double translate_x = 0.0;   // fraction of width, clamped to [-0.1, 0.1]
  double translate_y = 0.0;   // fraction of height, clamped to [-0.1, 0.1]
  double crop_scale = 1.0;    // central crop-and-resize scale, clamped to [0.8, 1]
};

AugmentSpec random_augment_spec(Rng& rng);

// Applies the spec to a [H,W] image in [-1,1] and (optionally) its binary
// mask. Out-of-frame regions fill with -1 (image) and 0 (mask); the mask is
// re-binarized at 0.5 after interpolation. Degenerate spec values are clamped
// to the supported ranges rather than rejected. Returns (image', mask'); the
// mask slot is an empty tensor when no mask was given.
std::pair<Tensor<float>, Tensor<float>> classic_augment(const Tensor<float>& image,
                                                        const Tensor<float>* mask,
                                                        AugmentSpec spec);

}  // namespace saggan
