// SPDX-License-Identifier: Apache-2.0
#pragma once

// 8-bit grayscale PNG I/O. Images map [-1,1] <-> [0,255] (round to nearest),
// masks map {0,1} <-> {0,255} and must survive the round trip exactly.

#include <string>

#include "saggan/tensor.hpp"

namespace saggan {

void write_gray_png(const std::string& path, const Tensor<unsigned char>& img);  // [H,W]
Tensor<unsigned char> read_gray_png(const std::string& path);                    // [H,W]

void save_image_png(const std::string& path, const Tensor<float>& img);  // values in [-1,1]
Tensor<float> load_image_png(const std::string& path);

void save_mask_png(const std::string& path, const Tensor<float>& mask);  // values in {0,1}
Tensor<float> load_mask_png(const std::string& path);

}  // namespace saggan
