// SPDX-License-Identifier: Apache-2.0
#include "augment.hpp"

#include <algorithm>
#include <cmath>

namespace saggan {

AugmentSpec random_augment_spec(Rng& rng) {
  AugmentSpec s;
  s.flip = rng.uniform() < 0.5;
  s.rotate_deg = rng.uniform(-15.0, 15.0);
  s.translate_x = rng.uniform(-0.10, 0.10);
  s.translate_y = rng.uniform(-0.10, 0.10);
  s.crop_scale = rng.uniform(0.8, 1.0);
  return s;
}

namespace {

float bilinear(const Tensor<float>& img, double x, double y, float fill) {
  const int64_t h = img.shape[0], w = img.shape[1];
  const int64_t x0 = static_cast<int64_t>(std::floor(x));
  const int64_t y0 = static_cast<int64_t>(std::floor(y));
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  auto px = [&](int64_t xi, int64_t yi) -> double {
    if (xi < 0 || xi >= w || yi < 0 || yi >= h) return fill;
    return img[yi * w + xi];
  };
  const double top = px(x0, y0) * (1.0 - fx) + px(x0 + 1, y0) * fx;
  const double bot = px(x0, y0 + 1) * (1.0 - fx) + px(x0 + 1, y0 + 1) * fx;
  return static_cast<float>(top * (1.0 - fy) + bot * fy);
}

}  // namespace

std::pair<Tensor<float>, Tensor<float>> classic_augment(const Tensor<float>& image,
                                                        const Tensor<float>* mask,
                                                        AugmentSpec spec) {
  SAGGAN_CHECK(image.shape.size() == 2, "classic_augment: expected [H,W] image, got %s",
               shape_str(image.shape).c_str());
  if (mask) check_same_shape(image, *mask, "classic_augment image/mask");

  spec.rotate_deg = std::clamp(spec.rotate_deg, -15.0, 15.0);
  spec.translate_x = std::clamp(spec.translate_x, -0.10, 0.10);
  spec.translate_y = std::clamp(spec.translate_y, -0.10, 0.10);
  spec.crop_scale = std::clamp(spec.crop_scale, 0.8, 1.0);

  const int64_t h = image.shape[0], w = image.shape[1];
  const double cx = 0.5 * static_cast<double>(w - 1);
  const double cy = 0.5 * static_cast<double>(h - 1);
  const double theta = spec.rotate_deg * M_PI / 180.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  const double tx = spec.translate_x * static_cast<double>(w);
  const double ty = spec.translate_y * static_cast<double>(h);

  Tensor<float> out_img(image.shape);
  Tensor<float> out_mask;
  if (mask) out_mask = Tensor<float>(image.shape);

  // Forward order: crop-resize, rotate, translate, flip. Each output pixel is
  // pulled through the inverse chain and sampled bilinearly.
  for (int64_t yo = 0; yo < h; ++yo)
    for (int64_t xo = 0; xo < w; ++xo) {
      double x = static_cast<double>(xo);
      double y = static_cast<double>(yo);
      if (spec.flip) x = static_cast<double>(w - 1) - x;
      x -= tx;
      y -= ty;
      const double dx = x - cx, dy = y - cy;
      // inverse rotation
      double rx = ct * dx + st * dy;
      double ry = -st * dx + ct * dy;
      // inverse crop-and-resize (scale toward the center)
      x = cx + spec.crop_scale * rx;
      y = cy + spec.crop_scale * ry;
      out_img[yo * w + xo] = std::clamp(bilinear(image, x, y, -1.0f), -1.0f, 1.0f);
      if (mask) out_mask[yo * w + xo] = bilinear(*mask, x, y, 0.0f) >= 0.5f ? 1.0f : 0.0f;
    }
  return {std::move(out_img), std::move(out_mask)};
}

}  // namespace saggan
