// SPDX-License-Identifier: Apache-2.0
#include "pngio.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace saggan {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void fail(const std::string& what, const std::string& path) {
  throw std::runtime_error(what + ": " + path);
}

}  // namespace

void write_gray_png(const std::string& path, const Tensor<unsigned char>& img) {
  SAGGAN_CHECK(img.shape.size() == 2 && img.shape[0] >= 1 && img.shape[1] >= 1,
               "write_gray_png: expected [H,W], got %s", shape_str(img.shape).c_str());
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail("cannot open PNG for writing", path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail("png_create_write_struct failed", path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail("png_create_info_struct failed", path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("libpng write error", path);
  }
  png_init_io(png, fp.get());
  const int h = static_cast<int>(img.shape[0]);
  const int w = static_cast<int>(img.shape[1]);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int r = 0; r < h; ++r)
    rows[static_cast<size_t>(r)] = const_cast<png_bytep>(img.ptr() + r * w);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor<unsigned char> read_gray_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail("cannot open PNG", path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail("png_create_read_struct failed", path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail("png_create_info_struct failed", path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("libpng read error", path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  // normalize any input to 8-bit grayscale
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray(png, 1, -1, -1);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int w = static_cast<int>(png_get_image_width(png, info));
  Tensor<unsigned char> img(Shape{h, w});
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int r = 0; r < h; ++r) rows[static_cast<size_t>(r)] = img.ptr() + r * w;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void save_image_png(const std::string& path, const Tensor<float>& img) {
  Tensor<unsigned char> q(img.shape);
  for (int64_t i = 0; i < img.size(); ++i) {
    const float v = std::min(1.0f, std::max(-1.0f, img[i]));
    q[i] = static_cast<unsigned char>(std::lround((v + 1.0f) * 0.5f * 255.0f));
  }
  write_gray_png(path, q);
}

Tensor<float> load_image_png(const std::string& path) {
  Tensor<unsigned char> q = read_gray_png(path);
  Tensor<float> img(q.shape);
  for (int64_t i = 0; i < q.size(); ++i)
    img[i] = static_cast<float>(q[i]) / 255.0f * 2.0f - 1.0f;
  return img;
}

void save_mask_png(const std::string& path, const Tensor<float>& mask) {
  Tensor<unsigned char> q(mask.shape);
  for (int64_t i = 0; i < mask.size(); ++i) {
    SAGGAN_CHECK(mask[i] == 0.0f || mask[i] == 1.0f,
                 "save_mask_png: mask entry %g at %lld is not binary",
                 static_cast<double>(mask[i]), static_cast<long long>(i));
    q[i] = mask[i] == 1.0f ? 255 : 0;
  }
  write_gray_png(path, q);
}

Tensor<float> load_mask_png(const std::string& path) {
  Tensor<unsigned char> q = read_gray_png(path);
  Tensor<float> mask(q.shape);
  for (int64_t i = 0; i < q.size(); ++i) {
    if (q[i] != 0 && q[i] != 255)
      throw std::runtime_error("mask PNG has non-binary pixel value " + std::to_string(q[i]) +
                               ": " + path);
    mask[i] = q[i] == 255 ? 1.0f : 0.0f;
  }
  return mask;
}

}  // namespace saggan
