#pragma once

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "hta/tensor.hpp"

// 8-bit PNG <-> tensor bridge. Pixel byte k maps to the double k/255; writing
// rounds and clamps, so tensors quantized to the 8-bit grid round-trip
// exactly. Only 8-bit gray and RGB content is accepted (palette images are
// expanded, alpha is dropped); anything else is rejected.

namespace hta {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void png_error_to_exception(png_structp, png_const_charp msg) {
  throw std::runtime_error(std::string("png: ") + msg);
}

inline void png_warning_ignore(png_structp, png_const_charp) {}

}  // namespace detail

inline Tensor read_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open for read: " + path);

  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw std::runtime_error("not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           detail::png_error_to_exception,
                                           detail::png_warning_ignore);
  if (!png) throw std::runtime_error("png: allocation failure");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png: allocation failure");
  }

  try {
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const png_uint_32 height = png_get_image_height(png, info);
    const png_uint_32 width = png_get_image_width(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);

    if (bit_depth == 16)
      throw std::runtime_error("unsupported bit depth 16 in " + path);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8)
      png_set_expand_gray_1_2_4_to_8(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS))
      png_set_tRNS_to_alpha(png), png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const png_uint_32 channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3)
      throw std::runtime_error("unsupported channel count " +
                               std::to_string(channels) + " in " + path);
    const std::size_t row_bytes = png_get_rowbytes(png, info);
    std::vector<unsigned char> pixels(row_bytes * height);
    std::vector<png_bytep> rows(height);
    for (png_uint_32 r = 0; r < height; ++r)
      rows[r] = pixels.data() + r * row_bytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor t(Shape{height, width, channels});
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<double>(pixels[i]) / 255.0;
    return t;
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
}

inline std::vector<unsigned char> quantize_bytes(const Tensor& t) {
  std::vector<unsigned char> bytes(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    double v = std::min(std::max(t[i], 0.0), 1.0);
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  return bytes;
}

inline void write_png(const std::string& path, const Tensor& t) {
  if (t.shape().size() != 3 || (t.shape()[2] != 1 && t.shape()[2] != 3))
    throw std::invalid_argument(
        "write_png: need an (H, W, C) tensor with C in {1, 3}");
  const std::size_t height = t.shape()[0], width = t.shape()[1],
                    channels = t.shape()[2];

  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open for write: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            detail::png_error_to_exception,
                                            detail::png_warning_ignore);
  if (!png) throw std::runtime_error("png: allocation failure");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png: allocation failure");
  }

  try {
    png_init_io(png, fp.get());
    // Pinned encoder settings: the bytes written are a pure function of the
    // pixel data, which the reproducibility tests rely on.
    png_set_compression_level(png, 6);
    png_set_filter(png, 0, PNG_FILTER_NONE);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width),
                 static_cast<png_uint_32>(height), 8,
                 channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    const std::vector<unsigned char> bytes = quantize_bytes(t);
    std::vector<png_bytep> rows(height);
    for (std::size_t r = 0; r < height; ++r)
      rows[r] = const_cast<png_bytep>(bytes.data() + r * width * channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
}

}  // namespace hta
