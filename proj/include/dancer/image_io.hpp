#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "dancer/errors.hpp"
#include "dancer/tensor.hpp"

namespace dancer {

/// 8-bit quantization used everywhere an image crosses a file boundary:
/// intensities map linearly to [0,1], round-to-nearest on write.
inline std::uint8_t to_byte(float v) {
  if (v <= 0.0f) return 0;
  if (v >= 1.0f) return 255;
  return static_cast<std::uint8_t>(v * 255.0f + 0.5f);
}

inline float from_byte(std::uint8_t b) { return static_cast<float>(b) / 255.0f; }

namespace detail {

struct PngCloser {
  std::FILE* f = nullptr;
  ~PngCloser() {
    if (f) std::fclose(f);
  }
};

}  // namespace detail

/// Writes [h,w,c] float tensor (c = 1 or 3) as an 8-bit PNG.
inline void write_png(const std::string& path, const Tensor& img) {
  if (img.rank() != 3 || (img.dim(2) != 1 && img.dim(2) != 3))
    throw DataError("write_png: expected [h,w,1] or [h,w,3], got " + shape_str(img.shape));
  const int h = img.dim(0), w = img.dim(1), c = img.dim(2);

  detail::PngCloser fc;
  fc.f = std::fopen(path.c_str(), "wb");
  if (!fc.f) throw DataError("write_png: cannot open " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("write_png: libpng failure for " + path);
  }
  png_init_io(png, fc.f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        row[static_cast<std::size_t>(x) * c + ch] =
            to_byte(img.at((static_cast<std::size_t>(y) * w + x) * c + ch));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Reads an 8-bit PNG into [h,w,c] float, c = 1 (gray) or 3 (color). Palette
/// and 16-bit inputs are normalized to 8-bit; alpha is stripped.
inline Tensor read_png(const std::string& path) {
  detail::PngCloser fc;
  fc.f = std::fopen(path.c_str(), "rb");
  if (!fc.f) throw DataError("read_png: cannot open " + path);

  png_byte header[8];
  if (std::fread(header, 1, 8, fc.f) != 8 || png_sig_cmp(header, 0, 8))
    throw DataError("read_png: not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("read_png: libpng failure for " + path);
  }
  png_init_io(png, fc.f);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int c = static_cast<int>(png_get_channels(png, info));
  if (c != 1 && c != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("read_png: unsupported channel count " + std::to_string(c) + " in " + path);
  }

  auto img = Tensor::zeros({h, w, c});
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * c);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        img.at((static_cast<std::size_t>(y) * w + x) * c + ch) =
            from_byte(row[static_cast<std::size_t>(x) * c + ch]);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

/// Mean over the channel axis: [h,w,c] -> [h,w,1].
inline Tensor to_grayscale(const Tensor& img) {
  if (img.rank() != 3) throw DimensionError("to_grayscale: expected [h,w,c]");
  const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
  if (c == 1) return img;
  auto out = Tensor::zeros({h, w, 1});
  for (int i = 0; i < h * w; ++i) {
    double acc = 0.0;
    for (int ch = 0; ch < c; ++ch) acc += img.at(static_cast<std::size_t>(i) * c + ch);
    out.at(static_cast<std::size_t>(i)) = static_cast<float>(acc / c);
  }
  return out;
}

}  // namespace dancer
