#pragma once

// 8-bit grayscale and RGB images with PNG encode/decode (libpng).

#include <png.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "neuronav/error.hpp"
#include "neuronav/volume.hpp"

namespace neuronav {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0) : width(w), height(h), pixels(std::size_t(w) * std::size_t(h), fill) {}

  std::uint8_t& at(int x, int y) { return pixels[std::size_t(y) * std::size_t(width) + std::size_t(x)]; }
  std::uint8_t at(int x, int y) const { return pixels[std::size_t(y) * std::size_t(width) + std::size_t(x)]; }

  /// Bilinear sample at a sub-pixel position; pixel centres sit on integer coordinates.
  double sample(double x, double y) const {
    x = std::clamp(x, 0.0, double(width - 1));
    y = std::clamp(y, 0.0, double(height - 1));
    const int x0 = std::min(int(x), width - 2 < 0 ? 0 : width - 2);
    const int y0 = std::min(int(y), height - 2 < 0 ? 0 : height - 2);
    const int x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
    const double fx = x - x0, fy = y - y0;
    const double top = at(x0, y0) * (1 - fx) + at(x1, y0) * fx;
    const double bottom = at(x0, y1) * (1 - fx) + at(x1, y1) * fx;
    return top * (1 - fy) + bottom * fy;
  }

  bool operator==(const GrayImage&) const = default;
};

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 3 bytes per pixel

  RgbImage() = default;
  RgbImage(int w, int h, std::array<std::uint8_t, 3> fill = {0, 0, 0})
      : width(w), height(h), pixels(std::size_t(w) * std::size_t(h) * 3) {
    for (std::size_t i = 0; i < pixels.size(); i += 3) std::memcpy(&pixels[i], fill.data(), 3);
  }

  std::uint8_t* at(int x, int y) { return &pixels[(std::size_t(y) * std::size_t(width) + std::size_t(x)) * 3]; }
  const std::uint8_t* at(int x, int y) const {
    return &pixels[(std::size_t(y) * std::size_t(width) + std::size_t(x)) * 3];
  }

  static RgbImage from_gray(const GrayImage& g) {
    RgbImage out(g.width, g.height);
    for (std::size_t i = 0; i < g.pixels.size(); ++i) {
      out.pixels[3 * i] = out.pixels[3 * i + 1] = out.pixels[3 * i + 2] = g.pixels[i];
    }
    return out;
  }

  bool operator==(const RgbImage&) const = default;
};

namespace png_detail {

struct ReadCursor {
  std::span<const std::uint8_t> data;
  std::size_t pos = 0;
};

inline void on_error(png_structp png, png_const_charp msg) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text) *text = msg;
  png_longjmp(png, 1);
}

inline void on_warning(png_structp, png_const_charp) {}

inline void write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

inline void flush_noop(png_structp) {}

inline void read_from_cursor(png_structp png, png_bytep data, png_size_t length) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + length > cur->data.size()) png_error(png, "truncated PNG");
  std::memcpy(data, cur->data.data() + cur->pos, length);
  cur->pos += length;
}

inline std::vector<std::uint8_t> encode(int width, int height, int color_type, int channels,
                                        const std::vector<std::uint8_t>& pixels) {
  std::vector<std::uint8_t> out;
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, on_error, on_warning);
  if (!png) throw Error(ErrorCode::IoError, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoError, "PNG encode failed: " + message);
  }
  png_set_write_fn(png, &out, write_to_vector, flush_noop);
  png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = std::size_t(width) * std::size_t(channels);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() + std::size_t(y) * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

/// Decodes any PNG to 8-bit gray (channels 1) or RGB (channels 3).
inline std::vector<std::uint8_t> decode(std::span<const std::uint8_t> bytes, int channels, int& width, int& height) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw Error(ErrorCode::ParseError, "not a PNG file");
  ReadCursor cursor{bytes, 0};
  std::string message;
  std::vector<std::uint8_t> pixels;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, on_error, on_warning);
  if (!png) throw Error(ErrorCode::IoError, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::ParseError, "PNG decode failed: " + message);
  }
  png_set_read_fn(png, &cursor, read_from_cursor);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  png_set_strip_16(png);
  png_set_packing(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  const bool source_gray = color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA;
  if (channels == 1 && !source_gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (channels == 3 && source_gray) png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  width = int(png_get_image_width(png, info));
  height = int(png_get_image_height(png, info));
  const std::size_t stride = png_get_rowbytes(png, info);
  if (stride != std::size_t(width) * std::size_t(channels)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::ParseError, "unexpected PNG row layout");
  }
  pixels.resize(stride * std::size_t(height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) rows[std::size_t(y)] = pixels.data() + std::size_t(y) * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return pixels;
}

}  // namespace png_detail

inline std::vector<std::uint8_t> encode_png(const GrayImage& img) {
  return png_detail::encode(img.width, img.height, PNG_COLOR_TYPE_GRAY, 1, img.pixels);
}

inline std::vector<std::uint8_t> encode_png(const RgbImage& img) {
  return png_detail::encode(img.width, img.height, PNG_COLOR_TYPE_RGB, 3, img.pixels);
}

inline GrayImage decode_png_gray(std::span<const std::uint8_t> bytes) {
  GrayImage img;
  img.pixels = png_detail::decode(bytes, 1, img.width, img.height);
  return img;
}

inline RgbImage decode_png_rgb(std::span<const std::uint8_t> bytes) {
  RgbImage img;
  img.pixels = png_detail::decode(bytes, 3, img.width, img.height);
  return img;
}

inline void write_png(const GrayImage& img, const std::filesystem::path& path) { write_file_bytes(path, encode_png(img)); }
inline void write_png(const RgbImage& img, const std::filesystem::path& path) { write_file_bytes(path, encode_png(img)); }
inline GrayImage read_png_gray(const std::filesystem::path& path) { return decode_png_gray(read_file_bytes(path)); }
inline RgbImage read_png_rgb(const std::filesystem::path& path) { return decode_png_rgb(read_file_bytes(path)); }

}  // namespace neuronav
