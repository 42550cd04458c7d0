#pragma once

// 8-bit images and PNG encode/decode through libpng.

#include <png.h>

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "taue/core.hpp"
#include "taue/masks.hpp"

namespace taue {

// Interleaved 8-bit image with 1 (gray), 3 (RGB) or 4 (RGBA) channels.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {
    if (c != 1 && c != 3 && c != 4) throw InvalidArgument("images have 1, 3 or 4 channels");
  }

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }

  bool empty() const noexcept { return pixels.empty(); }
  friend bool operator==(const Image&, const Image&) = default;
};

// RGBA drops alpha; gray is replicated.
inline Image to_rgb(const Image& img) {
  if (img.channels == 3) return img;
  Image out(img.width, img.height, 3);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = img.channels == 1 ? img.at(y, x, 0) : img.at(y, x, c);
  return out;
}

// Gray image with 0/255 values, one pixel per mask cell.
template <typename Tag>
Image mask_to_image(const Mask<Tag>& m) {
  Image img(m.width(), m.height(), 1);
  for (std::size_t y = 0; y < m.height(); ++y)
    for (std::size_t x = 0; x < m.width(); ++x) img.at(y, x, 0) = m(y, x) ? 255 : 0;
  return img;
}

template <typename Tag>
Mask<Tag> image_to_mask(const Image& img) {
  if (img.channels != 1) throw InvalidArgument("mask images are single-channel");
  Mask<Tag> m(img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) m.set(y, x, img.at(y, x, 0) >= 128);
  return m;
}

// Nearest-neighbour upscale of a latent-resolution mask to image resolution.
template <typename Tag>
Mask<Tag> upscale_mask(const Mask<Tag>& m, std::size_t factor) {
  Mask<Tag> out(m.height() * factor, m.width() * factor);
  for (std::size_t y = 0; y < out.height(); ++y)
    for (std::size_t x = 0; x < out.width(); ++x) out.set(y, x, m(y / factor, x / factor));
  return out;
}

namespace detail {

struct PngWriteBuffer {
  std::vector<std::uint8_t> bytes;
};

inline void png_write_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* buf = static_cast<PngWriteBuffer*>(png_get_io_ptr(png));
  buf->bytes.insert(buf->bytes.end(), data, data + len);
}

inline void png_flush_cb(png_structp) {}

struct PngReadCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t offset = 0;
};

inline void png_read_cb(png_structp png, png_bytep out, png_size_t len) {
  auto* cur = static_cast<PngReadCursor*>(png_get_io_ptr(png));
  if (cur->offset + len > cur->bytes.size()) png_error(png, "truncated PNG");
  std::memcpy(out, cur->bytes.data() + cur->offset, len);
  cur->offset += len;
}

inline void png_error_cb(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  if (err) *err = msg;
  png_longjmp(png, 1);
}

inline void png_warning_cb(png_structp, png_const_charp) {}

}  // namespace detail

// Encodes to PNG. `one_bit` packs a gray image thresholded at 128 into a 1-bit PNG.
inline std::vector<std::uint8_t> encode_png(const Image& img, bool one_bit = false) {
  if (img.width == 0 || img.height == 0) throw InvalidArgument("cannot encode an empty image");
  if (one_bit && img.channels != 1) throw InvalidArgument("1-bit PNG needs a single-channel image");
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_cb, detail::png_warning_cb);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  detail::PngWriteBuffer out;
  std::vector<std::vector<std::uint8_t>> rows;
  std::vector<png_bytep> row_ptrs;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encode failed: " + err);
  }
  const int color = img.channels == 1 ? PNG_COLOR_TYPE_GRAY : img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_RGBA;
  png_set_write_fn(png, &out, detail::png_write_cb, detail::png_flush_cb);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), one_bit ? 1 : 8, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  rows.resize(img.height);
  for (std::size_t y = 0; y < img.height; ++y) {
    if (one_bit) {
      rows[y].assign((img.width + 7) / 8, 0);
      for (std::size_t x = 0; x < img.width; ++x)
        if (img.at(y, x, 0) >= 128) rows[y][x / 8] |= static_cast<std::uint8_t>(0x80u >> (x % 8));
    } else {
      const auto* begin = img.pixels.data() + y * img.width * img.channels;
      rows[y].assign(begin, begin + img.width * img.channels);
    }
    row_ptrs.push_back(rows[y].data());
  }
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return std::move(out.bytes);
}

// Decodes gray/RGB/RGBA PNGs (any bit depth is reduced or expanded to 8 bits;
// 1-bit gray expands to 0/255).
inline Image decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw IoError("not a PNG stream");
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_cb, detail::png_warning_cb);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  detail::PngReadCursor cursor{bytes, 0};
  Image img;
  std::vector<png_bytep> row_ptrs;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("PNG decode failed: " + err);
  }
  png_set_read_fn(png, &cursor, detail::png_read_cb);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const std::size_t channels = png_get_channels(png, info);
  img = Image(png_get_image_width(png, info), png_get_image_height(png, info), channels);
  for (std::size_t y = 0; y < img.height; ++y) row_ptrs.push_back(img.pixels.data() + y * img.width * channels);
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline void save_png(const std::string& path, const Image& img, bool one_bit = false) {
  const auto bytes = encode_png(img, one_bit);
  write_file_bytes(path, std::as_bytes(std::span(bytes)));
}

inline Image load_png(const std::string& path) {
  const auto raw = read_file_bytes(path);
  return decode_png(std::span(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()));
}

}  // namespace taue
