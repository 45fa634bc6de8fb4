#pragma once

#include "volgauss/errors.hpp"
#include "volgauss/image.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace volgauss::io {

// ---------------------------------------------------------------------------
// PFM: float32, rows stored bottom to top, negative scale = little endian.

inline std::string pfm_bytes(const Image& im) {
  if (im.channels != 1 && im.channels != 3) throw ValidationError("pfm: only 1 or 3 channels");
  std::string out = (im.channels == 3 ? "PF\n" : "Pf\n") + std::to_string(im.width) + " " +
                    std::to_string(im.height) + "\n-1.0\n";
  const std::size_t row = static_cast<std::size_t>(im.width) * im.channels;
  std::vector<float> buf(row);
  for (int y = im.height - 1; y >= 0; --y) {
    for (std::size_t i = 0; i < row; ++i) buf[i] = static_cast<float>(im.data[y * row + i]);
    if constexpr (std::endian::native == std::endian::big)
      for (float& f : buf) f = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(f)));
    out.append(reinterpret_cast<const char*>(buf.data()), row * sizeof(float));
  }
  return out;
}

inline Image parse_pfm(const std::string& bytes, const std::string& source) {
  std::istringstream in(bytes);
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  in >> magic >> w >> h >> scale;
  if (!in || (magic != "PF" && magic != "Pf") || w <= 0 || h <= 0 || scale == 0.0)
    throw ValidationError(source + ": not a valid PFM header");
  in.get();  // single whitespace before the raster
  const int c = magic == "PF" ? 3 : 1;
  const std::size_t row = static_cast<std::size_t>(w) * c;
  const std::size_t offset = static_cast<std::size_t>(in.tellg());
  if (bytes.size() < offset + row * h * sizeof(float)) throw ValidationError(source + ": PFM raster is truncated");
  const bool little = scale < 0.0;
  Image im(w, h, c);
  std::vector<float> buf(row);
  for (int r = 0; r < h; ++r) {
    std::memcpy(buf.data(), bytes.data() + offset + r * row * sizeof(float), row * sizeof(float));
    const bool swap = little != (std::endian::native == std::endian::little);
    for (std::size_t i = 0; i < row; ++i) {
      float f = buf[i];
      if (swap) f = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(f)));
      im.data[(h - 1 - r) * row + i] = f;
    }
  }
  return im;
}

inline void write_pfm(const std::string& path, const Image& im) {
  std::ofstream out(path, std::ios::binary);
  const std::string b = pfm_bytes(im);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
  if (!out) throw ValidationError(path + ": cannot write file");
}

inline Image read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(path + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_pfm(ss.str(), path);
}

// ---------------------------------------------------------------------------
// PNG, 8 bit, values clamped to [0, 1] and rounded.

inline std::uint8_t to_byte(double v) {
  if (!(v > 0.0)) return 0;
  if (v >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

namespace detail {
struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
}  // namespace detail

inline void write_png(const std::string& path, const Image& im) {
  if (im.channels != 1 && im.channels != 3) throw ValidationError("png: only 1 or 3 channels");
  std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "wb"));
  if (!f) throw ValidationError(path + ": cannot write file");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw ValidationError(path + ": libpng init failed");
  }
  std::vector<std::uint8_t> rows(im.data.size());
  std::transform(im.data.begin(), im.data.end(), rows.begin(), to_byte);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ValidationError(path + ": png write failed");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, im.width, im.height, 8, im.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(im.width) * im.channels;
  for (int y = 0; y < im.height; ++y) png_write_row(png, rows.data() + y * stride);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Reads 8 or 16 bit gray/RGB(A) PNG into [0, 1]; alpha is dropped.
inline Image read_png(const std::string& path) {
  std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "rb"));
  if (!f) throw ValidationError(path + ": cannot open file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw ValidationError(path + ": libpng init failed");
  }
  // Declared before setjmp so a libpng error cannot skip their destructors.
  std::vector<std::uint8_t> raw;
  std::vector<png_bytep> rows;
  int w = 0, h = 0, c = 0, depth = 8;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError(path + ": not a readable PNG");
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  w = static_cast<int>(png_get_image_width(png, info));
  h = static_cast<int>(png_get_image_height(png, info));
  c = png_get_channels(png, info);
  depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  raw.resize(stride * h);
  rows.resize(h);
  for (int y = 0; y < h; ++y) rows[y] = raw.data() + y * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  if (c != 1 && c != 3) throw ValidationError(path + ": unsupported PNG channel layout");
  Image im(w, h, c);
  const double max = depth == 16 ? 65535.0 : 255.0;
  for (int y = 0; y < h; ++y)
    for (int i = 0; i < w * c; ++i) {
      const double v = depth == 16 ? (rows[y][2 * i] << 8 | rows[y][2 * i + 1]) : rows[y][i];
      im.data[static_cast<std::size_t>(y) * w * c + i] = v / max;
    }
  return im;
}

/// Dispatches on the extension (.pfm or .png).
inline Image read_image(const std::string& path) {
  auto ends = [&](const char* ext) {
    const std::size_t n = std::strlen(ext);
    return path.size() >= n && path.compare(path.size() - n, n, ext) == 0;
  };
  if (ends(".pfm")) return read_pfm(path);
  if (ends(".png")) return read_png(path);
  throw ValidationError(path + ": unknown image extension (expected .pfm or .png)");
}

/// One channel to three by replication.
inline Image to_rgb(const Image& im) {
  if (im.channels == 3) return im;
  if (im.channels != 1) throw ValidationError("image: expected 1 or 3 channels");
  Image out(im.width, im.height, 3);
  for (std::size_t i = 0; i < im.data.size(); ++i)
    for (int c = 0; c < 3; ++c) out.data[3 * i + c] = im.data[i];
  return out;
}

}  // namespace volgauss::io
