#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "occfield/image.hpp"

namespace occfield {

// ---------------------------------------------------------------------------
// PFM: "Pf" (1 channel) / "PF" (3 channels), dimensions line, scale line
// (negative = little-endian), then f32 rows bottom-to-top.
// ---------------------------------------------------------------------------

inline void write_pfm(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("write_pfm: 1 or 3 channels only");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << (img.channels == 1 ? "Pf" : "PF") << "\n"
    << img.width << " " << img.height << "\n"
    << "-1.0\n";
  std::vector<float> row(static_cast<size_t>(img.width) * img.channels);
  for (int y = img.height - 1; y >= 0; --y) {
    const double* src = &img.data[static_cast<size_t>(y) * img.width * img.channels];
    for (size_t i = 0; i < row.size(); ++i) row[i] = static_cast<float>(src[i]);
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size() * 4));
  }
  if (!f) throw std::runtime_error("short write to " + path);
}

inline Image read_pfm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string magic;
  f >> magic;
  int channels;
  if (magic == "Pf")
    channels = 1;
  else if (magic == "PF")
    channels = 3;
  else
    throw std::runtime_error(path + ": not a PFM file");
  int w, h;
  double scale;
  f >> w >> h >> scale;
  f.get();  // single whitespace before the raster
  if (w <= 0 || h <= 0) throw std::runtime_error(path + ": bad PFM dimensions");
  Image img(w, h, channels);
  std::vector<float> row(static_cast<size_t>(w) * channels);
  for (int y = h - 1; y >= 0; --y) {
    f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * 4));
    if (!f) throw std::runtime_error(path + ": truncated PFM raster");
    if (scale > 0) {  // big-endian file
      for (auto& v : row) {
        uint32_t u;
        std::memcpy(&u, &v, 4);
        u = __builtin_bswap32(u);
        std::memcpy(&v, &u, 4);
      }
    }
    double* dst = &img.data[static_cast<size_t>(y) * w * channels];
    for (size_t i = 0; i < row.size(); ++i) dst[i] = row[i];
  }
  return img;
}

// ---------------------------------------------------------------------------
// PPM (P6, 8-bit RGB), values mapped linearly to [0, 1].
// ---------------------------------------------------------------------------

inline void write_ppm(const std::string& path, const Image& img) {
  if (img.channels != 3) throw std::invalid_argument("write_ppm: need 3 channels");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(img.at(x, y, c), 0.0, 1.0);
        row[static_cast<size_t>(x) * 3 + c] = static_cast<uint8_t>(std::lround(v * 255.0));
      }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw std::runtime_error("short write to " + path);
}

inline Image read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string magic;
  int w, h, maxval;
  f >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255) throw std::runtime_error(path + ": unsupported PPM variant");
  f.get();
  Image img(w, h, 3);
  std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!f) throw std::runtime_error(path + ": truncated PPM raster");
    for (size_t i = 0; i < row.size(); ++i)
      img.data[static_cast<size_t>(y) * w * 3 + i] = row[i] / 255.0;
  }
  return img;
}

// ---------------------------------------------------------------------------
// PNG wrappers (libpng). Three shapes are used here: 16-bit grayscale depth
// in millimeters, 8-bit label images (indexed with a palette), and 1-bit
// detection masks.
// ---------------------------------------------------------------------------

namespace detail {

struct PngWriter {
  FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  explicit PngWriter(const std::string& path) {
    fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("cannot open " + path + " for writing");
    png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    info = png_create_info_struct(png);
  }
  ~PngWriter() {
    if (png) png_destroy_write_struct(&png, &info);
    if (fp) std::fclose(fp);
  }
};

struct PngReader {
  FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  explicit PngReader(const std::string& path) {
    fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("cannot open " + path);
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    info = png_create_info_struct(png);
  }
  ~PngReader() {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    if (fp) std::fclose(fp);
  }
};

}  // namespace detail

/// Depth in meters -> 16-bit grayscale PNG in millimeters. Non-finite or
/// non-positive depths map to 0 (= no measurement).
inline void write_png_depth16(const std::string& path, const Image& depth) {
  if (depth.channels != 1) throw std::invalid_argument("write_png_depth16: 1 channel only");
  detail::PngWriter w(path);
  if (setjmp(png_jmpbuf(w.png))) throw std::runtime_error("libpng failure writing " + path);
  png_init_io(w.png, w.fp);
  png_set_IHDR(w.png, w.info, depth.width, depth.height, 16, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  png_set_swap(w.png);  // rows below are native little-endian
  std::vector<uint16_t> row(depth.width);
  for (int y = 0; y < depth.height; ++y) {
    for (int x = 0; x < depth.width; ++x) {
      const double d = depth.at(x, y, 0);
      const double mm = (std::isfinite(d) && d > 0) ? std::lround(d * 1000.0) : 0.0;
      row[x] = static_cast<uint16_t>(std::clamp(mm, 0.0, 65535.0));
    }
    png_write_row(w.png, reinterpret_cast<png_bytep>(row.data()));
  }
  png_write_end(w.png, nullptr);
}

/// 8-bit indexed label PNG. palette is 256 RGB triples; label values are the
/// palette indices (255 = uncertain by convention).
inline void write_png_labels(const std::string& path, const std::vector<uint8_t>& labels, int width,
                             int height, const std::array<std::array<uint8_t, 3>, 256>& palette) {
  if (static_cast<size_t>(width) * height != labels.size())
    throw std::invalid_argument("write_png_labels: size mismatch");
  detail::PngWriter w(path);
  if (setjmp(png_jmpbuf(w.png))) throw std::runtime_error("libpng failure writing " + path);
  png_init_io(w.png, w.fp);
  png_set_IHDR(w.png, w.info, width, height, 8, PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  std::array<png_color, 256> pal;
  for (int i = 0; i < 256; ++i) pal[i] = {palette[i][0], palette[i][1], palette[i][2]};
  png_set_PLTE(w.png, w.info, pal.data(), 256);
  png_write_info(w.png, w.info);
  for (int y = 0; y < height; ++y)
    png_write_row(w.png, const_cast<png_bytep>(&labels[static_cast<size_t>(y) * width]));
  png_write_end(w.png, nullptr);
}

/// 1-bit grayscale mask PNG, nonzero input = white.
inline void write_png_mask(const std::string& path, const std::vector<uint8_t>& mask, int width,
                           int height) {
  if (static_cast<size_t>(width) * height != mask.size())
    throw std::invalid_argument("write_png_mask: size mismatch");
  detail::PngWriter w(path);
  if (setjmp(png_jmpbuf(w.png))) throw std::runtime_error("libpng failure writing " + path);
  png_init_io(w.png, w.fp);
  png_set_IHDR(w.png, w.info, width, height, 1, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  png_set_packing(w.png);  // accept one byte per pixel, libpng packs the bits
  std::vector<uint8_t> row(width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) row[x] = mask[static_cast<size_t>(y) * width + x] ? 1 : 0;
    png_write_row(w.png, row.data());
  }
  png_write_end(w.png, nullptr);
}

struct RawPng {
  int width = 0, height = 0;
  std::vector<uint8_t> values;  // one byte per pixel: gray level or palette index
};

/// Reads grayscale or palette PNG of any bit depth <= 8 as raw 8-bit values
/// (palette indices are NOT expanded to RGB). Used for masks and label maps.
inline RawPng read_png_raw8(const std::string& path) {
  detail::PngReader r(path);
  if (setjmp(png_jmpbuf(r.png))) throw std::runtime_error("libpng failure reading " + path);
  png_init_io(r.png, r.fp);
  png_read_info(r.png, r.info);
  const int color = png_get_color_type(r.png, r.info);
  const int depth = png_get_bit_depth(r.png, r.info);
  if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_PALETTE)
    throw std::runtime_error(path + ": expected grayscale or indexed PNG");
  if (depth > 8) throw std::runtime_error(path + ": bit depth > 8 not supported here");
  if (depth < 8) png_set_packing(r.png);  // unpack to one byte per pixel
  png_read_update_info(r.png, r.info);
  RawPng out;
  out.width = static_cast<int>(png_get_image_width(r.png, r.info));
  out.height = static_cast<int>(png_get_image_height(r.png, r.info));
  out.values.resize(static_cast<size_t>(out.width) * out.height);
  for (int y = 0; y < out.height; ++y)
    png_read_row(r.png, &out.values[static_cast<size_t>(y) * out.width], nullptr);
  // sub-byte grayscale comes back as raw sample values (0/1 for 1-bit)
  return out;
}

// ---------------------------------------------------------------------------

/// FNV-1a over a file, for run-manifest artifact hashes.
inline std::string hash_file_hex(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  uint64_t h = 1469598103934665603ull;
  char buf[65536];
  while (f) {
    f.read(buf, sizeof(buf));
    const std::streamsize n = f.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<uint8_t>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << text;
  if (!f) throw std::runtime_error("short write to " + path);
}

}  // namespace occfield
