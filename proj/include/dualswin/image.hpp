#pragma once

// 2-D pixel grids, 8-bit PNG/PGM file I/O and resampling.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dualswin/errors.hpp"

namespace dualswin {

/// Row-major single- or multi-channel pixel grid.
template <class T>
struct Grid {
  std::size_t height = 0, width = 0, channels = 1;
  std::vector<T> data;

  Grid() = default;
  Grid(std::size_t h, std::size_t w, std::size_t c = 1, T fill = T{})
      : height(h), width(w), channels(c), data(h * w * c, fill) {}

  std::size_t pixels() const { return height * width; }
  T& at(std::size_t y, std::size_t x, std::size_t c = 0) { return data[(y * width + x) * channels + c]; }
  const T& at(std::size_t y, std::size_t x, std::size_t c = 0) const { return data[(y * width + x) * channels + c]; }
  friend bool operator==(const Grid&, const Grid&) = default;
};

using Image8 = Grid<std::uint8_t>;

/// Result of reading an image file as grayscale.
struct GrayImage {
  Image8 pixels;
  bool collapsed = false;  // the file had colour channels that were averaged
};

inline bool is_image_file(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".pgm";
}

// ---------------------------------------------------------------------------
// PGM (binary P5 and ASCII P2, maxval ≤ 255)

namespace image_detail {

inline std::string next_token(std::istream& is) {
  std::string tok;
  char c;
  while (is.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(is, skip);
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      tok += c;
      break;
    }
  }
  while (is.get(c) && !std::isspace(static_cast<unsigned char>(c))) tok += c;
  return tok;
}

}  // namespace image_detail

inline Image8 read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  const std::string magic = image_detail::next_token(is);
  if (magic != "P5" && magic != "P2") throw DataError(path.string() + ": not a PGM file");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(image_detail::next_token(is));
    h = std::stoul(image_detail::next_token(is));
    maxval = std::stoul(image_detail::next_token(is));
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed PGM header");
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) {
    throw DataError(path.string() + ": unsupported PGM geometry or maxval");
  }
  Image8 img(h, w);
  if (magic == "P5") {
    if (!is.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()))) {
      throw DataError(path.string() + ": truncated PGM data");
    }
  } else {
    for (auto& v : img.data) {
      const std::string tok = image_detail::next_token(is);
      if (tok.empty()) throw DataError(path.string() + ": truncated PGM data");
      v = static_cast<std::uint8_t>(std::stoul(tok));
    }
  }
  if (maxval != 255) {
    for (auto& v : img.data) v = static_cast<std::uint8_t>(std::lround(255.0 * v / maxval));
  }
  return img;
}

inline void write_pgm(const std::filesystem::path& path, const Image8& img) {
  if (img.channels != 1) throw DataError("write_pgm: grayscale only");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (!os) throw DataError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// PNG via libpng's simplified API

inline GrayImage read_png_gray(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str())) {
    throw DataError(path.string() + ": " + png.message);
  }
  GrayImage out;
  out.collapsed = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  const std::size_t h = png.height, w = png.width;
  // colour is averaged channel-wise without gamma handling
  png.format = out.collapsed ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const std::size_t stride = out.collapsed ? 3 : 1;
  std::vector<std::uint8_t> buffer(h * w * stride);
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw DataError(path.string() + ": " + msg);
  }
  out.pixels = Image8(h, w);
  for (std::size_t i = 0; i < h * w; ++i) {
    const std::uint8_t* px = buffer.data() + i * stride;
    out.pixels.data[i] = out.collapsed ? static_cast<std::uint8_t>((px[0] + px[1] + px[2] + 1) / 3) : px[0];
  }
  return out;
}

/// Writes a 1-channel (gray) or 3-channel (RGB) 8-bit PNG.
inline void write_png(const std::filesystem::path& path, const Image8& img) {
  if (img.channels != 1 && img.channels != 3) throw DataError("write_png: need 1 or 3 channels");
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, img.data.data(), 0, nullptr)) {
    throw DataError("cannot write " + path.string() + ": " + png.message);
  }
}

/// Reads a PNG or PGM file as 8-bit grayscale.
inline GrayImage read_gray(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".pgm") return {read_pgm(path), false};
  if (ext == ".png") return read_png_gray(path);
  throw DataError(path.string() + ": unsupported image format (expected .png or .pgm)");
}

// ---------------------------------------------------------------------------
// resampling (pixel centres aligned, edges clamped)

template <class T>
Grid<T> resize_nearest(const Grid<T>& src, std::size_t height, std::size_t width) {
  Grid<T> out(height, width, src.channels);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = std::min(src.height - 1, (2 * y + 1) * src.height / (2 * height));
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sx = std::min(src.width - 1, (2 * x + 1) * src.width / (2 * width));
      for (std::size_t c = 0; c < src.channels; ++c) out.at(y, x, c) = src.at(sy, sx, c);
    }
  }
  return out;
}

inline Grid<float> resize_bilinear(const Grid<float>& src, std::size_t height, std::size_t width) {
  Grid<float> out(height, width, src.channels);
  const auto coord = [](std::size_t i, std::size_t dst, std::size_t n, std::size_t& lo, std::size_t& hi) {
    const double s = std::clamp((i + 0.5) * static_cast<double>(n) / dst - 0.5, 0.0, static_cast<double>(n - 1));
    lo = static_cast<std::size_t>(s);
    hi = std::min(lo + 1, n - 1);
    return s - lo;
  };
  for (std::size_t y = 0; y < height; ++y) {
    std::size_t y0, y1;
    const double fy = coord(y, height, src.height, y0, y1);
    for (std::size_t x = 0; x < width; ++x) {
      std::size_t x0, x1;
      const double fx = coord(x, width, src.width, x0, x1);
      for (std::size_t c = 0; c < src.channels; ++c) {
        const double top = src.at(y0, x0, c) * (1 - fx) + src.at(y0, x1, c) * fx;
        const double bottom = src.at(y1, x0, c) * (1 - fx) + src.at(y1, x1, c) * fx;
        out.at(y, x, c) = static_cast<float>(top * (1 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

}  // namespace dualswin
