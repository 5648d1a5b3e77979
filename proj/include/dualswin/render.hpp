#pragma once

// Confusion overlays and blurred-probability heatmaps.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "dualswin/errors.hpp"
#include "dualswin/image.hpp"

namespace dualswin {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kOverlayWhite{255, 255, 255};  // true positive
inline constexpr Rgb kOverlayPink{255, 105, 180};   // false negative
inline constexpr Rgb kOverlayGreen{0, 200, 0};      // false positive

/// Background gray is capped one step below white so every colour class is
/// identifiable from the pixel alone.
inline constexpr std::uint8_t kOverlayMaxGray = 254;

inline Rgb rgb_at(const Image8& img, std::size_t y, std::size_t x) {
  return {img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)};
}

/// gt∧pred → white, gt∧¬pred → pink, ¬gt∧pred → green, else the image gray.
inline Image8 render_overlay(const Image8& gt, const Image8& pred, const Image8& image) {
  if (gt.height != pred.height || gt.width != pred.width || gt.height != image.height || gt.width != image.width ||
      gt.channels != 1 || pred.channels != 1 || image.channels != 1) {
    throw ShapeError("overlay needs single-channel gt, prediction and image of equal size");
  }
  Image8 out(gt.height, gt.width, 3);
  for (std::size_t y = 0; y < gt.height; ++y) {
    for (std::size_t x = 0; x < gt.width; ++x) {
      const bool g = gt.at(y, x) != 0, p = pred.at(y, x) != 0;
      const std::uint8_t v = std::min(image.at(y, x), kOverlayMaxGray);
      const Rgb c = g && p ? kOverlayWhite : g ? kOverlayPink : p ? kOverlayGreen : Rgb{v, v, v};
      for (std::size_t k = 0; k < 3; ++k) out.at(y, x, k) = c[k];
    }
  }
  return out;
}

struct OverlayCounts {
  std::size_t white = 0, pink = 0, green = 0, gray = 0;
};

inline OverlayCounts count_overlay_colours(const Image8& overlay) {
  OverlayCounts n;
  for (std::size_t y = 0; y < overlay.height; ++y) {
    for (std::size_t x = 0; x < overlay.width; ++x) {
      const Rgb c = rgb_at(overlay, y, x);
      if (c == kOverlayWhite) ++n.white;
      else if (c == kOverlayPink) ++n.pink;
      else if (c == kOverlayGreen) ++n.green;
      else ++n.gray;
    }
  }
  return n;
}

// ---------------------------------------------------------------------------
// heatmap

/// Normalised 1-D Gaussian taps over [-r, r], r = ceil(3σ).
inline std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0)) throw ConfigError("heatmap sigma must be > 0");
  const int r = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<double> k(2 * r + 1);
  double sum = 0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  return k;
}

/// Mirror index into [0, n) without repeating the edge sample (…2 1 | 0 1 2… ).
inline std::size_t reflect_index(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < n ? i : period - i);
}

/// Separable Gaussian blur of a single-channel map with reflective borders.
inline Grid<double> gaussian_blur(const Grid<double>& in, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const long r = static_cast<long>(k.size() / 2), H = static_cast<long>(in.height), W = static_cast<long>(in.width);
  Grid<double> tmp(in.height, in.width), out(in.height, in.width);
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      double s = 0;
      for (long d = -r; d <= r; ++d) s += k[d + r] * in.at(y, reflect_index(x + d, W));
      tmp.at(y, x) = s;
    }
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      double s = 0;
      for (long d = -r; d <= r; ++d) s += k[d + r] * tmp.at(reflect_index(y + d, H), x);
      out.at(y, x) = s;
    }
  return out;
}

/// Piecewise-linear jet: t=0 dark blue, 0.5 green-yellow, 1 dark red.
inline Rgb jet(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const auto ch = [&](double centre) {
    return static_cast<std::uint8_t>(std::lround(255 * std::clamp(1.5 - std::abs(4 * t - centre), 0.0, 1.0)));
  };
  return {ch(3), ch(2), ch(1)};
}

struct Heatmap {
  Image8 rgb;
  Grid<double> normalized;  // blurred map scaled to [0, 1]; empty when degenerate
  std::string note;         // set when the map had no contrast and the image is returned unblended
};

/// Blur → min-max normalise → jet → alpha-blend over the grayscale image.
inline Heatmap render_heatmap(const Grid<double>& prob, double sigma, const Image8& image, double alpha = 0.5) {
  if (prob.height != image.height || prob.width != image.width || prob.channels != 1 || image.channels != 1) {
    throw ShapeError("heatmap needs a single-channel probability map and image of equal size");
  }
  Heatmap h;
  h.rgb = Image8(image.height, image.width, 3);
  const Grid<double> blurred = gaussian_blur(prob, sigma);
  const auto [lo, hi] = std::minmax_element(blurred.data.begin(), blurred.data.end());
  const double range = *hi - *lo;
  if (!(range > 0)) {
    for (std::size_t i = 0; i < image.pixels(); ++i)
      for (std::size_t c = 0; c < 3; ++c) h.rgb.data[3 * i + c] = image.data[i];
    h.note = "prediction map has no contrast; heatmap left unblended";
    return h;
  }
  h.normalized = Grid<double>(prob.height, prob.width);
  for (std::size_t i = 0; i < image.pixels(); ++i) {
    const double t = (blurred.data[i] - *lo) / range;
    h.normalized.data[i] = t;
    const Rgb c = jet(t);
    for (std::size_t k = 0; k < 3; ++k) {
      h.rgb.data[3 * i + k] =
          static_cast<std::uint8_t>(std::lround((1 - alpha) * image.data[i] + alpha * static_cast<double>(c[k])));
    }
  }
  return h;
}

}  // namespace dualswin
