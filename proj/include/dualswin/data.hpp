#pragma once

// Segmentation samples: on-disk loading, deterministic splitting, augmentation,
// batching, and a synthetic ultrasound-like phantom generator.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "dualswin/config.hpp"
#include "dualswin/errors.hpp"
#include "dualswin/image.hpp"
#include "dualswin/tensor.hpp"

namespace dualswin {

/// One image with its thyroid and PTMC masks; masks hold 0/1.
struct Sample {
  std::string id;
  Grid<float> image;  // values in [0, 1]
  Image8 thyroid;
  Image8 ptmc;
};

/// splitmix64 finaliser; derives independent stream seeds from (seed, a, b).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t z = seed;
  for (std::uint64_t v : {a, b}) {
    z += 0x9e3779b97f4a7c15ULL + v;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
  }
  return z;
}

/// Uniform double in [0, 1) from 53 random bits; identical on every platform.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Standard normal via Box–Muller on unit_uniform, for the same reason.
inline double standard_normal(std::mt19937_64& rng) {
  const double u1 = 1.0 - unit_uniform(rng), u2 = unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// ---------------------------------------------------------------------------
// loading

/// `dir/<id>.{png,pgm}` if present, else an empty path.
inline std::filesystem::path find_counterpart(const std::filesystem::path& dir, const std::string& id) {
  for (const char* ext : {".png", ".pgm", ".PNG", ".PGM"}) {
    const auto p = dir / (id + ext);
    if (std::filesystem::exists(p)) return p;
  }
  return {};
}

/// 0/1 mask: pixels at or above half the maximum are foreground.
inline Image8 binarize(const Image8& m) {
  const std::uint8_t top = m.data.empty() ? 0 : *std::max_element(m.data.begin(), m.data.end());
  Image8 out(m.height, m.width);
  if (top == 0) return out;
  for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = 2 * m.data[i] >= top;
  return out;
}

/// 8-bit pixels scaled to [0, 1].
inline Grid<float> to_unit(const Image8& m) {
  Grid<float> g(m.height, m.width, m.channels);
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = m.data[i] / 255.0f;
  return g;
}

/// Loads `root/{images,masks_thyroid,masks_ptmc}/<id>.{png,pgm}` triples,
/// sorted by id. Images are scaled to [0,1] and resized bilinearly, masks are
/// binarised at half their maximum and resized by nearest neighbour.
/// Colour images are averaged to gray; a warning goes to `warn` if given.
inline std::vector<Sample> load_dataset(const std::filesystem::path& root, std::size_t img_size,
                                        std::ostream* warn = nullptr) {
  namespace fs = std::filesystem;
  const fs::path images = root / "images", thy = root / "masks_thyroid", ptmc = root / "masks_ptmc";
  for (const auto& dir : {images, thy, ptmc}) {
    if (!fs::is_directory(dir)) throw DataError("dataset directory missing: " + dir.string());
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(images))
    if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) { return a.stem() < b.stem(); });
  std::vector<Sample> out;
  for (const auto& f : files) {
    const std::string id = f.stem().string();
    const fs::path tp = find_counterpart(thy, id), pp = find_counterpart(ptmc, id);
    if (tp.empty()) throw DataError("image " + id + " has no thyroid mask in " + thy.string());
    if (pp.empty()) throw DataError("image " + id + " has no ptmc mask in " + ptmc.string());
    GrayImage img = read_gray(f);
    if (img.collapsed && warn) *warn << "warning: " << f.string() << " is not grayscale; channels averaged\n";
    const Image8 tm = read_gray(tp).pixels, pm = read_gray(pp).pixels;
    if (tm.height != img.pixels.height || tm.width != img.pixels.width || pm.height != tm.height ||
        pm.width != tm.width) {
      throw DataError("image " + id + ": mask size differs from image size");
    }
    Sample s;
    s.id = id;
    s.image = resize_bilinear(to_unit(img.pixels), img_size, img_size);
    s.thyroid = resize_nearest(binarize(tm), img_size, img_size);
    s.ptmc = resize_nearest(binarize(pm), img_size, img_size);
    out.push_back(std::move(s));
  }
  return out;
}

/// Writes samples in the layout read by load_dataset (8-bit PNG, masks 0/255).
inline void write_dataset(const std::filesystem::path& root, const std::vector<Sample>& samples) {
  namespace fs = std::filesystem;
  for (const char* d : {"images", "masks_thyroid", "masks_ptmc"}) fs::create_directories(root / d);
  for (const auto& s : samples) {
    Image8 img(s.image.height, s.image.width);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
      img.data[i] = static_cast<std::uint8_t>(std::lround(std::clamp(s.image.data[i], 0.0f, 1.0f) * 255.0f));
    }
    write_png(root / "images" / (s.id + ".png"), img);
    Image8 t = s.thyroid, p = s.ptmc;
    for (auto& v : t.data) v = v ? 255 : 0;
    for (auto& v : p.data) v = v ? 255 : 0;
    write_png(root / "masks_thyroid" / (s.id + ".png"), t);
    write_png(root / "masks_ptmc" / (s.id + ".png"), p);
  }
}

// ---------------------------------------------------------------------------
// splitting

struct DatasetSplit {
  std::vector<std::size_t> train, val, test;
};

/// Seeded Fisher–Yates shuffle, then val = ⌊n·f_val⌋, test = ⌊n·f_test⌋ and
/// the remainder to train.
inline DatasetSplit split_indices(std::size_t n, const std::array<double, 3>& fractions, std::uint64_t seed) {
  if (n < 3) throw DataError("need at least 3 samples to split, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(mix_seed(seed, 0x5b17));
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);
  // the epsilon absorbs representation error such as 0.1·10 = 0.99999…
  const auto take = [&](double f) { return static_cast<std::size_t>(std::floor(n * f + 1e-9)); };
  const std::size_t nval = take(fractions[1]), ntest = take(fractions[2]);
  DatasetSplit s;
  s.train.assign(order.begin(), order.end() - nval - ntest);
  s.val.assign(order.end() - nval - ntest, order.end() - ntest);
  s.test.assign(order.end() - ntest, order.end());
  return s;
}

// ---------------------------------------------------------------------------
// synthetic phantoms

/// Ranges of the phantom generator, as fractions of the image side (gland)
/// or of the gland's semi-minor axis (tumor).
struct SynthParams {
  double gland_major_min = 0.30, gland_major_max = 0.40;  // semi-axes
  double gland_minor_min = 0.24, gland_minor_max = 0.30;
  double tumor_radius_min = 0.28, tumor_radius_max = 1.0 / 3.0;  // × gland semi-minor
  double speckle_std = 0.25;
  double shadow_probability = 0.3;

  /// Bounds on the tumor area as a fraction of the image, from the ranges.
  std::pair<double, double> tumor_area_bounds() const {
    const double lo = tumor_radius_min * gland_minor_min, hi = tumor_radius_max * gland_minor_max;
    return {std::numbers::pi * lo * lo, std::numbers::pi * hi * hi};
  }
};

struct Ellipse {
  double cy, cx, ry, rx, angle;  // pixels, radians

  bool contains(double y, double x) const {
    const double c = std::cos(angle), s = std::sin(angle);
    const double dy = y - cy, dx = x - cx;
    const double u = c * dx + s * dy, v = -s * dx + c * dy;
    return (u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0;
  }
};

/// Geometry behind one synthetic sample, as written to the manifest.
struct PhantomGeometry {
  std::string id;
  std::uint64_t seed = 0;
  Ellipse gland{}, tumor{};
  bool shadow = false;
  double shadow_x = 0, shadow_width = 0;
};

inline Image8 rasterize(const Ellipse& e, std::size_t size) {
  Image8 m(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) m.at(y, x) = e.contains(y + 0.5, x + 0.5);
  return m;
}

/// One phantom: dark background, bright elliptical gland band, hypoechoic
/// elliptical tumor strictly inside it, multiplicative speckle and an
/// optional vertical acoustic shadow. The masks are exact rasterisations.
inline Sample synth_sample(std::size_t index, std::size_t img_size, std::uint64_t seed, const SynthParams& p,
                           PhantomGeometry* geometry = nullptr) {
  const std::uint64_t sample_seed = mix_seed(seed, 0x5f47, index);
  std::mt19937_64 rng(sample_seed);
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit_uniform(rng); };
  const double n = static_cast<double>(img_size);

  PhantomGeometry g;
  g.id = "synth_" + [&] {
    std::string s = std::to_string(index);
    return std::string(s.size() < 5 ? 5 - s.size() : 0, '0') + s;
  }();
  g.seed = sample_seed;
  g.gland.rx = uniform(p.gland_major_min, p.gland_major_max) * n;
  g.gland.ry = uniform(p.gland_minor_min, p.gland_minor_max) * n;
  g.gland.angle = uniform(-0.35, 0.35);
  g.gland.cy = n / 2 + uniform(-0.08, 0.08) * n;
  g.gland.cx = n / 2 + uniform(-0.08, 0.08) * n;
  const double minor = std::min(g.gland.rx, g.gland.ry);
  g.tumor.rx = uniform(p.tumor_radius_min, p.tumor_radius_max) * minor;
  g.tumor.ry = uniform(p.tumor_radius_min, p.tumor_radius_max) * minor;
  g.tumor.angle = uniform(0.0, std::numbers::pi);
  const Image8 thyroid = rasterize(g.gland, img_size);
  Image8 ptmc;
  // rejection-sample a tumor centre whose rasterisation lies inside the gland;
  // the gland centre itself always qualifies since tumor radii ≤ minor/3
  for (int attempt = 0;; ++attempt) {
    const double r = attempt < 64 ? std::sqrt(unit_uniform(rng)) * 0.6 : 0.0;
    const double phi = uniform(0.0, 2 * std::numbers::pi);
    const double u = r * (g.gland.rx - minor / 3) * std::cos(phi), v = r * (minor - minor / 3) * std::sin(phi);
    const double c = std::cos(g.gland.angle), s = std::sin(g.gland.angle);
    g.tumor.cx = g.gland.cx + c * u - s * v;
    g.tumor.cy = g.gland.cy + s * u + c * v;
    ptmc = rasterize(g.tumor, img_size);
    bool inside = std::any_of(ptmc.data.begin(), ptmc.data.end(), [](std::uint8_t v) { return v != 0; });
    for (std::size_t i = 0; inside && i < ptmc.data.size(); ++i) inside = !ptmc.data[i] || thyroid.data[i];
    if (inside || attempt >= 64) break;
  }
  for (std::size_t i = 0; i < ptmc.data.size(); ++i) ptmc.data[i] &= thyroid.data[i];

  g.shadow = unit_uniform(rng) < p.shadow_probability;
  if (g.shadow) {
    g.shadow_x = uniform(0.1, 0.9) * n;
    g.shadow_width = uniform(0.03, 0.08) * n;
  }

  Sample out;
  out.id = g.id;
  out.thyroid = thyroid;
  out.ptmc = ptmc;
  out.image = Grid<float>(img_size, img_size);
  const double gland_level = uniform(0.55, 0.7), tumor_level = uniform(0.18, 0.3), bg = uniform(0.12, 0.2);
  for (std::size_t y = 0; y < img_size; ++y)
    for (std::size_t x = 0; x < img_size; ++x) {
      double v = bg + 0.1 * (y / n);  // mild depth gradient
      if (thyroid.at(y, x)) v = gland_level;
      if (ptmc.at(y, x)) v = tumor_level;
      v *= 1.0 + p.speckle_std * standard_normal(rng);
      if (g.shadow && std::abs(x + 0.5 - g.shadow_x) < g.shadow_width / 2) v *= 0.5;
      out.image.at(y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  if (geometry) *geometry = g;
  return out;
}

inline std::vector<Sample> synth_generate(std::size_t count, std::size_t img_size, std::uint64_t seed,
                                          const SynthParams& params = {},
                                          std::vector<PhantomGeometry>* geometry = nullptr) {
  if (count == 0) throw DataError("synthetic sample count must be at least 1");
  std::vector<Sample> out;
  if (geometry) geometry->clear();
  for (std::size_t i = 0; i < count; ++i) {
    PhantomGeometry g;
    out.push_back(synth_sample(i, img_size, seed, params, &g));
    if (geometry) geometry->push_back(g);
  }
  return out;
}

inline void write_manifest(std::ostream& os, const std::vector<PhantomGeometry>& geometry) {
  os << "id,seed,gland_cy,gland_cx,gland_ry,gland_rx,gland_angle,tumor_cy,tumor_cx,tumor_ry,tumor_rx,"
        "tumor_angle,shadow,shadow_x,shadow_width\n";
  os << std::setprecision(6);
  for (const auto& g : geometry) {
    os << g.id << ',' << g.seed << ',' << g.gland.cy << ',' << g.gland.cx << ',' << g.gland.ry << ','
       << g.gland.rx << ',' << g.gland.angle << ',' << g.tumor.cy << ',' << g.tumor.cx << ',' << g.tumor.ry << ','
       << g.tumor.rx << ',' << g.tumor.angle << ',' << g.shadow << ',' << g.shadow_x << ',' << g.shadow_width
       << '\n';
  }
}

// ---------------------------------------------------------------------------
// augmentation

template <class T>
void flip_rows(Grid<T>& g) {
  for (std::size_t y = 0; y < g.height; ++y)
    for (std::size_t x = 0; x < g.width / 2; ++x)
      for (std::size_t c = 0; c < g.channels; ++c) std::swap(g.at(y, x, c), g.at(y, g.width - 1 - x, c));
}

inline Sample hflip(Sample s) {
  flip_rows(s.image);
  flip_rows(s.thyroid);
  flip_rows(s.ptmc);
  return s;
}

/// Random gain in [0.9, 1.1] and offset in [−0.05, 0.05] on the image only.
inline Sample intensity_jitter(Sample s, std::mt19937_64& rng) {
  const double gain = 0.9 + 0.2 * unit_uniform(rng), offset = -0.05 + 0.1 * unit_uniform(rng);
  for (auto& v : s.image.data) v = static_cast<float>(std::clamp(v * gain + offset, 0.0, 1.0));
  return s;
}

/// Applies every op in order.
inline Sample augment(Sample s, const std::vector<Augmentation>& ops, std::mt19937_64& rng) {
  for (auto op : ops) {
    switch (op) {
      case Augmentation::hflip: s = hflip(std::move(s)); break;
      case Augmentation::intensity_jitter: s = intensity_jitter(std::move(s), rng); break;
    }
  }
  return s;
}

/// Training-time augmentation: hflip with probability ½, jitter always.
inline Sample random_augment(Sample s, const std::vector<Augmentation>& ops, std::mt19937_64& rng) {
  for (auto op : ops) {
    if (op == Augmentation::hflip) {
      if (rng() & 1) s = hflip(std::move(s));
    } else {
      s = augment(std::move(s), {op}, rng);
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// batching

template <class Real>
struct Batch {
  Tensor<Real> images;   // [B, H, W, 1]
  Tensor<Real> thyroid;  // [B, H, W, 1] in {0, 1}
  Tensor<Real> ptmc;
};

/// Stacks samples into [B,H,W,·] tensors; the gray image is repeated over
/// `channels` input channels.
template <class Real>
Batch<Real> make_batch(const std::vector<const Sample*>& samples, std::size_t channels = 1) {
  if (samples.empty()) throw DataError("make_batch: empty batch");
  const std::size_t H = samples[0]->image.height, W = samples[0]->image.width, B = samples.size();
  Batch<Real> b{Tensor<Real>({B, H, W, channels}), Tensor<Real>({B, H, W, 1}), Tensor<Real>({B, H, W, 1})};
  for (std::size_t i = 0; i < B; ++i) {
    const Sample& s = *samples[i];
    if (s.image.height != H || s.image.width != W) throw DataError("make_batch: sample " + s.id + " size differs");
    for (std::size_t k = 0; k < H * W; ++k) {
      for (std::size_t c = 0; c < channels; ++c) b.images[(i * H * W + k) * channels + c] = static_cast<Real>(s.image.data[k]);
      b.thyroid[i * H * W + k] = static_cast<Real>(s.thyroid.data[k]);
      b.ptmc[i * H * W + k] = static_cast<Real>(s.ptmc.data[k]);
    }
  }
  return b;
}

}  // namespace dualswin
