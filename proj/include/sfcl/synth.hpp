#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "sfcl/freq.hpp"
#include "sfcl/rng.hpp"

// Seeded synthetic real/fake image pairs. Reals are smooth textures carrying
// per-pixel sensor noise; fakes are derived from their matched real by an
// operation that disturbs the high DCT bands the way face-swap pipelines do
// (resampling, or splicing in a warped foreign patch).

namespace sfcl::synth {

enum class Recipe { resample, blend, mixed };

inline const char* to_string(Recipe r) {
  switch (r) {
    case Recipe::resample: return "resample";
    case Recipe::blend: return "blend";
    case Recipe::mixed: return "mixed";
  }
  return "?";
}

inline Recipe recipe_from_string(const std::string& s) {
  if (s == "resample") return Recipe::resample;
  if (s == "blend") return Recipe::blend;
  if (s == "mixed") return Recipe::mixed;
  throw ConfigError("synth: unknown recipe '" + s + "' (expected resample, blend or mixed)");
}

struct SynthConfig {
  std::size_t count = 400;  // per class
  std::size_t height = 64;
  std::size_t width = 64;
  std::uint64_t seed = 1;
  Recipe recipe = Recipe::resample;
  double noise_sigma = 6.0;

  void validate() const {
    if (count == 0) throw ConfigError("synth: count must be positive");
    if (height < 16 || width < 16 || height % 8 != 0 || width % 8 != 0)
      throw ConfigError("synth: image size must be a multiple of 8 and at least 16x16");
    if (!(noise_sigma >= 0.0)) throw ConfigError("synth: noise_sigma must be non-negative");
  }
};

using RgbImage = freq::PlanarImage<double>;

struct Sample {
  std::string name;
  RgbImage image;
  std::optional<freq::BBox> bbox;
  int label = 0;  // 1 = fake
};

namespace detail {

/// Bilinear sample with edge clamping.
inline double sample_bilinear(const std::vector<double>& plane, std::size_t h, std::size_t w, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
  const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  const double top = plane[y0 * w + x0] * (1 - fx) + plane[y0 * w + x1] * fx;
  const double bot = plane[y1 * w + x0] * (1 - fx) + plane[y1 * w + x1] * fx;
  return top * (1 - fy) + bot * fy;
}

/// Smooth value noise: random lattice every `cell` pixels, bilinearly
/// interpolated, in [-amp, amp].
inline void add_value_noise(std::vector<double>& plane, std::size_t h, std::size_t w, std::size_t cell, double amp, Rng& rng) {
  const std::size_t gh = h / cell + 2, gw = w / cell + 2;
  std::vector<double> lattice(gh * gw);
  for (auto& v : lattice) v = rng.uniform(-amp, amp);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      plane[y * w + x] += sample_bilinear(lattice, gh, gw, static_cast<double>(y) / cell, static_cast<double>(x) / cell);
}

inline double clamp_round(double v) { return std::round(std::clamp(v, 0.0, 255.0)); }

}  // namespace detail

/// Noise-free smooth RGB texture with a random gradient.
inline RgbImage base_texture(std::size_t h, std::size_t w, Rng& rng) {
  RgbImage img(freq::ColorSpace::rgb, h, w);
  std::vector<double> lum(h * w, 0.0);
  detail::add_value_noise(lum, h, w, 16, 55.0, rng);
  detail::add_value_noise(lum, h, w, 8, 25.0, rng);
  detail::add_value_noise(lum, h, w, 4, 10.0, rng);
  const double gy = rng.uniform(-40, 40), gx = rng.uniform(-40, 40), base = rng.uniform(90, 170);
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> tint(h * w, rng.uniform(-25, 25));
    detail::add_value_noise(tint, h, w, 16, 15.0, rng);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t i = y * w + x;
        img.planes[c][i] = base + lum[i] + tint[i] + gy * (static_cast<double>(y) / h - 0.5) + gx * (static_cast<double>(x) / w - 0.5);
      }
  }
  return img;
}

/// Adds independent Gaussian noise per sample, then rounds to 8-bit levels.
inline RgbImage add_sensor_noise(const RgbImage& img, double sigma, Rng& rng) {
  RgbImage out = img;
  for (auto& p : out.planes)
    for (auto& v : p) v = detail::clamp_round(v + sigma * rng.normal());
  return out;
}

/// Bilinear 2× downsample (2×2 box) followed by bilinear 2× upsample.
inline RgbImage resample_down_up(const RgbImage& img) {
  const std::size_t h = img.height, w = img.width, hh = h / 2, hw = w / 2;
  RgbImage out = img;
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> small(hh * hw);
    const auto& p = img.planes[c];
    for (std::size_t y = 0; y < hh; ++y)
      for (std::size_t x = 0; x < hw; ++x)
        small[y * hw + x] = 0.25 * (p[(2 * y) * w + 2 * x] + p[(2 * y) * w + 2 * x + 1] + p[(2 * y + 1) * w + 2 * x] +
                                    p[(2 * y + 1) * w + 2 * x + 1]);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        // Pixel centers of the small grid sit at (2i + 0.5) in full-res coordinates.
        const double sy = (static_cast<double>(y) - 0.5) / 2.0, sx = (static_cast<double>(x) - 0.5) / 2.0;
        out.planes[c][y * w + x] = detail::clamp_round(detail::sample_bilinear(small, hh, hw, sy, sx));
      }
  }
  return out;
}

/// Splices a scaled-up patch of `donor` into `real` inside an ellipse with
/// a linearly feathered border.
inline RgbImage blend_patch(const RgbImage& real, const RgbImage& donor, Rng& rng) {
  const std::size_t h = real.height, w = real.width;
  const double cy = rng.uniform(0.35, 0.65) * h, cx = rng.uniform(0.35, 0.65) * w;
  const double ry = rng.uniform(0.22, 0.32) * h, rx = rng.uniform(0.22, 0.32) * w;
  const double zoom = rng.uniform(1.3, 1.6);
  const double feather = 4.0;
  RgbImage out = real;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double dy = (static_cast<double>(y) - cy) / ry, dx = (static_cast<double>(x) - cx) / rx;
      const double r = std::sqrt(dy * dy + dx * dx);
      // Approximate pixel distance inside the ellipse boundary.
      const double inside = (1.0 - r) * std::min(ry, rx);
      const double m = std::clamp(inside / feather, 0.0, 1.0);
      if (m <= 0.0) continue;
      const double sy = cy + (static_cast<double>(y) - cy) / zoom, sx = cx + (static_cast<double>(x) - cx) / zoom;
      for (std::size_t c = 0; c < 3; ++c) {
        const double d = detail::sample_bilinear(donor.planes[c], h, w, sy, sx);
        out.planes[c][y * w + x] = detail::clamp_round(m * d + (1.0 - m) * real.planes[c][y * w + x]);
      }
    }
  return out;
}

/// Deterministic seed for pair `i` of a run.
inline std::uint64_t pair_seed(std::uint64_t seed, std::size_t i) {
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(i) + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct Pair {
  RgbImage real, fake;
};

inline Pair make_pair(const SynthConfig& cfg, std::size_t i) {
  Rng rng(pair_seed(cfg.seed, i));
  Pair p;
  p.real = add_sensor_noise(base_texture(cfg.height, cfg.width, rng), cfg.noise_sigma, rng);
  Recipe r = cfg.recipe;
  if (r == Recipe::mixed) r = (i % 2 == 0) ? Recipe::resample : Recipe::blend;
  if (r == Recipe::resample) {
    p.fake = resample_down_up(p.real);
  } else {
    const RgbImage donor = add_sensor_noise(base_texture(cfg.height, cfg.width, rng), cfg.noise_sigma, rng);
    p.fake = blend_patch(p.real, donor, rng);
  }
  return p;
}

/// count real + count fake samples, interleaved real_i, fake_i.
inline std::vector<Sample> synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<Sample> out;
  out.reserve(2 * cfg.count);
  char buf[32];
  for (std::size_t i = 0; i < cfg.count; ++i) {
    Pair p = make_pair(cfg, i);
    std::snprintf(buf, sizeof buf, "%05zu", i);
    out.push_back(Sample{std::string("real_") + buf + ".ppm", std::move(p.real), std::nullopt, 0});
    out.push_back(Sample{std::string("fake_") + buf + ".ppm", std::move(p.fake), std::nullopt, 1});
  }
  return out;
}

}  // namespace sfcl::synth
