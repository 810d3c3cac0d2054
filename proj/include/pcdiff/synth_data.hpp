#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "pcdiff/image.hpp"
#include "pcdiff/rng.hpp"

namespace pcdiff {

struct FamilyMix {
  double gradients = 1.0 / 3.0;
  double shapes = 1.0 / 3.0;
  double textures = 1.0 / 3.0;
};

struct DatasetSpec {
  std::uint64_t seed = 7;
  std::size_t count = 500;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  FamilyMix mix;
};

enum class ImageFamily { gradient, shapes, texture };

inline void validate(const DatasetSpec& spec) {
  if (spec.count == 0) throw ConfigError("dataset: empty dataset requested (count = 0)");
  if (spec.height == 0 || spec.width == 0 || spec.channels == 0) {
    throw ConfigError("dataset: image dimensions must be positive");
  }
  const auto& m = spec.mix;
  if (m.gradients < 0 || m.shapes < 0 || m.textures < 0) throw ConfigError("dataset: negative family proportion");
  if (std::abs(m.gradients + m.shapes + m.textures - 1.0) > 1e-6) {
    throw ConfigError("dataset: family proportions must sum to 1");
  }
}

namespace detail {

inline float smoothstep_edge(double signed_distance, double softness) {
  return static_cast<float>(1.0 / (1.0 + std::exp(signed_distance / softness)));
}

inline void fill_gradient(ImageF32& img, Rng& rng) {
  std::vector<double> a(img.channels), b(img.channels);
  for (std::size_t c = 0; c < img.channels; ++c) {
    a[c] = rng.uniform();
    b[c] = rng.uniform();
  }
  const bool radial = rng.bernoulli(0.35);
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double cx = rng.uniform(0.2, 0.8), cy = rng.uniform(0.2, 0.8);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double u = (x + 0.5) / img.width, v = (y + 0.5) / img.height;
      double t;
      if (radial) {
        t = std::hypot(u - cx, v - cy) / 0.75;
      } else {
        t = 0.5 + (u - 0.5) * std::cos(theta) + (v - 0.5) * std::sin(theta);
      }
      t = std::clamp(t, 0.0, 1.0);
      for (std::size_t c = 0; c < img.channels; ++c) img.at(y, x, c) = static_cast<float>(a[c] + (b[c] - a[c]) * t);
    }
}

inline void fill_shapes(ImageF32& img, Rng& rng) {
  std::vector<double> bg(img.channels);
  for (auto& v : bg) v = rng.uniform();
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) img.at(y, x, c) = static_cast<float>(bg[c]);

  const auto count = 1 + rng.below(3);
  const double scale = static_cast<double>(std::min(img.height, img.width));
  for (std::uint64_t s = 0; s < count; ++s) {
    std::vector<double> col(img.channels);
    for (auto& v : col) v = rng.uniform();
    const bool circle = rng.bernoulli(0.5);
    const double cx = rng.uniform(0.15, 0.85) * img.width, cy = rng.uniform(0.15, 0.85) * img.height;
    const double r = rng.uniform(0.12, 0.35) * scale;
    const double hw = rng.uniform(0.1, 0.35) * scale, hh = rng.uniform(0.1, 0.35) * scale;
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        const double d = circle ? std::hypot(px - cx, py - cy) - r
                                : std::max(std::abs(px - cx) - hw, std::abs(py - cy) - hh);
        const float alpha = smoothstep_edge(d, 0.8);
        for (std::size_t c = 0; c < img.channels; ++c) {
          float& dst = img.at(y, x, c);
          dst = dst * (1.0f - alpha) + static_cast<float>(col[c]) * alpha;
        }
      }
  }
}

// Band-limited: every component has at most 3 cycles across the image.
inline void fill_texture(ImageF32& img, Rng& rng) {
  struct Wave {
    double fx, fy, phase, amp;
  };
  for (std::size_t c = 0; c < img.channels; ++c) {
    const double base = rng.uniform(0.25, 0.75);
    std::vector<Wave> waves(3);
    for (auto& w : waves) {
      w.fx = static_cast<double>(rng.below(7)) - 3.0;
      w.fy = static_cast<double>(rng.below(7)) - 3.0;
      w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      w.amp = rng.uniform(0.05, 0.18);
    }
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) {
        const double u = static_cast<double>(x) / img.width, v = static_cast<double>(y) / img.height;
        double val = base;
        for (const auto& w : waves) val += w.amp * std::sin(2.0 * std::numbers::pi * (w.fx * u + w.fy * v) + w.phase);
        img.at(y, x, c) = static_cast<float>(std::clamp(val, 0.0, 1.0));
      }
  }
}

}  // namespace detail

inline ImageFamily pick_family(const FamilyMix& mix, double u) {
  if (u < mix.gradients) return ImageFamily::gradient;
  if (u < mix.gradients + mix.shapes) return ImageFamily::shapes;
  return ImageFamily::texture;
}

/// Image i depends only on (seed, i), so prefixes of larger datasets agree.
inline std::vector<ImageF32> generate_dataset(const DatasetSpec& spec) {
  validate(spec);
  std::vector<ImageF32> out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    Rng rng(mix_seed(spec.seed, i));
    ImageF32 img(spec.height, spec.width, spec.channels);
    switch (pick_family(spec.mix, rng.uniform())) {
      case ImageFamily::gradient: detail::fill_gradient(img, rng); break;
      case ImageFamily::shapes: detail::fill_shapes(img, rng); break;
      case ImageFamily::texture: detail::fill_texture(img, rng); break;
    }
    img.clamp01();
    out.push_back(std::move(img));
  }
  return out;
}

struct DatasetSplit {
  std::vector<ImageF32> train;
  std::vector<ImageF32> eval;
};

/// Seeded shuffle, then the first round(fraction * n) images go to train.
inline DatasetSplit split(const std::vector<ImageF32>& dataset, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("split: train fraction must lie in (0, 1), got " + std::to_string(train_fraction));
  }
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x5117));
  rng.shuffle(order.begin(), order.end());
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(dataset.size())));
  DatasetSplit out;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_train ? out.train : out.eval).push_back(dataset[order[i]]);
  return out;
}

}  // namespace pcdiff
