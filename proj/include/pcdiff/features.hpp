#pragma once

#include <cstdint>
#include <vector>

#include "pcdiff/image.hpp"
#include "pcdiff/layers.hpp"

namespace pcdiff {

inline constexpr std::uint64_t kPerceptualSeed = 0x1F1F5;
inline constexpr std::uint64_t kFeatureSetSeed = 0xFD0;

/// Untrained three-layer conv stack with seed-pinned weights. Its activations
/// stand in for pretrained perceptual features.
template <typename T>
class RandomFeatureNet {
 public:
  static constexpr std::size_t kWidths[3] = {8, 16, 16};

  explicit RandomFeatureNet(std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0xFEA7));
    layers_[0] = Conv2d<T>::create(params_, "f0", 3, kWidths[0], 3, 1, rng, Init::he_normal, true);
    layers_[1] = Conv2d<T>::create(params_, "f1", kWidths[0], kWidths[1], 3, 2, rng, Init::he_normal, true);
    layers_[2] = Conv2d<T>::create(params_, "f2", kWidths[1], kWidths[2], 3, 2, rng, Init::he_normal, true);
  }

  /// Activations of each layer for an NCHW batch in [0, 1].
  std::vector<Var<T>> activations(const Var<T>& images) const {
    std::vector<Var<T>> out;
    Var<T> h = ops::add_scalar(ops::scale(images, T{2}), T{-1});
    for (const auto& layer : layers_) {
      h = ops::silu(layer(h));
      out.push_back(h);
    }
    return out;
  }

  static constexpr std::size_t embedding_dim() { return kWidths[0] + kWidths[1] + kWidths[2]; }

  /// Per-channel spatial means of every layer, one row per image.
  std::vector<std::vector<double>> embed(std::span<const ImageF32> images) const {
    NoGradGuard guard;
    const auto acts = activations(ops::constant(images_to_batch<T>(images)));
    std::vector<std::vector<double>> rows(images.size());
    for (const auto& a : acts) {
      const auto& v = a.value();
      const std::size_t C = v.dim(1), HW = v.dim(2) * v.dim(3);
      for (std::size_t n = 0; n < v.dim(0); ++n)
        for (std::size_t c = 0; c < C; ++c) {
          double s = 0.0;
          for (std::size_t i = 0; i < HW; ++i) s += v[(n * C + c) * HW + i];
          rows[n].push_back(s / static_cast<double>(HW));
        }
    }
    return rows;
  }

 private:
  ParameterSet<T> params_;
  Conv2d<T> layers_[3];
};

/// Mean over layers of the mean squared activation difference. Differentiable in both inputs.
template <typename T>
Var<T> perceptual_distance(const RandomFeatureNet<T>& net, const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "perceptual_distance");
  const auto fa = net.activations(a);
  const auto fb = net.activations(b);
  Var<T> total = ops::mse(fa[0], fb[0]);
  for (std::size_t i = 1; i < fa.size(); ++i) total = ops::add(total, ops::mse(fa[i], fb[i]));
  return ops::scale(total, T{1} / static_cast<T>(fa.size()));
}

inline double perceptual_distance(const ImageF32& a, const ImageF32& b, std::uint64_t seed = kPerceptualSeed) {
  require_same_shape(a, b, "perceptual_distance");
  const RandomFeatureNet<double> net(seed);
  NoGradGuard guard;
  const auto va = ops::constant(images_to_batch<double>(std::span<const ImageF32>(&a, 1)));
  const auto vb = ops::constant(images_to_batch<double>(std::span<const ImageF32>(&b, 1)));
  return perceptual_distance(net, va, vb).value()[0];
}

}  // namespace pcdiff
