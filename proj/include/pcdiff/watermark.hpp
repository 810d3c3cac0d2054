#pragma once

#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pcdiff/metrics.hpp"
#include "pcdiff/model.hpp"

namespace pcdiff {

/// Bits carried in the signs of a 4x8x8 latent. Each bit owns `replication`
/// latent positions chosen by a seed-keyed permutation.
struct WatermarkPayload {
  static constexpr std::size_t kLatentElements = Architecture::kLatentChannels * 8 * 8;

  std::vector<bool> bits;
  std::size_t replication = 8;
  std::uint64_t seed = 0;

  void validate() const {
    if (bits.empty()) throw CapacityError("watermark: payload has no bits");
    if (replication == 0) throw CapacityError("watermark: replication must be at least 1");
    if (bits.size() * replication > kLatentElements) {
      throw CapacityError("watermark: " + std::to_string(bits.size()) + " bits x " + std::to_string(replication) +
                          " copies exceeds the " + std::to_string(kLatentElements) + " latent elements");
    }
  }

  static WatermarkPayload random(std::size_t k, std::size_t r, std::uint64_t seed, Rng& rng) {
    WatermarkPayload p;
    p.bits.resize(k);
    for (std::size_t i = 0; i < k; ++i) p.bits[i] = rng.bernoulli(0.5);
    p.replication = r;
    p.seed = seed;
    return p;
  }
};

/// The latent positions used by bit b are positions[b * r .. b * r + r).
inline std::vector<std::size_t> watermark_positions(std::uint64_t seed) {
  std::vector<std::size_t> order(WatermarkPayload::kLatentElements);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed, 0x5EED5));
  rng.shuffle(order.begin(), order.end());
  return order;
}

/// Watermarked latent [1, 4, 8, 8]. Magnitudes are half-normal draws from
/// `noise`; bit 1 makes its positions positive, bit 0 negative. Free positions
/// get plain N(0, 1) draws, so every element is marginally standard normal.
inline Tensor<float> embed_watermark(const WatermarkPayload& payload, Rng& noise) {
  payload.validate();
  const auto pos = watermark_positions(payload.seed);
  Tensor<float> z({1, Architecture::kLatentChannels, 8, 8});
  for (auto& v : z.storage()) v = static_cast<float>(noise.normal());
  for (std::size_t b = 0; b < payload.bits.size(); ++b)
    for (std::size_t j = 0; j < payload.replication; ++j) {
      float& v = z[pos[b * payload.replication + j]];
      v = payload.bits[b] ? std::abs(v) : -std::abs(v);
    }
  return z;
}

/// Majority vote over the signs of each bit's positions; ties fall back to the
/// sign of the summed values.
inline std::vector<bool> extract_from_latent(const Tensor<float>& latent, std::uint64_t seed, std::size_t k,
                                             std::size_t r) {
  if (latent.numel() != WatermarkPayload::kLatentElements) {
    throw DecodeError("watermark: latent " + shape_str(latent.shape()) + " does not hold " +
                      std::to_string(WatermarkPayload::kLatentElements) + " elements");
  }
  WatermarkPayload probe{std::vector<bool>(k), r, seed};
  probe.validate();
  const auto pos = watermark_positions(seed);
  std::vector<bool> bits(k);
  for (std::size_t b = 0; b < k; ++b) {
    int votes = 0;
    double sum = 0.0;
    for (std::size_t j = 0; j < r; ++j) {
      const float v = latent[pos[b * r + j]];
      votes += v > 0 ? 1 : -1;
      sum += v;
    }
    bits[b] = votes != 0 ? votes > 0 : sum > 0.0;
  }
  return bits;
}

/// Re-encodes the image with the reference encoder and reads the bits back.
template <typename Model>
std::vector<bool> extract_watermark(const ImageF32& image, const Model& encoder_owner, std::uint64_t seed,
                                    std::size_t k, std::size_t r) {
  if (image.height != 32 || image.width != 32 || image.channels != 3) {
    throw DecodeError("watermark: expected a 32x32x3 image, got " + image.shape_string());
  }
  NoGradGuard guard;
  const auto z = encoder_owner.encode(ops::constant(images_to_batch<float>(std::span<const ImageF32>(&image, 1))));
  return extract_from_latent(z.value(), seed, k, r);
}

/// Named image transform applied between decoding and extraction.
struct ImageAttack {
  std::string name;
  std::function<ImageF32(const ImageF32&, std::size_t)> apply;  // (image, payload index)
};

struct RobustnessRow {
  std::string method;
  std::vector<double> accuracy;  // one per attack, in suite order
};

/// Mean bit accuracy per attack over all payloads. `decode` maps a watermarked
/// latent to an image; extraction always uses the reference encoder.
template <typename Model>
RobustnessRow robustness_eval(const std::string& method, const std::vector<WatermarkPayload>& payloads,
                              const std::vector<Tensor<float>>& latents,
                              const std::function<ImageF32(const Tensor<float>&)>& decode,
                              const std::vector<ImageAttack>& suite, const Model& reference) {
  if (payloads.size() != latents.size()) throw ConfigError("robustness_eval: payload/latent count mismatch");
  RobustnessRow row{method, std::vector<double>(suite.size(), 0.0)};
  for (std::size_t i = 0; i < payloads.size(); ++i) {
    const ImageF32 img = decode(latents[i]);
    for (std::size_t a = 0; a < suite.size(); ++a) {
      const auto bits = extract_watermark(suite[a].apply(img, i), reference, payloads[i].seed, payloads[i].bits.size(),
                                          payloads[i].replication);
      row.accuracy[a] += bit_accuracy(payloads[i].bits, bits);
    }
  }
  for (auto& v : row.accuracy) v /= static_cast<double>(std::max<std::size_t>(1, payloads.size()));
  return row;
}

struct RobustnessTable {
  std::vector<std::string> attacks;
  std::vector<RobustnessRow> rows;
  // Image-quality columns for rows that have a baseline to compare against.
  std::vector<std::optional<MetricsReport>> quality;

  void write_csv(std::ostream& os) const {
    os << "method,psnr,ssim,fd_proxy";
    for (const auto& a : attacks) os << ',' << a;
    os << '\n';
    for (std::size_t r = 0; r < rows.size(); ++r) {
      os << rows[r].method;
      const auto& q = r < quality.size() ? quality[r] : std::nullopt;
      if (q) {
        os << ',' << format_fixed(q->psnr, 4) << ',' << format_fixed(q->ssim, 4) << ','
           << format_fixed(q->feature_distance, 4);
      } else {
        os << ",-,-,-";
      }
      for (double v : rows[r].accuracy) os << ',' << format_fixed(v, 4);
      os << '\n';
    }
  }
};

}  // namespace pcdiff
