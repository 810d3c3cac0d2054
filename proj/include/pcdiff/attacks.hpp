#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "pcdiff/metrics.hpp"
#include "pcdiff/model.hpp"

namespace pcdiff {

// ---------------------------------------------------------------------------
// Image post-processing attacks

enum class AttackKind {
  jpeg_proxy,
  crop,
  drop,
  gaussian_blur,
  median_filter,
  gaussian_noise,
  salt_pepper,
  resize,
  brightness,
};

inline constexpr std::array<AttackKind, 9> kAllAttacks{
    AttackKind::jpeg_proxy,     AttackKind::crop,        AttackKind::drop,   AttackKind::gaussian_blur,
    AttackKind::median_filter,  AttackKind::gaussian_noise, AttackKind::salt_pepper, AttackKind::resize,
    AttackKind::brightness};

inline std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::jpeg_proxy: return "jpeg";
    case AttackKind::crop: return "crop";
    case AttackKind::drop: return "drop";
    case AttackKind::gaussian_blur: return "gblur";
    case AttackKind::median_filter: return "mfilter";
    case AttackKind::gaussian_noise: return "gnoise";
    case AttackKind::salt_pepper: return "spnoise";
    case AttackKind::resize: return "resize";
    case AttackKind::brightness: return "bright";
  }
  return "?";
}

inline AttackKind parse_attack_kind(const std::string& s) {
  for (auto k : kAllAttacks)
    if (to_string(k) == s) return k;
  throw ConfigError("unknown attack '" + s + "'");
}

/// One post-processing attack. `param` is the single intensity knob of each kind:
/// JPEG quality, kept area (crop), dropped area (drop), blur sigma, median
/// window, noise sigma, salt-and-pepper probability, resize scale, brightness factor.
struct AttackSpec {
  AttackKind kind = AttackKind::jpeg_proxy;
  double param = 75.0;
  std::uint64_t seed = 0;

  static AttackSpec standard(AttackKind kind, std::uint64_t seed = 0) {
    switch (kind) {
      case AttackKind::jpeg_proxy: return {kind, 75.0, seed};
      case AttackKind::crop: return {kind, 0.5, seed};
      case AttackKind::drop: return {kind, 0.3, seed};
      case AttackKind::gaussian_blur: return {kind, 2.0, seed};
      case AttackKind::median_filter: return {kind, 5.0, seed};
      case AttackKind::gaussian_noise: return {kind, 0.1, seed};
      case AttackKind::salt_pepper: return {kind, 0.1, seed};
      case AttackKind::resize: return {kind, 0.5, seed};
      case AttackKind::brightness: return {kind, 2.0, seed};
    }
    return {kind, 0.0, seed};
  }

  std::string label() const { return to_string(kind); }

  void validate() const {
    auto fail = [&](const std::string& range) {
      throw ConfigError("attack " + label() + ": parameter " + format_fixed(param, 4) + " outside " + range);
    };
    switch (kind) {
      case AttackKind::jpeg_proxy:
        if (param < 1 || param > 100 || param != std::floor(param)) fail("integers 1..100");
        break;
      case AttackKind::crop:
        if (!(param > 0.0 && param <= 1.0)) fail("(0, 1]");
        break;
      case AttackKind::drop:
        if (!(param >= 0.0 && param < 1.0)) fail("[0, 1)");
        break;
      case AttackKind::gaussian_blur:
        if (!(param > 0.0 && param <= 10.0)) fail("(0, 10]");
        break;
      case AttackKind::median_filter:
        if (param < 1 || param > 15 || param != std::floor(param) || static_cast<int>(param) % 2 == 0)
          fail("odd integers 1..15");
        break;
      case AttackKind::gaussian_noise:
        if (!(param >= 0.0 && param <= 1.0)) fail("[0, 1]");
        break;
      case AttackKind::salt_pepper:
        if (!(param >= 0.0 && param <= 1.0)) fail("[0, 1]");
        break;
      case AttackKind::resize:
        if (!(param > 0.0 && param <= 1.0)) fail("(0, 1]");
        break;
      case AttackKind::brightness:
        if (!(param > 0.0 && param <= 10.0)) fail("(0, 10]");
        break;
    }
  }
};

inline std::vector<AttackSpec> standard_suite(std::uint64_t seed = 0) {
  std::vector<AttackSpec> out;
  for (auto k : kAllAttacks) out.push_back(AttackSpec::standard(k, seed));
  return out;
}

namespace detail {

inline std::size_t reflect(long i, std::size_t n) {
  const long len = static_cast<long>(n);
  if (len == 1) return 0;
  while (i < 0 || i >= len) i = i < 0 ? -i - 1 : 2 * len - i - 1;
  return static_cast<std::size_t>(i);
}

inline std::array<std::array<double, 8>, 8> dct_matrix() {
  std::array<std::array<double, 8>, 8> c{};
  for (std::size_t k = 0; k < 8; ++k)
    for (std::size_t n = 0; n < 8; ++n) {
      const double scale = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      c[k][n] = scale * std::cos(std::numbers::pi * (2.0 * n + 1.0) * k / 16.0);
    }
  return c;
}

}  // namespace detail

using Block8 = std::array<double, 64>;

/// Orthonormal 2-D DCT-II of an 8x8 block (row-major).
inline Block8 dct8x8(const Block8& x) {
  static const auto c = detail::dct_matrix();
  Block8 tmp{}, out{};
  for (std::size_t u = 0; u < 8; ++u)
    for (std::size_t n = 0; n < 8; ++n) {
      double s = 0;
      for (std::size_t m = 0; m < 8; ++m) s += c[u][m] * x[m * 8 + n];
      tmp[u * 8 + n] = s;
    }
  for (std::size_t u = 0; u < 8; ++u)
    for (std::size_t v = 0; v < 8; ++v) {
      double s = 0;
      for (std::size_t n = 0; n < 8; ++n) s += tmp[u * 8 + n] * c[v][n];
      out[u * 8 + v] = s;
    }
  return out;
}

inline Block8 idct8x8(const Block8& X) {
  static const auto c = detail::dct_matrix();
  Block8 tmp{}, out{};
  for (std::size_t m = 0; m < 8; ++m)
    for (std::size_t v = 0; v < 8; ++v) {
      double s = 0;
      for (std::size_t u = 0; u < 8; ++u) s += c[u][m] * X[u * 8 + v];
      tmp[m * 8 + v] = s;
    }
  for (std::size_t m = 0; m < 8; ++m)
    for (std::size_t n = 0; n < 8; ++n) {
      double s = 0;
      for (std::size_t v = 0; v < 8; ++v) s += tmp[m * 8 + v] * c[v][n];
      out[m * 8 + n] = s;
    }
  return out;
}

/// Standard JPEG luminance quantisation table (quality 50).
inline constexpr std::array<int, 64> kJpegLuminance{
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,  14, 13, 16, 24, 40,  57,
    69, 56, 14, 17, 22,  29,  51,  87,  80, 62, 18, 22, 37,  56,  68,  109, 103, 77, 24, 35, 55, 64,
    81, 104, 113, 92, 49, 64, 78, 87,  103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

/// Luminance table scaled the way libjpeg does for a given quality.
inline std::array<int, 64> jpeg_quant_table(int quality) {
  if (quality < 1 || quality > 100) throw ConfigError("jpeg quality must be in 1..100, got " + std::to_string(quality));
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<int, 64> q{};
  for (std::size_t i = 0; i < 64; ++i) q[i] = std::clamp((kJpegLuminance[i] * scale + 50) / 100, 1, 255);
  return q;
}

/// Blockwise DCT quantisation of every channel on the 0..255 scale.
inline ImageF32 jpeg_proxy(const ImageF32& img, int quality) {
  const auto q = jpeg_quant_table(quality);
  ImageF32 out = img;
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t by = 0; by < img.height; by += 8)
      for (std::size_t bx = 0; bx < img.width; bx += 8) {
        Block8 b{};
        for (std::size_t y = 0; y < 8; ++y)
          for (std::size_t x = 0; x < 8; ++x) {
            const std::size_t sy = std::min(by + y, img.height - 1), sx = std::min(bx + x, img.width - 1);
            b[y * 8 + x] = static_cast<double>(img.at(sy, sx, c)) * 255.0 - 128.0;
          }
        auto coef = dct8x8(b);
        for (std::size_t i = 0; i < 64; ++i) coef[i] = std::round(coef[i] / q[i]) * q[i];
        const auto back = idct8x8(coef);
        for (std::size_t y = 0; y < 8 && by + y < img.height; ++y)
          for (std::size_t x = 0; x < 8 && bx + x < img.width; ++x)
            out.at(by + y, bx + x, c) = static_cast<float>(std::clamp((back[y * 8 + x] + 128.0) / 255.0, 0.0, 1.0));
      }
  return out;
}

inline ImageF32 gaussian_blur(const ImageF32& img, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("gaussian_blur: sigma must be positive");
  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) total += k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= total;
  std::vector<double> tmp(img.data.size());
  ImageF32 out = img;
  const std::size_t H = img.height, W = img.width, C = img.channels;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) {
        double s = 0;
        for (long i = -radius; i <= radius; ++i)
          s += k[static_cast<std::size_t>(i + radius)] * img.at(y, detail::reflect(static_cast<long>(x) + i, W), c);
        tmp[(y * W + x) * C + c] = s;
      }
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) {
        double s = 0;
        for (long i = -radius; i <= radius; ++i)
          s += k[static_cast<std::size_t>(i + radius)] * tmp[(detail::reflect(static_cast<long>(y) + i, H) * W + x) * C + c];
        out.at(y, x, c) = static_cast<float>(s);
      }
  return out;
}

inline ImageF32 median_filter(const ImageF32& img, int window) {
  if (window < 1 || window % 2 == 0) throw ConfigError("median_filter: window must be a positive odd integer");
  if (window == 1) return img;
  const long r = window / 2;
  ImageF32 out = img;
  std::vector<float> buf(static_cast<std::size_t>(window * window));
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) {
        std::size_t n = 0;
        for (long dy = -r; dy <= r; ++dy)
          for (long dx = -r; dx <= r; ++dx)
            buf[n++] = img.at(detail::reflect(static_cast<long>(y) + dy, img.height),
                              detail::reflect(static_cast<long>(x) + dx, img.width), c);
        std::nth_element(buf.begin(), buf.begin() + static_cast<long>(n / 2), buf.begin() + static_cast<long>(n));
        out.at(y, x, c) = buf[n / 2];
      }
  return out;
}

/// Bilinear resampling with half-pixel centres.
inline ImageF32 resize_bilinear(const ImageF32& img, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw ConfigError("resize: target size must be positive");
  ImageF32 out(height, width, img.channels);
  const double sy = static_cast<double>(img.height) / height, sx = static_cast<double>(img.width) / width;
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double ty = fy - y0;
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double tx = fx - x0;
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double top = img.at(y0, x0, c) * (1 - tx) + img.at(y0, x1, c) * tx;
        const double bot = img.at(y1, x0, c) * (1 - tx) + img.at(y1, x1, c) * tx;
        out.at(y, x, c) = static_cast<float>(top * (1 - ty) + bot * ty);
      }
    }
  }
  return out;
}

namespace detail {

/// Rectangle covering `area` of the canvas, at a random position.
struct Rect {
  std::size_t y = 0, x = 0, h = 0, w = 0;
};

inline Rect random_rect(std::size_t H, std::size_t W, double area, Rng& rng) {
  const double side = std::sqrt(area);
  Rect r;
  r.h = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(side * H)), 0, H);
  r.w = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(side * W)), 0, W);
  r.y = rng.below(H - r.h + 1);
  r.x = rng.below(W - r.w + 1);
  return r;
}

}  // namespace detail

inline ImageF32 apply_attack(const ImageF32& img, const AttackSpec& spec) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(spec.kind) + 1));
  ImageF32 out = img;
  switch (spec.kind) {
    case AttackKind::jpeg_proxy:
      return jpeg_proxy(img, static_cast<int>(spec.param));
    case AttackKind::crop: {
      if (spec.param == 1.0) return img;
      const auto r = detail::random_rect(img.height, img.width, spec.param, rng);
      for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) {
          const bool inside = y >= r.y && y < r.y + r.h && x >= r.x && x < r.x + r.w;
          if (!inside)
            for (std::size_t c = 0; c < img.channels; ++c) out.at(y, x, c) = 0.0f;
        }
      return out;
    }
    case AttackKind::drop: {
      if (spec.param == 0.0) return img;
      const auto r = detail::random_rect(img.height, img.width, spec.param, rng);
      for (std::size_t y = r.y; y < r.y + r.h; ++y)
        for (std::size_t x = r.x; x < r.x + r.w; ++x)
          for (std::size_t c = 0; c < img.channels; ++c) out.at(y, x, c) = 0.0f;
      return out;
    }
    case AttackKind::gaussian_blur:
      out = gaussian_blur(img, spec.param);
      break;
    case AttackKind::median_filter:
      return median_filter(img, static_cast<int>(spec.param));
    case AttackKind::gaussian_noise:
      for (auto& v : out.data) v = static_cast<float>(v + spec.param * rng.normal());
      break;
    case AttackKind::salt_pepper:
      for (std::size_t p = 0; p < img.height * img.width; ++p) {
        if (!rng.bernoulli(spec.param)) continue;
        const float v = rng.bernoulli(0.5) ? 1.0f : 0.0f;
        for (std::size_t c = 0; c < img.channels; ++c) out.data[p * img.channels + c] = v;
      }
      break;
    case AttackKind::resize: {
      if (spec.param == 1.0) return img;
      const auto h = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(spec.param * img.height)));
      const auto w = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(spec.param * img.width)));
      out = resize_bilinear(resize_bilinear(img, h, w), img.height, img.width);
      break;
    }
    case AttackKind::brightness:
      for (auto& v : out.data) v = static_cast<float>(v * spec.param);
      break;
  }
  out.clamp01();
  return out;
}

/// Filter-based restoration: 3x3 median denoise, then unsharp masking
/// (sigma 1, amount 0.5).
inline ImageF32 restoration_attack(const ImageF32& degraded) {
  const ImageF32 m = median_filter(degraded, 3);
  const ImageF32 blurred = gaussian_blur(m, 1.0);
  ImageF32 out = m;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = m.data[i] + 0.5f * (m.data[i] - blurred.data[i]);
  out.clamp01();
  return out;
}

// ---------------------------------------------------------------------------
// Structural attacks. Every report compares against reference decodes of the
// same latents.

inline std::vector<ImageF32> reference_decode(const ReferenceAutoencoder<float>& reference,
                                              const Tensor<float>& latents) {
  NoGradGuard guard;
  return batch_to_images(reference.decode(ops::constant(latents)).value());
}

inline std::vector<ImageF32> pcdiff_decode(const PCDiffModel<float>& model, const Tensor<float>& latents,
                                           const DecodeOptions& options) {
  NoGradGuard guard;
  return batch_to_images(model.decode(ops::constant(latents), options).images.value());
}

inline MetricsReport authorized_decode_report(const PCDiffModel<float>& model,
                                              const ReferenceAutoencoder<float>& reference,
                                              const Tensor<float>& latents, const FuserKey& key) {
  DecodeOptions o;
  o.key = &key;
  return evaluate_images("ori", pcdiff_decode(model, latents, o), reference_decode(reference, latents));
}

/// Decodes with `trials` random keys, none equal to the correct one; metrics pool all trials.
inline MetricsReport wrong_key_attack(const PCDiffModel<float>& model, const ReferenceAutoencoder<float>& reference,
                                      const Tensor<float>& latents, const FuserKey& correct_key, std::size_t trials,
                                      std::uint64_t seed, std::vector<FuserKey>* sampled = nullptr,
                                      std::vector<ImageF32>* images = nullptr) {
  if (trials == 0) throw ConfigError("wrong_key_attack: need at least one trial");
  const auto refs = reference_decode(reference, latents);
  Rng rng(mix_seed(seed, 0x3A7));
  std::vector<ImageF32> outputs, baseline;
  for (std::size_t t = 0; t < trials; ++t) {
    const FuserKey key = random_wrong_key(rng, correct_key);
    if (sampled) sampled->push_back(key);
    DecodeOptions o;
    o.key = &key;
    const auto imgs = pcdiff_decode(model, latents, o);
    outputs.insert(outputs.end(), imgs.begin(), imgs.end());
    baseline.insert(baseline.end(), refs.begin(), refs.end());
  }
  auto report = evaluate_images("wrong_key", outputs, baseline);
  if (images) *images = std::move(outputs);
  return report;
}

inline MetricsReport remove_fuser_attack(const PCDiffModel<float>& model, const ReferenceAutoencoder<float>& reference,
                                         const Tensor<float>& latents, std::vector<ImageF32>* images = nullptr) {
  DecodeOptions o;
  o.strip_fusers = true;
  auto outputs = pcdiff_decode(model, latents, o);
  auto report = evaluate_images("no_fuser", outputs, reference_decode(reference, latents));
  if (images) *images = std::move(outputs);
  return report;
}

/// The attacker has no key, so fusers run with a key of their own choosing
/// (drawn from `attacker_seed`) while the hypothesis strips layers.
inline DecodeOptions removal_options(const PCDiffModel<float>& model, const RemovalHypothesis& h,
                                     const FuserKey& attacker_key) {
  DecodeOptions o;
  o.key = &attacker_key;
  o.mask = mask_from_hypothesis(h, model.config().m, model.config().n);
  return o;
}

inline FuserKey attacker_key(std::uint64_t seed) { return generate_key(mix_seed(seed, 0xA77)); }

inline MetricsReport partial_removal_attack(const PCDiffModel<float>& model,
                                            const ReferenceAutoencoder<float>& reference,
                                            const RemovalHypothesis& hypothesis, const Tensor<float>& latents,
                                            std::uint64_t attacker_seed) {
  const FuserKey key = attacker_key(attacker_seed);
  auto r = evaluate_images("removal", pcdiff_decode(model, latents, removal_options(model, hypothesis, key)),
                           reference_decode(reference, latents));
  r.subject = "removal " + describe(hypothesis);
  return r;
}

/// Runs restoration_attack on every degraded output, then scores against `references`.
inline MetricsReport restoration_report(const std::string& condition, const std::vector<ImageF32>& degraded,
                                        const std::vector<ImageF32>& references) {
  std::vector<ImageF32> restored;
  restored.reserve(degraded.size());
  for (const auto& img : degraded) restored.push_back(restoration_attack(img));
  return evaluate_images(condition, restored, references);
}

struct BruteForceTrial {
  std::size_t index = 0;  // position in enumerate_removals order
  RemovalHypothesis hypothesis;
  double psnr = 0.0;
  double ssim = 0.0;
  double seconds = 0.0;
};

struct BruteForceResult {
  RemovalHypothesis best;
  double best_psnr = -1.0;
  double best_ssim = 0.0;
  std::vector<BruteForceTrial> trace;  // in visiting order
  double mean_trial_seconds = 0.0;
};

/// Visits `budget` hypotheses in a seeded random order without replacement.
/// Each trial's wall time covers decoding and scoring, i.e. one t_test.
inline BruteForceResult brute_force_search(const PCDiffModel<float>& model,
                                           const ReferenceAutoencoder<float>& reference, const Tensor<float>& latents,
                                           std::size_t budget, std::uint64_t seed) {
  const auto space = enumerate_removals(model.config().m, model.config().n);
  if (budget == 0 || budget > space.size()) {
    throw ConfigError("brute_force_search: budget " + std::to_string(budget) + " must lie in 1.." +
                      std::to_string(space.size()));
  }
  std::vector<std::size_t> order(space.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0xB4F));
  rng.shuffle(order.begin(), order.end());
  const FuserKey key = attacker_key(seed);
  const auto refs = reference_decode(reference, latents);

  BruteForceResult result;
  double total = 0.0;
  for (std::size_t t = 0; t < budget; ++t) {
    const auto start = std::chrono::steady_clock::now();
    BruteForceTrial trial;
    trial.index = order[t];
    trial.hypothesis = space[order[t]];
    const auto imgs = pcdiff_decode(model, latents, removal_options(model, trial.hypothesis, key));
    for (std::size_t i = 0; i < imgs.size(); ++i) {
      trial.psnr += psnr(imgs[i], refs[i]);
      trial.ssim += ssim(imgs[i], refs[i]);
    }
    trial.psnr /= static_cast<double>(imgs.size());
    trial.ssim /= static_cast<double>(imgs.size());
    trial.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    total += trial.seconds;
    if (trial.psnr > result.best_psnr) {
      result.best_psnr = trial.psnr;
      result.best_ssim = trial.ssim;
      result.best = trial.hypothesis;
    }
    result.trace.push_back(trial);
  }
  result.mean_trial_seconds = total / static_cast<double>(budget);
  return result;
}

}  // namespace pcdiff
