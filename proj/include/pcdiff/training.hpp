#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcdiff/features.hpp"
#include "pcdiff/metrics.hpp"
#include "pcdiff/model.hpp"
#include "pcdiff/optim.hpp"
#include "pcdiff/synth_data.hpp"

namespace pcdiff {

struct TrainHParams {
  double learning_rate = 5e-5;
  std::size_t steps = 100;
  std::size_t batch_size = 16;
  double lambda1 = 1.0;  // MAE weight
  double lambda2 = 1.0;  // perceptual weight
  double lambda3 = 0.0;  // wrong-key repulsion weight, off by default
  double margin = 0.05;
  double ceiling = 0.0;  // when > 0, wrong-key MAE above this is also penalised
  std::size_t wrong_keys = 1;  // sampled per step when lambda3 > 0
  double strip_weight = 0.0;   // hinge on the fuser-stripped decode, off by default
  double strip_margin = 0.1;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  double cycle_weight = 1.0;     // reference stage: latent cycle term
  double gaussian_fraction = 0.5;  // share of N(0, 1) latents in each batch
  std::uint64_t seed = 0;
  std::uint64_t perceptual_seed = kPerceptualSeed;

  void validate() const {
    auto bad = [](const std::string& what) { throw ConfigError("train: " + what); };
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) bad("learning_rate must be positive");
    if (batch_size == 0) bad("batch_size must be at least 1");
    if (lambda1 < 0.0 || lambda2 < 0.0 || lambda3 < 0.0) bad("loss weights must be non-negative");
    if (margin < 0.0 || strip_margin < 0.0) bad("margins must be non-negative");
    if (strip_weight < 0.0) bad("strip_weight must be non-negative");
    if (ceiling < 0.0 || (ceiling > 0.0 && ceiling <= margin)) bad("ceiling must be 0 (off) or above margin");
    if (lambda3 > 0.0 && wrong_keys == 0) bad("wrong_keys must be at least 1 when lambda3 > 0");
    if (weight_decay < 0.0 || clip_norm < 0.0 || cycle_weight < 0.0) bad("decay, clip and cycle weight must be >= 0");
    if (gaussian_fraction < 0.0 || gaussian_fraction > 1.0) bad("gaussian_fraction must lie in [0, 1]");
  }

  AdamWConfig optimizer() const {
    AdamWConfig c;
    c.learning_rate = learning_rate;
    c.weight_decay = weight_decay;
    c.clip_norm = clip_norm;
    return c;
  }
};

struct StepRecord {
  std::size_t step = 0;
  double total = 0.0;
  double reconstruction = 0.0;  // reference stage: image MSE; PCDiff stage: MAE
  double perceptual = 0.0;
  double repulsion = 0.0;
  double strip = 0.0;
  double cycle = 0.0;
  double grad_norm = 0.0;
};

struct TrainReport {
  std::string stage;
  TrainHParams hparams;
  std::vector<StepRecord> curve;
  double wall_seconds = 0.0;
  double eval_psnr = 0.0;
  double eval_ssim = 0.0;

  nlohmann::json summary() const {
    nlohmann::json j;
    j["stage"] = stage;
    j["steps"] = curve.size();
    j["learning_rate"] = hparams.learning_rate;
    j["batch_size"] = hparams.batch_size;
    j["lambda1"] = hparams.lambda1;
    j["lambda2"] = hparams.lambda2;
    j["lambda3"] = hparams.lambda3;
    j["margin"] = hparams.margin;
    j["ceiling"] = hparams.ceiling;
    j["strip_weight"] = hparams.strip_weight;
    j["strip_margin"] = hparams.strip_margin;
    j["seed"] = hparams.seed;
    j["initial_loss"] = curve.empty() ? 0.0 : curve.front().total;
    j["final_loss"] = curve.empty() ? 0.0 : curve.back().total;
    j["eval_psnr"] = eval_psnr;
    j["eval_ssim"] = eval_ssim;
    j["wall_seconds"] = wall_seconds;
    return j;
  }

  void write_jsonl(std::ostream& os) const {
    for (const auto& r : curve) {
      nlohmann::json j{{"step", r.step},         {"total", r.total},         {"reconstruction", r.reconstruction},
                       {"perceptual", r.perceptual}, {"repulsion", r.repulsion}, {"strip", r.strip},
                       {"cycle", r.cycle},
                       {"grad_norm", r.grad_norm}};
      os << j.dump() << '\n';
    }
  }
};

/// Deterministic epoch-wise batch sampler over a fixed index range.
class BatchSampler {
 public:
  BatchSampler(std::size_t count, std::uint64_t seed) : order_(count), rng_(seed) {
    if (count == 0) throw ConfigError("train: empty dataset");
    for (std::size_t i = 0; i < count; ++i) order_[i] = i;
    rng_.shuffle(order_.begin(), order_.end());
  }

  std::vector<std::size_t> next(std::size_t n) {
    std::vector<std::size_t> out;
    out.reserve(n);
    while (out.size() < n) {
      if (cursor_ == order_.size()) {
        rng_.shuffle(order_.begin(), order_.end());
        cursor_ = 0;
      }
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t cursor_ = 0;
};

template <typename T>
Var<T> mae_loss(const Var<T>& a, const Var<T>& b) {
  return ops::mae(a, b);
}

inline double mae_loss(std::span<const ImageF32> a, std::span<const ImageF32> b) {
  NoGradGuard guard;
  return mae_loss(ops::constant(images_to_batch<double>(a)), ops::constant(images_to_batch<double>(b))).value()[0];
}

template <typename T>
Tensor<T> gaussian_latents(std::size_t n, Rng& rng) {
  Tensor<T> z({n, Architecture::kLatentChannels, 8, 8});
  for (auto& v : z.storage()) v = static_cast<T>(rng.normal());
  return z;
}

template <typename T>
Tensor<T> gather_images(const std::vector<ImageF32>& images, const std::vector<std::size_t>& idx) {
  std::vector<ImageF32> picked;
  picked.reserve(idx.size());
  for (std::size_t i : idx) picked.push_back(images[i]);
  return images_to_batch<T>(picked);
}

/// Hinge repulsion averaged over `samples` uniformly drawn wrong keys:
/// max(0, margin - MAE(decode(z, wrong), target)). A positive `ceiling` adds
/// max(0, MAE - ceiling), keeping wrong keys inside a band rather than only
/// above the margin.
template <typename T>
Var<T> repulsion_loss(const PCDiffModel<T>& model, const Var<T>& latents, const Var<T>& target,
                      const FuserKey& correct_key, Rng& sampler, double margin, std::size_t samples = 1,
                      double ceiling = 0.0) {
  if (samples == 0) throw ConfigError("repulsion_loss: need at least one wrong key");
  Var<T> total;
  for (std::size_t s = 0; s < samples; ++s) {
    const FuserKey wrong = random_wrong_key(sampler, correct_key);
    const auto out = model.decode(latents, wrong).images;
    const auto dist = ops::mae(out, target);
    Var<T> hinge = ops::relu(ops::add_scalar(ops::scale(dist, T{-1}), static_cast<T>(margin)));
    if (ceiling > 0.0) hinge = ops::add(hinge, ops::relu(ops::add_scalar(dist, static_cast<T>(-ceiling))));
    total = total.defined() ? ops::add(total, hinge) : hinge;
  }
  return ops::scale(total, T{1} / static_cast<T>(samples));
}

/// Hinge max(0, margin - MAE(decode without fusers, target)).
template <typename T>
Var<T> strip_repulsion_loss(const PCDiffModel<T>& model, const Var<T>& latents, const Var<T>& target, double margin) {
  DecodeOptions strip;
  strip.strip_fusers = true;
  const auto out = model.decode(latents, strip).images;
  return ops::relu(ops::add_scalar(ops::scale(ops::mae(out, target), T{-1}), static_cast<T>(margin)));
}

namespace detail {

template <typename T>
void require_finite(double loss, std::size_t step, const std::string& stage) {
  if (!std::isfinite(loss)) {
    throw TrainingError(stage + ": non-finite loss at step " + std::to_string(step));
  }
}

template <typename F>
double seconds_since(F start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

/// Mean PSNR/SSIM of `decode(encode(x))` against x over the eval images.
template <typename T>
std::pair<double, double> reconstruction_quality(const ReferenceAutoencoder<T>& ae, const std::vector<ImageF32>& images,
                                                 std::size_t chunk = 50) {
  if (images.empty()) return {0.0, 0.0};
  NoGradGuard guard;
  double p = 0.0, s = 0.0;
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const std::size_t end = std::min(images.size(), start + chunk);
    const std::span<const ImageF32> part(images.data() + start, end - start);
    const auto y = ae.decode(ae.encode(ops::constant(images_to_batch<T>(part)))).value();
    const auto out = batch_to_images(y);
    for (std::size_t i = 0; i < out.size(); ++i) {
      p += psnr(out[i], part[i]);
      s += ssim(out[i], part[i]);
    }
  }
  return {p / static_cast<double>(images.size()), s / static_cast<double>(images.size())};
}

template <typename T>
struct ReferenceTraining {
  ReferenceAutoencoder<T> model;
  TrainReport report;
};

/// Stage 0: reconstruction MSE plus a latent cycle term ||E(D(z)) - z||^2 on
/// N(0, 1) latents, so that latents fed straight to the decoder survive a
/// round trip through the encoder.
template <typename T = float>
ReferenceTraining<T> train_reference(const DatasetSplit& data, const TrainHParams& hp) {
  hp.validate();
  if (data.train.empty()) throw ConfigError("train_reference: empty dataset");
  const auto start = std::chrono::steady_clock::now();
  ReferenceTraining<T> out{ReferenceAutoencoder<T>::build(hp.seed), {}};
  out.report.stage = "reference";
  out.report.hparams = hp;
  auto& ae = out.model;
  AdamW<T> opt(hp.optimizer());
  BatchSampler sampler(data.train.size(), mix_seed(hp.seed, 1));
  Rng noise(mix_seed(hp.seed, 2));
  const auto cycle_n = static_cast<std::size_t>(std::llround(hp.gaussian_fraction * static_cast<double>(hp.batch_size)));

  for (std::size_t step = 0; step < hp.steps; ++step) {
    ae.params().zero_grad();
    const auto x = ops::constant(gather_images<T>(data.train, sampler.next(hp.batch_size)));
    const auto recon = ops::mse(ae.decode(ae.encode(x)), x);
    Var<T> total = recon;
    StepRecord rec;
    rec.step = step;
    rec.reconstruction = recon.value()[0];
    if (hp.cycle_weight > 0.0 && cycle_n > 0) {
      const auto z = ops::constant(gaussian_latents<T>(cycle_n, noise));
      const auto cycle = ops::mse(ae.encode(ae.decode(z)), z);
      rec.cycle = cycle.value()[0];
      total = ops::add(total, ops::scale(cycle, static_cast<T>(hp.cycle_weight)));
    }
    rec.total = total.value()[0];
    detail::require_finite<T>(rec.total, step, "train_reference");
    backward(total);
    rec.grad_norm = opt.step(ae.params());
    out.report.curve.push_back(rec);
  }
  std::tie(out.report.eval_psnr, out.report.eval_ssim) = reconstruction_quality(ae, data.eval);
  out.report.wall_seconds = detail::seconds_since(start);
  return out;
}

/// Throws unless every parameter shared with the reference is still frozen
/// and byte-identical to it.
template <typename T>
void verify_frozen(const PCDiffModel<T>& model, const ReferenceAutoencoder<T>& reference) {
  for (const auto& p : model.params().items()) {
    const auto* original = reference.params().find(p.name);
    if (!original) continue;
    if (!p.frozen || p.var.requires_grad()) {
      throw TrainingError("reference parameter '" + p.name + "' has been unfrozen");
    }
    if (!bit_equal(p.var.value(), original->var.value())) {
      throw TrainingError("reference parameter '" + p.name + "' differs from the reference checkpoint");
    }
  }
}

/// Mixed latent batch: encoded training images plus N(0, 1) draws.
template <typename T>
Tensor<T> stage1_latents(const ReferenceAutoencoder<T>& reference, const std::vector<ImageF32>& images,
                         BatchSampler& sampler, Rng& noise, std::size_t batch, double gaussian_fraction) {
  NoGradGuard guard;
  const auto gaussian = static_cast<std::size_t>(std::llround(gaussian_fraction * static_cast<double>(batch)));
  const std::size_t encoded = batch - gaussian;
  Tensor<T> z({batch, Architecture::kLatentChannels, 8, 8});
  std::size_t offset = 0;
  if (encoded > 0) {
    const auto e = reference.encode(ops::constant(gather_images<T>(images, sampler.next(encoded)))).value();
    std::copy(e.data().begin(), e.data().end(), z.storage().begin());
    offset = e.numel();
  }
  for (std::size_t i = offset; i < z.numel(); ++i) z[i] = static_cast<T>(noise.normal());
  return z;
}

template <typename T>
struct PCDiffTraining {
  PCDiffModel<T> model;
  TrainReport report;
};

/// Stage 1 on an existing model: only fuser and fine-tuning layers move.
template <typename T>
TrainReport train_pcdiff(PCDiffModel<T>& model, const ReferenceAutoencoder<T>& reference, const FuserKey& key,
                         const DatasetSplit& data, const TrainHParams& hp) {
  hp.validate();
  if (data.train.empty()) throw ConfigError("train_pcdiff: empty dataset");
  verify_frozen(model, reference);
  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  report.stage = "pcdiff";
  report.hparams = hp;
  AdamW<T> opt(hp.optimizer());
  const RandomFeatureNet<T> features(hp.perceptual_seed);
  BatchSampler sampler(data.train.size(), mix_seed(hp.seed, 11));
  Rng noise(mix_seed(hp.seed, 12));
  Rng wrong(mix_seed(hp.seed, 13));

  for (std::size_t step = 0; step < hp.steps; ++step) {
    model.params().zero_grad();
    const auto z = ops::constant(
        stage1_latents(reference, data.train, sampler, noise, hp.batch_size, hp.gaussian_fraction));
    Var<T> target;
    {
      NoGradGuard guard;
      target = ops::constant(reference.decode(z).value());
    }
    const auto out = model.decode(z, key).images;
    const auto mae = mae_loss(out, target);
    const auto perc = perceptual_distance(features, out, target);
    Var<T> total = ops::add(ops::scale(mae, static_cast<T>(hp.lambda1)), ops::scale(perc, static_cast<T>(hp.lambda2)));
    StepRecord rec;
    rec.step = step;
    rec.reconstruction = mae.value()[0];
    rec.perceptual = perc.value()[0];
    if (hp.lambda3 > 0.0) {
      const auto rep = repulsion_loss(model, z, target, key, wrong, hp.margin, hp.wrong_keys, hp.ceiling);
      rec.repulsion = rep.value()[0];
      total = ops::add(total, ops::scale(rep, static_cast<T>(hp.lambda3)));
    }
    if (hp.strip_weight > 0.0) {
      const auto strip = strip_repulsion_loss(model, z, target, hp.strip_margin);
      rec.strip = strip.value()[0];
      total = ops::add(total, ops::scale(strip, static_cast<T>(hp.strip_weight)));
    }
    rec.total = total.value()[0];
    detail::require_finite<T>(rec.total, step, "train_pcdiff");
    backward(total);
    rec.grad_norm = opt.step(model.params());
    report.curve.push_back(rec);
  }
  verify_frozen(model, reference);

  {
    NoGradGuard guard;
    const std::size_t n = std::min<std::size_t>(data.eval.size(), 50);
    if (n > 0) {
      const std::span<const ImageF32> part(data.eval.data(), n);
      const auto z = reference.encode(ops::constant(images_to_batch<T>(part)));
      const auto ref_img = batch_to_images(reference.decode(z).value());
      const auto got = batch_to_images(model.decode(z, key).images.value());
      for (std::size_t i = 0; i < n; ++i) {
        report.eval_psnr += psnr(got[i], ref_img[i]);
        report.eval_ssim += ssim(got[i], ref_img[i]);
      }
      report.eval_psnr /= static_cast<double>(n);
      report.eval_ssim /= static_cast<double>(n);
    }
  }
  report.wall_seconds = detail::seconds_since(start);
  return report;
}

template <typename T = float>
PCDiffTraining<T> train_pcdiff(const ReferenceAutoencoder<T>& reference, const StructureConfig& config,
                               const FuserKey& key, const DatasetSplit& data, const TrainHParams& hp) {
  PCDiffTraining<T> out{PCDiffModel<T>::build(reference, config, mix_seed(hp.seed, 10)), {}};
  out.report = train_pcdiff(out.model, reference, key, data, hp);
  return out;
}

}  // namespace pcdiff
