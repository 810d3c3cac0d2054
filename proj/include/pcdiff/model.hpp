#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pcdiff/image.hpp"
#include "pcdiff/layers.hpp"

namespace pcdiff {

/// Fixed widths of the desk-scale autoencoder (3x32x32 <-> 4x8x8).
struct Architecture {
  static constexpr std::size_t kImageChannels = 3;
  static constexpr std::size_t kLatentChannels = 4;
  static constexpr std::size_t kDownFactor = 4;
  static constexpr std::size_t kEncWidth0 = 16;
  static constexpr std::size_t kEncWidth1 = 32;
  static constexpr std::size_t kMidWidth = 32;
  static constexpr std::size_t kUp0Width = 32;
  static constexpr std::size_t kUp1Width = 16;
  static constexpr std::size_t kOriginalMidBlocks = 2;
};

template <typename T>
struct Encoder {
  Conv2d<T> c0, c1, c2, c3;

  static Encoder create(ParameterSet<T>& params, Rng& rng) {
    using A = Architecture;
    Encoder e;
    e.c0 = Conv2d<T>::create(params, "encoder.conv0", A::kImageChannels, A::kEncWidth0, 3, 1, rng);
    e.c1 = Conv2d<T>::create(params, "encoder.conv1", A::kEncWidth0, A::kEncWidth1, 3, 2, rng);
    e.c2 = Conv2d<T>::create(params, "encoder.conv2", A::kEncWidth1, A::kEncWidth1, 3, 2, rng);
    e.c3 = Conv2d<T>::create(params, "encoder.conv3", A::kEncWidth1, A::kLatentChannels, 3, 1, rng);
    return e;
  }

  Var<T> operator()(const Var<T>& x) const {
    return c3(ops::silu(c2(ops::silu(c1(ops::silu(c0(x)))))));
  }
};

/// The original decoder: conv_in, two mid blocks, two up layers, conv_out.
template <typename T>
struct ReferenceDecoder {
  Conv2d<T> conv_in;
  std::vector<MidBlock<T>> mid;
  UpLayer<T> up0, up1;
  Conv2d<T> conv_out;

  static ReferenceDecoder create(ParameterSet<T>& params, Rng& rng) {
    using A = Architecture;
    ReferenceDecoder d;
    d.conv_in = Conv2d<T>::create(params, "decoder.conv_in", A::kLatentChannels, A::kMidWidth, 3, 1, rng);
    for (std::size_t i = 0; i < A::kOriginalMidBlocks; ++i) {
      d.mid.push_back(MidBlock<T>::create(params, "decoder.mid." + std::to_string(i), A::kMidWidth, rng, false));
    }
    d.up0 = UpLayer<T>::create(params, "decoder.up0", A::kMidWidth, A::kUp0Width, rng);
    d.up1 = UpLayer<T>::create(params, "decoder.up1", A::kUp0Width, A::kUp1Width, rng);
    d.conv_out = Conv2d<T>::create(params, "decoder.conv_out", A::kUp1Width, A::kImageChannels, 3, 1, rng);
    return d;
  }

  Var<T> operator()(const Var<T>& z) const {
    Var<T> h = conv_in(z);
    for (const auto& b : mid) h = b(h);
    h = ops::silu(up0(h));
    h = ops::silu(up1(h));
    return ops::sigmoid(conv_out(h));
  }
};

template <typename T>
void require_latent_shape(const Var<T>& z) {
  const auto& s = z.shape();
  if (s.size() != 4 || s[1] != Architecture::kLatentChannels) {
    throw ConfigError("decoder: latent must be N x " + std::to_string(Architecture::kLatentChannels) +
                      " x H x W, got " + shape_str(s));
  }
}

template <typename T>
void require_image_shape(const Var<T>& x) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != Architecture::kImageChannels || s[2] % Architecture::kDownFactor ||
      s[3] % Architecture::kDownFactor) {
    throw ConfigError("encoder: image batch must be N x 3 x H x W with H, W divisible by 4, got " + shape_str(s));
  }
}

/// Frozen-able reference autoencoder; owns its parameters.
template <typename T>
class ReferenceAutoencoder {
 public:
  static ReferenceAutoencoder build(std::uint64_t seed) {
    ReferenceAutoencoder ae;
    Rng rng(mix_seed(seed, 0xAE));
    ae.encoder_ = Encoder<T>::create(ae.params_, rng);
    ae.decoder_ = ReferenceDecoder<T>::create(ae.params_, rng);
    return ae;
  }

  Var<T> encode(const Var<T>& images) const {
    require_image_shape(images);
    return encoder_(images);
  }
  Var<T> decode(const Var<T>& latents) const {
    require_latent_shape(latents);
    return decoder_(latents);
  }

  ParameterSet<T>& params() noexcept { return params_; }
  const ParameterSet<T>& params() const noexcept { return params_; }
  const ReferenceDecoder<T>& decoder() const noexcept { return decoder_; }
  const Encoder<T>& encoder() const noexcept { return encoder_; }

  std::size_t mid_block_count() const noexcept { return decoder_.mid.size(); }

  void freeze() { params_.freeze_all(); }

 private:
  ParameterSet<T> params_;
  Encoder<T> encoder_;
  ReferenceDecoder<T> decoder_;
};

enum class FuserSite { decoder_input, before_output };

inline std::string to_string(FuserSite s) {
  return s == FuserSite::decoder_input ? "input" : "output";
}

inline FuserSite parse_fuser_site(const std::string& s) {
  if (s == "input") return FuserSite::decoder_input;
  if (s == "output") return FuserSite::before_output;
  throw ConfigError("unknown fuser site '" + s + "' (expected input or output)");
}

/// How many layers are added, and where the fusers sit.
///
/// Labels follow the "<total mid blocks>-<total up layers>" convention, so a
/// label of "8-6" is m = 6 added mid blocks and n = 5 added up/down pairs.
struct StructureConfig {
  std::int64_t m = 0;
  std::int64_t n = 0;
  std::vector<FuserSite> fusers{FuserSite::decoder_input, FuserSite::before_output};
  std::string label;

  void validate() const {
    if (m < 0 || n < 0) {
      throw ConfigError("structure: m and n must be non-negative, got m=" + std::to_string(m) +
                        " n=" + std::to_string(n));
    }
    for (std::size_t i = 0; i < fusers.size(); ++i)
      for (std::size_t j = i + 1; j < fusers.size(); ++j)
        if (fusers[i] == fusers[j]) throw ConfigError("structure: duplicate fuser site " + to_string(fusers[i]));
  }

  std::string effective_label() const {
    return label.empty() ? std::to_string(m + 2) + "-" + std::to_string(n + 1) : label;
  }

  static StructureConfig from_label(const std::string& label) {
    const auto dash = label.find('-');
    if (dash == std::string::npos || dash == 0 || dash + 1 == label.size()) {
      throw ConfigError("structure label '" + label + "' is not of the form <mid>-<up>");
    }
    std::int64_t total_mid = 0, total_up = 0;
    try {
      std::size_t used = 0;
      total_mid = std::stoll(label.substr(0, dash), &used);
      if (used != dash) throw std::invalid_argument(label);
      total_up = std::stoll(label.substr(dash + 1), &used);
      if (used != label.size() - dash - 1) throw std::invalid_argument(label);
    } catch (const std::logic_error&) {
      throw ConfigError("structure label '" + label + "' is not of the form <mid>-<up>");
    }
    StructureConfig c;
    c.m = total_mid - 2;
    c.n = total_up - 1;
    c.label = label;
    c.validate();
    return c;
  }
};

/// Which fine-tuning structures survive an attacker's edit. Empty vectors keep everything.
struct LayerMask {
  std::vector<bool> keep_mid;   // one entry per mid slot (m + 2)
  std::vector<bool> keep_pair;  // one entry per added up/down pair (n)
};

inline LayerMask mask_from_hypothesis(const RemovalHypothesis& h, std::int64_t m, std::int64_t n) {
  const auto slots = static_cast<std::size_t>(m + 2);
  const auto pairs = static_cast<std::size_t>(n);
  LayerMask mask{std::vector<bool>(slots, true), std::vector<bool>(pairs, true)};
  if (h.kind == RemovalHypothesis::Kind::mid_pair) {
    const auto [i, j] = h.mid_survivors;
    if (i >= slots || j >= slots || i == j) {
      throw ConfigError("removal hypothesis " + describe(h) + " invalid for " + std::to_string(slots) + " mid slots");
    }
    std::fill(mask.keep_mid.begin(), mask.keep_mid.end(), false);
    mask.keep_mid[i] = mask.keep_mid[j] = true;
  } else {
    for (std::size_t c : h.up_choice) {
      if (c > pairs) {
        throw ConfigError("removal hypothesis " + describe(h) + " invalid for " + std::to_string(pairs) +
                          " up/down pairs");
      }
      if (c > 0) mask.keep_pair[c - 1] = false;
    }
  }
  return mask;
}

enum class GateMode {
  keyed,            // fusers present and driven by the supplied key
  missing_key,      // fusers present but no key supplied; they pass features through
  fusers_stripped,  // fusers removed by the caller
};

inline std::string to_string(GateMode g) {
  switch (g) {
    case GateMode::keyed: return "keyed";
    case GateMode::missing_key: return "missing_key";
    case GateMode::fusers_stripped: return "fusers_stripped";
  }
  return "?";
}

struct DecodeOptions {
  const FuserKey* key = nullptr;
  bool strip_fusers = false;
  LayerMask mask;
};

template <typename T>
struct DecodeResult {
  Var<T> images;
  GateMode mode = GateMode::keyed;
  bool unauthorized() const noexcept { return mode != GateMode::keyed; }
};

/// Reference autoencoder with fuser layers and fine-tuning layers added to
/// the decoder. Encoder and original decoder parameters are frozen copies.
template <typename T>
class PCDiffModel {
 public:
  struct MidSlot {
    MidBlock<T> block;
    bool original = false;
  };
  struct UpDownPair {
    UpLayer<T> up;
    DownLayer<T> down;
  };
  struct FuserSlot {
    FuserSite site;
    Fuser<T> fuser;
  };

  /// New layers start so that the initial forward pass equals the reference.
  static PCDiffModel build(const ReferenceAutoencoder<T>& reference, const StructureConfig& config,
                           std::uint64_t seed) {
    config.validate();
    using A = Architecture;
    PCDiffModel model;
    model.config_ = config;
    Rng scratch(0);
    model.encoder_ = Encoder<T>::create(model.params_, scratch);
    model.base_ = ReferenceDecoder<T>::create(model.params_, scratch);
    for (auto& p : model.params_.items()) {
      p.var.mutable_value() = reference.params().at(p.name).var.value();
      p.frozen = true;
      p.var.set_requires_grad(false);
    }

    Rng rng(mix_seed(seed, 0xFC));
    const auto m = static_cast<std::size_t>(config.m);
    const std::size_t before = (m + 1) / 2;
    std::vector<MidBlock<T>> added;
    for (std::size_t k = 0; k < m; ++k) {
      added.push_back(MidBlock<T>::create(model.params_, "pcdiff.mid." + std::to_string(k), A::kMidWidth, rng, true));
    }
    for (std::size_t k = 0; k < before; ++k) model.mid_.push_back({added[k], false});
    for (const auto& b : model.base_.mid) model.mid_.push_back({b, true});
    for (std::size_t k = before; k < m; ++k) model.mid_.push_back({added[k], false});

    for (std::int64_t k = 0; k < config.n; ++k) {
      const std::string name = "pcdiff.pair." + std::to_string(k);
      model.pairs_.push_back({UpLayer<T>::create(model.params_, name + ".up", A::kMidWidth, A::kMidWidth, rng,
                                                 Init::identity),
                              DownLayer<T>::create(model.params_, name + ".down", A::kMidWidth, rng, Init::identity)});
    }
    for (FuserSite site : config.fusers) {
      const std::size_t channels = site == FuserSite::decoder_input ? A::kMidWidth : A::kUp1Width;
      model.fusers_.push_back({site, Fuser<T>::create(model.params_, "pcdiff.fuser." + to_string(site), channels, rng)});
    }
    return model;
  }

  Var<T> encode(const Var<T>& images) const {
    require_image_shape(images);
    return encoder_(images);
  }

  DecodeResult<T> decode(const Var<T>& latents, const DecodeOptions& options = {}) const {
    require_latent_shape(latents);
    const LayerMask& mask = options.mask;
    if (!mask.keep_mid.empty() && mask.keep_mid.size() != mid_.size()) {
      throw ConfigError("layer mask has " + std::to_string(mask.keep_mid.size()) + " mid entries, model has " +
                        std::to_string(mid_.size()));
    }
    if (!mask.keep_pair.empty() && mask.keep_pair.size() != pairs_.size()) {
      throw ConfigError("layer mask has " + std::to_string(mask.keep_pair.size()) + " pair entries, model has " +
                        std::to_string(pairs_.size()));
    }

    DecodeResult<T> result;
    const bool fusers_active = !options.strip_fusers && !fusers_.empty() && options.key != nullptr;
    if (options.strip_fusers) {
      result.mode = GateMode::fusers_stripped;
    } else if (!fusers_.empty() && options.key == nullptr) {
      result.mode = GateMode::missing_key;
    }
    Var<T> key_vec;
    if (fusers_active) key_vec = ops::constant(key_tensor<T>(*options.key));

    auto apply_fuser = [&](FuserSite site, const Var<T>& h) {
      if (!fusers_active) return h;
      for (const auto& f : fusers_)
        if (f.site == site) return f.fuser(h, key_vec);
      return h;
    };

    Var<T> h = base_.conv_in(latents);
    h = apply_fuser(FuserSite::decoder_input, h);
    for (std::size_t i = 0; i < mid_.size(); ++i) {
      if (mask.keep_mid.empty() || mask.keep_mid[i]) h = mid_[i].block(h);
    }
    for (std::size_t i = 0; i < pairs_.size(); ++i) {
      if (mask.keep_pair.empty() || mask.keep_pair[i]) h = pairs_[i].down(pairs_[i].up(h));
    }
    h = ops::silu(base_.up0(h));
    h = ops::silu(base_.up1(h));
    h = apply_fuser(FuserSite::before_output, h);
    result.images = ops::sigmoid(base_.conv_out(h));
    return result;
  }

  DecodeResult<T> decode(const Var<T>& latents, const FuserKey& key) const {
    DecodeOptions o;
    o.key = &key;
    return decode(latents, o);
  }

  const StructureConfig& config() const noexcept { return config_; }
  ParameterSet<T>& params() noexcept { return params_; }
  const ParameterSet<T>& params() const noexcept { return params_; }
  const std::vector<MidSlot>& mid_slots() const noexcept { return mid_; }
  const std::vector<UpDownPair>& pairs() const noexcept { return pairs_; }
  const std::vector<FuserSlot>& fusers() const noexcept { return fusers_; }
  const Encoder<T>& encoder() const noexcept { return encoder_; }

 private:
  StructureConfig config_;
  ParameterSet<T> params_;
  Encoder<T> encoder_;
  ReferenceDecoder<T> base_;
  std::vector<MidSlot> mid_;
  std::vector<UpDownPair> pairs_;
  std::vector<FuserSlot> fusers_;
};

/// Copies tensor values by name; every parameter of `dst` must be present with the same shape.
template <typename T>
void load_values(ParameterSet<T>& dst, const ParameterSet<T>& src) {
  for (auto& p : dst.items()) {
    const auto* s = src.find(p.name);
    if (!s) throw ConfigError("parameter '" + p.name + "' missing from source");
    if (s->var.shape() != p.var.shape()) {
      throw ConfigError("parameter '" + p.name + "' has shape " + shape_str(s->var.shape()) + ", expected " +
                        shape_str(p.var.shape()));
    }
    p.var.mutable_value() = s->var.value();
  }
}

}  // namespace pcdiff
