#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pcdiff/keying.hpp"
#include "pcdiff/ops.hpp"
#include "pcdiff/params.hpp"
#include "pcdiff/rng.hpp"

namespace pcdiff {

enum class Init { he_normal, zero, identity };

/// What an observer of the serialized model can see about a layer.
struct LayerSignature {
  std::string kind;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 0;

  std::string str() const {
    return kind + "(" + std::to_string(in_channels) + "->" + std::to_string(out_channels) + ",k" +
           std::to_string(kernel) + ",s" + std::to_string(stride) + ")";
  }
  friend bool operator==(const LayerSignature&, const LayerSignature&) = default;
};

template <typename T>
Tensor<T> init_tensor(Shape shape, Init init, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  switch (init) {
    case Init::zero: break;
    case Init::he_normal: {
      const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (auto& v : t.storage()) v = static_cast<T>(rng.normal() * stddev);
      break;
    }
    case Init::identity: {
      // OIHW with a unit centre tap on the channel diagonal.
      const auto& s = t.shape();
      for (std::size_t c = 0; c < std::min(s[0], s[1]); ++c) t.at(c, c, s[2] / 2, s[3] / 2) = T{1};
      break;
    }
  }
  return t;
}

template <typename T>
struct Conv2d {
  Var<T> weight, bias;
  std::size_t in = 0, out = 0, kernel = 3, stride = 1, padding = 1;

  static Conv2d create(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out,
                       std::size_t kernel, std::size_t stride, Rng& rng, Init init = Init::he_normal,
                       bool frozen = false) {
    Conv2d c;
    c.in = in;
    c.out = out;
    c.kernel = kernel;
    c.stride = stride;
    c.padding = kernel / 2;
    c.weight = params.add(name + ".weight", init_tensor<T>({out, in, kernel, kernel}, init, in * kernel * kernel, rng),
                          frozen);
    c.bias = params.add(name + ".bias", Tensor<T>({out}), frozen);
    return c;
  }

  Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, weight, bias, stride, padding); }

  LayerSignature signature() const { return {"conv2d", in, out, kernel, stride}; }
};

template <typename T>
struct Linear {
  Var<T> weight, bias;
  std::size_t in = 0, out = 0;

  static Linear create(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                       Init init = Init::he_normal, bool frozen = false) {
    Linear l;
    l.in = in;
    l.out = out;
    l.weight = params.add(name + ".weight", init_tensor<T>({out, in}, init, in, rng), frozen);
    l.bias = params.add(name + ".bias", Tensor<T>({out}), frozen);
    return l;
  }

  Var<T> operator()(const Var<T>& x) const { return ops::linear(x, weight, bias); }
};

/// Residual block at bottleneck resolution: x + conv2(silu(conv1(silu(x)))).
template <typename T>
struct MidBlock {
  Conv2d<T> conv1, conv2;

  /// `near_identity` zeroes the second conv so the block starts as an exact identity.
  static MidBlock create(ParameterSet<T>& params, const std::string& name, std::size_t channels, Rng& rng,
                         bool near_identity, bool frozen = false) {
    MidBlock b;
    b.conv1 = Conv2d<T>::create(params, name + ".conv1", channels, channels, 3, 1, rng, Init::he_normal, frozen);
    b.conv2 = Conv2d<T>::create(params, name + ".conv2", channels, channels, 3, 1, rng,
                                near_identity ? Init::zero : Init::he_normal, frozen);
    return b;
  }

  Var<T> operator()(const Var<T>& x) const { return ops::add(x, conv2(ops::silu(conv1(ops::silu(x))))); }

  std::vector<LayerSignature> signature() const {
    return {{"mid_block", conv1.in, conv2.out, 0, 0}, conv1.signature(), conv2.signature()};
  }
};

/// Nearest x2 upsample followed by a 3x3 conv.
template <typename T>
struct UpLayer {
  Conv2d<T> conv;

  static UpLayer create(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                        Init init = Init::he_normal, bool frozen = false) {
    return {Conv2d<T>::create(params, name + ".conv", in, out, 3, 1, rng, init, frozen)};
  }

  Var<T> operator()(const Var<T>& x) const { return conv(ops::upsample_nearest2x(x)); }

  std::vector<LayerSignature> signature() const {
    return {{"upsample_nearest2x", conv.in, conv.in, 0, 0}, conv.signature()};
  }
};

/// Stride-2 3x3 conv that undoes an UpLayer's resolution change.
template <typename T>
struct DownLayer {
  Conv2d<T> conv;

  static DownLayer create(ParameterSet<T>& params, const std::string& name, std::size_t channels, Rng& rng,
                          Init init = Init::he_normal, bool frozen = false) {
    return {Conv2d<T>::create(params, name + ".conv", channels, channels, 3, 2, rng, init, frozen)};
  }

  Var<T> operator()(const Var<T>& x) const { return conv(x); }
};

template <typename T>
Tensor<T> key_tensor(const FuserKey& key) {
  const auto bits = key.bipolar();
  Tensor<T> t({1, FuserKey::kBits});
  for (std::size_t i = 0; i < bits.size(); ++i) t[i] = static_cast<T>(bits[i]);
  return t;
}

/// Key-conditioned layer: F' = DynamicConv(F; W(Embedding(K))) + F.
///
/// The embedding is a linear map of the bipolar key to `kEmbedDim`; a two-layer
/// perceptron turns it into one 3x3 depthwise kernel and one bias per channel.
/// The generated weights depend on the key only.
template <typename T>
struct Fuser {
  static constexpr std::size_t kEmbedDim = 256;
  static constexpr std::size_t kHiddenDim = 64;
  static constexpr std::size_t kKernel = 3;
  static constexpr double kEmbedGain = 0.05;

  Linear<T> embed, gen_hidden, gen_out;
  std::size_t channels = 0;

  /// `zero_generator` zero-initialises the last generator layer so the layer starts as identity.
  static Fuser create(ParameterSet<T>& params, const std::string& name, std::size_t channels, Rng& rng,
                      bool zero_generator = true) {
    Fuser f;
    f.channels = channels;
    f.embed = Linear<T>::create(params, name + ".embed", FuserKey::kBits, kEmbedDim, rng);
    // A small embedding keeps the generated kernels dominated by the shared bias
    // path, so an arbitrary key degrades the output without destroying it.
    for (auto& v : f.embed.weight.mutable_value().storage()) v = static_cast<T>(v * kEmbedGain);
    f.gen_hidden = Linear<T>::create(params, name + ".gen_hidden", kEmbedDim, kHiddenDim, rng);
    f.gen_out = Linear<T>::create(params, name + ".gen_out", kHiddenDim, channels * (kKernel * kKernel + 1), rng,
                                  zero_generator ? Init::zero : Init::he_normal);
    return f;
  }

  struct DynamicWeights {
    Var<T> kernels;  // [C, 3, 3]
    Var<T> bias;     // [C]
  };

  DynamicWeights generate(const Var<T>& key_vec) const {
    const Var<T> v = embed(key_vec);
    const Var<T> g = gen_out(ops::silu(gen_hidden(v)));
    return {ops::narrow(g, 0, {channels, kKernel, kKernel}),
            ops::narrow(g, channels * kKernel * kKernel, {channels})};
  }

  Var<T> operator()(const Var<T>& features, const Var<T>& key_vec) const {
    if (key_vec.shape() != Shape{1, FuserKey::kBits}) {
      throw KeyError("fuser: key vector must have shape [1x128], got " + shape_str(key_vec.shape()));
    }
    if (features.shape().size() != 4 || features.shape()[1] != channels) {
      throw ConfigError("fuser: expected NCHW features with " + std::to_string(channels) + " channels, got " +
                        shape_str(features.shape()));
    }
    const auto w = generate(key_vec);
    return ops::add(ops::depthwise_conv2d(features, w.kernels, w.bias, kKernel / 2), features);
  }

  Var<T> operator()(const Var<T>& features, const FuserKey& key) const {
    return (*this)(features, ops::constant(key_tensor<T>(key)));
  }
};

}  // namespace pcdiff
