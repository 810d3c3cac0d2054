#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "pcdiff/params.hpp"

namespace pcdiff {

struct AdamWConfig {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

/// Decoupled-weight-decay Adam with global-norm gradient clipping.
///
/// Moments are allocated lazily and only for trainable parameters; frozen
/// parameters are never read for writing.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config) : config_(config) {}

  const AdamWConfig& config() const noexcept { return config_; }
  std::size_t step_count() const noexcept { return step_; }
  bool has_moments(const std::string& name) const { return moments_.contains(name); }
  std::size_t moment_count() const noexcept { return moments_.size(); }

  /// Returns the pre-clip global gradient norm.
  double step(ParameterSet<T>& params) {
    double sq = 0.0;
    for (auto& p : params.items()) {
      if (p.frozen) continue;
      if (!p.var.has_grad()) throw TrainingError("AdamW: trainable parameter '" + p.name + "' has no gradient");
      for (T g : p.var.grad().data()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("AdamW: non-finite gradient norm");
    const double clip = (config_.clip_norm > 0.0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;

    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    const double lr = config_.learning_rate;
    const double decay = 1.0 - lr * config_.weight_decay;

    for (auto& p : params.items()) {
      if (p.frozen) continue;
      auto& st = moments_[p.name];
      auto& w = p.var.mutable_value();
      const auto& g = p.var.grad();
      if (st.m.size() != w.numel()) {
        st.m.assign(w.numel(), 0.0);
        st.v.assign(w.numel(), 0.0);
      }
      for (std::size_t i = 0; i < w.numel(); ++i) {
        const double gi = static_cast<double>(g[i]) * clip;
        st.m[i] = config_.beta1 * st.m[i] + (1.0 - config_.beta1) * gi;
        st.v[i] = config_.beta2 * st.v[i] + (1.0 - config_.beta2) * gi * gi;
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        double wi = static_cast<double>(w[i]) * decay;
        wi -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
        w[i] = static_cast<T>(wi);
      }
    }
    return norm;
  }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamWConfig config_;
  std::size_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace pcdiff
