#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pcdiff/autograd.hpp"

namespace pcdiff {

struct NamedInput {
  std::string name;
  Tensor<double> value;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_input;
  std::size_t worst_index = 0;
};

/// Compares reverse-mode gradients of a scalar function against fourth-order
/// central finite differences. Relative error is |a - n| / max(|a|, |n|, floor),
/// the floor keeping near-zero entries from dominating.
inline GradCheckReport grad_check(const std::function<Var<double>(const std::vector<Var<double>>&)>& fn,
                                  const std::vector<NamedInput>& inputs, double epsilon = 1e-4,
                                  double floor = 1e-4) {
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const auto& in : inputs) vars.emplace_back(in.value, true);
  Var<double> out = fn(vars);
  if (out.numel() != 1) throw ConfigError("grad_check: function must return a scalar");
  backward(out);

  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<double> analytic = vars[k].has_grad() ? vars[k].grad() : Tensor<double>(inputs[k].value.shape());
    for (std::size_t i = 0; i < analytic.numel(); ++i) {
      if (!std::isfinite(analytic[i])) {
        throw NumericError("grad_check: non-finite gradient for '" + inputs[k].name + "' at index " +
                           std::to_string(i));
      }
    }
    for (std::size_t i = 0; i < analytic.numel(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Var<double>> probe;
        probe.reserve(inputs.size());
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          Tensor<double> t = inputs[j].value;
          if (j == k) t[i] += delta;
          probe.emplace_back(std::move(t), false);
        }
        NoGradGuard guard;
        return fn(probe).value()[0];
      };
      const double numeric =
          (8.0 * (eval(epsilon) - eval(-epsilon)) - (eval(2.0 * epsilon) - eval(-2.0 * epsilon))) / (12.0 * epsilon);
      if (!std::isfinite(numeric)) {
        throw NumericError("grad_check: non-finite finite difference for '" + inputs[k].name + "' at index " +
                           std::to_string(i));
      }
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      if (rel > report.max_rel_error || report.worst_input.empty()) {
        report.max_rel_error = rel;
        report.worst_input = inputs[k].name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace pcdiff
