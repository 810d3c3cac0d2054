#pragma once

#include <cmath>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pcdiff/features.hpp"
#include "pcdiff/image.hpp"

namespace pcdiff {

inline constexpr double kPsnrCapDb = 99.0;

/// Fixed-point text for reports; locale-independent so outputs are byte-stable.
inline std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

/// PSNR over the [0, 1] range, capped at 99 dB.
inline double psnr(const ImageF32& a, const ImageF32& b) {
  require_same_shape(a, b, "psnr");
  double sq = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    sq += d * d;
  }
  const double mse = sq / static_cast<double>(a.data.size());
  if (mse == 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

inline std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> w(size * size);
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) {
      const double di = i - c, dj = j - c;
      w[i * size + j] = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
      total += w[i * size + j];
    }
  for (auto& v : w) v /= total;
  return w;
}

/// Mean SSIM of the luma planes over all fully-contained Gaussian windows.
inline double ssim(const ImageF32& a, const ImageF32& b, const SsimParams& p = {}) {
  require_same_shape(a, b, "ssim");
  if (a.height < p.window || a.width < p.window) {
    throw ConfigError("ssim: image " + a.shape_string() + " smaller than the " + std::to_string(p.window) +
                      "x" + std::to_string(p.window) + " window");
  }
  const auto ya = luminance(a), yb = luminance(b);
  const auto w = gaussian_window(p.window, p.sigma);
  const double c1 = (p.k1) * (p.k1), c2 = (p.k2) * (p.k2);
  const std::size_t oh = a.height - p.window + 1, ow = a.width - p.window + 1;
  double total = 0.0;
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t i = 0; i < p.window; ++i)
        for (std::size_t j = 0; j < p.window; ++j) {
          const double wt = w[i * p.window + j];
          const double va = ya[(y + i) * a.width + x + j], vb = yb[(y + i) * a.width + x + j];
          ma += wt * va;
          mb += wt * vb;
          saa += wt * va * va;
          sbb += wt * vb * vb;
          sab += wt * va * vb;
        }
      const double var_a = saa - ma * ma, var_b = sbb - mb * mb, cov = sab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
  return total / static_cast<double>(oh * ow);
}

namespace detail {

struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

inline Gaussian fit_gaussian(const std::vector<std::vector<double>>& rows, double loading) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(rows.front().size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  Gaussian g;
  g.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - g.mean.transpose();
  g.cov = n > 1 ? Eigen::MatrixXd((centered.transpose() * centered) / static_cast<double>(n - 1))
                : Eigen::MatrixXd::Zero(d, d);
  g.cov.diagonal().array() += loading;
  return g;
}

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// Frechet distance between Gaussian fits of two row sets.
inline double frechet_distance(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
                               double loading = 1e-6) {
  if (a.empty() || b.empty()) throw ConfigError("feature_distance: both sets must be non-empty");
  const auto ga = detail::fit_gaussian(a, loading);
  const auto gb = detail::fit_gaussian(b, loading);
  const Eigen::MatrixXd sa = detail::psd_sqrt(ga.cov);
  const Eigen::MatrixXd inner = sa * gb.cov * sa;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()));
  const double tr_cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (ga.mean - gb.mean).squaredNorm() + ga.cov.trace() + gb.cov.trace() - 2.0 * tr_cross;
  return std::max(0.0, d);
}

/// FD-proxy: Frechet distance over fixed random-feature embeddings.
inline double feature_distance(std::span<const ImageF32> a, std::span<const ImageF32> b,
                               std::uint64_t seed = kFeatureSetSeed) {
  if (a.empty() || b.empty()) throw ConfigError("feature_distance: both sets must be non-empty");
  const RandomFeatureNet<double> net(seed);
  return frechet_distance(net.embed(a), net.embed(b));
}

inline double bit_accuracy(const std::vector<bool>& expected, const std::vector<bool>& actual) {
  if (expected.size() != actual.size()) {
    throw ConfigError("bit_accuracy: length mismatch " + std::to_string(expected.size()) + " vs " +
                      std::to_string(actual.size()));
  }
  if (expected.empty()) throw ConfigError("bit_accuracy: empty bit vectors");
  std::size_t same = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) same += expected[i] == actual[i];
  return static_cast<double>(same) / static_cast<double>(expected.size());
}

/// One evaluated condition. Every metric compares `subject` against `baseline`.
struct MetricsReport {
  std::string condition;
  std::string subject;
  std::string baseline = "reference_decode";
  double psnr = 0.0;
  double ssim = 0.0;
  double feature_distance = 0.0;
  std::size_t samples = 0;
};

/// Mean PSNR/SSIM over aligned pairs plus FD-proxy between the two sets.
inline MetricsReport evaluate_images(const std::string& condition, std::span<const ImageF32> outputs,
                                     std::span<const ImageF32> references) {
  if (outputs.size() != references.size() || outputs.empty()) {
    throw ConfigError("evaluate_images: need equally sized non-empty sets, got " + std::to_string(outputs.size()) +
                      " and " + std::to_string(references.size()));
  }
  MetricsReport r;
  r.condition = condition;
  r.subject = condition;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    r.psnr += psnr(outputs[i], references[i]);
    r.ssim += ssim(outputs[i], references[i]);
  }
  r.psnr /= static_cast<double>(outputs.size());
  r.ssim /= static_cast<double>(outputs.size());
  r.feature_distance = feature_distance(outputs, references);
  r.samples = outputs.size();
  return r;
}

}  // namespace pcdiff
