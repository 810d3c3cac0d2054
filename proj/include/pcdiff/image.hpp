#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pcdiff/tensor.hpp"

namespace pcdiff {

/// H x W x C interleaved float image, nominal range [0, 1].
struct ImageF32 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> data;

  ImageF32() = default;
  ImageF32(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f)
      : height(h), width(w), channels(c), data(h * w * c, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c) noexcept { return data[(y * width + x) * channels + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const noexcept { return data[(y * width + x) * channels + c]; }

  bool same_shape(const ImageF32& o) const noexcept {
    return height == o.height && width == o.width && channels == o.channels;
  }
  std::string shape_string() const {
    return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
  }

  void clamp01() {
    for (auto& v : data) v = std::clamp(v, 0.0f, 1.0f);
  }

  friend bool operator==(const ImageF32&, const ImageF32&) = default;
};

inline void require_same_shape(const ImageF32& a, const ImageF32& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ConfigError(std::string(op) + ": image shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
}

/// Packs images into an NCHW tensor.
template <typename T = float>
Tensor<T> images_to_batch(std::span<const ImageF32> images) {
  if (images.empty()) throw ConfigError("images_to_batch: empty image list");
  const auto& first = images.front();
  Tensor<T> out({images.size(), first.channels, first.height, first.width});
  for (std::size_t n = 0; n < images.size(); ++n) {
    require_same_shape(first, images[n], "images_to_batch");
    for (std::size_t y = 0; y < first.height; ++y)
      for (std::size_t x = 0; x < first.width; ++x)
        for (std::size_t c = 0; c < first.channels; ++c) out.at(n, c, y, x) = static_cast<T>(images[n].at(y, x, c));
  }
  return out;
}

template <typename T>
std::vector<ImageF32> batch_to_images(const Tensor<T>& batch) {
  if (batch.rank() != 4) throw ConfigError("batch_to_images: expected NCHW, got " + shape_str(batch.shape()));
  std::vector<ImageF32> out;
  out.reserve(batch.dim(0));
  for (std::size_t n = 0; n < batch.dim(0); ++n) {
    ImageF32 img(batch.dim(2), batch.dim(3), batch.dim(1));
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x)
        for (std::size_t c = 0; c < img.channels; ++c) img.at(y, x, c) = static_cast<float>(batch.at(n, c, y, x));
    out.push_back(std::move(img));
  }
  return out;
}

/// Rec. 601 luma.
inline std::vector<double> luminance(const ImageF32& img) {
  std::vector<double> y(img.height * img.width);
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (img.channels >= 3) {
      y[i] = 0.299 * img.data[i * img.channels] + 0.587 * img.data[i * img.channels + 1] +
             0.114 * img.data[i * img.channels + 2];
    } else {
      y[i] = img.data[i * img.channels];
    }
  }
  return y;
}

inline double mean_value(const ImageF32& img) {
  double s = 0.0;
  for (float v : img.data) s += v;
  return img.data.empty() ? 0.0 : s / static_cast<double>(img.data.size());
}

}  // namespace pcdiff
