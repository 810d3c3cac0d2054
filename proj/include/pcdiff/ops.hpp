#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pcdiff/autograd.hpp"

namespace pcdiff::ops {

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
Node<T>* parent(Node<T>& out, std::size_t i) {
  Node<T>* p = out.parents[i].get();
  return p->requires_grad ? p : nullptr;
}

template <typename T, typename F>
Var<T> unary(const Var<T>& a, F forward, std::function<T(T x, T y)> derivative) {
  Tensor<T> out(a.shape());
  const auto& x = a.value();
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = forward(x[i]);
  return Var<T>::make(std::move(out), {a}, [derivative](Node<T>& o) {
    Node<T>* p = parent(o, 0);
    if (!p) return;
    auto& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += o.grad[i] * derivative(p->value[i], o.value[i]);
  });
}

}  // namespace detail

template <typename T>
Var<T> constant(Tensor<T> t) {
  return Var<T>(std::move(t), false);
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& o) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (Node<T>* p = detail::parent(o, k)) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += o.grad[i];
      }
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& o) {
    if (Node<T>* p = detail::parent(o, 0)) {
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += o.grad[i];
    }
    if (Node<T>* p = detail::parent(o, 1)) {
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= o.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& o) {
    Node<T>* pa = detail::parent(o, 0);
    Node<T>* pb = detail::parent(o, 1);
    const auto& av = o.parents[0]->value;
    const auto& bv = o.parents[1]->value;
    if (pa) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += o.grad[i] * bv[i];
    }
    if (pb) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += o.grad[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return detail::unary<T>(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return detail::unary<T>(a, [s](T x) { return x + s; }, [](T, T) { return T{1}; });
}

/// Subgradient 0 at the kink.
template <typename T>
Var<T> abs(const Var<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T{0} ? T{1} : (x < T{0} ? T{-1} : T{0}); });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  return detail::unary<T>(a, [](T x) { return x * x; }, [](T x, T) { return T{2} * x; });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return x > T{0} ? x : T{0}; }, [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return T{1} / (T{1} + std::exp(-x)); }, [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Var<T> silu(const Var<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return x / (T{1} + std::exp(-x)); },
      [](T x, T) {
        const T s = T{1} / (T{1} + std::exp(-x));
        return s * (T{1} + x * (T{1} - s));
      });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T total{0};
  for (T v : a.value().data()) total += v;
  return Var<T>::make(Tensor<T>::scalar(total), {a}, [](Node<T>& o) {
    if (Node<T>* p = detail::parent(o, 0)) {
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += o.grad[0];
    }
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T{1} / static_cast<T>(a.numel()));
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  return Var<T>::make(a.value().reshaped(std::move(shape)), {a}, [](Node<T>& o) {
    if (Node<T>* p = detail::parent(o, 0)) {
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += o.grad[i];
    }
  });
}

/// Contiguous slice [begin, begin + numel(shape)) of the flattened input.
template <typename T>
Var<T> narrow(const Var<T>& a, std::size_t begin, Shape shape) {
  const std::size_t count = shape_numel(shape);
  if (begin + count > a.numel()) {
    throw ConfigError("narrow: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                      ") exceeds " + std::to_string(a.numel()) + " elements");
  }
  std::vector<T> data(a.value().ptr() + begin, a.value().ptr() + begin + count);
  return Var<T>::make(Tensor<T>(std::move(shape), std::move(data)), {a}, [begin](Node<T>& o) {
    if (Node<T>* p = detail::parent(o, 0)) {
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < o.grad.numel(); ++i) g[begin + i] += o.grad[i];
    }
  });
}

template <typename T>
Var<T> mae(const Var<T>& a, const Var<T>& b) {
  return mean(abs(sub(a, b)));
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  return mean(square(sub(a, b)));
}

/// y = x W^T + b for x [N, in], W [out, in], b [out] (b may be undefined).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1]) {
    throw ConfigError("linear: input " + shape_str(xs) + " incompatible with weight " + shape_str(ws));
  }
  if (bias.defined() && bias.shape() != Shape{ws[0]}) {
    throw ConfigError("linear: bias " + shape_str(bias.shape()) + " expected [" + std::to_string(ws[0]) + "]");
  }
  const auto n = static_cast<Eigen::Index>(xs[0]);
  const auto in = static_cast<Eigen::Index>(xs[1]);
  const auto outf = static_cast<Eigen::Index>(ws[0]);
  Tensor<T> out({xs[0], ws[0]});
  detail::MatrixMap<T> y(out.ptr(), n, outf);
  y.noalias() = detail::ConstMatrixMap<T>(x.value().ptr(), n, in) *
                detail::ConstMatrixMap<T>(weight.value().ptr(), outf, in).transpose();
  if (bias.defined()) {
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index c = 0; c < outf; ++c) y(r, c) += bias.value()[static_cast<std::size_t>(c)];
  }
  std::vector<Var<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Var<T>::make(std::move(out), std::move(inputs), [n, in, outf](Node<T>& o) {
    detail::ConstMatrixMap<T> gy(o.grad.ptr(), n, outf);
    const auto& xv = o.parents[0]->value;
    const auto& wv = o.parents[1]->value;
    if (Node<T>* p = detail::parent(o, 0)) {
      detail::MatrixMap<T>(p->ensure_grad().ptr(), n, in).noalias() +=
          gy * detail::ConstMatrixMap<T>(wv.ptr(), outf, in);
    }
    if (Node<T>* p = detail::parent(o, 1)) {
      detail::MatrixMap<T>(p->ensure_grad().ptr(), outf, in).noalias() +=
          gy.transpose() * detail::ConstMatrixMap<T>(xv.ptr(), n, in);
    }
    if (o.parents.size() > 2) {
      if (Node<T>* p = detail::parent(o, 2)) {
        auto& g = p->ensure_grad();
        for (Eigen::Index r = 0; r < n; ++r)
          for (Eigen::Index c = 0; c < outf; ++c) g[static_cast<std::size_t>(c)] += gy(r, c);
      }
    }
  });
}

struct ConvGeometry {
  std::size_t batch, in_channels, height, width;
  std::size_t out_channels, kernel_h, kernel_w;
  std::size_t stride, padding;
  std::size_t out_h, out_w;

  std::size_t patch() const { return in_channels * kernel_h * kernel_w; }
  std::size_t positions() const { return out_h * out_w; }
};

inline std::size_t conv_out_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

namespace detail {

// cols is [patch, batch * positions]; column n * P + p holds sample n's patch at p.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t total = g.batch * g.positions();
  for (std::size_t c = 0; c < g.in_channels; ++c)
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki)
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        T* row = cols + ((c * g.kernel_h + ki) * g.kernel_w + kj) * total;
        for (std::size_t n = 0; n < g.batch; ++n) {
          const T* plane = x + (n * g.in_channels + c) * g.height * g.width;
          T* dst = row + n * g.positions();
          for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) - static_cast<std::ptrdiff_t>(g.padding);
            for (std::size_t ow = 0; ow < g.out_w; ++ow) {
              const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) - static_cast<std::ptrdiff_t>(g.padding);
              const bool inside = ih >= 0 && iw >= 0 && ih < static_cast<std::ptrdiff_t>(g.height) &&
                                  iw < static_cast<std::ptrdiff_t>(g.width);
              dst[oh * g.out_w + ow] = inside ? plane[ih * static_cast<std::ptrdiff_t>(g.width) + iw] : T{0};
            }
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* dx) {
  const std::size_t total = g.batch * g.positions();
  for (std::size_t c = 0; c < g.in_channels; ++c)
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki)
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const T* row = cols + ((c * g.kernel_h + ki) * g.kernel_w + kj) * total;
        for (std::size_t n = 0; n < g.batch; ++n) {
          T* plane = dx + (n * g.in_channels + c) * g.height * g.width;
          const T* src = row + n * g.positions();
          for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) - static_cast<std::ptrdiff_t>(g.padding);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) continue;
            for (std::size_t ow = 0; ow < g.out_w; ++ow) {
              const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) - static_cast<std::ptrdiff_t>(g.padding);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.width)) continue;
              plane[ih * static_cast<std::ptrdiff_t>(g.width) + iw] += src[oh * g.out_w + ow];
            }
          }
        }
      }
}

}  // namespace detail

/// 2-D cross-correlation. input NCHW, weight OIHW, bias [O] or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, std::size_t stride,
              std::size_t padding) {
  const auto& is = input.shape();
  const auto& ws = weight.shape();
  if (is.size() != 4 || ws.size() != 4) {
    throw ConfigError("conv2d: expected NCHW input and OIHW weight, got " + shape_str(is) + " and " + shape_str(ws));
  }
  if (is[1] != ws[1]) {
    throw ConfigError("conv2d: input has " + std::to_string(is[1]) + " channels but weight expects " +
                      std::to_string(ws[1]) + " (input " + shape_str(is) + ", weight " + shape_str(ws) + ")");
  }
  if (stride == 0) throw ConfigError("conv2d: stride must be >= 1");
  if (is[2] + 2 * padding < ws[2] || is[3] + 2 * padding < ws[3]) {
    throw ConfigError("conv2d: kernel " + shape_str(ws) + " larger than padded input " + shape_str(is));
  }
  if (bias.defined() && bias.shape() != Shape{ws[0]}) {
    throw ConfigError("conv2d: bias " + shape_str(bias.shape()) + " expected [" + std::to_string(ws[0]) + "]");
  }

  ConvGeometry g{is[0], is[1], is[2], is[3], ws[0], ws[2], ws[3], stride, padding, 0, 0};
  g.out_h = conv_out_size(g.height, g.kernel_h, stride, padding);
  g.out_w = conv_out_size(g.width, g.kernel_w, stride, padding);

  const auto K = static_cast<Eigen::Index>(g.patch());
  const auto NP = static_cast<Eigen::Index>(g.batch * g.positions());
  const auto O = static_cast<Eigen::Index>(g.out_channels);

  auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(K * NP));
  detail::im2col(input.value().ptr(), g, cols->data());

  detail::RowMatrix<T> tmp(O, NP);
  tmp.noalias() = detail::ConstMatrixMap<T>(weight.value().ptr(), O, K) *
                  detail::ConstMatrixMap<T>(cols->data(), K, NP);

  Tensor<T> out({g.batch, g.out_channels, g.out_h, g.out_w});
  const std::size_t P = g.positions();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      const T b = bias.defined() ? bias.value()[o] : T{0};
      T* dst = out.ptr() + (n * g.out_channels + o) * P;
      const T* src = tmp.data() + o * static_cast<std::size_t>(NP) + n * P;
      for (std::size_t p = 0; p < P; ++p) dst[p] = src[p] + b;
    }

  std::vector<Var<T>> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Var<T>::make(std::move(out), std::move(inputs), [g, cols, K, NP, O](Node<T>& o) {
    const std::size_t P = g.positions();
    detail::RowMatrix<T> gy(O, NP);
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t c = 0; c < g.out_channels; ++c) {
        const T* src = o.grad.ptr() + (n * g.out_channels + c) * P;
        T* dst = gy.data() + c * static_cast<std::size_t>(NP) + n * P;
        std::copy(src, src + P, dst);
      }
    if (Node<T>* p = detail::parent(o, 1)) {
      detail::MatrixMap<T>(p->ensure_grad().ptr(), O, K).noalias() +=
          gy * detail::ConstMatrixMap<T>(cols->data(), K, NP).transpose();
    }
    if (o.parents.size() > 2) {
      if (Node<T>* p = detail::parent(o, 2)) {
        auto& gb = p->ensure_grad();
        for (Eigen::Index c = 0; c < O; ++c) gb[static_cast<std::size_t>(c)] += gy.row(c).sum();
      }
    }
    if (Node<T>* p = detail::parent(o, 0)) {
      const auto& wv = o.parents[1]->value;
      detail::RowMatrix<T> gcols(K, NP);
      gcols.noalias() = detail::ConstMatrixMap<T>(wv.ptr(), O, K).transpose() * gy;
      detail::col2im(gcols.data(), g, p->ensure_grad().ptr());
    }
  });
}

/// Per-channel (depthwise) convolution, stride 1. weight [C, kh, kw], bias [C].
template <typename T>
Var<T> depthwise_conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, std::size_t padding) {
  const auto& is = input.shape();
  const auto& ws = weight.shape();
  if (is.size() != 4 || ws.size() != 3 || ws[0] != is[1]) {
    throw ConfigError("depthwise_conv2d: input " + shape_str(is) + " incompatible with weight " + shape_str(ws));
  }
  if (bias.shape() != Shape{is[1]}) {
    throw ConfigError("depthwise_conv2d: bias " + shape_str(bias.shape()) + " expected [" + std::to_string(is[1]) + "]");
  }
  const std::size_t N = is[0], C = is[1], H = is[2], W = is[3], kh = ws[1], kw = ws[2];
  if (H + 2 * padding < kh || W + 2 * padding < kw) {
    throw ConfigError("depthwise_conv2d: kernel " + shape_str(ws) + " larger than padded input " + shape_str(is));
  }
  const std::size_t Ho = conv_out_size(H, kh, 1, padding), Wo = conv_out_size(W, kw, 1, padding);
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  const auto& x = input.value();
  const auto& w = weight.value();
  Tensor<T> out({N, C, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t oh = 0; oh < Ho; ++oh)
        for (std::size_t ow = 0; ow < Wo; ++ow) {
          T acc = bias.value()[c];
          for (std::size_t i = 0; i < kh; ++i) {
            const auto ih = static_cast<std::ptrdiff_t>(oh + i) - pad;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t j = 0; j < kw; ++j) {
              const auto iw = static_cast<std::ptrdiff_t>(ow + j) - pad;
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
              acc += w[(c * kh + i) * kw + j] * x.at(n, c, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw));
            }
          }
          out.at(n, c, oh, ow) = acc;
        }
  return Var<T>::make(std::move(out), {input, weight, bias}, [=](Node<T>& o) {
    Node<T>* px = detail::parent(o, 0);
    Node<T>* pw = detail::parent(o, 1);
    Node<T>* pb = detail::parent(o, 2);
    const auto& xv = o.parents[0]->value;
    const auto& wv = o.parents[1]->value;
    Tensor<T>* gx = px ? &px->ensure_grad() : nullptr;
    Tensor<T>* gw = pw ? &pw->ensure_grad() : nullptr;
    Tensor<T>* gb = pb ? &pb->ensure_grad() : nullptr;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t oh = 0; oh < Ho; ++oh)
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            const T go = o.grad.at(n, c, oh, ow);
            if (gb) (*gb)[c] += go;
            for (std::size_t i = 0; i < kh; ++i) {
              const auto ih = static_cast<std::ptrdiff_t>(oh + i) - pad;
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t j = 0; j < kw; ++j) {
                const auto iw = static_cast<std::ptrdiff_t>(ow + j) - pad;
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                const auto uh = static_cast<std::size_t>(ih), uw = static_cast<std::size_t>(iw);
                if (gw) (*gw)[(c * kh + i) * kw + j] += go * xv.at(n, c, uh, uw);
                if (gx) gx->at(n, c, uh, uw) += go * wv[(c * kh + i) * kw + j];
              }
            }
          }
  });
}

/// Nearest-neighbour x2 upsampling of an NCHW tensor.
template <typename T>
Var<T> upsample_nearest2x(const Var<T>& input) {
  const auto& s = input.shape();
  if (s.size() != 4) throw ConfigError("upsample_nearest2x: expected NCHW, got " + shape_str(s));
  const std::size_t N = s[0], C = s[1], H = s[2], W = s[3];
  Tensor<T> out({N, C, 2 * H, 2 * W});
  const auto& x = input.value();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t h = 0; h < 2 * H; ++h)
        for (std::size_t w = 0; w < 2 * W; ++w) out.at(n, c, h, w) = x.at(n, c, h / 2, w / 2);
  return Var<T>::make(std::move(out), {input}, [N, C, H, W](Node<T>& o) {
    Node<T>* p = detail::parent(o, 0);
    if (!p) return;
    auto& g = p->ensure_grad();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t h = 0; h < 2 * H; ++h)
          for (std::size_t w = 0; w < 2 * W; ++w) g.at(n, c, h / 2, w / 2) += o.grad.at(n, c, h, w);
  });
}

}  // namespace pcdiff::ops
