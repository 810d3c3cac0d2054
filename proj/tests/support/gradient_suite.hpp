#pragma once

// Randomised finite-difference checks for every differentiable op.

#include <functional>
#include <string>
#include <vector>

#include "pcdiff/features.hpp"
#include "pcdiff/gradcheck.hpp"
#include "pcdiff/layers.hpp"

namespace pcdiff::testing {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double min_abs = 0.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.storage()) {
    double x = rng.normal();
    if (min_abs > 0.0 && std::abs(x) < min_abs) x = x < 0 ? x - min_abs : x + min_abs;
    v = x;
  }
  return t;
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

/// Weighted sum with a fixed random tensor so every output element matters differently.
inline Var<double> project(const Var<double>& y, const Tensor<double>& weights) {
  return ops::sum(ops::mul(y, ops::constant(weights)));
}

struct GradCase {
  std::string op;
  std::string shape;
  GradCheckReport report;
};

using CaseBuilder = std::function<GradCase(Rng&)>;

inline GradCase run_case(const std::string& op, const std::string& shape,
                         const std::function<Var<double>(const std::vector<Var<double>>&)>& fn,
                         std::vector<NamedInput> inputs) {
  return {op, shape, grad_check(fn, inputs)};
}

inline std::vector<std::pair<std::string, CaseBuilder>> gradient_catalogue() {
  std::vector<std::pair<std::string, CaseBuilder>> c;

  auto elementwise2 = [](std::string name, auto op, bool reduces = false) {
    return std::pair<std::string, CaseBuilder>{name, [name, op, reduces](Rng& rng) {
      const Shape s{pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)};
      const auto w = random_tensor(reduces ? Shape{1} : s, rng);
      return run_case(name, shape_str(s), [=](const auto& v) { return project(op(v[0], v[1]), w); },
                      {{"a", random_tensor(s, rng)}, {"b", random_tensor(s, rng)}});
    }};
  };
  auto elementwise1 = [](std::string name, auto op, double min_abs = 0.0, bool reduces = false) {
    return std::pair<std::string, CaseBuilder>{name, [name, op, min_abs, reduces](Rng& rng) {
      const Shape s{pick(rng, 1, 3), pick(rng, 1, 5)};
      const auto w = random_tensor(reduces ? Shape{1} : s, rng);
      return run_case(name, shape_str(s), [=](const auto& v) { return project(op(v[0]), w); },
                      {{"x", random_tensor(s, rng, min_abs)}});
    }};
  };

  c.push_back(elementwise2("add", [](const auto& a, const auto& b) { return ops::add(a, b); }));
  c.push_back(elementwise2("sub", [](const auto& a, const auto& b) { return ops::sub(a, b); }));
  c.push_back(elementwise2("mul", [](const auto& a, const auto& b) { return ops::mul(a, b); }));
  c.push_back(elementwise2("mae", [](const auto& a, const auto& b) { return ops::mae(a, b); }, true));
  c.push_back(elementwise2("mse", [](const auto& a, const auto& b) { return ops::mse(a, b); }, true));
  c.push_back(elementwise1("scale", [](const auto& x) { return ops::scale(x, 1.7); }));
  c.push_back(elementwise1("add_scalar", [](const auto& x) { return ops::add_scalar(x, -0.3); }));
  c.push_back(elementwise1("abs", [](const auto& x) { return ops::abs(x); }, 0.05));
  c.push_back(elementwise1("square", [](const auto& x) { return ops::square(x); }));
  c.push_back(elementwise1("relu", [](const auto& x) { return ops::relu(x); }, 0.05));
  c.push_back(elementwise1("sigmoid", [](const auto& x) { return ops::sigmoid(x); }));
  c.push_back(elementwise1("silu", [](const auto& x) { return ops::silu(x); }));
  c.push_back(elementwise1("sum", [](const auto& x) { return ops::sum(x); }, 0.0, true));
  c.push_back(elementwise1("mean", [](const auto& x) { return ops::mean(x); }, 0.0, true));

  c.push_back({"reshape", [](Rng& rng) {
                 const std::size_t a = pick(rng, 1, 4), b = pick(rng, 1, 4);
                 const auto w = random_tensor({b, a}, rng);
                 return run_case("reshape", shape_str({a, b}),
                                 [=](const auto& v) { return project(ops::reshape(v[0], {b, a}), w); },
                                 {{"x", random_tensor({a, b}, rng)}});
               }});
  c.push_back({"narrow", [](Rng& rng) {
                 const std::size_t n = pick(rng, 3, 12), len = pick(rng, 1, n - 1), begin = rng.below(n - len + 1);
                 const auto w = random_tensor({len}, rng);
                 return run_case("narrow", shape_str({n}),
                                 [=](const auto& v) { return project(ops::narrow(v[0], begin, {len}), w); },
                                 {{"x", random_tensor({n}, rng)}});
               }});
  c.push_back({"linear", [](Rng& rng) {
                 const std::size_t n = pick(rng, 1, 3), in = pick(rng, 1, 5), out = pick(rng, 1, 4);
                 const auto w = random_tensor({n, out}, rng);
                 return run_case("linear", shape_str({n, in, out}),
                                 [=](const auto& v) { return project(ops::linear(v[0], v[1], v[2]), w); },
                                 {{"x", random_tensor({n, in}, rng)},
                                  {"weight", random_tensor({out, in}, rng)},
                                  {"bias", random_tensor({out}, rng)}});
               }});
  c.push_back({"conv2d", [](Rng& rng) {
                 const std::size_t n = pick(rng, 1, 2), cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
                 const std::size_t k = rng.bernoulli(0.5) ? 3 : 1, stride = pick(rng, 1, 2);
                 const std::size_t pad = k == 3 ? rng.below(2) : 0;
                 const std::size_t h = pick(rng, 3, 6), wd = pick(rng, 3, 6);
                 const std::size_t oh = ops::conv_out_size(h, k, stride, pad), ow = ops::conv_out_size(wd, k, stride, pad);
                 const auto w = random_tensor({n, cout, oh, ow}, rng);
                 return run_case("conv2d", shape_str({n, cin, h, wd, cout, k, stride, pad}),
                                 [=](const auto& v) { return project(ops::conv2d(v[0], v[1], v[2], stride, pad), w); },
                                 {{"input", random_tensor({n, cin, h, wd}, rng)},
                                  {"weight", random_tensor({cout, cin, k, k}, rng)},
                                  {"bias", random_tensor({cout}, rng)}});
               }});
  c.push_back({"depthwise_conv2d", [](Rng& rng) {
                 const std::size_t n = pick(rng, 1, 2), ch = pick(rng, 1, 3), h = pick(rng, 3, 5), wd = pick(rng, 3, 5);
                 const auto w = random_tensor({n, ch, h, wd}, rng);
                 return run_case("depthwise_conv2d", shape_str({n, ch, h, wd}),
                                 [=](const auto& v) { return project(ops::depthwise_conv2d(v[0], v[1], v[2], 1), w); },
                                 {{"input", random_tensor({n, ch, h, wd}, rng)},
                                  {"weight", random_tensor({ch, 3, 3}, rng)},
                                  {"bias", random_tensor({ch}, rng)}});
               }});
  c.push_back({"upsample_nearest2x", [](Rng& rng) {
                 const std::size_t n = pick(rng, 1, 2), ch = pick(rng, 1, 3), h = pick(rng, 1, 4), wd = pick(rng, 1, 4);
                 const auto w = random_tensor({n, ch, 2 * h, 2 * wd}, rng);
                 return run_case("upsample_nearest2x", shape_str({n, ch, h, wd}),
                                 [=](const auto& v) { return project(ops::upsample_nearest2x(v[0]), w); },
                                 {{"input", random_tensor({n, ch, h, wd}, rng)}});
               }});
  c.push_back({"fuser", [](Rng& rng) {
                 const std::size_t ch = pick(rng, 1, 3), h = pick(rng, 3, 5), wd = pick(rng, 3, 5);
                 ParameterSet<double> params;
                 Rng init(rng.next_u64());
                 auto fuser = Fuser<double>::create(params, "fuser", ch, init, false);
                 const auto key = generate_key(rng.next_u64());
                 const auto w = random_tensor({1, ch, h, wd}, rng);
                 std::vector<NamedInput> inputs{{"features", random_tensor({1, ch, h, wd}, rng)}};
                 for (const auto& p : params.items()) inputs.push_back({p.name, p.var.value()});
                 return run_case("fuser", shape_str({1, ch, h, wd}),
                                 [=](const auto& v) {
                                   Fuser<double> f = fuser;
                                   f.embed.weight = v[1];
                                   f.embed.bias = v[2];
                                   f.gen_hidden.weight = v[3];
                                   f.gen_hidden.bias = v[4];
                                   f.gen_out.weight = v[5];
                                   f.gen_out.bias = v[6];
                                   return project(f(v[0], key), w);
                                 },
                                 inputs);
               }});
  c.push_back({"mid_block", [](Rng& rng) {
                 const std::size_t ch = pick(rng, 1, 3), h = pick(rng, 2, 4), wd = pick(rng, 2, 4);
                 ParameterSet<double> params;
                 Rng init(rng.next_u64());
                 auto block = MidBlock<double>::create(params, "mid", ch, init, false);
                 const auto w = random_tensor({1, ch, h, wd}, rng);
                 std::vector<NamedInput> inputs{{"features", random_tensor({1, ch, h, wd}, rng)}};
                 for (const auto& p : params.items()) inputs.push_back({p.name, p.var.value()});
                 return run_case("mid_block", shape_str({1, ch, h, wd}),
                                 [=](const auto& v) {
                                   MidBlock<double> b = block;
                                   b.conv1.weight = v[1];
                                   b.conv1.bias = v[2];
                                   b.conv2.weight = v[3];
                                   b.conv2.bias = v[4];
                                   return project(b(v[0]), w);
                                 },
                                 inputs);
               }});
  c.push_back({"perceptual_distance", [](Rng& rng) {
                 const std::size_t h = pick(rng, 4, 6), wd = pick(rng, 4, 6);
                 auto net = std::make_shared<RandomFeatureNet<double>>(rng.next_u64());
                 auto a = random_tensor({1, 3, h, wd}, rng), b = random_tensor({1, 3, h, wd}, rng);
                 return run_case("perceptual_distance", shape_str({1, 3, h, wd}),
                                 [net](const auto& v) { return perceptual_distance(*net, v[0], v[1]); },
                                 {{"a", a}, {"b", b}});
               }});
  return c;
}

}  // namespace pcdiff::testing
