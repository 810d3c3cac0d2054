#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "pcdiff/attacks.hpp"
#include "pcdiff/synth_data.hpp"
#include "pcdiff/training.hpp"

using namespace pcdiff;

namespace {

ImageF32 sample_image(std::uint64_t seed) {
  DatasetSpec spec;
  spec.count = 1;
  spec.seed = seed;
  return generate_dataset(spec).front();
}

ImageF32 constant_image(float v, std::size_t h = 32, std::size_t w = 32) {
  ImageF32 img(h, w, 3);
  std::fill(img.data.begin(), img.data.end(), v);
  return img;
}

// Direct evaluation of the orthonormal 2-D DCT-II sum.
double dct_oracle(const Block8& x, std::size_t u, std::size_t v) {
  const double cu = u == 0 ? std::sqrt(0.125) : 0.5, cv = v == 0 ? std::sqrt(0.125) : 0.5;
  double s = 0.0;
  for (std::size_t m = 0; m < 8; ++m)
    for (std::size_t n = 0; n < 8; ++n)
      s += x[m * 8 + n] * std::cos(std::numbers::pi * (2 * m + 1) * u / 16.0) *
           std::cos(std::numbers::pi * (2 * n + 1) * v / 16.0);
  return cu * cv * s;
}

const ReferenceAutoencoder<float>& reference() {
  static const ReferenceAutoencoder<float> ref = [] {
    DatasetSpec spec;
    spec.count = 16;
    TrainHParams hp;
    hp.learning_rate = 1e-3;
    hp.steps = 10;
    hp.batch_size = 4;
    auto r = train_reference<float>(split(generate_dataset(spec), 0.75, 1), hp).model;
    r.freeze();
    return r;
  }();
  return ref;
}

Tensor<float> latents(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return gaussian_latents<float>(n, rng);
}

}  // namespace

TEST(AttackSpec, StandardSuiteParameters) {
  const auto suite = standard_suite();
  ASSERT_EQ(suite.size(), 9u);
  const std::vector<std::pair<std::string, double>> expected{
      {"jpeg", 75}, {"crop", 0.5}, {"drop", 0.3}, {"gblur", 2}, {"mfilter", 5},
      {"gnoise", 0.1}, {"spnoise", 0.1}, {"resize", 0.5}, {"bright", 2}};
  for (std::size_t i = 0; i < suite.size(); ++i) {
    EXPECT_EQ(suite[i].label(), expected[i].first);
    EXPECT_EQ(suite[i].param, expected[i].second);
    EXPECT_EQ(parse_attack_kind(expected[i].first), suite[i].kind);
  }
  EXPECT_THROW(parse_attack_kind("sharpen"), ConfigError);
}

TEST(AttackSpec, OutOfRangeParametersAreConfigErrors) {
  const auto img = sample_image(1);
  const std::vector<AttackSpec> bad{{AttackKind::crop, 0.0},          {AttackKind::crop, 1.5},
                                    {AttackKind::jpeg_proxy, 0},      {AttackKind::jpeg_proxy, 75.5},
                                    {AttackKind::median_filter, 4},   {AttackKind::gaussian_blur, -1},
                                    {AttackKind::gaussian_noise, -0.1}, {AttackKind::salt_pepper, 1.1},
                                    {AttackKind::resize, 0.0},        {AttackKind::brightness, 0.0},
                                    {AttackKind::drop, 1.0}};
  for (const auto& spec : bad) EXPECT_THROW(apply_attack(img, spec), ConfigError) << spec.label() << " " << spec.param;
}

TEST(ApplyAttack, IdentityParametersAreExactNoOps) {
  const auto img = sample_image(2);
  const std::vector<AttackSpec> identity{{AttackKind::brightness, 1.0}, {AttackKind::resize, 1.0},
                                         {AttackKind::crop, 1.0},       {AttackKind::drop, 0.0},
                                         {AttackKind::median_filter, 1}, {AttackKind::gaussian_noise, 0.0},
                                         {AttackKind::salt_pepper, 0.0}};
  for (const auto& spec : identity) EXPECT_EQ(apply_attack(img, spec).data, img.data) << spec.label();
}

TEST(ApplyAttack, OutputsKeepCanvasAndRange) {
  const auto img = sample_image(3);
  for (const auto& spec : standard_suite(4)) {
    const auto out = apply_attack(img, spec);
    EXPECT_EQ(out.height, img.height);
    EXPECT_EQ(out.width, img.width);
    for (float v : out.data) {
      ASSERT_GE(v, 0.0f) << spec.label();
      ASSERT_LE(v, 1.0f) << spec.label();
    }
  }
}

TEST(ApplyAttack, DeterministicGivenSeed) {
  const auto img = sample_image(4);
  for (const auto& spec : standard_suite(9)) EXPECT_EQ(apply_attack(img, spec).data, apply_attack(img, spec).data);
  const auto a = apply_attack(img, AttackSpec{AttackKind::gaussian_noise, 0.1, 1});
  const auto b = apply_attack(img, AttackSpec{AttackKind::gaussian_noise, 0.1, 2});
  EXPECT_NE(a.data, b.data);
}

TEST(ApplyAttack, GaussianNoiseStatistics) {
  const auto img = constant_image(0.5f, 64, 64);
  const auto out = apply_attack(img, AttackSpec{AttackKind::gaussian_noise, 0.1, 3});
  double sum = 0, sq = 0;
  for (float v : out.data) {
    sum += v - 0.5;
    sq += (v - 0.5) * (v - 0.5);
  }
  const double n = static_cast<double>(out.data.size());
  const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
  EXPECT_NEAR(sd, 0.1, 0.01);
}

TEST(ApplyAttack, CropKeepsAWindowOfTheRequestedArea) {
  const auto img = constant_image(0.7f);
  const auto out = apply_attack(img, AttackSpec{AttackKind::crop, 0.5, 2});
  std::size_t kept = 0;
  for (std::size_t p = 0; p < 32 * 32; ++p) kept += out.data[p * 3] != 0.0f;
  EXPECT_EQ(kept, 23u * 23u);  // side round(sqrt(0.5) * 32) = 23
}

TEST(ApplyAttack, DropZeroesTheRequestedArea) {
  const auto img = constant_image(0.7f);
  const auto out = apply_attack(img, AttackSpec{AttackKind::drop, 0.3, 2});
  std::size_t dropped = 0;
  for (std::size_t p = 0; p < 32 * 32; ++p) dropped += out.data[p * 3] == 0.0f;
  EXPECT_EQ(dropped, 18u * 18u);  // side round(sqrt(0.3) * 32) = 18
}

TEST(ApplyAttack, BrightnessScalesAndClips) {
  const auto img = constant_image(0.3f);
  const auto out = apply_attack(img, AttackSpec{AttackKind::brightness, 2.0});
  EXPECT_FLOAT_EQ(out.data[0], 0.6f);
  EXPECT_EQ(apply_attack(constant_image(0.8f), AttackSpec{AttackKind::brightness, 2.0}).data[0], 1.0f);
}

TEST(ApplyAttack, SaltPepperRateMatches) {
  const auto img = constant_image(0.5f, 64, 64);
  const auto out = apply_attack(img, AttackSpec{AttackKind::salt_pepper, 0.1, 5});
  std::size_t hit = 0;
  for (std::size_t p = 0; p < 64 * 64; ++p) hit += out.data[p * 3] != 0.5f;
  EXPECT_NEAR(static_cast<double>(hit) / (64 * 64), 0.1, 0.02);
}

TEST(Filters, BlurAndMedianPreserveConstants) {
  const auto img = constant_image(0.25f);
  for (float v : gaussian_blur(img, 2.0).data) EXPECT_NEAR(v, 0.25f, 1e-6);
  EXPECT_EQ(median_filter(img, 5).data, img.data);
}

TEST(Filters, MedianRemovesAnImpulse) {
  auto img = constant_image(0.25f);
  img.at(10, 10, 1) = 1.0f;
  EXPECT_EQ(median_filter(img, 3).at(10, 10, 1), 0.25f);
}

TEST(Filters, BilinearDownscaleByTwoAveragesBlocks) {
  ImageF32 img(4, 4, 1);
  for (std::size_t i = 0; i < 16; ++i) img.data[i] = static_cast<float>(i);
  const auto small = resize_bilinear(img, 2, 2);
  EXPECT_FLOAT_EQ(small.at(0, 0, 0), (0 + 1 + 4 + 5) / 4.0f);
  EXPECT_FLOAT_EQ(small.at(1, 1, 0), (10 + 11 + 14 + 15) / 4.0f);
}

TEST(JpegProxy, DctMatchesDirectSum) {
  Rng rng(1);
  Block8 x{};
  for (auto& v : x) v = rng.uniform(-128, 127);
  const auto X = dct8x8(x);
  for (std::size_t u = 0; u < 8; ++u)
    for (std::size_t v = 0; v < 8; ++v) EXPECT_NEAR(X[u * 8 + v], dct_oracle(x, u, v), 1e-9);
}

TEST(JpegProxy, DctRoundTripIsIdentity) {
  Rng rng(2);
  Block8 x{};
  for (auto& v : x) v = rng.uniform(-128, 127);
  const auto back = idct8x8(dct8x8(x));
  for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(back[i], x[i], 1e-4);
}

TEST(JpegProxy, QuantTableScaling) {
  EXPECT_EQ(jpeg_quant_table(50), kJpegLuminance);
  for (int q : jpeg_quant_table(100)) EXPECT_EQ(q, 1);
  EXPECT_EQ(jpeg_quant_table(75)[0], 8);   // (16 * 50 + 50) / 100
  EXPECT_EQ(jpeg_quant_table(10)[0], 80);  // (16 * 500 + 50) / 100
  EXPECT_THROW(jpeg_quant_table(0), ConfigError);
}

TEST(JpegProxy, QualityOrdering) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto img = sample_image(10 + s);
    EXPECT_GE(psnr(img, jpeg_proxy(img, 100)), 45.0);
    EXPECT_LT(psnr(img, jpeg_proxy(img, 10)), psnr(img, jpeg_proxy(img, 75)));
  }
}

TEST(Restoration, NearNoOpOnCleanImages) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto img = sample_image(20 + s);
    const auto out = restoration_attack(img);
    EXPECT_GE(psnr(img, out), 30.0) << "seed " << s;
    EXPECT_EQ(restoration_attack(img).data, out.data);
  }
}

TEST(StructuralAttacks, UntrainedModelMatchesReferenceWithoutFusers) {
  const auto model = PCDiffModel<float>::build(reference(), StructureConfig{}, 1);
  const auto z = latents(3, 1);
  const auto r = remove_fuser_attack(model, reference(), z);
  EXPECT_EQ(r.condition, "no_fuser");
  EXPECT_EQ(r.psnr, 99.0);
  EXPECT_EQ(authorized_decode_report(model, reference(), z, generate_key(1)).psnr, 99.0);
}

TEST(StructuralAttacks, WrongKeysDifferAndAreDeterministic) {
  const auto model = PCDiffModel<float>::build(reference(), StructureConfig{}, 1);
  const auto key = generate_key(2);
  const auto z = latents(2, 2);
  std::vector<FuserKey> a, b;
  const auto ra = wrong_key_attack(model, reference(), z, key, 5, 7, &a);
  const auto rb = wrong_key_attack(model, reference(), z, key, 5, 7, &b);
  EXPECT_EQ(a, b);
  for (const auto& k : a) EXPECT_NE(k, key);
  EXPECT_EQ(ra.psnr, rb.psnr);
  EXPECT_EQ(ra.samples, 10u);
  EXPECT_THROW(wrong_key_attack(model, reference(), z, key, 0, 7), ConfigError);
}

TEST(StructuralAttacks, KeepEverythingHypothesisEqualsPlainDecode) {
  const auto model = PCDiffModel<float>::build(reference(), StructureConfig{.m = 2, .n = 1}, 3);
  const auto key = generate_key(4);
  const auto z = latents(2, 3);
  RemovalHypothesis keep;
  keep.kind = RemovalHypothesis::Kind::up_chain;
  DecodeOptions plain;
  plain.key = &key;
  EXPECT_EQ(pcdiff_decode(model, z, removal_options(model, keep, key)).front().data,
            pcdiff_decode(model, z, plain).front().data);
}

TEST(StructuralAttacks, RemovingBothOriginalMidBlocksDegrades) {
  const auto model = PCDiffModel<float>::build(reference(), StructureConfig{.m = 2, .n = 0}, 3);
  RemovalHypothesis h;
  h.kind = RemovalHypothesis::Kind::mid_pair;
  h.mid_survivors = {0, 3};  // the two added blocks; originals sit in slots 1 and 2
  const auto r = partial_removal_attack(model, reference(), h, latents(2, 4), 1);
  EXPECT_LT(r.psnr, 60.0);
  EXPECT_NE(r.subject.find("mid(0,3)"), std::string::npos);
}

TEST(StructuralAttacks, InvalidHypothesisIsAConfigError) {
  const auto model = PCDiffModel<float>::build(reference(), StructureConfig{.m = 1, .n = 0}, 3);
  RemovalHypothesis h;
  h.mid_survivors = {0, 5};
  EXPECT_THROW(partial_removal_attack(model, reference(), h, latents(1, 5), 1), ConfigError);
  h.kind = RemovalHypothesis::Kind::up_chain;
  h.up_choice = {0, 2, 0};
  EXPECT_THROW(partial_removal_attack(model, reference(), h, latents(1, 5), 1), ConfigError);
}

TEST(BruteForce, ExhaustiveSearchVisitsEveryHypothesisOnce) {
  const auto model = PCDiffModel<float>::build(reference(), StructureConfig{.m = 1, .n = 0}, 3);
  const auto result = brute_force_search(model, reference(), latents(2, 6), 4, 11);
  ASSERT_EQ(result.trace.size(), 4u);
  std::set<std::size_t> seen;
  for (const auto& t : result.trace) {
    seen.insert(t.index);
    EXPECT_GT(t.seconds, 0.0);
    EXPECT_LE(t.psnr, result.best_psnr);
  }
  EXPECT_EQ(seen.size(), 4u);
  EXPECT_GT(result.mean_trial_seconds, 0.0);
  EXPECT_THROW(brute_force_search(model, reference(), latents(1, 6), 5, 11), ConfigError);
  EXPECT_THROW(brute_force_search(model, reference(), latents(1, 6), 0, 11), ConfigError);
}

TEST(BruteForce, VisitingOrderDependsOnSeed) {
  const auto model = PCDiffModel<float>::build(reference(), StructureConfig{.m = 2, .n = 1}, 3);
  const auto z = latents(1, 7);
  auto order = [&](std::uint64_t seed) {
    std::vector<std::size_t> idx;
    for (const auto& t : brute_force_search(model, reference(), z, 14, seed).trace) idx.push_back(t.index);
    return idx;
  };
  EXPECT_EQ(order(1), order(1));
  EXPECT_NE(order(1), order(2));
}
