#include <gtest/gtest.h>

#include <sstream>

#include "pcdiff/attacks.hpp"
#include "pcdiff/training.hpp"
#include "pcdiff/watermark.hpp"

using namespace pcdiff;

namespace {

// Pixel-domain stand-in for the autoencoder: each latent element owns 12 of the
// 48 values in its 4x4x3 block and is stored as 0.5 + 0.1 z.
struct BlockCodec {
  static std::size_t owner(std::size_t dy, std::size_t dx, std::size_t c) { return (dy * 12 + dx * 3 + c) % 4; }

  ImageF32 decode(const Tensor<float>& z) const {
    ImageF32 img(32, 32, 3);
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          const std::size_t ch = owner(y % 4, x % 4, c);
          img.at(y, x, c) = 0.5f + 0.1f * z[(ch * 8 + y / 4) * 8 + x / 4];
        }
    img.clamp01();
    return img;
  }

  Var<float> encode(const Var<float>& images) const {
    const auto& t = images.value();
    Tensor<float> z({1, 4, 8, 8});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x) {
          const std::size_t ch = owner(y % 4, x % 4, c);
          z[(ch * 8 + y / 4) * 8 + x / 4] += (t[(c * 32 + y) * 32 + x] - 0.5f) / 0.1f / 12.0f;
        }
    return ops::constant(z);
  }
};

std::vector<WatermarkPayload> payloads(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<WatermarkPayload> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(WatermarkPayload::random(32, 8, mix_seed(seed, i), rng));
  return out;
}

}  // namespace

TEST(Watermark, AllZeroPayloadMakesControlledPositionsNegative) {
  WatermarkPayload p{std::vector<bool>(32, false), 8, 77};
  Rng noise(1);
  const auto z = embed_watermark(p, noise);
  const auto pos = watermark_positions(77);
  for (std::size_t i = 0; i < 32 * 8; ++i) EXPECT_LE(z[pos[i]], 0.0f);
}

TEST(Watermark, DirectLatentRoundTripIsExact) {
  Rng rng(2);
  for (std::size_t i = 0; i < 50; ++i) {
    const auto p = WatermarkPayload::random(32, 8, i, rng);
    const auto z = embed_watermark(p, rng);
    EXPECT_EQ(bit_accuracy(p.bits, extract_from_latent(z, p.seed, 32, 8)), 1.0);
  }
}

TEST(Watermark, EmbeddedLatentsAreMarginallyStandardNormal) {
  constexpr std::size_t kSamples = 10000;
  std::vector<double> sum(256, 0.0), sq(256, 0.0);
  Rng rng(3);
  for (std::size_t s = 0; s < kSamples; ++s) {
    const auto p = WatermarkPayload::random(32, 8, 5, rng);
    const auto z = embed_watermark(p, rng);
    for (std::size_t i = 0; i < 256; ++i) {
      sum[i] += z[i];
      sq[i] += static_cast<double>(z[i]) * z[i];
    }
  }
  for (std::size_t i = 0; i < 256; ++i) {
    const double mean = sum[i] / kSamples;
    EXPECT_NEAR(mean, 0.0, 0.05) << i;
    EXPECT_NEAR(sq[i] / kSamples - mean * mean, 1.0, 0.1) << i;
  }
}

TEST(Watermark, CapacityIsEnforced) {
  Rng rng(1);
  EXPECT_THROW(embed_watermark(WatermarkPayload{std::vector<bool>(33), 8, 0}, rng), CapacityError);
  EXPECT_THROW(embed_watermark(WatermarkPayload{std::vector<bool>(4), 0, 0}, rng), CapacityError);
  EXPECT_THROW(embed_watermark(WatermarkPayload{{}, 8, 0}, rng), CapacityError);
  EXPECT_NO_THROW(embed_watermark(WatermarkPayload{std::vector<bool>(256), 1, 0}, rng));
}

TEST(Watermark, ShapeMismatchIsADecodeError) {
  EXPECT_THROW(extract_from_latent(Tensor<float>({1, 4, 8, 7}), 0, 32, 8), DecodeError);
  const BlockCodec codec;
  EXPECT_THROW(extract_watermark(ImageF32(16, 16, 3), codec, 0, 32, 8), DecodeError);
}

TEST(Watermark, TiesFallBackToTheSum) {
  const auto pos = watermark_positions(4);
  Tensor<float> z({1, 4, 8, 8});
  z[pos[0]] = 0.5f;
  z[pos[1]] = -0.2f;
  EXPECT_TRUE(extract_from_latent(z, 4, 1, 2)[0]);
  z[pos[0]] = 0.1f;
  EXPECT_FALSE(extract_from_latent(z, 4, 1, 2)[0]);
}

TEST(Watermark, UnwatermarkedImagesGiveChanceAccuracy) {
  const BlockCodec codec;
  Rng rng(7);
  double total = 0.0;
  const auto ps = payloads(100, 8);
  for (const auto& p : ps) {
    ImageF32 img(32, 32, 3);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform());
    total += bit_accuracy(p.bits, extract_watermark(img, codec, p.seed, 32, 8));
  }
  const double mean = total / ps.size();
  EXPECT_GE(mean, 0.35);
  EXPECT_LE(mean, 0.65);
}

TEST(Robustness, NoAttackColumnEqualsCleanRoundTrip) {
  const BlockCodec codec;
  const auto ps = payloads(20, 9);
  std::vector<Tensor<float>> zs;
  Rng noise(1);
  for (const auto& p : ps) zs.push_back(embed_watermark(p, noise));
  const std::vector<ImageAttack> suite{{"none", [](const ImageF32& img, std::size_t) { return img; }}};
  auto decode = [&](const Tensor<float>& z) { return codec.decode(z); };
  const auto row = robustness_eval("codec", ps, zs, decode, suite, codec);
  double clean = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i)
    clean += bit_accuracy(ps[i].bits, extract_watermark(codec.decode(zs[i]), codec, ps[i].seed, 32, 8));
  EXPECT_DOUBLE_EQ(row.accuracy[0], clean / ps.size());
  EXPECT_GT(row.accuracy[0], 0.95);
}

TEST(Robustness, AccuracyFallsAsNoiseGrows) {
  const BlockCodec codec;
  const auto ps = payloads(100, 10);
  std::vector<Tensor<float>> zs;
  Rng noise(2);
  for (const auto& p : ps) zs.push_back(embed_watermark(p, noise));
  std::vector<ImageAttack> suite;
  for (double sigma : {0.0, 0.05, 0.1, 0.15, 0.2}) {
    suite.push_back({"gnoise", [sigma](const ImageF32& img, std::size_t i) {
                       return apply_attack(img, AttackSpec{AttackKind::gaussian_noise, sigma, i});
                     }});
  }
  auto decode = [&](const Tensor<float>& z) { return codec.decode(z); };
  const auto row = robustness_eval("codec", ps, zs, decode, suite, codec);
  for (std::size_t i = 1; i < row.accuracy.size(); ++i) EXPECT_LE(row.accuracy[i], row.accuracy[i - 1]) << i;
  EXPECT_LT(row.accuracy.back(), row.accuracy.front());
}

TEST(Robustness, CountMismatchIsAConfigError) {
  const BlockCodec codec;
  auto decode = [&](const Tensor<float>& z) { return codec.decode(z); };
  EXPECT_THROW(robustness_eval("x", payloads(2, 1), {}, decode, {}, codec), ConfigError);
}

TEST(RobustnessTable, CsvLayout) {
  RobustnessTable t;
  t.attacks = {"none", "crop"};
  t.rows = {{"reference", {1.0, 0.5}}, {"pcdiff", {0.96875, 0.53125}}};
  MetricsReport q;
  q.psnr = 30.5;
  q.ssim = 0.9;
  q.feature_distance = 0.01;
  t.quality = {std::nullopt, q};
  std::ostringstream os;
  t.write_csv(os);
  EXPECT_EQ(os.str(),
            "method,psnr,ssim,fd_proxy,none,crop\n"
            "reference,-,-,-,1.0000,0.5000\n"
            "pcdiff,30.5000,0.9000,0.0100,0.9688,0.5312\n");
}
