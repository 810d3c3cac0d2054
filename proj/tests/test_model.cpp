#include <gtest/gtest.h>

#include "pcdiff/model.hpp"
#include "pcdiff/synth_data.hpp"

using namespace pcdiff;

namespace {

Var<float> sample_batch(std::size_t count, std::uint64_t seed) {
  DatasetSpec spec;
  spec.count = count;
  spec.seed = seed;
  const auto images = generate_dataset(spec);
  return ops::constant(images_to_batch<float>(images));
}

Var<float> random_latents(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> z({n, 4, 8, 8});
  for (auto& v : z.storage()) v = static_cast<float>(rng.normal());
  return ops::constant(z);
}

}  // namespace

TEST(Reference, BuildIsDeterministic) {
  const auto a = ReferenceAutoencoder<float>::build(3);
  const auto b = ReferenceAutoencoder<float>::build(3);
  const auto c = ReferenceAutoencoder<float>::build(4);
  ASSERT_EQ(a.params().size(), b.params().size());
  bool differs = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    EXPECT_TRUE(bit_equal(a.params().items()[i].var.value(), b.params().items()[i].var.value()));
    differs |= !bit_equal(a.params().items()[i].var.value(), c.params().items()[i].var.value());
  }
  EXPECT_TRUE(differs);
}

TEST(Reference, LatentShapeAndRoundTripShape) {
  const auto ae = ReferenceAutoencoder<float>::build(1);
  NoGradGuard guard;
  const auto x = sample_batch(2, 1);
  const auto z = ae.encode(x);
  EXPECT_EQ(z.shape(), (Shape{2, 4, 8, 8}));
  const auto y = ae.decode(z);
  EXPECT_EQ(y.shape(), x.shape());
  for (float v : y.value().data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Reference, RejectsBadShapes) {
  const auto ae = ReferenceAutoencoder<float>::build(1);
  EXPECT_THROW(ae.encode(ops::constant(Tensor<float>({1, 1, 32, 32}))), ConfigError);
  EXPECT_THROW(ae.encode(ops::constant(Tensor<float>({1, 3, 30, 32}))), ConfigError);
  EXPECT_THROW(ae.decode(ops::constant(Tensor<float>({1, 3, 8, 8}))), ConfigError);
}

TEST(PCDiff, ShapePreservedForEveryStructure) {
  const auto ref = ReferenceAutoencoder<float>::build(2);
  const auto z = random_latents(1, 5);
  const auto key = generate_key(9);
  NoGradGuard guard;
  for (std::int64_t m = 0; m <= 6; ++m)
    for (std::int64_t n = 0; n <= 6; ++n) {
      StructureConfig cfg;
      cfg.m = m;
      cfg.n = n;
      const auto model = PCDiffModel<float>::build(ref, cfg, 1);
      EXPECT_EQ(model.mid_slots().size(), static_cast<std::size_t>(m + 2));
      EXPECT_EQ(model.pairs().size(), static_cast<std::size_t>(n));
      EXPECT_EQ(model.decode(z, key).images.shape(), (Shape{1, 3, 32, 32})) << m << "," << n;
    }
}

TEST(PCDiff, FreshModelReproducesReferenceExactly) {
  // New mid blocks are residual with a zero second conv, pairs are identity,
  // and fusers start with a zero generator, so the initial decode is unchanged.
  const auto ref = ReferenceAutoencoder<float>::build(2);
  StructureConfig cfg;
  cfg.m = 3;
  cfg.n = 2;
  const auto model = PCDiffModel<float>::build(ref, cfg, 7);
  NoGradGuard guard;
  const auto z = random_latents(2, 6);
  const auto expected = ref.decode(z).value();
  EXPECT_TRUE(bit_equal(model.decode(z, generate_key(1)).images.value(), expected));
  EXPECT_TRUE(bit_equal(model.decode(z).images.value(), expected));
}

TEST(PCDiff, AddedMidBlockIsIdentityAtInit) {
  ParameterSet<float> params;
  Rng rng(3);
  const auto block = MidBlock<float>::create(params, "b", 32, rng, true);
  const auto x = random_latents(1, 8);
  Tensor<float> h({1, 32, 8, 8});
  Rng fill(4);
  for (auto& v : h.storage()) v = static_cast<float>(fill.normal());
  NoGradGuard guard;
  EXPECT_TRUE(bit_equal(block(ops::constant(h)).value(), h));
}

TEST(PCDiff, ParameterCountGrowsWithStructure) {
  const auto ref = ReferenceAutoencoder<float>::build(2);
  StructureConfig small, large;
  large.m = 6;
  large.n = 5;
  const auto a = PCDiffModel<float>::build(ref, small, 1);
  const auto b = PCDiffModel<float>::build(ref, large, 1);
  EXPECT_GT(b.params().scalar_count(), a.params().scalar_count());
  EXPECT_GT(a.params().scalar_count(), ref.params().scalar_count());
}

TEST(PCDiff, OriginalParametersAreFrozenCopies) {
  const auto ref = ReferenceAutoencoder<float>::build(2);
  StructureConfig cfg;
  cfg.m = 1;
  cfg.n = 1;
  const auto model = PCDiffModel<float>::build(ref, cfg, 1);
  std::size_t frozen = 0;
  for (const auto& p : model.params().items()) {
    const auto* original = ref.params().find(p.name);
    if (original) {
      ++frozen;
      EXPECT_TRUE(p.frozen) << p.name;
      EXPECT_TRUE(bit_equal(p.var.value(), original->var.value())) << p.name;
    } else {
      EXPECT_FALSE(p.frozen) << p.name;
      EXPECT_EQ(p.name.rfind("pcdiff.", 0), 0u) << p.name;
    }
  }
  EXPECT_EQ(frozen, ref.params().size());
}

TEST(PCDiff, AddedMidBlocksShareTheOriginalSignature) {
  const auto ref = ReferenceAutoencoder<float>::build(2);
  StructureConfig cfg;
  cfg.m = 4;
  const auto model = PCDiffModel<float>::build(ref, cfg, 1);
  const auto original = ref.decoder().mid[0].signature();
  std::size_t originals = 0;
  for (const auto& slot : model.mid_slots()) {
    EXPECT_EQ(slot.block.signature(), original);
    originals += slot.original;
  }
  EXPECT_EQ(originals, 2u);
}

TEST(Structure, LabelConvention) {
  const auto c = StructureConfig::from_label("8-6");
  EXPECT_EQ(c.m, 6);
  EXPECT_EQ(c.n, 5);
  EXPECT_EQ(c.effective_label(), "8-6");
  StructureConfig d;
  d.m = 0;
  d.n = 0;
  EXPECT_EQ(d.effective_label(), "2-1");
  EXPECT_THROW(StructureConfig::from_label("86"), ConfigError);
  EXPECT_THROW(StructureConfig::from_label("1-1"), ConfigError);
  EXPECT_THROW(StructureConfig::from_label("a-b"), ConfigError);
}

TEST(Structure, NegativeCountsRejected) {
  const auto ref = ReferenceAutoencoder<float>::build(2);
  StructureConfig cfg;
  cfg.m = -1;
  EXPECT_THROW(PCDiffModel<float>::build(ref, cfg, 1), ConfigError);
  cfg.m = 0;
  cfg.n = -2;
  EXPECT_THROW(PCDiffModel<float>::build(ref, cfg, 1), ConfigError);
  cfg.n = 0;
  cfg.fusers = {FuserSite::before_output, FuserSite::before_output};
  EXPECT_THROW(PCDiffModel<float>::build(ref, cfg, 1), ConfigError);
}

TEST(PCDiff, GateModesAreReported) {
  const auto ref = ReferenceAutoencoder<float>::build(2);
  const auto model = PCDiffModel<float>::build(ref, StructureConfig{}, 1);
  const auto z = random_latents(1, 2);
  const auto key = generate_key(3);
  NoGradGuard guard;
  EXPECT_EQ(model.decode(z, key).mode, GateMode::keyed);
  EXPECT_FALSE(model.decode(z, key).unauthorized());
  EXPECT_EQ(model.decode(z).mode, GateMode::missing_key);
  DecodeOptions strip;
  strip.key = &key;
  strip.strip_fusers = true;
  const auto stripped = model.decode(z, strip);
  EXPECT_EQ(stripped.mode, GateMode::fusers_stripped);
  EXPECT_TRUE(stripped.unauthorized());
}

TEST(PCDiff, MasksFollowHypotheses) {
  const auto ref = ReferenceAutoencoder<float>::build(2);
  StructureConfig cfg;
  cfg.m = 2;
  cfg.n = 3;
  const auto model = PCDiffModel<float>::build(ref, cfg, 1);
  const auto z = random_latents(1, 2);
  NoGradGuard guard;
  for (const auto& h : enumerate_removals(1, 1)) {
    const auto mask = mask_from_hypothesis(h, 1, 1);
    EXPECT_EQ(mask.keep_mid.size(), 3u);
    EXPECT_EQ(mask.keep_pair.size(), 1u);
  }
  RemovalHypothesis bad;
  bad.kind = RemovalHypothesis::Kind::mid_pair;
  bad.mid_survivors = {0, 9};
  EXPECT_THROW(mask_from_hypothesis(bad, 2, 3), ConfigError);

  DecodeOptions o;
  o.mask.keep_mid = {true, false};
  EXPECT_THROW(model.decode(z, o), ConfigError);
  o.mask.keep_mid = {true, false, true, false};
  o.mask.keep_pair = {false, false, false};
  EXPECT_EQ(model.decode(z, o).images.shape(), (Shape{1, 3, 32, 32}));
}
