#include <gtest/gtest.h>

#include <filesystem>

#include "pcdiff/io.hpp"
#include "pcdiff/model.hpp"

using namespace pcdiff;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("pcdiff_io_" + name);
}

Checkpoint sample_checkpoint() {
  Checkpoint c;
  Rng rng(3);
  Tensor<float> a({2, 3});
  for (auto& v : a.storage()) v = static_cast<float>(rng.normal());
  Tensor<double> b({4});
  for (auto& v : b.storage()) v = rng.normal();
  c.tensors.push_back({"layer.weight", a, true});
  c.tensors.push_back({"layer.bias", b, false});
  c.metadata = {{"structure", {{"m", 2}, {"n", 1}}}, {"seed", 9}};
  return c;
}

std::string expect_io_error(const std::string& bytes) {
  try {
    parse_checkpoint(bytes);
  } catch (const IoError& e) {
    return e.what();
  }
  ADD_FAILURE() << "expected IoError";
  return "";
}

}  // namespace

TEST(Checkpoint, SerializationRoundTripIsBitIdentical) {
  const auto c = sample_checkpoint();
  const auto bytes = serialize_checkpoint(c);
  const auto back = parse_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  ASSERT_EQ(back.tensors.size(), 2u);
  EXPECT_TRUE(bit_equal(std::get<Tensor<float>>(back.tensors[0].value), std::get<Tensor<float>>(c.tensors[0].value)));
  EXPECT_TRUE(bit_equal(std::get<Tensor<double>>(back.tensors[1].value), std::get<Tensor<double>>(c.tensors[1].value)));
  EXPECT_EQ(back.metadata, c.metadata);
}

TEST(Checkpoint, HeaderLayout) {
  const auto bytes = serialize_checkpoint(sample_checkpoint());
  EXPECT_EQ(bytes.substr(0, 6), "PCDF1\n");
  EXPECT_EQ(bytes.substr(6, 4), std::string("\x01\x00\x00\x00", 4));
  EXPECT_EQ(bytes.substr(10, 4), std::string("\x02\x00\x00\x00", 4));
  const std::string name_len("\x0c\x00\x00\x00", 4);
  EXPECT_EQ(bytes.substr(14, 4), name_len);
  EXPECT_EQ(bytes.substr(18, 12), "layer.weight");
}

TEST(Checkpoint, FrozenFlagsSurviveFileRoundTrip) {
  const auto path = temp_path("frozen.ckpt");
  save_checkpoint(path, sample_checkpoint());
  const auto back = load_checkpoint(path);
  EXPECT_TRUE(back.tensors[0].frozen);
  EXPECT_FALSE(back.tensors[1].frozen);
  std::filesystem::remove(path);
}

TEST(Checkpoint, TamperedMagicNamesExpectedAndFound) {
  auto bytes = serialize_checkpoint(sample_checkpoint());
  bytes[0] = 'X';
  const auto msg = expect_io_error(bytes);
  EXPECT_NE(msg.find("PCDF1"), std::string::npos) << msg;
  EXPECT_NE(msg.find("XCDF1"), std::string::npos) << msg;
}

TEST(Checkpoint, WrongVersionNamesExpectedAndFound) {
  auto bytes = serialize_checkpoint(sample_checkpoint());
  bytes[6] = 7;
  const auto msg = expect_io_error(bytes);
  EXPECT_NE(msg.find("expected 1"), std::string::npos) << msg;
  EXPECT_NE(msg.find("found 7"), std::string::npos) << msg;
}

TEST(Checkpoint, TruncationAndTrailingBytesAreErrors) {
  const auto bytes = serialize_checkpoint(sample_checkpoint());
  expect_io_error(bytes.substr(0, bytes.size() - 3));
  expect_io_error(bytes + "x");
  expect_io_error("");
}

TEST(Checkpoint, ModelParametersRoundTripThroughApply) {
  const auto a = ReferenceAutoencoder<float>::build(1);
  auto b = ReferenceAutoencoder<float>::build(2);
  auto ckpt = parse_checkpoint(serialize_checkpoint(to_checkpoint(a.params())));
  ckpt.tensors[0].frozen = true;
  apply_checkpoint(b.params(), ckpt);
  for (std::size_t i = 0; i < a.params().size(); ++i)
    EXPECT_TRUE(bit_equal(a.params().items()[i].var.value(), b.params().items()[i].var.value()));
  EXPECT_TRUE(b.params().items()[0].frozen);
  EXPECT_FALSE(b.params().items()[0].var.requires_grad());
}

TEST(Checkpoint, ApplyRejectsMissingOrMisshapenTensors) {
  auto model = ReferenceAutoencoder<float>::build(1);
  auto ckpt = to_checkpoint(model.params());
  auto missing = ckpt;
  missing.tensors.pop_back();
  EXPECT_THROW(apply_checkpoint(model.params(), missing), IoError);
  auto misshapen = ckpt;
  misshapen.tensors[0].value = Tensor<float>({1});
  EXPECT_THROW(apply_checkpoint(model.params(), misshapen), IoError);
  auto wrong_dtype = ckpt;
  wrong_dtype.tensors[0].value = Tensor<double>(wrong_dtype.tensors[0].shape());
  EXPECT_THROW(apply_checkpoint(model.params(), wrong_dtype), IoError);
}

TEST(Ppm, HeaderFor32x32) {
  const ImageF32 img(32, 32, 3);
  const auto bytes = encode_ppm(img);
  EXPECT_EQ(bytes.substr(0, 13), "P6\n32 32\n255\n");
  EXPECT_EQ(bytes.size(), 13u + 32 * 32 * 3);
}

TEST(Ppm, QuantizedImageRoundTripsExactly) {
  Rng rng(5);
  ImageF32 img(7, 5, 3);
  for (auto& v : img.data) v = static_cast<float>(rng.below(256)) / 255.0f;
  const auto path = temp_path("rt.ppm");
  save_image(path, img);
  const auto back = load_image(path);
  EXPECT_EQ(back.height, 7u);
  EXPECT_EQ(back.width, 5u);
  EXPECT_EQ(back.data, img.data);
  std::filesystem::remove(path);
}

TEST(Ppm, ArbitraryImageRoundTripsAfterQuantization) {
  Rng rng(6);
  ImageF32 img(4, 4, 3);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  const auto back = decode_ppm(encode_ppm(img));
  for (std::size_t i = 0; i < img.data.size(); ++i)
    EXPECT_EQ(back.data[i], static_cast<float>(quantize_8bit(img.data[i])) / 255.0f);
}

TEST(Ppm, CommentsInHeaderAreSkipped) {
  const std::string bytes = std::string("P6\n# made by hand\n1 1\n255\n") + std::string("\xff\x00\x80", 3);
  const auto img = decode_ppm(bytes);
  EXPECT_EQ(img.data[0], 1.0f);
  EXPECT_EQ(img.data[1], 0.0f);
  EXPECT_EQ(img.data[2], 128.0f / 255.0f);
}

TEST(Ppm, GreyscaleFileIsAFormatError) {
  const std::string bytes = std::string("P5\n1 1\n255\n") + '\x10';
  try {
    decode_ppm(bytes);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("P5"), std::string::npos);
  }
}

TEST(Ppm, MalformedHeadersAreErrors) {
  EXPECT_THROW(decode_ppm("P6\n2 x\n255\n"), IoError);
  EXPECT_THROW(decode_ppm("P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00"), IoError);
  EXPECT_THROW(decode_ppm(std::string("P6\n2 2\n255\n") + "abc"), IoError);
  EXPECT_THROW(decode_ppm(""), IoError);
  EXPECT_THROW(load_image(temp_path("does_not_exist.ppm")), IoError);
}
