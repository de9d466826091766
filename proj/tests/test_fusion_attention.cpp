#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "crseg/fusion_attention.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace crseg;
using namespace crseg::fusion;
using testsupport::random_matrix;

using oracles::caf_oracle;
using oracles::gather;
using oracles::random_caf;

TEST(CrossAttention, MatchesStraightLineOracle) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto inst = random_caf(seed);
    Tape tape;
    const auto out = cross_attention_fuse(tape, tape.constant(inst.image), tape.constant(inst.radar), inst.rows,
                                          inst.ps, 1)
                         .value();
    const auto expect = caf_oracle(inst.image, gather(inst.radar, inst.rows), inst.ps["caf.l2.wq"],
                                   inst.ps["caf.l2.wk"], inst.ps["caf.l2.wv"]);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], expect[i], 1e-10);
  }
}

TEST(CrossAttention, ZeroValuesGiveQueriesExactly) {
  auto inst = random_caf(3);
  for (auto& v : inst.ps["caf.l1.wv"].data()) v = 0;
  Tape tape;
  const auto out =
      cross_attention_fuse(tape, tape.constant(inst.image), tape.constant(inst.radar), inst.rows, inst.ps, 0).value();
  const auto q = numerics::matmul(tape.constant(inst.image), tape.constant(inst.ps["caf.l1.wq"])).value();
  EXPECT_EQ(out.storage(), q.storage());
}

TEST(CrossAttention, EmptyKeySetGivesQueries) {
  auto inst = random_caf(4);
  Tape tape;
  const auto out =
      cross_attention_fuse(tape, tape.constant(inst.image), tape.constant(inst.radar), {}, inst.ps, 0).value();
  const auto q = numerics::matmul(tape.constant(inst.image), tape.constant(inst.ps["caf.l1.wq"])).value();
  EXPECT_EQ(out.storage(), q.storage());
}

TEST(CrossAttention, PaddedRowsNeverChangeOutput) {
  auto inst = random_caf(5);
  Tape tape;
  const auto a =
      cross_attention_fuse(tape, tape.constant(inst.image), tape.constant(inst.radar), inst.rows, inst.ps, 2).value();
  Tensor noisy = inst.radar;
  for (std::size_t r = 0; r < noisy.rows(); ++r)
    if (std::find(inst.rows.begin(), inst.rows.end(), r) == inst.rows.end())
      for (std::size_t c = 0; c < noisy.cols(); ++c) noisy(r, c) = 1e3 * (c + 1.0);
  const auto b =
      cross_attention_fuse(tape, tape.constant(inst.image), tape.constant(noisy), inst.rows, inst.ps, 2).value();
  EXPECT_EQ(a.storage(), b.storage());
}

TEST(CrossAttention, WidthMismatchIsShapeError) {
  auto inst = random_caf(6);
  Tape tape;
  EXPECT_THROW(cross_attention_fuse(tape, tape.constant(inst.image), tape.constant(Tensor::matrix(3, 2)), {0}, inst.ps, 0),
               numerics::ShapeError);
}

TEST(ImageEncoder, PyramidGeometry) {
  ModelDims dims;
  std::mt19937_64 rng(0);
  ParameterSet ps;
  init_image_encoder(ps, dims, rng);
  Image img(64, 32);
  Tape tape;
  const auto pyr = encode_image(tape, img, ps);
  for (std::size_t i = 0; i < kLevels; ++i) {
    EXPECT_EQ(pyr.heights[i], 64u >> (i + 1));
    EXPECT_EQ(pyr.widths[i], 32u >> (i + 1));
    EXPECT_EQ(pyr.features[i].rows(), pyr.heights[i] * pyr.widths[i]);
    EXPECT_EQ(pyr.features[i].cols(), dims.channels[i]);
  }
  EXPECT_THROW(encode_image(tape, Image(40, 32), ps), std::invalid_argument);
}

TEST(Decoder, ChannelsSumToOnePerPixel) {
  ModelDims dims;
  std::mt19937_64 rng(1);
  ParameterSet ps;
  init_image_encoder(ps, dims, rng);
  init_decoder(ps, dims, rng);
  Image img(32, 32);
  for (auto& v : img.rgb) v = std::uniform_real_distribution<double>(0, 1)(rng);
  Tape tape;
  const auto pyr = encode_image(tape, img, ps);
  const auto out = decode_masks(tape, pyr.features, pyr, ps, 32, 32).value();
  ASSERT_EQ(out.rows(), 32u * 32u);
  ASSERT_EQ(out.cols(), kNumClasses);
  for (std::size_t p = 0; p < out.rows(); ++p) {
    double s = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      s += out(p, c);
      EXPECT_GE(out(p, c), 0.0);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

class CafGradients : public ::testing::TestWithParam<int> {};

TEST_P(CafGradients, MatchFiniteDifferences) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  auto inst = random_caf(seed + 100);
  inst.ps.add("img", inst.image);
  inst.ps.add("rad", inst.radar);
  std::mt19937_64 rng(seed);
  const auto w = random_matrix(inst.image.rows(), inst.image.cols(), rng);
  const auto r = testsupport::check_gradients(
      inst.ps,
      [&](Tape& t) {
        const auto f = cross_attention_fuse(t, t.watch(inst.ps["img"]), t.watch(inst.ps["rad"]), inst.rows, inst.ps, 3);
        return numerics::sum(numerics::mul(f, t.constant(w)));
      },
      seed);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

INSTANTIATE_TEST_SUITE_P(Seeds, CafGradients, ::testing::Range(0, 20));

class DecoderGradients : public ::testing::TestWithParam<int> {};

TEST_P(DecoderGradients, MatchFiniteDifferences) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  ModelDims dims;
  dims.channels = {4, 5, 6, 7};
  dims.decoder_width = 6;
  std::mt19937_64 rng(seed);
  ParameterSet ps;
  init_image_encoder(ps, dims, rng);
  init_decoder(ps, dims, rng);
  for (auto& [name, t] : ps)
    for (auto& v : t.data()) v += 0.1 * std::uniform_real_distribution<double>(-1, 1)(rng);
  Image img(16, 16);
  for (auto& v : img.rgb) v = std::uniform_real_distribution<double>(0, 1)(rng);
  const auto w = random_matrix(20 * 20, kNumClasses, rng);
  const auto r = testsupport::check_gradients(
      ps,
      [&](Tape& t) {
        const auto pyr = encode_image(t, img, ps);
        return numerics::sum(numerics::mul(decode_masks(t, pyr.features, pyr, ps, 20, 20), t.constant(w)));
      },
      seed);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

INSTANTIATE_TEST_SUITE_P(Seeds, DecoderGradients, ::testing::Range(0, 20));
