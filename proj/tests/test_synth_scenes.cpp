#include <gtest/gtest.h>

#include <cmath>

#include "crseg/synth_scenes.hpp"

using namespace crseg;
using namespace crseg::synth;

namespace {

Scene make(std::uint64_t seed, CorruptionConfig c = {}, RadarNoiseConfig r = {}) {
  SceneConfig s;
  s.seed = seed;
  return generate_scene(s, r, c);
}

Image ramp(std::size_t h, std::size_t w) {
  Image img(h, w);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<double>(i % 97) / 97.0;
  return img;
}

}  // namespace

TEST(SynthScene, DeterministicPerSeed) {
  const auto a = make(5), b = make(5), c = make(6);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.gt, b.gt);
  EXPECT_EQ(a.radar.labels, b.radar.labels);
  ASSERT_EQ(a.radar.points.size(), b.radar.points.size());
  for (std::size_t i = 0; i < a.radar.points.size(); ++i) EXPECT_EQ(a.radar.points[i].x, b.radar.points[i].x);
  EXPECT_NE(a.image, c.image);
}

TEST(SynthScene, GroundTruthIsOneHotWithSkyAndWater) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = make(seed);
    const auto labels = s.gt.argmax();
    EXPECT_EQ(labels.front(), kBackgroundClass);
    EXPECT_EQ(labels.back() == kWaterClass || is_object_class(labels.back()), true);
    for (std::size_t p = 0; p < labels.size(); ++p) {
      double sum = 0;
      for (std::size_t c = 0; c < kNumClasses; ++c) sum += s.gt.channel(c)[p];
      EXPECT_EQ(sum, 1.0);
    }
    for (double v : s.image.rgb) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(SynthScene, RadarLabelsAgreeWithGroundTruthWithoutMislocation) {
  RadarNoiseConfig r;
  r.mislocation_sigma = 0;
  r.dropout_prob = 0;
  r.clutter_rate = 6;
  std::size_t object_points = 0, clutter_points = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto s = make(seed, {}, r);
    ASSERT_TRUE(s.radar.labels.has_value());
    ASSERT_EQ(s.radar.labels->size(), s.radar.points.size());
    ASSERT_EQ(s.clutter.size(), s.radar.points.size());
    const auto labels = s.gt.argmax();
    for (std::size_t i = 0; i < s.radar.points.size(); ++i) {
      const auto pr = radar::project_point(s.radar.points[i], s.camera);
      ASSERT_TRUE(pr.in_view);
      const auto px = static_cast<std::size_t>(std::floor(pr.v)) * 64 + static_cast<std::size_t>(std::floor(pr.u));
      EXPECT_EQ(labels[px], (*s.radar.labels)[i]);
      EXPECT_EQ(s.clutter[i], (*s.radar.labels)[i] == kWaterClass);
      (s.clutter[i] ? clutter_points : object_points) += 1;
    }
  }
  EXPECT_GT(object_points, 100u);
  EXPECT_GT(clutter_points, 100u);
}

TEST(SynthScene, ObjectRadarSignaturesFollowClass) {
  RadarNoiseConfig r;
  r.clutter_rate = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto s = make(seed, {}, r);
    for (std::size_t i = 0; i < s.radar.points.size(); ++i) {
      const auto& app = appearance((*s.radar.labels)[i]);
      EXPECT_LT(std::abs(s.radar.points[i].rcs - app.rcs_mean), 12.0);
      EXPECT_LT(std::abs(s.radar.points[i].doppler - app.doppler_mean), 2.0);
    }
  }
}

TEST(SynthScene, FullDropoutLeavesOnlyClutter) {
  RadarNoiseConfig r;
  r.dropout_prob = 1.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = make(seed, {}, r);
    for (bool c : s.clutter) EXPECT_TRUE(c);
  }
}

TEST(SynthScene, CorruptionTouchesImageOnly) {
  CorruptionConfig fog{CorruptionMode::fog, 0.8, 3};
  const auto clean = make(9), foggy = make(9, fog);
  EXPECT_EQ(clean.gt, foggy.gt);
  EXPECT_EQ(clean.radar.labels, foggy.radar.labels);
  EXPECT_NE(clean.image, foggy.image);
}

TEST(Corruption, SeverityZeroIsIdentity) {
  const auto img = ramp(32, 32);
  for (auto m : {CorruptionMode::fog, CorruptionMode::droplets, CorruptionMode::blur, CorruptionMode::strong_light})
    EXPECT_EQ(corrupt(img, {m, 0.0, 4}), img) << to_string(m);
  EXPECT_EQ(corrupt(img, {CorruptionMode::none, 1.0, 4}), img);
}

TEST(Corruption, FogBlendsTowardGray) {
  const auto img = ramp(16, 16);
  const auto out = corrupt(img, {CorruptionMode::fog, 0.25, 0});
  for (std::size_t i = 0; i < img.rgb.size(); ++i) EXPECT_NEAR(out.rgb[i], 0.75 * img.rgb[i] + 0.25 * kFogGray, 1e-15);
}

TEST(Corruption, DropletsOnlyInsideDiscs) {
  const auto img = ramp(32, 32);
  const CorruptionConfig cfg{CorruptionMode::droplets, 0.7, 12};
  const auto mask = disc_union(droplet_discs(cfg, 32, 32), 32, 32);
  const auto out = corrupt(img, cfg);
  std::size_t touched = 0;
  for (std::size_t p = 0; p < img.pixels(); ++p) {
    if (!mask[p]) {
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.rgb[p * 3 + c], img.rgb[p * 3 + c]);
    } else {
      ++touched;
    }
  }
  EXPECT_GT(touched, 0u);
  EXPECT_EQ(droplet_discs(cfg, 32, 32).size(), 7u);
}

TEST(Corruption, BlurPreservesConstantImageAndIsDeterministic) {
  Image flat(16, 16);
  for (auto& v : flat.rgb) v = 0.4;
  const auto out = corrupt(flat, {CorruptionMode::blur, 1.0, 0});
  for (double v : out.rgb) EXPECT_NEAR(v, 0.4, 1e-12);
  const auto img = ramp(16, 16);
  const CorruptionConfig glare{CorruptionMode::strong_light, 0.6, 21};
  EXPECT_EQ(corrupt(img, glare), corrupt(img, glare));
  for (double v : corrupt(img, glare).rgb) EXPECT_LE(v, 1.0);
}

TEST(Corruption, ConfigValidation) {
  EXPECT_THROW(corrupt(ramp(16, 16), {CorruptionMode::fog, 1.5, 0}), std::invalid_argument);
  EXPECT_THROW(parse_corruption("snow"), std::invalid_argument);
  EXPECT_EQ(parse_corruption("strong_light"), CorruptionMode::strong_light);
  SceneConfig s;
  s.width = 40;
  EXPECT_THROW(generate_scene(s, {}, {}), std::invalid_argument);
}
