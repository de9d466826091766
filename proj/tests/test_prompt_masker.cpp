#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "crseg/prompt_masker.hpp"

using namespace crseg;
using namespace crseg::prompting;

namespace {

// 8x8 image: dark water with a bright 3x2 box at rows 2..3, cols 4..6.
Image box_image() {
  Image img(8, 8);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) img.set_pixel(y, x, {0.1, 0.3, 0.5});
  for (std::size_t y = 2; y < 4; ++y)
    for (std::size_t x = 4; x < 7; ++x) img.set_pixel(y, x, {0.9, 0.9, 0.9});
  return img;
}

}  // namespace

TEST(RegionGrow, RecoversUniformBox) {
  const auto img = box_image();
  RegionGrowMasker masker;
  const std::vector<PixelPrompt> prompts{{5.5, 2.5}};
  const auto r = masker.masks_for_prompts(img, prompts);
  ASSERT_EQ(r.masks.size(), 1u);
  EXPECT_TRUE(r.skipped.empty());
  EXPECT_EQ(r.masks[0].area(), 6u);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) EXPECT_EQ(r.masks[0].at(y, x), (y >= 2 && y < 4 && x >= 4 && x < 7) ? 1 : 0);
  EXPECT_EQ(r.masks[0].provenance, (std::vector<std::size_t>{0}));
}

TEST(RegionGrow, CapsRegionSize) {
  const auto img = box_image();
  RegionGrowMasker masker(0.08, 0.25);
  const std::vector<PixelPrompt> prompts{{0.5, 7.5}};
  const auto r = masker.masks_for_prompts(img, prompts);
  ASSERT_EQ(r.masks.size(), 1u);
  EXPECT_EQ(r.masks[0].area(), 16u);
}

TEST(RegionGrow, OutOfBoundsAndNonFinitePromptsAreSkipped) {
  const auto img = box_image();
  RegionGrowMasker masker;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const std::vector<PixelPrompt> prompts{{-0.1, 2}, {8.0, 2}, {1, 1}, {nan, 1}};
  const auto r = masker.masks_for_prompts(img, prompts);
  ASSERT_EQ(r.masks.size(), 1u);
  EXPECT_EQ(r.masks[0].provenance, (std::vector<std::size_t>{2}));
  ASSERT_EQ(r.skipped.size(), 3u);
  EXPECT_EQ(r.skipped[0].prompt_index, 0u);
  EXPECT_EQ(r.skipped[1].prompt_index, 1u);
  EXPECT_EQ(r.skipped[2].prompt_index, 3u);
}

TEST(RegionGrow, DeterministicAndImageSized) {
  const auto img = box_image();
  RegionGrowMasker masker;
  const std::vector<PixelPrompt> prompts{{5, 3}, {0, 0}, {7.9, 7.9}};
  const auto a = masker.masks_for_prompts(img, prompts);
  const auto b = masker.masks_for_prompts(img, prompts);
  ASSERT_EQ(a.masks.size(), b.masks.size());
  for (std::size_t i = 0; i < a.masks.size(); ++i) {
    EXPECT_EQ(a.masks[i], b.masks[i]);
    EXPECT_EQ(a.masks[i].height, 8u);
    EXPECT_EQ(a.masks[i].width, 8u);
    EXPECT_FALSE(a.masks[i].class_index.has_value());
  }
}

TEST(EmptyMasker, OneEmptyMaskPerInBoundsPrompt) {
  const auto img = box_image();
  EmptyMasker masker;
  const std::vector<PixelPrompt> prompts{{1, 1}, {20, 1}, {3, 3}};
  const auto r = masker.masks_for_prompts(img, prompts);
  ASSERT_EQ(r.masks.size(), 2u);
  for (const auto& m : r.masks) EXPECT_TRUE(m.empty());
  ASSERT_EQ(r.skipped.size(), 1u);
  EXPECT_EQ(r.skipped[0].prompt_index, 1u);
}
