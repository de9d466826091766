#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "crseg/image.hpp"
#include "crseg/mask_ops.hpp"

namespace crseg::prompting {

using masks::BinaryMask;

/// A 2-D prompt in continuous pixel coordinates; pixel (x, y) covers [x, x+1) x [y, y+1).
struct PixelPrompt {
  double u = 0, v = 0;
};

struct SkippedPrompt {
  std::size_t prompt_index = 0;
  std::string reason;
  friend bool operator==(const SkippedPrompt&, const SkippedPrompt&) = default;
};

struct PromptMaskResult {
  std::vector<BinaryMask> masks;  // unlabelled; provenance holds the prompt index
  std::vector<SkippedPrompt> skipped;
};

inline bool prompt_in_bounds(const PixelPrompt& p, const Image& image) {
  return std::isfinite(p.u) && std::isfinite(p.v) && p.u >= 0 && p.v >= 0 &&
         p.u < static_cast<double>(image.width) && p.v < static_cast<double>(image.height);
}

/**
 * Promptable instance segmenter seam.
 *
 * Given an image and a batch of point prompts, returns one binary mask per
 * in-bounds prompt (same size as the image) and a skip record for every
 * other prompt. Implementations must be deterministic and safe to call
 * concurrently on distinct images.
 */
class PromptMasker {
 public:
  virtual ~PromptMasker() = default;
  virtual PromptMaskResult masks_for_prompts(const Image& image, std::span<const PixelPrompt> prompts) const = 0;
};

/// Region growing from the prompt pixel: 4-connected pixels whose RGB
/// distance to the seed colour is within color_tolerance, visited in
/// breadth-first order and capped at max_region_fraction of the image.
class RegionGrowMasker final : public PromptMasker {
 public:
  double color_tolerance = 0.08;
  double max_region_fraction = 0.5;

  RegionGrowMasker() = default;
  RegionGrowMasker(double tolerance, double max_fraction) : color_tolerance(tolerance), max_region_fraction(max_fraction) {}

  PromptMaskResult masks_for_prompts(const Image& image, std::span<const PixelPrompt> prompts) const override {
    PromptMaskResult out;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      if (!prompt_in_bounds(prompts[i], image)) {
        out.skipped.push_back({i, "prompt outside the image"});
        continue;
      }
      BinaryMask m = grow(image, static_cast<std::size_t>(prompts[i].v), static_cast<std::size_t>(prompts[i].u));
      m.provenance = {i};
      out.masks.push_back(std::move(m));
    }
    return out;
  }

  BinaryMask grow(const Image& image, std::size_t seed_y, std::size_t seed_x) const {
    BinaryMask m(image.height, image.width);
    const auto cap = static_cast<std::size_t>(
        std::floor(max_region_fraction * static_cast<double>(image.pixels())));
    const auto seed = image.pixel(seed_y, seed_x);
    const double tol2 = color_tolerance * color_tolerance;
    auto close = [&](std::size_t y, std::size_t x) {
      const auto p = image.pixel(y, x);
      const double d0 = p[0] - seed[0], d1 = p[1] - seed[1], d2 = p[2] - seed[2];
      return d0 * d0 + d1 * d1 + d2 * d2 <= tol2;
    };
    std::deque<std::pair<std::size_t, std::size_t>> queue{{seed_y, seed_x}};
    m.set(seed_y, seed_x);
    std::size_t count = 1;
    while (!queue.empty() && count < cap) {
      const auto [y, x] = queue.front();
      queue.pop_front();
      const std::pair<long, long> steps[] = {{-1, 0}, {0, -1}, {0, 1}, {1, 0}};
      for (const auto& [dy, dx] : steps) {
        const long ny = static_cast<long>(y) + dy, nx = static_cast<long>(x) + dx;
        if (ny < 0 || nx < 0 || ny >= static_cast<long>(image.height) || nx >= static_cast<long>(image.width)) continue;
        const auto uy = static_cast<std::size_t>(ny), ux = static_cast<std::size_t>(nx);
        if (m.at(uy, ux) || !close(uy, ux)) continue;
        if (count >= cap) break;
        m.set(uy, ux);
        ++count;
        queue.emplace_back(uy, ux);
      }
    }
    return m;
  }
};

/// Conforming stub: an all-zero mask for every in-bounds prompt.
class EmptyMasker final : public PromptMasker {
 public:
  PromptMaskResult masks_for_prompts(const Image& image, std::span<const PixelPrompt> prompts) const override {
    PromptMaskResult out;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      if (!prompt_in_bounds(prompts[i], image)) {
        out.skipped.push_back({i, "prompt outside the image"});
        continue;
      }
      BinaryMask m(image.height, image.width);
      m.provenance = {i};
      out.masks.push_back(std::move(m));
    }
    return out;
  }
};

}  // namespace crseg::prompting
