#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "crseg/image.hpp"
#include "crseg/mask_ops.hpp"

namespace crseg::inpaint {

using masks::BinaryMask;

/// Generation controls handed verbatim to every inpainter.
struct InpaintConfig {
  double guidance_scale = 7.0;
  int inference_steps = 50;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(guidance_scale > 0)) throw std::invalid_argument("guidance_scale must be positive");
    if (inference_steps < 1) throw std::invalid_argument("inference_steps must be at least 1");
  }
};

struct InpaintRequest {
  Image image;
  BinaryMask mask;  // region to fill; carries the class
  std::string prompt;
  InpaintConfig config;
};

/// Mask-conditioned image generator. Pixels outside the mask must come back
/// unchanged (within 1/255 for real generators) and results must be
/// deterministic for a fixed seed.
class Inpainter {
 public:
  virtual ~Inpainter() = default;
  virtual Image inpaint(const InpaintRequest& request) const = 0;
};

class IdentityInpainter final : public Inpainter {
 public:
  Image inpaint(const InpaintRequest& request) const override { return request.image; }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Uniform value in [-1, 1) from a hash of the key.
inline double hash_unit(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  const std::uint64_t h = splitmix64(splitmix64(splitmix64(a) ^ b) ^ c);
  return static_cast<double>(h >> 11) * (2.0 / 9007199254740992.0) - 1.0;
}

/**
 * Deterministic stand-in for a diffusion inpainter: masked pixels get the
 * class base colour plus position-keyed noise of amplitude
 * noise_strength / guidance_scale. Everything outside the mask is copied.
 */
class MockTextureInpainter final : public Inpainter {
 public:
  double noise_strength = 0.35;

  static std::array<double, 3> base_color(std::size_t class_index) {
    static constexpr std::array<std::array<double, 3>, 9> palette{{
        {0.50, 0.50, 0.50},  // background
        {0.55, 0.27, 0.07},  // pier
        {1.00, 0.55, 0.00},  // buoy
        {0.90, 0.10, 0.60},  // sailor
        {0.10, 0.90, 0.20},  // ship
        {0.95, 0.95, 0.10},  // boat
        {0.60, 0.10, 0.90},  // vessel
        {0.00, 0.85, 0.95},  // kayak
        {0.05, 0.20, 0.60},  // waterline
    }};
    return palette[class_index % palette.size()];
  }

  Image inpaint(const InpaintRequest& request) const override {
    request.config.validate();
    const auto& src = request.image;
    if (request.mask.height != src.height || request.mask.width != src.width) {
      throw std::invalid_argument("inpaint: mask and image dimensions differ");
    }
    const std::size_t cls = request.mask.class_index.value_or(0);
    const auto base = base_color(cls);
    const double amplitude = noise_strength / request.config.guidance_scale;
    Image out = src;
    for (std::size_t p = 0; p < src.pixels(); ++p) {
      if (!request.mask.bits[p]) continue;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double n = hash_unit(request.config.seed, (static_cast<std::uint64_t>(cls) << 32) | ch, p);
        out.rgb[p * 3 + ch] = std::clamp(base[ch] + amplitude * n, 0.0, 1.0);
      }
    }
    return out;
  }
};

/// Class index -> text prompt.
using PromptTable = std::map<std::size_t, std::string>;

inline PromptTable default_prompt_table(const std::vector<std::string>& legend = default_legend()) {
  PromptTable t;
  for (std::size_t c = 0; c < legend.size(); ++c) t[c] = "a " + legend[c] + " on the water, photo";
  return t;
}

class MissingPrompt : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Descending area, then class index, then first set pixel. Stable.
inline std::vector<BinaryMask> mask_ordering(std::vector<BinaryMask> masks) {
  std::stable_sort(masks.begin(), masks.end(), [](const BinaryMask& a, const BinaryMask& b) {
    const auto aa = a.area(), ab = b.area();
    if (aa != ab) return aa > ab;
    const auto ca = a.class_index.value_or(0), cb = b.class_index.value_or(0);
    if (ca != cb) return ca < cb;
    return a.first_pixel() < b.first_pixel();
  });
  return masks;
}

/// Folds the inpainter over the masks in order: I <- inpaint(I, M_i, P_i).
inline Image iterative_inpaint(const Image& image, std::span<const BinaryMask> masks, const PromptTable& prompts,
                               const Inpainter& inpainter, const InpaintConfig& config) {
  config.validate();
  for (const auto& m : masks) {
    if (m.height != image.height || m.width != image.width) {
      throw std::invalid_argument("iterative_inpaint: mask dimensions differ from the image");
    }
    if (!m.class_index) throw std::invalid_argument("iterative_inpaint: mask without class");
    if (prompts.find(*m.class_index) == prompts.end()) {
      throw MissingPrompt("iterative_inpaint: no prompt for class " + std::to_string(*m.class_index));
    }
  }
  Image current = image;
  for (const auto& m : masks) {
    InpaintRequest req{current, m, prompts.at(*m.class_index), config};
    Image next = inpainter.inpaint(req);
    if (!next.same_size(image)) throw std::runtime_error("iterative_inpaint: inpainter changed the image size");
    current = std::move(next);
  }
  return current;
}

}  // namespace crseg::inpaint
