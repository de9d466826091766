#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "crseg/image.hpp"
#include "crseg/numerics/tensor.hpp"

namespace crseg::masks {

/// Per-class soft masks, C x H x W, values in [0, 1].
class MaskStack {
 public:
  MaskStack() = default;

  MaskStack(std::size_t height, std::size_t width, std::vector<std::string> legend = default_legend())
      : channels_(legend.size()), height_(height), width_(width), values_(channels_ * height * width, 0.0),
        legend_(std::move(legend)) {}

  MaskStack(std::size_t height, std::size_t width, std::vector<std::string> legend, std::vector<double> values)
      : channels_(legend.size()), height_(height), width_(width), values_(std::move(values)), legend_(std::move(legend)) {
    if (values_.size() != channels_ * height_ * width_) throw std::invalid_argument("MaskStack: value count mismatch");
    validate();
  }

  /// From decoder output: one row per pixel (row-major), one column per class.
  static MaskStack from_pixel_rows(const numerics::Tensor& probs, std::size_t height, std::size_t width,
                                   std::vector<std::string> legend = default_legend()) {
    if (probs.rows() != height * width || probs.cols() != legend.size()) {
      throw std::invalid_argument("MaskStack::from_pixel_rows: shape " + numerics::to_string(probs.shape()) +
                                  " does not match " + std::to_string(height) + "x" + std::to_string(width) + "x" +
                                  std::to_string(legend.size()));
    }
    MaskStack m(height, width, std::move(legend));
    for (std::size_t p = 0; p < height * width; ++p)
      for (std::size_t c = 0; c < m.channels_; ++c) m.values_[c * height * width + p] = std::clamp(probs(p, c), 0.0, 1.0);
    return m;
  }

  /// One-hot stack from a per-pixel class map.
  static MaskStack from_labels(std::span<const std::size_t> labels, std::size_t height, std::size_t width,
                               std::vector<std::string> legend = default_legend()) {
    MaskStack m(height, width, std::move(legend));
    for (std::size_t p = 0; p < labels.size(); ++p) m.values_[labels[p] * height * width + p] = 1.0;
    return m;
  }

  std::size_t channels() const { return channels_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t plane_size() const { return height_ * width_; }
  const std::vector<std::string>& legend() const { return legend_; }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  double& at(std::size_t c, std::size_t y, std::size_t x) { return values_[(c * height_ + y) * width_ + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return values_[(c * height_ + y) * width_ + x]; }

  std::span<double> channel(std::size_t c) { return {values_.data() + c * plane_size(), plane_size()}; }
  std::span<const double> channel(std::size_t c) const { return {values_.data() + c * plane_size(), plane_size()}; }

  bool same_layout(const MaskStack& o) const {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_ && legend_ == o.legend_;
  }

  void validate() const {
    for (double v : values_) {
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("MaskStack value outside [0, 1]");
    }
  }

  /// Per-pixel argmax, lowest index on ties.
  std::vector<std::size_t> argmax() const {
    std::vector<std::size_t> out(plane_size(), 0);
    for (std::size_t p = 0; p < plane_size(); ++p) {
      double best = values_[p];
      for (std::size_t c = 1; c < channels_; ++c) {
        const double v = values_[c * plane_size() + p];
        if (v > best) {
          best = v;
          out[p] = c;
        }
      }
    }
    return out;
  }

  /// Pixel-row layout (H*W x C), the transpose of the stored planes.
  numerics::Tensor to_pixel_rows() const {
    numerics::Tensor t = numerics::Tensor::matrix(plane_size(), channels_);
    for (std::size_t c = 0; c < channels_; ++c)
      for (std::size_t p = 0; p < plane_size(); ++p) t(p, c) = values_[c * plane_size() + p];
    return t;
  }

  friend bool operator==(const MaskStack&, const MaskStack&) = default;

 private:
  std::size_t channels_ = 0, height_ = 0, width_ = 0;
  std::vector<double> values_;
  std::vector<std::string> legend_;
};

/// Strictly binary H x W mask, optionally labelled with a class.
struct BinaryMask {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> bits;
  std::optional<std::size_t> class_index;
  std::vector<std::size_t> provenance;  // prompt indices that produced the mask

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}

  std::uint8_t at(std::size_t y, std::size_t x) const { return bits[y * width + x]; }
  void set(std::size_t y, std::size_t x, bool on = true) { bits[y * width + x] = on ? 1 : 0; }

  std::size_t area() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1})); }
  bool empty() const { return area() == 0; }

  /// Index of the first set pixel in row-major order, or size() when empty.
  std::size_t first_pixel() const {
    auto it = std::find(bits.begin(), bits.end(), std::uint8_t{1});
    return static_cast<std::size_t>(it - bits.begin());
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

/// Raised when no prompt point lies inside a mask; the caller drops the mask.
class UnclassifiableMask : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kNoiseThreshold = 0.5;

/// M_noise = clamp01(bin(background) + bin(water)) with bin(v) = v >= threshold.
inline std::vector<double> extract_noise_mask(const MaskStack& init, double threshold = kNoiseThreshold) {
  if (init.channels() < 2) throw std::invalid_argument("extract_noise_mask: need background and water channels");
  const auto bg = init.channel(0);
  const auto water = init.channel(init.channels() - 1);
  std::vector<double> noise(init.plane_size());
  for (std::size_t p = 0; p < noise.size(); ++p) {
    const double sum = (bg[p] >= threshold ? 1.0 : 0.0) + (water[p] >= threshold ? 1.0 : 0.0);
    noise[p] = std::min(sum, 1.0);
  }
  return noise;
}

/**
 * Noise reduction of prompted masks against the stage-one prediction.
 *
 * Per object channel c: M_nr[c] = clamp01(relu(M_sam[c] - M_noise) + M_init[c]).
 * The background and water channels are copied from M_init.
 */
inline MaskStack noise_reduce(const MaskStack& sam, const MaskStack& init, double threshold = kNoiseThreshold) {
  if (!sam.same_layout(init)) throw std::invalid_argument("noise_reduce: mask stacks differ in shape or legend");
  const auto noise = extract_noise_mask(init, threshold);
  MaskStack out = init;
  const std::size_t last = init.channels() - 1;
  for (std::size_t c = 1; c < last; ++c) {
    const auto s = sam.channel(c);
    const auto m = init.channel(c);
    auto o = out.channel(c);
    for (std::size_t p = 0; p < o.size(); ++p) {
      const double denoised = std::max(s[p] - noise[p], 0.0);
      o[p] = std::clamp(denoised + m[p], 0.0, 1.0);
    }
  }
  return out;
}

/// A prompt location paired with the classifier output for its radar point.
struct LabelledPrompt {
  std::size_t x = 0, y = 0;
  std::vector<double> probs;
};

/**
 * Labels a binary mask with the argmax of the mean class distribution over
 * the prompts that fall inside it. Background is never a candidate and ties
 * go to the lowest index.
 */
inline BinaryMask assign_class(BinaryMask mask, std::span<const LabelledPrompt> prompts) {
  std::vector<double> mean;
  std::size_t inside = 0;
  for (const auto& p : prompts) {
    if (p.y >= mask.height || p.x >= mask.width || !mask.at(p.y, p.x)) continue;
    if (mean.empty()) mean.assign(p.probs.size(), 0.0);
    if (p.probs.size() != mean.size()) throw std::invalid_argument("assign_class: inconsistent class counts");
    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += p.probs[c];
    ++inside;
  }
  if (inside == 0) throw UnclassifiableMask("assign_class: no prompt point inside the mask");
  if (mean.size() < 2) throw std::invalid_argument("assign_class: need at least two classes");
  for (auto& v : mean) v /= static_cast<double>(inside);
  std::size_t best = 1;
  for (std::size_t c = 2; c < mean.size(); ++c)
    if (mean[c] > mean[best]) best = c;
  mask.class_index = best;
  return mask;
}

/// Channel c is the elementwise max of every mask labelled c.
inline MaskStack rasterize(std::span<const BinaryMask> binaries, std::size_t height, std::size_t width,
                           const std::vector<std::string>& legend = default_legend()) {
  MaskStack out(height, width, legend);
  for (const auto& b : binaries) {
    if (b.height != height || b.width != width) throw std::invalid_argument("rasterize: mask dimensions differ");
    if (!b.class_index || *b.class_index >= legend.size()) {
      throw std::invalid_argument("rasterize: mask class missing or outside the legend");
    }
    auto ch = out.channel(*b.class_index);
    for (std::size_t p = 0; p < ch.size(); ++p)
      if (b.bits[p]) ch[p] = 1.0;
  }
  return out;
}

/// Binary mask of one channel, thresholded at `threshold`.
inline BinaryMask binarize_channel(const MaskStack& stack, std::size_t c, double threshold = 0.5) {
  BinaryMask m(stack.height(), stack.width());
  const auto ch = stack.channel(c);
  for (std::size_t p = 0; p < ch.size(); ++p) m.bits[p] = ch[p] >= threshold ? 1 : 0;
  m.class_index = c;
  return m;
}

}  // namespace crseg::masks
