#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "crseg/numerics/tensor.hpp"

namespace crseg {

inline constexpr std::size_t kNumClasses = 9;
inline constexpr std::size_t kBackgroundClass = 0;
inline constexpr std::size_t kWaterClass = kNumClasses - 1;

/// Channel legend: index 0 is background, the last index is the waterline.
inline std::vector<std::string> default_legend() {
  return {"background", "pier", "buoy", "sailor", "ship", "boat", "vessel", "kayak", "waterline"};
}

inline bool is_object_class(std::size_t c, std::size_t num_classes = kNumClasses) {
  return c != kBackgroundClass && c + 1 != num_classes && c < num_classes;
}

/// Interleaved RGB image with values in [0, 1], stored row-major.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> rgb;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), rgb(h * w * 3, fill) {}

  std::size_t pixels() const { return height * width; }
  double& at(std::size_t y, std::size_t x, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }

  std::array<double, 3> pixel(std::size_t y, std::size_t x) const {
    const double* p = rgb.data() + (y * width + x) * 3;
    return {p[0], p[1], p[2]};
  }

  void set_pixel(std::size_t y, std::size_t x, const std::array<double, 3>& v) {
    double* p = rgb.data() + (y * width + x) * 3;
    p[0] = v[0];
    p[1] = v[1];
    p[2] = v[2];
  }

  bool same_size(const Image& other) const { return height == other.height && width == other.width; }

  friend bool operator==(const Image&, const Image&) = default;

  /// Pixels as rows of a (H*W) x 3 matrix, row-major over (y, x).
  numerics::Tensor as_matrix() const { return numerics::Tensor({pixels(), std::size_t{3}}, rgb); }
};

}  // namespace crseg
