#pragma once

#include <array>
#include <cstddef>

#include "crseg/image.hpp"

namespace crseg {

inline constexpr std::size_t kLevels = 4;

/// Channel widths shared by the image pyramid, the point encoder and the decoder.
struct ModelDims {
  std::array<std::size_t, kLevels> channels{16, 32, 64, 128};
  std::size_t decoder_width = 32;
  std::size_t classifier_hidden = 64;
  std::size_t num_classes = kNumClasses;

  std::size_t channel_sum() const { return channels[0] + channels[1] + channels[2] + channels[3]; }
};

}  // namespace crseg
