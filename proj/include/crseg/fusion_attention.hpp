#pragma once

#include <array>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "crseg/dims.hpp"
#include "crseg/image.hpp"
#include "crseg/numerics/ops.hpp"
#include "crseg/numerics/params.hpp"

// Stage-one image pathway: strided pyramid encoder, cross-attention fusion
// of radar features into each pyramid level, and the mask decoder.
//
// Feature maps are matrices with one row per pixel in row-major (y, x)
// order and one column per channel.

namespace crseg::fusion {

using numerics::ParameterSet;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

struct EncoderPyramid {
  std::array<Var, kLevels> features;
  std::array<std::size_t, kLevels> heights{};
  std::array<std::size_t, kLevels> widths{};
};

/// RGB plus two normalised pixel-coordinate channels.
inline constexpr std::size_t kEncoderInputChannels = 5;

/// Pixel rows of (r - 0.5, g - 0.5, b - 0.5, u, v) where u = (x + 0.5 - W/2) / W and
/// v = (y + 0.5 - H/2) / H.
inline Tensor encoder_input(const Image& image) {
  Tensor t = Tensor::matrix(image.height * image.width, kEncoderInputChannels);
  const double w = static_cast<double>(image.width), h = static_cast<double>(image.height);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x) {
      const std::size_t p = y * image.width + x;
      for (std::size_t c = 0; c < 3; ++c) t(p, c) = image.rgb[p * 3 + c] - 0.5;
      t(p, 3) = (x + 0.5 - w / 2) / w;
      t(p, 4) = (y + 0.5 - h / 2) / h;
    }
  return t;
}

inline void init_image_encoder(ParameterSet& params, const ModelDims& dims, std::mt19937_64& rng,
                               const std::string& prefix = "img") {
  std::size_t in = kEncoderInputChannels;
  for (std::size_t i = 0; i < kLevels; ++i) {
    const std::string p = prefix + ".l" + std::to_string(i + 1);
    params.add(p + ".w", numerics::xavier_uniform(4 * in, dims.channels[i], rng));
    params.add(p + ".b", Tensor::matrix(1, dims.channels[i]));
    in = dims.channels[i];
  }
}

inline void init_cross_attention(ParameterSet& params, const ModelDims& dims, std::mt19937_64& rng,
                                 const std::string& prefix = "caf") {
  for (std::size_t i = 0; i < kLevels; ++i) {
    const std::string p = prefix + ".l" + std::to_string(i + 1);
    const std::size_t c = dims.channels[i];
    params.add(p + ".wq", numerics::xavier_uniform(c, c, rng));
    params.add(p + ".wk", numerics::xavier_uniform(c, c, rng));
    params.add(p + ".wv", numerics::xavier_uniform(c, c, rng));
  }
}

inline void init_decoder(ParameterSet& params, const ModelDims& dims, std::mt19937_64& rng,
                         const std::string& prefix = "dec") {
  for (std::size_t i = 0; i < kLevels; ++i) {
    const std::string p = prefix + ".l" + std::to_string(i + 1);
    params.add(p + ".w", numerics::xavier_uniform(dims.channels[i], dims.decoder_width, rng));
    params.add(p + ".b", Tensor::matrix(1, dims.decoder_width));
  }
  params.add(prefix + ".fuse.w", numerics::xavier_uniform(kLevels * dims.decoder_width, dims.decoder_width, rng));
  params.add(prefix + ".fuse.b", Tensor::matrix(1, dims.decoder_width));
  params.add(prefix + ".cls.w", numerics::xavier_uniform(dims.decoder_width, dims.num_classes, rng));
  params.add(prefix + ".cls.b", Tensor::matrix(1, dims.num_classes));
}

/// Four-level pyramid over encoder_input: each level folds 2x2 blocks into channels, then a
/// pointwise projection with ReLU. A 64x64 input yields 32, 16, 8 and 4.
inline EncoderPyramid encode_image(Tape& tape, const Image& image, ParameterSet& params,
                                   const std::string& prefix = "img") {
  if (image.height == 0 || image.width == 0 || image.height % 16 != 0 || image.width % 16 != 0) {
    throw std::invalid_argument("encode_image: image " + std::to_string(image.height) + "x" +
                                std::to_string(image.width) + " is not divisible by 16");
  }
  EncoderPyramid pyr;
  Var x = tape.constant(encoder_input(image));
  std::size_t h = image.height, w = image.width;
  for (std::size_t i = 0; i < kLevels; ++i) {
    const std::string p = prefix + ".l" + std::to_string(i + 1);
    x = numerics::space_to_depth(x, h, w);
    h /= 2;
    w /= 2;
    x = numerics::relu(numerics::add_row(numerics::matmul(x, tape.watch(params[p + ".w"])), tape.watch(params[p + ".b"])));
    pyr.features[i] = x;
    pyr.heights[i] = h;
    pyr.widths[i] = w;
  }
  return pyr;
}

/**
 * F = Q + softmax(Q K^T / sqrt(C)) V with Q = F_img W_Q, K = F_radar W_K,
 * V = F_radar W_V.
 *
 * Only the listed radar rows take part; padded rows never enter K or V.
 * With no radar rows the attention term is zero and F = Q.
 */
inline Var cross_attention_fuse(Tape& tape, Var image_features, Var radar_features,
                                const std::vector<std::size_t>& radar_rows, ParameterSet& params, std::size_t level,
                                const std::string& prefix = "caf") {
  const std::string p = prefix + ".l" + std::to_string(level + 1);
  const std::size_t c = image_features.cols();
  if (radar_features.cols() != c) {
    throw numerics::ShapeError("cross_attention_fuse: image width " + std::to_string(c) + " differs from radar width " +
                               std::to_string(radar_features.cols()));
  }
  const Var q = numerics::matmul(image_features, tape.watch(params[p + ".wq"]));
  if (radar_rows.empty()) return q;
  const Var r = numerics::take_rows(radar_features, radar_rows);
  const Var k = numerics::matmul(r, tape.watch(params[p + ".wk"]));
  const Var v = numerics::matmul(r, tape.watch(params[p + ".wv"]));
  const Var scores = numerics::scale(numerics::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(c)));
  const Var attn = numerics::softmax_rows(scores);
  return numerics::add(q, numerics::matmul(attn, v));
}

/**
 * Projects each level to the decoder width, resizes to level-1 resolution,
 * concatenates, fuses with a ReLU layer, classifies per pixel, applies a
 * channel softmax and resizes the probabilities to out_h x out_w.
 */
inline Var decode_masks(Tape& tape, const std::array<Var, kLevels>& levels, const EncoderPyramid& geometry,
                        ParameterSet& params, std::size_t out_h, std::size_t out_w, const std::string& prefix = "dec") {
  const std::size_t h1 = geometry.heights[0], w1 = geometry.widths[0];
  std::vector<Var> parts;
  for (std::size_t i = 0; i < kLevels; ++i) {
    const std::string p = prefix + ".l" + std::to_string(i + 1);
    Var proj = numerics::add_row(numerics::matmul(levels[i], tape.watch(params[p + ".w"])), tape.watch(params[p + ".b"]));
    if (i > 0) proj = numerics::upsample_bilinear(proj, geometry.heights[i], geometry.widths[i], h1, w1);
    parts.push_back(proj);
  }
  const Var cat = numerics::concat_cols(parts);
  const Var fused = numerics::relu(numerics::add_row(numerics::matmul(cat, tape.watch(params[prefix + ".fuse.w"])),
                                                     tape.watch(params[prefix + ".fuse.b"])));
  const Var logits = numerics::add_row(numerics::matmul(fused, tape.watch(params[prefix + ".cls.w"])),
                                       tape.watch(params[prefix + ".cls.b"]));
  const Var probs = numerics::softmax_rows(logits);
  if (out_h == h1 && out_w == w1) return probs;
  return numerics::upsample_bilinear(probs, h1, w1, out_h, out_w);
}

}  // namespace crseg::fusion
