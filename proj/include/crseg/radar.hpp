#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "crseg/dims.hpp"
#include "crseg/numerics/ops.hpp"
#include "crseg/numerics/params.hpp"

namespace crseg::radar {

using numerics::ParameterSet;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

inline constexpr std::size_t kPointFeatures = 5;

/// One radar return in the camera-aligned frame (x right, y down, z forward).
struct RadarPoint {
  double x = 0, y = 0, z = 0;
  double rcs = 0;      // dBsm
  double doppler = 0;  // m/s

  bool finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(z) && std::isfinite(rcs) && std::isfinite(doppler);
  }
  friend bool operator==(const RadarPoint&, const RadarPoint&) = default;
};

struct RadarFrame {
  std::string frame_id;
  std::vector<RadarPoint> points;
  std::optional<std::vector<std::size_t>> labels;

  std::size_t size() const { return points.size(); }

  void validate(std::size_t num_classes = kNumClasses) const {
    for (const auto& p : points) {
      if (!p.finite()) throw std::invalid_argument("radar frame '" + frame_id + "' has a non-finite point");
    }
    if (labels) {
      if (labels->size() != points.size()) {
        throw std::invalid_argument("radar frame '" + frame_id + "': label count differs from point count");
      }
      for (auto l : *labels) {
        if (l >= num_classes) throw std::invalid_argument("radar frame '" + frame_id + "': label out of range");
      }
    }
  }

  friend bool operator==(const RadarFrame&, const RadarFrame&) = default;
};

/// Fixed-size point matrix; padded rows are zero and flagged invalid.
struct SampledPoints {
  Tensor matrix;                                         // target_count x 5
  std::vector<bool> valid;                               // target_count
  std::vector<std::optional<std::size_t>> source_index;  // row -> index in the frame

  std::size_t rows() const { return valid.size(); }

  std::vector<std::size_t> valid_rows() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < valid.size(); ++i)
      if (valid[i]) out.push_back(i);
    return out;
  }

  Tensor validity_column() const {
    Tensor t = Tensor::matrix(valid.size(), 1);
    for (std::size_t i = 0; i < valid.size(); ++i) t[i] = valid[i] ? 1.0 : 0.0;
    return t;
  }
};

/**
 * Brings a frame to exactly `target_count` rows.
 *
 * Larger frames are subsampled uniformly without replacement (the kept rows
 * stay in source order); smaller frames keep every point in order followed by
 * zero rows.
 */
inline SampledPoints sample_or_pad(const RadarFrame& frame, std::size_t target_count, std::uint64_t seed) {
  if (target_count == 0) throw std::invalid_argument("sample_or_pad: target_count must be positive");
  std::vector<std::size_t> chosen;
  const std::size_t n = frame.points.size();
  if (n > target_count) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < target_count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    chosen.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(target_count));
    std::sort(chosen.begin(), chosen.end());
  } else {
    chosen.resize(n);
    std::iota(chosen.begin(), chosen.end(), std::size_t{0});
  }

  SampledPoints out;
  out.matrix = Tensor::matrix(target_count, kPointFeatures);
  out.valid.assign(target_count, false);
  out.source_index.assign(target_count, std::nullopt);
  for (std::size_t r = 0; r < chosen.size(); ++r) {
    const auto& p = frame.points[chosen[r]];
    const std::array<double, kPointFeatures> f{p.x, p.y, p.z, p.rcs, p.doppler};
    for (std::size_t k = 0; k < kPointFeatures; ++k) out.matrix(r, k) = f[k];
    out.valid[r] = true;
    out.source_index[r] = chosen[r];
  }
  return out;
}

/// Pinhole intrinsics in pixels.
struct CameraModel {
  double fx = 64, fy = 64;
  double cx = 32, cy = 32;
  std::size_t width = 64, height = 64;

  void validate() const {
    if (!(fx > 0 && fy > 0)) throw std::invalid_argument("camera focal lengths must be positive");
    if (!(cx >= 0 && cx < static_cast<double>(width) && cy >= 0 && cy < static_cast<double>(height))) {
      throw std::invalid_argument("camera principal point lies outside the image");
    }
  }

  /// Default camera for a synthetic image: square pixels, fx = width.
  static CameraModel for_image(std::size_t height, std::size_t width) {
    return CameraModel{static_cast<double>(width), static_cast<double>(width), width / 2.0, height / 2.0, width,
                       height};
  }
};

struct Projection {
  double u = 0, v = 0;
  bool in_view = false;
};

inline constexpr double kDefaultZMin = 0.1;

/// u = cx + fx x/z, v = cy + fy y/z; in view iff z > z_min and (u, v) falls on the image.
inline Projection project_point(const RadarPoint& p, const CameraModel& cam, double z_min = kDefaultZMin) {
  if (!(p.z > z_min)) return {};
  Projection pr;
  pr.u = cam.cx + cam.fx * p.x / p.z;
  pr.v = cam.cy + cam.fy * p.y / p.z;
  pr.in_view = pr.u >= 0 && pr.v >= 0 && pr.u < static_cast<double>(cam.width) &&
               pr.v < static_cast<double>(cam.height);
  return pr;
}

inline std::vector<Projection> project_points(const RadarFrame& frame, const CameraModel& cam,
                                              double z_min = kDefaultZMin) {
  cam.validate();
  std::vector<Projection> out;
  out.reserve(frame.points.size());
  for (const auto& p : frame.points) out.push_back(project_point(p, cam, z_min));
  return out;
}

/// Inverse of project_point for a known depth.
inline std::array<double, 2> back_project(double u, double v, double z, const CameraModel& cam) {
  return {(u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy};
}

// --- point encoder --------------------------------------------------------

/// Fixed per-feature scaling applied before the shared MLP (x, y, z, rcs, doppler).
inline constexpr std::array<double, kPointFeatures> kFeatureScale{1.0 / 20, 1.0 / 5, 1.0 / 50, 1.0 / 20, 1.0 / 5};

/// Encoder input for one point. Lateral and vertical offsets enter as x/z
/// and y/z, which are proportional to the image-plane offset from the
/// principal point; the remaining features are scaled by kFeatureScale.
inline std::array<double, kPointFeatures> point_encoder_input(const Tensor& m, std::size_t row) {
  const double z = m(row, 2);
  const double inv = z > 1e-6 ? 1.0 / z : 0.0;
  return {m(row, 0) * inv, m(row, 1) * inv, z * kFeatureScale[2], m(row, 3) * kFeatureScale[3],
          m(row, 4) * kFeatureScale[4]};
}

inline void init_point_encoder(ParameterSet& params, const ModelDims& dims, std::mt19937_64& rng,
                               const std::string& prefix = "pts") {
  std::size_t in = kPointFeatures;
  for (std::size_t i = 0; i < kLevels; ++i) {
    const std::string p = prefix + ".l" + std::to_string(i + 1);
    params.add(p + ".w", numerics::xavier_uniform(in, dims.channels[i], rng));
    params.add(p + ".b", Tensor::matrix(1, dims.channels[i]));
    in = dims.channels[i];
  }
}

inline void init_point_classifier(ParameterSet& params, const ModelDims& dims, std::mt19937_64& rng,
                                  const std::string& prefix = "cls") {
  params.add(prefix + ".w1", numerics::xavier_uniform(dims.channel_sum(), dims.classifier_hidden, rng));
  params.add(prefix + ".b1", Tensor::matrix(1, dims.classifier_hidden));
  params.add(prefix + ".w2", numerics::xavier_uniform(dims.classifier_hidden, dims.num_classes, rng));
  params.add(prefix + ".b2", Tensor::matrix(1, dims.num_classes));
}

/// Per-level radar features, each target_count x C_i; invalid rows are zero.
using RadarFeatures = std::array<Var, kLevels>;

/**
 * Shared per-point MLP (PointNet-style, no pooling). Level i output is the
 * i-th hidden layer, so its width matches image level i. Padded rows are
 * zero at every level: the MLP runs on the valid rows only and the result
 * is scattered back into the full target_count layout.
 */
inline RadarFeatures encode_points(Tape& tape, const SampledPoints& sampled, ParameterSet& params,
                                   const std::string& prefix = "pts") {
  const auto rows = sampled.valid_rows();
  Tensor scaled = Tensor::matrix(rows.size(), kPointFeatures);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto f = point_encoder_input(sampled.matrix, rows[r]);
    for (std::size_t k = 0; k < kPointFeatures; ++k) scaled(r, k) = f[k];
  }
  Var h = tape.constant(std::move(scaled));
  RadarFeatures out;
  for (std::size_t i = 0; i < kLevels; ++i) {
    const std::string p = prefix + ".l" + std::to_string(i + 1);
    h = numerics::relu(numerics::add_row(numerics::matmul(h, tape.watch(params[p + ".w"])), tape.watch(params[p + ".b"])));
    out[i] = numerics::scatter_rows(h, rows, sampled.rows());
  }
  return out;
}

/// Per-point class probabilities (target_count x C). Invalid rows get zero
/// logits, hence a uniform distribution.
inline Var classify_points(Tape& tape, const RadarFeatures& features, const SampledPoints& sampled,
                           ParameterSet& params, const std::string& prefix = "cls") {
  const auto rows = sampled.valid_rows();
  std::vector<Var> parts;
  for (const auto& f : features) parts.push_back(numerics::take_rows(f, rows));
  const Var x = numerics::concat_cols(parts);
  const Var h = numerics::relu(numerics::add_row(numerics::matmul(x, tape.watch(params[prefix + ".w1"])),
                                                 tape.watch(params[prefix + ".b1"])));
  const Var logits = numerics::add_row(numerics::matmul(h, tape.watch(params[prefix + ".w2"])),
                                       tape.watch(params[prefix + ".b2"]));
  return numerics::softmax_rows(numerics::scatter_rows(logits, rows, sampled.rows()));
}

}  // namespace crseg::radar
