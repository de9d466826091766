#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "crseg/image.hpp"
#include "crseg/inpaint.hpp"
#include "crseg/mask_ops.hpp"
#include "crseg/radar.hpp"

// Deterministic synthetic water scenes: sky above a waterline, water below,
// flat-shaded objects resting on the water, radar returns on the objects
// (with mislocation and dropout) plus clutter on the water surface, and
// image-only adverse-weather corruptions.

namespace crseg::synth {

struct SceneConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  double waterline_fraction = 0.45;
  double sensor_noise = 0.02;
  std::uint64_t seed = 0;

  void validate() const {
    if (height == 0 || width == 0 || height % 16 != 0 || width % 16 != 0) {
      throw std::invalid_argument("scene size must be a positive multiple of 16");
    }
    if (min_objects > max_objects) throw std::invalid_argument("min_objects exceeds max_objects");
    if (!(waterline_fraction > 0.1 && waterline_fraction < 0.9)) {
      throw std::invalid_argument("waterline_fraction must lie in (0.1, 0.9)");
    }
    if (!(sensor_noise >= 0)) throw std::invalid_argument("sensor_noise must be non-negative");
  }
};

struct RadarNoiseConfig {
  double clutter_rate = 4.0;        // Poisson mean of spurious water returns per frame
  double mislocation_sigma = 0.15;  // metres, applied to x and y, truncated at 3 sigma
  double dropout_prob = 0.05;       // chance an object returns no points
  std::size_t min_points_per_object = 3;
  std::size_t max_points_per_object = 8;

  void validate() const {
    if (!(clutter_rate >= 0 && mislocation_sigma >= 0)) throw std::invalid_argument("radar noise must be non-negative");
    if (!(dropout_prob >= 0 && dropout_prob <= 1)) throw std::invalid_argument("dropout_prob must lie in [0, 1]");
    if (min_points_per_object > max_points_per_object) {
      throw std::invalid_argument("min_points_per_object exceeds max_points_per_object");
    }
  }
};

enum class CorruptionMode { none, fog, droplets, blur, strong_light };

inline const char* to_string(CorruptionMode m) {
  switch (m) {
    case CorruptionMode::none: return "none";
    case CorruptionMode::fog: return "fog";
    case CorruptionMode::droplets: return "droplets";
    case CorruptionMode::blur: return "blur";
    case CorruptionMode::strong_light: return "strong_light";
  }
  return "none";
}

inline CorruptionMode parse_corruption(const std::string& s) {
  for (auto m : {CorruptionMode::none, CorruptionMode::fog, CorruptionMode::droplets, CorruptionMode::blur,
                 CorruptionMode::strong_light})
    if (s == to_string(m)) return m;
  throw std::invalid_argument("unknown corruption mode '" + s + "'");
}

struct CorruptionConfig {
  CorruptionMode mode = CorruptionMode::none;
  double severity = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(severity >= 0 && severity <= 1)) throw std::invalid_argument("corruption severity must lie in [0, 1]");
  }

  friend bool operator==(const CorruptionConfig&, const CorruptionConfig&) = default;
};

struct Scene {
  std::string id;
  Image image;
  radar::RadarFrame radar;
  masks::MaskStack gt;
  radar::CameraModel camera;
  CorruptionConfig corruption;
  std::vector<bool> clutter;  // per radar point: true for water-surface clutter
};

// --- appearance -------------------------------------------------------------

struct ClassAppearance {
  std::array<double, 3> color;
  std::array<double, 2> width_px;   // at 64 px image width
  std::array<double, 2> height_px;
  int shape;                        // 0 rectangle, 1 ellipse, 2 hull (trapezoid)
  double rcs_mean, doppler_mean;
};

inline const ClassAppearance& appearance(std::size_t cls) {
  static const std::array<ClassAppearance, kNumClasses> table{{
      {{0.70, 0.76, 0.84}, {0, 0}, {0, 0}, 0, 0, 0},                    // background
      {{0.45, 0.34, 0.22}, {16, 26}, {4, 7}, 0, 14.0, 0.0},           // pier
      {{0.92, 0.45, 0.12}, {4, 7}, {5, 8}, 1, 2.0, 0.3},              // buoy
      {{0.86, 0.20, 0.18}, {3, 5}, {7, 11}, 0, -6.0, 0.8},            // sailor
      {{0.86, 0.86, 0.84}, {14, 22}, {8, 12}, 2, 24.0, 3.0},          // ship
      {{0.82, 0.84, 0.87}, {9, 14}, {6, 9}, 2, 11.0, 5.5},            // boat
      {{0.79, 0.79, 0.75}, {12, 18}, {7, 11}, 2, 18.0, 1.5},          // vessel
      {{0.95, 0.78, 0.12}, {8, 13}, {3, 5}, 1, -2.0, 2.0},            // kayak
      {{0.12, 0.30, 0.45}, {0, 0}, {0, 0}, 0, -10.0, 0.0},            // waterline
  }};
  return table[cls];
}

inline constexpr double kCameraHeight = 3.0;  // metres above the water

// --- corruption -----------------------------------------------------------

struct Disc {
  double cx, cy, r;
};

/// Droplet discs for a corruption config; severity 0 yields none.
inline std::vector<Disc> droplet_discs(const CorruptionConfig& cfg, std::size_t height, std::size_t width) {
  std::vector<Disc> discs;
  const auto count = static_cast<std::size_t>(std::lround(cfg.severity * 10.0));
  std::mt19937_64 rng(inpaint::splitmix64(cfg.seed ^ 0xD50F));
  std::uniform_real_distribution<double> ux(0.0, static_cast<double>(width));
  std::uniform_real_distribution<double> uy(0.0, static_cast<double>(height));
  std::uniform_real_distribution<double> ur(2.0, 6.0);
  const double s = static_cast<double>(width) / 64.0;
  for (std::size_t i = 0; i < count; ++i) {
    Disc d;
    d.cx = ux(rng);
    d.cy = uy(rng);
    d.r = ur(rng) * s;
    discs.push_back(d);
  }
  return discs;
}

/// Pixels whose centre lies inside any disc.
inline std::vector<std::uint8_t> disc_union(const std::vector<Disc>& discs, std::size_t height, std::size_t width) {
  std::vector<std::uint8_t> mask(height * width, 0);
  for (const auto& d : discs) {
    const auto y0 = static_cast<long>(std::floor(d.cy - d.r)), y1 = static_cast<long>(std::ceil(d.cy + d.r));
    const auto x0 = static_cast<long>(std::floor(d.cx - d.r)), x1 = static_cast<long>(std::ceil(d.cx + d.r));
    for (long y = std::max(0L, y0); y <= std::min<long>(y1, static_cast<long>(height) - 1); ++y)
      for (long x = std::max(0L, x0); x <= std::min<long>(x1, static_cast<long>(width) - 1); ++x) {
        const double dx = x + 0.5 - d.cx, dy = y + 0.5 - d.cy;
        if (dx * dx + dy * dy <= d.r * d.r) mask[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)] = 1;
      }
  }
  return mask;
}

namespace detail {

inline Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 1e-9) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double ks = 0;
  for (int i = -radius; i <= radius; ++i) ks += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= ks;
  const long H = static_cast<long>(img.height), W = static_cast<long>(img.width);
  Image tmp = img, out = img;
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double s = 0;
        for (int i = -radius; i <= radius; ++i) s += k[i + radius] * img.at(y, std::clamp(x + i, 0L, W - 1), c);
        tmp.at(y, x, c) = s;
      }
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double s = 0;
        for (int i = -radius; i <= radius; ++i) s += k[i + radius] * tmp.at(std::clamp(y + i, 0L, H - 1), x, c);
        out.at(y, x, c) = s;
      }
  return out;
}

inline Image box_blur(const Image& img, int radius) {
  const long H = static_cast<long>(img.height), W = static_cast<long>(img.width);
  Image out = img;
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double s = 0;
        int n = 0;
        for (long dy = -radius; dy <= radius; ++dy)
          for (long dx = -radius; dx <= radius; ++dx) {
            s += img.at(std::clamp(y + dy, 0L, H - 1), std::clamp(x + dx, 0L, W - 1), c);
            ++n;
          }
        out.at(y, x, c) = s / n;
      }
  return out;
}

}  // namespace detail

inline constexpr double kFogGray = 0.7;

/**
 * Image-only degradation, deterministic per config. Severity 0 is the
 * identity for every mode.
 *   fog:          blend toward uniform gray by `severity`
 *   droplets:     seeded discs replaced by a blurred, brightened copy
 *   blur:         separable Gaussian, sigma = 2.5 * severity (pixels at 64 px width)
 *   strong_light: additive radial glare that saturates highlights
 */
inline Image corrupt(const Image& image, const CorruptionConfig& cfg) {
  cfg.validate();
  if (cfg.mode == CorruptionMode::none || cfg.severity == 0.0) return image;
  const double s = cfg.severity;
  switch (cfg.mode) {
    case CorruptionMode::fog: {
      Image out = image;
      for (auto& v : out.rgb) v = (1.0 - s) * v + s * kFogGray;
      return out;
    }
    case CorruptionMode::droplets: {
      const auto mask = disc_union(droplet_discs(cfg, image.height, image.width), image.height, image.width);
      const Image blurred = detail::box_blur(image, std::max(1, static_cast<int>(std::lround(2.0 * image.width / 64.0))));
      Image out = image;
      for (std::size_t p = 0; p < image.pixels(); ++p) {
        if (!mask[p]) continue;
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = 0.75 * blurred.rgb[p * 3 + c] + 0.2;
          out.rgb[p * 3 + c] = std::clamp(v, 0.0, 1.0);
        }
      }
      return out;
    }
    case CorruptionMode::blur:
      return detail::gaussian_blur(image, 2.5 * s * static_cast<double>(image.width) / 64.0);
    case CorruptionMode::strong_light: {
      std::mt19937_64 rng(inpaint::splitmix64(cfg.seed ^ 0x11947));
      std::uniform_real_distribution<double> ux(0.0, static_cast<double>(image.width));
      std::uniform_real_distribution<double> uy(0.0, 0.5 * static_cast<double>(image.height));
      const double lx = ux(rng), ly = uy(rng);
      const double spread = 0.35 * static_cast<double>(image.width);
      Image out = image;
      for (std::size_t y = 0; y < image.height; ++y)
        for (std::size_t x = 0; x < image.width; ++x) {
          const double dx = x + 0.5 - lx, dy = y + 0.5 - ly;
          const double glare = s * (0.15 + 1.2 * std::exp(-(dx * dx + dy * dy) / (2 * spread * spread)));
          for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = std::min(1.0, image.at(y, x, c) + glare);
        }
      return out;
    }
    case CorruptionMode::none: break;
  }
  return image;
}

// --- scene generation -----------------------------------------------------

namespace detail {

inline bool inside_shape(int shape, double px, double py, double left, double top, double w, double h) {
  const double fx = (px - left) / w, fy = (py - top) / h;  // normalised in [0, 1)
  if (fx < 0 || fx >= 1 || fy < 0 || fy >= 1) return false;
  switch (shape) {
    case 1: {
      const double ex = 2 * fx - 1, ey = 2 * fy - 1;
      return ex * ex + ey * ey <= 1.0;
    }
    case 2: {
      // Superstructure on the upper half (centred, 50% wide), hull tapering toward the bottom.
      if (fy < 0.5) return fx >= 0.3 && fx < 0.8;
      const double inset = 0.25 * (fy - 0.5) / 0.5;
      return fx >= inset && fx < 1.0 - inset;
    }
    default: return true;
  }
}

inline double truncated_normal(std::mt19937_64& rng, double sigma) {
  if (sigma <= 0) return 0.0;
  std::normal_distribution<double> n(0.0, sigma);
  return std::clamp(n(rng), -3.0 * sigma, 3.0 * sigma);
}

}  // namespace detail

inline std::size_t waterline_row(const SceneConfig& cfg) {
  return static_cast<std::size_t>(std::lround(cfg.waterline_fraction * static_cast<double>(cfg.height)));
}

/// Renders one scene. The same configs always produce the same scene.
inline Scene generate_scene(const SceneConfig& scfg, const RadarNoiseConfig& rcfg, const CorruptionConfig& ccfg) {
  scfg.validate();
  rcfg.validate();
  ccfg.validate();
  const std::size_t H = scfg.height, W = scfg.width;
  const double scale = static_cast<double>(W) / 64.0;
  std::mt19937_64 rng(inpaint::splitmix64(scfg.seed));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Scene scene;
  scene.camera = radar::CameraModel::for_image(H, W);
  scene.corruption = ccfg;
  const std::size_t wl = waterline_row(scfg);
  std::vector<std::size_t> labels(H * W);
  Image img(H, W);

  const double phase = unit(rng) * 6.283185307179586;
  const double sky_tint = unit(rng) * 0.06 - 0.03;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      if (y < wl) {
        labels[y * W + x] = kBackgroundClass;
        const double t = static_cast<double>(y) / static_cast<double>(wl);
        img.set_pixel(y, x, {0.62 + 0.18 * t + sky_tint, 0.70 + 0.14 * t + sky_tint, 0.80 + 0.08 * t});
        if (y + 2 >= wl) img.set_pixel(y, x, {0.33, 0.38, 0.31});  // far shore strip
      } else {
        labels[y * W + x] = kWaterClass;
        const double ripple = 0.05 * std::sin(0.9 * static_cast<double>(x) / scale + phase +
                                              2.3 * std::sqrt(static_cast<double>(y - wl + 1)));
        img.set_pixel(y, x, {0.12 + ripple, 0.30 + ripple, 0.45 + 0.5 * ripple});
      }
    }

  struct Placed {
    std::size_t cls;
    double left, top, w, h, z;
    std::array<double, 3> color;
  };
  std::vector<Placed> objects;
  std::uniform_int_distribution<std::size_t> count_dist(scfg.min_objects, scfg.max_objects);
  std::uniform_int_distribution<std::size_t> class_dist(1, kNumClasses - 2);
  const std::size_t n_objects = count_dist(rng);
  for (std::size_t i = 0; i < n_objects; ++i) {
    Placed o;
    o.cls = class_dist(rng);
    const auto& app = appearance(o.cls);
    o.w = (app.width_px[0] + unit(rng) * (app.width_px[1] - app.width_px[0])) * scale;
    o.h = (app.height_px[0] + unit(rng) * (app.height_px[1] - app.height_px[0])) * scale;
    const double bottom = static_cast<double>(wl) + 2.0 + unit(rng) * (static_cast<double>(H - wl) - 3.0);
    o.top = bottom - o.h;
    o.left = unit(rng) * (static_cast<double>(W) - o.w);
    o.z = kCameraHeight * scene.camera.fy / (bottom - static_cast<double>(wl));
    const double jitter = unit(rng) * 0.08 - 0.04;
    for (std::size_t c = 0; c < 3; ++c) o.color[c] = app.color[c] + jitter;
    objects.push_back(o);
  }
  // Far objects first so nearer ones occlude them.
  std::stable_sort(objects.begin(), objects.end(), [](const Placed& a, const Placed& b) { return a.z > b.z; });

  std::vector<int> owner(H * W, -1);
  for (std::size_t k = 0; k < objects.size(); ++k) {
    const auto& o = objects[k];
    const int shape = appearance(o.cls).shape;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        if (!detail::inside_shape(shape, x + 0.5, y + 0.5, o.left, o.top, o.w, o.h)) continue;
        const double shade = 0.92 + 0.16 * ((y + 0.5 - o.top) / o.h);
        img.set_pixel(y, x, {o.color[0] * shade, o.color[1] * shade, o.color[2] * shade});
        labels[y * W + x] = o.cls;
        owner[y * W + x] = static_cast<int>(k);
      }
  }

  if (scfg.sensor_noise > 0) {
    std::normal_distribution<double> noise(0.0, scfg.sensor_noise);
    for (auto& v : img.rgb) v += noise(rng);
  }
  for (auto& v : img.rgb) v = std::clamp(v, 0.0, 1.0);

  scene.gt = masks::MaskStack::from_labels(labels, H, W);

  // Radar returns on visible object surfaces.
  std::vector<std::size_t> point_labels;
  std::normal_distribution<double> rcs_noise(0.0, 2.0), doppler_noise(0.0, 0.3);
  for (std::size_t k = 0; k < objects.size(); ++k) {
    const auto& o = objects[k];
    std::vector<std::size_t> visible;
    for (std::size_t p = 0; p < H * W; ++p)
      if (owner[p] == static_cast<int>(k)) visible.push_back(p);
    const bool dropped = unit(rng) < rcfg.dropout_prob;
    if (visible.empty() || dropped) continue;
    std::uniform_int_distribution<std::size_t> npts(rcfg.min_points_per_object, rcfg.max_points_per_object);
    std::uniform_int_distribution<std::size_t> pick(0, visible.size() - 1);
    const std::size_t n = npts(rng);
    const auto& app = appearance(o.cls);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t p = visible[pick(rng)];
      const double u = static_cast<double>(p % W) + unit(rng);
      const double v = static_cast<double>(p / W) + unit(rng);
      auto xy = radar::back_project(u, v, o.z, scene.camera);
      radar::RadarPoint rp;
      rp.x = xy[0] + detail::truncated_normal(rng, rcfg.mislocation_sigma);
      rp.y = xy[1] + detail::truncated_normal(rng, rcfg.mislocation_sigma);
      rp.z = o.z;
      rp.rcs = app.rcs_mean + rcs_noise(rng);
      rp.doppler = app.doppler_mean + doppler_noise(rng);
      scene.radar.points.push_back(rp);
      point_labels.push_back(o.cls);
      scene.clutter.push_back(false);
    }
  }

  // Clutter on open water.
  std::vector<std::size_t> water;
  for (std::size_t p = wl * W; p < H * W; ++p)
    if (owner[p] < 0) water.push_back(p);
  if (!water.empty() && rcfg.clutter_rate > 0) {
    std::poisson_distribution<std::size_t> clutter_count(rcfg.clutter_rate);
    const std::size_t n = clutter_count(rng);
    std::uniform_int_distribution<std::size_t> pick(0, water.size() - 1);
    std::uniform_real_distribution<double> rcs(-15.0, 5.0);
    std::normal_distribution<double> dop(0.0, 0.4);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t p = water[pick(rng)];
      const double u = static_cast<double>(p % W) + unit(rng);
      const double v = static_cast<double>(p / W) + unit(rng);
      const double z = kCameraHeight * scene.camera.fy / std::max(v - static_cast<double>(wl), 0.25);
      auto xy = radar::back_project(u, v, z, scene.camera);
      scene.radar.points.push_back({xy[0], xy[1], z, rcs(rng), dop(rng)});
      point_labels.push_back(kWaterClass);
      scene.clutter.push_back(true);
    }
  }
  scene.radar.labels = std::move(point_labels);
  scene.image = corrupt(img, ccfg);
  return scene;
}

}  // namespace crseg::synth
