#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "crseg/numerics/ops.hpp"
#include "crseg/numerics/params.hpp"

namespace testsupport {

using crseg::numerics::ParameterSet;
using crseg::numerics::Tape;
using crseg::numerics::Tensor;
using crseg::numerics::Var;

inline Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t = Tensor::matrix(r, c);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

// Freshly initialised biases are exactly zero, which puts every dead input
// pixel exactly on a ReLU kink.
inline void jitter(ParameterSet& params, std::uint64_t seed, double scale = 0.05) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_real_distribution<double> d(-scale, scale);
  for (auto& [name, t] : params)
    for (auto& v : t.data()) v += d(rng);
}

// Whole-model objectives sum thousands of outputs; at h = 1e-5 their
// difference quotients carry rounding noise near 1e-9, so smaller gradient
// coordinates are compared absolutely.
inline constexpr double kModelGradientFloor = 1e-5;

struct GradCheck {
  double max_rel_error = 0;
  std::string worst;
  std::size_t kinks = 0;  // probes redrawn because a ReLU kink lay within the step
};

/**
 * Compares analytic gradients of a scalar function of the parameters with
 * central differences. The relative error of one coordinate is
 * |a - n| / max(|a| + |n|, floor); `floor` keeps exact zeros from dividing
 * by nothing. Only `probes` randomly chosen coordinates per tensor are
 * differenced.
 *
 * Central differences at h and h/2 agree to O(h^2) where the function is
 * smooth and disagree at first order when a kink lies inside the step. Such
 * a probe says nothing about the backward pass, so it is counted in `kinks`
 * and another coordinate is drawn in its place.
 */
inline GradCheck check_gradients(ParameterSet& params, const std::function<Var(Tape&)>& f, std::uint64_t seed,
                                 std::size_t probes = 6, double h = 1e-5, double floor = 1e-6) {
  params.zero_grad();
  {
    Tape tape;
    const Var loss = f(tape);
    tape.backward(loss);
  }
  auto eval = [&]() {
    Tape tape;
    return f(tape).value().item();
  };
  std::mt19937_64 rng(seed);
  GradCheck out;
  for (auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto central = [&](std::size_t i, double step) {
      const double orig = t.data()[i];
      t.data()[i] = orig + step;
      const double up = eval();
      t.data()[i] = orig - step;
      const double down = eval();
      t.data()[i] = orig;
      return (up - down) / (2 * step);
    };
    std::uniform_int_distribution<std::size_t> pick(0, t.size() - 1);
    const std::size_t wanted = std::min(probes, t.size());
    for (std::size_t k = 0, attempts = 0; k < wanted && attempts < 4 * wanted; ++attempts) {
      const std::size_t i = pick(rng);
      const double numeric = central(i, h);
      const double half = central(i, h / 2);
      if (std::abs(numeric - half) > 1e-5 * std::max(std::abs(numeric), std::abs(half)) + 1e-9) {
        ++out.kinks;
        continue;
      }
      ++k;
      const double rel = std::abs(analytic[i] - numeric) / std::max(std::abs(analytic[i]) + std::abs(numeric), floor);
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic[i]) + " numeric " +
                    std::to_string(numeric);
      }
    }
  }
  return out;
}

}  // namespace testsupport
