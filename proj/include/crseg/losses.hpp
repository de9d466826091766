#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "crseg/mask_ops.hpp"
#include "crseg/numerics/ops.hpp"

namespace crseg::losses {

using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

struct ClassWeights {
  std::vector<double> alpha;
  double gamma = 2.0;

  static ClassWeights uniform(std::size_t classes, double gamma = 2.0) { return {std::vector<double>(classes, 1.0), gamma}; }

  void validate() const {
    if (!(gamma >= 0)) throw std::invalid_argument("focal gamma must be non-negative");
    for (double a : alpha)
      if (!(std::isfinite(a) && a > 0)) throw std::invalid_argument("focal alpha must be finite and positive");
  }
};

/// Counters for numerical safeguards applied inside a loss.
struct LossEvents {
  std::size_t probability_clamps = 0;
};

inline constexpr double kProbabilityFloor = 1e-12;

/**
 * Focal loss, averaged over valid rows:
 *   -alpha_t (1 - p_t)^gamma log(p_t),
 * where p_t is the probability of row r's target class. Probabilities
 * below 1e-12 are clamped before the log and counted in `events`.
 */
inline Var focal_loss(Var probs, std::span<const std::size_t> targets, const ClassWeights& weights,
                      const std::vector<bool>& valid, LossEvents* events = nullptr) {
  weights.validate();
  Tape& tape = *probs.tape;
  const std::size_t n = probs.rows(), classes = probs.cols();
  if (targets.size() != n || valid.size() != n) throw numerics::ShapeError("focal_loss: target/valid length mismatch");
  if (weights.alpha.size() != classes) throw numerics::ShapeError("focal_loss: alpha length differs from class count");
  std::vector<std::size_t> rows, cls;
  for (std::size_t r = 0; r < n; ++r) {
    if (!valid[r]) continue;
    if (targets[r] >= classes) throw std::invalid_argument("focal_loss: target class out of range");
    rows.push_back(r);
    cls.push_back(targets[r]);
  }
  if (rows.empty()) return tape.constant(Tensor::scalar(0.0));
  Tensor alpha = Tensor::matrix(rows.size(), 1);
  for (std::size_t k = 0; k < rows.size(); ++k) alpha[k] = weights.alpha[cls[k]];

  Var p = numerics::pick_cols(numerics::take_rows(probs, rows), cls);
  if (events) {
    for (double v : p.value().data())
      if (v < kProbabilityFloor) ++events->probability_clamps;
  }
  p = numerics::clamp_min(p, kProbabilityFloor);
  const Var modulator = numerics::pow_scalar(numerics::add_scalar(numerics::scale(p, -1.0), 1.0), weights.gamma);
  const Var term = numerics::mul(numerics::mul(modulator, numerics::log(p)), tape.constant(std::move(alpha)));
  return numerics::scale(numerics::mean(term), -1.0);
}

/**
 * Inverse-frequency class weights normalised to mean one:
 *   alpha_c proportional to total / (C * max(count_c, 1)).
 */
inline std::vector<double> alpha_from_frequencies(std::span<const std::uint64_t> counts) {
  if (counts.empty()) throw std::invalid_argument("alpha_from_frequencies: no classes");
  double total = 0;
  for (auto c : counts) total += static_cast<double>(c);
  if (total <= 0) throw std::invalid_argument("alpha_from_frequencies: all class counts are zero");
  const auto classes = static_cast<double>(counts.size());
  std::vector<double> alpha(counts.size());
  double sum = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    alpha[c] = total / (classes * static_cast<double>(std::max<std::uint64_t>(counts[c], 1)));
    sum += alpha[c];
  }
  for (auto& a : alpha) a *= classes / sum;
  return alpha;
}

inline constexpr double kDiceEpsilon = 1e-6;

/**
 * Soft dice loss averaged over channels:
 *   1 - (2 sum p g + eps) / (sum p + sum g + eps).
 * pred and gt are pixel-row matrices (H*W x C).
 */
inline Var dice_loss(Var pred, const Tensor& gt, double eps = kDiceEpsilon) {
  Tape& tape = *pred.tape;
  if (pred.shape() != gt.shape()) {
    throw numerics::ShapeError("dice_loss: prediction " + numerics::to_string(pred.shape()) + " vs ground truth " +
                               numerics::to_string(gt.shape()));
  }
  const Var g = tape.constant(gt);
  const Var inter = numerics::sum_rows(numerics::mul(pred, g));
  const Var denom = numerics::add_scalar(numerics::add(numerics::sum_rows(pred), numerics::sum_rows(g)), eps);
  const Var ratio = numerics::div(numerics::add_scalar(numerics::scale(inter, 2.0), eps), denom);
  return numerics::add_scalar(numerics::scale(numerics::mean(ratio), -1.0), 1.0);
}

/// Mean over rows of -sum_c g_c log(max(p_c, 1e-12)) for pixel-row matrices.
inline Var pixel_cross_entropy(Var pred, const Tensor& gt) {
  Tape& tape = *pred.tape;
  if (pred.shape() != gt.shape()) {
    throw numerics::ShapeError("pixel_cross_entropy: prediction " + numerics::to_string(pred.shape()) +
                               " vs ground truth " + numerics::to_string(gt.shape()));
  }
  const Var logp = numerics::log(numerics::clamp_min(pred, kProbabilityFloor));
  const double n = static_cast<double>(std::max<std::size_t>(pred.rows(), 1));
  return numerics::scale(numerics::sum(numerics::mul(logp, tape.constant(gt))), -1.0 / n);
}

// --- evaluation -------------------------------------------------------------

enum class ClassSubset { all, targets, drivable };

inline std::vector<std::size_t> subset_classes(ClassSubset subset, std::size_t num_classes = kNumClasses) {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const bool keep = subset == ClassSubset::all || (subset == ClassSubset::targets && is_object_class(c, num_classes)) ||
                      (subset == ClassSubset::drivable && c + 1 == num_classes);
    if (keep) out.push_back(c);
  }
  return out;
}

inline ClassSubset parse_subset(const std::string& s) {
  if (s == "all") return ClassSubset::all;
  if (s == "targets") return ClassSubset::targets;
  if (s == "drivable") return ClassSubset::drivable;
  throw std::invalid_argument("unknown class subset '" + s + "' (expected all, targets or drivable)");
}

struct IouReport {
  std::vector<std::optional<double>> per_class;  // nullopt: absent from both prediction and truth
  double mean = 0;
  std::size_t counted = 0;
};

/// Dataset-level intersection and union counts per class. merge() is
/// associative, so shards can be accumulated independently.
class IouAccumulator {
 public:
  explicit IouAccumulator(std::size_t classes = kNumClasses) : inter_(classes, 0), union_(classes, 0) {}

  void add_labels(std::span<const std::size_t> pred, std::span<const std::size_t> gt) {
    if (pred.size() != gt.size()) throw std::invalid_argument("IouAccumulator: label maps differ in size");
    for (std::size_t p = 0; p < pred.size(); ++p) {
      if (pred[p] >= classes() || gt[p] >= classes()) throw std::invalid_argument("IouAccumulator: class out of range");
      if (pred[p] == gt[p]) {
        ++inter_[pred[p]];
        ++union_[pred[p]];
      } else {
        ++union_[pred[p]];
        ++union_[gt[p]];
      }
    }
  }

  void add(const masks::MaskStack& pred, const masks::MaskStack& gt) {
    if (pred.height() != gt.height() || pred.width() != gt.width() || pred.channels() != gt.channels()) {
      throw std::invalid_argument("IouAccumulator: prediction and ground truth differ in shape");
    }
    const auto a = pred.argmax();
    const auto b = gt.argmax();
    add_labels(a, b);
  }

  void merge(const IouAccumulator& other) {
    if (other.classes() != classes()) throw std::invalid_argument("IouAccumulator: class count mismatch");
    for (std::size_t c = 0; c < classes(); ++c) {
      inter_[c] += other.inter_[c];
      union_[c] += other.union_[c];
    }
  }

  std::size_t classes() const { return inter_.size(); }
  std::uint64_t intersection(std::size_t c) const { return inter_[c]; }
  std::uint64_t union_count(std::size_t c) const { return union_[c]; }

  IouReport report(std::span<const std::size_t> subset) const {
    IouReport r;
    r.per_class.assign(classes(), std::nullopt);
    for (std::size_t c = 0; c < classes(); ++c)
      if (union_[c] > 0) r.per_class[c] = static_cast<double>(inter_[c]) / static_cast<double>(union_[c]);
    double sum = 0;
    for (auto c : subset) {
      if (c < classes() && r.per_class[c]) {
        sum += *r.per_class[c];
        ++r.counted;
      }
    }
    r.mean = r.counted ? sum / static_cast<double>(r.counted) : 0.0;
    return r;
  }

  IouReport report(ClassSubset subset = ClassSubset::all) const {
    const auto cls = subset_classes(subset, classes());
    return report(std::span<const std::size_t>(cls));
  }

 private:
  std::vector<std::uint64_t> inter_, union_;
};

/// Per-class IoU and the mean over `subset`, for a single prediction/truth pair.
inline IouReport miou(const masks::MaskStack& pred, const masks::MaskStack& gt, ClassSubset subset = ClassSubset::all) {
  IouAccumulator acc(pred.channels());
  acc.add(pred, gt);
  return acc.report(subset);
}

}  // namespace crseg::losses
