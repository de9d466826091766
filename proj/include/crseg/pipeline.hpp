#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "crseg/corpus.hpp"
#include "crseg/dims.hpp"
#include "crseg/fusion_attention.hpp"
#include "crseg/inpaint.hpp"
#include "crseg/io/formats.hpp"
#include "crseg/losses.hpp"
#include "crseg/mask_ops.hpp"
#include "crseg/numerics/optim.hpp"
#include "crseg/prompt_masker.hpp"
#include "crseg/radar.hpp"

namespace crseg::pipeline {

using masks::MaskStack;
using numerics::ParameterSet;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

/// Training aborted because a loss, gradient or parameter became non-finite.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t step, const std::string& what)
      : std::runtime_error("diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 4;
  double lr_initial = 5e-4;
  double lr_final = 1e-6;
  double weight_decay = 0.01;
  double lambda_seg = 1.0;
  double lambda_cls = 1.0;
  double seg_ce_weight = 1.0;  // weight of the pixel cross-entropy term inside L_seg; 0 gives pure dice
  std::uint64_t seed = 0;
  bool eval_each_epoch = true;

  void validate() const {
    if (epochs == 0 || batch_size == 0) throw std::invalid_argument("epochs and batch_size must be positive");
    if (!(lr_initial > 0 && lr_final > 0)) throw std::invalid_argument("learning rates must be positive");
    if (lr_initial < lr_final) throw std::invalid_argument("initial learning rate is below the final one");
    if (!(weight_decay >= 0 && lambda_seg >= 0 && lambda_cls >= 0 && seg_ce_weight >= 0)) {
      throw std::invalid_argument("weight_decay and loss weights must be non-negative");
    }
  }
};

struct LogRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double l_seg = 0;
  double l_cls = 0;
  double lr = 0;
  std::optional<double> val_miou;
};

inline std::string to_jsonl(const std::vector<LogRecord>& log) {
  std::string out;
  for (const auto& r : log) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["step"] = r.step;
    j["L_seg"] = r.l_seg;
    j["L_cls"] = r.l_cls;
    j["lr"] = r.lr;
    j["val_mIoU"] = r.val_miou ? nlohmann::ordered_json(*r.val_miou) : nlohmann::ordered_json(nullptr);
    out += j.dump() + "\n";
  }
  return out;
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Results must be
/// written to per-index slots so the outcome is independent of scheduling.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::uint64_t hash_string(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

// --- stage 1 ----------------------------------------------------------------

struct Stage1Options {
  ModelDims dims;
  bool use_radar = true;
  std::size_t sample_count = 1000;
};

struct Stage1Model {
  Stage1Options options;
  ParameterSet params;
};

inline Stage1Model init_stage1(const Stage1Options& options, std::uint64_t seed) {
  if (options.sample_count == 0) throw std::invalid_argument("sample_count must be positive");
  Stage1Model m{options, {}};
  std::mt19937_64 rng(inpaint::splitmix64(seed ^ 0x51A6E1ULL));
  fusion::init_image_encoder(m.params, options.dims, rng, "img");
  radar::init_point_encoder(m.params, options.dims, rng, "pts");
  fusion::init_cross_attention(m.params, options.dims, rng, "caf");
  fusion::init_decoder(m.params, options.dims, rng, "dec");
  radar::init_point_classifier(m.params, options.dims, rng, "cls");
  return m;
}

struct Stage1Output {
  Var masks;        // H*W x C
  Var point_probs;  // sample_count x C
  radar::SampledPoints sampled;
};

/// Sampling seed of a frame: fixed per (frame id, run seed).
inline std::uint64_t frame_seed(const std::string& frame_id, std::uint64_t seed) {
  return inpaint::splitmix64(hash_string(frame_id) ^ seed);
}

inline Stage1Output stage1_forward(Tape& tape, const Image& image, const radar::RadarFrame& frame, Stage1Model& model,
                                   std::uint64_t sample_seed) {
  static const radar::RadarFrame no_radar{};
  const auto& used = model.options.use_radar ? frame : no_radar;
  Stage1Output out;
  out.sampled = radar::sample_or_pad(used, model.options.sample_count, frame_seed(frame.frame_id, sample_seed));
  const auto pyramid = fusion::encode_image(tape, image, model.params, "img");
  const auto features = radar::encode_points(tape, out.sampled, model.params, "pts");
  const auto rows = out.sampled.valid_rows();
  std::array<Var, kLevels> fused;
  for (std::size_t i = 0; i < kLevels; ++i)
    fused[i] = fusion::cross_attention_fuse(tape, pyramid.features[i], features[i], rows, model.params, i, "caf");
  out.masks = fusion::decode_masks(tape, fused, pyramid, model.params, image.height, image.width, "dec");
  out.point_probs = radar::classify_points(tape, features, out.sampled, model.params, "cls");
  return out;
}

struct Stage1Prediction {
  MaskStack m_init;
  Tensor point_probs;
  radar::SampledPoints sampled;
};

inline Stage1Prediction predict_stage1(const synth::Scene& scene, Stage1Model& model, std::uint64_t sample_seed) {
  Tape tape;
  auto out = stage1_forward(tape, scene.image, scene.radar, model, sample_seed);
  return {MaskStack::from_pixel_rows(out.masks.value(), scene.image.height, scene.image.width),
          out.point_probs.value(), std::move(out.sampled)};
}

/// Per-point class targets of the sampled rows (invalid rows map to 0 and are masked).
inline std::vector<std::size_t> sampled_targets(const radar::SampledPoints& s, const radar::RadarFrame& frame) {
  std::vector<std::size_t> t(s.rows(), 0);
  if (!frame.labels) return t;
  for (std::size_t r = 0; r < s.rows(); ++r)
    if (s.source_index[r]) t[r] = (*frame.labels)[*s.source_index[r]];
  return t;
}

/// Focal weights from radar label frequencies of the given scenes. Background
/// never labels a radar return, so it keeps weight 1 and the remaining
/// classes are inverse-frequency weighted.
inline losses::ClassWeights radar_class_weights(const std::vector<const synth::Scene*>& scenes,
                                                std::size_t classes = kNumClasses) {
  std::vector<std::uint64_t> counts(classes - 1, 0);
  for (const auto* s : scenes)
    if (s->radar.labels)
      for (auto l : *s->radar.labels)
        if (l >= 1 && l < classes) ++counts[l - 1];
  std::uint64_t total = 0;
  for (auto c : counts) total += c;
  if (total == 0) return losses::ClassWeights::uniform(classes);
  const auto tail = losses::alpha_from_frequencies(counts);
  losses::ClassWeights w = losses::ClassWeights::uniform(classes);
  std::copy(tail.begin(), tail.end(), w.alpha.begin() + 1);
  return w;
}

/**
 * Training segmentation loss: dice over the classes present in the ground
 * truth plus ce_weight times the pixel cross-entropy.
 *
 * Dice alone on a softmax output stalls from scratch: object probabilities
 * saturate near zero while background and water are fitted, and the dice
 * gradient through the saturated softmax vanishes. Absent classes are left
 * out of the dice average because with a small epsilon they score a perfect
 * dice once driven to zero everywhere, which rewards the same collapse.
 */
inline Var segmentation_loss(Var pred, const MaskStack& gt, double ce_weight = 0.0) {
  std::vector<std::size_t> present;
  for (std::size_t c = 0; c < gt.channels(); ++c) {
    const auto ch = gt.channel(c);
    if (std::any_of(ch.begin(), ch.end(), [](double v) { return v > 0; })) present.push_back(c);
  }
  const Tensor rows = gt.to_pixel_rows();
  Tensor sel = Tensor::matrix(rows.rows(), present.size());
  for (std::size_t r = 0; r < rows.rows(); ++r)
    for (std::size_t k = 0; k < present.size(); ++k) sel(r, k) = rows(r, present[k]);
  const Var dice = losses::dice_loss(numerics::take_cols(pred, present), sel);
  if (ce_weight == 0.0) return dice;
  return numerics::add(dice, numerics::scale(losses::pixel_cross_entropy(pred, rows), ce_weight));
}

// --- evaluation ---------------------------------------------------------------

using Predictor = std::function<MaskStack(std::size_t scene_index)>;

/// Accumulates dataset-level IoU over `indices`, predicting scenes in parallel.
inline losses::IouAccumulator evaluate(const corpus::Corpus& c, const std::vector<std::size_t>& indices,
                                       const Predictor& predict, std::size_t workers = 1) {
  std::vector<losses::IouAccumulator> parts(indices.size());
  parallel_for(indices.size(), workers, [&](std::size_t k) {
    losses::IouAccumulator acc;
    acc.add(predict(indices[k]), c.scenes[indices[k]].gt);
    parts[k] = std::move(acc);
  });
  losses::IouAccumulator total;
  for (const auto& p : parts) total.merge(p);
  return total;
}

// --- generic training loop ----------------------------------------------------

struct StepLosses {
  Var total;
  double l_seg = 0;
  double l_cls = 0;
};

using SceneLoss = std::function<StepLosses(Tape&, std::size_t scene_index)>;

/**
 * Mini-batch AdamW over the train indices with the linear schedule. Scene
 * order is reshuffled every epoch from the config seed. Gradients of one
 * batch are averaged before the update.
 */
inline std::vector<LogRecord> train_loop(ParameterSet& params, const std::vector<std::size_t>& train,
                                         const TrainConfig& cfg, const SceneLoss& scene_loss,
                                         const std::function<double()>& validate_fn) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("training split is empty");
  const std::size_t batches = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  numerics::LinearSchedule schedule{cfg.lr_initial, cfg.lr_final, batches * cfg.epochs};
  numerics::AdamW opt({0.9, 0.999, 1e-8, cfg.weight_decay});
  std::mt19937_64 rng(inpaint::splitmix64(cfg.seed ^ 0x7A1B5EULL));
  std::vector<LogRecord> log;
  std::size_t step = 0;
  std::vector<std::size_t> order = train;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double seg_sum = 0, cls_sum = 0;
    double lr = schedule.at(step);
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(order.size(), lo + cfg.batch_size);
      params.zero_grad();
      lr = schedule.at(step);
      try {
        for (std::size_t k = lo; k < hi; ++k) {
          Tape tape;
          auto losses = scene_loss(tape, order[k]);
          if (!std::isfinite(losses.l_seg) || !std::isfinite(losses.l_cls)) {
            throw numerics::NumericalError("non-finite loss on scene " + std::to_string(order[k]));
          }
          seg_sum += losses.l_seg;
          cls_sum += losses.l_cls;
          tape.backward(numerics::scale(losses.total, 1.0 / static_cast<double>(hi - lo)));
        }
        for (const auto& [name, p] : params)
          if (p.has_grad())
            for (double g : p.grad())
              if (!std::isfinite(g)) throw numerics::NumericalError("non-finite gradient in '" + name + "'");
        opt.step(params, lr);
      } catch (const numerics::NumericalError& e) {
        throw DivergenceError(step, e.what());
      }
      ++step;
    }
    LogRecord rec;
    rec.epoch = epoch;
    rec.step = step;
    rec.l_seg = seg_sum / static_cast<double>(order.size());
    rec.l_cls = cls_sum / static_cast<double>(order.size());
    rec.lr = lr;
    if (validate_fn && (cfg.eval_each_epoch || epoch == cfg.epochs)) rec.val_miou = validate_fn();
    log.push_back(rec);
  }
  return log;
}

struct Stage1Training {
  Stage1Model model;
  std::vector<LogRecord> log;
};

inline Stage1Training train_stage1(const corpus::Corpus& c, const Stage1Options& options, const TrainConfig& cfg,
                                   std::size_t workers = 1) {
  const auto train = c.indices(corpus::Split::train);
  const auto val = c.indices(corpus::Split::val);
  if (train.empty()) throw std::invalid_argument("train_stage1: corpus has no training scenes");
  Stage1Training out{init_stage1(options, cfg.seed), {}};
  std::vector<const synth::Scene*> train_scenes;
  for (auto i : train) train_scenes.push_back(&c.scenes[i]);
  const auto weights = radar_class_weights(train_scenes, options.dims.num_classes);
  auto& model = out.model;

  SceneLoss loss = [&](Tape& tape, std::size_t i) {
    const auto& s = c.scenes[i];
    auto fwd = stage1_forward(tape, s.image, s.radar, model, cfg.seed);
    StepLosses r;
    Var total = tape.constant(Tensor::scalar(0.0));
    if (cfg.lambda_seg > 0) {
      const Var seg = segmentation_loss(fwd.masks, s.gt, cfg.seg_ce_weight);
      r.l_seg = seg.value().item();
      total = numerics::add(total, numerics::scale(seg, cfg.lambda_seg));
    }
    if (cfg.lambda_cls > 0 && model.options.use_radar) {
      const auto targets = sampled_targets(fwd.sampled, s.radar);
      const Var cls = losses::focal_loss(fwd.point_probs, targets, weights, fwd.sampled.valid);
      r.l_cls = cls.value().item();
      total = numerics::add(total, numerics::scale(cls, cfg.lambda_cls));
    }
    r.total = total;
    return r;
  };
  std::function<double()> validate;
  if (!val.empty()) {
    validate = [&] {
      return evaluate(c, val, [&](std::size_t i) { return predict_stage1(c.scenes[i], model, cfg.seed).m_init; },
                      workers)
          .report()
          .mean;
    };
  }
  out.log = train_loop(model.params, train, cfg, loss, validate);
  return out;
}

// --- stage 2 ----------------------------------------------------------------

struct Stage2Result {
  MaskStack m_init;
  MaskStack m_sam;
  MaskStack m_nr;
  std::vector<prompting::SkippedPrompt> skipped;
  std::size_t unclassified = 0;  // masks with no prompt inside, dropped
  std::optional<std::string> warning;
};

/// Stage-2 pass on a stage-1 prediction: one prompt per sampled radar point.
inline Stage2Result stage2_from_prediction(const synth::Scene& scene, const Stage1Prediction& pred,
                                           const prompting::PromptMasker& masker) {
  Stage2Result out;
  out.m_init = pred.m_init;
  const std::size_t H = scene.image.height, W = scene.image.width;
  const auto rows = pred.sampled.valid_rows();
  std::vector<prompting::PixelPrompt> prompts;
  std::vector<masks::LabelledPrompt> labelled;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (auto r : rows) {
    const auto& p = scene.radar.points[*pred.sampled.source_index[r]];
    const auto proj = radar::project_point(p, scene.camera);
    prompts.push_back(proj.in_view ? prompting::PixelPrompt{proj.u, proj.v} : prompting::PixelPrompt{nan, nan});
    if (proj.in_view) {
      masks::LabelledPrompt lp;
      lp.x = static_cast<std::size_t>(proj.u);
      lp.y = static_cast<std::size_t>(proj.v);
      const std::size_t classes = pred.point_probs.cols();
      for (std::size_t c = 0; c < classes; ++c) lp.probs.push_back(pred.point_probs(r, c));
      labelled.push_back(std::move(lp));
    }
  }
  auto result = masker.masks_for_prompts(scene.image, prompts);
  out.skipped = std::move(result.skipped);
  std::vector<masks::BinaryMask> classified;
  for (auto& m : result.masks) {
    try {
      classified.push_back(masks::assign_class(std::move(m), labelled));
    } catch (const masks::UnclassifiableMask&) {
      ++out.unclassified;
    }
  }
  out.m_sam = masks::rasterize(classified, H, W, out.m_init.legend());
  if (!prompts.empty() && out.skipped.size() == prompts.size()) {
    out.warning = "all " + std::to_string(prompts.size()) + " prompts skipped; using the stage-1 masks";
    out.m_nr = out.m_init;
    for (auto& v : out.m_nr.values()) v = std::clamp(v, 0.0, 1.0);
    return out;
  }
  out.m_nr = masks::noise_reduce(out.m_sam, out.m_init);
  return out;
}

inline Stage2Result stage2_run(const synth::Scene& scene, Stage1Model& model, const prompting::PromptMasker& masker,
                               std::uint64_t sample_seed) {
  return stage2_from_prediction(scene, predict_stage1(scene, model, sample_seed), masker);
}

// --- stage 3 ----------------------------------------------------------------

enum class FusionVariant { addition, gated, concatenation, inpaint_only };

inline const char* to_string(FusionVariant v) {
  switch (v) {
    case FusionVariant::addition: return "addition";
    case FusionVariant::gated: return "gated";
    case FusionVariant::concatenation: return "concatenation";
    case FusionVariant::inpaint_only: return "inpaint_only";
  }
  return "concatenation";
}

inline FusionVariant parse_variant(const std::string& s) {
  for (auto v : {FusionVariant::addition, FusionVariant::gated, FusionVariant::concatenation,
                 FusionVariant::inpaint_only})
    if (s == to_string(v)) return v;
  throw std::invalid_argument("unknown fusion variant '" + s + "'");
}

struct Stage3Options {
  ModelDims dims;
  FusionVariant variant = FusionVariant::concatenation;
};

/// Encoder "enc_a" reads the original image, "enc_b" the inpainted one.
struct Stage3Model {
  Stage3Options options;
  ParameterSet params;
};

inline Stage3Model init_stage3(const Stage3Options& options, std::uint64_t seed) {
  Stage3Model m{options, {}};
  std::mt19937_64 rng(inpaint::splitmix64(seed ^ 0x53A9E3ULL));
  if (options.variant != FusionVariant::inpaint_only) fusion::init_image_encoder(m.params, options.dims, rng, "enc_a");
  fusion::init_image_encoder(m.params, options.dims, rng, "enc_b");
  for (std::size_t i = 0; i < kLevels; ++i) {
    const std::string p = "fus.l" + std::to_string(i + 1);
    const std::size_t c = options.dims.channels[i];
    if (options.variant == FusionVariant::gated) m.params.add(p + ".g", Tensor::matrix(1, c));
    if (options.variant == FusionVariant::concatenation) {
      m.params.add(p + ".w", numerics::xavier_uniform(2 * c, c, rng));
      m.params.add(p + ".b", Tensor::matrix(1, c));
    }
  }
  fusion::init_decoder(m.params, options.dims, rng, "dec");
  return m;
}

/// Per-level fusion of the two encoder outputs.
inline Var fuse_level(Tape& tape, Var a, Var b, Stage3Model& model, std::size_t level) {
  const std::string p = "fus.l" + std::to_string(level + 1);
  switch (model.options.variant) {
    case FusionVariant::addition: return numerics::add(a, b);
    case FusionVariant::gated: {
      const Var s = numerics::sigmoid(tape.watch(model.params[p + ".g"]));
      const Var rest = numerics::add_scalar(numerics::scale(s, -1.0), 1.0);
      return numerics::add(numerics::mul_row(a, s), numerics::mul_row(b, rest));
    }
    case FusionVariant::concatenation:
      return numerics::add_row(numerics::matmul(numerics::concat_cols(std::vector<Var>{a, b}), tape.watch(model.params[p + ".w"])),
                               tape.watch(model.params[p + ".b"]));
    case FusionVariant::inpaint_only: return b;
  }
  return a;
}

inline Var stage3_forward_images(Tape& tape, const Image& original, const Image& inpainted, Stage3Model& model) {
  if (!original.same_size(inpainted)) throw std::invalid_argument("stage3: original and inpainted sizes differ");
  const auto pb = fusion::encode_image(tape, inpainted, model.params, "enc_b");
  std::array<Var, kLevels> fused;
  if (model.options.variant == FusionVariant::inpaint_only) {
    fused = pb.features;
  } else {
    const auto pa = fusion::encode_image(tape, original, model.params, "enc_a");
    for (std::size_t i = 0; i < kLevels; ++i) fused[i] = fuse_level(tape, pa.features[i], pb.features[i], model, i);
  }
  return fusion::decode_masks(tape, fused, pb, model.params, original.height, original.width, "dec");
}

struct InpaintComponents {
  const inpaint::Inpainter* inpainter = nullptr;
  inpaint::PromptTable prompts = inpaint::default_prompt_table();
  inpaint::InpaintConfig config;
  double mask_threshold = 0.5;
};

/// One request per non-empty binarised object channel of M_nr, in mask order.
inline std::vector<masks::BinaryMask> inpaint_masks(const MaskStack& m_nr, double threshold) {
  std::vector<masks::BinaryMask> out;
  for (std::size_t c = 0; c < m_nr.channels(); ++c) {
    if (!is_object_class(c, m_nr.channels())) continue;
    auto m = masks::binarize_channel(m_nr, c, threshold);
    if (!m.empty()) out.push_back(std::move(m));
  }
  return inpaint::mask_ordering(std::move(out));
}

inline Image inpaint_scene(const Image& image, const MaskStack& m_nr, const InpaintComponents& comp) {
  if (!comp.inpainter) throw std::invalid_argument("inpaint_scene: no inpainter configured");
  const auto ms = inpaint_masks(m_nr, comp.mask_threshold);
  return inpaint::iterative_inpaint(image, ms, comp.prompts, *comp.inpainter, comp.config);
}

struct Stage3Result {
  Image inpainted;
  MaskStack masks;
};

inline Stage3Result stage3_forward(const synth::Scene& scene, const MaskStack& m_nr, const InpaintComponents& comp,
                                   Stage3Model& model) {
  Stage3Result r;
  r.inpainted = inpaint_scene(scene.image, m_nr, comp);
  Tape tape;
  const Var m = stage3_forward_images(tape, scene.image, r.inpainted, model);
  r.masks = MaskStack::from_pixel_rows(m.value(), scene.image.height, scene.image.width);
  return r;
}

/// Stage-1 and stage-2 outputs needed by stage 3, computed once per scene.
struct PreparedScenes {
  std::vector<std::optional<Image>> inpainted;  // indexed like the corpus
};

inline PreparedScenes prepare_stage3(const corpus::Corpus& c, const std::vector<std::size_t>& indices,
                                     Stage1Model& stage1, const prompting::PromptMasker& masker,
                                     const InpaintComponents& comp, std::uint64_t sample_seed,
                                     std::size_t workers = 1) {
  PreparedScenes p;
  p.inpainted.resize(c.scenes.size());
  std::vector<Image> results(indices.size());
  parallel_for(indices.size(), workers, [&](std::size_t k) {
    const auto& s = c.scenes[indices[k]];
    const auto s2 = stage2_run(s, stage1, masker, sample_seed);
    results[k] = inpaint_scene(s.image, s2.m_nr, comp);
  });
  for (std::size_t k = 0; k < indices.size(); ++k) p.inpainted[indices[k]] = std::move(results[k]);
  return p;
}

struct Stage3Training {
  Stage3Model model;
  std::vector<LogRecord> log;
};

/// Trains stage 3 against frozen stage-1 outputs captured in `prepared`.
inline Stage3Training train_stage3(const corpus::Corpus& c, const PreparedScenes& prepared,
                                   const Stage3Options& options, const TrainConfig& cfg, std::size_t workers = 1) {
  const auto train = c.indices(corpus::Split::train);
  const auto val = c.indices(corpus::Split::val);
  for (auto i : train)
    if (!prepared.inpainted[i]) throw std::invalid_argument("train_stage3: scene " + c.entries[i].id + " not prepared");
  Stage3Training out{init_stage3(options, cfg.seed), {}};
  auto& model = out.model;
  SceneLoss loss = [&](Tape& tape, std::size_t i) {
    const auto& s = c.scenes[i];
    const Var m = stage3_forward_images(tape, s.image, *prepared.inpainted[i], model);
    const Var seg = segmentation_loss(m, s.gt, cfg.seg_ce_weight);
    StepLosses r;
    r.l_seg = seg.value().item();
    r.total = numerics::scale(seg, cfg.lambda_seg);
    return r;
  };
  std::function<double()> validate;
  bool val_ready = !val.empty();
  for (auto i : val) val_ready = val_ready && prepared.inpainted[i].has_value();
  if (val_ready) {
    validate = [&] {
      return evaluate(c, val,
                      [&](std::size_t i) {
                        Tape tape;
                        const Var m = stage3_forward_images(tape, c.scenes[i].image, *prepared.inpainted[i], model);
                        return MaskStack::from_pixel_rows(m.value(), c.scenes[i].image.height,
                                                          c.scenes[i].image.width);
                      },
                      workers)
          .report()
          .mean;
    };
  }
  out.log = train_loop(model.params, train, cfg, loss, validate);
  return out;
}

// --- checkpoints --------------------------------------------------------------

inline io::Metadata dims_metadata(const ModelDims& d) {
  std::string ch;
  for (std::size_t i = 0; i < kLevels; ++i) ch += (i ? "," : "") + std::to_string(d.channels[i]);
  return {{"channels", ch},
          {"decoder_width", std::to_string(d.decoder_width)},
          {"classifier_hidden", std::to_string(d.classifier_hidden)},
          {"num_classes", std::to_string(d.num_classes)}};
}

inline ModelDims dims_from_checkpoint(const io::Checkpoint& ck) {
  ModelDims d;
  std::istringstream ch(ck.get("channels"));
  std::string tok;
  for (std::size_t i = 0; i < kLevels; ++i) {
    if (!std::getline(ch, tok, ',')) throw io::FormatError("checkpoint: malformed channels entry");
    d.channels[i] = std::stoul(tok);
  }
  d.decoder_width = std::stoul(ck.get("decoder_width"));
  d.classifier_hidden = std::stoul(ck.get("classifier_hidden"));
  d.num_classes = std::stoul(ck.get("num_classes"));
  return d;
}

/// Replaces every expected parameter with the checkpoint value; any missing,
/// extra or mis-shaped entry is an error.
inline void adopt_parameters(ParameterSet& expected, const ParameterSet& loaded) {
  if (expected.size() != loaded.size()) throw io::FormatError("checkpoint parameter count does not match the model");
  for (auto& [name, t] : expected) {
    if (!loaded.contains(name)) throw io::FormatError("checkpoint lacks parameter '" + name + "'");
    const auto& src = loaded[name];
    if (src.shape() != t.shape()) throw io::FormatError("checkpoint parameter '" + name + "' has the wrong shape");
    std::copy(src.data().begin(), src.data().end(), t.data().begin());
  }
}

inline void save_stage1(const std::filesystem::path& p, const Stage1Model& m, std::uint64_t seed) {
  auto meta = dims_metadata(m.options.dims);
  meta.insert(meta.begin(), {"stage", "1"});
  meta.emplace_back("use_radar", m.options.use_radar ? "1" : "0");
  meta.emplace_back("sample_count", std::to_string(m.options.sample_count));
  meta.emplace_back("seed", std::to_string(seed));
  io::save_checkpoint(p, m.params, meta);
}

inline std::pair<Stage1Model, std::uint64_t> load_stage1(const std::filesystem::path& p) {
  const auto ck = io::load_checkpoint(p);
  if (ck.get("stage") != "1") throw io::FormatError(p.string() + ": not a stage-1 checkpoint");
  Stage1Options o;
  o.dims = dims_from_checkpoint(ck);
  o.use_radar = ck.get("use_radar") == "1";
  o.sample_count = std::stoul(ck.get("sample_count"));
  auto m = init_stage1(o, 0);
  adopt_parameters(m.params, ck.params);
  return {std::move(m), std::stoull(ck.get("seed"))};
}

inline void save_stage3(const std::filesystem::path& p, const Stage3Model& m) {
  auto meta = dims_metadata(m.options.dims);
  meta.insert(meta.begin(), {"stage", "3"});
  meta.emplace_back("variant", to_string(m.options.variant));
  io::save_checkpoint(p, m.params, meta);
}

inline Stage3Model load_stage3(const std::filesystem::path& p) {
  const auto ck = io::load_checkpoint(p);
  if (ck.get("stage") != "3") throw io::FormatError(p.string() + ": not a stage-3 checkpoint");
  Stage3Options o;
  o.dims = dims_from_checkpoint(ck);
  o.variant = parse_variant(ck.get("variant"));
  auto m = init_stage3(o, 0);
  adopt_parameters(m.params, ck.params);
  return m;
}

// --- experiments and ablations --------------------------------------------------

struct ExperimentConfig {
  ModelDims dims;
  std::size_t sample_count = 1000;
  TrainConfig stage1;
  TrainConfig stage3;
  prompting::RegionGrowMasker masker;
  inpaint::InpaintConfig inpaint;
  std::size_t workers = 1;
};

enum class AblationKind { methods, sampling, fusion_variants, inpaint_fusion };

inline const char* to_string(AblationKind k) {
  switch (k) {
    case AblationKind::methods: return "methods";
    case AblationKind::sampling: return "sampling";
    case AblationKind::fusion_variants: return "fusion_variants";
    case AblationKind::inpaint_fusion: return "inpaint_fusion";
  }
  return "methods";
}

inline AblationKind parse_ablation(const std::string& s) {
  for (auto k : {AblationKind::methods, AblationKind::sampling, AblationKind::fusion_variants,
                 AblationKind::inpaint_fusion})
    if (s == to_string(k)) return k;
  throw std::invalid_argument("unknown ablation '" + s +
                              "' (expected methods, sampling, fusion_variants or inpaint_fusion)");
}

struct ArmResult {
  std::string arm;
  std::uint64_t seed = 0;
  double miou = 0;
  double miou_targets = 0;
  double miou_drivable = 0;
};

struct AblationReport {
  AblationKind kind = AblationKind::methods;
  std::vector<std::string> arms;
  std::vector<ArmResult> results;

  std::vector<double> values(const std::string& arm) const {
    std::vector<double> v;
    for (const auto& r : results)
      if (r.arm == arm) v.push_back(r.miou);
    return v;
  }

  double mean(const std::string& arm) const {
    const auto v = values(arm);
    if (v.empty()) throw std::out_of_range("no results for arm '" + arm + "'");
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  }

  /// Sample standard deviation; zero for a single seed.
  double stddev(const std::string& arm) const {
    const auto v = values(arm);
    if (v.size() < 2) return 0.0;
    const double m = mean(arm);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
  }

  std::string text() const {
    std::ostringstream out;
    char buf[160];
    out << "ablation: " << to_string(kind) << "\n";
    std::snprintf(buf, sizeof buf, "%-18s %6s %10s %10s %10s\n", "arm", "seed", "mIoU", "mIoU_t", "mIoU_d");
    out << buf;
    for (const auto& r : results) {
      std::snprintf(buf, sizeof buf, "%-18s %6llu %10.4f %10.4f %10.4f\n", r.arm.c_str(),
                    static_cast<unsigned long long>(r.seed), r.miou, r.miou_targets, r.miou_drivable);
      out << buf;
    }
    out << "summary (mIoU mean +- sd over seeds)\n";
    for (const auto& a : arms) {
      std::snprintf(buf, sizeof buf, "%-18s %10.4f +- %.4f\n", a.c_str(), mean(a), stddev(a));
      out << buf;
    }
    return out.str();
  }

  std::string jsonl() const {
    std::string out;
    for (const auto& r : results) {
      nlohmann::ordered_json j;
      j["ablation"] = to_string(kind);
      j["arm"] = r.arm;
      j["seed"] = r.seed;
      j["mIoU"] = r.miou;
      j["mIoU_t"] = r.miou_targets;
      j["mIoU_d"] = r.miou_drivable;
      out += j.dump() + "\n";
    }
    for (const auto& a : arms) {
      nlohmann::ordered_json j;
      j["ablation"] = to_string(kind);
      j["arm"] = a;
      j["summary"] = true;
      j["mean"] = mean(a);
      j["sd"] = stddev(a);
      j["seeds"] = values(a).size();
      out += j.dump() + "\n";
    }
    return out;
  }
};

inline ArmResult arm_result(const std::string& arm, std::uint64_t seed, const losses::IouAccumulator& acc) {
  return {arm, seed, acc.report(losses::ClassSubset::all).mean, acc.report(losses::ClassSubset::targets).mean,
          acc.report(losses::ClassSubset::drivable).mean};
}

inline TrainConfig seeded(TrainConfig cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.eval_each_epoch = false;
  return cfg;
}

/// Evaluation split for ablations: val.
inline losses::IouAccumulator evaluate_stage1(const corpus::Corpus& c, Stage1Model& m, std::uint64_t seed,
                                              std::size_t workers) {
  return evaluate(
      c, c.indices(corpus::Split::val), [&](std::size_t i) { return predict_stage1(c.scenes[i], m, seed).m_init; },
      workers);
}

inline losses::IouAccumulator evaluate_stage3(const corpus::Corpus& c, const PreparedScenes& prepared, Stage3Model& m,
                                              std::size_t workers) {
  return evaluate(
      c, c.indices(corpus::Split::val),
      [&](std::size_t i) {
        Tape tape;
        const Var out = stage3_forward_images(tape, c.scenes[i].image, *prepared.inpainted[i], m);
        return MaskStack::from_pixel_rows(out.value(), c.scenes[i].image.height, c.scenes[i].image.width);
      },
      workers);
}

/**
 * Trains and evaluates every arm of an ablation once per seed. Arms differ
 * only in the ablated factor; everything else, including the seed, is shared.
 *
 *   methods          camera_only, fusion (stage 1), fusion_inpainting (stage 3, concatenation)
 *   sampling         stage 1 with 100, 200 and 1000 sampled radar points
 *   fusion_variants  stage 3 with addition, gated and concatenation fusion
 *   inpaint_fusion   stage 3 with concatenation vs the inpainted image alone
 */
inline AblationReport run_ablation(const corpus::Corpus& c, AblationKind kind, const std::vector<std::uint64_t>& seeds,
                                   const ExperimentConfig& cfg, const inpaint::Inpainter& inpainter,
                                   const std::function<void(const std::string&)>& progress = {}) {
  AblationReport report;
  report.kind = kind;
  const auto note = [&](const std::string& s) {
    if (progress) progress(s);
  };
  InpaintComponents comp;
  comp.inpainter = &inpainter;
  comp.config = cfg.inpaint;
  std::vector<std::size_t> train_val = c.indices(corpus::Split::train);
  for (auto i : c.indices(corpus::Split::val)) train_val.push_back(i);

  const auto stage1_options = [&](bool radar, std::size_t n) {
    Stage1Options o;
    o.dims = cfg.dims;
    o.use_radar = radar;
    o.sample_count = n;
    return o;
  };
  const auto stage3_arm = [&](const std::string& name, FusionVariant v, const PreparedScenes& prepared,
                              std::uint64_t seed) {
    Stage3Options o;
    o.dims = cfg.dims;
    o.variant = v;
    auto t = train_stage3(c, prepared, o, seeded(cfg.stage3, seed), cfg.workers);
    report.results.push_back(arm_result(name, seed, evaluate_stage3(c, prepared, t.model, cfg.workers)));
    note(name + " seed " + std::to_string(seed) + ": mIoU " + std::to_string(report.results.back().miou));
  };

  switch (kind) {
    case AblationKind::methods: report.arms = {"camera_only", "fusion", "fusion_inpainting"}; break;
    case AblationKind::sampling: report.arms = {"n100", "n200", "n1000"}; break;
    case AblationKind::fusion_variants: report.arms = {"addition", "gated", "concatenation"}; break;
    case AblationKind::inpaint_fusion: report.arms = {"with_fusion", "without_fusion"}; break;
  }

  for (auto seed : seeds) {
    if (kind == AblationKind::sampling) {
      for (std::size_t n : {100u, 200u, 1000u}) {
        auto t = train_stage1(c, stage1_options(true, n), seeded(cfg.stage1, seed), cfg.workers);
        report.results.push_back(arm_result("n" + std::to_string(n), seed, evaluate_stage1(c, t.model, seed, cfg.workers)));
        note("n" + std::to_string(n) + " seed " + std::to_string(seed) + ": mIoU " +
             std::to_string(report.results.back().miou));
      }
      continue;
    }
    if (kind == AblationKind::methods) {
      auto cam = train_stage1(c, stage1_options(false, cfg.sample_count), seeded(cfg.stage1, seed), cfg.workers);
      report.results.push_back(arm_result("camera_only", seed, evaluate_stage1(c, cam.model, seed, cfg.workers)));
      note("camera_only seed " + std::to_string(seed) + ": mIoU " + std::to_string(report.results.back().miou));
    }
    auto fused = train_stage1(c, stage1_options(true, cfg.sample_count), seeded(cfg.stage1, seed), cfg.workers);
    if (kind == AblationKind::methods) {
      report.results.push_back(arm_result("fusion", seed, evaluate_stage1(c, fused.model, seed, cfg.workers)));
      note("fusion seed " + std::to_string(seed) + ": mIoU " + std::to_string(report.results.back().miou));
    }
    const auto prepared = prepare_stage3(c, train_val, fused.model, cfg.masker, comp, seed, cfg.workers);
    switch (kind) {
      case AblationKind::methods: stage3_arm("fusion_inpainting", FusionVariant::concatenation, prepared, seed); break;
      case AblationKind::fusion_variants:
        stage3_arm("addition", FusionVariant::addition, prepared, seed);
        stage3_arm("gated", FusionVariant::gated, prepared, seed);
        stage3_arm("concatenation", FusionVariant::concatenation, prepared, seed);
        break;
      case AblationKind::inpaint_fusion:
        stage3_arm("with_fusion", FusionVariant::concatenation, prepared, seed);
        stage3_arm("without_fusion", FusionVariant::inpaint_only, prepared, seed);
        break;
      case AblationKind::sampling: break;
    }
  }
  return report;
}

}  // namespace crseg::pipeline
