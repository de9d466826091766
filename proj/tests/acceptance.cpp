// Acceptance gate: one PASS/FAIL line per criterion. Exits non-zero when any
// criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "crseg/corpus.hpp"
#include "crseg/pipeline.hpp"
#include "crseg/run_config.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace crseg;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail.clear();
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void progress(const std::string& s) { std::cerr << "  .. " << s << std::endl; }

// --- 1 ----------------------------------------------------------------------

Outcome gradients() {
  Outcome o;
  const auto start = std::chrono::steady_clock::now();
  double worst = 0;
  std::string worst_where;
  std::size_t kinks = 0;
  const auto record = [&](const std::string& family, std::uint64_t seed, const testsupport::GradCheck& g) {
    kinks += g.kinks;
    if (g.max_rel_error > worst) {
      worst = g.max_rel_error;
      worst_where = family + " seed " + std::to_string(seed) + " " + g.worst;
    }
  };
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    {
      auto inst = oracles::random_caf(seed + 100);
      inst.ps.add("img", inst.image);
      inst.ps.add("rad", inst.radar);
      const auto w = testsupport::random_matrix(inst.image.rows(), inst.image.cols(), rng);
      record("caf", seed, testsupport::check_gradients(inst.ps, [&](Tape& t) {
               const auto f = fusion::cross_attention_fuse(t, t.watch(inst.ps["img"]), t.watch(inst.ps["rad"]),
                                                           inst.rows, inst.ps, seed % kLevels);
               return numerics::sum(numerics::mul(f, t.constant(w)));
             }, seed));
    }
    {
      ModelDims dims;
      dims.channels = {4, 5, 6, 7};
      dims.decoder_width = 6;
      numerics::ParameterSet ps;
      fusion::init_image_encoder(ps, dims, rng);
      fusion::init_decoder(ps, dims, rng);
      for (auto& [name, t] : ps)
        for (auto& v : t.data()) v += 0.1 * std::uniform_real_distribution<double>(-1, 1)(rng);
      const auto img = oracles::random_image(16, 16, seed);
      const auto w = testsupport::random_matrix(20 * 20, kNumClasses, rng);
      record("decoder", seed, testsupport::check_gradients(ps, [&](Tape& t) {
               const auto pyr = fusion::encode_image(t, img, ps);
               return numerics::sum(numerics::mul(fusion::decode_masks(t, pyr.features, pyr, ps, 20, 20), t.constant(w)));
             }, seed));
    }
    {
      numerics::ParameterSet ps;
      ps.add("logits", testsupport::random_matrix(6, 5, rng));
      std::vector<std::size_t> t(6);
      for (auto& v : t) v = rng() % 5;
      const losses::ClassWeights w{{0.5, 1.0, 1.5, 2.0, 0.7}, 2.0};
      Tensor gt = Tensor::matrix(6, 5);
      for (std::size_t r = 0; r < 6; ++r) gt(r, t[r]) = 1;
      record("focal", seed, testsupport::check_gradients(ps, [&](Tape& tape) {
               return losses::focal_loss(numerics::softmax_rows(tape.watch(ps["logits"])), t, w,
                                         {true, true, false, true, true, true});
             }, seed));
      record("dice", seed, testsupport::check_gradients(ps, [&](Tape& tape) {
               return losses::dice_loss(numerics::softmax_rows(tape.watch(ps["logits"])), gt);
             }, seed));
    }
    {
      pipeline::Stage3Options so;
      so.dims.channels = {4, 6, 8, 8};
      so.dims.decoder_width = 6;
      so.variant = pipeline::FusionVariant::gated;
      auto model = pipeline::init_stage3(so, seed);
      for (std::size_t i = 1; i <= kLevels; ++i)
        model.params["fus.l" + std::to_string(i) + ".g"] =
            testsupport::random_matrix(1, so.dims.channels[i - 1], rng, -2, 2);
      testsupport::jitter(model.params, seed);
      const auto a = oracles::random_image(16, 16, seed + 1), b = oracles::random_image(16, 16, seed + 2);
      const auto w = testsupport::random_matrix(256, kNumClasses, rng);
      record("gated", seed, testsupport::check_gradients(model.params, [&](Tape& t) {
               return numerics::sum(numerics::mul(pipeline::stage3_forward_images(t, a, b, model), t.constant(w)));
             }, seed, 6, 1e-5, testsupport::kModelGradientFloor));
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  o.detail = "100 instances, worst relative error " + fmt("%.2e", worst) + ", " + std::to_string(kinks) +
             " probes redrawn at kinks, " + fmt("%.1f", secs) + " s";
  o.require(worst < 1e-4, "worst relative error " + fmt("%.2e", worst) + " at " + worst_where);
  o.require(secs < 120, "runtime " + fmt("%.1f", secs) + " s exceeds 2 min");
  return o;
}

// --- 2 ----------------------------------------------------------------------

Outcome caf_exactness() {
  Outcome o;
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto inst = oracles::random_caf(seed);
    const std::size_t level = seed % kLevels;
    const std::string p = "caf.l" + std::to_string(level + 1);
    Tape tape;
    const auto out = fusion::cross_attention_fuse(tape, tape.constant(inst.image), tape.constant(inst.radar),
                                                  inst.rows, inst.ps, level)
                         .value();
    const auto expect = oracles::caf_oracle(inst.image, oracles::gather(inst.radar, inst.rows), inst.ps[p + ".wq"],
                                            inst.ps[p + ".wk"], inst.ps[p + ".wv"]);
    for (std::size_t i = 0; i < out.size(); ++i) worst = std::max(worst, std::abs(out[i] - expect[i]));

    Tensor noisy = inst.radar;
    for (std::size_t r = 0; r < noisy.rows(); ++r)
      if (std::find(inst.rows.begin(), inst.rows.end(), r) == inst.rows.end())
        for (std::size_t c = 0; c < noisy.cols(); ++c) noisy(r, c) = 1e3 * (c + 1.0) - 7.0 * r;
    const auto padded =
        fusion::cross_attention_fuse(tape, tape.constant(inst.image), tape.constant(noisy), inst.rows, inst.ps, level)
            .value();
    o.require(padded.storage() == out.storage(), "padding changed the output (seed " + std::to_string(seed) + ")");

    for (auto& v : inst.ps[p + ".wv"].data()) v = 0;
    const auto zero_v = fusion::cross_attention_fuse(tape, tape.constant(inst.image), tape.constant(inst.radar),
                                                     inst.rows, inst.ps, level)
                            .value();
    const auto q = numerics::matmul(tape.constant(inst.image), tape.constant(inst.ps[p + ".wq"])).value();
    o.require(zero_v.storage() == q.storage(), "V = 0 did not give Q exactly (seed " + std::to_string(seed) + ")");
  }
  o.require(worst <= 1e-10, "oracle deviation " + fmt("%.2e", worst));
  if (o.pass) o.detail = "50 instances, max deviation " + fmt("%.2e", worst) + ", V=0 and padding exact";
  return o;
}

// --- 3 ----------------------------------------------------------------------

Outcome nru_algebra() {
  Outcome o;
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> dim(1, 9);
  std::size_t mismatches = 0, out_of_range = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t h = dim(rng), w = dim(rng);
    const auto sam = oracles::random_stack(h, w, rng, trial % 2 == 0);
    const auto init = oracles::random_stack(h, w, rng);
    const auto out = masks::noise_reduce(sam, init);
    for (std::size_t c = 0; c < kNumClasses; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          mismatches += out.at(c, y, x) != oracles::nru_oracle(sam, init, c, y, x);
          out_of_range += out.at(c, y, x) < 0 || out.at(c, y, x) > 1;
        }
  }
  o.require(mismatches == 0, std::to_string(mismatches) + " values differ from the oracle");
  o.require(out_of_range == 0, std::to_string(out_of_range) + " values outside [0, 1]");

  const auto init = oracles::random_stack(5, 5, rng);
  o.require(masks::noise_reduce(masks::MaskStack(5, 5), init) == init, "empty SAM stack did not return M_init");
  masks::MaskStack all_noise(4, 4);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) all_noise.at(y < 2 ? 0 : kWaterClass, y, x) = 1.0;
  o.require(masks::noise_reduce(oracles::random_stack(4, 4, rng, true), all_noise) == all_noise,
            "all-noise M_init did not erase SAM");
  auto quiet = oracles::random_stack(5, 5, rng);
  for (auto c : {std::size_t{0}, kWaterClass})
    for (auto& v : quiet.channel(c)) v = 0.2;
  const auto sam = oracles::random_stack(5, 5, rng);
  const auto sum = masks::noise_reduce(sam, quiet);
  for (std::size_t c = 1; c < kWaterClass; ++c)
    for (std::size_t p = 0; p < 25; ++p)
      if (sum.channel(c)[p] != std::min(1.0, sam.channel(c)[p] + quiet.channel(c)[p])) {
        o.require(false, "noise-free case is not the clamped sum");
        c = kWaterClass;
        break;
      }
  if (o.pass) o.detail = "1000 random stacks exact, range and three degenerate cases hold";
  return o;
}

// --- 4 ----------------------------------------------------------------------

Outcome loss_oracles() {
  Outcome o;
  const auto focal = [](const Tensor& probs, const std::vector<std::size_t>& t, const losses::ClassWeights& w) {
    Tape tape;
    return losses::focal_loss(tape.constant(probs), t, w, std::vector<bool>(t.size(), true)).value()[0];
  };
  const auto dice = [](const Tensor& pred, const Tensor& gt, double eps) {
    Tape tape;
    return losses::dice_loss(tape.constant(pred), gt, eps).value()[0];
  };
  std::mt19937_64 rng(1);
  double ce_gap = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor probs = Tensor::matrix(7, kNumClasses);
    for (std::size_t r = 0; r < 7; ++r) {
      double s = 0;
      for (std::size_t k = 0; k < kNumClasses; ++k) s += (probs(r, k) = std::uniform_real_distribution<double>(0.05, 1)(rng));
      for (std::size_t k = 0; k < kNumClasses; ++k) probs(r, k) /= s;
    }
    std::vector<std::size_t> t(7);
    double ce = 0;
    for (std::size_t r = 0; r < 7; ++r) ce -= std::log(probs(r, t[r] = rng() % kNumClasses));
    ce_gap = std::max(ce_gap, std::abs(focal(probs, t, losses::ClassWeights::uniform(kNumClasses, 0.0)) - ce / 7));
  }
  o.require(ce_gap <= 1e-12, "focal(gamma=0) differs from cross-entropy by " + fmt("%.2e", ce_gap));

  Tensor half = Tensor::matrix(1, 2);
  half(0, 0) = half(0, 1) = 0.5;
  const double ln2 = focal(half, {0}, losses::ClassWeights::uniform(2, 0.0));
  o.require(std::abs(ln2 - std::log(2.0)) <= 1e-9, "ln 2 case gave " + fmt("%.12f", ln2));
  Tensor sure = Tensor::matrix(1, 2);
  sure(0, 0) = 0.9;
  sure(0, 1) = 0.1;
  const double f2 = focal(sure, {0}, losses::ClassWeights::uniform(2, 2.0));
  o.require(std::abs(f2 - (-0.01 * std::log(0.9))) <= 1e-9, "-(0.1)^2 ln 0.9 case gave " + fmt("%.12f", f2));

  Tensor gt = Tensor::matrix(4, 2), swapped = Tensor::matrix(4, 2);
  gt(0, 0) = gt(1, 0) = gt(2, 1) = gt(3, 1) = 1;
  swapped(0, 1) = swapped(1, 1) = swapped(2, 0) = swapped(3, 0) = 1;
  const double perfect = dice(gt, gt, losses::kDiceEpsilon), disjoint = dice(swapped, gt, losses::kDiceEpsilon);
  o.require(perfect < 1e-5, "perfect dice " + fmt("%.3e", perfect));
  o.require(std::abs(disjoint - 1) < 1e-5, "disjoint dice " + fmt("%.6f", disjoint));
  Tensor pred = Tensor::matrix(4, 1), g = Tensor::matrix(4, 1);
  pred[0] = pred[1] = 1;
  g[1] = g[2] = 1;
  const double worked = dice(pred, g, 0.0);
  o.require(std::abs(worked - 0.5) <= 1e-9, "2x2 dice gave " + fmt("%.12f", worked));
  if (o.pass)
    o.detail = "CE gap " + fmt("%.1e", ce_gap) + ", ln2 " + fmt("%.10f", ln2) + ", focal(0.9) " + fmt("%.10f", f2) +
               ", dice perfect/disjoint " + fmt("%.1e", perfect) + "/" + fmt("%.6f", disjoint) + ", 2x2 " +
               fmt("%.3f", worked);
  return o;
}

// --- 5 ----------------------------------------------------------------------

Outcome inpaint_contract() {
  Outcome o;
  const auto table = inpaint::default_prompt_table();
  const inpaint::MockTextureInpainter mock;
  const inpaint::IdentityInpainter identity;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto img = oracles::random_image(12, 12, seed);
    inpaint::InpaintConfig cfg;
    cfg.seed = seed;
    o.require(inpaint::iterative_inpaint(img, {}, table, mock, cfg) == img, "empty mask list changed the image");
    const auto a = oracles::rect(12, 12, 0, 0, 5, 5, 1 + seed % 7);
    const auto b = oracles::rect(12, 12, 6, 6, 12, 10, 1 + (seed + 3) % 7);
    const auto c = oracles::rect(12, 12, 0, 7, 3, 12, 1 + (seed + 5) % 7);
    const std::vector<masks::BinaryMask> order1{a, b, c}, order2{c, a, b}, order3{b, c, a};
    o.require(inpaint::iterative_inpaint(img, order1, table, identity, cfg) == img, "identity inpainter changed pixels");
    const auto r1 = inpaint::iterative_inpaint(img, order1, table, mock, cfg);
    o.require(r1 == inpaint::iterative_inpaint(img, order2, table, mock, cfg) &&
                  r1 == inpaint::iterative_inpaint(img, order3, table, mock, cfg),
              "disjoint masks do not commute (seed " + std::to_string(seed) + ")");
    for (std::size_t y = 0; y < 12; ++y)
      for (std::size_t x = 0; x < 12; ++x)
        if (!a.at(y, x) && !b.at(y, x) && !c.at(y, x) && r1.pixel(y, x) != img.pixel(y, x)) {
          o.require(false, "pixel outside the masks changed (seed " + std::to_string(seed) + ")");
        }
  }
  if (o.pass) o.detail = "20 seeds: empty list, identity, order invariance and outside pixels exact";
  return o;
}

// --- 6 ----------------------------------------------------------------------

radar::RadarFrame random_frame(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-5, 5);
  radar::RadarFrame f;
  f.frame_id = "f" + std::to_string(seed);
  for (std::size_t i = 0; i < n; ++i) f.points.push_back({d(rng), d(rng), 10 + d(rng), d(rng), d(rng)});
  return f;
}

Outcome sampling_contract() {
  Outcome o;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto big = random_frame(1000 + 1 + seed * 317, seed);
    const auto s = radar::sample_or_pad(big, 1000, seed);
    std::set<std::size_t> sources;
    for (std::size_t r = 0; r < s.rows(); ++r)
      if (s.source_index[r]) sources.insert(*s.source_index[r]);
    o.require(s.rows() == 1000 && s.valid_rows().size() == 1000 && sources.size() == 1000,
              "N_p=" + std::to_string(big.points.size()) + " did not give 1000 distinct valid rows");
    const auto again = radar::sample_or_pad(big, 1000, seed);
    o.require(again.source_index == s.source_index && again.matrix.storage() == s.matrix.storage(),
              "sampling not deterministic for seed " + std::to_string(seed));

    const std::size_t n = 1 + seed * 97;
    const auto small = radar::sample_or_pad(random_frame(n, seed + 50), 1000, seed);
    bool ok = small.rows() == 1000;
    for (std::size_t r = 0; ok && r < 1000; ++r) {
      ok = small.valid[r] == (r < n) && small.source_index[r].has_value() == (r < n);
      if (r >= n)
        for (std::size_t k = 0; k < radar::kPointFeatures; ++k) ok = ok && small.matrix(r, k) == 0.0;
    }
    o.require(ok, "N_p=" + std::to_string(n) + " not zero-padded with correct validity");
  }
  if (o.pass) o.detail = "10 large and 10 small frames: exact row counts, padding, validity and determinism";
  return o;
}

// --- 7 / 8 ------------------------------------------------------------------

config::RunConfig experiment_config() {
  config::RunConfig c;
  c.corpus.count = 200;
  c.corpus.seed = 7;
  c.corpus.adverse_only = true;
  c.workers = 1;
  return c;
}

std::string arm_summary(const pipeline::AblationReport& r) {
  std::string s;
  for (const auto& a : r.arms) s += (s.empty() ? "" : ", ") + a + " " + fmt("%.4f", r.mean(a));
  return s;
}

bool well_formed(const pipeline::AblationReport& r, std::size_t seeds) {
  if (r.results.size() != r.arms.size() * seeds) return false;
  std::istringstream in(r.jsonl());
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    if (!j.contains("arm") || !j.contains("ablation")) return false;
    ++lines;
  }
  return lines == r.results.size() + r.arms.size() && r.text().find("summary") != std::string::npos;
}

Outcome end_to_end_trend() {
  Outcome o;
  const auto cfg = experiment_config();
  const auto start = std::chrono::steady_clock::now();
  const auto corpus = corpus::generate_corpus(cfg.corpus);
  const inpaint::MockTextureInpainter inpainter;
  const auto report =
      pipeline::run_ablation(corpus, pipeline::AblationKind::methods, {1, 2, 3}, cfg.experiment(), inpainter, progress);
  std::cerr << report.text();
  const double per_seed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 3;
  const double cam = report.mean("camera_only"), fus = report.mean("fusion"), full = report.mean("fusion_inpainting");
  o.detail = arm_summary(report) + "; margins fusion " + fmt("%+.4f", fus - cam) + ", fusion+inpainting " +
             fmt("%+.4f", full - cam) + "; " + fmt("%.0f", per_seed) + " s per seed";
  o.require(per_seed < 1800, "runtime " + fmt("%.0f", per_seed) + " s per seed exceeds 30 min");
  o.require(fus - cam > 0, "fusion does not beat camera-only (" + fmt("%+.4f", fus - cam) + ")");
  o.require(full - cam > 0, "fusion+inpainting does not beat camera-only (" + fmt("%+.4f", full - cam) + ")");
  if (!o.pass) o.detail += "; " + arm_summary(report);
  return o;
}

Outcome ablation_machinery() {
  Outcome o;
  const inpaint::MockTextureInpainter inpainter;

  auto dense = experiment_config();
  dense.corpus.seed = 11;
  dense.corpus.radar.min_points_per_object = 60;
  dense.corpus.radar.max_points_per_object = 160;
  dense.corpus.radar.clutter_rate = 40;
  const auto dense_corpus = corpus::generate_corpus(dense.corpus);
  const auto sampling = pipeline::run_ablation(dense_corpus, pipeline::AblationKind::sampling, {1, 2, 3},
                                               dense.experiment(), inpainter, progress);
  std::cerr << sampling.text();
  const double n100 = sampling.mean("n100"), n200 = sampling.mean("n200"), n1000 = sampling.mean("n1000");
  o.require(well_formed(sampling, 3), "sampling report malformed");
  o.require(n100 <= n200 && n200 <= n1000, "sampling trend not monotone: " + arm_summary(sampling));

  const auto cfg = experiment_config();
  const auto corpus = corpus::generate_corpus(cfg.corpus);
  const auto variants = pipeline::run_ablation(corpus, pipeline::AblationKind::fusion_variants, {1}, cfg.experiment(),
                                               inpainter, progress);
  std::cerr << variants.text();
  o.require(well_formed(variants, 1), "fusion-variant report malformed");
  const auto inpaint_fusion = pipeline::run_ablation(corpus, pipeline::AblationKind::inpaint_fusion, {1, 2, 3},
                                                     cfg.experiment(), inpainter, progress);
  std::cerr << inpaint_fusion.text();
  o.require(well_formed(inpaint_fusion, 3), "inpaint-fusion report malformed");
  const double with = inpaint_fusion.mean("with_fusion"), without = inpaint_fusion.mean("without_fusion");
  o.require(without < with, "no-fusion arm does not score below the fusion arm: " + arm_summary(inpaint_fusion));
  const std::string summary = "sampling " + arm_summary(sampling) + "; variants " + arm_summary(variants) +
                              "; " + arm_summary(inpaint_fusion);
  o.detail = o.pass ? summary : o.detail + "; " + summary;
  return o;
}

// --- 9 ----------------------------------------------------------------------

Outcome miou_oracle() {
  Outcome o;
  std::mt19937_64 rng(11);
  losses::IouAccumulator dataset;
  std::vector<std::size_t> all_pred, all_gt;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = 1 + rng() % 6, w = 1 + rng() % 6;
    std::vector<std::size_t> a(h * w), b(h * w);
    for (auto& v : a) v = rng() % kNumClasses;
    for (auto& v : b) v = rng() % kNumClasses;
    dataset.add(oracles::one_hot(a, h, w), oracles::one_hot(b, h, w));
    all_pred.insert(all_pred.end(), a.begin(), a.end());
    all_gt.insert(all_gt.end(), b.begin(), b.end());
    const auto single = losses::miou(oracles::one_hot(a, h, w), oracles::one_hot(b, h, w));
    const auto counted = oracles::count_iou(a, b);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const bool present = counted.uni[c] > 0;
      o.require(single.per_class[c].has_value() == present &&
                    (!present || *single.per_class[c] == static_cast<double>(counted.inter[c]) / counted.uni[c]),
                "pair " + std::to_string(trial) + " class " + std::to_string(c) + " differs from counting");
    }
  }
  const auto counted = oracles::count_iou(all_pred, all_gt);
  const auto rep = dataset.report();
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    o.require(dataset.intersection(c) == counted.inter[c] && dataset.union_count(c) == counted.uni[c],
              "dataset counts differ for class " + std::to_string(c));
    if (counted.uni[c]) {
      sum += static_cast<double>(counted.inter[c]) / counted.uni[c];
      ++n;
    }
  }
  o.require(rep.mean == sum / n, "dataset mIoU " + fmt("%.17g", rep.mean) + " vs oracle " + fmt("%.17g", sum / n));

  corpus::CorpusConfig cc;
  cc.count = 10;
  cc.scene.height = cc.scene.width = 32;
  const auto c = corpus::generate_corpus(cc);
  std::vector<std::size_t> all(c.scenes.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto self = pipeline::evaluate(c, all, [&](std::size_t i) { return c.scenes[i].gt; }, 1).report();
  o.require(self.mean == 1.0, "GT vs GT gave " + fmt("%.6f", self.mean));
  if (o.pass) o.detail = "50 pairs exact per pair and accumulated (mIoU " + fmt("%.6f", rep.mean) + "), GT vs GT 1.0";
  return o;
}

// --- 10 ---------------------------------------------------------------------

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CRSEG_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    out[fs::relative(e.path(), root).string()] = ss.str();
  }
  return out;
}

Outcome determinism() {
  Outcome o;
  const auto root = fs::temp_directory_path() / "crseg_acceptance_determinism";
  fs::remove_all(root);
  const std::string small =
      " --set model.channels=4,6,8,8 --set model.decoder_width=6 --set model.classifier_hidden=8"
      " --set model.sample_count=64 --epochs 2";
  std::size_t files = 0;
  for (const char* run : {"a", "b"}) {
    const auto d = root / run;
    const auto c = (d / "corpus").string();
    const std::vector<std::pair<std::string, std::string>> steps{
        {"gen", "gen --out " + c + " --count 20 --size 32 --seed 5"},
        {"train", "train --corpus " + c + " --out " + (d / "model").string() + " --model full" + small},
        {"infer", "infer --corpus " + c + " --model " + (d / "model").string() + " --out " + (d / "pred").string() +
                      " --split all"},
        {"eval", "eval --corpus " + c + " --pred " + (d / "pred").string() + " --split all --out " +
                     (d / "eval.txt").string()},
        {"ablate", "ablate --corpus " + c + " --out " + (d / "ablation").string() +
                       " --kind methods --seeds 1 --set stage1.epochs=1 --set stage3.epochs=1" +
                       " --set model.channels=4,6,8,8 --set model.decoder_width=6 --set model.classifier_hidden=8"
                       " --set model.sample_count=64"},
    };
    for (const auto& [name, args] : steps) {
      const int code = run_cli(args);
      o.require(code == 0, name + " exited with " + std::to_string(code));
    }
  }
  const auto a = tree(root / "a"), b = tree(root / "b");
  files = a.size();
  std::vector<std::string> differing;
  for (const auto& [path, bytes] : a) {
    const auto it = b.find(path);
    if (it == b.end() || it->second != bytes) differing.push_back(path);
  }
  o.require(a.size() == b.size(), "runs produced different file sets");
  o.require(differing.empty(), std::to_string(differing.size()) + " files differ, e.g. " +
                                   (differing.empty() ? std::string() : differing.front()));
  if (o.pass) o.detail = "gen, train, infer, eval and ablate rerun: " + std::to_string(files) + " files byte-identical";
  fs::remove_all(root);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradients},     {"CAF exactness", caf_exactness},
      {"NRU algebra", nru_algebra},            {"loss oracles", loss_oracles},
      {"iterative inpainting contract", inpaint_contract}, {"sampling contract", sampling_contract},
      {"end-to-end trend", end_to_end_trend}, {"ablation machinery", ablation_machinery},
      {"mIoU oracle", miou_oracle},            {"determinism", determinism},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(static_cast<std::size_t>(std::atoi(argv[i])));
  bool all_pass = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    all_pass = all_pass && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].first << "): " << o.detail
              << " [" << fmt("%.0f", secs) << " s]" << std::endl;
  }
  return all_pass ? 0 : 1;
}
