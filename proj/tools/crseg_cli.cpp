// crseg: corpus generation, training, inference, evaluation and
// ablations for the camera-radar segmentation pipeline.
//
// Exit codes: 0 success, 1 other failure, 2 configuration error, 3 input or
// output error, 4 numerical divergence.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <mutex>

#include "crseg/adapters.hpp"
#include "crseg/run_config.hpp"

namespace fs = std::filesystem;
using namespace crseg;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kIo = 3, kDivergence = 4 };

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  std::size_t workers = 0;
};

config::RunConfig resolve(const Common& common, const std::function<void(config::RunConfig&)>& flags = {}) {
  config::RunConfig c;
  if (!common.config_file.empty()) config::load_config(c, common.config_file);
  for (const auto& o : common.overrides) config::apply_override(c, o);
  if (common.workers) c.workers = common.workers;
  if (flags) flags(c);
  c.validate();
  return c;
}

void write_text(const fs::path& p, const std::string& text) {
  auto out = io::detail::open_out(p, false);
  out << text;
  if (!out) throw io::IoError("cannot write " + p.string());
}

void write_resolved(const fs::path& dir, const config::RunConfig& c) {
  write_text(dir / "resolved_config.txt", config::to_text(c));
}

void require_dir(const fs::path& p, const char* what) {
  if (!fs::is_directory(p)) throw io::IoError(std::string(what) + " directory not found: " + p.string());
}

void make_output_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw io::IoError("cannot create output directory " + p.string());
}

std::vector<std::size_t> select_split(const corpus::Corpus& c, const std::string& split) {
  if (split == "all") {
    std::vector<std::size_t> all(c.entries.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  try {
    return c.indices(corpus::parse_split(split));
  } catch (const io::FormatError& e) {
    throw config::ConfigError(std::string(e.what()) + " (expected train, val, test or all)");
  }
}

void log_line(const std::string& s) {
  static std::mutex m;
  std::lock_guard lock(m);
  std::cerr << s << '\n';
}

// --- gen --------------------------------------------------------------------

struct GenArgs {
  std::string out;
  std::optional<std::size_t> count, size;
  std::optional<std::uint64_t> seed;
  bool adverse_only = false, force = false;
};

void cmd_gen(const Common& common, const GenArgs& a) {
  const auto cfg = resolve(common, [&](config::RunConfig& c) {
    if (a.count) c.corpus.count = *a.count;
    if (a.seed) c.corpus.seed = *a.seed;
    if (a.size) c.corpus.scene.height = c.corpus.scene.width = *a.size;
    if (a.adverse_only) c.corpus.adverse_only = true;
  });
  const fs::path out = a.out;
  if (fs::exists(out) && !(fs::is_directory(out) && fs::is_empty(out))) {
    if (!a.force) throw io::IoError(out.string() + " exists and is not empty (use --force to replace it)");
    fs::remove_all(out);
  }
  make_output_dir(out);
  const auto corpus = corpus::generate_corpus(cfg.corpus);
  corpus::write_corpus(out, corpus);
  write_resolved(out, cfg);
  std::cout << "wrote " << corpus.scenes.size() << " scenes to " << out.string() << "\n";
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  std::string corpus, out, model = "full";
  std::optional<std::size_t> epochs;
};

void cmd_train(const Common& common, const TrainArgs& a) {
  const auto cfg = resolve(common, [&](config::RunConfig& c) {
    if (a.epochs) c.stage1.epochs = c.stage3.epochs = *a.epochs;
  });
  if (a.model != "camera" && a.model != "fusion" && a.model != "full") {
    throw config::ConfigError("--model must be camera, fusion or full");
  }
  require_dir(a.corpus, "corpus");
  const auto c = corpus::load_corpus(a.corpus);
  make_output_dir(a.out);
  write_resolved(a.out, cfg);

  pipeline::Stage1Options o1;
  o1.dims = cfg.dims;
  o1.use_radar = a.model != "camera";
  o1.sample_count = cfg.sample_count;
  auto t1cfg = cfg.stage1;
  t1cfg.seed = cfg.seed;
  auto s1 = pipeline::train_stage1(c, o1, t1cfg, cfg.workers);
  pipeline::save_stage1(fs::path(a.out) / "stage1.ckpt", s1.model, cfg.seed);
  write_text(fs::path(a.out) / "stage1_log.jsonl", pipeline::to_jsonl(s1.log));
  std::cout << "stage 1: " << s1.log.size() << " epochs, final L_seg " << s1.log.back().l_seg << "\n";
  if (a.model != "full") return;

  const inpaint::MockTextureInpainter inpainter;
  pipeline::InpaintComponents comp;
  comp.inpainter = &inpainter;
  comp.config = cfg.inpaint;
  comp.mask_threshold = cfg.mask_threshold;
  auto indices = c.indices(corpus::Split::train);
  for (auto i : c.indices(corpus::Split::val)) indices.push_back(i);
  const auto prepared = pipeline::prepare_stage3(c, indices, s1.model, cfg.masker, comp, cfg.seed, cfg.workers);
  pipeline::Stage3Options o3;
  o3.dims = cfg.dims;
  o3.variant = cfg.variant;
  auto t3cfg = cfg.stage3;
  t3cfg.seed = cfg.seed;
  auto s3 = pipeline::train_stage3(c, prepared, o3, t3cfg, cfg.workers);
  pipeline::save_stage3(fs::path(a.out) / "stage3.ckpt", s3.model);
  write_text(fs::path(a.out) / "stage3_log.jsonl", pipeline::to_jsonl(s3.log));
  std::cout << "stage 3: " << s3.log.size() << " epochs, final L_seg " << s3.log.back().l_seg << "\n";
}

// --- infer ------------------------------------------------------------------

struct InferArgs {
  std::string corpus, model, out, split = "test";
};

void cmd_infer(const Common& common, const InferArgs& a) {
  const auto cfg = resolve(common);
  require_dir(a.corpus, "corpus");
  require_dir(a.model, "model");
  const fs::path stage1_path = fs::path(a.model) / "stage1.ckpt", stage3_path = fs::path(a.model) / "stage3.ckpt";
  if (!fs::exists(stage1_path)) throw io::IoError("missing checkpoint " + stage1_path.string());
  auto [stage1, sample_seed] = pipeline::load_stage1(stage1_path);
  std::optional<pipeline::Stage3Model> stage3;
  if (fs::exists(stage3_path)) stage3 = pipeline::load_stage3(stage3_path);

  const auto c = corpus::load_corpus(a.corpus);
  const auto indices = select_split(c, a.split);
  make_output_dir(a.out);
  write_resolved(a.out, cfg);

  const inpaint::MockTextureInpainter inpainter;
  pipeline::InpaintComponents comp;
  comp.inpainter = &inpainter;
  comp.config = cfg.inpaint;
  comp.mask_threshold = cfg.mask_threshold;
  pipeline::parallel_for(indices.size(), cfg.workers, [&](std::size_t k) {
    const auto& s = c.scenes[indices[k]];
    const auto dir = fs::path(a.out) / s.id;
    fs::create_directories(dir);
    if (!stage3) {
      const auto pred = pipeline::predict_stage1(s, stage1, sample_seed).m_init;
      io::save_maskstack(dir / "pred.maskstack", pred);
      io::save_label_png(dir / "pred.png", pred);
      return;
    }
    const auto s2 = pipeline::stage2_run(s, stage1, cfg.masker, sample_seed);
    if (s2.warning) log_line(s.id + ": " + *s2.warning);
    const auto r = pipeline::stage3_forward(s, s2.m_nr, comp, *stage3);
    io::save_maskstack(dir / "pred.maskstack", r.masks);
    io::save_label_png(dir / "pred.png", r.masks);
    io::save_ppm(dir / "inpainted.ppm", r.inpainted);
  });
  std::cout << "wrote predictions for " << indices.size() << " scenes to " << a.out << "\n";
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string corpus, pred, pred_file = "pred.maskstack", split = "test", subset = "all", out;
};

std::string iou_table(const losses::IouAccumulator& acc, losses::ClassSubset subset) {
  std::ostringstream out;
  char buf[128];
  const auto all = acc.report(losses::ClassSubset::all);
  const auto names = default_legend();
  std::snprintf(buf, sizeof buf, "%-12s %10s\n", "class", "IoU");
  out << buf;
  for (std::size_t c = 0; c < acc.classes(); ++c) {
    const std::string name = c < names.size() ? names[c] : "class" + std::to_string(c);
    if (all.per_class[c]) std::snprintf(buf, sizeof buf, "%-12s %10.4f\n", name.c_str(), *all.per_class[c]);
    else std::snprintf(buf, sizeof buf, "%-12s %10s\n", name.c_str(), "absent");
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%-12s %10.4f\n", "mIoU", acc.report(subset).mean);
  out << buf;
  std::snprintf(buf, sizeof buf, "%-12s %10.4f\n", "mIoU_t", acc.report(losses::ClassSubset::targets).mean);
  out << buf;
  std::snprintf(buf, sizeof buf, "%-12s %10.4f\n", "mIoU_d", acc.report(losses::ClassSubset::drivable).mean);
  out << buf;
  return out.str();
}

void cmd_eval(const Common& common, const EvalArgs& a) {
  const auto cfg = resolve(common);
  losses::ClassSubset subset;
  try {
    subset = losses::parse_subset(a.subset);
  } catch (const std::invalid_argument& e) {
    throw config::ConfigError(e.what());
  }
  require_dir(a.corpus, "corpus");
  require_dir(a.pred, "prediction");
  const auto c = corpus::load_corpus(a.corpus);
  const auto indices = select_split(c, a.split);
  const auto acc = pipeline::evaluate(
      c, indices,
      [&](std::size_t i) {
        const auto p = fs::path(a.pred) / c.entries[i].id / a.pred_file;
        if (!fs::exists(p)) throw io::IoError("missing prediction " + p.string());
        return io::load_maskstack(p);
      },
      cfg.workers);
  const auto table = iou_table(acc, subset);
  std::cout << "split " << a.split << ", " << indices.size() << " scenes, mIoU over " << a.subset << "\n" << table;
  if (!a.out.empty()) write_text(a.out, table);
}

// --- ablate -----------------------------------------------------------------

struct AblateArgs {
  std::string corpus, out, kind = "methods";
  std::vector<std::uint64_t> seeds;
};

void cmd_ablate(const Common& common, const AblateArgs& a) {
  pipeline::AblationKind kind;
  try {
    kind = pipeline::parse_ablation(a.kind);
  } catch (const std::invalid_argument& e) {
    throw config::ConfigError(e.what());
  }
  const auto cfg = resolve(common, [&](config::RunConfig& c) {
    if (!a.seeds.empty()) c.ablation_seeds = a.seeds;
  });
  require_dir(a.corpus, "corpus");
  const auto c = corpus::load_corpus(a.corpus);
  make_output_dir(a.out);
  write_resolved(a.out, cfg);
  const inpaint::MockTextureInpainter inpainter;
  const auto report = pipeline::run_ablation(c, kind, cfg.ablation_seeds, cfg.experiment(), inpainter, log_line);
  const std::string stem = std::string("ablation_") + pipeline::to_string(kind);
  write_text(fs::path(a.out) / (stem + ".txt"), report.text());
  write_text(fs::path(a.out) / (stem + ".jsonl"), report.jsonl());
  std::cout << report.text();
}

// --- adapters ---------------------------------------------------------------

int cmd_serve_masker(const Common& common) {
  const auto cfg = resolve(common);
  const auto failures = adapters::serve_lines(std::cin, std::cout, [&](const adapters::json& req) {
    return adapters::handle_masker_request(req, cfg.masker);
  });
  return failures ? kOther : kOk;
}

int cmd_serve_inpainter(const Common& common) {
  resolve(common);
  const inpaint::MockTextureInpainter inpainter;
  const auto failures = adapters::serve_lines(std::cin, std::cout, [&](const adapters::json& req) {
    return adapters::handle_inpaint_request(req, inpainter);
  });
  return failures ? kOther : kOk;
}

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--config", common.config_file, "key=value configuration file with [sections]");
  cmd->add_option("--set", common.overrides, "override one key, e.g. --set stage1.epochs=5")->allow_extra_args(false);
  cmd->add_option("--workers", common.workers, "scene-parallel workers (overrides run.workers)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Camera-radar fusion segmentation with mask-guided inpainting"};
  app.require_subcommand(1);
  Common common;

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "generate a synthetic corpus");
  add_common(gen_cmd, common);
  gen_cmd->add_option("--out", gen.out, "corpus directory")->required();
  gen_cmd->add_option("--count", gen.count, "number of scenes");
  gen_cmd->add_option("--seed", gen.seed, "corpus seed");
  gen_cmd->add_option("--size", gen.size, "image height and width (multiple of 16)");
  gen_cmd->add_flag("--adverse-only", gen.adverse_only, "corrupt every scene");
  gen_cmd->add_flag("--force", gen.force, "replace a non-empty output directory");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train stage 1 and optionally stage 3");
  add_common(train_cmd, common);
  train_cmd->add_option("--corpus", train.corpus, "corpus directory")->required();
  train_cmd->add_option("--out", train.out, "model directory")->required();
  train_cmd->add_option("--model", train.model, "camera, fusion or full")->capture_default_str();
  train_cmd->add_option("--epochs", train.epochs, "epochs for both stages");

  InferArgs infer;
  auto* infer_cmd = app.add_subcommand("infer", "predict masks for a corpus split");
  add_common(infer_cmd, common);
  infer_cmd->add_option("--corpus", infer.corpus, "corpus directory")->required();
  infer_cmd->add_option("--model", infer.model, "model directory written by train")->required();
  infer_cmd->add_option("--out", infer.out, "prediction directory")->required();
  infer_cmd->add_option("--split", infer.split, "train, val, test or all")->capture_default_str();

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "per-class IoU of predictions against ground truth");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--corpus", eval.corpus, "corpus directory")->required();
  eval_cmd->add_option("--pred", eval.pred, "directory with one subdirectory per scene")->required();
  eval_cmd->add_option("--pred-file", eval.pred_file, "mask stack file name inside each scene directory")
      ->capture_default_str();
  eval_cmd->add_option("--split", eval.split, "train, val, test or all")->capture_default_str();
  eval_cmd->add_option("--subset", eval.subset, "classes in the mIoU line: all, targets or drivable")
      ->capture_default_str();
  eval_cmd->add_option("--out", eval.out, "also write the table to this file");

  AblateArgs ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "run an ablation study");
  add_common(ablate_cmd, common);
  ablate_cmd->add_option("--corpus", ablate.corpus, "corpus directory")->required();
  ablate_cmd->add_option("--out", ablate.out, "report directory")->required();
  ablate_cmd->add_option("--kind", ablate.kind, "methods, sampling, fusion_variants or inpaint_fusion")
      ->capture_default_str();
  ablate_cmd->add_option("--seeds", ablate.seeds, "training seeds (overrides run.ablation_seeds)")->delimiter(',');

  auto* masker_cmd = app.add_subcommand("serve-masker", "answer masker requests on stdin/stdout");
  add_common(masker_cmd, common);
  auto* inpainter_cmd = app.add_subcommand("serve-inpainter", "answer inpainter requests on stdin/stdout");
  add_common(inpainter_cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (gen_cmd->parsed()) cmd_gen(common, gen);
    else if (train_cmd->parsed()) cmd_train(common, train);
    else if (infer_cmd->parsed()) cmd_infer(common, infer);
    else if (eval_cmd->parsed()) cmd_eval(common, eval);
    else if (ablate_cmd->parsed()) cmd_ablate(common, ablate);
    else if (masker_cmd->parsed()) return cmd_serve_masker(common);
    else if (inpainter_cmd->parsed()) return cmd_serve_inpainter(common);
    return kOk;
  } catch (const config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const io::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const io::FormatError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const pipeline::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kDivergence;
  } catch (const numerics::NumericalError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kDivergence;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
}
