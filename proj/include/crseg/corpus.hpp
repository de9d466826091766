#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "crseg/io/formats.hpp"
#include "crseg/synth_scenes.hpp"

// Corpus directory layout:
//
//   <dir>/manifest.txt
//   <dir>/scenes/<id>/image.ppm
//   <dir>/scenes/<id>/radar.txt
//   <dir>/scenes/<id>/gt.maskstack
//
// manifest.txt starts with "# crseg-manifest v1" followed by one line
// per scene:
//   scene <id> split=<train|val|test> seed=<u64> corruption=<mode> severity=<real> corruption_seed=<u64>

namespace crseg::corpus {

enum class Split { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw io::FormatError("unknown split '" + s + "'");
}

/// Scene i goes to train for i mod 10 in 0..6, val for 7..8, test for 9.
inline Split split_for_index(std::size_t i) {
  const std::size_t r = i % 10;
  return r < 7 ? Split::train : (r < 9 ? Split::val : Split::test);
}

struct CorpusConfig {
  std::size_t count = 200;
  std::uint64_t seed = 0;
  synth::SceneConfig scene;
  synth::RadarNoiseConfig radar;
  bool adverse_only = false;
  double clean_fraction = 0.5;  // share of uncorrupted scenes when adverse_only is off
  double severity_min = 0.4;
  double severity_max = 1.0;

  void validate() const {
    if (count == 0) throw std::invalid_argument("corpus count must be positive");
    scene.validate();
    radar.validate();
    if (!(clean_fraction >= 0 && clean_fraction <= 1)) throw std::invalid_argument("clean_fraction must lie in [0, 1]");
    if (!(severity_min >= 0 && severity_min <= severity_max && severity_max <= 1)) {
      throw std::invalid_argument("severity range must satisfy 0 <= min <= max <= 1");
    }
  }
};

struct ManifestEntry {
  std::string id;
  Split split = Split::train;
  std::uint64_t seed = 0;
  synth::CorruptionConfig corruption;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Corpus {
  std::vector<ManifestEntry> entries;
  std::vector<synth::Scene> scenes;  // parallel to entries

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].split == s) out.push_back(i);
    return out;
  }
};

inline std::string scene_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%05zu", index);
  return buf;
}

/// Deterministic manifest: per-scene seeds and corruptions derive from cfg.seed.
inline std::vector<ManifestEntry> plan_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(inpaint::splitmix64(cfg.seed ^ 0xC0A9F5ULL));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> adverse(1, 4);
  std::vector<ManifestEntry> out;
  for (std::size_t i = 0; i < cfg.count; ++i) {
    ManifestEntry e;
    e.id = scene_id(i);
    e.split = split_for_index(i);
    e.seed = rng();
    const bool clean = !cfg.adverse_only && unit(rng) < cfg.clean_fraction;
    const int mode = adverse(rng);
    e.corruption.mode = clean ? synth::CorruptionMode::none : static_cast<synth::CorruptionMode>(mode);
    const double sev = cfg.severity_min + unit(rng) * (cfg.severity_max - cfg.severity_min);
    e.corruption.severity = clean ? 0.0 : sev;
    e.corruption.seed = rng();
    out.push_back(e);
  }
  return out;
}

/// Renders one manifest entry. Images are quantised to 8 bits so that an
/// in-memory corpus equals the one read back from disk.
inline synth::Scene render_entry(const CorpusConfig& cfg, const ManifestEntry& e) {
  synth::SceneConfig sc = cfg.scene;
  sc.seed = e.seed;
  synth::Scene s = synth::generate_scene(sc, cfg.radar, e.corruption);
  s.id = e.id;
  s.radar.frame_id = e.id;
  s.image = io::quantize(s.image);
  return s;
}

inline Corpus generate_corpus(const CorpusConfig& cfg) {
  Corpus c;
  c.entries = plan_corpus(cfg);
  for (const auto& e : c.entries) c.scenes.push_back(render_entry(cfg, e));
  return c;
}

// --- manifest ---------------------------------------------------------------

inline constexpr const char* kManifestHeader = "# crseg-manifest v1";

inline void write_manifest(std::ostream& out, const std::vector<ManifestEntry>& entries) {
  out << kManifestHeader << '\n';
  for (const auto& e : entries) {
    out << "scene " << e.id << " split=" << to_string(e.split) << " seed=" << e.seed
        << " corruption=" << synth::to_string(e.corruption.mode) << " severity=" << io::format_double(e.corruption.severity)
        << " corruption_seed=" << e.corruption.seed << '\n';
  }
}

inline std::vector<ManifestEntry> read_manifest(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) throw io::FormatError("manifest: missing header line");
  std::vector<ManifestEntry> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    ManifestEntry e;
    ls >> tag >> e.id;
    if (tag != "scene" || e.id.empty()) throw io::FormatError("manifest line " + std::to_string(line_no) + ": expected 'scene <id>'");
    std::string kv;
    int seen = 0;
    while (ls >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw io::FormatError("manifest line " + std::to_string(line_no) + ": bad field '" + kv + "'");
      const std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
      try {
        if (k == "split") e.split = parse_split(v);
        else if (k == "seed") e.seed = std::stoull(v);
        else if (k == "corruption") e.corruption.mode = synth::parse_corruption(v);
        else if (k == "severity") e.corruption.severity = std::stod(v);
        else if (k == "corruption_seed") e.corruption.seed = std::stoull(v);
        else throw io::FormatError("unknown field '" + k + "'");
      } catch (const std::exception& ex) {
        throw io::FormatError("manifest line " + std::to_string(line_no) + ": " + ex.what());
      }
      ++seen;
    }
    if (seen != 5) throw io::FormatError("manifest line " + std::to_string(line_no) + ": expected 5 fields");
    out.push_back(e);
  }
  return out;
}

// --- directories ------------------------------------------------------------

inline std::filesystem::path scene_dir(const std::filesystem::path& root, const std::string& id) {
  return root / "scenes" / id;
}

inline void write_scene(const std::filesystem::path& root, const synth::Scene& s) {
  const auto dir = scene_dir(root, s.id);
  std::filesystem::create_directories(dir);
  io::save_ppm(dir / "image.ppm", s.image);
  io::save_radar(dir / "radar.txt", s.radar);
  io::save_maskstack(dir / "gt.maskstack", s.gt);
}

inline void write_corpus(const std::filesystem::path& root, const Corpus& c) {
  std::filesystem::create_directories(root / "scenes");
  for (const auto& s : c.scenes) write_scene(root, s);
  auto out = io::detail::open_out(root / "manifest.txt", false);
  write_manifest(out, c.entries);
}

inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& root) {
  auto in = io::detail::open_in(root / "manifest.txt", false);
  try {
    return read_manifest(in);
  } catch (const io::FormatError& e) {
    throw io::FormatError((root / "manifest.txt").string() + ": " + e.what());
  }
}

inline synth::Scene load_scene(const std::filesystem::path& root, const ManifestEntry& e) {
  const auto dir = scene_dir(root, e.id);
  synth::Scene s;
  s.id = e.id;
  s.image = io::load_ppm(dir / "image.ppm");
  s.radar = io::load_radar(dir / "radar.txt", e.id);
  s.gt = io::load_maskstack(dir / "gt.maskstack");
  s.camera = radar::CameraModel::for_image(s.image.height, s.image.width);
  s.corruption = e.corruption;
  if (s.gt.height() != s.image.height || s.gt.width() != s.image.width) {
    throw io::FormatError(dir.string() + ": ground truth and image sizes differ");
  }
  return s;
}

inline Corpus load_corpus(const std::filesystem::path& root) {
  Corpus c;
  c.entries = load_manifest(root);
  for (const auto& e : c.entries) c.scenes.push_back(load_scene(root, e));
  return c;
}

}  // namespace crseg::corpus
