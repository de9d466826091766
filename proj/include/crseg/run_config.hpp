#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "crseg/corpus.hpp"
#include "crseg/pipeline.hpp"

// Run configuration files.
//
//   # comment
//   [section]
//   key = value
//
// Every key belongs to a section; a key the schema does not know is an
// error, and so is a key given twice. Lists are comma separated, booleans
// are true/false. resolved_config.txt uses the same syntax and lists every
// key, so it can be fed back with --config to repeat a run.

namespace crseg::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  corpus::CorpusConfig corpus;
  ModelDims dims;
  std::size_t sample_count = 1000;
  pipeline::FusionVariant variant = pipeline::FusionVariant::concatenation;
  pipeline::TrainConfig stage1 = desk_schedule();
  pipeline::TrainConfig stage3 = desk_schedule();
  prompting::RegionGrowMasker masker;
  inpaint::InpaintConfig inpaint;
  double mask_threshold = 0.5;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  std::vector<std::uint64_t> ablation_seeds{1, 2, 3};

  static pipeline::TrainConfig desk_schedule() {
    pipeline::TrainConfig t;
    t.epochs = 30;
    t.lr_initial = 2e-3;
    return t;
  }

  void validate() const {
    try {
      corpus.validate();
      stage1.validate();
      stage3.validate();
      inpaint.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    for (auto c : dims.channels)
      if (c == 0) throw ConfigError("model.channels must be positive");
    if (dims.decoder_width == 0 || dims.classifier_hidden == 0) throw ConfigError("model widths must be positive");
    if (sample_count == 0) throw ConfigError("model.sample_count must be positive");
    if (!(masker.color_tolerance >= 0) || !(masker.max_region_fraction > 0 && masker.max_region_fraction <= 1)) {
      throw ConfigError("masker.color_tolerance must be >= 0 and masker.max_region_fraction in (0, 1]");
    }
    if (!(mask_threshold > 0 && mask_threshold < 1)) throw ConfigError("inpaint.mask_threshold must lie in (0, 1)");
    if (workers == 0) throw ConfigError("run.workers must be positive");
    if (ablation_seeds.empty()) throw ConfigError("run.ablation_seeds must not be empty");
  }

  pipeline::ExperimentConfig experiment() const {
    pipeline::ExperimentConfig e;
    e.dims = dims;
    e.sample_count = sample_count;
    e.stage1 = stage1;
    e.stage3 = stage3;
    e.masker = masker;
    e.inpaint = inpaint;
    e.workers = workers;
    return e;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("bad value '" + text + "' for " + key);
  return v;
}

template <typename T>
std::string format_number(T v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

}  // namespace detail

struct Key {
  std::string name;  // section.key
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

/// The schema: every configurable key bound to a field of `c`.
inline std::vector<Key> schema(RunConfig& c) {
  std::vector<Key> keys;
  const auto number = [&](const std::string& name, auto& field) {
    using T = std::remove_reference_t<decltype(field)>;
    keys.push_back({name, [&field, name](const std::string& s) { field = detail::parse_number<T>(name, s); },
                    [&field] { return detail::format_number(field); }});
  };
  const auto flag = [&](const std::string& name, bool& field) {
    keys.push_back({name,
                    [&field, name](const std::string& s) {
                      if (s == "true" || s == "1") field = true;
                      else if (s == "false" || s == "0") field = false;
                      else throw ConfigError("bad value '" + s + "' for " + name + " (expected true or false)");
                    },
                    [&field] { return std::string(field ? "true" : "false"); }});
  };

  number("corpus.count", c.corpus.count);
  number("corpus.seed", c.corpus.seed);
  number("corpus.height", c.corpus.scene.height);
  number("corpus.width", c.corpus.scene.width);
  number("corpus.min_objects", c.corpus.scene.min_objects);
  number("corpus.max_objects", c.corpus.scene.max_objects);
  number("corpus.waterline_fraction", c.corpus.scene.waterline_fraction);
  number("corpus.sensor_noise", c.corpus.scene.sensor_noise);
  flag("corpus.adverse_only", c.corpus.adverse_only);
  number("corpus.clean_fraction", c.corpus.clean_fraction);
  number("corpus.severity_min", c.corpus.severity_min);
  number("corpus.severity_max", c.corpus.severity_max);

  number("radar.clutter_rate", c.corpus.radar.clutter_rate);
  number("radar.mislocation_sigma", c.corpus.radar.mislocation_sigma);
  number("radar.dropout_prob", c.corpus.radar.dropout_prob);
  number("radar.min_points_per_object", c.corpus.radar.min_points_per_object);
  number("radar.max_points_per_object", c.corpus.radar.max_points_per_object);

  keys.push_back({"model.channels",
                  [&c](const std::string& s) {
                    const auto items = detail::split_list(s);
                    if (items.size() != kLevels) throw ConfigError("model.channels needs four comma-separated values");
                    for (std::size_t i = 0; i < kLevels; ++i)
                      c.dims.channels[i] = detail::parse_number<std::size_t>("model.channels", items[i]);
                  },
                  [&c] {
                    std::string s;
                    for (std::size_t i = 0; i < kLevels; ++i) s += (i ? "," : "") + std::to_string(c.dims.channels[i]);
                    return s;
                  }});
  number("model.decoder_width", c.dims.decoder_width);
  number("model.classifier_hidden", c.dims.classifier_hidden);
  number("model.sample_count", c.sample_count);
  keys.push_back({"model.fusion",
                  [&c](const std::string& s) {
                    try {
                      c.variant = pipeline::parse_variant(s);
                    } catch (const std::invalid_argument& e) {
                      throw ConfigError(e.what());
                    }
                  },
                  [&c] { return std::string(pipeline::to_string(c.variant)); }});

  for (auto* t : {&c.stage1, &c.stage3}) {
    const std::string s = t == &c.stage1 ? "stage1." : "stage3.";
    number(s + "epochs", t->epochs);
    number(s + "batch_size", t->batch_size);
    number(s + "lr_initial", t->lr_initial);
    number(s + "lr_final", t->lr_final);
    number(s + "weight_decay", t->weight_decay);
    number(s + "lambda_seg", t->lambda_seg);
    if (t == &c.stage1) number(s + "lambda_cls", t->lambda_cls);
    number(s + "seg_ce_weight", t->seg_ce_weight);
    flag(s + "eval_each_epoch", t->eval_each_epoch);
  }

  number("masker.color_tolerance", c.masker.color_tolerance);
  number("masker.max_region_fraction", c.masker.max_region_fraction);

  number("inpaint.guidance_scale", c.inpaint.guidance_scale);
  number("inpaint.inference_steps", c.inpaint.inference_steps);
  number("inpaint.seed", c.inpaint.seed);
  number("inpaint.mask_threshold", c.mask_threshold);

  number("run.seed", c.seed);
  number("run.workers", c.workers);
  keys.push_back({"run.ablation_seeds",
                  [&c](const std::string& s) {
                    c.ablation_seeds.clear();
                    for (const auto& item : detail::split_list(s))
                      c.ablation_seeds.push_back(detail::parse_number<std::uint64_t>("run.ablation_seeds", item));
                  },
                  [&c] {
                    std::string s;
                    for (std::size_t i = 0; i < c.ablation_seeds.size(); ++i)
                      s += (i ? "," : "") + std::to_string(c.ablation_seeds[i]);
                    return s;
                  }});
  return keys;
}

/// Sets one key. Throws ConfigError for an unknown key or a bad value.
inline void set_key(RunConfig& c, const std::string& name, const std::string& value) {
  for (auto& k : schema(c)) {
    if (k.name == name) {
      k.set(value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + name + "'");
}

/// Applies "section.key=value".
inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  set_key(c, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

inline void apply_config(RunConfig& c, std::istream& in, const std::string& source = "config") {
  std::string line, section;
  std::map<std::string, std::size_t> seen;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    const auto where = source + ":" + std::to_string(line_no) + ": ";
    line = detail::trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    if (section.empty()) throw ConfigError(where + "key outside of any [section]");
    const auto name = section + "." + detail::trim(line.substr(0, eq));
    if (auto [it, fresh] = seen.emplace(name, line_no); !fresh) {
      throw ConfigError(where + name + " already set on line " + std::to_string(it->second));
    }
    try {
      set_key(c, name, detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

inline void load_config(RunConfig& c, const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw io::IoError("cannot read config " + p.string());
  apply_config(c, in, p.string());
}

inline void write_config(std::ostream& out, const RunConfig& config) {
  auto copy = config;
  std::string section;
  for (const auto& k : schema(copy)) {
    const auto dot = k.name.find('.');
    const auto s = k.name.substr(0, dot);
    if (s != section) {
      out << (section.empty() ? "" : "\n") << "[" << s << "]\n";
      section = s;
    }
    out << k.name.substr(dot + 1) << " = " << k.get() << "\n";
  }
}

inline std::string to_text(const RunConfig& c) {
  std::ostringstream out;
  write_config(out, c);
  return out.str();
}

}  // namespace crseg::config
