#pragma once

// Run configuration: a flat INI-style file of typed `key = value` entries
// grouped under [section] headers. Unknown sections or keys are errors.
//
//   [run]
//   seed = 7
//   [contrastive]
//   epochs = 20
//
// Synthetic classes are declared by name and configured with
// `class.<name>.<field>` keys in [synthetic]. Relative paths resolve against
// the config file's directory.

#include <charconv>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eegclip/contrastive.hpp"
#include "eegclip/data_io.hpp"
#include "eegclip/dataset.hpp"
#include "eegclip/evaluation.hpp"
#include "eegclip/interpretability.hpp"

namespace eegclip {

struct EvalConfig {
  std::vector<Task> tasks = {Task::Pathological, Task::Age, Task::Gender, Task::Medication};
  ProbeConfig probe;
  std::size_t n_seeds = 10;
};

struct BaselineRunConfig {
  BaselineConfig train;
  std::vector<BaselineKind> kinds = {BaselineKind::TaskSpecific, BaselineKind::AlternativeTask};
  std::string alt_task = "random";  // a task name, or "random"
  std::size_t n_seeds = 1;
};

struct InterpretConfig {
  GradientMode mode = GradientMode::Magnitude;
  std::size_t max_windows = 0;  // 0 = every eval window
  std::vector<std::pair<std::string, Band>> bands = {
      {"delta", {0.5, 4, true}}, {"theta", {4, 8, false}}, {"alpha", {8, 14, false}},
      {"beta", {14, 30, false}}};
};

struct RunConfig {
  std::uint64_t seed = 0;
  fs::path manifest;
  SyntheticSpec synthetic;
  PipelineConfig pipeline;
  ModelSpec model;
  ContrastiveConfig contrastive;
  SplitMode split_mode = SplitMode::FewShot;
  std::vector<Fraction> fractions = default_fractions();
  EvalConfig eval;
  BaselineRunConfig baseline;
  std::map<Task, PromptPair> prompts;  // overrides of the built-in prompt pairs
  InterpretConfig interpret;

  PromptPair prompts_for(Task t) const {
    const auto it = prompts.find(t);
    return it != prompts.end() ? it->second : build_prompts(t);
  }

  // Per-stage seeds, all derived from the one run seed.
  std::uint64_t stage_seed(std::string_view stage) const { return derive_seed(seed, stage); }

  void validate() const {
    try {
      pipeline.preprocess.validate();
      pipeline.window.validate();
      model.deep4.validate();
      contrastive.validate();
      if (model.deep4.input_samples != pipeline.window.length_samples)
        throw ConfigError("deep4 input length (" + std::to_string(model.deep4.input_samples) +
                          ") must equal window.length (" +
                          std::to_string(pipeline.window.length_samples) + ")");
      if (model.deep4.n_channels != pipeline.preprocess.channel_subset.size())
        throw ConfigError("deep4 channel count must match the preprocess channel list");
      if (model.shared_dim == 0) throw ConfigError("projection.shared_dim must be positive");
      if (eval.n_seeds == 0) throw ConfigError("eval.n_seeds must be positive");
    } catch (const ConfigError&) {
      throw;
    } catch (const ValidationError& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace detail {

inline std::string_view cfg_trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> cfg_list(std::string_view v) {
  std::vector<std::string> out;
  for (auto part : split(v, ',')) {
    const auto t = cfg_trim(part);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

class ConfigReader {
 public:
  using Setter = std::function<void(std::string_view)>;

  void on(const std::string& key, Setter s) { setters_[key] = std::move(s); }

  template <class T>
  void number(const std::string& key, T& target) {
    on(key, [&target, key](std::string_view v) {
      if (!parse_number(v, target)) throw ConfigError(key + ": expected a number, got '" + std::string(v) + "'");
    });
  }

  void boolean(const std::string& key, bool& target) {
    on(key, [&target, key](std::string_view v) {
      if (v == "true" || v == "1" || v == "yes") target = true;
      else if (v == "false" || v == "0" || v == "no") target = false;
      else throw ConfigError(key + ": expected true or false, got '" + std::string(v) + "'");
    });
  }

  void text(const std::string& key, std::string& target) {
    on(key, [&target](std::string_view v) { target = std::string(v); });
  }

  bool apply(const std::string& key, std::string_view value) const {
    const auto it = setters_.find(key);
    if (it == setters_.end()) return false;
    it->second(value);
    return true;
  }

 private:
  std::map<std::string, Setter> setters_;
};

}  // namespace detail

inline RunConfig parse_run_config(std::string_view text, const fs::path& base_dir = {}) {
  RunConfig cfg;
  detail::ConfigReader r;
  std::map<std::string, SyntheticClass> classes;
  std::vector<std::string> class_order = {"slow", "fast"};
  classes["slow"] = {"slow", 6.0, 2.0, "Slow rhythmic activity is present. slow-template."};
  classes["fast"] = {"fast", 20.0, 2.0, "Fast beta activity is present. fast-template."};
  const auto resolve = [&](std::string_view v) {
    fs::path p{std::string(v)};
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  };

  r.number("run.seed", cfg.seed);
  r.on("data.manifest", [&](std::string_view v) { cfg.manifest = resolve(v); });

  auto& syn = cfg.synthetic;
  syn.n_recordings = 200;
  syn.duration_s = 180;
  syn.noise_sigma = 20;
  r.number("synthetic.n_recordings", syn.n_recordings);
  r.number("synthetic.n_channels", syn.n_channels);
  r.number("synthetic.rate_hz", syn.rate_hz);
  r.number("synthetic.duration_s", syn.duration_s);
  r.number("synthetic.noise_sigma", syn.noise_sigma);
  r.number("synthetic.noise_cutoff_hz", syn.noise_cutoff_hz);
  r.number("synthetic.medication_rate", syn.medication_rate);
  r.on("synthetic.tone_channels", [&](std::string_view v) {
    syn.tone_channels.clear();
    for (const auto& s : detail::cfg_list(v)) {
      std::size_t c;
      if (!detail::parse_number(s, c)) throw ConfigError("synthetic.tone_channels: bad index '" + s + "'");
      syn.tone_channels.push_back(c);
    }
  });
  r.on("synthetic.classes", [&](std::string_view v) {
    class_order = detail::cfg_list(v);
    for (const auto& n : class_order)
      if (!classes.count(n)) classes[n] = {n, 0.0, 0.0, n};
  });

  auto& pre = cfg.pipeline.preprocess;
  r.on("preprocess.channels", [&](std::string_view v) { pre.channel_subset = detail::cfg_list(v); });
  r.number("preprocess.skip_s", pre.skip_s);
  r.number("preprocess.keep_s", pre.keep_s);
  r.number("preprocess.clip_uv", pre.clip_uv);
  r.number("preprocess.target_rate_hz", pre.target_rate_hz);
  r.number("preprocess.scale_divisor", pre.scale_divisor);
  r.number("window.length", cfg.pipeline.window.length_samples);
  r.number("window.stride", cfg.pipeline.window.stride_samples);

  r.on("report.sections", [&](std::string_view v) {
    if (v == "all") {
      cfg.pipeline.sections = SectionSelection::all();
      return;
    }
    std::vector<Section> names;
    for (const auto& n : detail::cfg_list(v)) {
      const auto s = section_from_name(n);
      if (!s) throw ConfigError("report.sections: unknown section '" + n + "'");
      names.push_back(*s);
    }
    cfg.pipeline.sections = SectionSelection::subset(names);
  });
  r.on("report.medication_scope", [&](std::string_view v) {
    if (v == "whole_report") cfg.pipeline.medication_scope = MedicationScope::WholeReport;
    else if (v == "medications_section") cfg.pipeline.medication_scope = MedicationScope::MedicationsSection;
    else throw ConfigError("report.medication_scope: expected whole_report or medications_section");
  });

  auto& d4 = cfg.model.deep4;
  r.on("deep4.filters", [&](std::string_view v) {
    d4.block_filters.clear();
    for (const auto& s : detail::cfg_list(v)) {
      std::size_t f;
      if (!detail::parse_number(s, f)) throw ConfigError("deep4.filters: bad count '" + s + "'");
      d4.block_filters.push_back(f);
    }
  });
  r.number("deep4.kernel", d4.temporal_kernel);
  r.number("deep4.pool_size", d4.pool_size);
  r.number("deep4.pool_stride", d4.pool_stride);
  r.number("deep4.dropout", d4.dropout_p);
  r.number("deep4.embedding_dim", d4.embedding_dim);
  r.number("deep4.batch_norm_momentum", d4.batch_norm_momentum);

  auto& tx = cfg.model.text;
  r.on("text.encoder", [&](std::string_view v) {
    if (v != "hashed" && v != "external") throw ConfigError("text.encoder: expected hashed or external");
    tx.kind = std::string(v);
  });
  r.number("text.dim", tx.output_dim);
  r.number("text.max_tokens", tx.max_tokens);
  r.number("text.hash_seed", tx.hash_seed);
  r.text("text.command", tx.command);
  r.text("text.model_name", tx.model_name);
  r.number("projection.shared_dim", cfg.model.shared_dim);

  const auto schedule = [](std::string_view v) {
    if (v == "cosine") return true;
    if (v == "constant") return false;
    throw ConfigError("lr_schedule must be cosine or constant, got '" + std::string(v) + "'");
  };
  auto& cc = cfg.contrastive;
  r.number("contrastive.temperature", cc.temperature);
  r.boolean("contrastive.learnable_temperature", cc.learnable_temperature);
  r.number("contrastive.temperature_min", cc.temperature_min);
  r.number("contrastive.temperature_max", cc.temperature_max);
  r.boolean("contrastive.symmetric", cc.symmetric);
  r.number("contrastive.batch_size", cc.batch_size);
  r.number("contrastive.epochs", cc.epochs);
  r.number("contrastive.lr", cc.lr);
  r.number("contrastive.weight_decay", cc.weight_decay);
  r.number("contrastive.text_lr_ratio", cc.text_lr_ratio);
  r.number("contrastive.warmup_epochs", cc.warmup_epochs);
  r.on("contrastive.lr_schedule", [&](std::string_view v) { cc.cosine_schedule = schedule(v); });

  r.on("split.mode", [&](std::string_view v) {
    try {
      cfg.split_mode = split_mode_from_name(v);
    } catch (const ValidationError& e) {
      throw ConfigError(e.what());
    }
  });
  r.on("split.fractions", [&](std::string_view v) {
    cfg.fractions.clear();
    for (const auto& s : detail::cfg_list(v)) {
      try {
        cfg.fractions.push_back(Fraction::parse(s));
      } catch (const ValidationError& e) {
        throw ConfigError(std::string("split.fractions: ") + e.what());
      }
    }
  });

  const auto tasks_from = [](std::string_view v) {
    std::vector<Task> out;
    for (const auto& s : detail::cfg_list(v)) {
      try {
        out.push_back(task_from_name(s));
      } catch (const ValidationError& e) {
        throw ConfigError(e.what());
      }
    }
    return out;
  };
  r.on("eval.tasks", [&](std::string_view v) { cfg.eval.tasks = tasks_from(v); });
  r.on("eval.probe", [&](std::string_view v) {
    try {
      cfg.eval.probe.kind = probe_kind_from_name(v);
    } catch (const ValidationError& e) {
      throw ConfigError(e.what());
    }
  });
  r.number("eval.n_seeds", cfg.eval.n_seeds);
  r.number("eval.mlp_lr", cfg.eval.probe.mlp_lr);
  r.number("eval.mlp_max_epochs", cfg.eval.probe.mlp_max_epochs);
  r.number("eval.mlp_patience", cfg.eval.probe.mlp_patience);
  r.number("eval.logreg_l2", cfg.eval.probe.logreg_l2);

  auto& bl = cfg.baseline;
  r.number("baseline.epochs", bl.train.epochs);
  r.number("baseline.batch_size", bl.train.batch_size);
  r.number("baseline.lr", bl.train.lr);
  r.number("baseline.weight_decay", bl.train.weight_decay);
  r.number("baseline.warmup_epochs", bl.train.warmup_epochs);
  r.on("baseline.lr_schedule", [&](std::string_view v) { bl.train.cosine_schedule = schedule(v); });
  r.number("baseline.n_seeds", bl.n_seeds);
  r.on("baseline.kinds", [&](std::string_view v) {
    bl.kinds.clear();
    for (const auto& s : detail::cfg_list(v)) {
      try {
        bl.kinds.push_back(baseline_kind_from_name(s));
      } catch (const ValidationError& e) {
        throw ConfigError(e.what());
      }
    }
  });
  r.on("baseline.alt_task", [&](std::string_view v) {
    if (v != "random") tasks_from(v);
    bl.alt_task = std::string(v);
  });

  for (auto t : kAllTasks) {
    const std::string name(task_name(t));
    r.on("prompts." + name + ".a", [&cfg, t](std::string_view v) {
      auto& p = cfg.prompts.try_emplace(t, build_prompts(t)).first->second;
      p.a = std::string(v);
    });
    r.on("prompts." + name + ".b", [&cfg, t](std::string_view v) {
      auto& p = cfg.prompts.try_emplace(t, build_prompts(t)).first->second;
      p.b = std::string(v);
    });
  }

  r.on("interpret.mode", [&](std::string_view v) {
    try {
      cfg.interpret.mode = gradient_mode_from_name(v);
    } catch (const ValidationError& e) {
      throw ConfigError(e.what());
    }
  });
  r.number("interpret.max_windows", cfg.interpret.max_windows);

  std::string section;
  std::size_t line_no = 0;
  for (auto raw : detail::split(text, '\n')) {
    ++line_no;
    const auto line = detail::cfg_trim(raw);
    const auto where = [&] { return "config line " + std::to_string(line_no) + ": "; };
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where() + "malformed section header");
      section = std::string(detail::cfg_trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where() + "expected key = value");
    const std::string key(detail::cfg_trim(line.substr(0, eq)));
    const auto value = detail::cfg_trim(line.substr(eq + 1));
    if (section.empty()) throw ConfigError(where() + "key '" + key + "' outside any section");
    const std::string full = section + "." + key;
    try {
      if (section == "synthetic" && key.rfind("class.", 0) == 0) {
        const auto parts = detail::split(key, '.');
        if (parts.size() != 3) throw ConfigError("expected class.<name>.<field>");
        auto& c = classes.try_emplace(std::string(parts[1])).first->second;
        c.name = std::string(parts[1]);
        if (parts[2] == "center_hz") {
          if (!detail::parse_number(value, c.center_hz)) throw ConfigError("center_hz: expected a number");
        } else if (parts[2] == "amplitude_uv") {
          if (!detail::parse_number(value, c.amplitude_uv)) throw ConfigError("amplitude_uv: expected a number");
        } else if (parts[2] == "report") {
          c.report_template = std::string(value);
        } else {
          throw ConfigError("unknown key '" + full + "'");
        }
        continue;
      }
      if (!r.apply(full, value)) throw ConfigError("unknown key '" + full + "'");
    } catch (const ConfigError& e) {
      throw ConfigError(where() + e.what());
    } catch (const ValidationError& e) {
      throw ConfigError(where() + e.what());
    }
  }

  syn.classes.clear();
  for (const auto& n : class_order) syn.classes.push_back(classes.at(n));
  for (const auto& [n, c] : classes)
    if (std::find(class_order.begin(), class_order.end(), n) == class_order.end())
      throw ConfigError("synthetic class '" + n + "' is configured but not listed in synthetic.classes");
  syn.seed = cfg.stage_seed("synthetic");
  cfg.contrastive.seed = cfg.stage_seed("contrastive");
  cfg.eval.probe.seed = cfg.stage_seed("probe");
  cfg.model.deep4.n_channels = cfg.pipeline.preprocess.channel_subset.size();
  cfg.model.deep4.input_samples = cfg.pipeline.window.length_samples;
  cfg.validate();
  return cfg;
}

inline RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: '" + path.string() + "'");
  return parse_run_config(detail::read_text_file(path), fs::absolute(path).parent_path());
}

}  // namespace eegclip
