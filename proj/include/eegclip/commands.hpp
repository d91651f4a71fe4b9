#pragma once

// The command-line pipelines. Every output goes under the context's `out`
// directory.

#include <cblas.h>

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eegclip/config.hpp"
#include "eegclip/contrastive.hpp"
#include "eegclip/data_io.hpp"
#include "eegclip/dataset.hpp"
#include "eegclip/evaluation.hpp"
#include "eegclip/interpretability.hpp"
#include "eegclip/model_io.hpp"
#include "eegclip/plot.hpp"

namespace eegclip {

struct CommandContext {
  RunConfig cfg;
  std::string config_text;  // snapshot stored next to trained models
  fs::path out;
  bool deterministic = false;
  std::function<void(const std::string&)> log;  // progress and warnings

  void info(const std::string& msg) const {
    if (log) log(msg);
  }
};

enum class Regime { Probe, ZeroShot, FewShot, Baseline };

inline Regime regime_from_name(std::string_view s) {
  if (s == "probe") return Regime::Probe;
  if (s == "zero_shot") return Regime::ZeroShot;
  if (s == "few_shot") return Regime::FewShot;
  if (s == "baseline") return Regime::Baseline;
  throw ConfigError("unknown regime '" + std::string(s) + "' (expected probe, zero_shot, few_shot or baseline)");
}

inline std::string_view regime_name(Regime r) {
  switch (r) {
    case Regime::Probe: return "probe";
    case Regime::ZeroShot: return "zero_shot";
    case Regime::FewShot: return "few_shot";
    case Regime::Baseline: return "baseline";
  }
  return "?";
}

namespace detail {

inline void prepare_out(const CommandContext& ctx) {
  if (ctx.out.empty()) throw ConfigError("an output directory is required");
  fs::create_directories(ctx.out);
  if (ctx.deterministic) openblas_set_num_threads(1);
}

inline std::vector<PreparedRecording> load_corpus(const CommandContext& ctx) {
  if (ctx.cfg.manifest.empty()) throw ConfigError("data.manifest is not set");
  const auto refs = load_manifest(ctx.cfg.manifest);
  auto corpus = prepare_manifest(refs, ctx.cfg.pipeline, [&](const std::string& w) { ctx.info("warning: " + w); });
  if (corpus.empty()) throw ValidationError("no usable recordings after preprocessing");
  return corpus;
}

inline SplitPlan plan_for(const CommandContext& ctx, const std::vector<PreparedRecording>& corpus) {
  return make_split_plan(corpus, ctx.cfg.split_mode, ctx.cfg.fractions, ctx.cfg.stage_seed("split"));
}

inline nlohmann::json split_json(const SplitPlan& p) {
  nlohmann::json j;
  j["mode"] = split_mode_name(p.mode);
  j["seed"] = p.seed;
  j["contrastive_train_ids"] = p.contrastive_train_ids;
  j["task_train_ids"] = p.task_train_ids;
  j["eval_ids"] = p.eval_ids;
  auto& fs_ = j["fraction_subsets"] = nlohmann::json::object();
  for (std::size_t i = 0; i < p.fractions.size(); ++i) fs_[p.fractions[i].str()] = p.fraction_subsets[i];
  return j;
}

inline TextEncoderSpec text_spec_for(const CommandContext& ctx, TextEncoderSpec spec) {
  if (spec.kind == "external") spec.scratch_dir = (ctx.out / ".text_scratch").string();
  return spec;
}

inline TrainedModel load_for(const CommandContext& ctx, const fs::path& model_dir) {
  return load_model(model_dir, nullptr, (ctx.out / ".text_scratch").string());
}

inline void write_records(const fs::path& path, const std::vector<TaskMetrics>& rows) {
  std::string text;
  for (const auto& m : rows) text += metrics_record(m) + "\n";
  write_text_file(path, text);
}

}  // namespace detail

// Writes a synthetic corpus and its manifest; returns the manifest path.
inline fs::path cmd_synth(const CommandContext& ctx) {
  detail::prepare_out(ctx);
  const auto corpus = generate_synthetic_corpus(ctx.cfg.synthetic);
  const fs::path dir = ctx.out / "recordings";
  fs::create_directories(dir);
  std::vector<RecordingRef> refs;
  for (const auto& rec : corpus) refs.push_back(write_recording(rec, dir));
  const fs::path manifest = ctx.out / "manifest.tsv";
  write_manifest(refs, manifest);
  ctx.info("wrote " + std::to_string(refs.size()) + " recordings to " + dir.string());
  return manifest;
}

struct TrainOutcome {
  fs::path model_dir;
  TrainedModel model;
  SplitPlan split;
};

// Trains on the contrastive split and saves the model into `out`.
inline TrainOutcome cmd_train(const CommandContext& ctx) {
  detail::prepare_out(ctx);
  const auto corpus = detail::load_corpus(ctx);
  const auto split = detail::plan_for(ctx, corpus);
  const auto train_idx = indices_of(corpus, split.contrastive_train_ids);
  ModelSpec spec = ctx.cfg.model;
  spec.text = detail::text_spec_for(ctx, spec.text);
  const auto& cc = ctx.cfg.contrastive;
  ctx.info("training on " + std::to_string(train_idx.size()) + " recordings (" +
           std::to_string(all_windows(corpus, train_idx).size()) + " windows)");
  auto trained = train(corpus, train_idx, spec, make_text_encoder(spec.text), cc, [&](const EpochLog& e) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "epoch %zu/%zu  loss %.5f  %.1f s", e.epoch, cc.epochs, e.mean_loss,
                  e.wall_time_s);
    ctx.info(buf);
  });
  save_model(trained.model, ctx.out);
  write_train_log(trained.log, ctx.out / "train_log.tsv");
  detail::write_text_file(ctx.out / "split.json", detail::split_json(split).dump(1) + "\n");
  detail::write_text_file(ctx.out / "config_snapshot.ini", ctx.config_text);
  plot::Series loss{"train", {}, {}, {}, {}};
  for (const auto& e : trained.log) {
    loss.x.push_back(double(e.epoch));
    loss.y.push_back(e.mean_loss);
  }
  detail::write_text_file(ctx.out / "train_loss.svg",
                          plot::line_plot_svg({loss}, "Contrastive training loss", "epoch", "mean loss"));
  if (fs::exists(ctx.out / ".text_scratch")) fs::remove_all(ctx.out / ".text_scratch");
  return {ctx.out, std::move(trained), split};
}

struct EvalOutcome {
  std::vector<TaskMetrics> records;
  std::vector<TaskMetrics> summary;
};

inline EvalOutcome cmd_eval(const CommandContext& ctx, const fs::path& model_dir, Regime regime) {
  detail::prepare_out(ctx);
  const auto loaded = detail::load_for(ctx, model_dir);
  const auto corpus = detail::load_corpus(ctx);
  const auto split = detail::plan_for(ctx, corpus);
  const auto train_idx = indices_of(corpus, split.task_train_ids);
  const auto eval_idx = indices_of(corpus, split.eval_ids);
  const auto& cfg = ctx.cfg;
  const std::uint64_t checksum = parameter_checksum(const_cast<ClipModel<float>&>(loaded.model).all_params());

  EvalOutcome res;
  const auto& m = loaded.model;
  switch (regime) {
    case Regime::Probe: {
      const auto train_t = embed_corpus(m, corpus, train_idx);
      const auto eval_t = embed_corpus(m, corpus, eval_idx);
      for (auto task : cfg.eval.tasks) {
        try {
          const auto p = fit_probe_on(train_t, corpus, train_idx, task, cfg.eval.probe);
          res.records.push_back(evaluate_probe(p, eval_t, corpus, eval_idx, task));
        } catch (const ValidationError& e) {
          ctx.info("skipping task " + std::string(task_name(task)) + ": " + e.what());
        }
      }
      res.summary = res.records;
      break;
    }
    case Regime::ZeroShot: {
      const auto eval_t = project_corpus(m, corpus, eval_idx);
      for (auto task : cfg.eval.tasks) {
        try {
          res.records.push_back(evaluate_zero_shot(m, eval_t, corpus, eval_idx, task, cfg.prompts_for(task)));
        } catch (const ValidationError& e) {
          ctx.info("skipping task " + std::string(task_name(task)) + ": " + e.what());
        }
      }
      res.summary = res.records;
      break;
    }
    case Regime::FewShot: {
      if (split.mode != SplitMode::FewShot) throw ConfigError("few_shot regime needs split.mode = fewshot");
      const auto train_t = embed_corpus(m, corpus, train_idx);
      const auto eval_t = embed_corpus(m, corpus, eval_idx);
      for (auto task : cfg.eval.tasks) {
        const auto sweep = few_shot_sweep(train_t, eval_t, corpus, task, split, cfg.fractions,
                                          cfg.eval.n_seeds, cfg.eval.probe);
        for (const auto& [f, s] : sweep.missing)
          ctx.info("few-shot cell " + std::string(task_name(task)) + " " + f.str() + " seed " +
                   std::to_string(s) + " has a single class; recorded as missing");
        res.records.insert(res.records.end(), sweep.cells.begin(), sweep.cells.end());
        res.summary.insert(res.summary.end(), sweep.summary.begin(), sweep.summary.end());
        std::string csv = "fraction,fraction_value,median,ci80_low,ci80_high,n_cells\n";
        plot::Series line{std::string(task_name(task)), {}, {}, {}, {}};
        for (const auto& row : sweep.summary) {
          std::size_t n_cells = 0;
          for (const auto& c : sweep.cells) n_cells += c.fraction && *c.fraction == *row.fraction;
          const double lo = row.ci80 ? row.ci80->first : row.balanced_accuracy;
          const double hi = row.ci80 ? row.ci80->second : row.balanced_accuracy;
          char buf[160];
          std::snprintf(buf, sizeof buf, "%s,%.6g,%.6f,%.6f,%.6f,%zu\n", row.fraction->str().c_str(),
                        row.fraction->value(), row.balanced_accuracy, lo, hi, n_cells);
          csv += buf;
          line.x.push_back(row.fraction->value());
          line.y.push_back(row.balanced_accuracy);
          line.lo.push_back(lo);
          line.hi.push_back(hi);
        }
        const std::string stem = "few_shot_" + std::string(task_name(task));
        detail::write_text_file(ctx.out / (stem + ".csv"), csv);
        detail::write_text_file(ctx.out / (stem + ".svg"),
                                plot::line_plot_svg({line}, "Few-shot " + std::string(task_name(task)),
                                                    "fraction of task-train data", "balanced accuracy", true));
      }
      break;
    }
    case Regime::Baseline: {
      const auto& bl = cfg.baseline;
      for (auto task : cfg.eval.tasks)
        for (auto kind : bl.kinds)
          for (std::size_t s = 0; s < bl.n_seeds; ++s) {
            const auto seed = derive_seed(cfg.stage_seed("baseline"), "seed", s);
            AltTask alt = bl.alt_task == "random" ? AltTask::random(seed) : AltTask::of(task_from_name(bl.alt_task));
            if (kind == BaselineKind::AlternativeTask && alt.task && *alt.task == task) {
              ctx.info("skipping alternative_task for " + std::string(task_name(task)) +
                       ": alternative task equals the target");
              continue;
            }
            try {
              auto r = run_baseline(kind, task, alt, corpus, split, split.task_train_ids, m.spec().deep4,
                                    bl.train, seed);
              r.metrics.seed = s;
              res.records.push_back(r.metrics);
            } catch (const ValidationError& e) {
              ctx.info("skipping baseline for " + std::string(task_name(task)) + ": " + e.what());
            }
          }
      for (auto task : cfg.eval.tasks)
        for (auto method : {Method::TaskSpecific, Method::AlternativeTask}) {
          std::vector<double> v;
          TaskMetrics row;
          for (const auto& r : res.records)
            if (r.task == task && r.method == method) {
              v.push_back(r.balanced_accuracy);
              row = r;
            }
          if (v.empty()) continue;
          row.seed.reset();
          row.balanced_accuracy = median(v);
          if (v.size() >= 2) row.ci80 = std::make_pair(percentile(v, 0.1), percentile(v, 0.9));
          res.summary.push_back(row);
        }
      break;
    }
  }
  if (parameter_checksum(const_cast<ClipModel<float>&>(loaded.model).all_params()) != checksum)
    throw Error("internal error: evaluation modified the model weights");
  const std::string name(regime_name(regime));
  detail::write_records(ctx.out / ("metrics_" + name + ".jsonl"), res.records);
  detail::write_text_file(ctx.out / ("summary_" + name + ".tsv"), summary_table(res.summary));
  if (fs::exists(ctx.out / ".text_scratch")) fs::remove_all(ctx.out / ".text_scratch");
  return res;
}

// Frequency-gradient map for a prompt over the eval-split windows.
inline GradientMap cmd_gradients(const CommandContext& ctx, const fs::path& model_dir, const std::string& prompt) {
  detail::prepare_out(ctx);
  if (prompt.empty()) throw ConfigError("a prompt is required");
  const auto loaded = detail::load_for(ctx, model_dir);
  const auto corpus = detail::load_corpus(ctx);
  const auto split = detail::plan_for(ctx, corpus);
  auto refs = all_windows(corpus, indices_of(corpus, split.eval_ids));
  if (ctx.cfg.interpret.max_windows > 0 && refs.size() > ctx.cfg.interpret.max_windows)
    refs.resize(ctx.cfg.interpret.max_windows);
  if (refs.empty()) throw ValidationError("no eval windows for the gradient analysis");
  const auto windows = gather_windows<float>(corpus, refs, loaded.model.spec().deep4.input_samples);
  ClipPromptSimilarity fn(loaded.model, prompt);
  const auto map = frequency_gradients(fn, windows, corpus.front().rate_hz, prompt, ctx.cfg.interpret.mode,
                                       ctx.cfg.pipeline.preprocess.channel_subset);
  detail::write_text_file(ctx.out / "gradients.csv", gradient_map_csv(map));
  detail::write_text_file(ctx.out / "gradients.svg",
                          plot::heatmap_svg(map.magnitudes, map.channel_names, map.freq_axis_hz,
                                            "Gradient of similarity to \"" + prompt + "\"", "frequency (Hz)"));
  std::string topo = "band,low_hz,high_hz,channel,value\n";
  const double nyquist = map.freq_axis_hz.back();
  for (const auto& [name, band] : ctx.cfg.interpret.bands) {
    if (band.high > nyquist) continue;
    const auto v = topographic_aggregate(map, band);
    for (std::size_t c = 0; c < v.size(); ++c) {
      char buf[128];
      std::snprintf(buf, sizeof buf, ",%g,%g,%s,%.9g\n", band.low, band.high, map.channel_names[c].c_str(), v[c]);
      topo += name + buf;
    }
  }
  detail::write_text_file(ctx.out / "topography.csv", topo);
  ctx.info("averaged gradients over " + std::to_string(map.n_windows_averaged) + " windows");
  return map;
}

// CSV of shared-space projections for every window of every recording.
inline std::size_t cmd_export_embeddings(const CommandContext& ctx, const fs::path& model_dir) {
  detail::prepare_out(ctx);
  const auto loaded = detail::load_for(ctx, model_dir);
  const auto corpus = detail::load_corpus(ctx);
  const auto split = detail::plan_for(ctx, corpus);
  std::map<std::string, std::string> split_of;
  for (const auto& id : split.contrastive_train_ids) split_of[id] = "contrastive_train";
  for (const auto& id : split.task_train_ids) split_of[id] = "task_train";
  for (const auto& id : split.eval_ids) split_of[id] = "eval";
  std::vector<std::size_t> all(corpus.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto t = project_corpus(loaded.model, corpus, all);
  const std::size_t d = t.embeddings.dim(1);

  std::string csv = "recording_id,window_start,split,pathological,age_over_50,gender,medication";
  for (std::size_t j = 0; j < d; ++j) csv += ",e" + std::to_string(j);
  csv += '\n';
  const auto opt = [](const std::optional<int>& v) { return v ? std::to_string(*v) : std::string(); };
  for (std::size_t i = 0; i < t.recording.size(); ++i) {
    const auto& rec = corpus[t.recording[i]];
    csv += rec.id + ',' + std::to_string(t.window_start[i]) + ',' + split_of[rec.id] + ',' +
           opt(rec.labels.class_of(Task::Pathological)) + ',' + opt(rec.labels.class_of(Task::Age)) + ',' +
           (rec.labels.gender ? std::string(gender_name(*rec.labels.gender)) : std::string()) + ',' +
           opt(rec.labels.class_of(Task::Medication));
    char buf[32];
    for (std::size_t j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof buf, ",%.8g", double(t.embeddings(i, j)));
      csv += buf;
    }
    csv += '\n';
  }
  detail::write_text_file(ctx.out / "embeddings.csv", csv);
  return t.recording.size();
}

}  // namespace eegclip
