#pragma once

// Turns raw recordings into what the models consume: preprocessed signals,
// window start positions, selected report text, and task labels.

#include <functional>
#include <string>
#include <vector>

#include "eegclip/data_io.hpp"
#include "eegclip/report_parser.hpp"
#include "eegclip/signal_pipeline.hpp"

namespace eegclip {

struct PipelineConfig {
  PreprocessConfig preprocess;
  WindowConfig window;
  SectionSelection sections;
  MedicationScope medication_scope = MedicationScope::WholeReport;
};

struct PreparedRecording {
  std::string id;
  Tensor<float> signal;  // preprocessed [channels x samples]
  double rate_hz = 0;
  std::vector<std::size_t> window_starts;
  std::string text;  // selected report sections
  LabelSet labels;
};

struct WindowRef {
  std::size_t recording = 0;  // index into the prepared corpus
  std::size_t start = 0;
};

using WarningSink = std::function<void(const std::string&)>;

// Recordings too short for the crop are skipped and reported to `warn`.
inline std::vector<PreparedRecording> prepare_corpus(const std::vector<Recording>& corpus,
                                                     const PipelineConfig& cfg,
                                                     const WarningSink& warn = {}) {
  std::vector<PreparedRecording> out;
  out.reserve(corpus.size());
  for (const auto& rec : corpus) {
    Recording pre;
    try {
      pre = preprocess(rec, cfg.preprocess);
    } catch (const RejectRecording& e) {
      if (warn) warn(std::string("skipping: ") + e.what());
      continue;
    }
    PreparedRecording p;
    p.id = rec.id;
    p.rate_hz = pre.rate_hz;
    p.window_starts = window_starts(pre.n_samples(), cfg.window);
    const auto report = parse_report(rec.report_text);
    p.text = select_sections(report, cfg.sections);
    p.labels = derive_labels(rec, report, rec.pathological, cfg.medication_scope);
    p.signal = std::move(pre.signal);
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<PreparedRecording> prepare_manifest(const std::vector<RecordingRef>& refs,
                                                       const PipelineConfig& cfg,
                                                       const WarningSink& warn = {}) {
  std::vector<PreparedRecording> out;
  for (const auto& ref : refs) {
    auto one = prepare_corpus({read_recording(ref)}, cfg, warn);
    for (auto& p : one) out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<WindowRef> all_windows(const std::vector<PreparedRecording>& corpus,
                                          const std::vector<std::size_t>& recordings) {
  std::vector<WindowRef> refs;
  for (auto r : recordings)
    for (auto s : corpus[r].window_starts) refs.push_back({r, s});
  return refs;
}

// Copies the referenced windows into a [B x channels x length] batch.
template <class T = float>
Tensor<T> gather_windows(const std::vector<PreparedRecording>& corpus,
                         std::span<const WindowRef> refs, std::size_t length) {
  const std::size_t channels = refs.empty() ? 0 : corpus[refs[0].recording].signal.dim(0);
  Tensor<T> batch({refs.size(), channels, length});
  for (std::size_t b = 0; b < refs.size(); ++b) {
    const auto& sig = corpus[refs[b].recording].signal;
    for (std::size_t c = 0; c < channels; ++c) {
      const auto row = sig.row(c);
      std::copy_n(row.begin() + std::ptrdiff_t(refs[b].start), length,
                  batch.ptr() + (b * channels + c) * length);
    }
  }
  return batch;
}

inline std::vector<std::size_t> indices_of(const std::vector<PreparedRecording>& corpus,
                                           const std::vector<std::string>& ids) {
  std::vector<std::size_t> out;
  for (const auto& id : ids)
    for (std::size_t i = 0; i < corpus.size(); ++i)
      if (corpus[i].id == id) {
        out.push_back(i);
        break;
      }
  return out;
}

}  // namespace eegclip
