#pragma once

// Recording container format, manifests, and the planted-structure
// synthetic corpus.
//
// A recording on disk is three files sharing a stem:
//   <id>.eegc        "EEGC1 <n_channels> <n_samples> <rate_hz>\n", one channel
//                    name per line, then little-endian float32 samples in
//                    channel-major order
//   <id>.report.txt  raw UTF-8 report text
//   <id>.meta        optional "key=value" lines: age, gender, pathological
// The manifest lists one recording per line:
//   id<TAB>signal_path<TAB>report_path<TAB>split_hint   (train | eval | -)
// Relative paths are resolved against the manifest's directory.

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "eegclip/errors.hpp"
#include "eegclip/report_parser.hpp"
#include "eegclip/rng.hpp"
#include "eegclip/tensor.hpp"

namespace eegclip {

namespace fs = std::filesystem;

enum class SplitHint { Train, Eval };

struct RecordingRef {
  std::string id;
  fs::path signal_path;
  fs::path report_path;
  std::optional<SplitHint> split_hint;

  bool operator==(const RecordingRef&) const = default;
};

struct Recording {
  std::string id;
  Tensor<float> signal;  // [channels, samples], microvolts
  double rate_hz = 0.0;
  std::vector<std::string> channel_names;
  std::optional<int> age_years;
  std::optional<Gender> gender;
  std::optional<bool> pathological;  // dataset-level diagnosis flag
  std::string report_text;

  std::size_t n_channels() const { return signal.rank() ? signal.dim(0) : 0; }
  std::size_t n_samples() const { return signal.rank() ? signal.dim(1) : 0; }
  double duration_s() const { return double(n_samples()) / rate_hz; }

  bool operator==(const Recording&) const = default;
};

inline void validate(const Recording& r) {
  if (r.id.empty()) throw ValidationError("recording id is empty");
  if (!(r.rate_hz > 0.0) || !std::isfinite(r.rate_hz))
    throw ValidationError("recording '" + r.id + "': rate_hz must be positive");
  if (r.signal.rank() != 2)
    throw ValidationError("recording '" + r.id + "': signal must be a channels x samples matrix");
  if (r.signal.dim(0) != r.channel_names.size())
    throw ValidationError("recording '" + r.id + "': " + std::to_string(r.signal.dim(0)) +
                          " signal rows but " + std::to_string(r.channel_names.size()) +
                          " channel names");
  for (float v : r.signal.data)
    if (!std::isfinite(v)) throw ValidationError("recording '" + r.id + "': non-finite sample");
  if (r.age_years && *r.age_years < 0)
    throw ValidationError("recording '" + r.id + "': negative age");
}

inline LabelSet derive_labels(const Recording& rec, const ClinicalReport& report,
                              std::optional<bool> pathology_flag,
                              MedicationScope scope = MedicationScope::WholeReport) {
  return derive_labels(rec.age_years, rec.gender, report, pathology_flag, scope);
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string read_text_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const fs::path& p, std::string_view text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  out.write(text.data(), std::streamsize(text.size()));
  if (!out) throw IoError("write failed for '" + p.string() + "'");
}

inline bool valid_id(std::string_view id) {
  if (id.empty() || id == "." || id == "..") return false;
  for (char c : id)
    if (c == '/' || c == '\\' || c == '\t' || c == '\n' || c == '\r' || c == '\0') return false;
  return true;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace detail

inline fs::path meta_path_for(const fs::path& signal_path) {
  fs::path p = signal_path;
  p.replace_extension(".meta");
  return p;
}

// ---------------------------------------------------------------- manifest

inline std::vector<RecordingRef> load_manifest(const fs::path& path) {
  const std::string text = detail::read_text_file(path);
  const fs::path base = path.parent_path();
  std::vector<RecordingRef> refs;
  std::map<std::string, std::size_t> seen;

  std::size_t line_no = 0;
  for (auto line : detail::split(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto fields = detail::split(line, '\t');
    if (fields.size() != 4)
      throw ParseError(line_no, "expected 4 tab-separated fields, got " +
                                    std::to_string(fields.size()));
    RecordingRef ref;
    ref.id = std::string(fields[0]);
    if (!detail::valid_id(ref.id)) throw ParseError(line_no, "invalid id '" + ref.id + "'");
    if (fields[1].empty() || fields[2].empty()) throw ParseError(line_no, "empty path field");
    ref.signal_path = fs::path(std::string(fields[1]));
    ref.report_path = fs::path(std::string(fields[2]));
    if (ref.signal_path.is_relative()) ref.signal_path = base / ref.signal_path;
    if (ref.report_path.is_relative()) ref.report_path = base / ref.report_path;
    if (fields[3] == "train")
      ref.split_hint = SplitHint::Train;
    else if (fields[3] == "eval")
      ref.split_hint = SplitHint::Eval;
    else if (fields[3] != "-")
      throw ParseError(line_no, "split_hint must be train, eval or -, got '" +
                                    std::string(fields[3]) + "'");

    if (auto it = seen.find(ref.id); it != seen.end())
      throw ValidationError("line " + std::to_string(line_no) + ": duplicate id '" + ref.id +
                            "' (first on line " + std::to_string(it->second) + ")");
    seen.emplace(ref.id, line_no);
    for (const auto& p : {ref.signal_path, ref.report_path})
      if (!fs::exists(p))
        throw IoError("line " + std::to_string(line_no) + ": missing file '" + p.string() + "'");
    refs.push_back(std::move(ref));
  }
  return refs;
}

inline void write_manifest(const std::vector<RecordingRef>& refs, const fs::path& path) {
  const fs::path base = path.parent_path();
  std::string text;
  for (const auto& r : refs) {
    auto rel = [&](const fs::path& p) {
      const auto relative = p.lexically_relative(base);
      return (relative.empty() ? p : relative).generic_string();
    };
    text += r.id + '\t' + rel(r.signal_path) + '\t' + rel(r.report_path) + '\t';
    text += !r.split_hint ? "-" : (*r.split_hint == SplitHint::Train ? "train" : "eval");
    text += '\n';
  }
  detail::write_text_file(path, text);
}

// --------------------------------------------------------------- container

inline void write_signal_container(const fs::path& path, const Tensor<float>& signal,
                                   double rate_hz, const std::vector<std::string>& names) {
  if (signal.rank() != 2 || signal.dim(0) != names.size())
    throw ValidationError("signal shape does not match channel names for '" + path.string() + "'");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "EEGC1 " << signal.dim(0) << ' ' << signal.dim(1) << ' '
      << detail::format_double(rate_hz) << '\n';
  for (const auto& n : names) {
    if (n.find('\n') != std::string::npos) throw ValidationError("channel name contains newline");
    out << n << '\n';
  }
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(signal.ptr()),
              std::streamsize(signal.size() * sizeof(float)));
  } else {
    for (float v : signal.data) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
      char b[4] = {char(bits), char(bits >> 8), char(bits >> 16), char(bits >> 24)};
      out.write(b, 4);
    }
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

struct SignalContainer {
  Tensor<float> signal;
  double rate_hz = 0.0;
  std::vector<std::string> channel_names;
};

inline SignalContainer read_signal_container(const fs::path& path) {
  const std::string bytes = detail::read_text_file(path);
  const auto corrupt = [&](const std::string& why) {
    return CorruptContainerError("'" + path.string() + "': " + why);
  };
  std::size_t pos = bytes.find('\n');
  if (pos == std::string::npos) throw corrupt("missing header line");
  const auto header = detail::split(std::string_view(bytes).substr(0, pos), ' ');
  std::size_t n_ch = 0, n_s = 0;
  double rate = 0;
  if (header.size() != 4 || header[0] != "EEGC1" || !detail::parse_number(header[1], n_ch) ||
      !detail::parse_number(header[2], n_s) || !detail::parse_number(header[3], rate))
    throw corrupt("malformed header");
  if (!(rate > 0.0)) throw corrupt("non-positive rate");

  SignalContainer c;
  c.rate_hz = rate;
  std::size_t cursor = pos + 1;
  for (std::size_t i = 0; i < n_ch; ++i) {
    const auto nl = bytes.find('\n', cursor);
    if (nl == std::string::npos) throw corrupt("truncated channel name list");
    c.channel_names.emplace_back(bytes.substr(cursor, nl - cursor));
    cursor = nl + 1;
  }
  const std::size_t expected = n_ch * n_s * sizeof(float);
  const std::size_t actual = bytes.size() - cursor;
  if (actual != expected)
    throw corrupt("header declares " + std::to_string(n_ch) + "x" + std::to_string(n_s) +
                  " samples (" + std::to_string(expected) + " bytes) but payload has " +
                  std::to_string(actual) + " bytes");
  c.signal = Tensor<float>({n_ch, n_s});
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(c.signal.ptr(), bytes.data() + cursor, expected);
  } else {
    for (std::size_t i = 0; i < n_ch * n_s; ++i) {
      const auto* b = reinterpret_cast<const unsigned char*>(bytes.data() + cursor + 4 * i);
      const std::uint32_t bits = b[0] | (b[1] << 8) | (b[2] << 16) | (std::uint32_t(b[3]) << 24);
      c.signal.data[i] = std::bit_cast<float>(bits);
    }
  }
  return c;
}

inline Recording read_recording(const RecordingRef& ref) {
  if (!fs::exists(ref.signal_path)) throw IoError("missing signal file '" + ref.signal_path.string() + "'");
  if (!fs::exists(ref.report_path)) throw IoError("missing report file '" + ref.report_path.string() + "'");
  auto container = read_signal_container(ref.signal_path);
  Recording rec;
  rec.id = ref.id;
  rec.signal = std::move(container.signal);
  rec.rate_hz = container.rate_hz;
  rec.channel_names = std::move(container.channel_names);
  rec.report_text = detail::read_text_file(ref.report_path);

  const fs::path meta = meta_path_for(ref.signal_path);
  if (fs::exists(meta)) {
    const std::string text = detail::read_text_file(meta);
    std::size_t line_no = 0;
    for (auto line : detail::split(text, '\n')) {
      ++line_no;
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ParseError(line_no, "metadata line without '='");
      const auto key = line.substr(0, eq);
      const auto value = line.substr(eq + 1);
      if (key == "age") {
        int age = 0;
        if (!detail::parse_number(value, age) || age < 0)
          throw ParseError(line_no, "invalid age '" + std::string(value) + "'");
        rec.age_years = age;
      } else if (key == "gender") {
        if (value == "M") rec.gender = Gender::M;
        else if (value == "F") rec.gender = Gender::F;
        else throw ParseError(line_no, "gender must be M or F");
      } else if (key == "pathological") {
        if (value == "1") rec.pathological = true;
        else if (value == "0") rec.pathological = false;
        else throw ParseError(line_no, "pathological must be 0 or 1");
      } else {
        throw ParseError(line_no, "unknown metadata key '" + std::string(key) + "'");
      }
    }
  }
  validate(rec);
  return rec;
}

inline RecordingRef write_recording(const Recording& rec, const fs::path& dir,
                                    std::optional<SplitHint> hint = std::nullopt) {
  validate(rec);
  if (!detail::valid_id(rec.id)) throw ValidationError("id '" + rec.id + "' is not file-safe");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

  RecordingRef ref{rec.id, dir / (rec.id + ".eegc"), dir / (rec.id + ".report.txt"), hint};
  write_signal_container(ref.signal_path, rec.signal, rec.rate_hz, rec.channel_names);
  detail::write_text_file(ref.report_path, rec.report_text);

  std::string meta;
  if (rec.age_years) meta += "age=" + std::to_string(*rec.age_years) + "\n";
  if (rec.gender) meta += "gender=" + std::string(gender_name(*rec.gender)) + "\n";
  if (rec.pathological) meta += std::string("pathological=") + (*rec.pathological ? "1" : "0") + "\n";
  const fs::path meta_path = meta_path_for(ref.signal_path);
  if (!meta.empty())
    detail::write_text_file(meta_path, meta);
  else
    fs::remove(meta_path, ec);
  return ref;
}

// ------------------------------------------------------- synthetic corpus

// Standard 10-20 montage names; the first 21 are the default electrode subset.
inline const std::vector<std::string>& standard_1020_channels() {
  static const std::vector<std::string> names = {
      "FP1", "FP2", "F3", "F4", "C3", "C4", "P3", "P4", "O1", "O2", "F7",
      "F8",  "T3",  "T4", "T5", "T6", "A1", "A2", "FZ", "CZ", "PZ"};
  return names;
}

struct SyntheticClass {
  std::string name;
  double center_hz = 0.0;
  double amplitude_uv = 0.0;
  std::string report_template;
};

struct SyntheticSpec {
  std::size_t n_recordings = 0;
  std::size_t n_channels = 21;
  double rate_hz = 100.0;
  double duration_s = 180.0;
  std::vector<SyntheticClass> classes;  // class 0 is the "normal" class
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  // Channels carrying the class tone; empty means all channels.
  std::vector<std::size_t> tone_channels;
  double noise_cutoff_hz = 40.0;
  double medication_rate = 0.3;
};

// Sections present in every rendered synthetic report.
inline const std::vector<Section>& synthetic_report_sections() {
  static const std::vector<Section> s = {Section::ClinicalHistory, Section::Medications,
                                         Section::Introduction, Section::DescriptionOfTheRecord,
                                         Section::Impression};
  return s;
}

inline void validate(const SyntheticSpec& spec) {
  if (spec.n_recordings == 0) throw ValidationError("n_recordings must be positive");
  if (spec.n_channels == 0) throw ValidationError("n_channels must be positive");
  if (!(spec.rate_hz > 0)) throw ValidationError("rate_hz must be positive");
  if (!(spec.duration_s > 0)) throw ValidationError("duration_s must be positive");
  if (spec.classes.size() < 2) throw ValidationError("synthetic corpus needs at least 2 classes");
  if (spec.noise_sigma < 0) throw ValidationError("noise_sigma must be nonnegative");
  for (const auto& c : spec.classes) {
    if (!(c.center_hz >= 0) || c.center_hz >= spec.rate_hz / 2)
      throw ValidationError("class '" + c.name + "' center frequency " +
                            detail::format_double(c.center_hz) + " Hz is not below Nyquist (" +
                            detail::format_double(spec.rate_hz / 2) + " Hz)");
  }
  for (auto ch : spec.tone_channels)
    if (ch >= spec.n_channels) throw ValidationError("tone channel index out of range");
}

inline std::size_t synthetic_class_of(const SyntheticSpec& spec, std::size_t index) {
  return index % spec.classes.size();
}

namespace detail {

// Second-order Butterworth low-pass (bilinear transform), direct form I.
struct Biquad {
  double b0, b1, b2, a1, a2;

  static Biquad lowpass(double cutoff_hz, double rate_hz) {
    const double k = std::tan(3.141592653589793 * cutoff_hz / rate_hz);
    const double q = 1.0 / std::sqrt(2.0);
    const double norm = 1.0 / (1.0 + k / q + k * k);
    Biquad f;
    f.b0 = k * k * norm;
    f.b1 = 2.0 * f.b0;
    f.b2 = f.b0;
    f.a1 = 2.0 * (k * k - 1.0) * norm;
    f.a2 = (1.0 - k / q + k * k) * norm;
    return f;
  }

  // Output RMS for unit-variance white input.
  double noise_gain() const {
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0, energy = 0;
    for (int n = 0; n < 4096; ++n) {
      const double x = n == 0 ? 1.0 : 0.0;
      const double y = b0 * x + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
      x2 = x1, x1 = x, y2 = y1, y1 = y;
      energy += y * y;
    }
    return std::sqrt(energy);
  }
};

inline std::string render_synthetic_report(const std::string& class_text, int age, Gender gender,
                                           const std::string& medications) {
  std::string r;
  r += "CLINICAL HISTORY: " + std::to_string(age) + " year old " +
       (gender == Gender::M ? "man" : "woman") + " referred for a routine evaluation.\n";
  r += "MEDICATIONS: " + medications + "\n";
  r += "INTRODUCTION: Digital video EEG was performed using the standard 10-20 system of "
       "electrode placement.\n";
  r += "DESCRIPTION OF THE RECORD: " + class_text + "\n";
  r += "IMPRESSION: " + class_text + "\n";
  return r;
}

}  // namespace detail

inline std::vector<Recording> generate_synthetic_corpus(const SyntheticSpec& spec) {
  validate(spec);
  const auto& all_names = standard_1020_channels();
  std::vector<std::string> names;
  for (std::size_t c = 0; c < spec.n_channels; ++c)
    names.push_back(c < all_names.size() ? all_names[c] : "CH" + std::to_string(c + 1));

  const std::size_t n_samples = std::size_t(std::llround(spec.duration_s * spec.rate_hz));
  const double cutoff = std::min(spec.noise_cutoff_hz, 0.45 * spec.rate_hz);
  const auto lp = detail::Biquad::lowpass(cutoff, spec.rate_hz);
  const double noise_scale = spec.noise_sigma / lp.noise_gain();

  static const std::array<std::string, 3> aed_forms[] = {
      {"Keppra", "KEPPRA", "keppra"}, {"Dilantin", "DILANTIN", "dilantin"},
      {"Depakote", "DEPAKOTE", "depakote"}};
  static const std::array<std::string, 4> other_meds = {"None", "Lisinopril", "Aspirin",
                                                        "Metformin"};

  std::vector<Recording> corpus;
  corpus.reserve(spec.n_recordings);
  const int width = int(std::to_string(spec.n_recordings).size());
  for (std::size_t i = 0; i < spec.n_recordings; ++i) {
    Rng rng(derive_seed(spec.seed, "synthetic.recording", i));
    const auto& cls = spec.classes[synthetic_class_of(spec, i)];

    Recording rec;
    std::string num = std::to_string(i);
    rec.id = "syn" + std::string(std::size_t(std::max(0, width - int(num.size()))), '0') + num;
    rec.rate_hz = spec.rate_hz;
    rec.channel_names = names;
    rec.signal = Tensor<float>({spec.n_channels, n_samples});
    rec.pathological = synthetic_class_of(spec, i) != 0;
    rec.age_years = 18 + int(uniform_index(rng, 73));
    rec.gender = uniform_index(rng, 2) == 0 ? Gender::M : Gender::F;

    std::string meds;
    if (uniform01(rng) < spec.medication_rate) {
      const auto& drug = aed_forms[uniform_index(rng, 3)];
      meds = drug[uniform_index(rng, 3)] + " 500 mg.";
    } else {
      meds = other_meds[uniform_index(rng, other_meds.size())] + ".";
    }
    rec.report_text =
        detail::render_synthetic_report(cls.report_template, *rec.age_years, *rec.gender, meds);

    const double phase = 6.283185307179586 * uniform01(rng);
    const double omega = 6.283185307179586 * cls.center_hz / spec.rate_hz;
    for (std::size_t ch = 0; ch < spec.n_channels; ++ch) {
      const bool tone = spec.tone_channels.empty() ||
                        std::find(spec.tone_channels.begin(), spec.tone_channels.end(), ch) !=
                            spec.tone_channels.end();
      double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
      auto row = rec.signal.row(ch);
      for (std::size_t t = 0; t < n_samples; ++t) {
        double v = 0.0;
        if (spec.noise_sigma > 0) {
          const double x = standard_normal(rng);
          const double y = lp.b0 * x + lp.b1 * x1 + lp.b2 * x2 - lp.a1 * y1 - lp.a2 * y2;
          x2 = x1, x1 = x, y2 = y1, y1 = y;
          v = noise_scale * y;
        }
        if (tone) v += cls.amplitude_uv * std::sin(omega * double(t) + phase);
        row[t] = float(v);
      }
    }
    corpus.push_back(std::move(rec));
  }
  return corpus;
}

}  // namespace eegclip
