#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "eegclip/errors.hpp"

namespace eegclip {

// The fifteen report sections, in canonical (coverage) order.
enum class Section {
  Impression,
  DescriptionOfTheRecord,
  ClinicalHistory,
  Medications,
  Introduction,
  ClinicalCorrelation,
  HeartRate,
  Findings,
  ReasonForStudy,
  TechnicalDifficulties,
  Events,
  ConditionOfTheRecording,
  PastMedicalHistory,
  TypeOfStudy,
  ActivationProcedures,
};

inline constexpr std::size_t kSectionCount = 15;

inline constexpr std::array<std::string_view, kSectionCount> kSectionNames = {
    "IMPRESSION",
    "DESCRIPTION OF THE RECORD",
    "CLINICAL HISTORY",
    "MEDICATIONS",
    "INTRODUCTION",
    "CLINICAL CORRELATION",
    "HEART RATE",
    "FINDINGS",
    "REASON FOR STUDY",
    "TECHNICAL DIFFICULTIES",
    "EVENTS",
    "CONDITION OF THE RECORDING",
    "PAST MEDICAL HISTORY",
    "TYPE OF STUDY",
    "ACTIVATION PROCEDURES",
};

inline std::string_view section_name(Section s) { return kSectionNames[std::size_t(s)]; }

inline std::optional<Section> section_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kSectionCount; ++i) {
    const auto& canon = kSectionNames[i];
    if (canon.size() == name.size() &&
        std::equal(canon.begin(), canon.end(), name.begin(), [](char a, char b) {
          return std::toupper(static_cast<unsigned char>(a)) ==
                 std::toupper(static_cast<unsigned char>(b));
        }))
      return Section(i);
  }
  return std::nullopt;
}

struct ClinicalReport {
  std::array<std::string, kSectionCount> sections;
  std::string raw;

  const std::string& operator[](Section s) const { return sections[std::size_t(s)]; }
  std::string& operator[](Section s) { return sections[std::size_t(s)]; }
};

namespace detail {

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v';
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline bool iequal_prefix(std::string_view text, std::string_view prefix) {
  if (text.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i)
    if (std::toupper(static_cast<unsigned char>(text[i])) !=
        std::toupper(static_cast<unsigned char>(prefix[i])))
      return false;
  return true;
}

// If `line` opens a section, returns the section and the offset of the first
// content byte after the colon.
inline std::optional<std::pair<Section, std::size_t>> match_header(std::string_view line) {
  std::size_t lead = 0;
  while (lead < line.size() && (line[lead] == ' ' || line[lead] == '\t')) ++lead;
  const std::string_view rest = line.substr(lead);
  std::optional<std::pair<Section, std::size_t>> best;
  std::size_t best_len = 0;
  for (std::size_t i = 0; i < kSectionCount; ++i) {
    const auto name = kSectionNames[i];
    if (name.size() <= best_len || !iequal_prefix(rest, name)) continue;
    std::size_t pos = name.size();
    while (pos < rest.size() && (rest[pos] == ' ' || rest[pos] == '\t')) ++pos;
    if (pos < rest.size() && rest[pos] == ':') {
      best = std::pair{Section(i), lead + pos + 1};
      best_len = name.size();
    }
  }
  return best;
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = char(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace detail

// Total: never throws on any byte sequence. Text before the first header is
// ignored; a repeated header appends to the earlier content.
inline ClinicalReport parse_report(std::string_view text) {
  ClinicalReport report;
  report.raw = std::string(text);

  std::optional<Section> current;
  std::string buffer;
  auto flush = [&] {
    if (!current) return;
    const auto body = detail::trim(buffer);
    auto& slot = report[*current];
    if (!body.empty()) {
      if (!slot.empty()) slot += '\n';
      slot += body;
    }
    buffer.clear();
  };

  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(start, end - start);
    if (auto hdr = detail::match_header(line)) {
      flush();
      current = hdr->first;
      buffer.assign(line.substr(hdr->second));
      buffer += '\n';
    } else if (current) {
      buffer.append(line);
      buffer += '\n';
    }
    if (end == text.size()) break;
    start = end + 1;
  }
  flush();
  return report;
}

struct SectionSelection {
  enum class Mode { All, Subset };
  Mode mode = Mode::All;
  std::vector<Section> names;

  static SectionSelection all() { return {}; }
  static SectionSelection subset(std::vector<Section> names) {
    if (names.empty()) throw ValidationError("section subset must name at least one section");
    return {Mode::Subset, std::move(names)};
  }

  bool includes(Section s) const {
    return mode == Mode::All || std::find(names.begin(), names.end(), s) != names.end();
  }
};

// "NAME: content\n" for each selected non-empty section, canonical order.
inline std::string select_sections(const ClinicalReport& report, const SectionSelection& sel) {
  std::string out;
  for (std::size_t i = 0; i < kSectionCount; ++i) {
    const auto s = Section(i);
    if (!sel.includes(s) || report[s].empty()) continue;
    out += kSectionNames[i];
    out += ": ";
    out += report[s];
    out += '\n';
  }
  return out;
}

enum class Gender { M, F };

inline std::string_view gender_name(Gender g) { return g == Gender::M ? "M" : "F"; }

enum class Task { Pathological, Age, Gender, Medication };

inline constexpr std::array<Task, 4> kAllTasks = {Task::Pathological, Task::Age, Task::Gender,
                                                  Task::Medication};

inline std::string_view task_name(Task t) {
  switch (t) {
    case Task::Pathological: return "pathological";
    case Task::Age: return "age";
    case Task::Gender: return "gender";
    case Task::Medication: return "medication";
  }
  return "?";
}

inline Task task_from_name(std::string_view name) {
  for (auto t : kAllTasks)
    if (task_name(t) == name) return t;
  throw ValidationError("unknown task '" + std::string(name) + "'");
}

struct LabelSet {
  std::optional<bool> pathological;
  std::optional<bool> age_over_50;
  std::optional<Gender> gender;
  std::optional<bool> medication_positive;

  // Binary class index for a task (0 = prompt A class, 1 = prompt B class).
  std::optional<int> class_of(Task t) const {
    switch (t) {
      case Task::Pathological:
        if (pathological) return *pathological ? 1 : 0;
        break;
      case Task::Age:
        if (age_over_50) return *age_over_50 ? 1 : 0;
        break;
      case Task::Gender:
        if (gender) return *gender == Gender::F ? 1 : 0;
        break;
      case Task::Medication:
        if (medication_positive) return *medication_positive ? 1 : 0;
        break;
    }
    return std::nullopt;
  }

  bool operator==(const LabelSet&) const = default;
};

inline constexpr std::array<std::string_view, 3> kAnticonvulsants = {"keppra", "dilantin",
                                                                    "depakote"};

enum class MedicationScope { WholeReport, MedicationsSection };

inline bool mentions_anticonvulsant(std::string_view text) {
  const std::string lower = detail::to_lower(text);
  return std::any_of(kAnticonvulsants.begin(), kAnticonvulsants.end(),
                     [&](std::string_view drug) { return lower.find(drug) != std::string::npos; });
}

// Age boundary: 50 belongs to the "<= 50" class.
inline LabelSet derive_labels(std::optional<int> age_years, std::optional<Gender> gender,
                              const ClinicalReport& report, std::optional<bool> pathology_flag,
                              MedicationScope scope = MedicationScope::WholeReport) {
  LabelSet labels;
  labels.pathological = pathology_flag;
  if (age_years) labels.age_over_50 = *age_years > 50;
  labels.gender = gender;
  const std::string_view haystack =
      scope == MedicationScope::WholeReport ? std::string_view(report.raw)
                                            : std::string_view(report[Section::Medications]);
  // An empty report carries no medication information at all.
  if (!report.raw.empty()) labels.medication_positive = mentions_anticonvulsant(haystack);
  return labels;
}

struct PromptPair {
  std::string a;  // first / negative class
  std::string b;  // second / positive class
  bool operator==(const PromptPair&) const = default;
};

inline PromptPair build_prompts(Task task) {
  switch (task) {
    case Task::Pathological:
      return {"This is a normal recording", "This is an abnormal recording"};
    case Task::Age:
      return {"The patient is under 50 years old", "The patient is over 50 years old"};
    case Task::Gender:
      return {"The patient is male", "The patient is female"};
    case Task::Medication:
      return {"No anti-epileptic drugs were prescribed to the patient",
              "Anti-epileptic drugs were prescribed to the patient"};
  }
  throw ValidationError("unknown task");
}

}  // namespace eegclip
