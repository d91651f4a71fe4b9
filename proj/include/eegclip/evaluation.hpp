#pragma once

// Split planning, frozen-encoder probes, zero-shot classification, the two
// supervised baselines and few-shot sweeps. All reported numbers are
// balanced accuracies at recording level.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "eegclip/contrastive.hpp"
#include "eegclip/dataset.hpp"
#include "eegclip/encoders.hpp"
#include "eegclip/errors.hpp"
#include "eegclip/nn.hpp"
#include "eegclip/optim.hpp"
#include "eegclip/report_parser.hpp"
#include "eegclip/rng.hpp"

namespace eegclip {

// ------------------------------------------------------------------ splits

struct Fraction {
  std::uint32_t num = 1, den = 1;

  double value() const { return double(num) / double(den); }
  std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
  bool operator==(const Fraction&) const = default;

  static Fraction parse(std::string_view s) {
    Fraction f;
    const auto slash = s.find('/');
    const auto bad = [&] { return ValidationError("invalid fraction '" + std::string(s) + "'"); };
    const auto num = s.substr(0, slash);
    if (std::from_chars(num.data(), num.data() + num.size(), f.num).ec != std::errc{}) throw bad();
    if (slash != std::string_view::npos) {
      const auto den = s.substr(slash + 1);
      auto [p, ec] = std::from_chars(den.data(), den.data() + den.size(), f.den);
      if (ec != std::errc{} || p != den.data() + den.size()) throw bad();
    }
    if (f.num == 0 || f.den == 0 || f.num > f.den) throw bad();
    return f;
  }
};

inline std::vector<Fraction> default_fractions() { return {{1, 2}, {1, 5}, {1, 10}, {1, 20}, {1, 50}}; }

enum class SplitMode { Standard, FewShot };

inline std::string_view split_mode_name(SplitMode m) {
  return m == SplitMode::Standard ? "standard" : "fewshot";
}

inline SplitMode split_mode_from_name(std::string_view s) {
  if (s == "standard") return SplitMode::Standard;
  if (s == "fewshot") return SplitMode::FewShot;
  throw ValidationError("unknown split mode '" + std::string(s) + "'");
}

struct SplitPlan {
  SplitMode mode = SplitMode::FewShot;
  std::uint64_t seed = 0;
  std::vector<std::string> contrastive_train_ids;
  std::vector<std::string> task_train_ids;
  std::vector<std::string> eval_ids;
  std::vector<Fraction> fractions;
  std::vector<std::vector<std::string>> fraction_subsets;  // parallel to `fractions`

  const std::vector<std::string>& subset(Fraction f) const {
    for (std::size_t i = 0; i < fractions.size(); ++i)
      if (fractions[i] == f) return fraction_subsets[i];
    throw ValidationError("split plan has no subset for fraction " + f.str());
  }
};

namespace detail {

// Seeded order in which every stratum is spread evenly: member i of a
// stratum of size n gets key (i + u) / n with a per-stratum offset u.
inline std::vector<std::size_t> stratified_order(const std::vector<int>& strata, Rng& rng) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < strata.size(); ++i) groups[strata[i]].push_back(i);
  struct Key {
    double key;
    std::size_t group, index;
  };
  std::vector<Key> keys;
  std::size_t g = 0;
  for (auto& [label, members] : groups) {
    shuffle(members, rng);
    const double u = uniform01(rng);
    for (std::size_t i = 0; i < members.size(); ++i)
      keys.push_back({(double(i) + u) / double(members.size()), g, members[i]});
    ++g;
  }
  std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
    return a.key != b.key ? a.key < b.key : a.group < b.group;
  });
  std::vector<std::size_t> order;
  for (const auto& k : keys) order.push_back(k.index);
  return order;
}

inline std::size_t n_strata(const std::vector<int>& strata) {
  return std::set<int>(strata.begin(), strata.end()).size();
}

}  // namespace detail

// Size of a few-shot subset: round(f * n), but never fewer than one id per
// stratum (so tiny fractions of small pools stay usable) and never more than n.
inline std::size_t fraction_subset_size(Fraction f, std::size_t n, std::size_t strata) {
  const auto raw = std::size_t(std::llround(f.value() * double(n)));
  return std::min(n, std::max(raw, std::min(strata, n)));
}

// Nested subsets: each is a prefix of one seeded stratified order.
inline std::vector<std::vector<std::string>> nested_fraction_subsets(
    const std::vector<std::string>& ids, const std::vector<int>& strata,
    const std::vector<Fraction>& fractions, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "split.fractions"));
  const auto order = detail::stratified_order(strata, rng);
  const std::size_t k = detail::n_strata(strata);
  std::vector<std::vector<std::string>> out;
  for (auto f : fractions) {
    std::vector<std::string> s;
    const std::size_t size = fraction_subset_size(f, ids.size(), k);
    for (std::size_t i = 0; i < size; ++i) s.push_back(ids[order[i]]);
    out.push_back(std::move(s));
  }
  return out;
}

// `strata[i]` is the stratification label of ids[i] (pathology class, or -1
// when unknown). Proportions are 60/20/20 in both modes; only the few-shot
// mode draws fraction subsets.
inline SplitPlan make_split_plan(const std::vector<std::string>& ids, std::vector<int> strata,
                                 SplitMode mode, const std::vector<Fraction>& fractions,
                                 std::uint64_t seed) {
  if (ids.size() < 5)
    throw ValidationError("split plan needs at least 5 recordings, got " + std::to_string(ids.size()));
  if (strata.empty()) strata.assign(ids.size(), -1);
  if (strata.size() != ids.size()) throw ValidationError("strata/id count mismatch");
  if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size())
    throw ValidationError("split plan input contains duplicate ids");

  SplitPlan plan;
  plan.mode = mode;
  plan.seed = seed;
  Rng rng(derive_seed(seed, "split.sets"));
  const auto order = detail::stratified_order(strata, rng);
  const std::size_t n = ids.size();
  const std::size_t n_con = std::size_t(std::llround(0.6 * double(n)));
  const std::size_t n_task = std::size_t(std::llround(0.2 * double(n)));
  std::vector<int> task_strata;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& id = ids[order[i]];
    if (i < n_con) {
      plan.contrastive_train_ids.push_back(id);
    } else if (i < n_con + n_task) {
      plan.task_train_ids.push_back(id);
      task_strata.push_back(strata[order[i]]);
    } else {
      plan.eval_ids.push_back(id);
    }
  }
  if (mode == SplitMode::FewShot) {
    plan.fractions = fractions;
    plan.fraction_subsets = nested_fraction_subsets(plan.task_train_ids, task_strata, fractions, seed);
  }
  return plan;
}

// Pathology class of each prepared recording, -1 when unknown.
inline std::vector<int> pathology_strata(const std::vector<PreparedRecording>& corpus) {
  std::vector<int> s;
  for (const auto& r : corpus) s.push_back(r.labels.pathological ? int(*r.labels.pathological) : -1);
  return s;
}

inline SplitPlan make_split_plan(const std::vector<PreparedRecording>& corpus, SplitMode mode,
                                 const std::vector<Fraction>& fractions, std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& r : corpus) ids.push_back(r.id);
  return make_split_plan(ids, pathology_strata(corpus), mode, fractions, seed);
}

// ------------------------------------------------------------- embeddings

struct EmbeddingTable {
  Tensor<float> embeddings;              // [rows x dim]
  std::vector<std::size_t> recording;    // corpus index per row
  std::vector<std::size_t> window_start; // per row
};

// Window embeddings in inference mode, batched.
template <class Encode>
EmbeddingTable embed_windows(Encode&& encode, const std::vector<PreparedRecording>& corpus,
                             const std::vector<std::size_t>& recordings, std::size_t length,
                             std::size_t batch_size = 64) {
  EmbeddingTable t;
  const auto refs = all_windows(corpus, recordings);
  std::vector<float> rows;
  std::size_t dim = 0;
  for (std::size_t begin = 0; begin < refs.size(); begin += batch_size) {
    const std::size_t end = std::min(refs.size(), begin + batch_size);
    const std::span<const WindowRef> batch(refs.data() + begin, end - begin);
    const Tensor<float> e = encode(gather_windows<float>(corpus, batch, length));
    dim = e.dim(1);
    rows.insert(rows.end(), e.data.begin(), e.data.end());
  }
  t.embeddings = Tensor<float>({refs.size(), dim});
  t.embeddings.data = std::move(rows);
  for (const auto& r : refs) {
    t.recording.push_back(r.recording);
    t.window_start.push_back(r.start);
  }
  return t;
}

// Encoder embeddings (the representation probes are trained on).
inline EmbeddingTable embed_corpus(const ClipModel<float>& model,
                                   const std::vector<PreparedRecording>& corpus,
                                   const std::vector<std::size_t>& recordings) {
  return embed_windows([&](const Tensor<float>& x) { return model.encode_eeg(x); }, corpus,
                       recordings, model.spec().deep4.input_samples);
}

// Unit-norm projections into the shared space.
inline EmbeddingTable project_corpus(const ClipModel<float>& model,
                                     const std::vector<PreparedRecording>& corpus,
                                     const std::vector<std::size_t>& recordings) {
  return embed_windows([&](const Tensor<float>& x) { return model.project_eeg(x); }, corpus,
                       recordings, model.spec().deep4.input_samples);
}

// --------------------------------------------------------------- metrics

// Mean per-class recall over the classes present in `labels`.
inline double balanced_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.empty() || labels.empty()) throw ValidationError("balanced_accuracy: empty input");
  if (predictions.size() != labels.size())
    throw ValidationError("balanced_accuracy: length mismatch");
  std::map<int, std::pair<std::size_t, std::size_t>> per_class;  // hits, total
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& c = per_class[labels[i]];
    ++c.second;
    if (predictions[i] == labels[i]) ++c.first;
  }
  double sum = 0;
  for (const auto& [cls, c] : per_class) sum += double(c.first) / double(c.second);
  return sum / double(per_class.size());
}

enum class Method { EegClipProbe, TaskSpecific, AlternativeTask, ZeroShot };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::EegClipProbe: return "eegclip_probe";
    case Method::TaskSpecific: return "task_specific";
    case Method::AlternativeTask: return "alternative_task";
    case Method::ZeroShot: return "zero_shot";
  }
  return "?";
}

struct TaskMetrics {
  Task task = Task::Pathological;
  Method method = Method::EegClipProbe;
  double balanced_accuracy = 0;
  std::size_t n_eval = 0;
  std::optional<std::pair<double, double>> ci80;
  std::optional<Fraction> fraction;
  std::optional<std::uint64_t> seed;
  std::string probe;  // probe kind, when one was used
};

// Linear-interpolated percentile (q in [0, 1]) of a nonempty sample.
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw ValidationError("percentile of empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * double(v.size() - 1);
  const auto lo = std::size_t(std::floor(pos));
  const auto hi = std::min(v.size() - 1, lo + 1);
  return v[lo] + (v[hi] - v[lo]) * (pos - double(lo));
}

inline double median(std::vector<double> v) { return percentile(std::move(v), 0.5); }

// ------------------------------------------------------------------ probes

enum class ProbeKind { LogReg, Mlp3 };

inline std::string_view probe_kind_name(ProbeKind k) { return k == ProbeKind::LogReg ? "logreg" : "mlp3"; }

inline ProbeKind probe_kind_from_name(std::string_view s) {
  if (s == "logreg") return ProbeKind::LogReg;
  if (s == "mlp3" || s == "mlp") return ProbeKind::Mlp3;
  throw ValidationError("unknown probe kind '" + std::string(s) + "'");
}

struct ProbeConfig {
  ProbeKind kind = ProbeKind::LogReg;
  // logreg: full-batch Adam on mean cross-entropy + l2 / (2 n) |W|^2
  double logreg_l2 = 1.0;
  std::size_t logreg_max_iter = 1000;
  double logreg_lr = 0.05;
  // mlp3
  double mlp_lr = 1e-3;
  std::size_t mlp_max_epochs = 200;
  std::size_t mlp_patience = 10;
  double mlp_val_fraction = 0.1;
  std::size_t mlp_batch = 64;
  std::uint64_t seed = 0;
};

struct Probe {
  ProbeKind kind = ProbeKind::LogReg;
  std::size_t input_dim = 0, n_classes = 0;
  std::vector<double> mean, inv_std;  // input standardisation
  std::vector<nn::Linear<double>> layers;

  Tensor<double> standardize(const Tensor<float>& x) const {
    if (x.rank() != 2 || x.dim(1) != input_dim)
      throw ValidationError("probe expects " + std::to_string(input_dim) + " features, got " +
                            shape_str(x.shape));
    Tensor<double> z({x.dim(0), input_dim});
    for (std::size_t i = 0; i < x.dim(0); ++i)
      for (std::size_t j = 0; j < input_dim; ++j) z(i, j) = (double(x(i, j)) - mean[j]) * inv_std[j];
    return z;
  }

  Tensor<double> logits(const Tensor<double>& z) const {
    Tensor<double> h = z;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      h = layers[l].forward(h);
      if (l + 1 < layers.size()) h = nn::relu_forward(std::move(h));
    }
    return h;
  }

  Tensor<double> predict_proba(const Tensor<float>& x) const {
    Tensor<double> p = logits(standardize(x));
    for (std::size_t i = 0; i < p.dim(0); ++i) {
      auto r = p.row(i);
      const double mx = *std::max_element(r.begin(), r.end());
      double s = 0;
      for (auto& v : r) s += (v = std::exp(v - mx));
      for (auto& v : r) v /= s;
    }
    return p;
  }
};

namespace detail {

// Mean softmax cross-entropy; writes dLoss/dlogits into `grad`.
inline double softmax_xent(const Tensor<double>& logits, const std::vector<int>& y,
                           Tensor<double>* grad) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (grad) *grad = Tensor<double>({n, k});
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = logits.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0;
    for (auto v : r) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    loss += lse - r[std::size_t(y[i])];
    if (grad)
      for (std::size_t j = 0; j < k; ++j)
        (*grad)(i, j) = (std::exp(r[j] - lse) - (int(j) == y[i] ? 1.0 : 0.0)) / double(n);
  }
  return loss / double(n);
}

inline Tensor<double> gather_rows(const Tensor<double>& x, const std::vector<std::size_t>& rows) {
  Tensor<double> out({rows.size(), x.dim(1)});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = x.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

inline void fit_logreg(Probe& p, const Tensor<double>& z, const std::vector<int>& y,
                       const ProbeConfig& cfg) {
  p.layers = {nn::Linear<double>("probe.0", p.input_dim, p.n_classes)};
  auto& lin = p.layers[0];
  Adam<double> opt(cfg.logreg_lr);
  nn::ParamList<double> ps;
  lin.collect(ps);
  opt.add_group(ps, 1.0, 0.0);
  const double l2 = cfg.logreg_l2 / double(z.dim(0));
  for (std::size_t it = 0; it < cfg.logreg_max_iter; ++it) {
    opt.zero_grad();
    Tensor<double> g;
    softmax_xent(lin.forward(z), y, &g);
    lin.backward(z, g, false);
    double gmax = 0;
    for (std::size_t i = 0; i < lin.weight.value.size(); ++i) {
      lin.weight.grad.data[i] += l2 * lin.weight.value.data[i];
      gmax = std::max(gmax, std::abs(lin.weight.grad.data[i]));
    }
    for (double v : lin.bias.grad.data) gmax = std::max(gmax, std::abs(v));
    if (gmax < 1e-6) break;
    opt.step();
  }
}

inline void fit_mlp3(Probe& p, const Tensor<double>& z, const std::vector<int>& y,
                     const std::vector<std::size_t>& groups, const ProbeConfig& cfg) {
  const std::size_t d = p.input_dim;
  p.layers = {nn::Linear<double>("probe.0", d, d), nn::Linear<double>("probe.1", d, d),
              nn::Linear<double>("probe.2", d, p.n_classes)};
  Rng rng(derive_seed(cfg.seed, "probe.mlp3"));
  for (auto& l : p.layers) l.init_default(rng);

  // Validation slice: whole groups (recordings) when there are enough of
  // them, so windows of one recording never straddle the split.
  std::vector<std::size_t> train_rows, val_rows;
  {
    std::vector<std::size_t> uniq = groups;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    std::set<std::size_t> val_groups;
    if (uniq.size() >= 10) {
      shuffle(uniq, rng);
      const auto n_val = std::max<std::size_t>(1, std::size_t(std::llround(cfg.mlp_val_fraction * double(uniq.size()))));
      val_groups.insert(uniq.begin(), uniq.begin() + std::ptrdiff_t(n_val));
    }
    for (std::size_t i = 0; i < y.size(); ++i)
      (val_groups.count(groups[i]) ? val_rows : train_rows).push_back(i);
    std::set<int> train_classes;
    for (auto i : train_rows) train_classes.insert(y[i]);
    if (train_classes.size() < 2) {  // hold-out removed a class: train on everything
      train_rows.clear();
      val_rows.clear();
      for (std::size_t i = 0; i < y.size(); ++i) train_rows.push_back(i);
    }
  }
  const Tensor<double> z_val = gather_rows(z, val_rows);
  std::vector<int> y_val;
  for (auto i : val_rows) y_val.push_back(y[i]);

  Adam<double> opt(cfg.mlp_lr);
  nn::ParamList<double> ps;
  for (auto& l : p.layers) l.collect(ps);
  opt.add_group(ps, 1.0, 0.0);

  double best = std::numeric_limits<double>::infinity();
  auto best_layers = p.layers;
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < cfg.mlp_max_epochs; ++epoch) {
    shuffle(train_rows, rng);
    for (std::size_t b = 0; b < train_rows.size(); b += cfg.mlp_batch) {
      const std::vector<std::size_t> rows(
          train_rows.begin() + std::ptrdiff_t(b),
          train_rows.begin() + std::ptrdiff_t(std::min(train_rows.size(), b + cfg.mlp_batch)));
      const Tensor<double> x = gather_rows(z, rows);
      std::vector<int> yb;
      for (auto r : rows) yb.push_back(y[r]);
      opt.zero_grad();
      const Tensor<double> h1 = nn::relu_forward(p.layers[0].forward(x));
      const Tensor<double> h2 = nn::relu_forward(p.layers[1].forward(h1));
      Tensor<double> g;
      softmax_xent(p.layers[2].forward(h2), yb, &g);
      g = nn::relu_backward(h2, p.layers[2].backward(h2, g, true));
      g = nn::relu_backward(h1, p.layers[1].backward(h1, g, true));
      p.layers[0].backward(x, g, false);
      opt.step();
    }
    if (val_rows.empty()) continue;
    const double val_loss = softmax_xent(p.logits(z_val), y_val, nullptr);
    if (val_loss < best) {
      best = val_loss;
      best_layers = p.layers;
      since_best = 0;
    } else if (++since_best >= cfg.mlp_patience) {
      break;
    }
  }
  if (!val_rows.empty()) p.layers = best_layers;
}

}  // namespace detail

// Trains a probe on window embeddings. `groups` (recording per row) keeps
// validation hold-outs recording-disjoint; may be empty.
inline Probe fit_probe(const Tensor<float>& x, const std::vector<int>& y, const ProbeConfig& cfg,
                       std::vector<std::size_t> groups = {}) {
  if (x.rank() != 2 || x.dim(0) != y.size() || y.empty())
    throw ValidationError("fit_probe: embeddings and labels disagree in length");
  std::set<int> classes(y.begin(), y.end());
  if (classes.size() < 2) throw ValidationError("fit_probe needs at least 2 classes in the labels");
  if (*classes.begin() < 0) throw ValidationError("fit_probe: negative class label");
  if (groups.empty()) {
    groups.resize(y.size());
    std::iota(groups.begin(), groups.end(), std::size_t{0});
  }
  Probe p;
  p.kind = cfg.kind;
  p.input_dim = x.dim(1);
  p.n_classes = std::size_t(*classes.rbegin()) + 1;
  p.mean.assign(p.input_dim, 0.0);
  p.inv_std.assign(p.input_dim, 1.0);
  const double n = double(x.dim(0));
  for (std::size_t j = 0; j < p.input_dim; ++j) {
    double s = 0, ss = 0;
    for (std::size_t i = 0; i < x.dim(0); ++i) s += x(i, j);
    const double m = s / n;
    for (std::size_t i = 0; i < x.dim(0); ++i) ss += (x(i, j) - m) * (x(i, j) - m);
    const double sd = std::sqrt(ss / n);
    p.mean[j] = m;
    p.inv_std[j] = sd > 1e-12 ? 1.0 / sd : 1.0;
  }
  const Tensor<double> z = p.standardize(x);
  if (cfg.kind == ProbeKind::LogReg)
    detail::fit_logreg(p, z, y, cfg);
  else
    detail::fit_mlp3(p, z, y, groups, cfg);
  return p;
}

inline std::vector<int> predict_windows(const Probe& p, const Tensor<float>& x) {
  const auto prob = p.predict_proba(x);
  std::vector<int> out;
  for (std::size_t i = 0; i < prob.dim(0); ++i) {
    const auto r = prob.row(i);
    out.push_back(int(std::max_element(r.begin(), r.end()) - r.begin()));
  }
  return out;
}

// --------------------------------------------------- table-level helpers

// Rows of `t` whose recording is in `recordings` and has a label for `task`.
inline std::vector<std::size_t> labelled_rows(const EmbeddingTable& t,
                                              const std::vector<PreparedRecording>& corpus,
                                              const std::vector<std::size_t>& recordings, Task task) {
  std::set<std::size_t> keep;
  for (auto r : recordings)
    if (corpus[r].labels.class_of(task)) keep.insert(r);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < t.recording.size(); ++i)
    if (keep.count(t.recording[i])) rows.push_back(i);
  return rows;
}

inline Tensor<float> take_rows(const Tensor<float>& x, const std::vector<std::size_t>& rows) {
  Tensor<float> out({rows.size(), x.dim(1)});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = x.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

inline Probe fit_probe_on(const EmbeddingTable& t, const std::vector<PreparedRecording>& corpus,
                          const std::vector<std::size_t>& recordings, Task task,
                          const ProbeConfig& cfg) {
  const auto rows = labelled_rows(t, corpus, recordings, task);
  std::vector<int> y;
  std::vector<std::size_t> groups;
  for (auto r : rows) {
    y.push_back(*corpus[t.recording[r]].labels.class_of(task));
    groups.push_back(t.recording[r]);
  }
  if (rows.empty()) throw ValidationError("no labelled windows for task " + std::string(task_name(task)));
  return fit_probe(take_rows(t.embeddings, rows), y, cfg, groups);
}

// Mean window probability per recording, then argmax (ties go to the lower
// class); scored against the recordings' labels.
inline TaskMetrics score_recordings(const Tensor<double>& prob,
                                   const std::vector<std::size_t>& row_recording,
                                   const std::vector<PreparedRecording>& corpus, Task task,
                                   Method method) {
  std::map<std::size_t, std::vector<double>> sums;
  for (std::size_t i = 0; i < row_recording.size(); ++i) {
    auto& s = sums[row_recording[i]];
    s.resize(prob.dim(1), 0.0);
    for (std::size_t k = 0; k < prob.dim(1); ++k) s[k] += prob(i, k);
  }
  std::vector<int> pred, truth;
  for (const auto& [rec, s] : sums) {
    pred.push_back(int(std::max_element(s.begin(), s.end()) - s.begin()));
    truth.push_back(*corpus[rec].labels.class_of(task));
  }
  if (truth.empty()) throw ValidationError("no labelled eval recordings for task " + std::string(task_name(task)));
  TaskMetrics m;
  m.task = task;
  m.method = method;
  m.balanced_accuracy = balanced_accuracy(pred, truth);
  m.n_eval = truth.size();
  return m;
}

inline TaskMetrics evaluate_probe(const Probe& p, const EmbeddingTable& t,
                                  const std::vector<PreparedRecording>& corpus,
                                  const std::vector<std::size_t>& recordings, Task task,
                                  Method method = Method::EegClipProbe) {
  const auto rows = labelled_rows(t, corpus, recordings, task);
  std::vector<std::size_t> rec;
  for (auto r : rows) rec.push_back(t.recording[r]);
  auto m = score_recordings(p.predict_proba(take_rows(t.embeddings, rows)), rec, corpus, task, method);
  m.probe = std::string(probe_kind_name(p.kind));
  return m;
}

// -------------------------------------------------------------- zero-shot

struct ZeroShotResult {
  int cls = 0;       // 0 = prompt a, 1 = prompt b
  double score = 0;  // mean over windows of sim_b - sim_a
};

// `windows` are unit-norm EEG projections of one recording, one per row.
inline ZeroShotResult zero_shot_score(const Tensor<float>& windows, std::span<const float> proto_a,
                                      std::span<const float> proto_b) {
  if (windows.dim(0) == 0) throw ValidationError("zero-shot: recording has no windows");
  double s = 0;
  for (std::size_t i = 0; i < windows.dim(0); ++i) {
    const auto w = windows.row(i);
    s += double(dot<float>(w, proto_b)) - double(dot<float>(w, proto_a));
  }
  s /= double(windows.dim(0));
  return {s > 0 ? 1 : 0, s};
}

inline Tensor<float> prompt_prototypes(const ClipModel<float>& model, const PromptPair& prompts) {
  return model.project_text({prompts.a, prompts.b});
}

inline ZeroShotResult zero_shot_classify(const ClipModel<float>& model, const PreparedRecording& rec,
                                         const PromptPair& prompts) {
  const auto protos = prompt_prototypes(model, prompts);
  const std::vector<PreparedRecording> one = {rec};
  const auto t = project_corpus(model, one, {0});
  return zero_shot_score(t.embeddings, protos.row(0), protos.row(1));
}

inline ZeroShotResult zero_shot_classify(const ClipModel<float>& model, const PreparedRecording& rec,
                                         Task task) {
  return zero_shot_classify(model, rec, build_prompts(task));
}

// Zero-shot over many recordings, given their projections.
inline TaskMetrics evaluate_zero_shot(const ClipModel<float>& model, const EmbeddingTable& projections,
                                      const std::vector<PreparedRecording>& corpus,
                                      const std::vector<std::size_t>& recordings, Task task,
                                      const PromptPair& prompts) {
  const auto protos = prompt_prototypes(model, prompts);
  std::vector<int> pred, truth;
  for (auto r : recordings) {
    const auto label = corpus[r].labels.class_of(task);
    if (!label) continue;
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < projections.recording.size(); ++i)
      if (projections.recording[i] == r) rows.push_back(i);
    const auto res = zero_shot_score(take_rows(projections.embeddings, rows), protos.row(0), protos.row(1));
    pred.push_back(res.cls);
    truth.push_back(*label);
  }
  if (truth.empty()) throw ValidationError("no labelled eval recordings for task " + std::string(task_name(task)));
  TaskMetrics m;
  m.task = task;
  m.method = Method::ZeroShot;
  m.balanced_accuracy = balanced_accuracy(pred, truth);
  m.n_eval = truth.size();
  return m;
}

// -------------------------------------------------------------- baselines

struct BaselineConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  double lr = 5e-3;
  double weight_decay = 5e-4;
  std::size_t warmup_epochs = 1;
  bool cosine_schedule = true;
  ProbeConfig head;  // head fitted on the frozen alternative-task encoder
};

enum class BaselineKind { TaskSpecific, AlternativeTask };

inline BaselineKind baseline_kind_from_name(std::string_view s) {
  if (s == "task_specific") return BaselineKind::TaskSpecific;
  if (s == "alternative_task") return BaselineKind::AlternativeTask;
  throw ValidationError("unknown baseline kind '" + std::string(s) + "'");
}

// Alternative pretraining target: another task's labels, or labels drawn
// uniformly at random per recording (an uninformative task).
struct AltTask {
  std::optional<Task> task;
  bool random_labels = false;
  std::uint64_t seed = 0;

  static AltTask of(Task t) { return {t, false, 0}; }
  static AltTask random(std::uint64_t seed) { return {std::nullopt, true, seed}; }
};

struct Classifier {
  Deep4<float> encoder;
  nn::Linear<float> head;

  Tensor<double> predict_proba(const Tensor<float>& windows) const {
    const auto logits = head.forward(encoder.infer(windows));
    Tensor<double> p({logits.dim(0), logits.dim(1)});
    for (std::size_t i = 0; i < p.dim(0); ++i) {
      const auto r = logits.row(i);
      const double mx = *std::max_element(r.begin(), r.end());
      double s = 0;
      for (std::size_t k = 0; k < r.size(); ++k) s += (p(i, k) = std::exp(double(r[k]) - mx));
      for (std::size_t k = 0; k < r.size(); ++k) p(i, k) /= s;
    }
    return p;
  }
};

// End-to-end Deep4 + linear classification head, cross-entropy on windows.
// `labels[r]` is the class of corpus recording r (only `recordings` are used).
inline Classifier train_classifier(const std::vector<PreparedRecording>& corpus,
                                   const std::vector<std::size_t>& recordings,
                                   const std::vector<int>& labels, std::size_t n_classes,
                                   const Deep4Config& arch, const BaselineConfig& cfg,
                                   std::uint64_t seed) {
  Classifier c{Deep4<float>(arch), nn::Linear<float>("classifier", arch.embedding_dim, n_classes)};
  Rng init(derive_seed(seed, "baseline.init"));
  c.encoder.init(init);
  c.head.init_default(init);
  Adam<float> opt(cfg.lr);
  opt.add_group(c.encoder.params(), 1.0, cfg.weight_decay);
  nn::ParamList<float> hp;
  c.head.collect(hp);
  opt.add_group(hp, 1.0, cfg.weight_decay);

  const auto windows = all_windows(corpus, recordings);
  Rng dropout_rng(derive_seed(seed, "baseline.dropout"));
  const std::size_t steps_per_epoch =
      windows.size() / cfg.batch_size + (windows.size() % cfg.batch_size >= 2 ? 1 : 0);
  const std::size_t warmup = std::min(cfg.warmup_epochs, cfg.epochs) * steps_per_epoch;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto order = windows;
    Rng shuffle_rng(derive_seed(seed, "baseline.shuffle", epoch));
    shuffle(order, shuffle_rng);
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      if (e - b < 2) break;  // batch norm needs more than one window
      const std::span<const WindowRef> batch(order.data() + b, e - b);
      const auto x = gather_windows<float>(corpus, batch, arch.input_samples);
      opt.set_lr(scheduled_lr(cfg.lr, step++, steps_per_epoch * cfg.epochs, warmup,
                              cfg.cosine_schedule));
      opt.zero_grad();
      Deep4Cache<float> cache;
      const auto emb = c.encoder.forward(x, Mode::Train, &cache, &dropout_rng);
      const auto logits = c.head.forward(emb);
      std::vector<int> y;
      for (const auto& w : batch) y.push_back(labels[w.recording]);
      Tensor<double> g;
      detail::softmax_xent(logits.cast<double>(), y, &g);
      const auto d_emb = c.head.backward(emb, g.cast<float>(), true);
      c.encoder.backward(cache, d_emb, false);
      opt.step();
    }
  }
  return c;
}

namespace detail {

inline std::vector<int> task_labels(const std::vector<PreparedRecording>& corpus,
                                    const std::vector<std::size_t>& recordings, Task task) {
  std::vector<int> labels(corpus.size(), -1);
  for (auto r : recordings) {
    const auto c = corpus[r].labels.class_of(task);
    if (!c)
      throw ValidationError("recording '" + corpus[r].id + "' has no label for task " +
                            std::string(task_name(task)));
    labels[r] = *c;
  }
  return labels;
}

}  // namespace detail

struct BaselineResult {
  TaskMetrics metrics;
  Classifier model;
};

// Task-specific: Deep4 trained from scratch on `train_ids` for `task`.
// Alternative-task: Deep4 trained on `alt` over the contrastive split, frozen,
// then a new head (probe) fitted on `train_ids`.
inline BaselineResult run_baseline(BaselineKind kind, Task task, const AltTask& alt,
                                   const std::vector<PreparedRecording>& corpus,
                                   const SplitPlan& split, const std::vector<std::string>& train_ids,
                                   const Deep4Config& arch, const BaselineConfig& cfg,
                                   std::uint64_t seed) {
  const auto train = indices_of(corpus, train_ids);
  const auto eval = indices_of(corpus, split.eval_ids);
  if (kind == BaselineKind::TaskSpecific) {
    const auto labels = detail::task_labels(corpus, train, task);
    auto c = train_classifier(corpus, train, labels, 2, arch, cfg, derive_seed(seed, "task_specific"));
    std::vector<std::size_t> labelled;
    for (auto r : eval)
      if (corpus[r].labels.class_of(task)) labelled.push_back(r);
    const auto refs = all_windows(corpus, labelled);
    Tensor<double> prob({refs.size(), 2});
    std::vector<std::size_t> rec;
    for (std::size_t b = 0; b < refs.size(); b += 64) {
      const std::span<const WindowRef> batch(refs.data() + b, std::min(refs.size(), b + 64) - b);
      const auto p = c.predict_proba(gather_windows<float>(corpus, batch, arch.input_samples));
      std::copy(p.data.begin(), p.data.end(), prob.ptr() + b * 2);
      for (const auto& w : batch) rec.push_back(w.recording);
    }
    return {score_recordings(prob, rec, corpus, task, Method::TaskSpecific), std::move(c)};
  }

  if (alt.task && *alt.task == task)
    throw ValidationError("alternative-task transfer needs a task different from the target");
  if (!alt.task && !alt.random_labels) throw ValidationError("alternative task not specified");
  const auto pre = indices_of(corpus, split.contrastive_train_ids);
  std::vector<int> alt_labels;
  if (alt.task) {
    alt_labels = detail::task_labels(corpus, pre, *alt.task);
  } else {
    alt_labels.assign(corpus.size(), -1);
    Rng rng(derive_seed(alt.seed, "baseline.random_labels"));
    for (auto r : pre) alt_labels[r] = int(uniform_index(rng, 2));
  }
  auto c = train_classifier(corpus, pre, alt_labels, 2, arch, cfg, derive_seed(seed, "alternative_task"));
  const auto enc = [&](const Tensor<float>& x) { return c.encoder.infer(x); };
  const auto train_table = embed_windows(enc, corpus, train, arch.input_samples);
  const auto eval_table = embed_windows(enc, corpus, eval, arch.input_samples);
  ProbeConfig pc = cfg.head;
  pc.seed = derive_seed(seed, "alternative_task.head");
  const Probe head = fit_probe_on(train_table, corpus, train, task, pc);
  auto m = evaluate_probe(head, eval_table, corpus, eval, task, Method::AlternativeTask);
  return {m, std::move(c)};
}

// -------------------------------------------------------------- few-shot

struct SweepResult {
  std::vector<TaskMetrics> cells;    // one per (fraction, seed) that could be fitted
  std::vector<TaskMetrics> summary;  // one per fraction: median with ci80
  std::vector<std::pair<Fraction, std::uint64_t>> missing;  // single-class subsets
};

// Per-seed nested subsets of the task-train ids, shared by every method.
inline std::vector<std::vector<std::string>> sweep_subsets(const SplitPlan& split,
                                                           const std::vector<PreparedRecording>& corpus,
                                                           const std::vector<Fraction>& fractions,
                                                           std::uint64_t seed_index) {
  std::vector<int> strata;
  const auto strat_all = pathology_strata(corpus);
  for (auto r : indices_of(corpus, split.task_train_ids)) strata.push_back(strat_all[r]);
  return nested_fraction_subsets(split.task_train_ids, strata, fractions,
                                 derive_seed(split.seed, "fewshot", seed_index));
}

inline std::vector<TaskMetrics> summarize_sweep(const std::vector<TaskMetrics>& cells,
                                                const std::vector<Fraction>& fractions) {
  std::vector<TaskMetrics> out;
  for (auto f : fractions) {
    std::vector<double> v;
    TaskMetrics base;
    for (const auto& c : cells)
      if (c.fraction && *c.fraction == f) {
        v.push_back(c.balanced_accuracy);
        base = c;
      }
    if (v.empty()) continue;
    base.seed.reset();
    base.balanced_accuracy = median(v);
    base.ci80.reset();
    if (v.size() >= 2) base.ci80 = std::make_pair(percentile(v, 0.1), percentile(v, 0.9));
    out.push_back(base);
  }
  return out;
}

// Fits a probe on each (fraction, seed) subset of frozen-encoder
// embeddings. `train_table` must cover the task-train recordings and
// `eval_table` the eval recordings.
inline SweepResult few_shot_sweep(const EmbeddingTable& train_table, const EmbeddingTable& eval_table,
                                  const std::vector<PreparedRecording>& corpus, Task task,
                                  const SplitPlan& split, const std::vector<Fraction>& fractions,
                                  std::size_t n_seeds, const ProbeConfig& probe,
                                  Method method = Method::EegClipProbe) {
  if (fractions.empty() || n_seeds == 0) throw ValidationError("few-shot sweep needs fractions and seeds");
  SweepResult res;
  const auto eval = indices_of(corpus, split.eval_ids);
  for (std::size_t s = 0; s < n_seeds; ++s) {
    const auto subsets = sweep_subsets(split, corpus, fractions, s);
    for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
      const auto recs = indices_of(corpus, subsets[fi]);
      std::set<int> classes;
      for (auto r : recs)
        if (auto c = corpus[r].labels.class_of(task)) classes.insert(*c);
      if (classes.size() < 2) {
        res.missing.emplace_back(fractions[fi], s);
        continue;
      }
      ProbeConfig pc = probe;
      pc.seed = derive_seed(probe.seed, "fewshot.probe", s);
      const Probe p = fit_probe_on(train_table, corpus, recs, task, pc);
      auto m = evaluate_probe(p, eval_table, corpus, eval, task, method);
      m.fraction = fractions[fi];
      m.seed = s;
      res.cells.push_back(m);
    }
  }
  res.summary = summarize_sweep(res.cells, fractions);
  return res;
}

// ----------------------------------------------------------------- output

inline std::string metrics_record(const TaskMetrics& m) {
  nlohmann::json j;
  j["task"] = task_name(m.task);
  j["method"] = method_name(m.method);
  j["fraction"] = m.fraction ? nlohmann::json(m.fraction->str()) : nlohmann::json(nullptr);
  j["seed"] = m.seed ? nlohmann::json(*m.seed) : nlohmann::json(nullptr);
  j["balanced_accuracy"] = m.balanced_accuracy;
  j["n_eval"] = m.n_eval;
  if (!m.probe.empty()) j["probe"] = m.probe;
  if (m.ci80) j["ci80"] = {m.ci80->first, m.ci80->second};
  return j.dump();
}

inline std::string summary_table(const std::vector<TaskMetrics>& rows) {
  std::string out = "task\tmethod\tprobe\tfraction\tbalanced_accuracy\tci80_low\tci80_high\tn_eval\n";
  char buf[64];
  for (const auto& m : rows) {
    out += std::string(task_name(m.task)) + '\t' + std::string(method_name(m.method)) + '\t' +
           (m.probe.empty() ? "-" : m.probe) + '\t' + (m.fraction ? m.fraction->str() : "-") + '\t';
    std::snprintf(buf, sizeof buf, "%.4f", m.balanced_accuracy);
    out += buf;
    if (m.ci80) {
      std::snprintf(buf, sizeof buf, "\t%.4f\t%.4f", m.ci80->first, m.ci80->second);
      out += buf;
    } else {
      out += "\t-\t-";
    }
    out += '\t' + std::to_string(m.n_eval) + '\n';
  }
  return out;
}

}  // namespace eegclip
