#pragma once

// Dual-encoder model, contrastive (InfoNCE) loss, and the training loop.

#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "eegclip/dataset.hpp"
#include "eegclip/encoders.hpp"
#include "eegclip/errors.hpp"
#include "eegclip/nn.hpp"
#include "eegclip/optim.hpp"
#include "eegclip/rng.hpp"
#include "eegclip/tensor.hpp"

namespace eegclip {

// ------------------------------------------------------------ similarity

// S[i][j] = <X_i, Y_j> for unit-norm rows.
template <class T>
Tensor<T> similarity_matrix(const Tensor<T>& x, const Tensor<T>& y) {
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(1))
    throw ValidationError("similarity_matrix: dimension mismatch " + shape_str(x.shape) + " vs " +
                          shape_str(y.shape));
  Tensor<T> s({x.dim(0), y.dim(0)});
  blas::gemm<T>(false, true, x.dim(0), y.dim(0), x.dim(1), T(1), x.ptr(), x.dim(1), y.ptr(),
                y.dim(1), T(0), s.ptr(), y.dim(0));
  return s;
}

// Mean-per-row InfoNCE over logits S / temperature. With `symmetric`, the
// average of the row-wise (EEG->text) and column-wise (text->EEG) losses.
// When `grad` is given it receives dLoss/dS.
template <class T>
double info_nce_loss(const Tensor<T>& s, double temperature, bool symmetric,
                     Tensor<T>* grad = nullptr) {
  if (s.rank() != 2 || s.dim(0) != s.dim(1))
    throw ValidationError("info_nce_loss needs a square similarity matrix");
  const std::size_t n = s.dim(0);
  if (n < 2) throw ValidationError("info_nce_loss needs N >= 2 (no negatives otherwise)");
  if (!(temperature > 0)) throw ValidationError("temperature must be positive");

  std::vector<double> g(n * n, 0.0);
  const double inv_t = 1.0 / temperature;
  const double weight = symmetric ? 0.5 : 1.0;

  // direction 0: rows (softmax over j for fixed i); direction 1: columns.
  auto one_direction = [&](bool by_column) {
    double loss = 0;
    std::vector<double> logits(n);
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        logits[j] = double(by_column ? s(j, i) : s(i, j)) * inv_t;
        mx = std::max(mx, logits[j]);
      }
      double sum = 0;
      for (std::size_t j = 0; j < n; ++j) sum += std::exp(logits[j] - mx);
      const double lse = mx + std::log(sum);
      loss += lse - logits[i];
      if (grad)
        for (std::size_t j = 0; j < n; ++j) {
          const double p = std::exp(logits[j] - lse) - (i == j ? 1.0 : 0.0);
          const std::size_t idx = by_column ? j * n + i : i * n + j;
          g[idx] += weight * p * inv_t / double(n);
        }
    }
    return loss / double(n);
  };

  double loss = one_direction(false);
  if (symmetric) loss = 0.5 * (loss + one_direction(true));
  if (grad) {
    *grad = Tensor<T>({n, n});
    for (std::size_t i = 0; i < n * n; ++i) grad->data[i] = T(g[i]);
  }
  return loss;
}

// ------------------------------------------------------------------ model

struct TextEncoderSpec {
  std::string kind = "hashed";  // hashed | external
  std::size_t output_dim = 256;
  std::size_t max_tokens = 512;
  std::uint64_t hash_seed = 0x5eed;
  std::string command;     // external only
  std::string model_name;  // external only, informational
  std::string scratch_dir;  // external only; empty means the temp directory
};

inline std::shared_ptr<const TextEncoder> make_text_encoder(const TextEncoderSpec& spec) {
  if (spec.kind == "hashed")
    return std::make_shared<HashedTextEncoder>(spec.output_dim, spec.max_tokens, spec.hash_seed);
  if (spec.kind == "external") {
    auto enc = std::make_shared<ExternalTextEncoder>(
        spec.command, spec.output_dim, spec.max_tokens,
        spec.model_name.empty() ? "external" : spec.model_name);
    if (!spec.scratch_dir.empty()) enc->set_scratch_dir(spec.scratch_dir);
    return enc;
  }
  throw ConfigError("unknown text encoder '" + spec.kind + "' (expected hashed or external)");
}

struct ModelSpec {
  Deep4Config deep4;
  TextEncoderSpec text;
  std::size_t shared_dim = 64;
  double init_temperature = 0.07;
};

// EEG encoder + head, text encoder (frozen features plus a fine-tunable
// linear adapter) + head, and a learnable log inverse temperature.
template <class T>
class ClipModel {
 public:
  ClipModel() = default;
  ClipModel(ModelSpec spec, std::shared_ptr<const TextEncoder> text_encoder)
      : spec_(std::move(spec)), text_encoder_(std::move(text_encoder)) {
    if (!text_encoder_) text_encoder_ = make_text_encoder(spec_.text);
    if (text_encoder_->output_dim() != spec_.text.output_dim)
      throw ConfigError("text encoder output_dim mismatch");
    const std::size_t e = spec_.deep4.embedding_dim, d = spec_.text.output_dim;
    eeg = Deep4<T>(spec_.deep4);
    eeg_head = ProjectionHead<T>("eeg_head", e, e, spec_.shared_dim);
    text_adapter = nn::Linear<T>("text_encoder.adapter", d, d);
    text_head = ProjectionHead<T>("text_head", d, d, spec_.shared_dim);
    logit_scale = nn::Param<T>("logit_scale", {1});
    logit_scale.value.data[0] = T(std::log(1.0 / spec_.init_temperature));
  }

  void init(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "init.eeg"));
    eeg.init(rng);
    Rng rh(derive_seed(seed, "init.eeg_head"));
    eeg_head.init(rh);
    Rng rt(derive_seed(seed, "init.text_head"));
    text_head.init(rt);
    text_adapter.weight.value.zero();
    text_adapter.bias.value.zero();
    for (std::size_t i = 0; i < text_adapter.in_dim; ++i) text_adapter.weight.value(i, i) = T(1);
    logit_scale.value.data[0] = T(std::log(1.0 / spec_.init_temperature));
  }

  // Rescales the identity adapter so that `features` (rows of encoder output)
  // reach the text head with unit RMS per coordinate.
  void calibrate_text_scale(const Tensor<T>& features) {
    double norm_sum = 0;
    for (std::size_t r = 0; r < features.dim(0); ++r) {
      double sq = 0;
      for (T v : features.row(r)) sq += double(v) * double(v);
      norm_sum += std::sqrt(sq);
    }
    const double mean_norm = norm_sum / double(std::max<std::size_t>(features.dim(0), 1));
    if (!(mean_norm > 0)) return;
    const T gain = T(std::sqrt(double(text_adapter.in_dim)) / mean_norm);
    for (std::size_t i = 0; i < text_adapter.in_dim; ++i) text_adapter.weight.value(i, i) = gain;
  }

  const ModelSpec& spec() const { return spec_; }
  const TextEncoder& text_encoder() const { return *text_encoder_; }
  std::shared_ptr<const TextEncoder> text_encoder_ptr() const { return text_encoder_; }

  double temperature() const { return std::exp(-double(logit_scale.value.data[0])); }

  nn::ParamList<T> eeg_encoder_params() { return eeg.params(); }
  nn::ParamList<T> text_encoder_params() {
    nn::ParamList<T> ps;
    text_adapter.collect(ps);
    return ps;
  }
  nn::ParamList<T> head_params() {
    auto ps = eeg_head.params();
    for (auto* p : text_head.params()) ps.push_back(p);
    return ps;
  }
  nn::ParamList<T> all_params() {
    auto ps = eeg_encoder_params();
    for (auto* p : head_params()) ps.push_back(p);
    for (auto* p : text_encoder_params()) ps.push_back(p);
    ps.push_back(&logit_scale);
    return ps;
  }

  // [B][C][L] -> [B][embedding_dim], inference mode.
  Tensor<T> encode_eeg(const Tensor<T>& windows) const { return eeg.infer(windows); }

  // [B][C][L] -> unit rows [B][shared_dim].
  Tensor<T> project_eeg(const Tensor<T>& windows) const {
    return nn::l2_normalize_rows(eeg_head.forward(eeg.infer(windows)));
  }

  Tensor<T> text_features(const std::vector<std::string>& texts) const {
    const auto feats = text_encoder_->features_batch(texts);
    Tensor<T> out({texts.size(), text_encoder_->output_dim()});
    for (std::size_t i = 0; i < texts.size(); ++i)
      std::copy(feats[i].begin(), feats[i].end(), out.ptr() + i * out.dim(1));
    return out;
  }

  // Text encoder output (frozen features through the adapter).
  std::vector<T> text_encode(std::string_view text) const {
    return text_adapter.forward(text_features({std::string(text)})).data;
  }

  Tensor<T> project_text(const std::vector<std::string>& texts) const {
    return nn::l2_normalize_rows(text_head.forward(text_adapter.forward(text_features(texts))));
  }

  template <class U>
  ClipModel<U> cast() const {
    ClipModel<U> out(spec_, text_encoder_);
    auto src = const_cast<ClipModel*>(this)->all_params();
    auto dst = out.all_params();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<U>();
    return out;
  }

  Deep4<T> eeg;
  ProjectionHead<T> eeg_head;
  nn::Linear<T> text_adapter;
  ProjectionHead<T> text_head;
  nn::Param<T> logit_scale;

 private:
  ModelSpec spec_;
  std::shared_ptr<const TextEncoder> text_encoder_;
};

// FNV-1a over every parameter and buffer, for isolation checks.
template <class T>
std::uint64_t parameter_checksum(nn::ParamList<T> ps) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto* p : ps)
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(p->value.ptr()),
                               p->value.size() * sizeof(T)),
              h);
  return h;
}

// ------------------------------------------------------------- training

struct ContrastiveConfig {
  double temperature = 0.07;
  bool learnable_temperature = true;
  double temperature_min = 1e-3;
  double temperature_max = 100.0;
  bool symmetric = true;
  std::size_t batch_size = 64;
  std::size_t epochs = 20;
  double lr = 5e-3;
  double weight_decay = 5e-4;
  double text_lr_ratio = 1e-3;
  // Linear warmup to `lr` over the first epochs, then cosine decay (or flat).
  std::size_t warmup_epochs = 1;
  bool cosine_schedule = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(temperature > 0)) throw ConfigError("temperature must be positive");
    if (!(temperature_min > 0) || !(temperature_max > temperature_min))
      throw ConfigError("invalid temperature clamp range");
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (weight_decay < 0) throw ConfigError("weight_decay must be nonnegative");
    if (text_lr_ratio < 0) throw ConfigError("text_lr_ratio must be nonnegative");
    if (warmup_epochs > epochs) throw ConfigError("warmup_epochs exceeds epochs");
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0;
  double wall_time_s = 0;
};

struct TrainedModel {
  ClipModel<float> model;
  std::vector<EpochLog> log;
};

using ProgressSink = std::function<void(const EpochLog&)>;

namespace detail {

inline void clamp_logit_scale(nn::Param<float>& p, const ContrastiveConfig& cc) {
  const double lo = std::log(1.0 / cc.temperature_max), hi = std::log(1.0 / cc.temperature_min);
  p.value.data[0] = float(std::clamp(double(p.value.data[0]), lo, hi));
}

// One optimisation step on a batch of (window, text feature) pairs; row i of
// both inputs comes from the same recording. Returns the batch loss.
inline double contrastive_step(ClipModel<float>& m, Adam<float>& opt, const Tensor<float>& windows,
                               const Tensor<float>& text_feats, const ContrastiveConfig& cc,
                               Rng& dropout_rng) {
  opt.zero_grad();
  Deep4Cache<float> ec;
  const auto emb = m.eeg.forward(windows, Mode::Train, &ec, &dropout_rng);
  HeadCache<float> eh;
  std::vector<float> eeg_norms;
  const auto x = nn::l2_normalize_rows(m.eeg_head.forward(emb, &eh), &eeg_norms);

  const auto adapted = m.text_adapter.forward(text_feats);
  HeadCache<float> th;
  std::vector<float> text_norms;
  const auto y = nn::l2_normalize_rows(m.text_head.forward(adapted, &th), &text_norms);

  const auto s = similarity_matrix(x, y);
  Tensor<float> ds;
  const double loss = info_nce_loss(s, m.temperature(), cc.symmetric, &ds);

  const std::size_t n = s.dim(0), d = x.dim(1);
  Tensor<float> dx({n, d}), dy({n, d});
  blas::gemm<float>(false, false, n, d, n, 1.f, ds.ptr(), n, y.ptr(), d, 0.f, dx.ptr(), d);
  blas::gemm<float>(true, false, n, d, n, 1.f, ds.ptr(), n, x.ptr(), d, 0.f, dy.ptr(), d);

  const auto d_emb = m.eeg_head.backward(eh, nn::l2_normalize_backward(x, eeg_norms, dx));
  m.eeg.backward(ec, d_emb, false);
  const auto d_adapted = m.text_head.backward(th, nn::l2_normalize_backward(y, text_norms, dy));
  m.text_adapter.backward(text_feats, d_adapted, false);

  if (cc.learnable_temperature) {
    // L depends on S * exp(logit_scale): dL/dscale = sum_ij dL/dS_ij * S_ij.
    double g = 0;
    for (std::size_t i = 0; i < s.size(); ++i) g += double(ds.data[i]) * double(s.data[i]);
    m.logit_scale.grad.data[0] = float(g);
  }
  opt.step();
  clamp_logit_scale(m.logit_scale, cc);
  return loss;
}

}  // namespace detail

// Trains on every window of the selected recordings, pairing each window
// with its recording's selected report text.
inline TrainedModel train(const std::vector<PreparedRecording>& corpus,
                          const std::vector<std::size_t>& train_indices, const ModelSpec& spec,
                          std::shared_ptr<const TextEncoder> text_encoder,
                          const ContrastiveConfig& cc, const ProgressSink& progress = {}) {
  cc.validate();
  if (train_indices.size() < 2)
    throw ValidationError("contrastive training needs at least 2 recordings after preprocessing");
  ModelSpec s = spec;
  s.init_temperature = cc.temperature;
  TrainedModel out{ClipModel<float>(s, std::move(text_encoder)), {}};
  auto& m = out.model;
  m.init(cc.seed);

  Adam<float> opt(cc.lr);
  opt.add_group(m.eeg_encoder_params(), 1.0, cc.weight_decay);
  opt.add_group(m.head_params(), 1.0, cc.weight_decay);
  opt.add_group(m.text_encoder_params(), cc.text_lr_ratio, cc.weight_decay);
  if (cc.learnable_temperature) opt.add_group({&m.logit_scale}, 1.0, 0.0);

  std::vector<std::string> texts;
  for (auto r : train_indices) texts.push_back(corpus[r].text);
  const Tensor<float> feats = m.text_features(texts);
  m.calibrate_text_scale(feats);
  std::vector<std::size_t> feat_row(corpus.size(), 0);
  for (std::size_t i = 0; i < train_indices.size(); ++i) feat_row[train_indices[i]] = i;

  const auto windows = all_windows(corpus, train_indices);
  const std::size_t length = spec.deep4.input_samples;
  const auto t0 = std::chrono::steady_clock::now();
  Rng dropout_rng(derive_seed(cc.seed, "dropout"));
  const std::size_t steps_per_epoch =
      windows.size() / cc.batch_size + (windows.size() % cc.batch_size >= 2 ? 1 : 0);
  const std::size_t total_steps = steps_per_epoch * cc.epochs;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cc.epochs; ++epoch) {
    auto order = windows;
    Rng shuffle_rng(derive_seed(cc.seed, "shuffle", epoch));
    shuffle(order, shuffle_rng);
    double loss_sum = 0;
    std::size_t loss_count = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cc.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cc.batch_size);
      if (end - begin < 2) break;  // a lone pair has no negatives
      const std::span<const WindowRef> batch(order.data() + begin, end - begin);
      const auto x = gather_windows<float>(corpus, batch, length);
      Tensor<float> t({batch.size(), feats.dim(1)});
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto src = feats.row(feat_row[batch[b].recording]);
        std::copy(src.begin(), src.end(), t.row(b).begin());
      }
      opt.set_lr(scheduled_lr(cc.lr, step++, total_steps, cc.warmup_epochs * steps_per_epoch,
                              cc.cosine_schedule));
      const double loss = detail::contrastive_step(m, opt, x, t, cc, dropout_rng);
      loss_sum += loss * double(batch.size());
      loss_count += batch.size();
    }
    EpochLog entry{epoch, loss_count ? loss_sum / double(loss_count) : 0.0,
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    out.log.push_back(entry);
    if (progress) progress(entry);
  }
  return out;
}

inline TrainedModel train(const std::vector<Recording>& corpus, const PipelineConfig& pipeline,
                          const ModelSpec& spec, const ContrastiveConfig& cc,
                          const WarningSink& warn = {}, const ProgressSink& progress = {}) {
  const auto prepared = prepare_corpus(corpus, pipeline, warn);
  if (prepared.empty()) throw ValidationError("corpus is empty after preprocessing");
  std::vector<std::size_t> all(prepared.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return train(prepared, all, spec, make_text_encoder(spec.text), cc, progress);
}

}  // namespace eegclip
