#pragma once

// EEG encoder (Deep4-style CNN), projection heads, and text encoders.

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "eegclip/errors.hpp"
#include "eegclip/nn.hpp"
#include "eegclip/rng.hpp"
#include "eegclip/tensor.hpp"

namespace eegclip {

using nn::Mode;

// ------------------------------------------------------------------ Deep4

struct Deep4Config {
  std::size_t n_channels = 21;
  std::size_t input_samples = 1200;
  std::vector<std::size_t> block_filters = {25, 50, 100, 200};
  std::size_t temporal_kernel = 10;
  std::size_t pool_size = 3;
  std::size_t pool_stride = 3;
  double dropout_p = 0.5;
  std::size_t embedding_dim = 128;
  double batch_norm_momentum = 0.1;

  // Time steps after each of the four conv + pool blocks.
  std::vector<std::size_t> block_lengths() const {
    std::vector<std::size_t> out;
    std::size_t t = input_samples;
    for (std::size_t b = 0; b < 4; ++b) {
      if (t < temporal_kernel)
        throw ValidationError("Deep4 block " + std::to_string(b + 1) + ": " + std::to_string(t) +
                              " samples is shorter than the temporal kernel");
      t = nn::pooled_length(t - temporal_kernel + 1, pool_size, pool_stride);
      out.push_back(t);
    }
    return out;
  }

  std::size_t flattened_size() const { return block_filters.back() * block_lengths().back(); }

  void validate() const {
    if (block_filters.size() != 4) throw ValidationError("Deep4 needs exactly 4 block filter counts");
    for (auto f : block_filters)
      if (f == 0) throw ValidationError("Deep4 block filter counts must be positive");
    if (n_channels == 0 || input_samples == 0) throw ValidationError("Deep4 input shape is empty");
    if (temporal_kernel == 0 || pool_size == 0 || pool_stride == 0)
      throw ValidationError("Deep4 kernel and pool sizes must be positive");
    if (embedding_dim == 0) throw ValidationError("embedding_dim must be positive");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ValidationError("dropout_p must be in [0,1)");
    (void)block_lengths();
  }
};

template <class T>
struct Deep4Cache {
  nn::ConvCache<T> conv[4];
  nn::BatchNormCache<T> bn[4];
  Tensor<T> elu_out[4];
  nn::PoolCache<T> pool[4];
  std::vector<T> dropout_mask[4];
  std::vector<std::size_t> pooled_shape;
  Tensor<T> flat;
};

// Four conv-maxpool blocks with batch norm, ELU and dropout, then a
// fully-connected layer to the embedding. Input windows are [B][C][T].
template <class T>
class Deep4 {
 public:
  Deep4() = default;
  explicit Deep4(Deep4Config cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto& f = cfg_.block_filters;
    block1_ = nn::SplitTemporalSpatialConv<T>("eeg.block1", cfg_.n_channels, f[0],
                                              cfg_.temporal_kernel);
    for (std::size_t b = 1; b < 4; ++b)
      convs_[b - 1] = nn::Conv1d<T>("eeg.block" + std::to_string(b + 1) + ".conv", f[b - 1], f[b],
                                    cfg_.temporal_kernel, false);
    for (std::size_t b = 0; b < 4; ++b)
      bns_[b] = nn::BatchNorm<T>("eeg.block" + std::to_string(b + 1) + ".bnorm", f[b],
                                 cfg_.batch_norm_momentum);
    fc_ = nn::Linear<T>("eeg.fc", cfg_.flattened_size(), cfg_.embedding_dim);
  }

  void init(Rng& rng) {
    block1_.init_xavier(rng);
    for (auto& c : convs_) c.init_xavier(rng);
    for (auto& b : bns_) b.reset();
    fc_.init_xavier(rng);
  }

  const Deep4Config& config() const { return cfg_; }
  std::size_t embedding_dim() const { return cfg_.embedding_dim; }

  nn::ParamList<T> params() {
    nn::ParamList<T> ps;
    block1_.collect(ps);
    for (auto& c : convs_) c.collect(ps);
    for (auto& b : bns_) b.collect(ps);
    fc_.collect(ps);
    return ps;
  }

  // Training-mode forward updates batch-norm running statistics; pass a cache
  // to enable backward. `dropout_rng` is required in training mode.
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Deep4Cache<T>* cache, Rng* dropout_rng) {
    Deep4Cache<T> local;
    Deep4Cache<T>* c = cache ? cache : (mode == Mode::Train ? &local : nullptr);
    auto y = run(x, mode, c, dropout_rng);
    if (mode == Mode::Train)
      for (std::size_t b = 0; b < 4; ++b) bns_[b].update_running(c->bn[b]);
    return y;
  }

  // Inference without caching; safe to call concurrently.
  Tensor<T> infer(const Tensor<T>& x) const { return run(x, Mode::Eval, nullptr, nullptr); }

  // Accumulates parameter gradients; returns d(input) as [B][C][T] when
  // `need_input_grad`.
  Tensor<T> backward(const Deep4Cache<T>& c, const Tensor<T>& d_embedding, bool need_input_grad) {
    Tensor<T> d_flat = fc_.backward(c.flat, d_embedding, true);
    const std::size_t F = c.pooled_shape[0], B = c.pooled_shape[1], L = c.pooled_shape[2];
    Tensor<T> d({F, B, L});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t f = 0; f < F; ++f)
        std::copy_n(d_flat.ptr() + b * F * L + f * L, L, d.ptr() + (f * B + b) * L);

    for (std::size_t blk = 4; blk-- > 0;) {
      d = nn::maxpool_backward(c.pool[blk], d);
      d = nn::elu_backward(c.elu_out[blk], std::move(d));
      d = bns_[blk].backward(c.bn[blk], d);
      if (blk == 0) {
        d = block1_.backward(c.conv[0], d, need_input_grad);
      } else {
        d = convs_[blk - 1].backward(c.conv[blk], d, true);
        if (!c.dropout_mask[blk].empty()) d = nn::dropout_backward(c.dropout_mask[blk], std::move(d));
      }
    }
    if (!need_input_grad) return {};
    return nn::swap_leading(d);
  }

  template <class U>
  Deep4<U> cast() const {
    Deep4<U> out(cfg_);
    auto src = const_cast<Deep4*>(this)->params();
    auto dst = out.params();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<U>();
    return out;
  }

 private:
  Tensor<T> run(const Tensor<T>& x, Mode mode, Deep4Cache<T>* c, Rng* rng) const {
    if (x.rank() != 3 || x.dim(1) != cfg_.n_channels || x.dim(2) != cfg_.input_samples)
      throw ValidationError("Deep4 expects windows of shape [B x " +
                            std::to_string(cfg_.n_channels) + " x " +
                            std::to_string(cfg_.input_samples) + "], got " + shape_str(x.shape));
    const bool train = mode == Mode::Train;
    if (train && cfg_.dropout_p > 0 && !rng)
      throw ValidationError("training-mode forward needs a dropout RNG");
    Tensor<T> h = nn::swap_leading(x);
    for (std::size_t blk = 0; blk < 4; ++blk) {
      if (blk == 0) {
        h = block1_.forward(h, c ? &c->conv[0] : nullptr);
      } else {
        if (train && cfg_.dropout_p > 0) {
          std::vector<T> scratch;
          h = nn::dropout_forward(std::move(h), cfg_.dropout_p, *rng,
                                  c ? c->dropout_mask[blk] : scratch);
        }
        h = convs_[blk - 1].forward(h, c ? &c->conv[blk] : nullptr);
      }
      h = bns_[blk].forward(h, mode, c ? &c->bn[blk] : nullptr);
      h = nn::elu_forward(std::move(h));
      if (c) c->elu_out[blk] = h;
      h = nn::maxpool_forward(h, cfg_.pool_size, cfg_.pool_stride, c ? &c->pool[blk] : nullptr);
    }
    const std::size_t F = h.dim(0), B = h.dim(1), L = h.dim(2);
    Tensor<T> flat({B, F * L});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t f = 0; f < F; ++f)
        std::copy_n(h.ptr() + (f * B + b) * L, L, flat.ptr() + b * F * L + f * L);
    if (c) {
      c->pooled_shape = h.shape;
      c->flat = flat;
    }
    return fc_.forward(flat);
  }

  Deep4Config cfg_;
  nn::SplitTemporalSpatialConv<T> block1_;
  nn::Conv1d<T> convs_[3];
  nn::BatchNorm<T> bns_[4];
  nn::Linear<T> fc_;
};

// ------------------------------------------------------- projection head

template <class T>
struct HeadCache {
  Tensor<T> in, h1, h2;
};

// Three fully-connected layers with ReLU between them.
template <class T>
class ProjectionHead {
 public:
  ProjectionHead() = default;
  ProjectionHead(const std::string& name, std::size_t in_dim, std::size_t hidden,
                 std::size_t shared_dim)
      : l1_(name + ".0", in_dim, hidden), l2_(name + ".1", hidden, hidden),
        l3_(name + ".2", hidden, shared_dim) {
    if (in_dim == 0 || hidden == 0 || shared_dim == 0)
      throw ValidationError("projection head dimensions must be positive");
  }

  void init(Rng& rng) {
    l1_.init_default(rng);
    l2_.init_default(rng);
    l3_.init_default(rng);
  }

  std::size_t in_dim() const { return l1_.in_dim; }
  std::size_t out_dim() const { return l3_.out_dim; }
  std::vector<std::size_t> layer_dims() const { return {l1_.in_dim, l1_.out_dim, l2_.out_dim, l3_.out_dim}; }

  Tensor<T> forward(const Tensor<T>& x, HeadCache<T>* cache = nullptr) const {
    if (x.rank() != 2 || x.dim(1) != in_dim())
      throw ValidationError("projection head expects input dim " + std::to_string(in_dim()) +
                            ", got " + shape_str(x.shape));
    Tensor<T> h1 = nn::relu_forward(l1_.forward(x));
    Tensor<T> h2 = nn::relu_forward(l2_.forward(h1));
    Tensor<T> y = l3_.forward(h2);
    if (cache) {
      cache->in = x;
      cache->h1 = std::move(h1);
      cache->h2 = std::move(h2);
    }
    return y;
  }

  Tensor<T> backward(const HeadCache<T>& c, const Tensor<T>& dy, bool need_dx = true) {
    Tensor<T> d = l3_.backward(c.h2, dy, true);
    d = nn::relu_backward(c.h2, std::move(d));
    d = l2_.backward(c.h1, d, true);
    d = nn::relu_backward(c.h1, std::move(d));
    return l1_.backward(c.in, d, need_dx);
  }

  nn::ParamList<T> params() {
    nn::ParamList<T> ps;
    l1_.collect(ps);
    l2_.collect(ps);
    l3_.collect(ps);
    return ps;
  }

  template <class U>
  ProjectionHead<U> cast(const std::string& name) const {
    ProjectionHead<U> out(name, l1_.in_dim, l1_.out_dim, l3_.out_dim);
    auto src = const_cast<ProjectionHead*>(this)->params();
    auto dst = out.params();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<U>();
    return out;
  }

 private:
  nn::Linear<T> l1_, l2_, l3_;
};

// Head output followed by L2 normalisation.
template <class T>
std::vector<T> project(std::span<const T> embedding, const ProjectionHead<T>& head) {
  if (embedding.size() != head.in_dim())
    throw ValidationError("projection head expects input dim " + std::to_string(head.in_dim()) +
                          ", got " + std::to_string(embedding.size()));
  Tensor<T> x({1, embedding.size()});
  std::copy(embedding.begin(), embedding.end(), x.data.begin());
  const auto y = nn::l2_normalize_rows(head.forward(x));
  return y.data;
}

// ----------------------------------------------------------- text encoders

// Frozen text feature extractor. Implementations are deterministic.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::string name() const = 0;
  virtual std::size_t max_tokens() const = 0;
  virtual std::size_t output_dim() const = 0;
  virtual std::vector<float> features(std::string_view text) const = 0;

  virtual std::vector<std::vector<float>> features_batch(const std::vector<std::string>& texts) const {
    std::vector<std::vector<float>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(features(t));
    return out;
  }
};

inline std::vector<std::string> tokenize(std::string_view text, std::size_t max_tokens) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty() && tokens.size() < max_tokens) tokens.push_back(cur);
    cur.clear();
  };
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80)
      cur += char(std::tolower(c));
    else
      flush();
    if (tokens.size() >= max_tokens) break;
  }
  flush();
  return tokens;
}

// Signed feature hashing of lower-cased word tokens into `dim` buckets,
// L2-normalised. Needs no weights, so tests run offline.
class HashedTextEncoder final : public TextEncoder {
 public:
  explicit HashedTextEncoder(std::size_t dim = 256, std::size_t max_tokens = 512,
                             std::uint64_t seed = 0x5eed)
      : dim_(dim), max_tokens_(max_tokens), seed_(seed) {
    if (dim == 0) throw ValidationError("hashed encoder dimension must be positive");
  }

  std::string name() const override { return "hashed"; }
  std::size_t max_tokens() const override { return max_tokens_; }
  std::size_t output_dim() const override { return dim_; }
  std::uint64_t seed() const { return seed_; }

  std::vector<float> features(std::string_view text) const override {
    std::vector<double> acc(dim_, 0.0);
    for (const auto& tok : tokenize(text, max_tokens_)) {
      const std::uint64_t h = splitmix64(fnv1a(tok) ^ seed_);
      acc[h % dim_] += (h >> 63) ? 1.0 : -1.0;
    }
    double n = 0;
    for (double v : acc) n += v * v;
    n = std::sqrt(n);
    std::vector<float> out(dim_, 0.0f);
    if (n > 0)
      for (std::size_t i = 0; i < dim_; ++i) out[i] = float(acc[i] / n);
    return out;
  }

 private:
  std::size_t dim_, max_tokens_;
  std::uint64_t seed_;
};

// Adapter around an external pretrained transformer. The command is run as
//   <command> <input.jsonl> <output.txt>
// where each input line is a JSON string and each output line holds
// `output_dim` whitespace-separated floats. The checkpoint location is passed
// through the EEGCLIP_TEXT_MODEL_ROOT environment variable, which the child
// process inherits. Results are memoised per text.
class ExternalTextEncoder final : public TextEncoder {
 public:
  ExternalTextEncoder(std::string command, std::size_t dim, std::size_t max_tokens = 512,
                      std::string model_name = "external")
      : command_(std::move(command)), dim_(dim), max_tokens_(max_tokens),
        model_name_(std::move(model_name)) {
    if (command_.empty()) throw ConfigError("external text encoder needs a command");
    if (dim == 0) throw ConfigError("external text encoder output_dim must be positive");
  }

  std::string name() const override { return model_name_; }
  std::size_t max_tokens() const override { return max_tokens_; }
  std::size_t output_dim() const override { return dim_; }
  const std::string& command() const { return command_; }

  // Where exchange files are written; defaults to the system temp directory.
  void set_scratch_dir(std::filesystem::path dir) { scratch_ = std::move(dir); }

  std::vector<float> features(std::string_view text) const override {
    return features_batch({std::string(text)}).front();
  }

  std::vector<std::vector<float>> features_batch(const std::vector<std::string>& texts) const override {
    std::lock_guard lock(mu_);
    std::vector<std::string> missing;
    for (const auto& t : texts) {
      const auto key = truncate(t);
      if (!cache_.count(key) && std::find(missing.begin(), missing.end(), key) == missing.end())
        missing.push_back(key);
    }
    if (!missing.empty()) run(missing);
    std::vector<std::vector<float>> out;
    for (const auto& t : texts) out.push_back(cache_.at(truncate(t)));
    return out;
  }

 private:
  std::string truncate(const std::string& text) const {
    // Whitespace-token truncation; the external tokenizer truncates again.
    std::size_t count = 0, i = 0;
    bool in_tok = false;
    for (; i < text.size(); ++i) {
      const bool space = std::isspace(static_cast<unsigned char>(text[i]));
      if (!space && !in_tok && ++count > max_tokens_) break;
      in_tok = !space;
    }
    return text.substr(0, i);
  }

  void run(const std::vector<std::string>& texts) const {
    namespace fs = std::filesystem;
    const auto dir = (scratch_.empty() ? fs::temp_directory_path() : scratch_) /
                     ("eegclip-text-" + std::to_string(splitmix64(std::uint64_t(this) ^ texts.size())));
    fs::create_directories(dir);
    const auto in_path = dir / "input.jsonl", out_path = dir / "output.txt";
    {
      std::ofstream in(in_path);
      for (const auto& t : texts) in << nlohmann::json(t).dump() << '\n';
    }
    const std::string cmd = command_ + " '" + in_path.string() + "' '" + out_path.string() + "'";
    const int rc = std::system(cmd.c_str());
    if (rc != 0) {
      fs::remove_all(dir);
      throw Error("text encoder command failed (" + std::to_string(rc) + "): " + command_);
    }
    std::ifstream out(out_path);
    std::string line;
    std::size_t i = 0;
    while (i < texts.size() && std::getline(out, line)) {
      std::istringstream ss(line);
      std::vector<float> v;
      float x;
      while (ss >> x) v.push_back(x);
      if (v.size() != dim_) {
        fs::remove_all(dir);
        throw Error("text encoder produced " + std::to_string(v.size()) + " values, expected " +
                    std::to_string(dim_));
      }
      cache_[texts[i++]] = std::move(v);
    }
    fs::remove_all(dir);
    if (i != texts.size()) throw Error("text encoder produced too few output lines");
  }

  std::string command_;
  std::size_t dim_, max_tokens_;
  std::string model_name_;
  std::filesystem::path scratch_;
  mutable std::mutex mu_;
  mutable std::map<std::string, std::vector<float>> cache_;
};

}  // namespace eegclip
