#include <catch_amalgamated.hpp>

#include <random>

#include "eegclip/eegclip.hpp"
#include "oracles.hpp"

using namespace eegclip;

namespace {

std::vector<std::vector<double>> as_rows(const Tensor<double>& s) {
  std::vector<std::vector<double>> rows(s.dim(0));
  for (std::size_t i = 0; i < s.dim(0); ++i) rows[i] = oracle::row_of(s, i);
  return rows;
}

Tensor<double> random_square(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  Tensor<double> s({n, n});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0, scale);
  for (auto& v : s.data) v = nd(rng);
  return s;
}

// Small model and corpus so that training runs in seconds.
struct SmallSetup {
  std::vector<PreparedRecording> corpus;
  ModelSpec spec;
  ContrastiveConfig cc;
  std::vector<std::size_t> all;

  SmallSetup() {
    auto synth = oracle::planted_spec(6, 21);
    synth.duration_s = 70;
    PipelineConfig pipe;
    pipe.preprocess.skip_s = 10;
    pipe.preprocess.keep_s = 60;
    pipe.window = WindowConfig{300, 300};
    corpus = prepare_corpus(generate_synthetic_corpus(synth), pipe);
    REQUIRE(corpus.size() == 6);
    spec.deep4.input_samples = 300;
    spec.deep4.block_filters = {4, 4, 4, 4};
    spec.deep4.temporal_kernel = 3;
    spec.deep4.embedding_dim = 16;
    spec.shared_dim = 8;
    spec.text.output_dim = 32;
    cc.epochs = 2;
    cc.batch_size = 32;
    cc.seed = 4;
    all.resize(corpus.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
  }

  TrainedModel run() const { return train(corpus, all, spec, make_text_encoder(spec.text), cc); }
};

}  // namespace

TEST_CASE("loss of a constant similarity matrix is log N") {
  for (std::size_t n : {2, 4, 8})
    for (bool symmetric : {false, true}) {
      const Tensor<double> s({n, n}, 0.3);
      CHECK(std::abs(info_nce_loss(s, 0.07, symmetric) - std::log(double(n))) <= 1e-9);
    }
}

TEST_CASE("loss of a confident diagonal") {
  Tensor<double> s({2, 2});
  s.data = {10, 0, 0, 10};
  CHECK(std::abs(info_nce_loss(s, 1.0, true) - std::log1p(std::exp(-10.0))) <= 1e-12);
}

TEST_CASE("loss matches the brute-force definition") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const std::size_t n = 2 + seed % 9;
    const auto s = random_square(n, seed, 0.5);
    for (bool symmetric : {false, true})
      for (double tau : {0.05, 0.5, 2.0}) {
        const double loss = info_nce_loss(s, tau, symmetric);
        CHECK(loss == Catch::Approx(oracle::info_nce(as_rows(s), tau, symmetric)).epsilon(1e-10));
        CHECK(loss >= 0);
      }
  }
}

TEST_CASE("misaligned pairs cost more than aligned ones") {
  // Unit-norm embeddings where row i of both sides is the same vector.
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  Tensor<double> x({8, 16});
  for (auto& v : x.data) v = nd(rng);
  x = nn::l2_normalize_rows(x);
  const double aligned = info_nce_loss(similarity_matrix(x, x), 0.1, true);
  Tensor<double> rolled(x.shape);
  for (std::size_t i = 0; i < 8; ++i)
    std::copy_n(x.ptr() + ((i + 1) % 8) * 16, 16, rolled.ptr() + i * 16);
  CHECK(info_nce_loss(similarity_matrix(x, rolled), 0.1, true) > aligned);
}

TEST_CASE("loss grows with temperature when the diagonal dominates") {
  Tensor<double> s({4, 4}, 0.0);
  for (std::size_t i = 0; i < 4; ++i) s(i, i) = 1.0;
  double previous = 0;
  for (double tau : {0.05, 0.1, 0.2, 0.5, 1.0, 5.0}) {
    const double loss = info_nce_loss(s, tau, true);
    CHECK(loss > previous);
    previous = loss;
  }
  CHECK(previous < std::log(4.0));
}

TEST_CASE("loss gradient matches finite differences") {
  for (bool symmetric : {false, true}) {
    auto s = random_square(4, 17, 0.7);
    Tensor<double> grad;
    info_nce_loss(s, 0.3, symmetric, &grad);
    const auto f = [&](const std::vector<double>& v) {
      Tensor<double> t({4, 4});
      t.data = v;
      return info_nce_loss(t, 0.3, symmetric);
    };
    for (std::size_t i = 0; i < 16; ++i)
      CHECK(oracle::relative_error(grad.data[i], oracle::central_difference(f, s.data, i, 1e-5)) < 1e-6);
  }
}

TEST_CASE("temperature gradient is the sum of dL/dS times S") {
  // L(S * exp(a)) at temperature 1; dL/da = sum_ij dL/dS'_ij S'_ij with S' the scaled matrix.
  const auto s = random_square(5, 18, 0.4);
  const double a = std::log(1 / 0.2);
  Tensor<double> grad;
  info_nce_loss(s, 0.2, true, &grad);
  double analytic = 0;
  for (std::size_t i = 0; i < 25; ++i) analytic += grad.data[i] * s.data[i];
  const auto f = [&](const std::vector<double>& v) { return info_nce_loss(s, std::exp(-v[0]), true); };
  CHECK(oracle::relative_error(analytic, oracle::central_difference(f, {a}, 0, 1e-6)) < 1e-6);
}

TEST_CASE("loss input validation") {
  CHECK_THROWS_AS(info_nce_loss(Tensor<double>({1, 1}), 0.07, true), ValidationError);
  CHECK_THROWS_AS(info_nce_loss(Tensor<double>({2, 3}), 0.07, true), ValidationError);
  CHECK_THROWS_AS(info_nce_loss(Tensor<double>({2, 2}), 0.0, true), ValidationError);
}

TEST_CASE("similarity matrix equals explicit dot products") {
  std::mt19937_64 rng(19);
  std::normal_distribution<double> nd;
  Tensor<double> x({5, 7}), y({3, 7});
  for (auto& v : x.data) v = nd(rng);
  for (auto& v : y.data) v = nd(rng);
  const auto s = similarity_matrix(x, y);
  REQUIRE(s.shape == std::vector<std::size_t>{5, 3});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double d = 0;
      for (std::size_t k = 0; k < 7; ++k) d += x(i, k) * y(j, k);
      CHECK(std::abs(s(i, j) - d) <= 1e-12);
    }
  CHECK_THROWS_AS(similarity_matrix(x, Tensor<double>({3, 6})), ValidationError);
}

TEST_CASE("contrastive configuration validation") {
  ContrastiveConfig cc;
  CHECK_NOTHROW(cc.validate());
  cc.batch_size = 1;
  CHECK_THROWS_AS(cc.validate(), ConfigError);
  cc = {};
  cc.warmup_epochs = 30;
  CHECK_THROWS_AS(cc.validate(), ConfigError);
  cc = {};
  cc.temperature = -1;
  CHECK_THROWS_AS(cc.validate(), ConfigError);
}

TEST_CASE("windows gathered for training belong to their recording") {
  const SmallSetup setup;
  const auto refs = all_windows(setup.corpus, setup.all);
  std::size_t expected = 0;
  for (const auto& r : setup.corpus) expected += r.window_starts.size();
  REQUIRE(refs.size() == expected);
  std::vector<WindowRef> picked = {refs[0], refs[refs.size() / 2], refs.back()};
  const auto x = gather_windows<float>(setup.corpus, picked, 300);
  for (std::size_t b = 0; b < picked.size(); ++b) {
    const auto& rec = setup.corpus[picked[b].recording];
    for (std::size_t c : {std::size_t{0}, std::size_t{20}})
      for (std::size_t t : {std::size_t{0}, std::size_t{299}})
        CHECK(x(b, c, t) == rec.signal(c, picked[b].start + t));
  }
}

TEST_CASE("training is deterministic for a fixed seed") {
  const SmallSetup setup;
  const auto a = setup.run();
  const auto b = setup.run();
  REQUIRE(a.log.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(a.log[i].epoch == b.log[i].epoch);
    CHECK(a.log[i].mean_loss == b.log[i].mean_loss);
    CHECK(std::isfinite(a.log[i].mean_loss));
  }
  auto ma = a.model, mb = b.model;
  CHECK(parameter_checksum(ma.all_params()) == parameter_checksum(mb.all_params()));
}

TEST_CASE("zero text learning rate leaves the text adapter at its calibrated start") {
  SmallSetup setup;
  setup.cc.text_lr_ratio = 0.0;
  auto trained = setup.run();
  const auto& w = trained.model.text_adapter.weight.value;
  // Hashed features have unit norm, so the calibrated gain is sqrt(dim).
  const float gain = float(std::sqrt(32.0));
  for (std::size_t i = 0; i < 32; ++i)
    for (std::size_t j = 0; j < 32; ++j) CHECK(w(i, j) == (i == j ? gain : 0.0f));
  for (float v : trained.model.text_adapter.bias.value.data) CHECK(v == 0.0f);
}

TEST_CASE("saved model reloads with identical inference") {
  const SmallSetup setup;
  const auto trained = setup.run();
  const auto dir = oracle::scratch_dir("model_roundtrip");
  save_model(trained.model, dir);
  write_train_log(trained.log, dir / "train_log.tsv");
  const auto back = load_model(dir);
  std::vector<WindowRef> refs = {{0, 0}, {1, 300}, {5, 5700}};
  const auto x = gather_windows<float>(setup.corpus, refs, 300);
  CHECK(back.model.project_eeg(x) == trained.model.project_eeg(x));
  const std::vector<std::string> texts = {"This is a normal recording", setup.corpus[0].text};
  CHECK(back.model.project_text(texts) == trained.model.project_text(texts));
  CHECK(back.model.temperature() == Catch::Approx(trained.model.temperature()).epsilon(1e-6));
  REQUIRE(back.log.size() == trained.log.size());
  CHECK(back.log[1].mean_loss == Catch::Approx(trained.log[1].mean_loss).epsilon(1e-9));
  CHECK_THROWS_AS(load_model(dir / "missing"), IoError);
}

TEST_CASE("temperature stays inside its clamp") {
  SmallSetup setup;
  setup.cc.temperature_min = 0.05;
  setup.cc.temperature_max = 0.08;
  setup.cc.lr = 0.5;
  const auto trained = setup.run();
  CHECK(trained.model.temperature() >= 0.05 * (1 - 1e-5));
  CHECK(trained.model.temperature() <= 0.08 * (1 + 1e-5));
}
