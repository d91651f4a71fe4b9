#include <catch_amalgamated.hpp>

#include <random>
#include <set>

#include "eegclip/eegclip.hpp"
#include "oracles.hpp"

using namespace eegclip;

namespace {

std::vector<std::string> make_ids(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("rec" + std::to_string(i));
  return ids;
}

std::vector<int> alternating(std::size_t n) {
  std::vector<int> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = int(i % 2);
  return s;
}

// Short recordings and a small encoder, untrained.
struct SmallCorpus {
  std::vector<PreparedRecording> corpus;
  ModelSpec spec;

  explicit SmallCorpus(std::size_t n) {
    auto synth = oracle::planted_spec(n, 31);
    synth.duration_s = 40;
    PipelineConfig pipe;
    pipe.preprocess.skip_s = 5;
    pipe.preprocess.keep_s = 30;
    pipe.window = WindowConfig{300, 300};
    corpus = prepare_corpus(generate_synthetic_corpus(synth), pipe);
    spec.deep4.input_samples = 300;
    spec.deep4.block_filters = {4, 4, 4, 4};
    spec.deep4.temporal_kernel = 3;
    spec.deep4.embedding_dim = 16;
    spec.shared_dim = 8;
    spec.text.output_dim = 32;
  }

  ClipModel<float> model(std::uint64_t seed = 1) const {
    ClipModel<float> m(spec, nullptr);
    m.init(seed);
    return m;
  }

  std::vector<std::size_t> all() const {
    std::vector<std::size_t> v(corpus.size());
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
  }
};

}  // namespace

TEST_CASE("split proportions, disjointness and coverage") {
  for (std::size_t n = 50; n <= 500; n += 37) {
    const auto ids = make_ids(n);
    const auto plan = make_split_plan(ids, alternating(n), SplitMode::FewShot, default_fractions(), 7);
    CHECK(plan.contrastive_train_ids.size() == std::size_t(std::llround(0.6 * double(n))));
    CHECK(plan.task_train_ids.size() == std::size_t(std::llround(0.2 * double(n))));
    std::set<std::string> seen;
    for (const auto* part : {&plan.contrastive_train_ids, &plan.task_train_ids, &plan.eval_ids})
      for (const auto& id : *part) CHECK(seen.insert(id).second);
    CHECK(seen.size() == n);

    // Each fraction subset is a prefix of the next larger one.
    for (std::size_t i = 0; i + 1 < plan.fractions.size(); ++i) {
      const auto& big = plan.fraction_subsets[i];
      const auto& small = plan.fraction_subsets[i + 1];
      REQUIRE(small.size() <= big.size());
      CHECK(std::equal(small.begin(), small.end(), big.begin()));
    }
    for (const auto& s : plan.fraction_subsets)
      for (const auto& id : s)
        CHECK(std::find(plan.task_train_ids.begin(), plan.task_train_ids.end(), id) !=
              plan.task_train_ids.end());
  }
}

TEST_CASE("split is stratified and seeded") {
  const auto ids = make_ids(100);
  const auto strata = alternating(100);
  const auto a = make_split_plan(ids, strata, SplitMode::FewShot, default_fractions(), 1);
  CHECK(a.contrastive_train_ids == make_split_plan(ids, strata, SplitMode::FewShot, default_fractions(), 1)
                                       .contrastive_train_ids);
  CHECK_FALSE(a.contrastive_train_ids ==
              make_split_plan(ids, strata, SplitMode::FewShot, default_fractions(), 2).contrastive_train_ids);
  const auto count_odd = [](const std::vector<std::string>& v) {
    std::size_t k = 0;
    for (const auto& id : v) k += std::stoi(id.substr(3)) % 2;
    return k;
  };
  CHECK(count_odd(a.contrastive_train_ids) == 30);
  CHECK(count_odd(a.task_train_ids) == 10);
  for (const auto& s : a.fraction_subsets) {
    const auto odd = count_odd(s);
    CHECK(odd >= 1);
    CHECK(odd < s.size());
  }
}

TEST_CASE("fraction subset sizes") {
  const auto plan = make_split_plan(make_ids(100), alternating(100), SplitMode::FewShot,
                                    default_fractions(), 3);
  REQUIRE(plan.task_train_ids.size() == 20);
  CHECK(plan.subset({1, 2}).size() == 10);
  CHECK(plan.subset({1, 5}).size() == 4);
  CHECK(plan.subset({1, 10}).size() == 2);
  // round(20/50) = 0 is raised to one per class.
  CHECK(plan.subset({1, 50}).size() == 2);
  CHECK(fraction_subset_size({1, 50}, 500, 2) == 10);
  CHECK_THROWS_AS(plan.subset({1, 3}), ValidationError);

  const auto standard = make_split_plan(make_ids(100), alternating(100), SplitMode::Standard,
                                        default_fractions(), 3);
  CHECK(standard.fraction_subsets.empty());
  CHECK(standard.eval_ids.size() == 20);
}

TEST_CASE("split input validation") {
  CHECK_THROWS_AS(make_split_plan(make_ids(4), {}, SplitMode::Standard, {}, 0), ValidationError);
  auto dup = make_ids(10);
  dup[3] = dup[4];
  CHECK_THROWS_AS(make_split_plan(dup, {}, SplitMode::Standard, {}, 0), ValidationError);
}

TEST_CASE("fraction parsing") {
  CHECK(Fraction::parse("1/50") == Fraction{1, 50});
  CHECK(Fraction::parse("1") == Fraction{1, 1});
  CHECK_THROWS_AS(Fraction::parse("0/5"), ValidationError);
  CHECK_THROWS_AS(Fraction::parse("3/2"), ValidationError);
  CHECK_THROWS_AS(Fraction::parse("1/x"), ValidationError);
}

TEST_CASE("balanced accuracy matches a confusion-matrix oracle") {
  std::vector<int> truth = {0, 1, 1, 1}, pred = {0, 0, 1, 1};
  CHECK(balanced_accuracy(pred, truth) == Catch::Approx(0.8333333333333).epsilon(1e-9));
  CHECK(balanced_accuracy(truth, truth) == 1.0);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 60;
    const int k = 2 + int(rng() % 3);
    std::vector<int> y(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = int(rng() % std::uint64_t(k));
      p[i] = int(rng() % std::uint64_t(k));
    }
    REQUIRE(balanced_accuracy(p, y) == Catch::Approx(oracle::balanced_accuracy(p, y)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(balanced_accuracy({}, {}), ValidationError);
  CHECK_THROWS_AS(balanced_accuracy({0}, {0, 1}), ValidationError);
}

TEST_CASE("percentile interpolates linearly") {
  CHECK(percentile({4, 1, 3, 2}, 0.1) == Catch::Approx(1.3));
  CHECK(percentile({4, 1, 3, 2}, 0.9) == Catch::Approx(3.7));
  CHECK(median({5, 1, 3}) == 3);
  CHECK_THROWS_AS(median({}), ValidationError);
}

TEST_CASE("probes separate well-separated blobs") {
  for (auto kind : {ProbeKind::LogReg, ProbeKind::Mlp3}) {
    std::mt19937_64 rng(9);
    std::normal_distribution<float> nd(0, 0.5f);
    Tensor<float> x({200, 6});
    std::vector<int> y(200);
    for (std::size_t i = 0; i < 200; ++i) {
      y[i] = int(i % 2);
      for (std::size_t j = 0; j < 6; ++j) x(i, j) = nd(rng) + (y[i] ? 3.0f : -3.0f) + float(j);
    }
    ProbeConfig cfg;
    cfg.kind = kind;
    const auto p = fit_probe(x, y, cfg);
    CHECK(balanced_accuracy(predict_windows(p, x), y) == 1.0);
    const auto prob = p.predict_proba(x);
    for (std::size_t i = 0; i < 200; ++i) CHECK(prob(i, 0) + prob(i, 1) == Catch::Approx(1.0));
  }
  Tensor<float> x({3, 2});
  CHECK_THROWS_AS(fit_probe(x, {1, 1, 1}, ProbeConfig{}), ValidationError);
  CHECK_THROWS_AS(fit_probe(x, {0, 1}, ProbeConfig{}), ValidationError);
}

TEST_CASE("recording scores average window probabilities, ties to the first class") {
  SmallCorpus sc(4);
  Tensor<double> prob({4, 2});
  prob.data = {0.5, 0.5, 0.5, 0.5, 0.9, 0.1, 0.2, 0.8};
  const auto m = score_recordings(prob, {0, 0, 1, 1}, sc.corpus, Task::Pathological, Method::EegClipProbe);
  // Recording 0 ties and goes to class 0; recording 1 averages to 0.55 / 0.45.
  std::vector<int> truth = {*sc.corpus[0].labels.class_of(Task::Pathological),
                            *sc.corpus[1].labels.class_of(Task::Pathological)};
  CHECK(m.balanced_accuracy == Catch::Approx(oracle::balanced_accuracy({0, 0}, truth)));
  CHECK(m.n_eval == 2);
}

TEST_CASE("zero-shot score") {
  Tensor<float> w({2, 2});
  w.data = {1, 0, 0, 1};
  const std::vector<float> a = {1, 0}, b = {0, 1};
  const auto tie = zero_shot_score(w, a, b);
  CHECK(tie.score == 0.0);
  CHECK(tie.cls == 0);

  std::mt19937_64 rng(12);
  std::normal_distribution<float> nd;
  Tensor<float> x({7, 4});
  for (auto& v : x.data) v = nd(rng);
  x = nn::l2_normalize_rows(x);
  const std::vector<float> pa = {1, 0, 0, 0}, pb = {0, 0.6f, 0.8f, 0};
  double expected = 0;
  for (std::size_t i = 0; i < 7; ++i) expected += double(x(i, 1)) * 0.6 + double(x(i, 2)) * 0.8 - x(i, 0);
  const auto r = zero_shot_score(x, pa, pb);
  CHECK(r.score == Catch::Approx(expected / 7).margin(1e-6));
  CHECK(r.cls == (expected > 0 ? 1 : 0));

  // Window order does not matter.
  Tensor<float> rev(x.shape);
  for (std::size_t i = 0; i < 7; ++i) std::copy_n(x.ptr() + (6 - i) * 4, 4, rev.ptr() + i * 4);
  CHECK(zero_shot_score(rev, pa, pb).score == Catch::Approx(r.score).margin(1e-7));
  // Swapping the prompts flips the decision.
  CHECK(zero_shot_score(x, pb, pa).score == Catch::Approx(-r.score).margin(1e-7));
  CHECK_THROWS_AS(zero_shot_score(Tensor<float>({0, 4}), pa, pb), ValidationError);
}

TEST_CASE("zero-shot over a corpus matches per-recording classification") {
  const SmallCorpus sc(6);
  const auto model = sc.model();
  const auto all = sc.all();
  const auto proj = project_corpus(model, sc.corpus, all);
  const auto m = evaluate_zero_shot(model, proj, sc.corpus, all, Task::Pathological,
                                    build_prompts(Task::Pathological));
  std::vector<int> pred, truth;
  for (auto r : all) {
    pred.push_back(zero_shot_classify(model, sc.corpus[r], Task::Pathological).cls);
    truth.push_back(*sc.corpus[r].labels.class_of(Task::Pathological));
  }
  CHECK(m.balanced_accuracy == Catch::Approx(oracle::balanced_accuracy(pred, truth)));
  CHECK(m.method == Method::ZeroShot);
}

TEST_CASE("fitting probes leaves the encoder untouched") {
  const SmallCorpus sc(10);
  auto model = sc.model();
  const auto before = parameter_checksum(model.all_params());
  const auto all = sc.all();
  const auto table = embed_corpus(model, sc.corpus, all);
  for (auto kind : {ProbeKind::LogReg, ProbeKind::Mlp3}) {
    ProbeConfig cfg;
    cfg.kind = kind;
    cfg.mlp_max_epochs = 5;
    const auto p = fit_probe_on(table, sc.corpus, all, Task::Pathological, cfg);
    evaluate_probe(p, table, sc.corpus, all, Task::Pathological);
  }
  CHECK(parameter_checksum(model.all_params()) == before);
  CHECK(table.embeddings.dim(1) == 16);
}

TEST_CASE("few-shot sweep cells, summaries and missing subsets") {
  SmallCorpus sc(50);
  const auto model = sc.model();
  const auto split = make_split_plan(sc.corpus, SplitMode::FewShot, {{1, 2}, {1, 50}}, 3);
  const auto train_table = embed_corpus(model, sc.corpus, indices_of(sc.corpus, split.task_train_ids));
  const auto eval_table = embed_corpus(model, sc.corpus, indices_of(sc.corpus, split.eval_ids));

  const auto one = few_shot_sweep(train_table, eval_table, sc.corpus, Task::Pathological, split,
                                  {{1, 2}, {1, 50}}, 1, ProbeConfig{});
  CHECK(one.cells.size() == 2);
  REQUIRE(one.summary.size() == 2);
  CHECK_FALSE(one.summary[0].ci80.has_value());

  const auto three = few_shot_sweep(train_table, eval_table, sc.corpus, Task::Pathological, split,
                                    {{1, 2}}, 3, ProbeConfig{});
  REQUIRE(three.summary.size() == 1);
  REQUIRE(three.summary[0].ci80.has_value());
  std::vector<double> v;
  for (const auto& c : three.cells) v.push_back(c.balanced_accuracy);
  CHECK(three.summary[0].balanced_accuracy == Catch::Approx(median(v)));
  CHECK(three.summary[0].ci80->first <= three.summary[0].balanced_accuracy);

  // A task with a single class everywhere has no fittable subset.
  for (auto& r : sc.corpus) r.labels.gender = Gender::M;
  const auto none = few_shot_sweep(train_table, eval_table, sc.corpus, Task::Gender, split,
                                   {{1, 2}}, 2, ProbeConfig{});
  CHECK(none.cells.empty());
  CHECK(none.missing.size() == 2);
  CHECK_THROWS_AS(few_shot_sweep(train_table, eval_table, sc.corpus, Task::Gender, split, {}, 2,
                                 ProbeConfig{}),
                  ValidationError);
}

TEST_CASE("alternative-task baseline rejects the target task") {
  const SmallCorpus sc(10);
  const auto split = make_split_plan(sc.corpus, SplitMode::Standard, {}, 0);
  CHECK_THROWS_AS(run_baseline(BaselineKind::AlternativeTask, Task::Age, AltTask::of(Task::Age), sc.corpus,
                               split, split.task_train_ids, sc.spec.deep4, BaselineConfig{}, 0),
                  ValidationError);
}

TEST_CASE("task-specific baseline trains and scores") {
  const SmallCorpus sc(10);
  const auto split = make_split_plan(sc.corpus, SplitMode::Standard, {}, 0);
  BaselineConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  const auto r = run_baseline(BaselineKind::TaskSpecific, Task::Pathological, {}, sc.corpus, split,
                              split.contrastive_train_ids, sc.spec.deep4, cfg, 1);
  CHECK(r.metrics.method == Method::TaskSpecific);
  CHECK(r.metrics.n_eval == split.eval_ids.size());
  CHECK(r.metrics.balanced_accuracy >= 0.0);
  CHECK(r.metrics.balanced_accuracy <= 1.0);
}

TEST_CASE("metrics record and summary table") {
  TaskMetrics m;
  m.task = Task::Age;
  m.method = Method::EegClipProbe;
  m.balanced_accuracy = 0.75;
  m.n_eval = 12;
  m.fraction = Fraction{1, 10};
  m.seed = 2;
  m.probe = "logreg";
  const auto j = nlohmann::json::parse(metrics_record(m));
  CHECK(j["task"] == "age");
  CHECK(j["fraction"] == "1/10");
  CHECK(j["seed"] == 2);
  CHECK(j["balanced_accuracy"] == 0.75);
  CHECK(j["n_eval"] == 12);
  CHECK_FALSE(j.contains("ci80"));
  m.ci80 = std::make_pair(0.6, 0.9);
  const auto table = summary_table({m});
  CHECK(table.find("0.7500\t0.6000\t0.9000\t12") != std::string::npos);
}
