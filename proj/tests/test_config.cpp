#include <catch_amalgamated.hpp>

#include <fstream>

#include "eegclip/config.hpp"
#include "oracles.hpp"

using namespace eegclip;

TEST_CASE("empty configuration gives the documented defaults") {
  const auto cfg = parse_run_config("");
  CHECK(cfg.pipeline.preprocess.skip_s == 60);
  CHECK(cfg.pipeline.preprocess.keep_s == 120);
  CHECK(cfg.pipeline.preprocess.clip_uv == 800);
  CHECK(cfg.pipeline.preprocess.target_rate_hz == 100);
  CHECK(cfg.pipeline.preprocess.scale_divisor == 30);
  CHECK(cfg.pipeline.preprocess.channel_subset.size() == 21);
  CHECK(cfg.pipeline.window.length_samples == 1200);
  CHECK(cfg.pipeline.window.stride_samples == 519);
  CHECK(cfg.model.deep4.n_channels == 21);
  CHECK(cfg.model.deep4.embedding_dim == 128);
  CHECK(cfg.model.shared_dim == 64);
  CHECK(cfg.contrastive.temperature == 0.07);
  CHECK(cfg.contrastive.batch_size == 64);
  CHECK(cfg.contrastive.epochs == 20);
  CHECK(cfg.contrastive.lr == 5e-3);
  CHECK(cfg.contrastive.weight_decay == 5e-4);
  CHECK(cfg.contrastive.text_lr_ratio == 1e-3);
  CHECK(cfg.contrastive.cosine_schedule);
  CHECK(cfg.split_mode == SplitMode::FewShot);
  CHECK(cfg.fractions == default_fractions());
  CHECK(cfg.eval.n_seeds == 10);
  CHECK(cfg.synthetic.classes.size() == 2);
  CHECK(cfg.prompts_for(Task::Age) == build_prompts(Task::Age));
}

TEST_CASE("keys are applied per section") {
  const auto cfg = parse_run_config(R"(
# comment
[run]
seed = 9

[contrastive]
epochs = 3
batch_size = 16
learnable_temperature = false
lr_schedule = constant
warmup_epochs = 0

[split]
mode = standard

[eval]
tasks = pathological, gender
probe = mlp3

[prompts]
age.a = young
age.b = old

[synthetic]
class.slow.amplitude_uv = 7.5
tone_channels = 0, 3
)");
  CHECK(cfg.seed == 9);
  CHECK(cfg.contrastive.epochs == 3);
  CHECK(cfg.contrastive.batch_size == 16);
  CHECK_FALSE(cfg.contrastive.learnable_temperature);
  CHECK_FALSE(cfg.contrastive.cosine_schedule);
  CHECK(cfg.contrastive.warmup_epochs == 0);
  CHECK(cfg.split_mode == SplitMode::Standard);
  CHECK(cfg.eval.tasks == std::vector<Task>{Task::Pathological, Task::Gender});
  CHECK(cfg.eval.probe.kind == ProbeKind::Mlp3);
  CHECK(cfg.prompts_for(Task::Age) == PromptPair{"young", "old"});
  CHECK(cfg.synthetic.classes[0].amplitude_uv == 7.5);
  CHECK(cfg.synthetic.tone_channels == std::vector<std::size_t>{0, 3});
  CHECK(cfg.contrastive.seed == derive_seed(9, "contrastive"));
  CHECK(cfg.synthetic.seed != parse_run_config("").synthetic.seed);
}

TEST_CASE("errors name the offending line") {
  const auto message = [](std::string_view text) -> std::string {
    try {
      parse_run_config(text);
    } catch (const ConfigError& e) {
      return e.what();
    }
    return "";
  };
  CHECK(message("[contrastive]\nepochs = 2\nbogus = 1\n").find("line 3") != std::string::npos);
  CHECK(message("[contrastive]\nepochs = 2\nbogus = 1\n").find("contrastive.bogus") != std::string::npos);
  CHECK(message("[contrastive]\nepochs = many\n").find("line 2") != std::string::npos);
  CHECK(message("epochs = 2\n").find("line 1") != std::string::npos);
  CHECK(message("[contrastive\n").find("line 1") != std::string::npos);
  CHECK(message("[contrastive]\nlr_schedule = step\n").find("line 2") != std::string::npos);
  CHECK_FALSE(message("[contrastive]\nlearnable_temperature = maybe\n").empty());
}

TEST_CASE("cross-field validation") {
  // The encoder input follows the window length; too short for four blocks fails.
  CHECK(parse_run_config("[window]\nlength = 1000\n").model.deep4.input_samples == 1000);
  CHECK_THROWS_AS(parse_run_config("[window]\nlength = 200\nstride = 100\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[contrastive]\nepochs = 2\nwarmup_epochs = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[contrastive]\nbatch_size = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[synthetic]\nclass.extra.center_hz = 9\n"), ConfigError);
}

TEST_CASE("config files resolve relative paths against their directory") {
  const auto dir = oracle::scratch_dir("config_file");
  std::ofstream(dir / "run.ini") << "[data]\nmanifest = data/m.tsv\n";
  const auto cfg = load_run_config(dir / "run.ini");
  CHECK(cfg.manifest == fs::absolute(dir) / "data/m.tsv");
  CHECK_THROWS_AS(load_run_config(dir / "none.ini"), ConfigError);
}

TEST_CASE("shipped configs parse") {
  const fs::path dir = fs::path(EEGCLIP_SOURCE_DIR) / "configs";
  const auto def = load_run_config(dir / "default.ini");
  const auto empty = parse_run_config("");
  CHECK(def.contrastive.epochs == empty.contrastive.epochs);
  CHECK(def.model.deep4.input_samples == empty.model.deep4.input_samples);
  CHECK(def.model.text.output_dim == empty.model.text.output_dim);
  const auto acc = load_run_config(dir / "acceptance.ini");
  CHECK(acc.synthetic.n_recordings == 200);
  CHECK(acc.baseline.n_seeds == 10);
  CHECK(acc.prompts_for(Task::Pathological).a.find("slow-template") != std::string::npos);
}
