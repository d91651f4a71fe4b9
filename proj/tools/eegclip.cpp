// eegclip: synthetic data, contrastive training, evaluation and gradient
// analysis from one config file.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 runtime error.

#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "eegclip/commands.hpp"

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kRuntime = 4 };

int fail(int code, const std::string& msg) {
  std::string line = msg;
  for (auto& c : line)
    if (c == '\n') c = ' ';
  std::cerr << "eegclip: error: " << line << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EEG/report contrastive pretraining toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string config_path, out_dir, model_dir, regime = "probe", prompt;
  bool deterministic = false, quiet = false;
  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "run config file")->required();
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_flag("--deterministic", deterministic, "single-threaded, reproducible execution");
    sub->add_flag("--quiet", quiet, "suppress progress output");
  };
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus and manifest");
  common(synth);
  auto* train = app.add_subcommand("train", "contrastive training");
  common(train);
  auto* eval = app.add_subcommand("eval", "evaluate a trained model");
  common(eval);
  eval->add_option("--model", model_dir, "trained model directory")->required();
  eval->add_option("--regime", regime, "probe | zero_shot | few_shot | baseline");
  auto* grads = app.add_subcommand("gradients", "frequency-domain gradient map for a prompt");
  common(grads);
  grads->add_option("--model", model_dir, "trained model directory")->required();
  grads->add_option("--prompt", prompt, "text prompt")->required();
  auto* emb = app.add_subcommand("export-embeddings", "write window projections as CSV");
  common(emb);
  emb->add_option("--model", model_dir, "trained model directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kConfig, e.what());
  }

  try {
    eegclip::CommandContext ctx;
    ctx.cfg = eegclip::load_run_config(config_path);
    ctx.config_text = eegclip::detail::read_text_file(config_path);
    ctx.out = out_dir;
    ctx.deterministic = deterministic;
    if (!quiet) ctx.log = [](const std::string& m) { std::cerr << m << "\n"; };

    if (synth->parsed()) {
      std::cout << eegclip::cmd_synth(ctx).string() << "\n";
    } else if (train->parsed()) {
      std::cout << eegclip::cmd_train(ctx).model_dir.string() << "\n";
    } else if (eval->parsed()) {
      const auto r = eegclip::cmd_eval(ctx, model_dir, eegclip::regime_from_name(regime));
      std::cout << eegclip::summary_table(r.summary);
    } else if (grads->parsed()) {
      eegclip::cmd_gradients(ctx, model_dir, prompt);
      std::cout << (ctx.out / "gradients.csv").string() << "\n";
    } else if (emb->parsed()) {
      const auto rows = eegclip::cmd_export_embeddings(ctx, model_dir);
      std::cout << rows << " rows -> " << (ctx.out / "embeddings.csv").string() << "\n";
    }
  } catch (const eegclip::ConfigError& e) {
    return fail(kConfig, e.what());
  } catch (const eegclip::IoError& e) {
    return fail(kData, e.what());
  } catch (const eegclip::CorruptContainerError& e) {
    return fail(kData, e.what());
  } catch (const eegclip::ParseError& e) {
    return fail(kData, e.what());
  } catch (const eegclip::ValidationError& e) {
    return fail(kData, e.what());
  } catch (const std::exception& e) {
    return fail(kRuntime, e.what());
  }
  return kOk;
}
