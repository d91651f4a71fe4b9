#pragma once

// Model directory layout:
//   model.json           architecture, text encoder choice, parameter shapes
//   weights/<name>.eegc  one container per parameter, 1 x numel float32
//   train_log.tsv        epoch, mean_loss, wall_time_s

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eegclip/contrastive.hpp"
#include "eegclip/data_io.hpp"

namespace eegclip {

namespace detail {

inline nlohmann::json to_json(const ModelSpec& s) {
  nlohmann::json j;
  j["deep4"] = {{"n_channels", s.deep4.n_channels},
                {"input_samples", s.deep4.input_samples},
                {"block_filters", s.deep4.block_filters},
                {"temporal_kernel", s.deep4.temporal_kernel},
                {"pool_size", s.deep4.pool_size},
                {"pool_stride", s.deep4.pool_stride},
                {"dropout_p", s.deep4.dropout_p},
                {"embedding_dim", s.deep4.embedding_dim},
                {"batch_norm_momentum", s.deep4.batch_norm_momentum}};
  j["text"] = {{"kind", s.text.kind},         {"output_dim", s.text.output_dim},
               {"max_tokens", s.text.max_tokens}, {"hash_seed", s.text.hash_seed},
               {"command", s.text.command},   {"model_name", s.text.model_name}};
  j["shared_dim"] = s.shared_dim;
  j["init_temperature"] = s.init_temperature;
  return j;
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  const auto& d = j.at("deep4");
  s.deep4.n_channels = d.at("n_channels");
  s.deep4.input_samples = d.at("input_samples");
  s.deep4.block_filters = d.at("block_filters").get<std::vector<std::size_t>>();
  s.deep4.temporal_kernel = d.at("temporal_kernel");
  s.deep4.pool_size = d.at("pool_size");
  s.deep4.pool_stride = d.at("pool_stride");
  s.deep4.dropout_p = d.at("dropout_p");
  s.deep4.embedding_dim = d.at("embedding_dim");
  s.deep4.batch_norm_momentum = d.at("batch_norm_momentum");
  const auto& t = j.at("text");
  s.text.kind = t.at("kind");
  s.text.output_dim = t.at("output_dim");
  s.text.max_tokens = t.at("max_tokens");
  s.text.hash_seed = t.at("hash_seed");
  s.text.command = t.at("command");
  s.text.model_name = t.at("model_name");
  s.shared_dim = j.at("shared_dim");
  s.init_temperature = j.at("init_temperature");
  return s;
}

}  // namespace detail

inline void write_train_log(const std::vector<EpochLog>& log, const fs::path& path) {
  std::string text = "epoch\tmean_loss\twall_time_s\n";
  char buf[128];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%zu\t%.17g\t%.3f\n", e.epoch, e.mean_loss, e.wall_time_s);
    text += buf;
  }
  detail::write_text_file(path, text);
}

inline std::vector<EpochLog> read_train_log(const fs::path& path) {
  std::vector<EpochLog> out;
  const std::string text = detail::read_text_file(path);
  std::size_t line_no = 0;
  for (auto line : detail::split(text, '\n')) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    const auto f = detail::split(line, '\t');
    EpochLog e;
    if (f.size() != 3 || !detail::parse_number(f[0], e.epoch) ||
        !detail::parse_number(f[1], e.mean_loss) || !detail::parse_number(f[2], e.wall_time_s))
      throw ParseError(line_no, "malformed training log line in '" + path.string() + "'");
    out.push_back(e);
  }
  return out;
}

inline void save_model(const ClipModel<float>& model, const fs::path& dir) {
  fs::create_directories(dir / "weights");
  auto params = const_cast<ClipModel<float>&>(model).all_params();
  nlohmann::json j = detail::to_json(model.spec());
  j["format"] = "eegclip-model-1";
  j["temperature"] = model.temperature();
  auto& plist = j["parameters"] = nlohmann::json::array();
  for (auto* p : params) {
    plist.push_back({{"name", p->name}, {"shape", p->value.shape}});
    Tensor<float> flat = p->value;
    flat.shape = {1, p->value.size()};
    write_signal_container(dir / "weights" / (p->name + ".eegc"), flat, 1.0, {p->name});
  }
  detail::write_text_file(dir / "model.json", j.dump(2) + "\n");
}

// `scratch_dir` is where an external text encoder may write exchange files.
inline TrainedModel load_model(const fs::path& dir,
                               std::shared_ptr<const TextEncoder> text_encoder = nullptr,
                               const std::string& scratch_dir = {}) {
  if (!fs::exists(dir / "model.json")) throw IoError("no model.json in '" + dir.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_text_file(dir / "model.json"));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptContainerError("model.json: " + std::string(e.what()));
  }
  ModelSpec spec;
  try {
    spec = detail::spec_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptContainerError("model.json: " + std::string(e.what()));
  }
  spec.text.scratch_dir = scratch_dir;
  TrainedModel out{ClipModel<float>(spec, std::move(text_encoder)), {}};
  for (auto* p : out.model.all_params()) {
    const auto c = read_signal_container(dir / "weights" / (p->name + ".eegc"));
    if (c.signal.size() != p->value.size())
      throw CorruptContainerError("parameter '" + p->name + "' has " +
                                  std::to_string(c.signal.size()) + " values, expected " +
                                  std::to_string(p->value.size()));
    p->value.data = c.signal.data;
  }
  if (fs::exists(dir / "train_log.tsv")) out.log = read_train_log(dir / "train_log.tsv");
  return out;
}

}  // namespace eegclip
