#include "bytenmt/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace bytenmt {

namespace {

using nlohmann::json;

void reject_unknown(const json& node, const std::set<std::string>& known,
                    const std::string& prefix) {
  for (const auto& [key, value] : node.items()) {
    if (!known.count(key))
      throw Error("unknown config key: " + prefix + key);
  }
}

template <typename T>
void read(const json& node, const char* key, T& out) {
  if (node.contains(key)) out = node.at(key).get<T>();
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(std::string("config parse error: ") + e.what());
  }
  if (!root.is_object()) throw Error("config root must be an object");
  reject_unknown(root, {"run_name", "seed", "model", "data", "train", "eval"},
                 "");
  RunConfig config;
  read(root, "run_name", config.run_name);
  read(root, "seed", config.seed);
  if (root.contains("model")) {
    const auto& m = root.at("model");
    reject_unknown(m,
                   {"d_model", "ffn_dim", "heads", "enc_layers", "dec_layers",
                    "dropout", "embedding", "fusion", "shallow_layers",
                    "block_layers", "vocab"},
                   "model.");
    read(m, "d_model", config.model.d_model);
    read(m, "ffn_dim", config.model.ffn_dim);
    read(m, "heads", config.model.heads);
    read(m, "enc_layers", config.model.enc_layers);
    read(m, "dec_layers", config.model.dec_layers);
    read(m, "dropout", config.model.dropout);
    if (m.contains("embedding"))
      config.model.embedding =
          parse_embedding_mode(m.at("embedding").get<std::string>());
    if (m.contains("fusion"))
      config.model.fusion =
          parse_fusion_kind(m.at("fusion").get<std::string>());
    read(m, "shallow_layers", config.model.shallow_layers);
    read(m, "block_layers", config.model.block_layers);
    read(m, "vocab", config.model.vocab);
  }
  if (root.contains("data")) {
    const auto& d = root.at("data");
    reject_unknown(d,
                   {"train_src", "train_tgt", "valid_src", "valid_tgt",
                    "max_bytes", "token_budget"},
                   "data.");
    read(d, "train_src", config.data.train_src);
    read(d, "train_tgt", config.data.train_tgt);
    read(d, "valid_src", config.data.valid_src);
    read(d, "valid_tgt", config.data.valid_tgt);
    read(d, "max_bytes", config.data.max_bytes);
    read(d, "token_budget", config.data.token_budget);
  }
  if (root.contains("train")) {
    const auto& t = root.at("train");
    reject_unknown(t,
                   {"steps", "warmup_steps", "peak_lr", "weight_decay",
                    "label_smoothing", "clip_norm", "checkpoint_interval"},
                   "train.");
    read(t, "steps", config.train.steps);
    read(t, "warmup_steps", config.train.warmup_steps);
    read(t, "peak_lr", config.train.peak_lr);
    read(t, "weight_decay", config.train.weight_decay);
    read(t, "label_smoothing", config.train.label_smoothing);
    read(t, "clip_norm", config.train.clip_norm);
    read(t, "checkpoint_interval", config.train.checkpoint_interval);
  }
  if (root.contains("eval")) {
    const auto& e = root.at("eval");
    reject_unknown(e, {"beam", "max_len_factor"}, "eval.");
    read(e, "beam", config.eval.beam);
    read(e, "max_len_factor", config.eval.max_len_factor);
  }
  config.model.validate();
  return config;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open config: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_run_config(buffer.str());
}

std::string run_config_to_json(const RunConfig& config) {
  json root{
      {"run_name", config.run_name},
      {"seed", config.seed},
      {"model",
       {{"d_model", config.model.d_model},
        {"ffn_dim", config.model.ffn_dim},
        {"heads", config.model.heads},
        {"enc_layers", config.model.enc_layers},
        {"dec_layers", config.model.dec_layers},
        {"dropout", config.model.dropout},
        {"embedding", embedding_mode_name(config.model.embedding)},
        {"fusion", fusion_kind_name(config.model.fusion)},
        {"shallow_layers", config.model.shallow_layers},
        {"block_layers", config.model.block_layers},
        {"vocab", config.model.vocab}}},
      {"data",
       {{"train_src", config.data.train_src},
        {"train_tgt", config.data.train_tgt},
        {"valid_src", config.data.valid_src},
        {"valid_tgt", config.data.valid_tgt},
        {"max_bytes", config.data.max_bytes},
        {"token_budget", config.data.token_budget}}},
      {"train",
       {{"steps", config.train.steps},
        {"warmup_steps", config.train.warmup_steps},
        {"peak_lr", config.train.peak_lr},
        {"weight_decay", config.train.weight_decay},
        {"label_smoothing", config.train.label_smoothing},
        {"clip_norm", config.train.clip_norm},
        {"checkpoint_interval", config.train.checkpoint_interval}}},
      {"eval",
       {{"beam", config.eval.beam},
        {"max_len_factor", config.eval.max_len_factor}}}};
  return root.dump(2) + "\n";
}

}  // namespace bytenmt
