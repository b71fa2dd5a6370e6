#pragma once

#include <cstdint>
#include <string>

#include "bytenmt/model.hpp"
#include "bytenmt/train.hpp"

namespace bytenmt {

/// Full run description: model architecture plus data/training/eval
/// settings and the seed. Every field has a default; unknown keys in the
/// file are rejected by name.
struct RunConfig {
  std::string run_name = "run";
  uint64_t seed = 1;
  ModelConfig model;

  struct DataSection {
    std::string train_src;
    std::string train_tgt;
    std::string valid_src;
    std::string valid_tgt;
    int max_bytes = 800;
    int64_t token_budget = 1024;

    bool operator==(const DataSection&) const = default;
  } data;

  struct TrainSection {
    int64_t steps = 1000;
    int64_t warmup_steps = 4000;
    double peak_lr = 5e-4;
    double weight_decay = 1e-4;
    double label_smoothing = 0.1;
    double clip_norm = 1.0;
    int64_t checkpoint_interval = 0;

    bool operator==(const TrainSection&) const = default;
  } train;

  struct EvalSection {
    int beam = 1;
    double max_len_factor = 2.0;

    bool operator==(const EvalSection&) const = default;
  } eval;

  bool operator==(const RunConfig&) const = default;

  AdamConfig adam() const {
    AdamConfig adam;
    adam.warmup_steps = train.warmup_steps;
    adam.peak_lr = train.peak_lr;
    adam.weight_decay = train.weight_decay;
    adam.label_smoothing = train.label_smoothing;
    adam.clip_norm = train.clip_norm;
    return adam;
  }
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& config);

}  // namespace bytenmt
