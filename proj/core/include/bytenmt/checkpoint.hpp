#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bytenmt/model.hpp"

namespace bytenmt {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// In-memory image of a checkpoint file: config, step counter, named
/// parameter arrays and named optimizer-state arrays.
struct CheckpointData {
  ModelConfig config;
  int64_t step = 0;
  std::vector<NamedArray> parameters;
  std::vector<std::pair<std::string, std::vector<float>>> optimizer_state;
};

/// Writes a versioned container: config as JSON text plus named
/// little-endian float32 arrays with explicit shapes. The write is
/// atomic (temp file + rename).
void save_checkpoint(
    const std::string& path, const ModelConfig& config,
    const std::vector<std::pair<std::string, Tensor<float>>>& parameters,
    const std::vector<std::pair<std::string, std::vector<float>>>&
        optimizer_state,
    int64_t step);

CheckpointData load_checkpoint(const std::string& path);

/// Rebuilds a model from a checkpoint. Every parameter implied by the
/// config must be present exactly once with a matching shape.
TransformerModel<float> model_from_checkpoint(const CheckpointData& data);

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& json);

}  // namespace bytenmt
