#include "bytenmt/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

namespace bytenmt {

namespace {

constexpr char kMagic[8] = {'B', 'N', 'M', 'T', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
  unsigned char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 4);
}

void write_u64(std::ostream& out, uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

void write_f32_array(std::ostream& out, const float* data, size_t count) {
  for (size_t i = 0; i < count; ++i) {
    uint32_t bits;
    std::memcpy(&bits, &data[i], 4);
    write_u32(out, bits);
  }
}

uint32_t read_u32(std::istream& in) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) throw Error("checkpoint: truncated file");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= uint32_t(buf[i]) << (8 * i);
  return v;
}

uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw Error("checkpoint: truncated file");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(buf[i]) << (8 * i);
  return v;
}

std::vector<float> read_f32_array(std::istream& in, size_t count) {
  std::vector<float> values(count);
  for (size_t i = 0; i < count; ++i) {
    uint32_t bits = read_u32(in);
    std::memcpy(&values[i], &bits, 4);
  }
  return values;
}

std::string read_string(std::istream& in, size_t len) {
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error("checkpoint: truncated file");
  return s;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& config) {
  nlohmann::json j{{"d_model", config.d_model},
                   {"ffn_dim", config.ffn_dim},
                   {"heads", config.heads},
                   {"enc_layers", config.enc_layers},
                   {"dec_layers", config.dec_layers},
                   {"dropout", config.dropout},
                   {"embedding", embedding_mode_name(config.embedding)},
                   {"fusion", fusion_kind_name(config.fusion)},
                   {"shallow_layers", config.shallow_layers},
                   {"block_layers", config.block_layers},
                   {"vocab", config.vocab}};
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& json) {
  nlohmann::json j = nlohmann::json::parse(json);
  ModelConfig config;
  config.d_model = j.at("d_model").get<int>();
  config.ffn_dim = j.at("ffn_dim").get<int>();
  config.heads = j.at("heads").get<int>();
  config.enc_layers = j.at("enc_layers").get<int>();
  config.dec_layers = j.at("dec_layers").get<int>();
  config.dropout = j.at("dropout").get<double>();
  config.embedding = parse_embedding_mode(j.at("embedding").get<std::string>());
  config.fusion = parse_fusion_kind(j.at("fusion").get<std::string>());
  config.shallow_layers = j.at("shallow_layers").get<int>();
  config.block_layers = j.at("block_layers").get<int>();
  config.vocab = j.at("vocab").get<int>();
  return config;
}

void save_checkpoint(
    const std::string& path, const ModelConfig& config,
    const std::vector<std::pair<std::string, Tensor<float>>>& parameters,
    const std::vector<std::pair<std::string, std::vector<float>>>&
        optimizer_state,
    int64_t step) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_u32(out, kVersion);
    const std::string config_json = model_config_to_json(config);
    write_u64(out, config_json.size());
    out.write(config_json.data(),
              static_cast<std::streamsize>(config_json.size()));
    write_u64(out, static_cast<uint64_t>(step));
    write_u32(out, static_cast<uint32_t>(parameters.size()));
    for (const auto& [name, tensor] : parameters) {
      write_u32(out, static_cast<uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_u32(out, static_cast<uint32_t>(tensor.shape().size()));
      for (int d : tensor.shape()) write_u64(out, static_cast<uint64_t>(d));
      write_f32_array(out, tensor.values().data(), tensor.values().size());
    }
    write_u32(out, static_cast<uint32_t>(optimizer_state.size()));
    for (const auto& [name, values] : optimizer_state) {
      write_u32(out, static_cast<uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_u64(out, values.size());
      write_f32_array(out, values.data(), values.size());
    }
    if (!out) throw Error("checkpoint write failed: " + path);
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw Error("not a checkpoint file: " + path);
  const uint32_t version = read_u32(in);
  if (version != kVersion)
    throw Error("unsupported checkpoint version " + std::to_string(version) +
                " in " + path);
  CheckpointData data;
  const uint64_t config_len = read_u64(in);
  data.config = model_config_from_json(read_string(in, config_len));
  data.step = static_cast<int64_t>(read_u64(in));
  const uint32_t n_params = read_u32(in);
  for (uint32_t i = 0; i < n_params; ++i) {
    NamedArray array;
    array.name = read_string(in, read_u32(in));
    const uint32_t ndim = read_u32(in);
    size_t count = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      array.shape.push_back(static_cast<int>(read_u64(in)));
      count *= static_cast<size_t>(array.shape.back());
    }
    array.values = read_f32_array(in, count);
    data.parameters.push_back(std::move(array));
  }
  const uint32_t n_state = read_u32(in);
  for (uint32_t i = 0; i < n_state; ++i) {
    std::string name = read_string(in, read_u32(in));
    const uint64_t count = read_u64(in);
    data.optimizer_state.emplace_back(std::move(name),
                                      read_f32_array(in, count));
  }
  return data;
}

TransformerModel<float> model_from_checkpoint(const CheckpointData& data) {
  TransformerModel<float> model(data.config, /*seed=*/0);
  std::set<std::string> used;
  for (auto& [name, param] : model.parameters()) {
    const NamedArray* found = nullptr;
    for (const auto& array : data.parameters)
      if (array.name == name) {
        if (found)
          throw Error("checkpoint has duplicate parameter: " + name);
        found = &array;
      }
    if (!found) throw Error("checkpoint missing parameter: " + name);
    if (found->shape != param.shape())
      throw Error("checkpoint shape mismatch for " + name + ": " +
                  shape_str(found->shape) + " vs " + shape_str(param.shape()));
    std::copy(found->values.begin(), found->values.end(), param.raw().begin());
    used.insert(name);
  }
  for (const auto& array : data.parameters)
    if (!used.count(array.name))
      throw Error("checkpoint has unknown parameter: " + array.name);
  return model;
}

}  // namespace bytenmt
