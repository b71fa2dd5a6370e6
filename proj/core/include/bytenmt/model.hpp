#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bytenmt/bytes.hpp"
#include "bytenmt/error.hpp"
#include "bytenmt/rng.hpp"
#include "bytenmt/tensor.hpp"

namespace bytenmt {

enum class EmbeddingMode { kOneHot, kDense };
enum class FusionKind { kNone, kNcf, kWsf };

std::string embedding_mode_name(EmbeddingMode mode);
EmbeddingMode parse_embedding_mode(const std::string& name);
std::string fusion_kind_name(FusionKind kind);
FusionKind parse_fusion_kind(const std::string& name);

/// Architecture plus fusion-variant knobs. The defaults are the base
/// setup: 6+6 layers, 512 hidden units, feed-forward 2048, 8 heads.
struct ModelConfig {
  int d_model = 512;
  int ffn_dim = 2048;
  int heads = 8;
  int enc_layers = 6;
  int dec_layers = 6;
  double dropout = 0.1;
  EmbeddingMode embedding = EmbeddingMode::kOneHot;
  FusionKind fusion = FusionKind::kNone;
  int shallow_layers = 1;  // conv-fusion layers before aggregation (L_s)
  int block_layers = 4;    // block-masked attention layers (L_w)
  int vocab = kVocabSize;

  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct AttentionParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gain, bias;
};

template <typename T>
struct FfnParams {
  Tensor<T> w1, b1, w2, b2;
};

template <typename T>
struct EncoderLayerParams {
  LayerNormParams<T> ln1;
  AttentionParams<T> attn;
  LayerNormParams<T> ln2;
  FfnParams<T> ffn;
};

template <typename T>
struct DecoderLayerParams {
  LayerNormParams<T> ln1;
  AttentionParams<T> self_attn;
  LayerNormParams<T> ln2;
  AttentionParams<T> cross_attn;
  LayerNormParams<T> ln3;
  FfnParams<T> ffn;
};

/// Convolutional fusion parameters: four kernels of widths 1..4 with
/// biases, combined by four learnable unnormalized scalar weights
/// initialized to 0.25 each.
template <typename T>
struct NcfParams {
  std::array<Tensor<T>, 4> kernels;
  std::array<Tensor<T>, 4> biases;
  Tensor<T> lambdas;  // shape [4]
};

/// One attention head's probability matrix, recorded when a capture sink
/// is installed (test introspection).
template <typename T>
struct AttnProbs {
  int rows = 0;
  int cols = 0;
  std::vector<T> values;

  T at(int i, int j) const {
    return values[static_cast<size_t>(i) * cols + j];
  }
};

/// Sinusoidal (non-learned) position encodings for n positions.
template <typename T>
Tensor<T> positional_encoding(int n, int d_model);

/// Fixed one-hot rows: row i has 1.0 at column ids[i], zeros elsewhere.
/// No learnable parameters are involved.
template <typename T>
Tensor<T> one_hot_rows(const ByteSequence& seq, int d_model, int vocab);

/// Transformer encoder-decoder over the byte vocabulary. Forward passes
/// build an autograd graph when recording is enabled; inference paths
/// wrap themselves in NoGradGuard. Sequences entering the compute paths
/// are unpadded; batch PAD is storage alignment only.
template <typename T>
class TransformerModel {
 public:
  TransformerModel(ModelConfig config, uint64_t seed);

  TransformerModel(const TransformerModel&) = delete;
  TransformerModel& operator=(const TransformerModel&) = delete;
  TransformerModel(TransformerModel&&) = default;
  TransformerModel& operator=(TransformerModel&&) = default;

  const ModelConfig& config() const { return config_; }

  /// Named parameters, in registration order; names are stable across
  /// runs and are the checkpoint keys.
  std::vector<std::pair<std::string, Tensor<T>>>& parameters() {
    return params_;
  }
  const std::vector<std::pair<std::string, Tensor<T>>>& parameters() const {
    return params_;
  }
  int64_t parameter_count() const;
  Tensor<T>* find_parameter(const std::string& name);
  void zero_grads();

  /// Embeds token IDs per the configured mode, scales by sqrt(d), adds
  /// sinusoidal positions and applies embedding dropout when training.
  Tensor<T> embed(const ByteSequence& seq, bool training);

  /// Applies encoder layers [first, first+count) with an optional
  /// attention mask (null = full attention). count == 0 is the identity.
  Tensor<T> encode_range(const Tensor<T>& x, int first, int count,
                         const AttnMask* mask, bool training);

  /// First `layers` encoder layers over an already-embedded input.
  Tensor<T> encode(const Tensor<T>& x, int layers,
                   const AttnMask* mask = nullptr, bool training = false) {
    return encode_range(x, 0, layers, mask, training);
  }

  /// Final encoder layer norm, applied once after the full stack.
  Tensor<T> encoder_finalize(const Tensor<T>& x);

  /// Full decoder over a BOS-led prefix against encoder output z.
  /// Returns next-token logits for every prefix position.
  Tensor<T> decoder_forward(const ByteSequence& prefix, const Tensor<T>& z,
                            bool training);

  /// P(y_t | y_<t, x) for the next position after the prefix.
  std::vector<T> decode_step(const ByteSequence& prefix, const Tensor<T>& z);

  NcfParams<T>& ncf() {
    if (config_.fusion != FusionKind::kNcf)
      throw Error("ncf: model fusion mode is " +
                  fusion_kind_name(config_.fusion));
    return ncf_;
  }
  const NcfParams<T>& ncf() const {
    return const_cast<TransformerModel*>(this)->ncf();
  }

  /// Dense embedding table; only registered in dense mode.
  const Tensor<T>& embedding_table() const { return embedding_; }

  void reseed_dropout(uint64_t seed, uint64_t tag = 0) {
    dropout_rng_ = make_rng(seed, tag);
  }
  std::mt19937_64& dropout_rng() { return dropout_rng_; }

  /// When non-null, every attention head appends its probability matrix
  /// here during forward passes.
  void set_attention_capture(std::vector<AttnProbs<T>>* sink) {
    attn_sink_ = sink;
  }

 private:
  Tensor<T> register_param(const std::string& name, Shape shape);
  void init_xavier(Tensor<T>& w, int fan_in, int fan_out);
  AttentionParams<T> make_attention(const std::string& prefix);
  LayerNormParams<T> make_layer_norm(const std::string& prefix);
  FfnParams<T> make_ffn(const std::string& prefix);
  Tensor<T> attend(const AttentionParams<T>& p, const Tensor<T>& queries,
                   const Tensor<T>& keys_values, const AttnMask* mask);
  Tensor<T> feed_forward(const FfnParams<T>& p, const Tensor<T>& x);
  Tensor<T> norm(const LayerNormParams<T>& p, const Tensor<T>& x) {
    return layer_norm(x, p.gain, p.bias, T(1e-5));
  }
  Tensor<T> maybe_dropout(const Tensor<T>& x, bool training) {
    if (!training || config_.dropout <= 0.0) return x;
    return dropout(x, config_.dropout, dropout_rng_);
  }

  ModelConfig config_;
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  std::vector<EncoderLayerParams<T>> enc_;
  std::vector<DecoderLayerParams<T>> dec_;
  LayerNormParams<T> enc_final_;
  LayerNormParams<T> dec_final_;
  Tensor<T> embedding_;  // dense mode only
  NcfParams<T> ncf_;     // ncf mode only
  std::mt19937_64 init_rng_;
  std::mt19937_64 dropout_rng_;
  std::vector<AttnProbs<T>>* attn_sink_ = nullptr;
};

// ---------------------------------------------------------------------------
// Inline/template definitions
// ---------------------------------------------------------------------------

inline std::string embedding_mode_name(EmbeddingMode mode) {
  return mode == EmbeddingMode::kOneHot ? "one_hot" : "dense";
}

inline EmbeddingMode parse_embedding_mode(const std::string& name) {
  if (name == "one_hot") return EmbeddingMode::kOneHot;
  if (name == "dense") return EmbeddingMode::kDense;
  throw Error("unknown embedding mode: " + name);
}

inline std::string fusion_kind_name(FusionKind kind) {
  switch (kind) {
    case FusionKind::kNone:
      return "none";
    case FusionKind::kNcf:
      return "ncf";
    case FusionKind::kWsf:
      return "wsf";
  }
  return "?";
}

inline FusionKind parse_fusion_kind(const std::string& name) {
  if (name == "none") return FusionKind::kNone;
  if (name == "ncf") return FusionKind::kNcf;
  if (name == "wsf") return FusionKind::kWsf;
  throw Error("unknown fusion kind: " + name);
}

inline void ModelConfig::validate() const {
  if (d_model < 1 || ffn_dim < 1 || heads < 1 || vocab < 1)
    throw Error("config: dimensions must be positive");
  if (enc_layers < 0 || dec_layers < 0)
    throw Error("config: layer counts must be non-negative");
  if (d_model % heads != 0)
    throw Error("config: d_model " + std::to_string(d_model) +
                " not divisible by heads " + std::to_string(heads));
  if (shallow_layers < 0 || shallow_layers > enc_layers)
    throw Error("config: shallow_layers " + std::to_string(shallow_layers) +
                " outside [0, " + std::to_string(enc_layers) + "]");
  if (block_layers < 0 || block_layers > enc_layers)
    throw Error("config: block_layers " + std::to_string(block_layers) +
                " outside [0, " + std::to_string(enc_layers) + "]");
  if (embedding == EmbeddingMode::kOneHot && vocab > d_model)
    throw Error("config: one_hot embedding needs vocab " +
                std::to_string(vocab) + " <= d_model " +
                std::to_string(d_model));
  if (dropout < 0.0 || dropout >= 1.0)
    throw Error("config: dropout " + std::to_string(dropout) +
                " outside [0, 1)");
}

template <typename T>
Tensor<T> positional_encoding(int n, int d_model) {
  std::vector<T> pe(static_cast<size_t>(n) * d_model);
  for (int pos = 0; pos < n; ++pos) {
    for (int i = 0; i < d_model; i += 2) {
      const double angle =
          pos / std::pow(10000.0, static_cast<double>(i) / d_model);
      pe[static_cast<size_t>(pos) * d_model + i] = static_cast<T>(std::sin(angle));
      if (i + 1 < d_model)
        pe[static_cast<size_t>(pos) * d_model + i + 1] =
            static_cast<T>(std::cos(angle));
    }
  }
  return Tensor<T>::from({n, d_model}, std::move(pe));
}

template <typename T>
Tensor<T> one_hot_rows(const ByteSequence& seq, int d_model, int vocab) {
  const int n = seq.length();
  std::vector<T> rows(static_cast<size_t>(n) * d_model, T(0));
  for (int i = 0; i < n; ++i) {
    const int id = seq.ids[static_cast<size_t>(i)];
    if (id < 0 || id >= vocab)
      throw Error("embed: token ID " + std::to_string(id) +
                  " outside vocabulary of size " + std::to_string(vocab));
    rows[static_cast<size_t>(i) * d_model + id] = T(1);
  }
  return Tensor<T>::from({n, d_model}, std::move(rows));
}

template <typename T>
TransformerModel<T>::TransformerModel(ModelConfig config, uint64_t seed)
    : config_(std::move(config)),
      init_rng_(make_rng(seed, 0x1717)),
      dropout_rng_(make_rng(seed, 0xD0D0)) {
  config_.validate();
  const int d = config_.d_model;
  if (config_.embedding == EmbeddingMode::kDense) {
    embedding_ = register_param("embedding.table", {config_.vocab, d});
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(double(d)));
    for (auto& v : embedding_.raw()) v = static_cast<T>(dist(init_rng_));
  }
  for (int l = 0; l < config_.enc_layers; ++l) {
    const std::string base = "encoder.layer" + std::to_string(l) + ".";
    EncoderLayerParams<T> layer;
    layer.ln1 = make_layer_norm(base + "ln1");
    layer.attn = make_attention(base + "attn");
    layer.ln2 = make_layer_norm(base + "ln2");
    layer.ffn = make_ffn(base + "ffn");
    enc_.push_back(std::move(layer));
  }
  enc_final_ = make_layer_norm("encoder.final_ln");
  for (int l = 0; l < config_.dec_layers; ++l) {
    const std::string base = "decoder.layer" + std::to_string(l) + ".";
    DecoderLayerParams<T> layer;
    layer.ln1 = make_layer_norm(base + "ln1");
    layer.self_attn = make_attention(base + "self_attn");
    layer.ln2 = make_layer_norm(base + "ln2");
    layer.cross_attn = make_attention(base + "cross_attn");
    layer.ln3 = make_layer_norm(base + "ln3");
    layer.ffn = make_ffn(base + "ffn");
    dec_.push_back(std::move(layer));
  }
  dec_final_ = make_layer_norm("decoder.final_ln");
  if (config_.fusion == FusionKind::kNcf) {
    for (int n = 1; n <= 4; ++n) {
      const std::string base = "fusion.ncf.conv" + std::to_string(n) + ".";
      ncf_.kernels[static_cast<size_t>(n - 1)] =
          register_param(base + "weight", {n, d, d});
      init_xavier(ncf_.kernels[static_cast<size_t>(n - 1)], n * d, d);
      ncf_.biases[static_cast<size_t>(n - 1)] =
          register_param(base + "bias", {d});
    }
    ncf_.lambdas = register_param("fusion.ncf.lambda", {4});
    for (auto& v : ncf_.lambdas.raw()) v = T(0.25);
  }
}

template <typename T>
Tensor<T> TransformerModel<T>::register_param(const std::string& name,
                                              Shape shape) {
  auto t = Tensor<T>::zeros(std::move(shape), true);
  params_.emplace_back(name, t);
  return t;
}

template <typename T>
void TransformerModel<T>::init_xavier(Tensor<T>& w, int fan_in, int fan_out) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : w.raw()) v = static_cast<T>(dist(init_rng_));
}

template <typename T>
AttentionParams<T> TransformerModel<T>::make_attention(
    const std::string& prefix) {
  const int d = config_.d_model;
  AttentionParams<T> p;
  p.wq = register_param(prefix + ".wq", {d, d});
  p.bq = register_param(prefix + ".bq", {d});
  p.wk = register_param(prefix + ".wk", {d, d});
  p.bk = register_param(prefix + ".bk", {d});
  p.wv = register_param(prefix + ".wv", {d, d});
  p.bv = register_param(prefix + ".bv", {d});
  p.wo = register_param(prefix + ".wo", {d, d});
  p.bo = register_param(prefix + ".bo", {d});
  init_xavier(p.wq, d, d);
  init_xavier(p.wk, d, d);
  init_xavier(p.wv, d, d);
  init_xavier(p.wo, d, d);
  return p;
}

template <typename T>
LayerNormParams<T> TransformerModel<T>::make_layer_norm(
    const std::string& prefix) {
  LayerNormParams<T> p;
  p.gain = register_param(prefix + ".gain", {config_.d_model});
  for (auto& v : p.gain.raw()) v = T(1);
  p.bias = register_param(prefix + ".bias", {config_.d_model});
  return p;
}

template <typename T>
FfnParams<T> TransformerModel<T>::make_ffn(const std::string& prefix) {
  const int d = config_.d_model, f = config_.ffn_dim;
  FfnParams<T> p;
  p.w1 = register_param(prefix + ".w1", {d, f});
  p.b1 = register_param(prefix + ".b1", {f});
  p.w2 = register_param(prefix + ".w2", {f, d});
  p.b2 = register_param(prefix + ".b2", {d});
  init_xavier(p.w1, d, f);
  init_xavier(p.w2, f, d);
  return p;
}

template <typename T>
int64_t TransformerModel<T>::parameter_count() const {
  int64_t total = 0;
  for (const auto& [name, t] : params_) total += t.size();
  return total;
}

template <typename T>
Tensor<T>* TransformerModel<T>::find_parameter(const std::string& name) {
  for (auto& [n, t] : params_)
    if (n == name) return &t;
  return nullptr;
}

template <typename T>
void TransformerModel<T>::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

template <typename T>
Tensor<T> TransformerModel<T>::embed(const ByteSequence& seq, bool training) {
  const int d = config_.d_model;
  Tensor<T> rows;
  if (config_.embedding == EmbeddingMode::kOneHot) {
    rows = one_hot_rows<T>(seq, d, config_.vocab);
  } else {
    for (int id : seq.ids)
      if (id < 0 || id >= config_.vocab)
        throw Error("embed: token ID " + std::to_string(id) +
                    " outside vocabulary of size " +
                    std::to_string(config_.vocab));
    rows = gather_rows(embedding_, seq.ids);
  }
  auto scaled = scale(rows, static_cast<T>(std::sqrt(double(d))));
  auto with_pos = add(scaled, positional_encoding<T>(seq.length(), d));
  return maybe_dropout(with_pos, training);
}

template <typename T>
Tensor<T> TransformerModel<T>::attend(const AttentionParams<T>& p,
                                      const Tensor<T>& queries,
                                      const Tensor<T>& keys_values,
                                      const AttnMask* mask) {
  const int d = config_.d_model;
  const int heads = config_.heads;
  const int dh = d / heads;
  auto q = add_rows(matmul(queries, p.wq), p.bq);
  auto k = add_rows(matmul(keys_values, p.wk), p.bk);
  auto v = add_rows(matmul(keys_values, p.wv), p.bv);
  const T inv_sqrt = T(1) / static_cast<T>(std::sqrt(double(dh)));
  std::vector<Tensor<T>> outputs;
  outputs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    auto qh = slice_cols(q, h * dh, (h + 1) * dh);
    auto kh = slice_cols(k, h * dh, (h + 1) * dh);
    auto vh = slice_cols(v, h * dh, (h + 1) * dh);
    auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    auto probs = masked_softmax_rows(scores, mask);
    if (attn_sink_)
      attn_sink_->push_back(
          {probs.dim(0), probs.dim(1),
           std::vector<T>(probs.values().begin(), probs.values().end())});
    outputs.push_back(matmul(probs, vh));
  }
  auto merged = concat_cols(outputs);
  return add_rows(matmul(merged, p.wo), p.bo);
}

template <typename T>
Tensor<T> TransformerModel<T>::feed_forward(const FfnParams<T>& p,
                                            const Tensor<T>& x) {
  auto hidden = relu(add_rows(matmul(x, p.w1), p.b1));
  return add_rows(matmul(hidden, p.w2), p.b2);
}

template <typename T>
Tensor<T> TransformerModel<T>::encode_range(const Tensor<T>& x, int first,
                                            int count, const AttnMask* mask,
                                            bool training) {
  if (first < 0 || count < 0 || first + count > config_.enc_layers)
    throw Error("encode: layer range [" + std::to_string(first) + ", " +
                std::to_string(first + count) + ") outside stack of " +
                std::to_string(config_.enc_layers));
  const int n = x.dim(0);
  if (mask && (mask->rows != n || mask->cols != n))
    throw Error("encode: attention mask [" + std::to_string(mask->rows) +
                "," + std::to_string(mask->cols) +
                "] does not match sequence length " + std::to_string(n));
  Tensor<T> h = x;
  for (int l = first; l < first + count; ++l) {
    auto& layer = enc_[static_cast<size_t>(l)];
    auto normed = norm(layer.ln1, h);
    auto a = attend(layer.attn, normed, normed, mask);
    h = add(h, maybe_dropout(a, training));
    auto f = feed_forward(layer.ffn, norm(layer.ln2, h));
    h = add(h, maybe_dropout(f, training));
  }
  return h;
}

template <typename T>
Tensor<T> TransformerModel<T>::encoder_finalize(const Tensor<T>& x) {
  return norm(enc_final_, x);
}

template <typename T>
Tensor<T> TransformerModel<T>::decoder_forward(const ByteSequence& prefix,
                                               const Tensor<T>& z,
                                               bool training) {
  if (prefix.empty() || prefix.ids.front() != kBosId)
    throw Error("decoder_forward: prefix must start with BOS");
  auto h = embed(prefix, training);
  AttnMask causal = AttnMask::causal(prefix.length());
  for (auto& layer : dec_) {
    auto normed = norm(layer.ln1, h);
    auto a = attend(layer.self_attn, normed, normed, &causal);
    h = add(h, maybe_dropout(a, training));
    auto c = attend(layer.cross_attn, norm(layer.ln2, h), z, nullptr);
    h = add(h, maybe_dropout(c, training));
    auto f = feed_forward(layer.ffn, norm(layer.ln3, h));
    h = add(h, maybe_dropout(f, training));
  }
  h = norm(dec_final_, h);
  if (config_.embedding == EmbeddingMode::kOneHot)
    return slice_cols(h, 0, config_.vocab);
  return matmul(h, transpose(embedding_));
}

template <typename T>
std::vector<T> TransformerModel<T>::decode_step(const ByteSequence& prefix,
                                                const Tensor<T>& z) {
  NoGradGuard ng;
  auto logits = decoder_forward(prefix, z, false);
  auto last = slice_rows(logits, prefix.length() - 1, prefix.length());
  auto probs = softmax_rows(last);
  return std::vector<T>(probs.values().begin(), probs.values().end());
}

extern template class TransformerModel<float>;
extern template class TransformerModel<double>;
extern template Tensor<float> positional_encoding<float>(int, int);
extern template Tensor<double> positional_encoding<double>(int, int);
extern template Tensor<float> one_hot_rows<float>(const ByteSequence&, int,
                                                  int);
extern template Tensor<double> one_hot_rows<double>(const ByteSequence&, int,
                                                    int);

}  // namespace bytenmt
