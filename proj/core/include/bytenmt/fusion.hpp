#pragma once

#include <array>
#include <vector>

#include "bytenmt/bytes.hpp"
#include "bytenmt/model.hpp"
#include "bytenmt/tensor.hpp"

namespace bytenmt {

/// Block-diagonal attention mask: bytes attend only within their own
/// span. Symmetric, reflexive, blocked everywhere across spans.
using BlockMask = AttnMask;

/// Builds the block mask for a span partition. With with_specials, the
/// sequence is assumed wrapped in BOS/EOS which become singleton blocks
/// (as do whitespace spans, which arrive as their own spans already).
/// Throws if the spans do not partition a contiguous byte range.
BlockMask build_block_mask(const WordSpanMap& spans, bool with_specials);

/// Current values of the four n-gram mixture weights.
template <typename T>
std::array<T, 4> lambda_weights(const NcfParams<T>& params) {
  std::array<T, 4> out;
  for (int i = 0; i < 4; ++i) out[static_cast<size_t>(i)] = params.lambdas.values()[static_cast<size_t>(i)];
  return out;
}

/// Convolutional n-gram fusion over an embedded sequence:
/// shallow-encode, aggregate with four non-overlapping convolutions of
/// widths 1..4, repeat each output row in place to recover the input
/// length (extra rows truncated), mix with the lambda weights, and run
/// the remaining encoder layers.
template <typename T>
Tensor<T> ncf_encode(TransformerModel<T>& model, const Tensor<T>& x,
                     bool training = false) {
  const ModelConfig& cfg = model.config();
  if (cfg.fusion != FusionKind::kNcf)
    throw Error("ncf_encode: model fusion mode is " +
                fusion_kind_name(cfg.fusion));
  const int n = x.dim(0);
  if (n == 0) throw Error("ncf_encode: empty sequence");
  auto& p = model.ncf();
  auto shallow =
      model.encode_range(x, 0, cfg.shallow_layers, nullptr, training);
  Tensor<T> mixed;
  for (int width = 1; width <= 4; ++width) {
    auto conv = conv1d(shallow, p.kernels[static_cast<size_t>(width - 1)],
                       p.biases[static_cast<size_t>(width - 1)], width, true);
    auto repeated = repeat_rows(conv, width, n);
    auto weighted = scale_by(repeated, p.lambdas, width - 1);
    mixed = mixed.defined() ? add(mixed, weighted) : weighted;
  }
  return model.encode_range(mixed, cfg.shallow_layers,
                            cfg.enc_layers - cfg.shallow_layers, nullptr,
                            training);
}

/// Word-based self-attention fusion: the first block_layers encoder
/// layers run under the block mask (equivalent to encoding each span
/// independently, with positions indexed by original offsets), then the
/// remaining layers run with full attention.
template <typename T>
Tensor<T> wsf_encode(TransformerModel<T>& model, const Tensor<T>& x,
                     const WordSpanMap& spans, bool training = false) {
  const ModelConfig& cfg = model.config();
  if (cfg.fusion != FusionKind::kWsf)
    throw Error("wsf_encode: model fusion mode is " +
                fusion_kind_name(cfg.fusion));
  const int n = x.dim(0);
  const int covered = spans.covered_length();
  bool with_specials;
  if (n == covered) {
    with_specials = false;
  } else if (n == covered + 2) {
    with_specials = true;
  } else {
    throw Error("wsf_encode: spans cover " + std::to_string(covered) +
                " bytes but the sequence has " + std::to_string(n) +
                " positions");
  }
  BlockMask mask = build_block_mask(spans, with_specials);
  auto fused = model.encode_range(x, 0, cfg.block_layers, &mask, training);
  return model.encode_range(fused, cfg.block_layers,
                            cfg.enc_layers - cfg.block_layers, nullptr,
                            training);
}

/// Full source-side pipeline: embed, run the configured fusion variant
/// (or the plain stack), and apply the final encoder norm. WSF requires
/// the word spans of the raw sentence.
template <typename T>
Tensor<T> encode_source(TransformerModel<T>& model, const ByteSequence& seq,
                        const WordSpanMap* spans, bool training = false) {
  auto x = model.embed(seq, training);
  Tensor<T> h;
  switch (model.config().fusion) {
    case FusionKind::kNone:
      h = model.encode_range(x, 0, model.config().enc_layers, nullptr,
                             training);
      break;
    case FusionKind::kNcf:
      h = ncf_encode(model, x, training);
      break;
    case FusionKind::kWsf:
      if (!spans)
        throw Error("encode_source: wsf fusion requires word spans");
      h = wsf_encode(model, x, *spans, training);
      break;
  }
  return model.encoder_finalize(h);
}

}  // namespace bytenmt
