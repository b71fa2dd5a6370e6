#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>
#include <vector>

#include "bytenmt/fusion.hpp"
#include "bytenmt/train.hpp"

using namespace bytenmt;

namespace {

ModelConfig fusion_config(FusionKind kind, int enc_layers, int fusion_layers) {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.ffn_dim = 16;
  cfg.heads = 2;
  cfg.enc_layers = enc_layers;
  cfg.dec_layers = 1;
  cfg.dropout = 0.0;
  cfg.vocab = 8;
  cfg.fusion = kind;
  cfg.shallow_layers = kind == FusionKind::kNcf ? fusion_layers : 0;
  cfg.block_layers = kind == FusionKind::kWsf ? fusion_layers : 0;
  return cfg;
}

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = dist(rng);
  return Tensor<double>::from(std::move(shape), std::move(v));
}

// Random contiguous partition of [0, n) into 1..n spans.
WordSpanMap random_partition(int n, std::mt19937_64& rng) {
  WordSpanMap map;
  int cursor = 0;
  std::uniform_int_distribution<int> step(1, std::max(1, n / 3));
  bool word = true;
  while (cursor < n) {
    int end = std::min(n, cursor + step(rng));
    map.spans.push_back(
        {cursor, end, word ? SpanKind::kWord : SpanKind::kWhitespace});
    word = !word;
    cursor = end;
  }
  return map;
}

void set_param(TransformerModel<double>& model, const std::string& name,
               const std::vector<double>& values) {
  auto* p = model.find_parameter(name);
  REQUIRE(p != nullptr);
  REQUIRE(p->raw().size() == values.size());
  std::copy(values.begin(), values.end(), p->raw().begin());
}

}  // namespace

TEST_CASE("ncf identity path reproduces the input exactly") {
  // lambda (1,0,0,0), width-1 identity kernel, zero bias, no layers.
  ModelConfig cfg = fusion_config(FusionKind::kNcf, 0, 0);
  TransformerModel<double> model(cfg, 1);
  const int d = cfg.d_model;
  std::vector<double> ident(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) ident[static_cast<size_t>(i) * d + i] = 1.0;
  set_param(model, "fusion.ncf.conv1.weight", ident);
  set_param(model, "fusion.ncf.conv1.bias", std::vector<double>(d, 0.0));
  set_param(model, "fusion.ncf.lambda", {1.0, 0.0, 0.0, 0.0});

  std::mt19937_64 rng(2);
  auto x = random_tensor({5, d}, rng);
  auto out = ncf_encode(model, x);
  REQUIRE(out.shape() == x.shape());
  for (size_t i = 0; i < x.values().size(); ++i)
    CHECK(out.values()[i] == x.values()[i]);
}

TEST_CASE("ncf rejects empty input and wrong fusion mode") {
  ModelConfig cfg = fusion_config(FusionKind::kNcf, 2, 1);
  TransformerModel<double> model(cfg, 1);
  auto empty = Tensor<double>::zeros({0, cfg.d_model});
  CHECK_THROWS_AS(ncf_encode(model, empty), Error);

  ModelConfig plain = fusion_config(FusionKind::kNone, 2, 0);
  TransformerModel<double> vanilla(plain, 1);
  auto x = Tensor<double>::zeros({3, cfg.d_model});
  CHECK_THROWS_AS(ncf_encode(vanilla, x), Error);
}

TEST_CASE("width-4 conv on five rows: 2 conv rows, repeat to 8, cut to 5") {
  std::mt19937_64 rng(77);
  auto input = random_tensor({5, 3}, rng);
  auto kernel = random_tensor({4, 3, 3}, rng);
  auto conv = conv1d(input, kernel, 4, true);
  CHECK(conv.dim(0) == 2);
  auto repeated = repeat_rows(conv, 4, 8);
  CHECK(repeated.dim(0) == 8);
  auto truncated = repeat_rows(conv, 4, 5);
  CHECK(truncated.dim(0) == 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(truncated.values()[static_cast<size_t>(i) * 3 + j] ==
            repeated.values()[static_cast<size_t>(i) * 3 + j]);
}

TEST_CASE("ncf output length equals input length for all small N") {
  ModelConfig cfg = fusion_config(FusionKind::kNcf, 2, 1);
  TransformerModel<double> model(cfg, 3);
  std::mt19937_64 rng(4);
  for (int n = 1; n <= 64; ++n) {
    auto x = random_tensor({n, cfg.d_model}, rng);
    auto out = ncf_encode(model, x);
    // Oracle: pad to a multiple of w, convolve (length padded/w), repeat
    // each row w times, truncate to n. Must equal n for every width.
    for (int w = 1; w <= 4; ++w) {
      int padded = ((n + w - 1) / w) * w;
      int conv_len = padded / w;
      int repeated = conv_len * w;
      int truncated = std::min(repeated, n);
      CHECK(truncated == n);
    }
    CHECK(out.shape() == Shape{n, cfg.d_model});
  }
}

TEST_CASE("ncf mixing matches a direct loop evaluation") {
  // With no transformer layers the pipeline is exactly
  // sum_n lambda_n * repeat(conv_n(X)); recompute it with plain loops.
  ModelConfig cfg = fusion_config(FusionKind::kNcf, 0, 0);
  TransformerModel<double> model(cfg, 5);
  const int d = cfg.d_model;
  std::mt19937_64 rng(6);
  const int n = 7;
  auto x = random_tensor({n, d}, rng);
  auto out = ncf_encode(model, x);

  auto kernel = [&](int w) {
    return model.find_parameter("fusion.ncf.conv" + std::to_string(w) +
                                ".weight")
        ->values();
  };
  auto bias = [&](int w) {
    return model
        .find_parameter("fusion.ncf.conv" + std::to_string(w) + ".bias")
        ->values();
  };
  auto lambdas = model.find_parameter("fusion.ncf.lambda")->values();

  std::vector<double> expected(static_cast<size_t>(n) * d, 0.0);
  for (int w = 1; w <= 4; ++w) {
    const int padded = ((n + w - 1) / w) * w;
    std::vector<double> pad(static_cast<size_t>(padded) * d, 0.0);
    std::copy(x.values().begin(), x.values().end(), pad.begin());
    const int out_rows = padded / w;
    std::vector<double> conv(static_cast<size_t>(out_rows) * d, 0.0);
    auto k = kernel(w);
    auto b = bias(w);
    for (int r = 0; r < out_rows; ++r)
      for (int o = 0; o < d; ++o) {
        double acc = b[static_cast<size_t>(o)];
        for (int j = 0; j < w; ++j)
          for (int c = 0; c < d; ++c)
            acc += pad[static_cast<size_t>(r * w + j) * d + c] *
                   k[(static_cast<size_t>(j) * d + c) * d + o];
        conv[static_cast<size_t>(r) * d + o] = acc;
      }
    for (int i = 0; i < n; ++i)
      for (int o = 0; o < d; ++o)
        expected[static_cast<size_t>(i) * d + o] +=
            lambdas[static_cast<size_t>(w - 1)] *
            conv[static_cast<size_t>(i / w) * d + o];
  }
  for (size_t i = 0; i < expected.size(); ++i)
    CHECK(out.values()[i] == doctest::Approx(expected[i]).epsilon(1e-9));
}

TEST_CASE("block mask for three spans") {
  WordSpanMap spans{{{0, 2, SpanKind::kWord},
                     {2, 3, SpanKind::kWhitespace},
                     {3, 5, SpanKind::kWord}}};
  auto mask = build_block_mask(spans, false);
  REQUIRE(mask.rows == 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      bool expected = i == j || (i < 2 && j < 2) || (i >= 3 && j >= 3);
      CHECK(mask.at(i, j) == expected);
    }
}

TEST_CASE("single span reduces to full self-attention") {
  WordSpanMap spans{{{0, 4, SpanKind::kWord}}};
  auto mask = build_block_mask(spans, false);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(mask.at(i, j));
}

TEST_CASE("block mask with specials adds singleton BOS/EOS blocks") {
  WordSpanMap spans{{{0, 2, SpanKind::kWord}}};
  auto mask = build_block_mask(spans, true);
  REQUIRE(mask.rows == 4);
  CHECK(mask.at(0, 0));
  CHECK_FALSE(mask.at(0, 1));
  CHECK_FALSE(mask.at(1, 0));
  CHECK(mask.at(1, 2));
  CHECK(mask.at(3, 3));
  CHECK_FALSE(mask.at(3, 2));
}

TEST_CASE("block mask rejects non-partitioning spans") {
  WordSpanMap gap{{{0, 2, SpanKind::kWord}, {3, 5, SpanKind::kWord}}};
  CHECK_THROWS_AS(build_block_mask(gap, false), Error);
  WordSpanMap overlap{{{0, 3, SpanKind::kWord}, {2, 5, SpanKind::kWord}}};
  CHECK_THROWS_AS(build_block_mask(overlap, false), Error);
  WordSpanMap empty_span{{{0, 0, SpanKind::kWord}}};
  CHECK_THROWS_AS(build_block_mask(empty_span, false), Error);
}

TEST_CASE("block mask is symmetric and reflexive for random partitions") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<int> len(1, 24);
    const int n = len(rng);
    auto spans = random_partition(n, rng);
    auto mask = build_block_mask(spans, trial % 2 == 0);
    // Oracle: pairwise span membership (specials are their own spans).
    auto span_of = [&](int pos) -> int {
      int off = trial % 2 == 0 ? 1 : 0;
      if (off && (pos == 0 || pos == mask.rows - 1)) return -pos - 1;
      for (size_t s = 0; s < spans.spans.size(); ++s)
        if (spans.spans[s].start <= pos - off && pos - off < spans.spans[s].end)
          return static_cast<int>(s);
      return -1000;
    };
    for (int i = 0; i < mask.rows; ++i) {
      CHECK(mask.at(i, i));
      for (int j = 0; j < mask.cols; ++j) {
        CHECK(mask.at(i, j) == mask.at(j, i));
        CHECK(mask.at(i, j) == (span_of(i) == span_of(j)));
      }
    }
  }
}

TEST_CASE("wsf with zero block layers equals the vanilla encoder") {
  ModelConfig cfg = fusion_config(FusionKind::kWsf, 2, 0);
  TransformerModel<double> model(cfg, 8);
  std::mt19937_64 rng(9);
  auto x = random_tensor({5, cfg.d_model}, rng);
  WordSpanMap spans{{{0, 2, SpanKind::kWord},
                     {2, 3, SpanKind::kWhitespace},
                     {3, 5, SpanKind::kWord}}};
  auto fused = wsf_encode(model, x, spans);
  auto vanilla = model.encode(x, cfg.enc_layers);
  for (size_t i = 0; i < fused.values().size(); ++i)
    CHECK(fused.values()[i] == vanilla.values()[i]);
}

TEST_CASE("wsf blocks information flow across words in fused layers") {
  ModelConfig cfg = fusion_config(FusionKind::kWsf, 2, 2);
  TransformerModel<double> model(cfg, 10);
  std::mt19937_64 rng(11);
  const int d = cfg.d_model;
  auto x = random_tensor({6, d}, rng);
  WordSpanMap spans{{{0, 3, SpanKind::kWord},
                     {3, 4, SpanKind::kWhitespace},
                     {4, 6, SpanKind::kWord}}};
  auto mask = build_block_mask(spans, false);
  auto fused = model.encode_range(x, 0, cfg.block_layers, &mask, false);

  // Perturb the second word's bytes; the first word's rows are unchanged.
  std::vector<double> perturbed(x.values().begin(), x.values().end());
  for (int i = 4; i < 6; ++i)
    for (int j = 0; j < d; ++j) perturbed[static_cast<size_t>(i) * d + j] += 3.5;
  auto xp = Tensor<double>::from({6, d}, std::move(perturbed));
  auto fused_p = model.encode_range(xp, 0, cfg.block_layers, &mask, false);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < d; ++j)
      CHECK(fused.values()[static_cast<size_t>(i) * d + j] ==
            fused_p.values()[static_cast<size_t>(i) * d + j]);
}

TEST_CASE("masked encoding equals separately encoded spans") {
  // Oracle: encode each span's rows independently; positions are indexed
  // by original offsets because x already carries them.
  ModelConfig cfg = fusion_config(FusionKind::kWsf, 2, 2);
  cfg.embedding = EmbeddingMode::kDense;
  cfg.vocab = kVocabSize;
  TransformerModel<double> model(cfg, 12);
  std::mt19937_64 rng(13);
  auto seq = tokenize("ab cd");
  auto x = model.embed(seq, false);
  WordSpanMap spans = word_spans("ab cd");
  auto mask = build_block_mask(spans, false);
  auto fused = model.encode_range(x, 0, cfg.block_layers, &mask, false);
  const int d = cfg.d_model;
  for (const auto& span : spans.spans) {
    auto piece = slice_rows(x, span.start, span.end);
    auto enc = model.encode_range(piece, 0, cfg.block_layers, nullptr, false);
    for (int i = 0; i < span.end - span.start; ++i)
      for (int j = 0; j < d; ++j)
        CHECK(enc.values()[static_cast<size_t>(i) * d + j] ==
              doctest::Approx(
                  fused.values()[static_cast<size_t>(span.start + i) * d + j])
                  .epsilon(1e-9));
  }
}

TEST_CASE("wsf attention probability across spans is exactly zero") {
  ModelConfig cfg = fusion_config(FusionKind::kWsf, 2, 2);
  TransformerModel<double> model(cfg, 14);
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 12;
    auto x = random_tensor({n, cfg.d_model}, rng);
    auto spans = random_partition(n, rng);
    auto mask = build_block_mask(spans, false);
    std::vector<AttnProbs<double>> captured;
    model.set_attention_capture(&captured);
    (void)model.encode_range(x, 0, cfg.block_layers, &mask, false);
    model.set_attention_capture(nullptr);
    REQUIRE(captured.size() ==
            static_cast<size_t>(cfg.block_layers) * cfg.heads);
    for (const auto& probs : captured)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          if (!mask.at(i, j)) CHECK(probs.at(i, j) == 0.0);
  }
}

TEST_CASE("wsf errors on span/sequence length mismatch") {
  ModelConfig cfg = fusion_config(FusionKind::kWsf, 2, 1);
  TransformerModel<double> model(cfg, 16);
  auto x = Tensor<double>::zeros({9, cfg.d_model});
  WordSpanMap spans{{{0, 5, SpanKind::kWord}}};
  CHECK_THROWS_AS(wsf_encode(model, x, spans), Error);
}

TEST_CASE("wsf output length equals input length") {
  ModelConfig cfg = fusion_config(FusionKind::kWsf, 2, 1);
  TransformerModel<double> model(cfg, 17);
  std::mt19937_64 rng(18);
  for (int n : {1, 2, 3, 5, 13, 40, 64}) {
    auto x = random_tensor({n, cfg.d_model}, rng);
    auto spans = random_partition(n, rng);
    auto out = wsf_encode(model, x, spans);
    CHECK(out.shape() == Shape{n, cfg.d_model});
  }
}

TEST_CASE("lambda weights start at 0.25 each") {
  ModelConfig cfg = fusion_config(FusionKind::kNcf, 1, 1);
  TransformerModel<double> model(cfg, 19);
  auto weights = lambda_weights(model.ncf());
  for (double w : weights) CHECK(w == 0.25);
}

TEST_CASE("lambda gradients are local to their n-gram branch") {
  // Zero the width-2..4 convolutions so the loss depends only on F^1;
  // then only lambda_1 receives a gradient.
  ModelConfig cfg = fusion_config(FusionKind::kNcf, 0, 0);
  TransformerModel<double> model(cfg, 20);
  const int d = cfg.d_model;
  for (int w = 2; w <= 4; ++w) {
    set_param(model, "fusion.ncf.conv" + std::to_string(w) + ".weight",
              std::vector<double>(static_cast<size_t>(w) * d * d, 0.0));
    set_param(model, "fusion.ncf.conv" + std::to_string(w) + ".bias",
              std::vector<double>(static_cast<size_t>(d), 0.0));
  }
  std::mt19937_64 rng(21);
  auto x = random_tensor({6, d}, rng);
  model.zero_grads();
  auto loss = sum(ncf_encode(model, x));
  loss.backward();
  auto grads = model.find_parameter("fusion.ncf.lambda")->grad();
  CHECK(grads[0] != 0.0);
  CHECK(grads[1] == 0.0);
  CHECK(grads[2] == 0.0);
  CHECK(grads[3] == 0.0);
}

TEST_CASE("one optimizer step moves only the active lambda") {
  // Same setup in float so the Adam optimizer applies: with zero
  // gradients and decay exemption, lambda_2..4 stay at 0.25 exactly.
  ModelConfig cfg = fusion_config(FusionKind::kNcf, 0, 0);
  TransformerModel<float> model(cfg, 20);
  const int d = cfg.d_model;
  for (int w = 2; w <= 4; ++w) {
    auto* kernel =
        model.find_parameter("fusion.ncf.conv" + std::to_string(w) + ".weight");
    std::fill(kernel->raw().begin(), kernel->raw().end(), 0.0F);
    auto* bias =
        model.find_parameter("fusion.ncf.conv" + std::to_string(w) + ".bias");
    std::fill(bias->raw().begin(), bias->raw().end(), 0.0F);
  }
  std::mt19937_64 rng(22);
  std::normal_distribution<float> dist(0.0F, 1.0F);
  std::vector<float> values(6 * static_cast<size_t>(d));
  for (auto& v : values) v = dist(rng);
  auto x = Tensor<float>::from({6, d}, std::move(values));
  model.zero_grads();
  sum(ncf_encode(model, x)).backward();
  AdamConfig adam;
  AdamOptimizer optimizer(model.parameters(), adam);
  optimizer.step();
  auto lambdas = model.find_parameter("fusion.ncf.lambda")->values();
  CHECK(lambdas[0] != 0.25F);
  CHECK(lambdas[1] == 0.25F);
  CHECK(lambdas[2] == 0.25F);
  CHECK(lambdas[3] == 0.25F);
}

TEST_CASE("lambda gradients pass a central-difference check") {
  ModelConfig cfg = fusion_config(FusionKind::kNcf, 1, 1);
  TransformerModel<double> model(cfg, 22);
  std::mt19937_64 rng(23);
  auto x = random_tensor({5, cfg.d_model}, rng);
  auto* lambdas = model.find_parameter("fusion.ncf.lambda");
  auto f = [&](Tensor<double>&) { return sum(ncf_encode(model, x)); };
  CHECK(grad_check<double>(f, *lambdas) < 1e-4);
}

TEST_CASE("both fusion paths pass end-to-end gradient checks") {
  std::mt19937_64 rng(24);
  SUBCASE("ncf") {
    ModelConfig cfg = fusion_config(FusionKind::kNcf, 2, 1);
    TransformerModel<double> model(cfg, 25);
    auto x = random_tensor({5, cfg.d_model}, rng);
    auto f = [&](Tensor<double>& t) { return sum(ncf_encode(model, t)); };
    Tensor<double> probe =
        Tensor<double>::from(x.shape(),
                             {x.values().begin(), x.values().end()}, true);
    CHECK(grad_check<double>(f, probe) < 1e-4);
    auto* kernel = model.find_parameter("fusion.ncf.conv3.weight");
    auto fk = [&](Tensor<double>&) { return sum(ncf_encode(model, x)); };
    CHECK(grad_check<double>(fk, *kernel) < 1e-4);
    auto* wq = model.find_parameter("encoder.layer0.attn.wq");
    CHECK(grad_check<double>(fk, *wq) < 1e-4);
  }
  SUBCASE("wsf") {
    ModelConfig cfg = fusion_config(FusionKind::kWsf, 2, 1);
    TransformerModel<double> model(cfg, 26);
    const int n = 6;
    auto x = random_tensor({n, cfg.d_model}, rng);
    auto spans = random_partition(n, rng);
    auto f = [&](Tensor<double>& t) {
      return sum(wsf_encode(model, t, spans));
    };
    Tensor<double> probe =
        Tensor<double>::from(x.shape(),
                             {x.values().begin(), x.values().end()}, true);
    CHECK(grad_check<double>(f, probe) < 1e-4);
    auto* wv = model.find_parameter("encoder.layer1.attn.wv");
    auto fp = [&](Tensor<double>&) { return sum(wsf_encode(model, x, spans)); };
    CHECK(grad_check<double>(fp, *wv) < 1e-4);
  }
}
