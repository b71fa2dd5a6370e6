#include <benchmark/benchmark.h>

#include <random>
#include <string>

#include "bytenmt/fusion.hpp"
#include "bytenmt/model.hpp"
#include "bytenmt/tensor.hpp"

namespace {

using namespace bytenmt;

std::string sample_text(int words) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> len(2, 9);
  std::string text;
  for (int w = 0; w < words; ++w) {
    if (w) text += ' ';
    int l = len(rng);
    for (int c = 0; c < l; ++c)
      text += static_cast<char>('a' + (rng() % 26));
  }
  return text;
}

Tensor<float> random_matrix(int rows, int cols, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0F, 1.0F);
  std::vector<float> values(static_cast<size_t>(rows) * cols);
  for (auto& v : values) v = dist(rng);
  return Tensor<float>::from({rows, cols}, std::move(values));
}

ModelConfig bench_config(FusionKind fusion) {
  ModelConfig cfg;
  cfg.d_model = 64;
  cfg.ffn_dim = 128;
  cfg.heads = 4;
  cfg.enc_layers = 2;
  cfg.dec_layers = 2;
  cfg.shallow_layers = 1;
  cfg.block_layers = 1;
  cfg.dropout = 0.0;
  cfg.embedding = EmbeddingMode::kDense;
  cfg.fusion = fusion;
  return cfg;
}

void BM_Tokenize(benchmark::State& state) {
  const std::string text = sample_text(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    auto seq = tokenize(text, true);
    benchmark::DoNotOptimize(seq.ids.data());
  }
  state.SetBytesProcessed(static_cast<int64_t>(state.iterations()) *
                          static_cast<int64_t>(text.size()));
}
BENCHMARK(BM_Tokenize)->Arg(16)->Arg(128);

void BM_WordSpans(benchmark::State& state) {
  const std::string text = sample_text(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    auto spans = word_spans(text);
    benchmark::DoNotOptimize(spans.spans.data());
  }
}
BENCHMARK(BM_WordSpans)->Arg(16)->Arg(128);

void BM_Matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  NoGradGuard ng;
  auto a = random_matrix(n, n, 1);
  auto b = random_matrix(n, n, 2);
  for (auto _ : state) {
    auto c = matmul(a, b);
    benchmark::DoNotOptimize(c.values().data());
  }
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

void BM_Conv1d(benchmark::State& state) {
  const int width = static_cast<int>(state.range(0));
  NoGradGuard ng;
  auto input = random_matrix(256, 64, 3);
  auto kernel = Tensor<float>::from(
      {width, 64, 64},
      std::vector<float>(static_cast<size_t>(width) * 64 * 64, 0.01F));
  for (auto _ : state) {
    auto out = conv1d(input, kernel, width, true);
    benchmark::DoNotOptimize(out.values().data());
  }
}
BENCHMARK(BM_Conv1d)->Arg(1)->Arg(4);

void BM_EncodeSource(benchmark::State& state) {
  const auto fusion = static_cast<FusionKind>(state.range(0));
  TransformerModel<float> model(bench_config(fusion), 11);
  const std::string text = sample_text(12);
  auto seq = tokenize(text, true);
  auto spans = word_spans(text);
  NoGradGuard ng;
  for (auto _ : state) {
    auto z = encode_source(model, seq, &spans, false);
    benchmark::DoNotOptimize(z.values().data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) *
                          seq.length());
}
BENCHMARK(BM_EncodeSource)
    ->Arg(static_cast<int>(FusionKind::kNone))
    ->Arg(static_cast<int>(FusionKind::kNcf))
    ->Arg(static_cast<int>(FusionKind::kWsf));

void BM_TrainStepGraph(benchmark::State& state) {
  TransformerModel<float> model(bench_config(FusionKind::kNone), 13);
  const std::string text = sample_text(8);
  auto seq = tokenize(text, true);
  auto spans = word_spans(text);
  for (auto _ : state) {
    model.zero_grads();
    auto z = encode_source(model, seq, &spans, false);
    auto logits = model.decoder_forward(seq, z, false);
    auto loss = sum(logits);
    loss.backward();
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_TrainStepGraph);

}  // namespace

BENCHMARK_MAIN();
