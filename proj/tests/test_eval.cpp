#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "bytenmt/eval.hpp"
#include "bytenmt/train.hpp"

using namespace bytenmt;

TEST_CASE("13a tokenization splits punctuation but keeps decimals") {
  CHECK(tokenize_13a("Hello, world!") ==
        std::vector<std::string>{"Hello", ",", "world", "!"});
  CHECK(tokenize_13a("pi is 3.14 now") ==
        std::vector<std::string>{"pi", "is", "3.14", "now"});
  CHECK(tokenize_13a("a.b") == std::vector<std::string>{"a", ".", "b"});
  CHECK(tokenize_13a("ends.") == std::vector<std::string>{"ends", "."});
  CHECK(tokenize_13a("1914-1918") ==
        std::vector<std::string>{"1914", "-", "1918"});
  CHECK(tokenize_13a("well-known") == std::vector<std::string>{"well-known"});
  CHECK(tokenize_13a("&quot;hi&quot; &amp; bye") ==
        std::vector<std::string>{"\"", "hi", "\"", "&", "bye"});
  CHECK(tokenize_13a("") == std::vector<std::string>{});
}

TEST_CASE("identical multi-sentence corpora score BLEU 100") {
  std::vector<std::string> text = {"the cat sat on the mat",
                                   "a quick brown fox jumps high"};
  CHECK(bleu(text, text) == doctest::Approx(100.0));
}

TEST_CASE("zero n-gram overlap scores 0") {
  CHECK(bleu({"aa bb cc dd"}, {"ww xx yy zz"}) == 0.0);
}

TEST_CASE("clipped counting matches a hand computation") {
  // Unigram clipping: "the" appears 4 times in the hypothesis but only
  // once in the reference, so the clipped precision is 1/4; the missing
  // higher-order overlap then zeroes the unsmoothed score.
  CHECK(bleu({"the the the the"}, {"the cat"}) == 0.0);

  // All orders overlap: precisions 5/6, 3/5, 2/4, 1/3 with equal lengths.
  double expected =
      100.0 * std::pow((5.0 / 6) * (3.0 / 5) * (2.0 / 4) * (1.0 / 3), 0.25);
  CHECK(bleu({"the cat sat on the mat"}, {"the cat sat on a mat"}) ==
        doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("brevity penalty applies to short hypotheses") {
  // hyp 4 tokens vs ref 6: precisions all 1, BP = exp(1 - 6/4).
  double expected = 100.0 * std::exp(1.0 - 6.0 / 4.0);
  CHECK(bleu({"b c d e"}, {"a b c d e f"}) ==
        doctest::Approx(expected).epsilon(1e-6));
  // longer hypotheses take no penalty beyond precision
  CHECK(bleu({"a b c d e f"}, {"a b c d e f"}) == doctest::Approx(100.0));
}

TEST_CASE("corpus BLEU is invariant under sentence reordering") {
  std::vector<std::string> hyp = {"the cat sat on a mat",
                                  "dogs chase the red ball fast",
                                  "birds sing in the tall tree"};
  std::vector<std::string> ref = {"the cat sat on the mat",
                                  "dogs chase a red ball quickly",
                                  "birds sing in a tall tree"};
  double base = bleu(hyp, ref);
  std::vector<size_t> order{2, 0, 1};
  std::vector<std::string> hyp2, ref2;
  for (size_t i : order) {
    hyp2.push_back(hyp[i]);
    ref2.push_back(ref[i]);
  }
  CHECK(bleu(hyp2, ref2) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("bleu rejects empty or mismatched inputs") {
  CHECK_THROWS_AS(bleu({}, {}), Error);
  CHECK_THROWS_AS(bleu({"a", "b"}, {"a"}), Error);
}

namespace {

ModelConfig decode_config() {
  ModelConfig cfg;
  cfg.d_model = 32;
  cfg.ffn_dim = 64;
  cfg.heads = 4;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.shallow_layers = 0;
  cfg.block_layers = 0;
  cfg.dropout = 0.0;
  cfg.embedding = EmbeddingMode::kDense;
  return cfg;
}

TransformerModel<float> overfit(const ParallelCorpus& corpus, uint64_t seed,
                                double target_loss = 0.05) {
  TransformerModel<float> model(decode_config(), seed);
  TrainOptions options;
  options.seed = seed;
  options.token_budget = 64;
  options.adam.warmup_steps = 30;
  options.adam.peak_lr = 3e-3;
  options.adam.label_smoothing = 0.0;
  AdamOptimizer optimizer(model.parameters(), options.adam);
  for (int round = 0; round < 20; ++round) {
    options.start_step = optimizer.step_count();
    options.steps = options.start_step + 50;
    train(model, optimizer, corpus, options);
    if (corpus_loss(model, corpus, 0.0) < target_loss) break;
  }
  return model;
}

ParallelCorpus copy_corpus() {
  ParallelCorpus corpus;
  corpus.pairs = {{"ab", "ab"}, {"cd", "cd"}, {"ee f", "ee f"}};
  return corpus;
}

}  // namespace

TEST_CASE("greedy decode reproduces a memorized pair") {
  auto corpus = copy_corpus();
  auto model = overfit(corpus, 31);
  REQUIRE(corpus_loss(model, corpus, 0.0) < 0.05);
  for (const auto& [src, tgt] : corpus.pairs) {
    auto seq = tokenize(src, true);
    auto spans = word_spans(src);
    auto hyp = decode(model, seq, &spans, 1);
    CHECK(hyp.text == tgt);
    CHECK(hyp.score <= 0.0);
    CHECK(hyp.tokens.ids.back() == kEosId);
  }
}

TEST_CASE("beam search never scores below greedy on a peaked model") {
  auto corpus = copy_corpus();
  auto model = overfit(corpus, 32);
  auto seq = tokenize("ab", true);
  auto spans = word_spans("ab");
  auto greedy = decode(model, seq, &spans, 1);
  for (int beam : {2, 3, 4}) {
    auto wide = decode(model, seq, &spans, beam);
    CHECK(wide.score >= greedy.score - 1e-9);
  }
}

TEST_CASE("greedy decoding is deterministic") {
  auto corpus = copy_corpus();
  auto model = overfit(corpus, 33);
  auto seq = tokenize("cd", true);
  auto a = decode(model, seq, nullptr, 1);
  auto b = decode(model, seq, nullptr, 1);
  CHECK(a.text == b.text);
  CHECK(a.score == b.score);
}

TEST_CASE("a model that emits EOS first yields empty text") {
  ParallelCorpus eos_corpus;
  eos_corpus.pairs = {{"ab", ""}, {"cd", ""}, {"ef", ""}};
  auto model = overfit(eos_corpus, 34, 0.02);
  auto hyp = decode(model, tokenize("ab", true), nullptr, 1);
  CHECK(hyp.text.empty());
  CHECK(hyp.tokens.ids == std::vector<int>{kBosId, kEosId});
}

TEST_CASE("decode caps output length by the factor") {
  TransformerModel<float> model(decode_config(), 35);  // untrained
  auto seq = tokenize("abc", true);                    // 5 tokens
  auto hyp = decode(model, seq, nullptr, 1, 2.0);
  CHECK(hyp.tokens.length() - 1 <= 10);
}

TEST_CASE("decode rejects bad arguments") {
  TransformerModel<float> model(decode_config(), 36);
  CHECK_THROWS_AS(decode(model, ByteSequence{}, nullptr, 1), Error);
  CHECK_THROWS_AS(decode(model, tokenize("a", true), nullptr, 0), Error);
}

TEST_CASE("fully merged words have fertility exactly 1") {
  auto model = train_bpe({"aa bb aa bb"}, 2);
  auto report = fertility(model, {"aa bb aa bb"});
  CHECK(report.mean == 1.0);
  CHECK(report.word_tokens == 4);
}

TEST_CASE("zero-merge fertility equals mean word character length") {
  std::vector<std::string> lines = {"der kleine Hund", "die gr\xC3\xBCne Katze",
                                    "ab"};
  auto model = train_bpe(lines, 0);
  auto report = fertility(model, lines);
  // Oracle: character counts per word, averaged by hand.
  int64_t chars = 0, words = 0;
  for (const auto& line : lines)
    for (const auto& word : whitespace_words(line)) {
      chars += utf8_char_count(word);
      ++words;
    }
  CHECK(report.word_tokens == words);
  CHECK(report.mean == doctest::Approx(double(chars) / words).epsilon(1e-12));
}

TEST_CASE("bucket accuracy is 1.0 when hypothesis equals reference") {
  std::vector<std::string> text = {"der kleine Hund", "eine Katze"};
  auto report = bucket_accuracy(text, text, BucketAxis::kWordLength,
                                {3.0, 6.0}, nullptr);
  CHECK(report.total_words() == 5);
  for (const auto& bucket : report.buckets)
    if (bucket.total > 0) CHECK(bucket.accuracy == 1.0);
}

TEST_CASE("disjoint vocabularies score zero everywhere") {
  auto report = bucket_accuracy({"xx yy"}, {"aa bbb"},
                                BucketAxis::kWordLength, {3.0}, nullptr);
  CHECK(report.total_words() == 2);
  for (const auto& bucket : report.buckets) CHECK(bucket.matches == 0);
}

TEST_CASE("clipped multiset matching: a a b vs a b b is 2/3") {
  auto report = bucket_accuracy({"a b b"}, {"a a b"},
                                BucketAxis::kWordLength, {100.0}, nullptr);
  REQUIRE(report.buckets.size() == 2);
  const auto& bucket = report.buckets[0];  // everything is shorter than 100
  CHECK(bucket.total == 3);
  CHECK(bucket.matches == 2);
  CHECK(bucket.accuracy == doctest::Approx(2.0 / 3));
}

TEST_CASE("bucket totals conserve the reference word count") {
  std::mt19937_64 rng(40);
  std::uniform_int_distribution<int> words(1, 8), len(1, 6);
  auto random_line = [&] {
    std::string line;
    int n = words(rng);
    for (int w = 0; w < n; ++w) {
      if (w) line += ' ';
      int l = len(rng);
      for (int c = 0; c < l; ++c)
        line += static_cast<char>('a' + (rng() % 5));
    }
    return line;
  };
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::string> hyp, ref;
    int64_t ref_words = 0;
    for (int i = 0; i < 4; ++i) {
      hyp.push_back(random_line());
      ref.push_back(random_line());
      ref_words += static_cast<int64_t>(whitespace_words(ref.back()).size());
    }
    auto report =
        bucket_accuracy(hyp, ref, BucketAxis::kWordLength, {2.0, 4.0}, nullptr);
    CHECK(report.total_words() == ref_words);
  }
}

TEST_CASE("fertility bucketing uses the BPE model") {
  auto bpe = train_bpe({"aa aa aa cccc"}, 1);  // merges aa, leaves cccc split
  auto report = bucket_accuracy({"aa cccc"}, {"aa cccc"},
                                BucketAxis::kFertility, {2.0}, &bpe);
  REQUIRE(report.buckets.size() == 2);
  CHECK(report.buckets[0].total == 1);  // fertility 1 word: aa
  CHECK(report.buckets[1].total == 1);  // fertility 4 word: cccc
}

TEST_CASE("bucket_accuracy validates its inputs") {
  CHECK_THROWS_AS(
      bucket_accuracy({"a"}, {"a"}, BucketAxis::kWordLength, {}, nullptr),
      Error);
  CHECK_THROWS_AS(bucket_accuracy({"a"}, {"a"}, BucketAxis::kFertility, {1.0},
                                  nullptr),
                  Error);
  CHECK_THROWS_AS(bucket_accuracy({"a", "b"}, {"a"}, BucketAxis::kWordLength,
                                  {1.0}, nullptr),
                  Error);
}

TEST_CASE("report rendering lists every bucket") {
  auto report = bucket_accuracy({"a bb"}, {"a bb"}, BucketAxis::kWordLength,
                                {2.0}, nullptr);
  auto text = render_report(report);
  CHECK(text.find("axis\tword_length") != std::string::npos);
  CHECK(text.find("[-inf,2)") != std::string::npos);
  CHECK(text.find("[2,inf)") != std::string::npos);
}
