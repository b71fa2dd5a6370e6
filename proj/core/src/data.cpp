#include "bytenmt/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "bytenmt/rng.hpp"

namespace bytenmt {

namespace {
constexpr const char* kWordEndMarker = "</w>";
}

int64_t Batch::token_count() const {
  int64_t total = 0;
  for (const auto& row : source_pad_mask)
    total += std::count(row.begin(), row.end(), uint8_t(1));
  for (const auto& row : target_pad_mask)
    total += std::count(row.begin(), row.end(), uint8_t(1));
  return total;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

ParallelCorpus load_and_filter(const std::string& src_path,
                               const std::string& tgt_path, int max_bytes) {
  auto src = read_lines(src_path);
  auto tgt = read_lines(tgt_path);
  if (src.size() != tgt.size())
    throw Error("line count mismatch: " + src_path + " has " +
                std::to_string(src.size()) + " lines, " + tgt_path + " has " +
                std::to_string(tgt.size()));
  for (size_t i = 0; i < src.size(); ++i) {
    if (utf8_find_invalid(src[i]) >= 0)
      throw Error("invalid UTF-8 in " + src_path + " line " +
                  std::to_string(i + 1));
    if (utf8_find_invalid(tgt[i]) >= 0)
      throw Error("invalid UTF-8 in " + tgt_path + " line " +
                  std::to_string(i + 1));
  }
  std::vector<std::pair<std::string, std::string>> pairs;
  pairs.reserve(src.size());
  for (size_t i = 0; i < src.size(); ++i)
    pairs.emplace_back(std::move(src[i]), std::move(tgt[i]));
  ParallelCorpus corpus = filter_pairs(std::move(pairs), max_bytes);
  corpus.source_path = src_path;
  corpus.target_path = tgt_path;
  return corpus;
}

ParallelCorpus filter_pairs(
    std::vector<std::pair<std::string, std::string>> pairs, int max_bytes) {
  ParallelCorpus corpus;
  for (auto& pair : pairs) {
    if (static_cast<int>(pair.first.size()) > max_bytes ||
        static_cast<int>(pair.second.size()) > max_bytes) {
      ++corpus.dropped;
      continue;
    }
    corpus.pairs.push_back(std::move(pair));
  }
  return corpus;
}

std::vector<Batch> make_batches(const ParallelCorpus& corpus,
                                int64_t token_budget, uint64_t seed) {
  const size_t n = corpus.pairs.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t(0));
  auto pair_tokens = [&](size_t i) {
    // BOS + bytes + EOS on both sides
    return static_cast<int64_t>(corpus.pairs[i].first.size()) +
           static_cast<int64_t>(corpus.pairs[i].second.size()) + 4;
  };
  for (size_t i = 0; i < n; ++i)
    if (pair_tokens(i) > token_budget)
      throw Error("make_batches: pair " + std::to_string(i) + " needs " +
                  std::to_string(pair_tokens(i)) +
                  " tokens, over the budget of " +
                  std::to_string(token_budget));
  // Length bucketing: sort by total length, stable on corpus order.
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return pair_tokens(a) < pair_tokens(b);
  });

  std::vector<std::vector<size_t>> groups;
  int64_t used = 0;
  for (size_t idx : order) {
    const int64_t need = pair_tokens(idx);
    if (groups.empty() || used + need > token_budget) {
      groups.emplace_back();
      used = 0;
    }
    groups.back().push_back(idx);
    used += need;
  }
  auto rng = make_rng(seed, 0xBA7C);
  std::shuffle(groups.begin(), groups.end(), rng);

  std::vector<Batch> batches;
  batches.reserve(groups.size());
  for (const auto& group : groups) {
    Batch batch;
    size_t src_width = 0, tgt_width = 0;
    for (size_t idx : group) {
      src_width = std::max(src_width, corpus.pairs[idx].first.size() + 2);
      tgt_width = std::max(tgt_width, corpus.pairs[idx].second.size() + 2);
    }
    for (size_t idx : group) {
      const auto& [src_text, tgt_text] = corpus.pairs[idx];
      auto pad_row = [](const ByteSequence& seq, size_t width) {
        std::vector<int> row(width, kPadId);
        std::copy(seq.ids.begin(), seq.ids.end(), row.begin());
        std::vector<uint8_t> mask(width, 0);
        std::fill(mask.begin(), mask.begin() + seq.ids.size(), uint8_t(1));
        return std::pair{row, mask};
      };
      auto [srow, smask] = pad_row(tokenize(src_text, true), src_width);
      auto [trow, tmask] = pad_row(tokenize(tgt_text, true), tgt_width);
      batch.source.push_back(std::move(srow));
      batch.source_pad_mask.push_back(std::move(smask));
      batch.target.push_back(std::move(trow));
      batch.target_pad_mask.push_back(std::move(tmask));
      batch.source_spans.push_back(word_spans(src_text));
      batch.pair_indices.push_back(idx);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

BpeModel train_bpe(const std::vector<std::string>& lines, int num_merges) {
  if (num_merges < 0) throw Error("train_bpe: negative merge count");
  std::map<std::vector<std::string>, int64_t> words;
  for (const auto& line : lines) {
    for (const auto& word : whitespace_words(line)) {
      auto symbols = utf8_chars(word);
      symbols.back() += kWordEndMarker;
      words[symbols] += 1;
    }
  }
  BpeModel model;
  for (int step = 0; step < num_merges; ++step) {
    // Pair frequencies; std::map iteration gives the lexicographic
    // tie-break for free.
    std::map<std::pair<std::string, std::string>, int64_t> counts;
    for (const auto& [symbols, freq] : words)
      for (size_t i = 0; i + 1 < symbols.size(); ++i)
        counts[{symbols[i], symbols[i + 1]}] += freq;
    if (counts.empty()) break;
    std::pair<std::string, std::string> best;
    int64_t best_count = 0;
    for (const auto& [pair, count] : counts) {
      if (count > best_count) {
        best = pair;
        best_count = count;
      }
    }
    model.merges.push_back(best);
    std::map<std::vector<std::string>, int64_t> merged;
    for (const auto& [symbols, freq] : words) {
      std::vector<std::string> out;
      out.reserve(symbols.size());
      for (size_t i = 0; i < symbols.size(); ++i) {
        if (i + 1 < symbols.size() && symbols[i] == best.first &&
            symbols[i + 1] == best.second) {
          out.push_back(symbols[i] + symbols[i + 1]);
          ++i;
        } else {
          out.push_back(symbols[i]);
        }
      }
      merged[out] += freq;
    }
    words = std::move(merged);
  }
  std::set<std::string> vocab;
  for (const auto& [symbols, freq] : words)
    vocab.insert(symbols.begin(), symbols.end());
  model.vocab.assign(vocab.begin(), vocab.end());
  return model;
}

std::vector<std::string> apply_bpe(const BpeModel& model,
                                   const std::string& word) {
  auto symbols = utf8_chars(word);
  if (symbols.empty()) return {};
  symbols.back() += kWordEndMarker;
  for (const auto& [a, b] : model.merges) {
    std::vector<std::string> out;
    out.reserve(symbols.size());
    for (size_t i = 0; i < symbols.size(); ++i) {
      if (i + 1 < symbols.size() && symbols[i] == a && symbols[i + 1] == b) {
        out.push_back(symbols[i] + symbols[i + 1]);
        ++i;
      } else {
        out.push_back(symbols[i]);
      }
    }
    symbols = std::move(out);
  }
  return symbols;
}

void save_bpe(const BpeModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write BPE model: " + path);
  for (const auto& [a, b] : model.merges) out << a << ' ' << b << '\n';
}

BpeModel load_bpe(const std::string& path) {
  BpeModel model;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    auto space = line.find(' ');
    if (space == std::string::npos)
      throw Error("malformed BPE merge line in " + path + ": " + line);
    model.merges.emplace_back(line.substr(0, space), line.substr(space + 1));
  }
  return model;
}

std::vector<std::string> whitespace_words(const std::string& line) {
  std::vector<std::string> words;
  std::istringstream stream(line);
  std::string word;
  while (stream >> word) words.push_back(word);
  return words;
}

}  // namespace bytenmt
