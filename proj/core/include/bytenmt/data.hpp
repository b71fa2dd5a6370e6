#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bytenmt/bytes.hpp"
#include "bytenmt/error.hpp"

namespace bytenmt {

/// Aligned sentence pairs after length filtering.
struct ParallelCorpus {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string source_path;
  std::string target_path;
  int dropped = 0;  // pairs removed by the byte-length cap

  size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

/// One training batch. The ID matrices are PAD-aligned storage: every row
/// is BOS bytes EOS followed by PAD up to the batch width. Compute paths
/// strip the padding via the pad masks / lengths.
struct Batch {
  std::vector<std::vector<int>> source;
  std::vector<std::vector<int>> target;
  std::vector<WordSpanMap> source_spans;
  std::vector<std::vector<uint8_t>> source_pad_mask;  // 1 = real token
  std::vector<std::vector<uint8_t>> target_pad_mask;
  std::vector<size_t> pair_indices;  // positions in the corpus

  size_t size() const { return source.size(); }
  /// Non-PAD source+target IDs in this batch.
  int64_t token_count() const;
};

/// Loads two aligned line files, validating UTF-8, and drops pairs where
/// either side exceeds max_bytes UTF-8 bytes.
ParallelCorpus load_and_filter(const std::string& src_path,
                               const std::string& tgt_path,
                               int max_bytes = 800);

/// Applies the byte-length cap to an in-memory pair list (same filtering
/// rule as load_and_filter).
ParallelCorpus filter_pairs(
    std::vector<std::pair<std::string, std::string>> pairs, int max_bytes);

/// Length-bucketed, seed-shuffled batches covering the corpus exactly
/// once. The per-batch budget counts non-PAD source+target IDs including
/// BOS/EOS. Deterministic per seed.
std::vector<Batch> make_batches(const ParallelCorpus& corpus,
                                int64_t token_budget, uint64_t seed);

/// Byte-pair-encoding model: an ordered merge list. Exists to measure
/// fertility; training is deterministic with lexicographic tie-breaks.
struct BpeModel {
  std::vector<std::pair<std::string, std::string>> merges;
  std::vector<std::string> vocab;
};

/// Greedy highest-frequency pair merging over whitespace-separated words
/// with an end-of-word marker attached to the final character.
BpeModel train_bpe(const std::vector<std::string>& lines, int num_merges);

/// Segments one word with a trained model. A zero-merge model splits the
/// word into its characters.
std::vector<std::string> apply_bpe(const BpeModel& model,
                                   const std::string& word);

void save_bpe(const BpeModel& model, const std::string& path);
BpeModel load_bpe(const std::string& path);

/// Whitespace-separated tokens of a line (ASCII whitespace).
std::vector<std::string> whitespace_words(const std::string& line);

/// Reads a whole UTF-8 line file; strips trailing CR. Throws if missing.
std::vector<std::string> read_lines(const std::string& path);

}  // namespace bytenmt
