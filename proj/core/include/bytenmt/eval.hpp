#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bytenmt/bytes.hpp"
#include "bytenmt/data.hpp"
#include "bytenmt/model.hpp"

namespace bytenmt {

struct TranslationHypothesis {
  ByteSequence tokens;  // BOS-led; ends with EOS unless the cap hit first
  double score = 0.0;   // sum of emitted-token log probabilities
  std::string text;     // detokenized output
  int replacements = 0;
};

/// Beam-search decoding; beam == 1 is exact greedy argmax. The output is
/// capped at max_len_factor times the source token length. For beam > 1
/// the returned hypothesis maximizes the length-normalized score.
TranslationHypothesis decode(TransformerModel<float>& model,
                             const ByteSequence& source,
                             const WordSpanMap* source_spans, int beam,
                             double max_len_factor = 2.0);

/// Corpus-level BLEU-4 (percentage in [0, 100]) with brevity penalty over
/// 13a tokenization, one reference per hypothesis, no smoothing.
double bleu(const std::vector<std::string>& hypotheses,
            const std::vector<std::string>& references);

/// The 13a scheme: unescape a few HTML entities, then split off ASCII
/// punctuation (periods/commas stay attached between digits, dashes split
/// after digits).
std::vector<std::string> tokenize_13a(const std::string& line);

/// Average subwords per word token over a corpus side, plus the count of
/// word tokens measured.
struct FertilityReport {
  double mean = 0.0;
  int64_t word_tokens = 0;
};

FertilityReport fertility(const BpeModel& model,
                          const std::vector<std::string>& lines);

/// Subword count for one word under a BPE model.
int word_fertility(const BpeModel& model, const std::string& word);

enum class BucketAxis { kFertility, kWordLength };

std::string bucket_axis_name(BucketAxis axis);
BucketAxis parse_bucket_axis(const std::string& name);

struct Bucket {
  double lo = 0.0;   // inclusive; -inf for the first bucket
  double hi = 0.0;   // exclusive; +inf for the last bucket
  int64_t total = 0;
  int64_t matches = 0;
  double accuracy = 0.0;
};

struct BucketReport {
  BucketAxis axis = BucketAxis::kWordLength;
  std::vector<Bucket> buckets;

  int64_t total_words() const;
};

/// Word-accuracy report: a reference word counts as matched if it appears
/// in the hypothesis with remaining multiplicity (clipped multiset
/// matching). Words are grouped by fertility (needs a BPE model) or by
/// character length. Bucket i covers [edges[i-1], edges[i]).
BucketReport bucket_accuracy(const std::vector<std::string>& hyp_lines,
                             const std::vector<std::string>& ref_lines,
                             BucketAxis axis,
                             const std::vector<double>& edges,
                             const BpeModel* bpe);

/// Tab-separated table: bucket range, word count, matches, accuracy.
std::string render_report(const BucketReport& report);

}  // namespace bytenmt
