#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "bytenmt/error.hpp"

namespace bytenmt {

// Vocabulary layout: 256 raw byte values plus three specials. Bytes cannot
// be out-of-vocabulary, so there is no UNK.
inline constexpr int kPadId = 256;
inline constexpr int kBosId = 257;
inline constexpr int kEosId = 258;
inline constexpr int kVocabSize = 259;

/// Token-ID sequence over the byte vocabulary plus specials.
struct ByteSequence {
  std::vector<int> ids;

  int length() const { return static_cast<int>(ids.size()); }
  bool empty() const { return ids.empty(); }
};

enum class SpanKind { kWord, kWhitespace, kSpecial };

/// Half-open byte interval [start, end) of one word / whitespace run.
struct Span {
  int start = 0;
  int end = 0;
  SpanKind kind = SpanKind::kWord;

  bool operator==(const Span&) const = default;
};

/// Ordered, contiguous, non-overlapping spans partitioning a byte sequence.
/// Drives the block-wise attention masking.
struct WordSpanMap {
  std::vector<Span> spans;

  bool empty() const { return spans.empty(); }
  int size() const { return static_cast<int>(spans.size()); }
  /// Total number of bytes covered (0 for an empty map).
  int covered_length() const { return spans.empty() ? 0 : spans.back().end; }
};

struct DetokenizeResult {
  std::string text;
  /// Number of U+FFFD substitutions made for byte runs that were not
  /// valid UTF-8 (decoder output may be malformed mid-training).
  int replacements = 0;
};

/// Converts text to its UTF-8 byte token IDs, optionally wrapped in BOS/EOS.
/// Throws Error naming the byte offset if the input is not valid UTF-8.
ByteSequence tokenize(std::string_view text, bool add_specials = false);

/// Inverse of tokenize. Specials are stripped; invalid byte runs are
/// replaced with U+FFFD and counted.
DetokenizeResult detokenize(const ByteSequence& seq);

/// Splits text into maximal non-whitespace (word) and whitespace runs,
/// with boundaries expressed in byte offsets. Whitespace here is the ASCII
/// set {space, \t, \n, \r, \f, \v}; multi-byte characters are never
/// whitespace. Throws on invalid UTF-8.
WordSpanMap word_spans(std::string_view text);

/// Number of Unicode code points in valid UTF-8 text.
int utf8_char_count(std::string_view text);

/// Splits valid UTF-8 text into individual code-point strings.
std::vector<std::string> utf8_chars(std::string_view text);

/// Validates text, returning the byte offset of the first invalid byte or
/// -1 when the whole string is well-formed UTF-8.
int utf8_find_invalid(std::string_view text);

std::string span_kind_name(SpanKind kind);

}  // namespace bytenmt
