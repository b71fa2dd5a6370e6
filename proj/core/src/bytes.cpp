#include "bytenmt/bytes.hpp"

namespace bytenmt {
namespace {

constexpr std::string_view kReplacementChar = "\xEF\xBF\xBD";  // U+FFFD

bool is_continuation(unsigned char b) { return (b & 0xC0) == 0x80; }

// Length of the well-formed UTF-8 sequence starting at text[pos], or -1.
// Overlong encodings, surrogates and code points above U+10FFFF are
// rejected, matching the WHATWG definition of well-formed UTF-8.
int sequence_length(std::string_view text, size_t pos) {
  const auto b0 = static_cast<unsigned char>(text[pos]);
  if (b0 < 0x80) return 1;
  if (b0 < 0xC2) return -1;  // stray continuation or overlong lead
  size_t remaining = text.size() - pos;
  if (b0 <= 0xDF) {
    if (remaining < 2 || !is_continuation(text[pos + 1])) return -1;
    return 2;
  }
  if (b0 <= 0xEF) {
    if (remaining < 3) return -1;
    const auto b1 = static_cast<unsigned char>(text[pos + 1]);
    unsigned char lo = 0x80, hi = 0xBF;
    if (b0 == 0xE0) lo = 0xA0;
    if (b0 == 0xED) hi = 0x9F;
    if (b1 < lo || b1 > hi || !is_continuation(text[pos + 2])) return -1;
    return 3;
  }
  if (b0 <= 0xF4) {
    if (remaining < 4) return -1;
    const auto b1 = static_cast<unsigned char>(text[pos + 1]);
    unsigned char lo = 0x80, hi = 0xBF;
    if (b0 == 0xF0) lo = 0x90;
    if (b0 == 0xF4) hi = 0x8F;
    if (b1 < lo || b1 > hi || !is_continuation(text[pos + 2]) ||
        !is_continuation(text[pos + 3]))
      return -1;
    return 4;
  }
  return -1;
}

bool is_ascii_space(unsigned char b) {
  return b == ' ' || b == '\t' || b == '\n' || b == '\r' || b == '\f' ||
         b == '\v';
}

}  // namespace

int utf8_find_invalid(std::string_view text) {
  size_t pos = 0;
  while (pos < text.size()) {
    int len = sequence_length(text, pos);
    if (len < 0) return static_cast<int>(pos);
    pos += static_cast<size_t>(len);
  }
  return -1;
}

int utf8_char_count(std::string_view text) {
  size_t pos = 0;
  int count = 0;
  while (pos < text.size()) {
    int len = sequence_length(text, pos);
    if (len < 0)
      throw Error("utf8_char_count: invalid UTF-8 at byte offset " +
                  std::to_string(pos));
    pos += static_cast<size_t>(len);
    ++count;
  }
  return count;
}

std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> chars;
  size_t pos = 0;
  while (pos < text.size()) {
    int len = sequence_length(text, pos);
    if (len < 0)
      throw Error("utf8_chars: invalid UTF-8 at byte offset " +
                  std::to_string(pos));
    chars.emplace_back(text.substr(pos, static_cast<size_t>(len)));
    pos += static_cast<size_t>(len);
  }
  return chars;
}

ByteSequence tokenize(std::string_view text, bool add_specials) {
  int bad = utf8_find_invalid(text);
  if (bad >= 0)
    throw Error("tokenize: invalid UTF-8 at byte offset " +
                std::to_string(bad));
  ByteSequence seq;
  seq.ids.reserve(text.size() + (add_specials ? 2 : 0));
  if (add_specials) seq.ids.push_back(kBosId);
  for (char c : text) seq.ids.push_back(static_cast<unsigned char>(c));
  if (add_specials) seq.ids.push_back(kEosId);
  return seq;
}

DetokenizeResult detokenize(const ByteSequence& seq) {
  std::string bytes;
  bytes.reserve(seq.ids.size());
  for (int id : seq.ids) {
    if (id < 0 || id >= kVocabSize)
      throw Error("detokenize: token ID " + std::to_string(id) +
                  " outside vocabulary");
    if (id < 256) bytes.push_back(static_cast<char>(id));
  }
  DetokenizeResult result;
  result.text.reserve(bytes.size());
  size_t pos = 0;
  while (pos < bytes.size()) {
    int len = sequence_length(bytes, pos);
    if (len < 0) {
      result.text.append(kReplacementChar);
      ++result.replacements;
      ++pos;
    } else {
      result.text.append(bytes, pos, static_cast<size_t>(len));
      pos += static_cast<size_t>(len);
    }
  }
  return result;
}

WordSpanMap word_spans(std::string_view text) {
  WordSpanMap map;
  size_t pos = 0;
  while (pos < text.size()) {
    int len = sequence_length(text, pos);
    if (len < 0)
      throw Error("word_spans: invalid UTF-8 at byte offset " +
                  std::to_string(pos));
    bool space = len == 1 && is_ascii_space(text[pos]);
    SpanKind kind = space ? SpanKind::kWhitespace : SpanKind::kWord;
    int start = static_cast<int>(pos);
    int end = start + len;
    if (!map.spans.empty() && map.spans.back().kind == kind &&
        map.spans.back().end == start) {
      map.spans.back().end = end;
    } else {
      map.spans.push_back({start, end, kind});
    }
    pos = static_cast<size_t>(end);
  }
  return map;
}

std::string span_kind_name(SpanKind kind) {
  switch (kind) {
    case SpanKind::kWord:
      return "word";
    case SpanKind::kWhitespace:
      return "ws";
    case SpanKind::kSpecial:
      return "special";
  }
  return "?";
}

}  // namespace bytenmt
