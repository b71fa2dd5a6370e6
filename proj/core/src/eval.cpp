#include "bytenmt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "bytenmt/fusion.hpp"

namespace bytenmt {

namespace {

struct BeamEntry {
  ByteSequence prefix;  // BOS-led
  double score = 0.0;
  bool finished = false;

  int emitted() const { return prefix.length() - 1; }
};

double normalized(const BeamEntry& entry) {
  return entry.score / std::max(1, entry.emitted());
}

}  // namespace

TranslationHypothesis decode(TransformerModel<float>& model,
                             const ByteSequence& source,
                             const WordSpanMap* source_spans, int beam,
                             double max_len_factor) {
  if (source.empty()) throw Error("decode: empty source");
  if (beam < 1) throw Error("decode: beam must be >= 1");
  NoGradGuard ng;
  auto z = encode_source(model, source, source_spans, false);
  const int cap = std::max(
      1, static_cast<int>(max_len_factor * source.length()));

  std::vector<BeamEntry> live{{ByteSequence{{kBosId}}, 0.0, false}};
  std::vector<BeamEntry> done;
  while (!live.empty()) {
    std::vector<BeamEntry> candidates;
    for (const auto& entry : live) {
      auto probs = model.decode_step(entry.prefix, z);
      // Top `beam` continuations of this entry, ties to the lowest ID.
      std::vector<int> ids(probs.size());
      for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
      const size_t keep = std::min<size_t>(static_cast<size_t>(beam),
                                           ids.size());
      std::partial_sort(ids.begin(), ids.begin() + keep, ids.end(),
                        [&](int a, int b) {
                          if (probs[a] != probs[b]) return probs[a] > probs[b];
                          return a < b;
                        });
      for (size_t k = 0; k < keep; ++k) {
        BeamEntry next = entry;
        next.prefix.ids.push_back(ids[k]);
        next.score += std::log(std::max<double>(probs[ids[k]], 1e-300));
        next.finished = ids[k] == kEosId;
        candidates.push_back(std::move(next));
      }
    }
    std::sort(candidates.begin(), candidates.end(),
              [](const BeamEntry& a, const BeamEntry& b) {
                return a.score > b.score;
              });
    if (candidates.size() > static_cast<size_t>(beam))
      candidates.resize(static_cast<size_t>(beam));
    live.clear();
    for (auto& entry : candidates) {
      if (entry.finished || entry.emitted() >= cap)
        done.push_back(std::move(entry));
      else
        live.push_back(std::move(entry));
    }
  }
  const BeamEntry* best = &done.front();
  for (const auto& entry : done) {
    const double a = beam > 1 ? normalized(entry) : entry.score;
    const double b = beam > 1 ? normalized(*best) : best->score;
    if (a > b) best = &entry;
  }
  TranslationHypothesis hyp;
  hyp.tokens = best->prefix;
  hyp.score = best->score;
  auto detok = detokenize(hyp.tokens);
  hyp.text = std::move(detok.text);
  hyp.replacements = detok.replacements;
  return hyp;
}

std::vector<std::string> tokenize_13a(const std::string& line) {
  std::string text = line;
  auto replace_all = [](std::string& s, const std::string& from,
                        const std::string& to) {
    size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
      s.replace(pos, from.size(), to);
      pos += to.size();
    }
  };
  replace_all(text, "<skipped>", "");
  replace_all(text, "-\n", "");
  replace_all(text, "\n", " ");
  if (text.find('&') != std::string::npos) {
    replace_all(text, "&quot;", "\"");
    replace_all(text, "&amp;", "&");
    replace_all(text, "&lt;", "<");
    replace_all(text, "&gt;", ">");
  }

  auto is_excluded_punct = [](unsigned char c) {
    // ASCII punctuation split off unconditionally: the ranges
    // {-~, [-`, space-&, (-+, :-@ and the slash.
    return (c >= '{' && c <= '~') || (c >= '[' && c <= '`') ||
           (c >= ' ' && c <= '&') || (c >= '(' && c <= '+') ||
           (c >= ':' && c <= '@') || c == '/';
  };
  auto is_digit = [](unsigned char c) { return c >= '0' && c <= '9'; };

  std::string spaced;
  spaced.reserve(text.size() * 2);
  for (size_t i = 0; i < text.size(); ++i) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    const bool has_prev = i > 0;
    const bool has_next = i + 1 < text.size();
    const unsigned char prev =
        has_prev ? static_cast<unsigned char>(text[i - 1]) : ' ';
    const unsigned char next =
        has_next ? static_cast<unsigned char>(text[i + 1]) : ' ';
    bool split = false;
    if (is_excluded_punct(c)) {
      split = true;
    } else if ((c == '.' || c == ',') && (!is_digit(prev) || !is_digit(next))) {
      // periods/commas stay attached only between digits
      split = true;
    } else if (c == '-' && is_digit(prev)) {
      split = true;
    }
    if (split) {
      spaced.push_back(' ');
      spaced.push_back(static_cast<char>(c));
      spaced.push_back(' ');
    } else {
      spaced.push_back(static_cast<char>(c));
    }
  }
  std::vector<std::string> tokens;
  std::istringstream stream(spaced);
  std::string token;
  while (stream >> token) tokens.push_back(token);
  return tokens;
}

double bleu(const std::vector<std::string>& hypotheses,
            const std::vector<std::string>& references) {
  if (references.empty()) throw Error("bleu: empty reference set");
  if (hypotheses.size() != references.size())
    throw Error("bleu: " + std::to_string(hypotheses.size()) +
                " hypotheses vs " + std::to_string(references.size()) +
                " references");
  constexpr int kOrder = 4;
  int64_t matches[kOrder] = {0, 0, 0, 0};
  int64_t totals[kOrder] = {0, 0, 0, 0};
  int64_t hyp_len = 0, ref_len = 0;
  for (size_t i = 0; i < hypotheses.size(); ++i) {
    auto hyp = tokenize_13a(hypotheses[i]);
    auto ref = tokenize_13a(references[i]);
    hyp_len += static_cast<int64_t>(hyp.size());
    ref_len += static_cast<int64_t>(ref.size());
    for (int n = 1; n <= kOrder; ++n) {
      std::map<std::vector<std::string>, int64_t> ref_counts;
      for (size_t k = 0; k + n <= ref.size(); ++k)
        ref_counts[{ref.begin() + k, ref.begin() + k + n}] += 1;
      std::map<std::vector<std::string>, int64_t> hyp_counts;
      for (size_t k = 0; k + n <= hyp.size(); ++k)
        hyp_counts[{hyp.begin() + k, hyp.begin() + k + n}] += 1;
      for (const auto& [gram, count] : hyp_counts) {
        totals[n - 1] += count;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end())
          matches[n - 1] += std::min(count, it->second);
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_precision = 0.0;
  for (int n = 0; n < kOrder; ++n) {
    if (matches[n] == 0 || totals[n] == 0) return 0.0;
    log_precision +=
        std::log(static_cast<double>(matches[n]) / totals[n]) / kOrder;
  }
  const double bp =
      hyp_len >= ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_len) / hyp_len);
  return 100.0 * bp * std::exp(log_precision);
}

int word_fertility(const BpeModel& model, const std::string& word) {
  return static_cast<int>(apply_bpe(model, word).size());
}

FertilityReport fertility(const BpeModel& model,
                          const std::vector<std::string>& lines) {
  FertilityReport report;
  int64_t total = 0;
  for (const auto& line : lines) {
    for (const auto& word : whitespace_words(line)) {
      total += word_fertility(model, word);
      ++report.word_tokens;
    }
  }
  report.mean = report.word_tokens > 0
                    ? static_cast<double>(total) / report.word_tokens
                    : 0.0;
  return report;
}

std::string bucket_axis_name(BucketAxis axis) {
  return axis == BucketAxis::kFertility ? "fertility" : "word_length";
}

BucketAxis parse_bucket_axis(const std::string& name) {
  if (name == "fertility") return BucketAxis::kFertility;
  if (name == "word_length") return BucketAxis::kWordLength;
  throw Error("unknown bucket axis: " + name);
}

int64_t BucketReport::total_words() const {
  int64_t total = 0;
  for (const auto& bucket : buckets) total += bucket.total;
  return total;
}

BucketReport bucket_accuracy(const std::vector<std::string>& hyp_lines,
                             const std::vector<std::string>& ref_lines,
                             BucketAxis axis,
                             const std::vector<double>& edges,
                             const BpeModel* bpe) {
  if (edges.empty()) throw Error("bucket_accuracy: empty bucket edges");
  if (!std::is_sorted(edges.begin(), edges.end()))
    throw Error("bucket_accuracy: edges must be ascending");
  if (hyp_lines.size() != ref_lines.size())
    throw Error("bucket_accuracy: " + std::to_string(hyp_lines.size()) +
                " hypotheses vs " + std::to_string(ref_lines.size()) +
                " references");
  if (axis == BucketAxis::kFertility && bpe == nullptr)
    throw Error("bucket_accuracy: fertility axis needs a BPE model");

  BucketReport report;
  report.axis = axis;
  const double inf = std::numeric_limits<double>::infinity();
  report.buckets.resize(edges.size() + 1);
  for (size_t b = 0; b < report.buckets.size(); ++b) {
    report.buckets[b].lo = b == 0 ? -inf : edges[b - 1];
    report.buckets[b].hi = b == edges.size() ? inf : edges[b];
  }
  auto bucket_of = [&](double value) {
    size_t b = 0;
    while (b < edges.size() && value >= edges[b]) ++b;
    return b;
  };
  auto measure = [&](const std::string& word) {
    if (axis == BucketAxis::kFertility)
      return static_cast<double>(word_fertility(*bpe, word));
    return static_cast<double>(utf8_char_count(word));
  };

  for (size_t i = 0; i < ref_lines.size(); ++i) {
    std::map<std::string, int64_t> ref_counts, hyp_counts;
    for (const auto& w : whitespace_words(ref_lines[i])) ref_counts[w] += 1;
    for (const auto& w : whitespace_words(hyp_lines[i])) hyp_counts[w] += 1;
    for (const auto& [word, count] : ref_counts) {
      auto& bucket = report.buckets[bucket_of(measure(word))];
      bucket.total += count;
      auto it = hyp_counts.find(word);
      if (it != hyp_counts.end())
        bucket.matches += std::min(count, it->second);
    }
  }
  for (auto& bucket : report.buckets)
    bucket.accuracy = bucket.total > 0
                          ? static_cast<double>(bucket.matches) / bucket.total
                          : 0.0;
  return report;
}

std::string render_report(const BucketReport& report) {
  std::ostringstream out;
  out << "axis\t" << bucket_axis_name(report.axis) << '\n';
  out << "range\twords\tmatches\taccuracy\n";
  for (const auto& bucket : report.buckets) {
    out << '[';
    if (std::isinf(bucket.lo))
      out << "-inf";
    else
      out << bucket.lo;
    out << ',';
    if (std::isinf(bucket.hi))
      out << "inf";
    else
      out << bucket.hi;
    out << ")\t" << bucket.total << '\t' << bucket.matches << '\t';
    out << bucket.accuracy << '\n';
  }
  return out.str();
}

}  // namespace bytenmt
