#include "bytenmt/fusion.hpp"

namespace bytenmt {

BlockMask build_block_mask(const WordSpanMap& spans, bool with_specials) {
  int cursor = 0;
  for (const auto& span : spans.spans) {
    if (span.start != cursor || span.end <= span.start)
      throw Error("build_block_mask: spans do not partition the sequence "
                  "(gap or overlap at byte " +
                  std::to_string(span.start) + ")");
    cursor = span.end;
  }
  const int offset = with_specials ? 1 : 0;
  const int n = cursor + 2 * offset;
  BlockMask mask;
  mask.rows = n;
  mask.cols = n;
  mask.allowed.assign(static_cast<size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i) mask.set(i, i, true);  // specials: singletons
  for (const auto& span : spans.spans) {
    for (int i = span.start; i < span.end; ++i)
      for (int j = span.start; j < span.end; ++j)
        mask.set(i + offset, j + offset, true);
  }
  return mask;
}

}  // namespace bytenmt
