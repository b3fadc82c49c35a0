#pragma once

// Tokenization, word alignment and WER aggregation.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "endow/corpus.hpp"
#include "endow/error.hpp"

namespace endow {

struct Token {
  std::string text;
  std::size_t begin = 0;  // byte offsets into the source string
  std::size_t end = 0;

  bool operator==(const Token&) const = default;
};

/// Rule table for the tokenizer. Characters are ASCII; contraction suffixes
/// are matched case-insensitively, with U+2019 accepted for the apostrophe.
struct TokenizerRules {
  std::string prefix_chars = "\"'([{<$#`";
  std::string suffix_chars = "\"'.,;:!?)]}>%";
  std::vector<std::string> contractions = {"n't", "'s", "'re", "'ve", "'ll", "'d", "'m"};

  static const TokenizerRules& standard() {
    static const TokenizerRules rules;
    return rules;
  }
};

namespace detail {

inline bool is_ascii_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

inline bool all_punct(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return is_ascii_punct(static_cast<unsigned char>(c));
  });
}

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

/// Lower-cases and maps U+2019 to '\'' so contraction matching sees one form.
inline std::string fold_apostrophes(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i + 2 < s.size() && static_cast<unsigned char>(s[i]) == 0xE2 &&
        static_cast<unsigned char>(s[i + 1]) == 0x80 && static_cast<unsigned char>(s[i + 2]) == 0x99) {
      out.push_back('\'');
      i += 2;
    } else {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(s[i]))));
    }
  }
  return out;
}

/// Byte length of the contraction suffix `core` ends with, or 0.
/// When `exact` is set the whole of `core` must be the contraction.
inline std::size_t contraction_suffix(std::string_view core, const TokenizerRules& rules, bool exact) {
  for (const auto& c : rules.contractions) {
    // Try both apostrophe encodings: ASCII (c.size() bytes) and U+2019 (+2 bytes).
    const bool has_apos = c.find('\'') != std::string::npos;
    for (std::size_t len : {c.size(), c.size() + 2}) {
      if (len > core.size() || (len != c.size() && !has_apos)) continue;
      if (exact && len != core.size()) continue;
      if (!exact && len == core.size()) continue;
      if (fold_apostrophes(core.substr(core.size() - len)) == c) return len;
    }
  }
  return 0;
}

}  // namespace detail

/// Splits on whitespace, then peels prefix/suffix punctuation (a run of one
/// repeated character becomes one token) and contraction suffixes. A chunk
/// made only of punctuation stays whole. Re-tokenizing the space-joined output
/// reproduces it.
inline std::vector<Token> tokenize(std::string_view text,
                                   const TokenizerRules& rules = TokenizerRules::standard()) {
  std::vector<Token> out;
  auto is_prefix = [&](char c) { return rules.prefix_chars.find(c) != std::string::npos; };
  auto is_suffix = [&](char c) { return rules.suffix_chars.find(c) != std::string::npos; };

  std::size_t pos = 0;
  while (pos < text.size()) {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    if (pos >= text.size()) break;
    std::size_t end = pos;
    while (end < text.size() && !std::isspace(static_cast<unsigned char>(text[end]))) ++end;

    std::size_t b = pos, e = end;
    std::vector<Token> tail;  // collected right-to-left
    while (b < e) {
      std::string_view core = text.substr(b, e - b);
      if (core.size() == 1 || detail::all_punct(core) ||
          detail::contraction_suffix(core, rules, /*exact=*/true) != 0) {
        out.push_back({std::string(core), b, e});
        break;
      }
      if (is_prefix(core.front())) {
        std::size_t run = 1;
        while (run < core.size() && core[run] == core.front()) ++run;
        out.push_back({std::string(core.substr(0, run)), b, b + run});
        b += run;
        continue;
      }
      if (is_suffix(core.back())) {
        std::size_t run = 1;
        while (run < core.size() && core[core.size() - 1 - run] == core.back()) ++run;
        tail.push_back({std::string(core.substr(core.size() - run)), e - run, e});
        e -= run;
        continue;
      }
      if (std::size_t len = detail::contraction_suffix(core, rules, /*exact=*/false); len != 0) {
        tail.push_back({std::string(core.substr(core.size() - len)), e - len, e});
        e -= len;
        continue;
      }
      out.push_back({std::string(core), b, e});
      break;
    }
    out.insert(out.end(), tail.rbegin(), tail.rend());
    pos = end;
  }
  return out;
}

inline std::string join_tokens(std::span<const Token> tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t.text;
  }
  return out;
}

inline std::vector<std::string> token_texts(std::span<const Token> tokens) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.text);
  return out;
}

// ---------------------------------------------------------------------------
// Alignment

enum class EditType : std::uint8_t { kHit, kSub, kDel, kIns };

inline const char* to_string(EditType t) {
  switch (t) {
    case EditType::kHit: return "HIT";
    case EditType::kSub: return "SUB";
    case EditType::kDel: return "DEL";
    case EditType::kIns: return "INS";
  }
  return "?";
}

/// One word-level operation. Spans are half-open token index ranges; a DEL has
/// an empty hypothesis span and an INS an empty reference span.
struct EditOp {
  EditType type;
  std::size_t ref_begin, ref_end;
  std::size_t hyp_begin, hyp_end;

  bool operator==(const EditOp&) const = default;
};

struct WerCounts {
  std::size_t hits = 0, substitutions = 0, deletions = 0, insertions = 0;

  std::size_t errors() const { return substitutions + deletions + insertions; }
  std::size_t reference_length() const { return hits + substitutions + deletions; }
  std::size_t hypothesis_length() const { return hits + substitutions + insertions; }

  /// (S+D+I)/(H+S+D), unclamped. An empty reference yields 0 when the
  /// hypothesis is empty too and 1 otherwise.
  double wer() const {
    const auto n = reference_length();
    if (n == 0) return errors() == 0 ? 0.0 : 1.0;
    return static_cast<double>(errors()) / static_cast<double>(n);
  }

  WerCounts& operator+=(const WerCounts& o) {
    hits += o.hits;
    substitutions += o.substitutions;
    deletions += o.deletions;
    insertions += o.insertions;
    return *this;
  }
  bool operator==(const WerCounts&) const = default;
};

struct AlignmentResult {
  std::vector<EditOp> ops;
  WerCounts counts;
};

struct AlignOptions {
  bool case_fold = false;
};

/// Minimum edit distance alignment with unit costs. Among optimal alignments
/// the one chosen is found by walking from the start of both sequences and
/// preferring HIT, then SUB, then DEL, then INS.
inline AlignmentResult align(std::span<const std::string> ref, std::span<const std::string> hyp,
                             const AlignOptions& opts = {}) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::string> rf, hf;
  if (opts.case_fold) {
    for (const auto& s : ref) rf.push_back(detail::ascii_lower(s));
    for (const auto& s : hyp) hf.push_back(detail::ascii_lower(s));
    ref = rf;
    hyp = hf;
  }
  auto eq = [&](std::size_t i, std::size_t j) { return ref[i] == hyp[j]; };

  // dist[i][j] = edit distance between ref[i:] and hyp[j:]
  const std::size_t w = m + 1;
  std::vector<std::uint32_t> dist((n + 1) * w);
  auto at = [&](std::size_t i, std::size_t j) -> std::uint32_t& { return dist[i * w + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, m) = static_cast<std::uint32_t>(n - i);
  for (std::size_t j = 0; j <= m; ++j) at(n, j) = static_cast<std::uint32_t>(m - j);
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = m; j-- > 0;) {
      const std::uint32_t diag = at(i + 1, j + 1) + (eq(i, j) ? 0 : 1);
      at(i, j) = std::min({diag, at(i + 1, j) + 1, at(i, j + 1) + 1});
    }
  }

  AlignmentResult res;
  res.ops.reserve(std::max(n, m));
  std::size_t i = 0, j = 0;
  while (i < n || j < m) {
    const std::uint32_t here = at(i, j);
    if (i < n && j < m && eq(i, j) && here == at(i + 1, j + 1)) {
      res.ops.push_back({EditType::kHit, i, i + 1, j, j + 1});
      ++res.counts.hits;
      ++i, ++j;
    } else if (i < n && j < m && here == at(i + 1, j + 1) + 1) {
      res.ops.push_back({EditType::kSub, i, i + 1, j, j + 1});
      ++res.counts.substitutions;
      ++i, ++j;
    } else if (i < n && here == at(i + 1, j) + 1) {
      res.ops.push_back({EditType::kDel, i, i + 1, j, j});
      ++res.counts.deletions;
      ++i;
    } else {
      res.ops.push_back({EditType::kIns, i, i, j, j + 1});
      ++res.counts.insertions;
      ++j;
    }
  }
  return res;
}

inline AlignmentResult align(std::span<const Token> ref, std::span<const Token> hyp,
                             const AlignOptions& opts = {}) {
  const auto r = token_texts(ref);
  const auto h = token_texts(hyp);
  return align(std::span<const std::string>(r), std::span<const std::string>(h), opts);
}

/// Debug dump, one `<op> <ref-token> <hyp-token>` line per op ("*" = absent).
inline std::string dump_alignment(const AlignmentResult& res, std::span<const std::string> ref,
                                  std::span<const std::string> hyp) {
  std::string out;
  for (const auto& op : res.ops) {
    out += to_string(op.type);
    out += ' ';
    out += op.ref_end > op.ref_begin ? ref[op.ref_begin] : "*";
    out += ' ';
    out += op.hyp_end > op.hyp_begin ? hyp[op.hyp_begin] : "*";
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// WER

struct TranscriptWer {
  double wer = 0.0;
  WerCounts counts;
};

/// Utterances pair positionally; per-utterance counts are summed before the
/// ratio is taken.
inline TranscriptWer wer_transcript(const Transcript& reference, const Transcript& hypothesis,
                                    const AlignOptions& opts = {}) {
  if (reference.utterances.size() != hypothesis.utterances.size()) {
    throw MismatchError("transcript '" + reference.id + "': reference has " +
                        std::to_string(reference.utterances.size()) + " utterances, hypothesis has " +
                        std::to_string(hypothesis.utterances.size()));
  }
  TranscriptWer out;
  for (std::size_t u = 0; u < reference.utterances.size(); ++u) {
    const auto r = tokenize(reference.utterances[u].text);
    const auto h = tokenize(hypothesis.utterances[u].text);
    out.counts += align(std::span<const Token>(r), std::span<const Token>(h), opts).counts;
  }
  out.wer = out.counts.wer();
  return out;
}

/// Unweighted mean of transcript-level WER.
inline double wer_set(std::span<const Transcript> references, std::span<const Transcript> hypotheses,
                      const AlignOptions& opts = {}) {
  if (references.empty()) throw Error("wer_set: empty transcript set");
  if (references.size() != hypotheses.size()) {
    throw MismatchError("wer_set: " + std::to_string(references.size()) + " references vs " +
                        std::to_string(hypotheses.size()) + " hypotheses");
  }
  double sum = 0.0;
  for (std::size_t t = 0; t < references.size(); ++t) {
    if (references[t].id != hypotheses[t].id) {
      throw MismatchError("wer_set: transcript '" + references[t].id + "' paired with '" +
                          hypotheses[t].id + "'");
    }
    sum += wer_transcript(references[t], hypotheses[t], opts).wer;
  }
  return sum / static_cast<double>(references.size());
}

}  // namespace endow
