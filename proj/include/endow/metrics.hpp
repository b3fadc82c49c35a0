#pragma once

// Task metrics: ROUGE-1/2/L, extractive-QA matching, classification
// accuracy and macro-F1.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "endow/alignment.hpp"
#include "endow/error.hpp"

namespace endow::metrics {

// ---------------------------------------------------------------------------
// ROUGE

enum class RougeOrder { k1, k2, kL };

inline const char* to_string(RougeOrder o) {
  switch (o) {
    case RougeOrder::k1: return "rouge1";
    case RougeOrder::k2: return "rouge2";
    case RougeOrder::kL: return "rougeL";
  }
  return "?";
}

struct PrfScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Tokenizer output, case-folded, with pure-punctuation tokens dropped.
inline std::vector<std::string> rouge_tokens(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& t : tokenize(text)) {
    if (endow::detail::all_punct(t.text)) continue;
    out.push_back(endow::detail::fold_apostrophes(t.text));
  }
  return out;
}

namespace detail {

inline PrfScore prf(double overlap, double cand_total, double ref_total) {
  PrfScore s;
  s.precision = cand_total > 0 ? overlap / cand_total : 0.0;
  s.recall = ref_total > 0 ? overlap / ref_total : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

inline std::map<std::vector<std::string>, int> ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
  std::map<std::vector<std::string>, int> out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++out[std::vector<std::string>(toks.begin() + i, toks.begin() + i + n)];
  return out;
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace detail

/// Identical token sequences (including two empty ones) score 1. Otherwise
/// an empty n-gram list on either side scores 0. ROUGE-L is one LCS over the
/// whole text.
inline PrfScore rouge_prf(std::string_view candidate, std::string_view reference, RougeOrder order) {
  const auto c = rouge_tokens(candidate);
  const auto r = rouge_tokens(reference);
  if (c == r) return {1.0, 1.0, 1.0};
  if (order == RougeOrder::kL) {
    return detail::prf(static_cast<double>(detail::lcs_length(c, r)), static_cast<double>(c.size()),
                       static_cast<double>(r.size()));
  }
  const std::size_t n = order == RougeOrder::k1 ? 1 : 2;
  const auto cc = detail::ngram_counts(c, n);
  const auto rc = detail::ngram_counts(r, n);
  double overlap = 0.0, ct = 0.0, rt = 0.0;
  for (const auto& [g, k] : cc) {
    ct += k;
    if (auto it = rc.find(g); it != rc.end()) overlap += std::min(k, it->second);
  }
  for (const auto& [g, k] : rc) rt += k;
  return detail::prf(overlap, ct, rt);
}

inline double rouge(std::string_view candidate, std::string_view reference, RougeOrder order) {
  return rouge_prf(candidate, reference, order).f1;
}

// ---------------------------------------------------------------------------
// QA matching

enum class QaMode { kExact, kF1, kFuzzy };

inline const char* to_string(QaMode m) {
  switch (m) {
    case QaMode::kExact: return "exact";
    case QaMode::kF1: return "f1";
    case QaMode::kFuzzy: return "fuzzy";
  }
  return "?";
}

/// Lower-case, drop ASCII punctuation, drop the articles a/an/the, collapse
/// whitespace.
inline std::string normalize_answer(std::string_view text) {
  std::string no_punct;
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 0x80 && std::ispunct(u)) continue;
    no_punct.push_back(static_cast<char>(std::tolower(u)));
  }
  std::string out;
  std::size_t pos = 0;
  while (pos < no_punct.size()) {
    while (pos < no_punct.size() && std::isspace(static_cast<unsigned char>(no_punct[pos]))) ++pos;
    std::size_t end = pos;
    while (end < no_punct.size() && !std::isspace(static_cast<unsigned char>(no_punct[end]))) ++end;
    if (end > pos) {
      const auto w = std::string_view(no_punct).substr(pos, end - pos);
      if (w != "a" && w != "an" && w != "the") {
        if (!out.empty()) out.push_back(' ');
        out += w;
      }
    }
    pos = end;
  }
  return out;
}

namespace detail {

inline std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const auto sp = s.find(' ', pos);
    const auto end = sp == std::string::npos ? s.size() : sp;
    if (end > pos) out.push_back(s.substr(pos, end - pos));
    pos = end + 1;
  }
  return out;
}

inline double token_f1(const std::string& pred, const std::string& gold) {
  const auto p = split_ws(pred), g = split_ws(gold);
  if (p.empty() || g.empty()) return p == g ? 1.0 : 0.0;
  std::map<std::string, int> gc;
  for (const auto& t : g) ++gc[t];
  double common = 0;
  for (const auto& t : p) {
    if (auto it = gc.find(t); it != gc.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  return prf(common, static_cast<double>(p.size()), static_cast<double>(g.size())).f1;
}

/// Total size of the matching blocks found by recursively taking the longest
/// common substring and recursing on both sides of it (Ratcliff/Obershelp).
inline std::size_t matched_chars(std::string_view a, std::string_view b) {
  if (a.empty() || b.empty()) return 0;
  std::size_t best = 0, ai = 0, bj = 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : 0;
      // earliest-in-a, then earliest-in-b longest match
      if (cur[j] > best) {
        best = cur[j];
        ai = i - best;
        bj = j - best;
      }
    }
    std::swap(prev, cur);
  }
  if (best == 0) return 0;
  return best + matched_chars(a.substr(0, ai), b.substr(0, bj)) +
         matched_chars(a.substr(ai + best), b.substr(bj + best));
}

inline double fuzzy_ratio(const std::string& a, const std::string& b) {
  if (a.empty() && b.empty()) return 100.0;
  return 100.0 * 2.0 * static_cast<double>(matched_chars(a, b)) / static_cast<double>(a.size() + b.size());
}

}  // namespace detail

/// Best score of `prediction` over the golds after normalization.
inline double qa_match(std::string_view prediction, std::span<const std::string> golds, QaMode mode) {
  if (golds.empty()) throw Error("qa_match: no gold answers");
  const auto p = normalize_answer(prediction);
  double best = 0.0;
  for (const auto& g : golds) {
    const auto gn = normalize_answer(g);
    double s = 0.0;
    switch (mode) {
      case QaMode::kExact: s = p == gn ? 1.0 : 0.0; break;
      case QaMode::kF1: s = detail::token_f1(p, gn); break;
      case QaMode::kFuzzy: s = detail::fuzzy_ratio(p, gn); break;
    }
    best = std::max(best, s);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Classification

inline constexpr const char* kInvalidLabel = "<INVALID>";

struct ClassificationScores {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

/// Predictions outside `labels` count as a reserved invalid label. Macro-F1
/// averages per-class F1 over `labels`; a class with no true positives
/// contributes 0.
inline ClassificationScores classification_scores(std::span<const std::string> predictions,
                                                  std::span<const std::string> golds,
                                                  std::span<const std::string> labels) {
  if (predictions.size() != golds.size()) {
    throw MismatchError("classification_scores: " + std::to_string(predictions.size()) + " predictions vs " +
                        std::to_string(golds.size()) + " golds");
  }
  if (golds.empty()) throw Error("classification_scores: empty input");
  if (labels.empty()) throw Error("classification_scores: empty label set");
  const std::set<std::string> label_set(labels.begin(), labels.end());
  std::map<std::string, double> tp, fp, fn;
  double correct = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    const std::string& pred = label_set.count(predictions[i]) ? predictions[i] : std::string(kInvalidLabel);
    if (pred == golds[i]) {
      ++correct;
      ++tp[pred];
    } else {
      ++fp[pred];
      ++fn[golds[i]];
    }
  }
  double f1_sum = 0.0;
  for (const auto& c : label_set) f1_sum += detail::prf(tp[c], tp[c] + fp[c], tp[c] + fn[c]).f1;
  return {correct / static_cast<double>(golds.size()), f1_sum / static_cast<double>(label_set.size())};
}

}  // namespace endow::metrics
