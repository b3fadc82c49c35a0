#pragma once

// Alignment-guided repair of a noisy transcript toward its reference,
// restricted to errors that touch one word class.

#include <algorithm>
#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "endow/alignment.hpp"
#include "endow/annotate.hpp"
#include "endow/corpus.hpp"
#include "endow/error.hpp"

namespace endow {

enum class CleaningTechnique { kNouns, kVerbs, kAdjectives, kAdverbs, kContent, kNonContent, kNamedEntities };

inline constexpr std::array<CleaningTechnique, 7> kAllTechniques = {
    CleaningTechnique::kNouns,   CleaningTechnique::kVerbs,      CleaningTechnique::kAdjectives,
    CleaningTechnique::kAdverbs, CleaningTechnique::kContent,    CleaningTechnique::kNonContent,
    CleaningTechnique::kNamedEntities};

inline const char* to_string(CleaningTechnique t) {
  switch (t) {
    case CleaningTechnique::kNouns: return "NOUNS";
    case CleaningTechnique::kVerbs: return "VERBS";
    case CleaningTechnique::kAdjectives: return "ADJECTIVES";
    case CleaningTechnique::kAdverbs: return "ADVERBS";
    case CleaningTechnique::kContent: return "CONTENT";
    case CleaningTechnique::kNonContent: return "NON_CONTENT";
    case CleaningTechnique::kNamedEntities: return "NAMED_ENTITIES";
  }
  return "?";
}

inline CleaningTechnique parse_technique(std::string_view s) {
  for (auto t : kAllTechniques)
    if (s == to_string(t)) return t;
  throw ConfigError("unknown cleaning technique '" + std::string(s) + "'");
}

inline bool in_class(const AnnotatedToken& t, CleaningTechnique technique) {
  switch (technique) {
    case CleaningTechnique::kNouns: return t.pos == Pos::kNoun;
    case CleaningTechnique::kVerbs: return t.pos == Pos::kVerb;
    case CleaningTechnique::kAdjectives: return t.pos == Pos::kAdj;
    case CleaningTechnique::kAdverbs: return t.pos == Pos::kAdv;
    case CleaningTechnique::kContent: return t.pos != Pos::kOther;
    case CleaningTechnique::kNonContent: return t.pos == Pos::kOther;
    case CleaningTechnique::kNamedEntities: return t.ne;
  }
  return false;
}

struct CleanOptions {
  std::size_t chunk_size = 20;
  AlignOptions align;
};

namespace detail {

struct StreamToken {
  const AnnotatedToken* token;
  std::size_t utterance;  // index into the transcript's utterance list
};

inline std::vector<StreamToken> flatten(std::span<const AnnotatedUtterance> ann, std::size_t first, std::size_t last) {
  std::vector<StreamToken> out;
  for (std::size_t u = first; u < last; ++u)
    for (const auto& t : ann[u]) out.push_back({&t, u});
  return out;
}

inline std::vector<std::string> stream_texts(const std::vector<StreamToken>& s) {
  std::vector<std::string> out;
  out.reserve(s.size());
  for (const auto& t : s) out.push_back(t.token->token.text);
  return out;
}

inline std::vector<std::string> annotated_texts(const AnnotatedUtterance& u) {
  std::vector<std::string> out;
  for (const auto& t : u) out.push_back(t.token.text);
  return out;
}

}  // namespace detail

/// Each chunk of `chunk_size` utterances is flattened on both sides and
/// aligned. Every SUB/DEL/INS whose reference-side or hypothesis-side token
/// falls in the target class is replaced by its reference side (SUB takes
/// the reference token, DEL restores it, INS is dropped); everything else
/// keeps the noisy side. Surviving tokens go back to the utterance of their
/// reference token; insertions stay with their noisy utterance, kept between
/// the utterances of the surrounding reference-anchored tokens. Utterances
/// whose tokens come out unchanged keep their original text verbatim.
inline Transcript clean(const Transcript& reference, const Transcript& noisy,
                        std::span<const AnnotatedUtterance> ref_ann, std::span<const AnnotatedUtterance> noisy_ann,
                        CleaningTechnique technique, const CleanOptions& opts = {}) {
  const std::size_t n = reference.utterances.size();
  if (noisy.utterances.size() != n) {
    throw MismatchError("clean: transcript '" + reference.id + "' has " + std::to_string(n) +
                        " reference utterances but " + std::to_string(noisy.utterances.size()) + " noisy ones");
  }
  if (ref_ann.size() != n || noisy_ann.size() != n) {
    throw MismatchError("clean: annotation count does not match utterance count for '" + reference.id + "'");
  }
  if (opts.chunk_size == 0) throw ConfigError("chunk_size must be at least 1");

  std::vector<std::vector<std::string>> out_tokens(n);
  for (std::size_t first = 0; first < n; first += opts.chunk_size) {
    const std::size_t last = std::min(n, first + opts.chunk_size);
    const auto rs = detail::flatten(ref_ann, first, last);
    const auto hs = detail::flatten(noisy_ann, first, last);
    const auto rt = detail::stream_texts(rs);
    const auto ht = detail::stream_texts(hs);
    const auto res = align(std::span<const std::string>(rt), std::span<const std::string>(ht), opts.align);

    // For each op, the utterance of the next op that carries a reference
    // token (upper bound for insertions).
    std::vector<std::size_t> next_anchor(res.ops.size() + 1, last - 1);
    for (std::size_t k = res.ops.size(); k-- > 0;) {
      const auto& op = res.ops[k];
      next_anchor[k] = op.type == EditType::kIns ? next_anchor[k + 1] : rs[op.ref_begin].utterance;
    }

    std::size_t prev_anchor = first;
    for (std::size_t k = 0; k < res.ops.size(); ++k) {
      const auto& op = res.ops[k];
      const detail::StreamToken* r = op.ref_end > op.ref_begin ? &rs[op.ref_begin] : nullptr;
      const detail::StreamToken* h = op.hyp_end > op.hyp_begin ? &hs[op.hyp_begin] : nullptr;
      const bool repair = op.type != EditType::kHit && ((r && in_class(*r->token, technique)) ||
                                                        (h && in_class(*h->token, technique)));
      switch (op.type) {
        case EditType::kHit:
          out_tokens[r->utterance].push_back(h->token->token.text);
          break;
        case EditType::kSub:
          out_tokens[r->utterance].push_back(repair ? r->token->token.text : h->token->token.text);
          break;
        case EditType::kDel:
          if (repair) out_tokens[r->utterance].push_back(r->token->token.text);
          break;
        case EditType::kIns:
          if (!repair) {
            const std::size_t u = std::clamp(h->utterance, prev_anchor, std::max(prev_anchor, next_anchor[k + 1]));
            out_tokens[u].push_back(h->token->token.text);
          }
          break;
      }
      if (r) prev_anchor = r->utterance;
    }
  }

  Transcript out{noisy.id, noisy.utterances};
  for (std::size_t u = 0; u < n; ++u) {
    if (out_tokens[u] == detail::annotated_texts(noisy_ann[u])) continue;
    if (out_tokens[u] == detail::annotated_texts(ref_ann[u])) {
      out.utterances[u].text = reference.utterances[u].text;
      continue;
    }
    std::string text;
    for (const auto& t : out_tokens[u]) {
      if (!text.empty()) text.push_back(' ');
      text += t;
    }
    out.utterances[u].text = std::move(text);
  }
  return out;
}

/// Annotates both sides with `provider` and cleans. `noisy_variant` names the
/// noisy transcript's variant key for sidecar lookups.
inline Transcript clean(const Transcript& reference, const Transcript& noisy, CleaningTechnique technique,
                        const AnnotationProvider& provider, const std::string& noisy_variant,
                        const CleanOptions& opts = {}) {
  const auto ra = annotate(reference.utterances, provider, {reference.id, "ref_0"});
  const auto na = annotate(noisy.utterances, provider, {noisy.id, noisy_variant});
  return clean(reference, noisy, ra, na, technique, opts);
}

}  // namespace endow
