#pragma once

// Word-class annotation of tokenized utterances. Two providers ship here: a
// small deterministic lexicon tagger, and a sidecar reader for tags produced
// offline by an external tagger.
//
// Sidecar files are JSON lines, one record per utterance:
//
//   {"transcript_id":"t1","utterance_index":0,"variant":"2_0",
//    "tokens":[{"text":"John","pos":"NOUN","ne":true}, ...]}
//
// "variant" is the variant key the utterance text came from ("ref_0" for the
// reference). Token order must follow the tokenizer in alignment.hpp.

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "endow/alignment.hpp"
#include "endow/corpus.hpp"
#include "endow/error.hpp"
#include "endow/io.hpp"

namespace endow {

enum class Pos : std::uint8_t { kNoun, kVerb, kAdj, kAdv, kOther };

inline const char* to_string(Pos p) {
  switch (p) {
    case Pos::kNoun: return "NOUN";
    case Pos::kVerb: return "VERB";
    case Pos::kAdj: return "ADJ";
    case Pos::kAdv: return "ADV";
    case Pos::kOther: return "OTHER";
  }
  return "?";
}

/// Accepts the five coarse tags plus the Universal POS tags that fold into
/// them (PROPN -> NOUN; everything else not listed -> OTHER).
inline Pos parse_pos(std::string_view s) {
  if (s == "NOUN" || s == "PROPN") return Pos::kNoun;
  if (s == "VERB") return Pos::kVerb;
  if (s == "ADJ") return Pos::kAdj;
  if (s == "ADV") return Pos::kAdv;
  return Pos::kOther;
}

struct AnnotatedToken {
  Token token;
  Pos pos = Pos::kOther;
  bool ne = false;

  bool operator==(const AnnotatedToken&) const = default;
};

using AnnotatedUtterance = std::vector<AnnotatedToken>;

/// Where an utterance came from; sidecar lookups key on all three.
struct AnnotationContext {
  std::string transcript_id;
  std::string variant = "ref_0";
};

class AnnotationProvider {
 public:
  virtual ~AnnotationProvider() = default;
  virtual AnnotatedUtterance annotate(const Utterance& utterance, const AnnotationContext& ctx) const = 0;
};

/// Annotates every utterance; provider errors are rethrown with the
/// utterance's position attached.
inline std::vector<AnnotatedUtterance> annotate(std::span<const Utterance> utterances,
                                                const AnnotationProvider& provider,
                                                const AnnotationContext& ctx) {
  std::vector<AnnotatedUtterance> out;
  out.reserve(utterances.size());
  for (const auto& u : utterances) {
    try {
      out.push_back(provider.annotate(u, ctx));
    } catch (const Error& e) {
      throw Error("annotating " + ctx.transcript_id + " [" + ctx.variant + "] utterance " +
                  std::to_string(u.index) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lexicon tagger

/// Lookup order: explicit lexicon entry (lower-cased), punctuation/number,
/// closed-class function word, suffix heuristic, otherwise NOUN. A token is
/// NE when listed as an entity or when it is capitalized and does not open a
/// sentence; such unlisted capitalized words tag as NOUN.
class LexiconTagger final : public AnnotationProvider {
 public:
  LexiconTagger() : LexiconTagger(builtin_entries(), {}) {}
  LexiconTagger(std::unordered_map<std::string, Pos> entries, std::unordered_set<std::string> entities)
      : entries_(std::move(entries)), entities_(std::move(entities)) {}

  void add(const std::string& word, Pos pos) { entries_[detail::fold_apostrophes(word)] = pos; }
  void add_entity(const std::string& word) { entities_.insert(word); }
  /// Turns the capitalization heuristic off, leaving tags context-free.
  void set_capitalized_entities(bool on) { capitalized_entities_ = on; }

  Pos tag_word(std::string_view word) const {
    const auto key = detail::fold_apostrophes(word);
    if (auto it = entries_.find(key); it != entries_.end()) return it->second;
    if (!has_alpha(word)) return Pos::kOther;
    if (function_words().count(key)) return Pos::kOther;
    return by_suffix(key);
  }

  AnnotatedUtterance annotate(const Utterance& utterance, const AnnotationContext&) const override {
    AnnotatedUtterance out;
    const auto tokens = tokenize(utterance.text);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const auto& t = tokens[i];
      AnnotatedToken a{t, tag_word(t.text), entities_.count(t.text) > 0};
      const bool listed = entries_.count(detail::fold_apostrophes(t.text)) > 0;
      const bool sentence_start = i == 0 || tokens[i - 1].text.find_first_of(".!?") != std::string::npos;
      if (capitalized_entities_ && !a.ne && !sentence_start && is_capitalized(t.text) && !listed && t.text != "I" &&
          !function_words().count(detail::fold_apostrophes(t.text))) {
        a.ne = true;
      }
      if (a.ne && !listed) a.pos = Pos::kNoun;
      out.push_back(std::move(a));
    }
    return out;
  }

 private:
  static bool has_alpha(std::string_view w) {
    for (char c : w)
      if (std::isalpha(static_cast<unsigned char>(c))) return true;
    return false;
  }

  static bool is_capitalized(std::string_view w) {
    return !w.empty() && std::isupper(static_cast<unsigned char>(w.front()));
  }

  static bool ends_with(std::string_view s, std::string_view suf) {
    return s.size() > suf.size() + 1 && s.substr(s.size() - suf.size()) == suf;
  }

  static Pos by_suffix(std::string_view w) {
    if (ends_with(w, "ly")) return Pos::kAdv;
    for (auto suf : {"ing", "ed", "ize", "ise", "ify"})
      if (ends_with(w, suf)) return Pos::kVerb;
    for (auto suf : {"ous", "ful", "able", "ible", "ive", "less", "ic", "ical", "al", "ish"})
      if (ends_with(w, suf)) return Pos::kAdj;
    return Pos::kNoun;
  }

  static const std::unordered_set<std::string>& function_words() {
    static const std::unordered_set<std::string> words = {
        // determiners, pronouns
        "a", "an", "the", "this", "that", "these", "those", "some", "any", "each", "every", "no", "all", "both",
        "either", "neither", "i", "you", "he", "she", "it", "we", "they", "me", "him", "her", "us", "them", "my",
        "your", "his", "its", "our", "their", "mine", "yours", "ours", "theirs", "myself", "yourself", "itself",
        "ourselves", "themselves", "who", "whom", "whose", "which", "what", "whatever", "someone", "something",
        "anyone", "anything", "everyone", "everything", "nobody", "nothing",
        // prepositions, conjunctions, particles
        "of", "in", "on", "at", "by", "for", "with", "about", "against", "between", "into", "through", "during",
        "before", "after", "above", "below", "to", "from", "up", "down", "out", "off", "over", "under", "as",
        "than", "and", "or", "but", "nor", "so", "yet", "if", "because", "while", "although", "though", "unless",
        "until", "whether", "not", "n't", "'s", "'re", "'ve", "'ll", "'d", "'m", "there", "here", "when",
        "where", "why", "how",
        // auxiliaries and modals
        "be", "am", "is", "are", "was", "were", "been", "being", "have", "has", "had", "having", "do", "does",
        "did", "will", "would", "shall", "should", "can", "could", "may", "might", "must", "ca", "wo",
        // interjections and fillers
        "oh", "uh", "um", "mm", "hmm", "yeah", "yes", "okay", "ok", "well", "like"};
    return words;
  }

  static std::unordered_map<std::string, Pos> builtin_entries() {
    std::unordered_map<std::string, Pos> m;
    for (auto w : {"see",   "seen",  "saw",   "go",     "went",   "gone",  "say",   "said",   "says",  "know",
                   "knew",  "think", "thought", "drop", "drops",  "hear",  "heard", "get",    "got",   "make",
                   "made",  "take",  "took", "come",    "came",   "give",  "gave",  "want",   "need",  "find",
                   "found", "tell",  "told", "ask",     "work",   "seem",  "feel",  "try",    "leave", "left",
                   "call",  "keep",  "let",  "begin",   "show",   "hold",  "bring", "write",  "sit",   "sat",
                   "stand", "run",   "ran",  "pay",     "paid",   "meet",  "mean",  "move",   "live",  "believe",
                   "happen", "agree", "argue", "decide", "put", "set", "read", "speak", "spoke", "stop", "start"})
      m.emplace(w, Pos::kVerb);
    for (auto w : {"few",  "new",   "good",  "great", "big",   "small", "old",  "young", "long",  "short",
                   "high", "low",   "large", "little", "important", "different", "same", "other", "last",
                   "first", "next", "early", "late",  "right", "wrong",  "true", "false", "able",  "clear",
                   "whole", "real", "best",  "better", "bad",  "free",  "full", "sure", "hard",  "easy",
                   "many", "much",  "more",  "most",  "several", "own"})
      m.emplace(w, Pos::kAdj);
    for (auto w : {"certainly", "very", "really", "just", "also", "only", "still", "already", "always", "never",
                   "often", "again", "now", "then", "too", "even", "perhaps", "maybe", "quite", "rather",
                   "almost", "soon", "today", "together", "actually", "probably", "indeed"})
      m.emplace(w, Pos::kAdv);
    for (auto w : {"penny", "week", "weeks", "month", "months", "employer", "employers", "lawyer", "lawyers",
                   "song", "songs", "court", "state", "meeting", "time", "year", "years", "day", "people",
                   "way", "thing", "things", "case", "question", "money", "argument", "morning", "design",
                   "product", "cost", "costs", "percent", "cat", "mat", "home", "dog"})
      m.emplace(w, Pos::kNoun);
    return m;
  }

  std::unordered_map<std::string, Pos> entries_;
  std::unordered_set<std::string> entities_;
  bool capitalized_entities_ = true;
};

// ---------------------------------------------------------------------------
// Sidecar provider

class SidecarProvider final : public AnnotationProvider {
 public:
  explicit SidecarProvider(const std::filesystem::path& path) : path_(path.string()) {
    const auto content = io::read_file(path);
    std::size_t line_no = 0, pos = 0;
    while (pos < content.size()) {
      auto nl = content.find('\n', pos);
      if (nl == std::string::npos) nl = content.size();
      const auto line = std::string_view(content).substr(pos, nl - pos);
      pos = nl + 1;
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
      const auto where = path_ + ":" + std::to_string(line_no) + ": ";
      try {
        const auto rec = nlohmann::json::parse(line);
        Key key{rec.at("transcript_id").get<std::string>(), rec.at("utterance_index").get<std::size_t>(),
                rec.at("variant").get<std::string>()};
        std::vector<Entry> tokens;
        for (const auto& t : rec.at("tokens")) {
          tokens.push_back({t.at("text").get<std::string>(), parse_pos(t.at("pos").get<std::string>()),
                            t.value("ne", false)});
        }
        if (!records_.emplace(std::move(key), std::move(tokens)).second) throw FormatError("duplicate record");
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(where + e.what());
      } catch (const FormatError& e) {
        throw FormatError(where + e.what());
      }
    }
  }

  AnnotatedUtterance annotate(const Utterance& utterance, const AnnotationContext& ctx) const override {
    const auto it = records_.find(Key{ctx.transcript_id, utterance.index, ctx.variant});
    if (it == records_.end()) {
      throw NotFoundError(path_ + ": no annotation for " + ctx.transcript_id + " utterance " +
                          std::to_string(utterance.index) + " variant " + ctx.variant);
    }
    const auto tokens = tokenize(utterance.text);
    if (tokens.size() != it->second.size()) {
      throw FormatError(path_ + ": " + ctx.transcript_id + " utterance " + std::to_string(utterance.index) +
                        " variant " + ctx.variant + " has " + std::to_string(tokens.size()) +
                        " tokens but the sidecar lists " + std::to_string(it->second.size()));
    }
    AnnotatedUtterance out;
    for (std::size_t i = 0; i < tokens.size(); ++i) out.push_back({tokens[i], it->second[i].pos, it->second[i].ne});
    return out;
  }

 private:
  using Key = std::tuple<std::string, std::size_t, std::string>;
  struct Entry {
    std::string text;
    Pos pos;
    bool ne;
  };
  std::string path_;
  std::map<Key, std::vector<Entry>> records_;
};

}  // namespace endow
