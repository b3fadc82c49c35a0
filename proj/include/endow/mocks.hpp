#pragma once

// Built-in mock adapters. They stand in for the TTS, ASR, task and judge
// models so the whole pipeline runs without any model, and they are what the
// `endow_mock_adapter` executable serves over the line protocol.

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "endow/adapters.hpp"
#include "endow/alignment.hpp"
#include "endow/audio.hpp"
#include "endow/corpus.hpp"
#include "endow/metrics.hpp"
#include "endow/random.hpp"
#include "endow/tournament.hpp"
#include "endow/wav.hpp"

namespace endow::mocks {

using adapters::json;

// ---------------------------------------------------------------------------
// Corrupting ASR

/// Substitutes are drawn from here. Words deliberately look like plausible
/// mis-hearings but rarely coincide with real transcript tokens.
inline const std::vector<std::string>& confusion_lexicon() {
  static const std::vector<std::string> words{
      "uh",    "um",     "the",   "a",     "and",   "in",    "on",    "to",    "of",     "that",
      "this",  "there",  "their", "they're", "know", "no",   "new",   "knew",  "right", "write",
      "white", "wait",   "weight", "way",  "week",  "weak",  "here",  "hear",  "her",   "hair",
      "for",   "four",   "fore",  "two",   "too",   "then",  "than",  "them",  "seen",  "scene",
      "sea",   "see",    "sent",  "cent",  "meet",  "meat",  "mail",  "male",  "bear",  "bare"};
  return words;
}

enum class MockEdit : std::uint8_t { kNone, kSub, kDel, kIns };

struct Corruption {
  std::string text;
  std::vector<MockEdit> schedule;  // one entry per input token
  std::size_t substitutions = 0, deletions = 0, insertions = 0;

  std::size_t edits() const { return substitutions + deletions + insertions; }
};

/// Each input token is edited with probability `rate`, the edit chosen
/// uniformly among substitute / delete / insert-after. Every token consumes
/// the same three draws whatever the rate, so for a fixed seed the set of
/// edited tokens only grows with the rate (coupled schedules).
inline Corruption corrupting_asr_mock(std::string_view text, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("corruption rate must lie in [0, 1]");
  const auto& lex = confusion_lexicon();
  const auto tokens = token_texts(tokenize(text));
  Rng rng(seed);
  Corruption c;
  std::vector<std::string> out;
  out.reserve(tokens.size() + tokens.size() / 4);
  for (const auto& tok : tokens) {
    const double u = unit_uniform(rng);
    const auto op = uniform_index(rng, 3);
    auto w = uniform_index(rng, lex.size());
    if (!(u < rate)) {
      c.schedule.push_back(MockEdit::kNone);
      out.push_back(tok);
      continue;
    }
    switch (op) {
      case 0: {
        const auto folded = detail::ascii_lower(detail::fold_apostrophes(tok));
        while (lex[w] == folded) w = (w + 1) % lex.size();
        out.push_back(lex[w]);
        c.schedule.push_back(MockEdit::kSub);
        ++c.substitutions;
        break;
      }
      case 1:
        c.schedule.push_back(MockEdit::kDel);
        ++c.deletions;
        break;
      default:
        out.push_back(tok);
        out.push_back(lex[w]);
        c.schedule.push_back(MockEdit::kIns);
        ++c.insertions;
        break;
    }
  }
  if (c.edits() == 0) {
    c.text = std::string(text);  // untouched input keeps its formatting
    return c;
  }
  for (const auto& t : out) {
    if (!c.text.empty()) c.text.push_back(' ');
    c.text += t;
  }
  return c;
}

// ---------------------------------------------------------------------------
// TTS / ASR over an audio manifest

/// What the mock TTS knows about the files it produced, and what the mock
/// ASR consults to "recognize" them. Noisy renditions are registered against
/// the clean file they were derived from.
class AudioManifest {
 public:
  struct Entry {
    std::string text;
    std::string clean_path;  // equal to the key for clean TTS output
  };

  void add(const std::string& path, Entry e) {
    std::unique_lock lock(mu_);
    entries_[path] = std::move(e);
  }

  void add_derived(const std::string& path, const std::string& clean_path) {
    std::unique_lock lock(mu_);
    auto it = entries_.find(clean_path);
    if (it == entries_.end()) throw NotFoundError("audio manifest: no entry for " + clean_path);
    entries_[path] = Entry{it->second.text, clean_path};
  }

  Entry at(const std::string& path) const {
    std::shared_lock lock(mu_);
    auto it = entries_.find(path);
    if (it == entries_.end()) throw NotFoundError("audio manifest: no entry for " + path);
    return it->second;
  }

  json to_json() const {
    std::shared_lock lock(mu_);
    json j = json::object();
    for (const auto& [k, e] : entries_) j[k] = {{"text", e.text}, {"clean_path", e.clean_path}};
    return j;
  }

  void load(const json& j) {
    std::unique_lock lock(mu_);
    for (const auto& [k, v] : j.items()) entries_[k] = Entry{v.at("text"), v.at("clean_path")};
  }

 private:
  mutable std::shared_mutex mu_;
  std::map<std::string, Entry> entries_;
};

/// A short deterministic tone per token (frequency from the token's hash),
/// separated by silences. Content-free but correlated with the text.
inline audio::Signal synthesize_tones(std::string_view text, int sample_rate = audio::kDefaultSampleRate) {
  audio::Signal sig;
  sig.sample_rate = sample_rate;
  const auto tok_len = static_cast<std::size_t>(0.08 * sample_rate);
  const auto gap = static_cast<std::size_t>(0.02 * sample_rate);
  for (const auto& tok : token_texts(tokenize(text))) {
    const double f = 150.0 + static_cast<double>(fnv1a(tok) % 700);
    for (std::size_t n = 0; n < tok_len; ++n) {
      const double env = std::sin(std::numbers::pi * static_cast<double>(n) / static_cast<double>(tok_len));
      sig.samples.push_back(0.5 * env * std::sin(2 * std::numbers::pi * f * static_cast<double>(n) / sample_rate));
    }
    sig.samples.insert(sig.samples.end(), gap, 0.0);
  }
  if (sig.samples.empty()) sig.samples.assign(gap, 0.0);
  return sig;
}

/// Pearson correlation over the common prefix.
inline double correlation(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = std::min(a.size(), b.size());
  if (n == 0) return 0.0;
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

/// Frame-wise mean power.
inline std::vector<double> power_envelope(std::span<const double> x, std::size_t frame) {
  std::vector<double> env;
  for (std::size_t i = 0; i + frame <= x.size(); i += frame) {
    double e = 0;
    for (std::size_t j = i; j < i + frame; ++j) e += x[j] * x[j];
    env.push_back(e / static_cast<double>(frame));
  }
  return env;
}

/// Fits noisy ~ a * clean + b over power envelopes and returns the share of
/// noisy power carried by the intercept, i.e. energy the clean envelope does
/// not explain: ~1/(1 + 10^(snr/10)) for stationary noise, moderate for
/// reverberant tails filling the gaps.
inline double unexplained_energy(std::span<const double> noisy, std::span<const double> clean) {
  const std::size_t n = std::min(noisy.size(), clean.size());
  if (n < 2) return 0.0;
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += clean[i];
    my += noisy[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  if (my <= 0) return 0.0;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (clean[i] - mx) * (noisy[i] - my);
    sxx += (clean[i] - mx) * (clean[i] - mx);
  }
  const double a = sxx > 0 ? std::max(0.0, sxy / sxx) : 0.0;
  return std::clamp((my - a * mx) / my, 0.0, 1.0);
}

inline json tts_mock(const adapters::Request& r, AudioManifest& manifest) {
  const auto text = r.payload.at("text").get<std::string>();
  const auto path = r.payload.at("output_path").get<std::string>();
  wav::write(path, synthesize_tones(text));
  manifest.add(path, {text, path});
  return {{"audio_path", path}};
}

inline json identity_asr_mock(const adapters::Request& r, const AudioManifest& manifest) {
  try {
    return {{"text", manifest.at(r.payload.at("audio_path").get<std::string>()).text}};
  } catch (const NotFoundError& e) {
    throw AdapterError(e.what());
  }
}

/// Corrupts the manifest text at the unexplained-energy share of 20 ms power
/// envelopes, so that more
/// reverberation and noise mean more recognition errors. The seed derives
/// from the clean file name, so the renditions of one utterance share a
/// coupled edit schedule.
inline json degrading_asr_mock(const adapters::Request& r, const AudioManifest& manifest, std::uint64_t seed) {
  const auto path = r.payload.at("audio_path").get<std::string>();
  AudioManifest::Entry e;
  try {
    e = manifest.at(path);
  } catch (const NotFoundError& ex) {
    throw AdapterError(ex.what());
  }
  double rate = 0.0;
  if (e.clean_path != path) {
    const auto noisy = wav::read(path), clean = wav::read(e.clean_path);
    const std::size_t frame = std::max<std::size_t>(1, clean.sample_rate / 50);
    rate = unexplained_energy(power_envelope(noisy.samples, frame), power_envelope(clean.samples, frame));
  }
  const auto name = std::filesystem::path(e.clean_path).filename().string();
  return {{"text", corrupting_asr_mock(e.text, rate, sub_seed(seed, "asr/" + name)).text}};
}

// ---------------------------------------------------------------------------
// Task models

inline std::string transcript_text(const json& transcript) {
  std::string out;
  for (const auto& u : transcript) {
    if (!out.empty()) out.push_back(' ');
    out += u.at("text").get<std::string>();
  }
  return out;
}

/// Summarization: the first `lead` tokens of the transcript.
/// QA: content words of the utterance overlapping the question most, minus
/// the question's own words, at most four; "unanswerable" without overlap.
/// Classification: a fixed hash of the target utterance's normalized tokens
/// picks the label, so any recognition error can change the prediction.
inline json task_mock(const adapters::Request& r, std::size_t lead = 30) {
  const auto& p = r.payload;
  const auto task = p.at("task").get<std::string>();
  const auto& tr = p.at("transcript");
  if (task == "summarization") {
    auto toks = token_texts(tokenize(transcript_text(tr)));
    if (toks.size() > lead) toks.resize(lead);
    std::string out;
    for (const auto& t : toks) out += (out.empty() ? "" : " ") + t;
    return {{"output", out}};
  }
  if (task == "question_answering") {
    auto norm = [](const std::string& s) {
      std::vector<std::string> v;
      for (const auto& t : tokenize(s))
        if (!detail::all_punct(t.text)) v.push_back(detail::ascii_lower(detail::fold_apostrophes(t.text)));
      return v;
    };
    static const std::set<std::string> stop{"the", "a", "an", "of", "to", "in", "on", "and", "is", "was", "what",
                                            "who", "when", "where", "which", "how", "why", "did", "does", "do"};
    const auto qv = norm(p.at("question").get<std::string>());
    const std::set<std::string> q(qv.begin(), qv.end());
    std::size_t best = 0;
    std::vector<std::string> best_words;
    for (const auto& u : tr) {
      const auto words = norm(u.at("text").get<std::string>());
      std::size_t overlap = 0;
      for (const auto& w : words) overlap += q.count(w) && !stop.count(w);
      if (overlap > best) {
        best = overlap;
        best_words = words;
      }
    }
    if (best == 0) return {{"output", kUnanswerable}};
    std::string out;
    std::size_t n = 0;
    for (const auto& w : best_words) {
      if (q.count(w) || stop.count(w)) continue;
      out += (out.empty() ? "" : " ") + w;
      if (++n == 4) break;
    }
    return {{"output", out.empty() ? std::string(kUnanswerable) : out}};
  }
  if (task == "classification") {
    const auto idx = p.at("utterance_index").get<std::size_t>();
    const auto& labels = p.at("labels");
    if (idx >= tr.size()) throw AdapterError("utterance_index out of range");
    if (labels.empty()) throw AdapterError("empty label set");
    std::string key;
    for (const auto& t : tokenize(tr.at(idx).at("text").get<std::string>()))
      if (!detail::all_punct(t.text)) key += detail::ascii_lower(t.text) + " ";
    return {{"output", labels.at(fnv1a(key) % labels.size())}};
  }
  throw AdapterError("unknown task '" + task + "'");
}

// ---------------------------------------------------------------------------
// Judges

/// Always "tie".
inline json tie_judge(const adapters::Request&) { return {{"verdict", "tie"}}; }

/// Prefers the candidate with the higher ROUGE-1 F1 against the reference;
/// equal scores (to 1e-12) are a tie.
inline json rouge_judge(const adapters::Request& r) {
  const auto ref = r.payload.at("reference").get<std::string>();
  const double a = metrics::rouge(r.payload.at("candidate_1").get<std::string>(), ref, metrics::RougeOrder::k1);
  const double b = metrics::rouge(r.payload.at("candidate_2").get<std::string>(), ref, metrics::RougeOrder::k1);
  if (std::abs(a - b) <= 1e-12) return {{"verdict", "tie"}};
  return {{"verdict", a > b ? "1" : "2"}};
}

/// Identical candidates tie; otherwise replays `script` in call order
/// (cycling), or prefers the lexicographically smaller text when empty.
class ScriptedJudge {
 public:
  explicit ScriptedJudge(std::vector<Verdict> script = {}) : script_(std::move(script)) {}

  json operator()(const adapters::Request& r) {
    const auto c1 = r.payload.at("candidate_1").get<std::string>();
    const auto c2 = r.payload.at("candidate_2").get<std::string>();
    if (c1 == c2) return {{"verdict", "tie"}};
    if (script_.empty()) return {{"verdict", c1 < c2 ? "1" : "2"}};
    std::lock_guard lock(mu_);
    return {{"verdict", to_string(script_[next_++ % script_.size()])}};
  }

 private:
  std::vector<Verdict> script_;
  std::mutex mu_;
  std::size_t next_ = 0;
};

// ---------------------------------------------------------------------------
// Registry

/// Mock names accepted in configs and by `endow_mock_adapter --mock`:
///   TTS: tones            ASR: identity, degrading
///   TASK: lead            JUDGE: tie, rouge, scripted
/// The manifest is shared between the TTS and ASR mocks of one process.
inline adapters::FunctionBackend::Fn make_mock(adapters::AdapterKind kind, const std::string& name,
                                               std::shared_ptr<AudioManifest> manifest, std::uint64_t seed = 0) {
  using adapters::AdapterKind;
  using adapters::Request;
  switch (kind) {
    case AdapterKind::kTts:
      if (name == "tones") return [manifest](const Request& r) { return tts_mock(r, *manifest); };
      break;
    case AdapterKind::kAsr:
      if (name == "identity") return [manifest](const Request& r) { return identity_asr_mock(r, *manifest); };
      if (name == "degrading")
        return [manifest, seed](const Request& r) { return degrading_asr_mock(r, *manifest, seed); };
      break;
    case AdapterKind::kTask:
      if (name == "lead") return [](const Request& r) { return task_mock(r); };
      break;
    case AdapterKind::kJudge:
      if (name == "tie") return tie_judge;
      if (name == "rouge") return rouge_judge;
      if (name == "scripted") {
        auto j = std::make_shared<ScriptedJudge>();
        return [j](const Request& r) { return (*j)(r); };
      }
      break;
  }
  throw ConfigError(std::string("no ") + adapters::to_string(kind) + " mock named '" + name + "'");
}

}  // namespace endow::mocks
