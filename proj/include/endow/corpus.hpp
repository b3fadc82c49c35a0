#pragma once

// Data model for spoken-language datasets and the on-disk variant store.
//
// Dataset files are UTF-8 JSON lines. Every record carries a "kind":
//
//   {"kind":"transcript","id":"court-04-1506",
//    "utterances":[{"speaker_id":"CHIEF JUSTICE ROBERTS","text":"..."}]}
//   {"kind":"summarization","transcript_id":"...","query":"...","summary":"..."}
//   {"kind":"question_answering","transcript_id":"...","question":"...",
//    "answers":["100","100 percent"]}
//   {"kind":"classification","transcript_id":"...","utterance_index":3,
//    "label":"Statement"}
//   {"kind":"label_set","labels":["Statement","Continuer",...]}
//
// Task records may carry an explicit "id"; otherwise one is derived as
// "<transcript_id>#<n>" with n counting that transcript's records in file order.

#include <algorithm>
#include <charconv>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "endow/error.hpp"
#include "endow/io.hpp"

namespace endow {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct Utterance {
  std::string speaker_id;
  std::string text;
  std::size_t index = 0;

  bool operator==(const Utterance&) const = default;
};

struct Transcript {
  std::string id;
  std::vector<Utterance> utterances;

  bool operator==(const Transcript&) const = default;
};

enum class TaskKind { kSummarization, kQuestionAnswering, kClassification };

inline std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kSummarization: return "summarization";
    case TaskKind::kQuestionAnswering: return "question_answering";
    case TaskKind::kClassification: return "classification";
  }
  return "unknown";
}

inline TaskKind parse_task_kind(const std::string& s) {
  if (s == "summarization") return TaskKind::kSummarization;
  if (s == "question_answering") return TaskKind::kQuestionAnswering;
  if (s == "classification") return TaskKind::kClassification;
  throw FormatError("unknown task kind '" + s + "'");
}

inline constexpr const char* kUnanswerable = "unanswerable";

struct TaskInstance {
  std::string id;
  std::string transcript_id;
  TaskKind kind = TaskKind::kSummarization;
  // summarization
  std::optional<std::string> query;
  std::optional<std::string> reference_summary;
  // question answering; answers may be the single value "unanswerable"
  std::optional<std::string> question;
  std::vector<std::string> answers;
  // classification
  std::optional<std::size_t> utterance_index;
  std::optional<std::string> gold_label;
};

/// Identifies one manufactured transcript set: noise level i and cleaning
/// technique j (j = 0 is "no cleaning"), or the reference set.
class VariantKey {
 public:
  constexpr VariantKey(int level, int cleaning) : level_(level), cleaning_(cleaning) {}

  static constexpr VariantKey ref() { return VariantKey(); }

  constexpr bool is_ref() const { return ref_; }
  constexpr int level() const { return level_; }
  constexpr int cleaning() const { return cleaning_; }

  /// "ref_0" or "<i>_<j>"; also the variant's directory name.
  std::string to_string() const {
    return ref_ ? std::string("ref_0") : std::to_string(level_) + "_" + std::to_string(cleaning_);
  }

  static VariantKey parse(const std::string& s) {
    if (s == "ref_0") return ref();
    const auto us = s.find('_');
    int i = -1, j = -1;
    if (us != std::string::npos) {
      auto r1 = std::from_chars(s.data(), s.data() + us, i);
      auto r2 = std::from_chars(s.data() + us + 1, s.data() + s.size(), j);
      if (r1.ec == std::errc() && r1.ptr == s.data() + us && r2.ec == std::errc() &&
          r2.ptr == s.data() + s.size() && i >= 0 && j >= 0) {
        return VariantKey(i, j);
      }
    }
    throw FormatError("malformed variant key '" + s + "'");
  }

  // REF sorts first, then (level, cleaning) lexicographically.
  constexpr auto operator<=>(const VariantKey& o) const {
    if (ref_ != o.ref_) return ref_ ? std::strong_ordering::less : std::strong_ordering::greater;
    if (auto c = level_ <=> o.level_; c != 0) return c;
    return cleaning_ <=> o.cleaning_;
  }
  constexpr bool operator==(const VariantKey&) const = default;

 private:
  constexpr VariantKey() : ref_(true), level_(0), cleaning_(0) {}

  bool ref_ = false;
  int level_ = 0;
  int cleaning_ = 0;
};

struct Dataset {
  TaskKind kind = TaskKind::kSummarization;
  std::vector<Transcript> transcripts;   // sorted by id
  std::vector<TaskInstance> instances;   // grouped by transcript id, file order within
  std::vector<std::string> label_set;    // classification only

  const Transcript& transcript(const std::string& id) const {
    auto it = std::lower_bound(transcripts.begin(), transcripts.end(), id,
                               [](const Transcript& t, const std::string& v) { return t.id < v; });
    if (it == transcripts.end() || it->id != id) {
      throw NotFoundError("unknown transcript '" + id + "'");
    }
    return *it;
  }
};

/// Keeps only classification instances among the first `first` and last
/// `last` utterances of their transcript.
struct UtteranceSubset {
  std::size_t first = 50;
  std::size_t last = 50;
};

struct IngestOptions {
  std::optional<UtteranceSubset> classification_subset;
};

// ---------------------------------------------------------------------------
// JSON conversions

inline json transcript_to_json(const Transcript& t) {
  json utts = json::array();
  for (const auto& u : t.utterances) {
    utts.push_back({{"index", u.index}, {"speaker_id", u.speaker_id}, {"text", u.text}});
  }
  return {{"id", t.id}, {"utterances", std::move(utts)}};
}

inline Transcript transcript_from_json(const json& j) {
  Transcript t;
  t.id = j.at("id").get<std::string>();
  const auto& utts = j.at("utterances");
  if (!utts.is_array()) throw FormatError("'utterances' must be an array");
  for (std::size_t n = 0; n < utts.size(); ++n) {
    const auto& u = utts[n];
    Utterance utt;
    utt.speaker_id = u.value("speaker_id", std::string());
    utt.text = u.at("text").get<std::string>();
    utt.index = u.value("index", n);
    if (utt.index != n) {
      throw FormatError("transcript '" + t.id + "': utterance indices must be contiguous from 0");
    }
    t.utterances.push_back(std::move(utt));
  }
  return t;
}

inline std::string transcripts_to_jsonl(const std::vector<Transcript>& ts) {
  std::string out;
  for (const auto& t : ts) {
    out += transcript_to_json(t).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<Transcript> transcripts_from_jsonl(const std::string& content,
                                                      const std::string& origin) {
  std::vector<Transcript> out;
  std::size_t line_no = 0, pos = 0;
  while (pos < content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string::npos) nl = content.size();
    std::string line = content.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(transcript_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ingestion

namespace detail {

inline std::string required_string(const json& rec, const char* field) {
  auto it = rec.find(field);
  if (it == rec.end() || !it->is_string()) {
    throw FormatError(std::string("missing string field '") + field + "'");
  }
  return it->get<std::string>();
}

}  // namespace detail

inline Dataset ingest_dataset(const fs::path& path, TaskKind kind, const IngestOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());

  Dataset ds;
  ds.kind = kind;
  std::map<std::string, Transcript> transcripts;
  // (transcript id, file-order position, line number, instance)
  struct Pending {
    std::size_t line;
    TaskInstance inst;
  };
  std::vector<Pending> pending;
  std::map<std::string, std::size_t> per_transcript_count;

  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) -> FormatError {
    return FormatError(path.string() + ":" + std::to_string(line_no) + ": " + msg);
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw fail(std::string("malformed record: ") + e.what());
    }
    try {
      if (!rec.is_object()) throw FormatError("record is not an object");
      const std::string rkind = detail::required_string(rec, "kind");
      if (rkind == "transcript") {
        Transcript t = transcript_from_json(rec);
        if (t.utterances.empty()) throw FormatError("transcript '" + t.id + "' has no utterances");
        if (transcripts.count(t.id)) throw FormatError("duplicate transcript id '" + t.id + "'");
        transcripts.emplace(t.id, std::move(t));
        continue;
      }
      if (rkind == "label_set") {
        if (kind != TaskKind::kClassification) throw FormatError("label_set outside classification dataset");
        ds.label_set = rec.at("labels").get<std::vector<std::string>>();
        continue;
      }
      const TaskKind ik = parse_task_kind(rkind);
      if (ik != kind) {
        throw FormatError("record kind '" + rkind + "' in a " + to_string(kind) + " dataset");
      }
      TaskInstance inst;
      inst.kind = ik;
      inst.transcript_id = detail::required_string(rec, "transcript_id");
      switch (ik) {
        case TaskKind::kSummarization:
          inst.query = rec.value("query", std::string("Summarize the whole meeting."));
          inst.reference_summary = detail::required_string(rec, "summary");
          break;
        case TaskKind::kQuestionAnswering:
          inst.question = detail::required_string(rec, "question");
          inst.answers = rec.at("answers").get<std::vector<std::string>>();
          if (inst.answers.empty()) throw FormatError("question has no gold answers");
          break;
        case TaskKind::kClassification:
          inst.utterance_index = rec.at("utterance_index").get<std::size_t>();
          inst.gold_label = detail::required_string(rec, "label");
          break;
      }
      const std::size_t n = per_transcript_count[inst.transcript_id]++;
      inst.id = rec.contains("id") ? rec["id"].get<std::string>()
                                   : inst.transcript_id + "#" + std::to_string(n);
      pending.push_back({line_no, std::move(inst)});
    } catch (const json::exception& e) {
      throw fail(e.what());
    } catch (const FormatError& e) {
      throw fail(e.what());
    }
  }

  std::set<std::string> seen_ids;
  for (auto& p : pending) {
    line_no = p.line;
    auto it = transcripts.find(p.inst.transcript_id);
    if (it == transcripts.end()) {
      throw fail("instance references unknown transcript '" + p.inst.transcript_id + "'");
    }
    if (p.inst.utterance_index && *p.inst.utterance_index >= it->second.utterances.size()) {
      throw fail("utterance_index out of range for transcript '" + p.inst.transcript_id + "'");
    }
    if (!seen_ids.insert(p.inst.id).second) throw fail("duplicate instance id '" + p.inst.id + "'");
  }

  for (auto& [id, t] : transcripts) ds.transcripts.push_back(std::move(t));
  for (auto& p : pending) ds.instances.push_back(std::move(p.inst));
  std::stable_sort(ds.instances.begin(), ds.instances.end(),
                   [](const TaskInstance& a, const TaskInstance& b) {
                     return a.transcript_id < b.transcript_id;
                   });

  if (kind == TaskKind::kClassification) {
    if (opts.classification_subset) {
      const auto& sub = *opts.classification_subset;
      std::erase_if(ds.instances, [&](const TaskInstance& inst) {
        const std::size_t size = ds.transcript(inst.transcript_id).utterances.size();
        const std::size_t idx = *inst.utterance_index;
        return !(idx < sub.first || idx + sub.last >= size);
      });
    }
    if (ds.label_set.empty()) {
      std::set<std::string> labels;
      for (const auto& inst : ds.instances) labels.insert(*inst.gold_label);
      ds.label_set.assign(labels.begin(), labels.end());
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Variant matrix

/// REF followed by every (i, j) with i in [0, k], j in [0, m].
inline std::vector<VariantKey> enumerate_variants(int k, int m) {
  if (k < 0 || m < 0) throw ConfigError("k and m must be non-negative");
  std::vector<VariantKey> keys;
  keys.reserve(1 + static_cast<std::size_t>(k + 1) * static_cast<std::size_t>(m + 1));
  keys.push_back(VariantKey::ref());
  for (int i = 0; i <= k; ++i) {
    for (int j = 0; j <= m; ++j) keys.emplace_back(i, j);
  }
  return keys;
}

/// Persists transcript sets under `<run_dir>/variants/<key>/transcripts.jsonl`.
/// Writes to one key are serialized; distinct keys proceed concurrently.
class VariantStore {
 public:
  explicit VariantStore(fs::path run_dir) : run_dir_(std::move(run_dir)) {}

  fs::path variant_dir(const VariantKey& key) const { return run_dir_ / "variants" / key.to_string(); }
  fs::path transcripts_path(const VariantKey& key) const { return variant_dir(key) / "transcripts.jsonl"; }

  fs::path store(const VariantKey& key, const std::vector<Transcript>& transcripts) {
    const auto path = transcripts_path(key);
    std::lock_guard lock(mutex_for(key));
    io::write_file_atomic(path, transcripts_to_jsonl(transcripts));
    return path;
  }

  std::vector<Transcript> load(const VariantKey& key) const {
    const auto path = transcripts_path(key);
    if (!fs::exists(path)) throw NotFoundError("variant " + key.to_string() + " not found in store");
    return transcripts_from_jsonl(io::read_file(path), path.string());
  }

  bool contains(const VariantKey& key) const { return fs::exists(transcripts_path(key)); }

  const fs::path& run_dir() const { return run_dir_; }

 private:
  std::mutex& mutex_for(const VariantKey& key) {
    std::lock_guard lock(map_mutex_);
    return locks_[key.to_string()];
  }

  fs::path run_dir_;
  std::mutex map_mutex_;
  std::map<std::string, std::mutex> locks_;
};

}  // namespace endow
