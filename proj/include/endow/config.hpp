#pragma once

// Run configuration: a JSON file, validated in full before any stage runs.
//
// {
//   "dataset": "data/toy/summarization.jsonl",   // relative to the config file
//   "task": "summarization",                      // or question_answering, classification
//   "seed": 7,
//   "output_dir": "runs/toy",                     // relative to the config file
//   "noise": {
//     "backend": "text",                          // in-core corruption, no TTS/ASR
//     "corruption_rates": [0, 0.1, 0.2, 0.4, 0.6, 0.8]   // level i uses rates[i]
//   },
//   "noise": {
//     "backend": "audio",                         // TTS -> reverb -> mix -> ASR
//     "snr_db": [10, 5, 0, -5, -10],              // level i >= 1 uses snr_db[i-1]
//     "reverberate_level0": false,
//     "backgrounds": ["noise/cafe.wav"],          // optional; seeded noise otherwise
//     "tts_max_tokens": 50
//   },
//   "techniques": ["NOUNS", "VERBS", ...],        // default: all seven
//   "chunk_size": 20,
//   "annotation": {"provider": "lexicon"},        // or {"provider": "sidecar", "path": ...}
//   "metrics": ["rouge1", "rouge2", "rougeL", "pairwise"],
//   "adapters": {
//     "task":  {"mock": "lead"},
//     "judge": {"command": "python judge.py", "max_in_flight": 4, "retries": 2,
//               "config": {"prompt": "..."}},
//     "asr":   {"url": "http://localhost:8000/asr"},
//     "tts":   {"mock": "tones", "id": "tones-v1"}
//   },
//   "workers": 4,
//   "classification_subset": {"first": 50, "last": 50}
// }
//
// ENDOW_<KIND>_CMD / ENDOW_<KIND>_URL (KIND = TTS, ASR, TASK, JUDGE) replace
// the configured backend of that adapter.

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "endow/adapters.hpp"
#include "endow/clean.hpp"
#include "endow/corpus.hpp"
#include "endow/error.hpp"
#include "endow/io.hpp"

namespace endow {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum class NoiseBackend { kText, kAudio };

struct AdapterSpec {
  std::string id;
  std::string mock;     // exactly one of mock / command / url
  std::string command;
  std::string url;
  std::size_t max_in_flight = 4;
  int retries = 2;
  double timeout_s = 300;
  json config = json::object();

  bool configured() const { return !mock.empty() || !command.empty() || !url.empty(); }
  std::string describe() const {
    if (!mock.empty()) return "mock:" + mock;
    if (!command.empty()) return "subprocess:" + command;
    return "http:" + url;
  }
};

struct RunConfig {
  fs::path dataset;
  TaskKind task = TaskKind::kSummarization;
  std::uint64_t seed = 0;
  fs::path output_dir;

  NoiseBackend noise = NoiseBackend::kText;
  std::vector<double> corruption_rates{0.0, 0.1, 0.2, 0.4, 0.6, 0.8};
  std::vector<double> snr_db{10, 5, 0, -5, -10};
  bool reverberate_level0 = false;
  std::vector<fs::path> backgrounds;
  std::size_t tts_max_tokens = 50;

  std::vector<CleaningTechnique> techniques{kAllTechniques.begin(), kAllTechniques.end()};
  std::size_t chunk_size = 20;
  std::string annotation_provider = "lexicon";
  fs::path annotation_path;
  std::vector<std::string> metrics;

  AdapterSpec tts, asr, task_model, judge;
  std::size_t workers = 4;
  std::optional<UtteranceSubset> classification_subset;

  json source;  // the file as given, for the run directory copy

  /// Number of noise levels above level 0.
  int k() const {
    return static_cast<int>(noise == NoiseBackend::kText ? corruption_rates.size() - 1 : snr_db.size());
  }
  int m() const { return static_cast<int>(techniques.size()); }
  bool pairwise() const { return std::find(metrics.begin(), metrics.end(), "pairwise") != metrics.end(); }
};

inline std::vector<std::string> metrics_for(TaskKind kind) {
  switch (kind) {
    case TaskKind::kSummarization: return {"rouge1", "rouge2", "rougeL", "pairwise"};
    case TaskKind::kQuestionAnswering: return {"exact", "f1", "fuzzy"};
    case TaskKind::kClassification: return {"accuracy", "macro_f1"};
  }
  return {};
}

namespace detail {

template <class T>
T config_get(const json& j, const char* key, const T& fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config field '") + key + "' has the wrong type");
  }
}

inline AdapterSpec parse_adapter(const json& j, const std::string& role) {
  if (!j.is_object()) throw ConfigError("adapters." + role + " must be an object");
  static const std::set<std::string> known{"id", "mock", "command", "url", "max_in_flight", "retries", "timeout_s",
                                           "config"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("adapters." + role + ": unknown field '" + k + "'");
  AdapterSpec s;
  s.mock = config_get<std::string>(j, "mock", "");
  s.command = config_get<std::string>(j, "command", "");
  s.url = config_get<std::string>(j, "url", "");
  s.max_in_flight = config_get<std::size_t>(j, "max_in_flight", 4);
  s.retries = config_get<int>(j, "retries", 2);
  s.timeout_s = config_get<double>(j, "timeout_s", 300);
  s.config = j.value("config", json::object());
  const int n = !s.mock.empty() + !s.command.empty() + !s.url.empty();
  if (n != 1) throw ConfigError("adapters." + role + ": give exactly one of mock, command, url");
  if (s.max_in_flight == 0) throw ConfigError("adapters." + role + ".max_in_flight must be at least 1");
  if (s.retries < 0) throw ConfigError("adapters." + role + ".retries must be non-negative");
  s.id = config_get<std::string>(j, "id", role + "-" + (s.mock.empty() ? "external" : s.mock));
  return s;
}

inline void apply_env_override(AdapterSpec& s, const std::string& kind) {
  const std::string role = kind == "TASK" ? "task" : ascii_lower(kind);
  if (const char* cmd = std::getenv(("ENDOW_" + kind + "_CMD").c_str()); cmd && *cmd) {
    s.mock.clear();
    s.url.clear();
    s.command = cmd;
    if (s.id.empty() || s.id.rfind(role + "-", 0) == 0) s.id = role + "-external";
  } else if (const char* url = std::getenv(("ENDOW_" + kind + "_URL").c_str()); url && *url) {
    s.mock.clear();
    s.command.clear();
    s.url = url;
    if (s.id.empty() || s.id.rfind(role + "-", 0) == 0) s.id = role + "-external";
  }
}

}  // namespace detail

/// Parses and validates; relative paths resolve against `base_dir`.
inline RunConfig parse_config(const json& j, const fs::path& base_dir = ".") {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known{"dataset",    "task",    "seed",       "output_dir", "noise",
                                           "techniques", "chunk_size", "annotation", "metrics",    "adapters",
                                           "workers",    "classification_subset", "k"};
  for (const auto& [key, v] : j.items())
    if (!known.count(key)) throw ConfigError("unknown config field '" + key + "'");

  RunConfig c;
  c.source = j;
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; };
  const auto dataset = detail::config_get<std::string>(j, "dataset", "");
  if (dataset.empty()) throw ConfigError("config field 'dataset' is required");
  c.dataset = resolve(dataset);
  try {
    c.task = parse_task_kind(detail::config_get<std::string>(j, "task", ""));
  } catch (const Error& e) {
    throw ConfigError(std::string("config field 'task': ") + e.what());
  }
  c.seed = detail::config_get<std::uint64_t>(j, "seed", 0);
  const auto out = detail::config_get<std::string>(j, "output_dir", "");
  if (out.empty()) throw ConfigError("config field 'output_dir' is required");
  c.output_dir = resolve(out);

  const json noise = j.value("noise", json::object());
  const auto backend = detail::config_get<std::string>(noise, "backend", "text");
  if (backend == "text") {
    c.noise = NoiseBackend::kText;
    c.corruption_rates = detail::config_get(noise, "corruption_rates", c.corruption_rates);
    if (c.corruption_rates.size() < 2) throw ConfigError("noise.corruption_rates needs level 0 and at least one more");
    for (double r : c.corruption_rates)
      if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("noise.corruption_rates must lie in [0, 1]");
  } else if (backend == "audio") {
    c.noise = NoiseBackend::kAudio;
    c.snr_db = detail::config_get(noise, "snr_db", c.snr_db);
    if (c.snr_db.empty()) throw ConfigError("noise.snr_db must not be empty");
    c.reverberate_level0 = detail::config_get(noise, "reverberate_level0", false);
    for (const auto& b : detail::config_get<std::vector<std::string>>(noise, "backgrounds", {}))
      c.backgrounds.push_back(resolve(b));
    c.tts_max_tokens = detail::config_get<std::size_t>(noise, "tts_max_tokens", 50);
    if (c.tts_max_tokens == 0) throw ConfigError("noise.tts_max_tokens must be at least 1");
  } else {
    throw ConfigError("noise.backend must be 'text' or 'audio', got '" + backend + "'");
  }
  if (j.contains("k") && detail::config_get<int>(j, "k", 0) != c.k())
    throw ConfigError("k = " + std::to_string(j.at("k").get<int>()) + " does not match the noise grid (" +
                      std::to_string(c.k()) + " levels)");

  if (j.contains("techniques")) {
    c.techniques.clear();
    for (const auto& t : detail::config_get<std::vector<std::string>>(j, "techniques", {})) {
      const auto tech = parse_technique(t);
      if (std::find(c.techniques.begin(), c.techniques.end(), tech) != c.techniques.end())
        throw ConfigError("technique " + t + " listed twice");
      c.techniques.push_back(tech);
    }
  }
  c.chunk_size = detail::config_get<std::size_t>(j, "chunk_size", 20);
  if (c.chunk_size == 0) throw ConfigError("chunk_size must be at least 1");

  const json ann = j.value("annotation", json::object());
  c.annotation_provider = detail::config_get<std::string>(ann, "provider", "lexicon");
  if (c.annotation_provider == "sidecar") {
    const auto p = detail::config_get<std::string>(ann, "path", "");
    if (p.empty()) throw ConfigError("annotation.path is required for the sidecar provider");
    c.annotation_path = resolve(p);
  } else if (c.annotation_provider != "lexicon") {
    throw ConfigError("annotation.provider must be 'lexicon' or 'sidecar'");
  }

  const auto allowed = metrics_for(c.task);
  c.metrics = detail::config_get(j, "metrics", allowed);
  if (c.metrics.empty()) throw ConfigError("metrics must not be empty");
  for (const auto& m : c.metrics)
    if (std::find(allowed.begin(), allowed.end(), m) == allowed.end())
      throw ConfigError("metric '" + m + "' does not apply to task " + to_string(c.task));

  const json ad = j.value("adapters", json::object());
  for (const auto& [k, v] : ad.items())
    if (k != "tts" && k != "asr" && k != "task" && k != "judge") throw ConfigError("unknown adapter role '" + k + "'");
  if (ad.contains("tts")) c.tts = detail::parse_adapter(ad["tts"], "tts");
  if (ad.contains("asr")) c.asr = detail::parse_adapter(ad["asr"], "asr");
  if (ad.contains("task")) c.task_model = detail::parse_adapter(ad["task"], "task");
  if (ad.contains("judge")) c.judge = detail::parse_adapter(ad["judge"], "judge");
  detail::apply_env_override(c.tts, "TTS");
  detail::apply_env_override(c.asr, "ASR");
  detail::apply_env_override(c.task_model, "TASK");
  detail::apply_env_override(c.judge, "JUDGE");
  if (!c.task_model.configured()) throw ConfigError("adapters.task is required");
  if (c.pairwise() && !c.judge.configured()) throw ConfigError("metric 'pairwise' needs adapters.judge");
  if (c.noise == NoiseBackend::kAudio && (!c.tts.configured() || !c.asr.configured()))
    throw ConfigError("the audio noise backend needs adapters.tts and adapters.asr");
  std::set<std::string> ids;
  for (const auto* s : {&c.tts, &c.asr, &c.task_model, &c.judge})
    if (s->configured() && !ids.insert(s->id).second) throw ConfigError("adapter id '" + s->id + "' used twice");

  c.workers = detail::config_get<std::size_t>(j, "workers", 4);
  if (c.workers == 0) throw ConfigError("workers must be at least 1");
  if (j.contains("classification_subset")) {
    const auto& s = j["classification_subset"];
    c.classification_subset = UtteranceSubset{detail::config_get<std::size_t>(s, "first", 50),
                                              detail::config_get<std::size_t>(s, "last", 50)};
  }
  return c;
}

inline RunConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

}  // namespace endow
