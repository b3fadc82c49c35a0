#pragma once

// Stage execution over the variant matrix.
//
//   reference   variants/ref_0/transcripts.jsonl
//   noise       text backend: variants/<i>_0 from in-core corruption
//               audio backend: tts -> audio/clean, levels -> audio/level_<i>,
//               asr -> variants/<i>_0
//   clean       variants/<i>_<j>, j >= 1
//   task        variants/<key>/outputs.jsonl
//   judge       tournaments/<mode>/<instance>.json (pairwise metric only)
//   score       tables/scores.csv, tables/wer.csv, tables/wer_transcripts.csv
//   report      report/
//
// Every work item records the hash of its inputs and of the files it wrote in
// state.json. On resume an item is skipped only when its inputs are unchanged
// and its outputs still exist and hash-verify; anything else is recomputed.

#include <atomic>
#include <chrono>
#include <exception>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "endow/adapters.hpp"
#include "endow/alignment.hpp"
#include "endow/annotate.hpp"
#include "endow/audio.hpp"
#include "endow/clean.hpp"
#include "endow/config.hpp"
#include "endow/corpus.hpp"
#include "endow/io.hpp"
#include "endow/metrics.hpp"
#include "endow/mocks.hpp"
#include "endow/random.hpp"
#include "endow/report.hpp"
#include "endow/tournament.hpp"
#include "endow/wav.hpp"

namespace endow {

// ---------------------------------------------------------------------------
// Run state

class RunState {
 public:
  explicit RunState(fs::path file) : file_(std::move(file)) {
    if (fs::exists(file_)) {
      try {
        state_ = json::parse(io::read_file(file_));
      } catch (const json::exception& e) {
        throw FormatError("corrupt run state " + file_.string() + ": " + e.what());
      }
    }
    if (!state_.is_object()) state_ = json::object();
  }

  /// True when `item` of `stage` completed with these inputs and all its
  /// recorded outputs are intact.
  bool complete(const std::string& stage, const std::string& item, const std::string& input_hash,
                const fs::path& root) const {
    json rec;
    {
      std::lock_guard lock(mu_);
      if (!state_.contains(stage) || !state_[stage].contains(item)) return false;
      rec = state_[stage][item];
    }
    if (rec.value("input", "") != input_hash) return false;
    for (const auto& [rel, hash] : rec.at("outputs").items()) {
      const auto p = root / rel;
      if (!fs::exists(p) || io::sha256_file(p) != hash.get<std::string>()) return false;
    }
    return true;
  }

  void record(const std::string& stage, const std::string& item, const std::string& input_hash, const fs::path& root,
              const std::vector<fs::path>& outputs) {
    json outs = json::object();
    for (const auto& p : outputs) outs[fs::relative(p, root).generic_string()] = io::sha256_file(p);
    std::lock_guard lock(mu_);
    state_[stage][item] = {{"input", input_hash}, {"outputs", outs}};
    io::write_file_atomic(file_, state_.dump(1) + "\n");
  }

  void clear() {
    std::lock_guard lock(mu_);
    state_ = json::object();
    io::write_file_atomic(file_, "{}\n");
  }

 private:
  fs::path file_;
  mutable std::mutex mu_;
  json state_;
};

struct StageStats {
  std::size_t ran = 0;
  std::size_t skipped = 0;
};

struct RunSummary {
  fs::path run_dir;
  std::map<std::string, StageStats> stages;
  std::map<VariantKey, double> set_wer;
  report::ReportBundle report;
};

/// Runs fn(0..n-1) on up to `workers` threads; returns the per-item errors.
inline std::vector<std::exception_ptr> parallel_for(std::size_t n, std::size_t workers,
                                                    const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t t = std::min(std::max<std::size_t>(workers, 1), n);
  std::vector<std::thread> pool;
  for (std::size_t k = 1; k < t; ++k) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  return errors;
}

/// The wire name of a task kind in TASK payloads.
inline std::string task_name(TaskKind k) { return to_string(k); }

/// Builds an adapter from its config. Mocks run in-process and share the
/// audio manifest.
inline std::unique_ptr<adapters::Adapter> make_adapter(const AdapterSpec& spec, adapters::AdapterKind kind,
                                                       const fs::path& cache_dir,
                                                       std::shared_ptr<mocks::AudioManifest> manifest,
                                                       std::uint64_t seed) {
  std::shared_ptr<adapters::Backend> backend;
  const auto timeout = std::chrono::milliseconds(static_cast<long long>(spec.timeout_s * 1000));
  if (!spec.mock.empty()) {
    backend = std::make_shared<adapters::FunctionBackend>(
        spec.mock, mocks::make_mock(kind, spec.mock, std::move(manifest), sub_seed(seed, "mock/" + spec.id)));
  } else if (!spec.command.empty()) {
    backend = std::make_shared<adapters::SubprocessBackend>(spec.command, spec.max_in_flight, timeout);
  } else {
    backend = std::make_shared<adapters::HttpBackend>(spec.url, timeout);
  }
  adapters::AdapterOptions opts;
  opts.retries = spec.retries;
  opts.max_in_flight = spec.max_in_flight;
  opts.cache_dir = cache_dir;
  opts.config = spec.config;
  return std::make_unique<adapters::Adapter>(spec.id, kind, std::move(backend), std::move(opts));
}

class Pipeline {
 public:
  /// resume = false forgets recorded progress (the adapter cache is kept).
  Pipeline(RunConfig cfg, bool resume) : cfg_(std::move(cfg)), run_dir_(cfg_.output_dir), store_(run_dir_) {
    fs::create_directories(run_dir_);
    state_ = std::make_unique<RunState>(run_dir_ / "state.json");
    if (!resume) state_->clear();
    log_ = make_logger();
    manifest_ = std::make_shared<mocks::AudioManifest>();
  }

  ~Pipeline() {
    if (log_) spdlog::drop(log_->name());
  }

  RunSummary run() {
    persist_config();
    IngestOptions io_opts;
    io_opts.classification_subset = cfg_.classification_subset;
    try {
      dataset_ = ingest_dataset(cfg_.dataset, cfg_.task, io_opts);
    } catch (const Error& e) {
      throw StageError("ingest", "-", e.what());
    }
    log_->info("dataset {}: {} transcripts, {} instances; k={} m={} ({} variants)", cfg_.dataset.string(),
               dataset_.transcripts.size(), dataset_.instances.size(), cfg_.k(), cfg_.m(),
               1 + (cfg_.k() + 1) * (cfg_.m() + 1));
    const auto cache = run_dir_ / "cache";
    task_ = make_adapter(cfg_.task_model, adapters::AdapterKind::kTask, cache, manifest_, cfg_.seed);
    if (cfg_.judge.configured() && cfg_.pairwise())
      judge_ = make_adapter(cfg_.judge, adapters::AdapterKind::kJudge, cache, manifest_, cfg_.seed);
    if (cfg_.noise == NoiseBackend::kAudio) {
      tts_ = make_adapter(cfg_.tts, adapters::AdapterKind::kTts, cache, manifest_, cfg_.seed);
      asr_ = make_adapter(cfg_.asr, adapters::AdapterKind::kAsr, cache, manifest_, cfg_.seed);
    }

    stage_reference();
    if (cfg_.noise == NoiseBackend::kText) {
      stage_text_noise();
    } else {
      stage_tts();
      stage_levels();
      stage_asr();
    }
    stage_clean();
    stage_task();
    if (judge_) stage_judge();
    stage_score();
    summary_.report = emit();
    summary_.run_dir = run_dir_;
    log_->info("run complete: {}", run_dir_.string());
    return summary_;
  }

  static report::ReportSpec report_spec(const RunConfig& cfg) {
    report::ReportSpec spec;
    spec.model = cfg.task_model.id;
    spec.k = cfg.k();
    for (auto t : cfg.techniques) spec.techniques.push_back(to_string(t));
    spec.metrics = cfg.metrics;
    spec.seed = cfg.seed;
    return spec;
  }

 private:
  // -------------------------------------------------------------------------
  // plumbing

  std::shared_ptr<spdlog::logger> make_logger() {
    static std::atomic<int> counter{0};
    auto file = std::make_shared<spdlog::sinks::basic_file_sink_mt>((run_dir_ / "run.log").string());
    auto err = std::make_shared<spdlog::sinks::stderr_color_sink_mt>();
    err->set_level(std::getenv("ENDOW_VERBOSE") ? spdlog::level::debug : spdlog::level::warn);
    auto logger = std::make_shared<spdlog::logger>("endow-" + std::to_string(counter++),
                                                   spdlog::sinks_init_list{file, err});
    logger->set_level(spdlog::level::debug);
    logger->flush_on(spdlog::level::info);
    return logger;
  }

  void persist_config() {
    json j = cfg_.source;
    j["dataset"] = fs::absolute(cfg_.dataset).lexically_normal().string();
    j["output_dir"] = fs::absolute(cfg_.output_dir).lexically_normal().string();
    if (!cfg_.backgrounds.empty()) {
      json b = json::array();
      for (const auto& p : cfg_.backgrounds) b.push_back(fs::absolute(p).lexically_normal().string());
      j["noise"]["backgrounds"] = b;
    }
    if (!cfg_.annotation_path.empty())
      j["annotation"]["path"] = fs::absolute(cfg_.annotation_path).lexically_normal().string();
    io::write_file_atomic(run_dir_ / "config.json", j.dump(2) + "\n");
  }

  struct Item {
    std::string name;     // state key, usually a variant key
    std::string input;    // hash of everything the outputs depend on
    std::function<std::vector<fs::path>()> work;  // returns the files written
  };

  /// Runs the stale items of a stage on the worker pool. Failures are logged
  /// with their item name; the first is rethrown as a StageError after the
  /// remaining items have had their chance to finish.
  void run_stage(const std::string& stage, std::vector<Item> items, std::size_t workers = 0) {
    auto& stats = summary_.stages[stage];
    std::vector<Item> todo;
    for (auto& it : items) {
      if (state_->complete(stage, it.name, it.input, run_dir_)) {
        ++stats.skipped;
        log_->debug("{} {}: up to date", stage, it.name);
      } else {
        todo.push_back(std::move(it));
      }
    }
    log_->info("stage {}: {} to run, {} up to date", stage, todo.size(), stats.skipped);
    const auto errors = parallel_for(todo.size(), workers ? workers : cfg_.workers, [&](std::size_t i) {
      const auto outputs = todo[i].work();
      state_->record(stage, todo[i].name, todo[i].input, run_dir_, outputs);
    });
    std::optional<StageError> first;
    for (std::size_t i = 0; i < todo.size(); ++i) {
      if (!errors[i]) {
        ++stats.ran;
        continue;
      }
      try {
        std::rethrow_exception(errors[i]);
      } catch (const std::exception& e) {
        log_->error("stage {} failed for {}: {}", stage, todo[i].name, e.what());
        if (!first) first.emplace(stage, todo[i].name, e.what());
      }
    }
    if (first) throw *first;
  }

  static std::string hash_of(const std::vector<std::string>& parts) {
    std::string all;
    for (const auto& p : parts) all += p + '\x1f';
    return io::sha256_hex(all);
  }

  std::string file_hash(const fs::path& p) const { return fs::exists(p) ? io::sha256_file(p) : "missing"; }

  std::vector<Transcript> load_variant(const VariantKey& key) const {
    const auto p = store_.transcripts_path(key);
    if (!fs::exists(p)) throw NotFoundError("transcripts of variant " + key.to_string() + " are missing");
    return store_.load(key);
  }

  // -------------------------------------------------------------------------
  // stages

  void stage_reference() {
    const auto in = hash_of({file_hash(cfg_.dataset)});
    run_stage("reference", {{"ref_0", in, [&] { return std::vector{store_.store(VariantKey::ref(), dataset_.transcripts)}; }}});
  }

  void stage_text_noise() {
    std::vector<Item> items;
    const auto ref_hash = file_hash(store_.transcripts_path(VariantKey::ref()));
    for (int i = 0; i <= cfg_.k(); ++i) {
      const double rate = cfg_.corruption_rates[static_cast<std::size_t>(i)];
      const VariantKey key(i, 0);
      items.push_back({key.to_string(), hash_of({ref_hash, report::num(rate), std::to_string(cfg_.seed)}), [=, this] {
                         auto ts = load_variant(VariantKey::ref());
                         for (auto& t : ts)
                           for (auto& u : t.utterances)
                             u.text = mocks::corrupting_asr_mock(
                                          u.text, rate,
                                          sub_seed(cfg_.seed, "corrupt/" + t.id + "/" + std::to_string(u.index)))
                                          .text;
                         return std::vector{store_.store(key, ts)};
                       }});
    }
    run_stage("noise", std::move(items));
  }

  fs::path clean_wav(const std::string& tid, std::size_t u) const {
    return run_dir_ / "audio" / "clean" / tid / (std::to_string(u) + ".wav");
  }
  fs::path level_wav(int level, const std::string& tid, std::size_t u) const {
    return run_dir_ / "audio" / ("level_" + std::to_string(level)) / tid / (std::to_string(u) + ".wav");
  }

  void stage_tts() {
    std::vector<Item> items;
    for (const auto& t : dataset_.transcripts) {
      for (const auto& u : t.utterances) manifest_->add(clean_wav(t.id, u.index).string(), {u.text, clean_wav(t.id, u.index).string()});
      const auto in = hash_of({io::sha256_hex(transcript_to_json(t).dump()), cfg_.tts.id, cfg_.tts.config.dump(),
                               std::to_string(cfg_.tts_max_tokens)});
      items.push_back({t.id, in, [&t, this] {
                         std::vector<fs::path> outs;
                         for (const auto& u : t.utterances) {
                           audio::Signal sig;
                           bool first = true;
                           const auto segs = audio::prepare_tts_segments(u, cfg_.tts_max_tokens);
                           for (std::size_t s = 0; s < segs.size(); ++s) {
                             const auto seg_path = run_dir_ / "audio" / "segments" / t.id /
                                                   fmt::format("{}_{}.wav", u.index, s);
                             fs::create_directories(seg_path.parent_path());
                             const json req{{"text", segs[s]}, {"output_path", seg_path.string()}};
                             auto resp = tts_->call(req);
                             if (!fs::exists(resp.at("audio_path").get<std::string>())) resp = tts_->call(req, true);
                             const auto part = wav::read(resp.at("audio_path").get<std::string>());
                             if (first) sig.sample_rate = part.sample_rate;
                             if (part.sample_rate != sig.sample_rate)
                               throw MismatchError("TTS segments of one utterance differ in sample rate");
                             sig.samples.insert(sig.samples.end(), part.samples.begin(), part.samples.end());
                             first = false;
                           }
                           // nothing to voice (markers only): a short silence
                           if (sig.samples.empty()) sig.samples.assign(static_cast<std::size_t>(sig.sample_rate / 10), 0.0);
                           wav::write(clean_wav(t.id, u.index), sig);
                           outs.push_back(clean_wav(t.id, u.index));
                         }
                         return outs;
                       }});
    }
    run_stage("tts", std::move(items));
  }

  audio::Signal background_for(const std::string& tid, std::size_t u, int sample_rate) const {
    const auto label = tid + "/" + std::to_string(u);
    if (!cfg_.backgrounds.empty()) {
      Rng rng(sub_seed(cfg_.seed, "background/" + label));
      auto bg = wav::read(cfg_.backgrounds[uniform_index(rng, cfg_.backgrounds.size())]);
      if (bg.sample_rate != sample_rate)
        throw MismatchError("background sample rate " + std::to_string(bg.sample_rate) + " Hz vs speech " +
                            std::to_string(sample_rate) + " Hz");
      return bg;
    }
    // Seeded white noise, one second.
    Rng rng(sub_seed(cfg_.seed, "noise/" + label));
    audio::Signal bg{std::vector<double>(static_cast<std::size_t>(sample_rate)), sample_rate};
    for (auto& x : bg.samples) x = uniform(rng, -1.0, 1.0);
    return bg;
  }

  void stage_levels() {
    std::vector<Item> items;
    std::string grid;
    for (double s : cfg_.snr_db) grid += report::num(s) + " ";
    std::string bgs;
    for (const auto& b : cfg_.backgrounds) bgs += file_hash(b);
    for (const auto& t : dataset_.transcripts) {
      for (const auto& u : t.utterances)
        for (int i = 0; i <= cfg_.k(); ++i)
          manifest_->add(level_wav(i, t.id, u.index).string(), {u.text, clean_wav(t.id, u.index).string()});
      std::string clean_hashes;
      for (const auto& u : t.utterances) clean_hashes += file_hash(clean_wav(t.id, u.index));
      const auto in = hash_of({clean_hashes, grid, bgs, std::to_string(cfg_.seed), std::to_string(cfg_.reverberate_level0)});
      items.push_back({t.id, in, [&t, this] {
                         std::vector<fs::path> outs;
                         for (const auto& u : t.utterances) {
                           const auto label = t.id + "/" + std::to_string(u.index);
                           const auto clean = wav::read(clean_wav(t.id, u.index));
                           // One room per utterance, shared by every level.
                           const auto room = audio::sample_room(sub_seed(cfg_.seed, "room/" + label), clean.sample_rate);
                           const auto rev = audio::reverberate(clean, audio::generate_rir(room));
                           const auto bg = background_for(t.id, u.index, clean.sample_rate);
                           for (int i = 0; i <= cfg_.k(); ++i) {
                             audio::Signal out;
                             if (i == 0) out = cfg_.reverberate_level0 ? rev : clean;
                             else out = audio::mix_background(rev, {cfg_.snr_db[static_cast<std::size_t>(i - 1)], bg});
                             wav::write(level_wav(i, t.id, u.index), out);
                             outs.push_back(level_wav(i, t.id, u.index));
                           }
                         }
                         return outs;
                       }});
    }
    run_stage("levels", std::move(items));
    io::write_file_atomic(run_dir_ / "audio" / "manifest.json", manifest_->to_json().dump(1) + "\n");
  }

  void stage_asr() {
    std::vector<Item> items;
    for (int i = 0; i <= cfg_.k(); ++i) {
      const VariantKey key(i, 0);
      std::string audio_hashes;
      for (const auto& t : dataset_.transcripts)
        for (const auto& u : t.utterances) audio_hashes += file_hash(level_wav(i, t.id, u.index));
      items.push_back({key.to_string(), hash_of({io::sha256_hex(audio_hashes), cfg_.asr.id, cfg_.asr.config.dump()}),
                       [=, this] {
                         auto ts = dataset_.transcripts;
                         for (auto& t : ts) {
                           for (auto& u : t.utterances) {
                             const auto p = level_wav(i, t.id, u.index);
                             u.text = asr_->call({{"audio_path", p.string()}, {"audio_sha256", io::sha256_file(p)}})
                                          .at("text")
                                          .get<std::string>();
                           }
                         }
                         return std::vector{store_.store(key, ts)};
                       }});
    }
    run_stage("asr", std::move(items));
  }

  std::unique_ptr<AnnotationProvider> make_provider() const {
    if (cfg_.annotation_provider == "sidecar") return std::make_unique<SidecarProvider>(cfg_.annotation_path);
    return std::make_unique<LexiconTagger>();
  }

  void stage_clean() {
    const auto provider = make_provider();
    const auto provider_id = cfg_.annotation_provider + ":" + file_hash(cfg_.annotation_path);
    const auto ref_hash = file_hash(store_.transcripts_path(VariantKey::ref()));
    std::vector<Item> items;
    for (int i = 0; i <= cfg_.k(); ++i) {
      const auto noisy_hash = file_hash(store_.transcripts_path(VariantKey(i, 0)));
      for (int j = 1; j <= cfg_.m(); ++j) {
        const auto tech = cfg_.techniques[static_cast<std::size_t>(j - 1)];
        const VariantKey key(i, j);
        items.push_back({key.to_string(),
                         hash_of({ref_hash, noisy_hash, to_string(tech), std::to_string(cfg_.chunk_size), provider_id}),
                         [=, &provider, this] {
                           const auto ref = load_variant(VariantKey::ref());
                           const auto noisy = load_variant(VariantKey(i, 0));
                           if (ref.size() != noisy.size()) throw MismatchError("transcript count differs from reference");
                           CleanOptions opts;
                           opts.chunk_size = cfg_.chunk_size;
                           std::vector<Transcript> out;
                           for (std::size_t t = 0; t < ref.size(); ++t)
                             out.push_back(clean(ref[t], noisy[t], tech, *provider, VariantKey(i, 0).to_string(), opts));
                           return std::vector{store_.store(key, out)};
                         }});
      }
    }
    run_stage("clean", std::move(items));
  }

  std::vector<VariantKey> all_variants() const { return enumerate_variants(cfg_.k(), cfg_.m()); }

  fs::path outputs_path(const VariantKey& key) const { return store_.variant_dir(key) / "outputs.jsonl"; }

  json task_payload(const TaskInstance& inst, const Transcript& t) const {
    json tr = json::array();
    for (const auto& u : t.utterances) tr.push_back({{"speaker_id", u.speaker_id}, {"text", u.text}});
    json p{{"task", task_name(cfg_.task)}, {"transcript", tr}};
    switch (cfg_.task) {
      case TaskKind::kSummarization: p["query"] = inst.query.value_or(""); break;
      case TaskKind::kQuestionAnswering: p["question"] = inst.question.value_or(""); break;
      case TaskKind::kClassification:
        p["utterance_index"] = *inst.utterance_index;
        p["labels"] = dataset_.label_set;
        break;
    }
    return p;
  }

  void stage_task() {
    std::vector<Item> items;
    for (const auto& key : all_variants()) {
      const auto in = hash_of({file_hash(store_.transcripts_path(key)), cfg_.task_model.id,
                               cfg_.task_model.config.dump(), dataset_instances_hash()});
      items.push_back({key.to_string(), in, [key, this] {
                         const auto ts = load_variant(key);
                         std::map<std::string, const Transcript*> by_id;
                         for (const auto& t : ts) by_id[t.id] = &t;
                         std::string out;
                         for (const auto& inst : dataset_.instances) {
                           auto it = by_id.find(inst.transcript_id);
                           if (it == by_id.end()) throw NotFoundError("transcript " + inst.transcript_id + " missing");
                           const auto resp = task_->call(task_payload(inst, *it->second));
                           out += json{{"instance_id", inst.id}, {"output", resp.at("output")}}.dump() + "\n";
                         }
                         io::write_file_atomic(outputs_path(key), out);
                         return std::vector{outputs_path(key)};
                       }});
    }
    run_stage("task", std::move(items));
  }

  std::string dataset_instances_hash() const {
    std::string s;
    for (const auto& i : dataset_.instances) s += i.id + "|";
    return io::sha256_hex(s);
  }

  std::map<std::string, std::string> load_outputs(const VariantKey& key) const {
    std::map<std::string, std::string> out;
    const auto p = outputs_path(key);
    const auto content = io::read_file(p);
    std::size_t pos = 0;
    while (pos < content.size()) {
      auto nl = content.find('\n', pos);
      if (nl == std::string::npos) nl = content.size();
      if (nl > pos) {
        const auto j = json::parse(content.substr(pos, nl - pos));
        out[j.at("instance_id").get<std::string>()] = j.at("output").get<std::string>();
      }
      pos = nl + 1;
    }
    return out;
  }

  static std::string safe_name(std::string s) {
    for (auto& c : s)
      if (c == '/' || c == '\\') c = '_';
    return s;
  }

  fs::path tournament_path(const std::string& mode, const std::string& instance) const {
    return run_dir_ / "tournaments" / mode / (safe_name(instance) + ".json");
  }

  static json tournament_json(const Tournament& t) {
    json pairs = json::array();
    for (const auto& p : t.pairs) {
      pairs.push_back({{"a", t.participants[p.a].variant.to_string()},
                       {"b", t.participants[p.b].variant.to_string()},
                       {"presented_first", t.participants[p.swapped ? p.b : p.a].variant.to_string()},
                       {"verdict", p.verdict ? json(to_string(*p.verdict)) : json(nullptr)},
                       {"error", p.error}});
    }
    json points = json::object();
    for (std::size_t i = 0; i < t.participants.size(); ++i)
      points[t.participants[i].variant.to_string()] = t.points[i];
    return {{"instance", t.instance_id},
            {"mode", t.mode == TournamentMode::kNonCleaned ? "non_cleaned" : "cleaned"},
            {"pairs", pairs},
            {"points", points},
            {"warnings", t.warnings}};
  }

  void stage_judge() {
    Judge judge = [this](const JudgeQuery& q) {
      json p{{"reference", q.reference}, {"candidate_1", q.candidate_1}, {"candidate_2", q.candidate_2}};
      if (q.query) p["query"] = *q.query;
      return parse_verdict(judge_->call(p).at("verdict").get<std::string>());
    };
    std::map<VariantKey, std::string> out_hash;
    for (const auto& key : all_variants()) out_hash[key] = file_hash(outputs_path(key));
    std::vector<std::string> modes{"non_cleaned"};
    for (auto t : cfg_.techniques) modes.push_back(std::string("cleaned_") + to_string(t));

    std::vector<Item> items;
    for (std::size_t mi = 0; mi < modes.size(); ++mi) {
      const int j = static_cast<int>(mi);
      std::string in = cfg_.judge.id + cfg_.judge.config.dump() + std::to_string(cfg_.seed);
      in += out_hash[VariantKey::ref()];
      for (int i = 0; i <= cfg_.k(); ++i) in += out_hash[VariantKey(i, 0)] + (j ? out_hash[VariantKey(i, j)] : "");
      for (const auto& inst : dataset_.instances) {
        const auto mode = modes[mi];
        items.push_back({mode + "/" + inst.id, io::sha256_hex(in), [&inst, mode, j, judge, this] {
                           std::vector<Candidate> non_cleaned{{VariantKey::ref(), load_outputs(VariantKey::ref()).at(inst.id)}};
                           std::vector<Candidate> cleaned;
                           for (int i = 0; i <= cfg_.k(); ++i) {
                             non_cleaned.push_back({VariantKey(i, 0), load_outputs(VariantKey(i, 0)).at(inst.id)});
                             if (j) cleaned.push_back({VariantKey(i, j), load_outputs(VariantKey(i, j)).at(inst.id)});
                           }
                           const TournamentInput input{inst.id, inst.reference_summary.value_or(""), inst.query,
                                                       non_cleaned, cleaned};
                           const auto t = run_tournament(j ? TournamentMode::kCleaned : TournamentMode::kNonCleaned,
                                                         input, judge, cfg_.seed);
                           for (const auto& w : t.warnings) log_->warn("{}", w);
                           const auto p = tournament_path(mode, inst.id);
                           io::write_file_atomic(p, tournament_json(t).dump(1) + "\n");
                           return std::vector{p};
                         }});
      }
    }
    run_stage("judge", std::move(items));
  }

  /// Scores are cheap and pure, so this stage always recomputes them from
  /// the persisted outputs; its tables are what the report reads.
  void stage_score() {
    std::vector<report::ScoreRow> rows;
    std::vector<report::WerRow> wers;
    std::string wer_detail = report::csv_row({"variant", "transcript", "wer", "hits", "substitutions", "deletions",
                                              "insertions"});
    const auto ref = load_variant(VariantKey::ref());
    const auto variants = all_variants();
    std::vector<std::vector<report::ScoreRow>> per_variant(variants.size());
    std::vector<std::string> per_variant_wer(variants.size());
    std::vector<double> set_wer(variants.size());
    const auto errors = parallel_for(variants.size(), cfg_.workers, [&](std::size_t v) {
      const auto& key = variants[v];
      const auto hyp = load_variant(key);
      set_wer[v] = wer_set(ref, hyp);
      for (std::size_t t = 0; t < ref.size(); ++t) {
        const auto w = wer_transcript(ref[t], hyp[t]);
        per_variant_wer[v] += report::csv_row({key.to_string(), ref[t].id, report::num(w.wer),
                                               std::to_string(w.counts.hits), std::to_string(w.counts.substitutions),
                                               std::to_string(w.counts.deletions),
                                               std::to_string(w.counts.insertions)});
      }
      per_variant[v] = score_variant(key);
    });
    for (std::size_t v = 0; v < variants.size(); ++v) {
      if (errors[v]) {
        try {
          std::rethrow_exception(errors[v]);
        } catch (const std::exception& e) {
          throw StageError("score", variants[v].to_string(), e.what());
        }
      }
      rows.insert(rows.end(), per_variant[v].begin(), per_variant[v].end());
      wers.push_back({variants[v], set_wer[v]});
      wer_detail += per_variant_wer[v];
      summary_.set_wer[variants[v]] = set_wer[v];
    }
    if (judge_) append_pairwise(rows);
    io::write_file_atomic(run_dir_ / "tables" / "scores.csv", report::scores_csv(rows));
    io::write_file_atomic(run_dir_ / "tables" / "wer.csv", report::wer_csv(wers));
    io::write_file_atomic(run_dir_ / "tables" / "wer_transcripts.csv", wer_detail);
    summary_.stages["score"].ran = 1;
    log_->info("scores written: {} rows", rows.size());
  }

  std::vector<report::ScoreRow> score_variant(const VariantKey& key) const {
    std::vector<report::ScoreRow> rows;
    const auto outputs = load_outputs(key);
    auto output_of = [&](const TaskInstance& inst) -> const std::string& {
      auto it = outputs.find(inst.id);
      if (it == outputs.end()) throw NotFoundError("no output for instance " + inst.id);
      return it->second;
    };
    auto want = [&](const std::string& m) { return std::find(cfg_.metrics.begin(), cfg_.metrics.end(), m) != cfg_.metrics.end(); };
    switch (cfg_.task) {
      case TaskKind::kSummarization:
        for (const auto& inst : dataset_.instances) {
          const auto& ref = *inst.reference_summary;
          const std::pair<const char*, metrics::RougeOrder> orders[] = {
              {"rouge1", metrics::RougeOrder::k1}, {"rouge2", metrics::RougeOrder::k2}, {"rougeL", metrics::RougeOrder::kL}};
          for (const auto& [name, order] : orders)
            if (want(name)) rows.push_back({key, inst.id, name, metrics::rouge(output_of(inst), ref, order)});
        }
        break;
      case TaskKind::kQuestionAnswering:
        for (const auto& inst : dataset_.instances) {
          const std::pair<const char*, metrics::QaMode> modes[] = {
              {"exact", metrics::QaMode::kExact}, {"f1", metrics::QaMode::kF1}, {"fuzzy", metrics::QaMode::kFuzzy}};
          for (const auto& [name, mode] : modes)
            if (want(name)) rows.push_back({key, inst.id, name, metrics::qa_match(output_of(inst), inst.answers, mode)});
        }
        break;
      case TaskKind::kClassification: {
        // accuracy per utterance instance; macro-F1 per transcript
        std::map<std::string, std::pair<std::vector<std::string>, std::vector<std::string>>> by_transcript;
        for (const auto& inst : dataset_.instances) {
          const auto& pred = output_of(inst);
          if (want("accuracy")) rows.push_back({key, inst.id, "accuracy", pred == *inst.gold_label ? 1.0 : 0.0});
          by_transcript[inst.transcript_id].first.push_back(pred);
          by_transcript[inst.transcript_id].second.push_back(*inst.gold_label);
        }
        if (want("macro_f1"))
          for (const auto& [tid, pg] : by_transcript)
            rows.push_back({key, tid, "macro_f1",
                            metrics::classification_scores(pg.first, pg.second, dataset_.label_set).macro_f1});
        break;
      }
    }
    return rows;
  }

  void append_pairwise(std::vector<report::ScoreRow>& rows) const {
    for (const auto& inst : dataset_.instances) {
      const auto nc = json::parse(io::read_file(tournament_path("non_cleaned", inst.id)));
      for (const auto& [k, v] : nc.at("points").items())
        rows.push_back({VariantKey::parse(k), inst.id, "pairwise", v.get<double>()});
      for (auto t : cfg_.techniques) {
        const auto c = json::parse(io::read_file(tournament_path(std::string("cleaned_") + to_string(t), inst.id)));
        for (const auto& [k, v] : c.at("points").items()) {
          const auto key = VariantKey::parse(k);
          if (!key.is_ref() && key.cleaning() != 0) rows.push_back({key, inst.id, "pairwise", v.get<double>()});
        }
      }
    }
  }

  report::ReportBundle emit() {
    json extra{{"dataset", fs::absolute(cfg_.dataset).lexically_normal().string()},
               {"task", to_string(cfg_.task)},
               {"noise_backend", cfg_.noise == NoiseBackend::kText ? "text" : "audio"},
               {"variants", all_variants().size()},
               {"sub_seed_labels",
                {"corrupt/<transcript>/<utterance>", "room/<transcript>/<utterance>",
                 "noise/<transcript>/<utterance>", "background/<transcript>/<utterance>",
                 "judge/<instance>/<a>/<b>", "mock/<adapter-id>"}}};
    try {
      auto b = report::emit_report(report_spec(cfg_), run_dir_, extra);
      summary_.stages["report"].ran = 1;
      return b;
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError("report", "-", e.what());
    }
  }

  RunConfig cfg_;
  fs::path run_dir_;
  VariantStore store_;
  std::unique_ptr<RunState> state_;
  std::shared_ptr<spdlog::logger> log_;
  std::shared_ptr<mocks::AudioManifest> manifest_;
  Dataset dataset_;
  std::unique_ptr<adapters::Adapter> tts_, asr_, task_, judge_;
  RunSummary summary_;
};

/// `endow report`: rebuilds report/ from the tables of a finished run.
inline report::ReportBundle rebuild_report(const fs::path& run_dir) {
  const auto cfg = load_config(run_dir / "config.json");
  return report::emit_report(Pipeline::report_spec(cfg), run_dir);
}

}  // namespace endow
