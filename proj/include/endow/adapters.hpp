#pragma once

// External model adapters (TTS, ASR, task model, pairwise judge).
//
// Wire protocol: one JSON object per line. The request
//
//   {"adapter_kind":"TASK","request_id":"r17","payload":{...},"config":{...}}
//
// is answered by
//
//   {"request_id":"r17","status":"ok","payload":{...}}
//   {"request_id":"r17","status":"error","message":"..."}
//
// over a long-lived subprocess's stdin/stdout, or as the body of an HTTP POST
// and its response. Payloads by kind:
//
//   TTS    {text, output_path}                        -> {audio_path}
//   ASR    {audio_path}                               -> {text}
//   TASK   {task, transcript:[{speaker_id,text}],
//           query | question | utterance_index+labels} -> {output}
//   JUDGE  {reference, candidate_1, candidate_2,
//           query?}                                   -> {verdict: "1"|"2"|"tie"}
//
// "config" is the adapter's opaque configuration (prompt texts and the like),
// forwarded untouched.

#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "endow/error.hpp"
#include "endow/io.hpp"

extern char** environ;

namespace endow::adapters {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum class AdapterKind { kTts, kAsr, kTask, kJudge };

inline const char* to_string(AdapterKind k) {
  switch (k) {
    case AdapterKind::kTts: return "TTS";
    case AdapterKind::kAsr: return "ASR";
    case AdapterKind::kTask: return "TASK";
    case AdapterKind::kJudge: return "JUDGE";
  }
  return "?";
}

inline AdapterKind parse_kind(std::string_view s) {
  if (s == "TTS" || s == "tts") return AdapterKind::kTts;
  if (s == "ASR" || s == "asr") return AdapterKind::kAsr;
  if (s == "TASK" || s == "task") return AdapterKind::kTask;
  if (s == "JUDGE" || s == "judge") return AdapterKind::kJudge;
  throw FormatError("unknown adapter kind '" + std::string(s) + "'");
}

struct Request {
  AdapterKind kind = AdapterKind::kTask;
  std::string request_id;
  json payload = json::object();
  json config = json::object();

  bool operator==(const Request&) const = default;
};

struct Response {
  std::string request_id;
  bool ok = true;
  std::string message;
  json payload = json::object();

  bool operator==(const Response&) const = default;
};

// ---------------------------------------------------------------------------
// Schemas

namespace detail {

inline void require_string(const json& p, const char* field, const char* what) {
  if (!p.is_object() || !p.contains(field) || !p.at(field).is_string())
    throw FormatError(std::string(what) + ": field '" + field + "' must be a string");
}

}  // namespace detail

inline void validate_request_payload(AdapterKind kind, const json& p) {
  if (!p.is_object()) throw FormatError("request payload must be an object");
  switch (kind) {
    case AdapterKind::kTts:
      detail::require_string(p, "text", "TTS request");
      detail::require_string(p, "output_path", "TTS request");
      break;
    case AdapterKind::kAsr:
      detail::require_string(p, "audio_path", "ASR request");
      break;
    case AdapterKind::kTask: {
      detail::require_string(p, "task", "TASK request");
      if (!p.contains("transcript") || !p.at("transcript").is_array())
        throw FormatError("TASK request: field 'transcript' must be an array");
      for (const auto& u : p.at("transcript")) {
        detail::require_string(u, "speaker_id", "TASK request utterance");
        detail::require_string(u, "text", "TASK request utterance");
      }
      const auto task = p.at("task").get<std::string>();
      if (task == "summarization") {
        detail::require_string(p, "query", "TASK request");
      } else if (task == "question_answering") {
        detail::require_string(p, "question", "TASK request");
      } else if (task == "classification") {
        if (!p.contains("utterance_index") || !p.at("utterance_index").is_number_unsigned())
          throw FormatError("TASK request: field 'utterance_index' must be a non-negative integer");
        if (!p.contains("labels") || !p.at("labels").is_array())
          throw FormatError("TASK request: field 'labels' must be an array");
      } else {
        throw FormatError("TASK request: unknown task '" + task + "'");
      }
      break;
    }
    case AdapterKind::kJudge:
      detail::require_string(p, "reference", "JUDGE request");
      detail::require_string(p, "candidate_1", "JUDGE request");
      detail::require_string(p, "candidate_2", "JUDGE request");
      if (p.contains("query") && !p.at("query").is_string() && !p.at("query").is_null())
        throw FormatError("JUDGE request: field 'query' must be a string");
      break;
  }
}

inline void validate_response_payload(AdapterKind kind, const json& p) {
  switch (kind) {
    case AdapterKind::kTts: detail::require_string(p, "audio_path", "TTS response"); break;
    case AdapterKind::kAsr: detail::require_string(p, "text", "ASR response"); break;
    case AdapterKind::kTask: detail::require_string(p, "output", "TASK response"); break;
    case AdapterKind::kJudge: {
      detail::require_string(p, "verdict", "JUDGE response");
      const auto v = p.at("verdict").get<std::string>();
      if (v != "1" && v != "2" && v != "tie")
        throw FormatError("JUDGE response: verdict must be 1, 2 or tie, got '" + v + "'");
      break;
    }
  }
}

inline json to_json(const Request& r) {
  return {{"adapter_kind", to_string(r.kind)}, {"request_id", r.request_id}, {"payload", r.payload}, {"config", r.config}};
}

inline json to_json(const Response& r) {
  json j{{"request_id", r.request_id}, {"status", r.ok ? "ok" : "error"}};
  if (r.ok) j["payload"] = r.payload;
  else j["message"] = r.message;
  return j;
}

inline Request request_from_json(const json& j) {
  try {
    Request r;
    r.kind = parse_kind(j.at("adapter_kind").get<std::string>());
    r.request_id = j.at("request_id").get<std::string>();
    r.payload = j.at("payload");
    r.config = j.value("config", json::object());
    validate_request_payload(r.kind, r.payload);
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed request: ") + e.what());
  }
}

inline Response response_from_json(const json& j) {
  try {
    Response r;
    r.request_id = j.at("request_id").get<std::string>();
    const auto status = j.at("status").get<std::string>();
    if (status == "ok") {
      r.ok = true;
      r.payload = j.at("payload");
    } else if (status == "error") {
      r.ok = false;
      r.message = j.value("message", std::string("unspecified adapter error"));
    } else {
      throw FormatError("status must be ok or error, got '" + status + "'");
    }
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed response: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Backends

/// One request/response exchange. Throws TransportError when no well-formed
/// response arrives; adapter-reported errors come back as !ok responses.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual Response exchange(const Request& request) = 0;
  virtual std::string describe() const = 0;
};

/// In-process backend around a payload function; used by the mocks. An
/// AdapterError thrown by the function becomes an error response.
class FunctionBackend final : public Backend {
 public:
  using Fn = std::function<json(const Request&)>;
  FunctionBackend(std::string name, Fn fn) : name_(std::move(name)), fn_(std::move(fn)) {}

  Response exchange(const Request& request) override {
    try {
      return Response{request.request_id, true, {}, fn_(request)};
    } catch (const AdapterError& e) {
      return Response{request.request_id, false, e.what(), json::object()};
    }
  }
  std::string describe() const override { return "mock:" + name_; }

 private:
  std::string name_;
  Fn fn_;
};

/// Long-lived child processes (`/bin/sh -c command`) speaking the line
/// protocol on stdin/stdout. Up to `max_processes` children serve requests
/// concurrently; a child that fails mid-exchange is killed and replaced on
/// the next request.
class SubprocessBackend final : public Backend {
 public:
  SubprocessBackend(std::string command, std::size_t max_processes = 1,
                    std::chrono::milliseconds timeout = std::chrono::seconds(300))
      : command_(std::move(command)), max_processes_(std::max<std::size_t>(1, max_processes)), timeout_(timeout) {}

  ~SubprocessBackend() override {
    std::lock_guard lock(mu_);
    for (auto& p : idle_) terminate(*p);
  }

  Response exchange(const Request& request) override {
    auto proc = acquire();
    try {
      auto line = to_json(request).dump();
      line.push_back('\n');
      write_all(*proc, line);
      const auto reply = read_line(*proc);
      Response r;
      try {
        r = response_from_json(json::parse(reply));
      } catch (const json::exception& e) {
        throw TransportError("unparseable reply from '" + command_ + "': " + e.what());
      } catch (const FormatError& e) {
        throw TransportError("ill-formed reply from '" + command_ + "': " + e.what());
      }
      release(std::move(proc));
      return r;
    } catch (...) {
      terminate(*proc);
      release(nullptr);
      throw;
    }
  }

  std::string describe() const override { return "subprocess:" + command_; }

 private:
  struct Proc {
    pid_t pid = -1;
    int fd = -1;
    std::string buffer;
  };

  std::unique_ptr<Proc> acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !idle_.empty() || live_ < max_processes_; });
    if (!idle_.empty()) {
      auto p = std::move(idle_.back());
      idle_.pop_back();
      return p;
    }
    ++live_;
    lock.unlock();
    try {
      return spawn();
    } catch (...) {
      lock.lock();
      --live_;
      cv_.notify_one();
      throw;
    }
  }

  void release(std::unique_ptr<Proc> p) {
    std::lock_guard lock(mu_);
    if (p) idle_.push_back(std::move(p));
    else --live_;
    cv_.notify_one();
  }

  std::unique_ptr<Proc> spawn() {
    int sv[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0)
      throw TransportError(std::string("socketpair: ") + std::strerror(errno));
    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_adddup2(&fa, sv[1], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&fa, sv[1], STDOUT_FILENO);
    const char* argv[] = {"sh", "-c", command_.c_str(), nullptr};
    pid_t pid = -1;
    const int rc = ::posix_spawn(&pid, "/bin/sh", &fa, nullptr, const_cast<char**>(argv), environ);
    posix_spawn_file_actions_destroy(&fa);
    ::close(sv[1]);
    if (rc != 0) {
      ::close(sv[0]);
      throw TransportError("cannot spawn '" + command_ + "': " + std::strerror(rc));
    }
    auto p = std::make_unique<Proc>();
    p->pid = pid;
    p->fd = sv[0];
    return p;
  }

  void write_all(Proc& p, const std::string& data) {
    std::size_t off = 0;
    while (off < data.size()) {
      const auto n = ::send(p.fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError("write to '" + command_ + "' failed: " + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::string read_line(Proc& p) {
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    for (;;) {
      if (const auto nl = p.buffer.find('\n'); nl != std::string::npos) {
        auto line = p.buffer.substr(0, nl);
        p.buffer.erase(0, nl + 1);
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw TransportError("timed out waiting for '" + command_ + "'");
      pollfd pfd{p.fd, POLLIN, 0};
      const int pr = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
      if (pr < 0 && errno == EINTR) continue;
      if (pr < 0) throw TransportError(std::string("poll: ") + std::strerror(errno));
      if (pr == 0) continue;
      char buf[65536];
      const auto n = ::recv(p.fd, buf, sizeof buf, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw TransportError("adapter process '" + command_ + "' closed its output");
      p.buffer.append(buf, static_cast<std::size_t>(n));
    }
  }

  static void terminate(Proc& p) {
    if (p.fd >= 0) ::close(p.fd);
    p.fd = -1;
    if (p.pid > 0) {
      // Closing the socket gives the child EOF; give it a moment, then kill.
      for (int i = 0; i < 50; ++i) {
        if (::waitpid(p.pid, nullptr, WNOHANG) == p.pid) {
          p.pid = -1;
          return;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
      }
      ::kill(p.pid, SIGKILL);
      ::waitpid(p.pid, nullptr, 0);
      p.pid = -1;
    }
  }

  std::string command_;
  std::size_t max_processes_;
  std::chrono::milliseconds timeout_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<std::unique_ptr<Proc>> idle_;
  std::size_t live_ = 0;
};

/// HTTP POST of the request object to `url` (http://host[:port]/path); the
/// response body is the response object.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(std::string url, std::chrono::milliseconds timeout = std::chrono::seconds(300))
      : url_(std::move(url)), timeout_(timeout) {
    const auto scheme_end = url_.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("adapter URL '" + url_ + "' has no scheme");
    const auto path_start = url_.find('/', scheme_end + 3);
    base_ = url_.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : url_.substr(path_start);
  }

  Response exchange(const Request& request) override {
    httplib::Client cli(base_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_).count();
    cli.set_connection_timeout(std::max<long long>(1, secs), 0);
    cli.set_read_timeout(std::max<long long>(1, secs), 0);
    auto res = cli.Post(path_, to_json(request).dump(), "application/json");
    if (!res) throw TransportError("POST " + url_ + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw TransportError("POST " + url_ + " returned HTTP " + std::to_string(res->status));
    try {
      return response_from_json(json::parse(res->body));
    } catch (const json::exception& e) {
      throw TransportError("unparseable reply from " + url_ + ": " + e.what());
    } catch (const FormatError& e) {
      throw TransportError("ill-formed reply from " + url_ + ": " + e.what());
    }
  }

  std::string describe() const override { return "http:" + url_; }

 private:
  std::string url_, base_, path_;
  std::chrono::milliseconds timeout_;
};

// ---------------------------------------------------------------------------
// Adapter: retries, concurrency bound, content-addressed cache

struct AdapterOptions {
  int retries = 2;  // extra attempts after a transport failure
  std::chrono::milliseconds retry_backoff{100};
  std::size_t max_in_flight = 4;
  std::optional<fs::path> cache_dir;  // cache/<adapter-id>/ lives under it
  json config = json::object();
};

class Adapter {
 public:
  Adapter(std::string id, AdapterKind kind, std::shared_ptr<Backend> backend, AdapterOptions opts = {})
      : id_(std::move(id)),
        kind_(kind),
        backend_(std::move(backend)),
        opts_(std::move(opts)),
        slots_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, opts_.max_in_flight))) {
    if (id_.empty() || id_.find_first_of("/\\") != std::string::npos)
      throw ConfigError("adapter id '" + id_ + "' must be non-empty and contain no path separators");
  }

  const std::string& id() const { return id_; }
  AdapterKind kind() const { return kind_; }
  const Backend& backend() const { return *backend_; }

  /// SHA-256 over the canonical JSON of adapter identity, kind, config and
  /// payload (object keys sorted).
  std::string cache_key(const json& payload) const {
    const json key{{"adapter", id_}, {"kind", to_string(kind_)}, {"config", opts_.config}, {"payload", payload}};
    return io::sha256_hex(key.dump());
  }

  std::optional<fs::path> cache_path(const json& payload) const {
    if (!opts_.cache_dir) return std::nullopt;
    return *opts_.cache_dir / id_ / (cache_key(payload) + ".json");
  }

  /// Returns the ok payload. Throws AdapterError on an error response or an
  /// ill-formed payload, TransportError once retries are exhausted.
  /// `refresh` skips the cache lookup (the fresh response replaces the
  /// entry), for responses whose side effects went missing.
  json call(const json& payload, bool refresh = false) {
    validate_request_payload(kind_, payload);
    const auto key = cache_key(payload);
    if (auto cached = refresh ? std::nullopt : read_cache(payload)) {
      ++cache_hits_;
      return *cached;
    }

    std::promise<json> promise;
    std::shared_future<json> pending;
    bool owner = false;
    {
      std::lock_guard lock(mu_);
      if (auto it = in_flight_.find(key); it != in_flight_.end()) {
        pending = it->second;
      } else {
        pending = promise.get_future().share();
        in_flight_.emplace(key, pending);
        owner = true;
      }
    }
    if (!owner) {
      ++cache_hits_;
      return pending.get();
    }
    try {
      auto result = live_call(payload);
      write_cache(payload, result);
      promise.set_value(result);
      finish(key);
      return result;
    } catch (...) {
      promise.set_exception(std::current_exception());
      finish(key);
      throw;
    }
  }

  std::size_t live_calls() const { return live_calls_.load(); }
  std::size_t cache_hits() const { return cache_hits_.load(); }

 private:
  json live_call(const json& payload) {
    const Request req{kind_, id_ + "-" + std::to_string(++request_counter_), payload, opts_.config};
    std::string last_error;
    for (int attempt = 0; attempt <= opts_.retries; ++attempt) {
      if (attempt > 0 && opts_.retry_backoff.count() > 0) std::this_thread::sleep_for(opts_.retry_backoff * attempt);
      Response resp;
      {
        slots_.acquire();
        struct Release {
          std::counting_semaphore<>& s;
          ~Release() { s.release(); }
        } release{slots_};
        try {
          ++live_calls_;
          resp = backend_->exchange(req);
        } catch (const TransportError& e) {
          last_error = e.what();
          continue;
        }
      }
      if (resp.request_id != req.request_id) {
        last_error = "response id '" + resp.request_id + "' does not match request id '" + req.request_id + "'";
        continue;
      }
      if (!resp.ok) throw AdapterError(id_ + ": adapter reported error: " + resp.message);
      try {
        validate_response_payload(kind_, resp.payload);
      } catch (const FormatError& e) {
        throw AdapterError(id_ + ": schema-invalid response: " + e.what());
      }
      return resp.payload;
    }
    throw TransportError(id_ + " (" + backend_->describe() + "): giving up after " +
                         std::to_string(opts_.retries + 1) + " attempts: " + last_error);
  }

  std::optional<json> read_cache(const json& payload) const {
    const auto p = cache_path(payload);
    if (!p || !fs::exists(*p)) return std::nullopt;
    try {
      auto j = json::parse(io::read_file(*p));
      validate_response_payload(kind_, j.at("response"));
      return j.at("response");
    } catch (const std::exception&) {
      return std::nullopt;  // unreadable entries are recomputed and overwritten
    }
  }

  void write_cache(const json& payload, const json& response) const {
    if (const auto p = cache_path(payload)) {
      const json entry{{"adapter", id_}, {"kind", to_string(kind_)}, {"payload", payload}, {"response", response}};
      io::write_file_atomic(*p, entry.dump() + "\n");
    }
  }

  void finish(const std::string& key) {
    std::lock_guard lock(mu_);
    in_flight_.erase(key);
  }

  std::string id_;
  AdapterKind kind_;
  std::shared_ptr<Backend> backend_;
  AdapterOptions opts_;
  std::counting_semaphore<> slots_;
  std::mutex mu_;
  std::unordered_map<std::string, std::shared_future<json>> in_flight_;
  std::atomic<std::size_t> live_calls_{0};
  std::atomic<std::size_t> cache_hits_{0};
  std::atomic<std::uint64_t> request_counter_{0};
};

}  // namespace endow::adapters
