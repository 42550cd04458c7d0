#pragma once

// Job service: durable sessions, a FIFO worker pool running pipeline phases,
// and the JSON-over-HTTP front end.
//
// Layout under the persistence root:
//   sessions/<sid>/events.jsonl          append-only session log
//   sessions/<sid>/artifacts/<aid>/      foreground or composite phase output
//   sessions/<sid>/layersets/<lsid>/     see store.hpp

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <regex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "taue/config.hpp"
#include "taue/pipeline.hpp"
#include "taue/store.hpp"

namespace taue {

enum class JobState { queued, running, done, error };

inline const char* to_string(JobState s) {
  switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::error: return "error";
  }
  return "?";
}

inline constexpr const char* kJobPhases[] = {"foreground", "composite", "background", "full", "replace_bg", "multi_object"};

struct ServiceOptions {
  std::filesystem::path home;
  std::size_t workers = 1;
};

// Optional fields of a job submission besides phase and config delta.
struct JobInputs {
  std::string source;  // artifact or layer set to build on; latest when empty
  std::ptrdiff_t dx = 0;
  std::ptrdiff_t dy = 0;
};

class JobService {
 public:
  explicit JobService(ServiceOptions opt) : opt_(std::move(opt)) {
    if (opt_.home.empty()) throw ConfigError("home", "persistence root is not set");
    if (opt_.workers == 0) throw ConfigError("workers", "must be >= 1");
    std::filesystem::create_directories(opt_.home / "sessions");
    restore();
    for (std::size_t i = 0; i < opt_.workers; ++i) workers_.emplace_back([this] { work(); });
  }

  JobService(const JobService&) = delete;
  JobService& operator=(const JobService&) = delete;
  ~JobService() { shutdown(); }

  // Validates the defaults as far as they go; prompts and boxes may come later.
  std::string create_session(const nlohmann::json& defaults = nlohmann::json::object()) {
    PipelineConfig cfg = merge_config(PipelineConfig{}, defaults.is_null() ? nlohmann::json::object() : defaults);
    validate_partial(cfg);
    auto s = std::make_shared<Session>();
    s->id = new_id();
    s->dir = opt_.home / "sessions" / s->id;
    s->defaults = to_json(cfg);
    std::filesystem::create_directories(s->dir);
    append_event(*s, {{"type", "session"}, {"id", s->id}, {"defaults", s->defaults}});
    std::lock_guard lock(mu_);
    sessions_[s->id] = s;
    return s->id;
  }

  std::string submit(const std::string& session_id, const std::string& phase, const nlohmann::json& delta,
                     const JobInputs& in = {}) {
    if (stopping_) throw IoError("service is shutting down");
    auto s = session(session_id);
    if (std::find(std::begin(kJobPhases), std::end(kJobPhases), phase) == std::end(kJobPhases)) {
      throw ConfigError("phase", "unknown phase '" + phase + "'");
    }
    auto job = std::make_shared<Job>();
    job->id = new_id();
    job->session = s->id;
    job->phase = phase;
    job->inputs = in;
    {
      std::lock_guard lock(s->mu);
      PipelineConfig base = config_from_snapshot(s->defaults);
      if (phase == "replace_bg") {
        const std::string ls = in.source.empty() ? s->latest_layerset : in.source;
        if (ls.empty()) throw DependencyError("replace_bg needs a layer set; none exists in this session");
        if (!s->layersets.count(ls)) throw DependencyError("replace_bg: layer set '" + ls + "' not found in this session");
        job->inputs.source = ls;
        base = load_layerset(s->dir / "layersets" / ls).config;
      }
      PipelineConfig cfg = merge_config(base, delta.is_null() ? nlohmann::json::object() : delta);
      validate(cfg);
      job->config = to_json(cfg);
      if (phase == "composite") job->inputs.source = require_artifact(*s, in.source, "foreground");
      if (phase == "background") job->inputs.source = require_artifact(*s, in.source, "composite");
      append_event(*s, {{"type", "job"},
                        {"id", job->id},
                        {"phase", phase},
                        {"config", job->config},
                        {"source", job->inputs.source},
                        {"offset", {job->inputs.dx, job->inputs.dy}}});
      s->jobs.push_back(job->id);
    }
    {
      std::lock_guard lock(mu_);
      jobs_[job->id] = job;
      queue_.push_back(job);
    }
    cv_.notify_one();
    return job->id;
  }

  nlohmann::json get_job(const std::string& id) const {
    std::shared_ptr<Job> job;
    {
      std::lock_guard lock(mu_);
      const auto it = jobs_.find(id);
      if (it == jobs_.end()) throw NotFoundError("unknown job '" + id + "'");
      job = it->second;
    }
    return job->snapshot();
  }

  nlohmann::json get_session(const std::string& id) const {
    auto s = session(id);
    std::lock_guard lock(s->mu);
    nlohmann::json history = nlohmann::json::array();
    for (const auto& jid : s->jobs) {
      std::lock_guard g(mu_);
      if (auto it = jobs_.find(jid); it != jobs_.end()) history.push_back({{"job", jid}, {"phase", it->second->phase}, {"config", it->second->config}});
    }
    return {{"id", s->id},
            {"defaults", s->defaults},
            {"jobs", s->jobs},
            {"layersets", std::vector<std::string>(s->layersets.begin(), s->layersets.end())},
            {"artifacts", s->artifact_kind},
            {"config_history", history}};
  }

  // Stored PNG bytes of a layer; "mask" is the 1-bit object mask.
  std::vector<std::uint8_t> get_layer(const std::string& session_id, const std::string& lsid, const std::string& layer) const {
    static const std::map<std::string, std::string> files{
        {"foreground", "foreground.png"}, {"background", "background.png"}, {"composite", "composite.png"}, {"mask", "mask_obj.png"}};
    const auto f = files.find(layer);
    if (f == files.end()) throw InvalidArgument("unknown layer '" + layer + "'");
    auto s = session(session_id);
    {
      std::lock_guard lock(s->mu);
      if (!s->layersets.count(lsid)) throw NotFoundError("unknown layer set '" + lsid + "'");
    }
    const auto raw = read_file_bytes((s->dir / "layersets" / lsid / f->second).string());
    std::vector<std::uint8_t> out(raw.size());
    std::memcpy(out.data(), raw.data(), raw.size());
    return out;
  }

  LayerSet get_layerset(const std::string& session_id, const std::string& lsid) const {
    auto s = session(session_id);
    {
      std::lock_guard lock(s->mu);
      if (!s->layersets.count(lsid)) throw NotFoundError("unknown layer set '" + lsid + "'");
    }
    return load_layerset(s->dir / "layersets" / lsid);
  }

  // Stops accepting work; the running jobs finish, queued ones are marked error.
  void shutdown() {
    {
      std::lock_guard lock(mu_);
      if (stopping_ && workers_.empty()) return;
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
    workers_.clear();
    std::deque<std::shared_ptr<Job>> left;
    {
      std::lock_guard lock(mu_);
      left.swap(queue_);
    }
    for (auto& job : left) fail(*job, "shutdown", "service shut down before the job started");
  }

  // Blocks until the job leaves queued/running or the timeout expires.
  nlohmann::json wait(const std::string& id, std::chrono::milliseconds timeout = std::chrono::seconds(60)) const {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      nlohmann::json j = get_job(id);
      if (j["state"] == "done" || j["state"] == "error" || std::chrono::steady_clock::now() > deadline) return j;
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
  }

  const std::filesystem::path& home() const noexcept { return opt_.home; }

 private:
  struct Session {
    std::string id;
    std::filesystem::path dir;
    nlohmann::json defaults;
    std::vector<std::string> jobs;
    std::set<std::string> layersets;
    std::map<std::string, std::string> artifact_kind;  // id -> foreground|composite
    std::string latest_foreground, latest_composite, latest_layerset;
    mutable std::mutex mu;
  };

  struct Job {
    std::string id, session, phase;
    nlohmann::json config;
    JobInputs inputs;
    mutable std::mutex mu;
    JobState state = JobState::queued;
    std::atomic<double> progress{0.0};
    nlohmann::json result, error;

    nlohmann::json snapshot() const {
      std::lock_guard lock(mu);
      return {{"id", id},
              {"session", session},
              {"phase", phase},
              {"state", to_string(state)},
              {"progress", state == JobState::done ? 1.0 : progress.load()},
              {"result", result},
              {"error", error},
              {"config", config}};
    }
  };

  static std::string new_id() {
    thread_local std::mt19937_64 gen{std::random_device{}() ^ (static_cast<std::uint64_t>(std::random_device{}()) << 32)};
    static const char* hex = "0123456789abcdef";
    std::string s(16, '0');
    std::uint64_t v = gen();
    for (auto& ch : s) {
      ch = hex[v & 15];
      v >>= 4;
    }
    return s;
  }

  // Fills the fields a session may legitimately leave open, then validates.
  static void validate_partial(PipelineConfig c) {
    if (c.prompt_fg.empty()) c.prompt_fg = "-";
    if (c.prompt_bg.empty()) c.prompt_bg = "-";
    if (c.boxes.empty() && c.width % kLatentScale == 0 && c.height % kLatentScale == 0 && c.width && c.height) {
      const double w = static_cast<double>(c.width / kLatentScale), h = static_cast<double>(c.height / kLatentScale);
      c.boxes.push_back({BoxSpec{w / 2, h / 2, w / 2, h / 2}, ""});
    }
    validate(c);
  }

  static PipelineConfig config_from_snapshot(const nlohmann::json& j) { return merge_config(PipelineConfig{}, j); }

  std::shared_ptr<Session> session(const std::string& id) const {
    std::lock_guard lock(mu_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFoundError("unknown session '" + id + "'");
    return it->second;
  }

  static std::string require_artifact(const Session& s, const std::string& requested, const std::string& kind) {
    const std::string id = requested.empty() ? (kind == "foreground" ? s.latest_foreground : s.latest_composite) : requested;
    if (id.empty()) throw DependencyError("missing " + kind + " bundle: run the " + kind + " phase first");
    const auto it = s.artifact_kind.find(id);
    if (it == s.artifact_kind.end() || it->second != kind) throw DependencyError("missing " + kind + " bundle '" + id + "'");
    return id;
  }

  static void append_event(const Session& s, const nlohmann::json& ev) {
    std::ofstream out(s.dir / "events.jsonl", std::ios::app);
    if (!out) throw IoError("cannot append to " + (s.dir / "events.jsonl").string());
    out << ev.dump() << '\n';
    out.flush();
    if (!out) throw IoError("short write to " + (s.dir / "events.jsonl").string());
  }

  void restore() {
    for (const auto& entry : std::filesystem::directory_iterator(opt_.home / "sessions")) {
      if (!entry.is_directory() || !std::filesystem::exists(entry.path() / "events.jsonl")) continue;
      auto s = std::make_shared<Session>();
      s->dir = entry.path();
      std::ifstream in(entry.path() / "events.jsonl");
      std::string line;
      std::vector<std::shared_ptr<Job>> unfinished;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json ev;
        try {
          ev = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
          continue;  // torn final line
        }
        const std::string type = ev.value("type", "");
        if (type == "session") {
          s->id = ev["id"];
          s->defaults = ev["defaults"];
        } else if (type == "job") {
          auto job = std::make_shared<Job>();
          job->id = ev["id"];
          job->session = s->id;
          job->phase = ev["phase"];
          job->config = ev["config"];
          job->inputs.source = ev.value("source", "");
          if (ev.contains("offset") && ev["offset"].is_array() && ev["offset"].size() == 2) {
            job->inputs.dx = ev["offset"][0].get<std::ptrdiff_t>();
            job->inputs.dy = ev["offset"][1].get<std::ptrdiff_t>();
          }
          s->jobs.push_back(job->id);
          jobs_[job->id] = job;
          unfinished.push_back(job);
        } else if (type == "job_done" || type == "job_error") {
          const auto it = jobs_.find(ev["id"].get<std::string>());
          if (it == jobs_.end()) continue;
          std::lock_guard lock(it->second->mu);
          it->second->state = type == "job_done" ? JobState::done : JobState::error;
          (type == "job_done" ? it->second->result : it->second->error) = ev[type == "job_done" ? "result" : "error"];
          if (type == "job_done") record_result(*s, it->second->result);
        }
      }
      if (s->id.empty()) continue;
      sessions_[s->id] = s;
      for (auto& job : unfinished) {
        bool pending = false;
        {
          std::lock_guard lock(job->mu);
          pending = job->state == JobState::queued || job->state == JobState::running;
        }
        if (pending) fail(*job, "restart", "interrupted by service restart");
      }
    }
  }

  static void record_result(Session& s, const nlohmann::json& result) {
    if (result.contains("artifact")) {
      const std::string id = result["artifact"], kind = result["kind"];
      s.artifact_kind[id] = kind;
      (kind == "foreground" ? s.latest_foreground : s.latest_composite) = id;
    }
    if (result.contains("layerset")) {
      s.layersets.insert(result["layerset"].get<std::string>());
      s.latest_layerset = result["layerset"];
    }
  }

  void fail(Job& job, const std::string& kind, const std::string& message, const std::string& phase = {},
            const std::string& path = {}) {
    nlohmann::json err{{"kind", kind}, {"message", message}};
    if (!phase.empty()) err["phase"] = phase;
    if (!path.empty()) err["path"] = path;
    {
      std::lock_guard lock(job.mu);
      job.state = JobState::error;
      job.error = err;
    }
    try {
      auto s = session(job.session);
      std::lock_guard lock(s->mu);
      append_event(*s, {{"type", "job_error"}, {"id", job.id}, {"error", err}});
    } catch (const Error&) {
    }
  }

  void work() {
    for (;;) {
      std::shared_ptr<Job> job;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
        if (stopping_) return;
        job = queue_.front();
        queue_.pop_front();
      }
      run(*job);
    }
  }

  void run(Job& job) {
    {
      std::lock_guard lock(job.mu);
      job.state = JobState::running;
    }
    try {
      nlohmann::json result = execute(job);
      auto s = session(job.session);
      {
        std::lock_guard lock(s->mu);
        append_event(*s, {{"type", "job_done"}, {"id", job.id}, {"result", result}});
        record_result(*s, result);
      }
      std::lock_guard lock(job.mu);
      job.result = std::move(result);
      job.state = JobState::done;
    } catch (const ConfigError& e) {
      fail(job, "config", e.what(), {}, e.path());
    } catch (const DependencyError& e) {
      fail(job, "dependency", e.what());
    } catch (const BackendError& e) {
      fail(job, "backend", e.detail(), e.phase());
    } catch (const std::exception& e) {
      fail(job, "internal", e.what());
    }
  }

  nlohmann::json execute(Job& job) {
    auto s = session(job.session);
    const PipelineConfig cfg = config_from_snapshot(job.config);
    auto backend = make_backend(cfg.backend, cfg.latent_shape());
    JobProgress progress;
    progress.sink = [&job](std::size_t done, std::size_t total) {
      const double f = static_cast<double>(done) / static_cast<double>(total);
      double cur = job.progress.load();
      while (f > cur && !job.progress.compare_exchange_weak(cur, f)) {
      }
    };
    const auto store_layerset = [&](const LayerSet& ls) {
      const std::string id = new_id();
      LayerSet copy = ls;
      copy.metadata["job"] = job.id;
      save_layerset(s->dir / "layersets" / id, copy);
      return nlohmann::json{{"layerset", id}};
    };

    if (job.phase == "full") {
      progress.phases = 3;
      return store_layerset(generate_layers(cfg, *backend, progress));
    }
    if (job.phase == "multi_object") {
      progress.phases = cfg.boxes.size() + 2;
      return store_layerset(place_multi_objects(cfg, *backend, progress));
    }
    if (job.phase == "replace_bg") {
      progress.phases = 2;
      const LayerSet base = load_layerset(s->dir / "layersets" / job.inputs.source);
      LayerSet ls = replace_background(cfg, *backend, foreground_of(base), cfg.prompt_bg, job.inputs.dx, job.inputs.dy, progress);
      ls.metadata["source_layerset"] = job.inputs.source;
      return store_layerset(ls);
    }
    detail::check_capabilities(cfg, *backend);
    progress.phases = 1;
    const PhaseOptions opts{false, progress.phase(0)};
    const std::string aid = new_id();
    const auto adir = s->dir / "artifacts" / aid;
    if (job.phase == "foreground") {
      ForegroundResult fg = generate_foreground(cfg, *backend, opts);
      std::filesystem::create_directories(adir);
      save_bundle(adir / "bundle", fg.bundle);
      save_png((adir / "image.png").string(), fg.image);
      save_png((adir / "box_mask.png").string(), mask_to_image(fg.box_mask), true);
      write_json_file(adir / "meta.json", {{"kind", "foreground"}, {"job", job.id}, {"tau_bg", fg.tau_bg}, {"warnings", fg.warnings}});
      return {{"artifact", aid}, {"kind", "foreground"}, {"bundle_checksum", checksum(fg.bundle)}};
    }
    const auto fdir = [&](const std::string& id) { return s->dir / "artifacts" / id; };
    if (job.phase == "composite") {
      const SeedlingBundle fg = load_bundle(fdir(job.inputs.source) / "bundle");
      CompositeResult comp = generate_composite(cfg, *backend, fg, opts);
      std::filesystem::create_directories(adir);
      save_bundle(adir / "bundle", comp.bundle);
      save_png((adir / "image.png").string(), comp.image);
      write_json_file(adir / "meta.json", {{"kind", "composite"},
                                           {"job", job.id},
                                           {"foreground", job.inputs.source},
                                           {"hooked", comp.hooked},
                                           {"warnings", comp.warnings}});
      return {{"artifact", aid}, {"kind", "composite"}, {"bundle_checksum", checksum(comp.bundle)}};
    }
    // background: completes a layer set from the composite and its foreground.
    const auto cdir = fdir(job.inputs.source);
    const nlohmann::json cmeta = parse_json_file((cdir / "meta.json").string());
    const std::string fg_id = cmeta["foreground"];
    CompositeResult comp;
    comp.bundle = load_bundle(cdir / "bundle");
    comp.image = load_png((cdir / "image.png").string());
    comp.m_obj = *comp.bundle.mask;
    comp.hooked = cmeta.value("hooked", false);
    comp.warnings = cmeta.value("warnings", std::vector<std::string>{});
    BackgroundResult bg = generate_background(cfg, *backend, comp.bundle, opts);
    const SeedlingBundle fg_bundle = load_bundle(fdir(fg_id) / "bundle");
    const Image fg_image = load_png((fdir(fg_id) / "image.png").string());
    const BoxMask box_mask = image_to_mask<BoxMaskTag>(load_png((fdir(fg_id) / "box_mask.png").string()));
    LayerSet ls = detail::assemble(cfg, *backend, fg_image, box_mask, fg_bundle, comp, bg, {}, "generate_layers");
    ls.metadata["artifacts"] = {{"foreground", fg_id}, {"composite", job.inputs.source}};
    return store_layerset(ls);
  }

  ServiceOptions opt_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::deque<std::shared_ptr<Job>> queue_;
  std::vector<std::thread> workers_;
  std::atomic<bool> stopping_{false};
};

// ---------------------------------------------------------------------------
// HTTP front end.
// ---------------------------------------------------------------------------

namespace detail {

inline void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message,
                       const std::string& path = {}) {
  nlohmann::json err{{"kind", kind}, {"message", message}};
  if (!path.empty()) err["path"] = path;
  send_json(res, status, {{"error", err}});
}

template <typename F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    send_error(res, 400, "config", e.what(), e.path());
  } catch (const InvalidArgument& e) {
    send_error(res, 400, "invalid", e.what());
  } catch (const NotFoundError& e) {
    send_error(res, 404, "not_found", e.what());
  } catch (const DependencyError& e) {
    send_error(res, 409, "dependency", e.what());
  } catch (const nlohmann::json::exception& e) {
    send_error(res, 400, "invalid", std::string("malformed request body: ") + e.what());
  } catch (const IoError& e) {
    send_error(res, 503, "io", e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

inline nlohmann::json body_json(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  nlohmann::json j = nlohmann::json::parse(req.body);
  if (!j.is_object()) throw InvalidArgument("request body must be a JSON object");
  return j;
}

}  // namespace detail

inline void mount_routes(httplib::Server& svr, JobService& service) {
  using detail::guarded;
  using detail::send_json;
  svr.set_post_routing_handler([](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
  });
  svr.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  svr.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"status", "ok"}}); });

  svr.Post("/sessions", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const nlohmann::json body = detail::body_json(req);
      for (const auto& [k, _] : body.items())
        if (k != "config") throw ConfigError(k, "unknown key");
      const std::string id = service.create_session(body.value("config", nlohmann::json::object()));
      send_json(res, 201, {{"session_id", id}});
    });
  });

  svr.Get(R"(/sessions/([0-9a-f]+))", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, service.get_session(req.matches[1])); });
  });

  svr.Post(R"(/sessions/([0-9a-f]+)/jobs)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const nlohmann::json body = detail::body_json(req);
      for (const auto& [k, _] : body.items())
        if (k != "phase" && k != "config" && k != "source" && k != "offset") throw ConfigError(k, "unknown key");
      if (!body.contains("phase") || !body["phase"].is_string()) throw ConfigError("phase", "required string");
      JobInputs in;
      if (body.contains("source")) in.source = body["source"].get<std::string>();
      if (body.contains("offset")) {
        const auto& o = body["offset"];
        if (!o.is_array() || o.size() != 2 || !o[0].is_number_integer() || !o[1].is_number_integer()) {
          throw ConfigError("offset", "expected [dx, dy] integers");
        }
        in.dx = o[0].get<std::ptrdiff_t>();
        in.dy = o[1].get<std::ptrdiff_t>();
      }
      const std::string id = service.submit(req.matches[1], body["phase"], body.value("config", nlohmann::json::object()), in);
      send_json(res, 202, {{"job_id", id}});
    });
  });

  svr.Get(R"(/jobs/([0-9a-f]+))", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, service.get_job(req.matches[1])); });
  });

  svr.Get(R"(/sessions/([0-9a-f]+)/layersets/([0-9a-f]+)/([A-Za-z_]+))", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto bytes = service.get_layer(req.matches[1], req.matches[2], req.matches[3]);
      res.status = 200;
      res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
    });
  });
}

// Binds, serves on a background thread, and shuts the job service down on stop().
class HttpServer {
 public:
  explicit HttpServer(JobService& service) : service_(service) {
    mount_routes(svr_, service_);
    // The library default enables SO_REUSEPORT, which lets a second server share a busy port.
    svr_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
  }
  ~HttpServer() { stop(); }

  // Returns false when the address cannot be bound. Port 0 picks a free port.
  bool start(const std::string& host, int port) {
    if (port == 0) {
      port_ = svr_.bind_to_any_port(host);
      if (port_ < 0) return false;
    } else {
      if (!svr_.bind_to_port(host, port)) return false;
      port_ = port;
    }
    thread_ = std::thread([this] { svr_.listen_after_bind(); });
    svr_.wait_until_ready();
    return true;
  }

  void stop() {
    if (thread_.joinable()) {
      svr_.stop();
      thread_.join();
    }
  }

  int port() const noexcept { return port_; }

 private:
  JobService& service_;
  httplib::Server svr_;
  std::thread thread_;
  int port_ = -1;
};

// "host:port" with the port optional.
inline std::pair<std::string, int> parse_address(const std::string& addr, int default_port = 8080) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) return {addr.empty() ? "127.0.0.1" : addr, default_port};
  const std::string host = addr.substr(0, colon);
  int port = 0;
  try {
    std::size_t used = 0;
    port = std::stoi(addr.substr(colon + 1), &used);
    if (used != addr.size() - colon - 1) throw std::invalid_argument("trailing characters");
  } catch (const std::exception&) {
    throw ConfigError("addr", "invalid port in '" + addr + "'");
  }
  if (port < 0 || port > 65535) throw ConfigError("addr", "port out of range");
  return {host.empty() ? "127.0.0.1" : host, port};
}

}  // namespace taue
