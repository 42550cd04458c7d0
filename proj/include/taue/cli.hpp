#pragma once

// Command implementations behind the `taue` tool. Each returns a process exit
// code: 0 ok, 2 configuration, 3 backend, 4 environment (I/O, port in use).

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <future>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "taue/config.hpp"
#include "taue/metrics.hpp"
#include "taue/pipeline.hpp"
#include "taue/service.hpp"
#include "taue/store.hpp"

namespace taue {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitBackend = 3, kExitEnvironment = 4 };

// Config file of the tool: every PipelineConfig field plus the sections below.
struct CliConfig {
  PipelineConfig pipeline;
  std::string output_dir = "taue_out";
  std::vector<double> lambdas{0.0, 0.5, 1.0, 2.0};
  std::string scorer_command;
  std::vector<std::string> scorer_columns;
  std::string addr = "127.0.0.1:8080";
  std::size_t workers = 1;
};

inline nlohmann::json to_json(const CliConfig& c) {
  nlohmann::json j = to_json(c.pipeline);
  j["output_dir"] = c.output_dir;
  j["ablation"] = {{"lambdas", c.lambdas}};
  j["scorer"] = {{"command", c.scorer_command}, {"columns", c.scorer_columns}};
  j["service"] = {{"addr", c.addr}, {"workers", c.workers}};
  return j;
}

inline CliConfig cli_config_from_json(const nlohmann::json& j) {
  CliConfig c;
  c.pipeline = merge_config(PipelineConfig{}, j, {"output_dir", "ablation", "scorer", "service"});
  detail::read_field(j, "", "output_dir", c.output_dir);
  if (j.contains("ablation")) {
    detail::reject_unknown(j["ablation"], "ablation", {"lambdas"});
    if (j["ablation"].contains("lambdas")) {
      const auto& l = j["ablation"]["lambdas"];
      if (!l.is_array() || l.empty()) throw ConfigError("ablation.lambdas", "expected a non-empty array of numbers");
      c.lambdas.clear();
      for (std::size_t i = 0; i < l.size(); ++i) {
        if (!l[i].is_number()) throw ConfigError("ablation.lambdas[" + std::to_string(i) + "]", "expected a number");
        c.lambdas.push_back(l[i].get<double>());
      }
    }
  }
  if (j.contains("scorer")) {
    detail::reject_unknown(j["scorer"], "scorer", {"command", "columns"});
    detail::read_field(j["scorer"], "scorer", "command", c.scorer_command);
    if (j["scorer"].contains("columns")) {
      const auto& cols = j["scorer"]["columns"];
      if (!cols.is_array()) throw ConfigError("scorer.columns", "expected an array of strings");
      for (const auto& v : cols) {
        if (!v.is_string()) throw ConfigError("scorer.columns", "expected an array of strings");
        c.scorer_columns.push_back(v);
      }
    }
  }
  if (j.contains("service")) {
    detail::reject_unknown(j["service"], "service", {"addr", "workers"});
    detail::read_field(j["service"], "service", "addr", c.addr);
    detail::read_field(j["service"], "service", "workers", c.workers);
  }
  return c;
}

inline CliConfig load_cli_config(const std::string& path) { return cli_config_from_json(parse_json_file(path)); }

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> backend;
  std::optional<std::string> out;
};

inline void apply(CliConfig& c, const Overrides& o) {
  if (o.seed) c.pipeline.seed = *o.seed;
  if (o.backend) c.pipeline.backend.name = *o.backend;
  if (o.out) c.output_dir = *o.out;
}

template <typename F>
int run_command(std::ostream& err, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    err << "taue: config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InvalidArgument& e) {
    err << "taue: invalid argument: " << e.what() << '\n';
    return kExitConfig;
  } catch (const BackendError& e) {
    err << "taue: backend error: " << e.what() << '\n';
    return kExitBackend;
  } catch (const DependencyError& e) {
    err << "taue: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Error& e) {
    err << "taue: " << e.what() << '\n';
    return kExitEnvironment;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "taue: " << e.what() << '\n';
    return kExitEnvironment;
  }
}

inline void write_outputs(const std::filesystem::path& dir, const LayerSet& ls, const CliConfig& cfg, const RegionReport& rep) {
  save_layerset(dir, ls);
  write_json_file(dir / "config.json", to_json(cfg));
  write_json_file(dir / "report.json", to_json(rep));
}

inline int cmd_generate(const std::string& config_path, const Overrides& ov, std::ostream& out, std::ostream& err) {
  return run_command(err, [&] {
    CliConfig cfg = load_cli_config(config_path);
    apply(cfg, ov);
    validate(cfg.pipeline);
    auto backend = make_backend(cfg.pipeline.backend, cfg.pipeline.latent_shape());
    const LayerSet ls = cfg.pipeline.boxes.size() > 1 ? place_multi_objects(cfg.pipeline, *backend) : generate_layers(cfg.pipeline, *backend);
    const RegionReport rep = region_split_eval(ls);
    const std::filesystem::path dir = cfg.output_dir;
    write_outputs(dir, ls, cfg, rep);
    for (const auto& w : ls.metadata.value("warnings", std::vector<std::string>{})) err << "taue: warning: " << w << '\n';
    out << "wrote " << dir.string() << '\n';
    out << "config snapshot: " << (dir / "config.json").string() << '\n';
    out << "report: " << (dir / "report.json").string() << '\n';
    return kExitOk;
  });
}

inline int cmd_replace_bg(const std::string& layerset_dir, const std::string& prompt_bg, std::ptrdiff_t dx, std::ptrdiff_t dy,
                          const std::string& out_dir, const Overrides& ov, std::ostream& out, std::ostream& err) {
  return run_command(err, [&] {
    if (prompt_bg.empty()) throw ConfigError("prompt_bg", "must be non-empty");
    const LayerSet base = load_layerset(layerset_dir);
    CliConfig cfg;
    cfg.pipeline = base.config;
    cfg.output_dir = out_dir;
    apply(cfg, ov);
    if (std::filesystem::weakly_canonical(cfg.output_dir) == std::filesystem::weakly_canonical(layerset_dir)) {
      throw ConfigError("out", "refusing to overwrite the source layer set");
    }
    auto backend = make_backend(cfg.pipeline.backend, cfg.pipeline.latent_shape());
    LayerSet ls = replace_background(cfg.pipeline, *backend, foreground_of(base), prompt_bg, dx, dy);
    ls.metadata["source_layerset"] = layerset_dir;
    cfg.pipeline = ls.config;
    const RegionReport rep = region_split_eval(ls);
    write_outputs(cfg.output_dir, ls, cfg, rep);
    out << "wrote " << cfg.output_dir << '\n';
    out << "report: " << (std::filesystem::path(cfg.output_dir) / "report.json").string() << '\n';
    return kExitOk;
  });
}

struct AblationResult {
  std::string axis;
  std::vector<ReportRow> rows;
  std::vector<PipelineConfig> cells;
  std::optional<bool> init_confined;  // highpass axis: on/off inits differ only inside m_obj
  std::string table;
};

inline std::string percent_label(double r) {
  std::ostringstream ss;
  ss << std::lround(r * 100.0) << '%';
  return ss.str();
}

// Runs the sweep for one axis on a prepared config; cells run concurrently.
inline AblationResult run_ablation(const CliConfig& cfg, const std::string& axis) {
  AblationResult res;
  res.axis = axis;
  std::vector<std::string> labels;
  if (axis == "crop_ratio") {
    for (double r : {0.25, 0.5, 0.75}) {
      PipelineConfig c = cfg.pipeline;
      c.r_crop = r;
      res.cells.push_back(c);
      labels.push_back(percent_label(r));
    }
  } else if (axis == "highpass") {
    for (bool hp : {true, false}) {
      PipelineConfig c = cfg.pipeline;
      c.highpass = hp;
      res.cells.push_back(c);
      labels.push_back(percent_label(c.r_crop) + (hp ? " + High-pass" : " w/o High-pass"));
    }
  } else if (axis == "lambda") {
    for (double l : cfg.lambdas) {
      PipelineConfig c = cfg.pipeline;
      c.lambda = l;
      res.cells.push_back(c);
      std::ostringstream ss;
      ss << "lambda=" << l;
      labels.push_back(ss.str());
    }
  } else {
    throw ConfigError("axis", "expected crop_ratio, highpass or lambda, got '" + axis + "'");
  }
  for (const auto& c : res.cells) validate(c);

  std::vector<std::future<ReportRow>> futures;
  for (std::size_t i = 0; i < res.cells.size(); ++i) {
    futures.push_back(std::async(std::launch::async, [&, i] {
      const PipelineConfig& c = res.cells[i];
      auto backend = make_backend(c.backend, c.latent_shape());
      const LayerSet ls = generate_layers(c, *backend);
      ReportRow row{labels[i], region_split_eval(ls), {}};
      if (!cfg.scorer_command.empty()) {
        const auto dir = std::filesystem::temp_directory_path() / ("taue_ablate_" + std::to_string(i) + "_" + std::to_string(c.seed));
        save_layerset(dir, ls);
        SubprocessScorer scorer(cfg.scorer_command);
        row.external = scorer.score(dir.string());
        std::filesystem::remove_all(dir);
      }
      return row;
    }));
  }
  for (auto& f : futures) res.rows.push_back(f.get());

  if (axis == "highpass") {
    // Same seedling and fresh noise; only the seed transform differs.
    const PipelineConfig& c = res.cells.front();
    auto backend = make_backend(c.backend, c.latent_shape());
    const ForegroundResult fg = generate_foreground(c, backend.operator*());
    const ObjectMask& m = *fg.bundle.mask;
    RandomSource rng = RandomSource(c.seed).fork(kStreamComposite);
    const LatentTensor z_fresh = sample_gaussian(c.latent_shape(), rng);
    const LatentTensor on = composite_init(fg.bundle, m, c.lambda, z_fresh, true);
    const LatentTensor off = composite_init(fg.bundle, m, c.lambda, z_fresh, false);
    bool confined = true;
    for (std::size_t ch = 0; ch < kLatentChannels; ++ch)
      for (std::size_t y = 0; y < m.height(); ++y)
        for (std::size_t x = 0; x < m.width(); ++x)
          if (!m(y, x)) {
            const float a = on(ch, y, x), b = off(ch, y, x);
            if (std::memcmp(&a, &b, sizeof(float)) != 0) confined = false;
          }
    res.init_confined = confined;
  }
  res.table = format_table(res.rows, cfg.scorer_command.empty() ? std::vector<std::string>{} : cfg.scorer_columns);
  return res;
}

inline nlohmann::json to_json(const AblationResult& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    nlohmann::json row = to_json(r.rows[i].report);
    row["label"] = r.rows[i].label;
    row["external"] = r.rows[i].external;
    row["config"] = to_json(r.cells[i]);
    rows.push_back(std::move(row));
  }
  nlohmann::json j{{"axis", r.axis}, {"rows", rows}};
  if (r.init_confined) j["init_confined"] = *r.init_confined;
  return j;
}

inline int cmd_ablate(const std::string& config_path, const std::string& axis, const Overrides& ov, std::ostream& out,
                      std::ostream& err, AblationResult* result = nullptr) {
  return run_command(err, [&] {
    CliConfig cfg = load_cli_config(config_path);
    apply(cfg, ov);
    AblationResult r = run_ablation(cfg, axis);
    out << r.table;
    if (r.init_confined) {
      out << "composite init confined to m_obj: " << (*r.init_confined ? "yes" : "NO") << '\n';
      if (!*r.init_confined) err << "taue: high-pass changed the composite init outside the object mask\n";
    }
    if (ov.out) {
      std::filesystem::create_directories(*ov.out);
      write_json_file(std::filesystem::path(*ov.out) / ("ablation_" + axis + ".json"), to_json(r));
    }
    const bool ok = !r.init_confined || *r.init_confined;
    if (result) *result = std::move(r);
    return ok ? kExitOk : kExitBackend;
  });
}

struct EvalResult {
  std::vector<ReportRow> rows;
  std::optional<RegionReport> mean;
  std::vector<std::string> skipped;
  std::string table;
};

// Evaluates layer-set directories. With annotations, only directories whose
// metadata `image_id` (or directory name) survives filter_benchmark are kept.
inline int cmd_eval(const std::vector<std::string>& dirs, const std::string& annotations_path, const std::string& scorer_command,
                    std::ostream& out, std::ostream& err, EvalResult* result = nullptr) {
  return run_command(err, [&] {
    std::optional<std::set<std::string>> keep;
    if (!annotations_path.empty()) {
      std::vector<std::string> warnings;
      const auto kept = filter_benchmark(parse_annotations(parse_json_file(annotations_path), &warnings));
      keep.emplace();
      for (const auto& a : kept) keep->insert(a.image_id);
      out << "benchmark filter kept " << kept.size() << " annotations\n";
    }
    EvalResult r;
    std::vector<RegionReport> reports;
    for (const auto& d : dirs) {
      LayerSet ls;
      try {
        ls = load_layerset(d);
      } catch (const Error& e) {
        err << "taue: warning: skipping " << d << ": " << e.what() << '\n';
        r.skipped.push_back(d);
        continue;
      }
      if (keep) {
        const std::string id = ls.metadata.contains("image_id") ? ls.metadata["image_id"].get<std::string>()
                                                                : std::filesystem::path(d).filename().string();
        if (!keep->count(id)) {
          err << "taue: warning: skipping " << d << ": filtered out by the benchmark filter\n";
          r.skipped.push_back(d);
          continue;
        }
      }
      ReportRow row{std::filesystem::path(d).filename().string(), region_split_eval(ls), {}};
      if (!scorer_command.empty()) row.external = SubprocessScorer(scorer_command).score(d);
      reports.push_back(row.report);
      r.rows.push_back(std::move(row));
    }
    std::vector<ReportRow> shown = r.rows;
    if (r.rows.size() > 1) {
      r.mean = mean_report(reports);
      shown.push_back({"mean", *r.mean, {}});
    }
    std::vector<std::string> columns;
    if (!scorer_command.empty()) columns.assign(std::begin(kScoreLabels), std::end(kScoreLabels));
    r.table = format_table(shown, columns);
    out << r.table;
    if (result) *result = std::move(r);
    return kExitOk;
  });
}

struct ServeOptions {
  std::string addr;  // overrides the config when set
  std::string home;  // TAUE_HOME when empty
  std::atomic<bool>* stop = nullptr;
  std::function<void(int port)> on_ready;
};

inline std::string default_home() {
  if (const char* h = std::getenv("TAUE_HOME"); h && *h) return h;
  return "taue_home";
}

inline int cmd_serve(const std::string& config_path, const ServeOptions& so, std::ostream& out, std::ostream& err) {
  return run_command(err, [&] {
    CliConfig cfg = config_path.empty() ? CliConfig{} : load_cli_config(config_path);
    const auto [host, port] = parse_address(so.addr.empty() ? cfg.addr : so.addr);
    JobService service({so.home.empty() ? default_home() : so.home, cfg.workers});
    HttpServer server(service);
    if (!server.start(host, port)) {
      err << "taue: cannot bind " << host << ':' << port << " (address in use?)\n";
      return static_cast<int>(kExitEnvironment);
    }
    out << "listening on " << host << ':' << server.port() << '\n' << std::flush;
    if (so.on_ready) so.on_ready(server.port());
    while (!(so.stop && so.stop->load())) std::this_thread::sleep_for(std::chrono::milliseconds(20));
    server.stop();
    service.shutdown();
    out << "stopped\n";
    return static_cast<int>(kExitOk);
  });
}

}  // namespace taue
