// taue: layered generation, background replacement, ablation sweeps,
// evaluation and the job service.

#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "taue/cli.hpp"

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

std::pair<std::ptrdiff_t, std::ptrdiff_t> parse_offset(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw taue::ConfigError("offset", "expected dx,dy");
  try {
    return {std::stol(s.substr(0, comma)), std::stol(s.substr(comma + 1))};
  } catch (const std::exception&) {
    throw taue::ConfigError("offset", "expected integers dx,dy");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layered image generation: foreground, background and composite"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::uint64_t> seed;
  std::string backend, out;
  const auto add_common = [&](CLI::App* sub, bool need_config) {
    auto* opt = sub->add_option("--config", config, "JSON config file");
    if (need_config) opt->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--backend", backend, "override the backend name (toy, ldm)");
    sub->add_option("--out", out, "output directory");
  };

  auto* gen = app.add_subcommand("generate", "run all three phases and write a layer set");
  add_common(gen, true);

  std::string layerset, prompt_bg, offset = "0,0";
  auto* rep = app.add_subcommand("replace-bg", "regenerate composite and background around a stored foreground");
  add_common(rep, false);
  rep->add_option("--layerset", layerset, "source layer-set directory")->required();
  rep->add_option("--prompt-bg", prompt_bg, "new background prompt")->required();
  rep->add_option("--offset", offset, "move the object by dx,dy latent pixels");

  std::string axis;
  auto* abl = app.add_subcommand("ablate", "sweep crop_ratio, highpass or lambda and tabulate region metrics");
  add_common(abl, true);
  abl->add_option("--axis", axis, "crop_ratio | highpass | lambda")->required();

  std::vector<std::string> dirs;
  std::string annotations, scorer;
  auto* ev = app.add_subcommand("eval", "region-split PSNR/SSIM over layer-set directories");
  ev->add_option("layersets", dirs, "layer-set directories")->required();
  ev->add_option("--annotations", annotations, "COCO-style annotations for the benchmark filter");
  ev->add_option("--scorer", scorer, "external scorer command (receives a layer-set directory)");

  std::string addr, home;
  auto* srv = app.add_subcommand("serve", "run the HTTP job service");
  srv->add_option("--config", config, "JSON config file");
  srv->add_option("--addr", addr, "host:port to bind");
  srv->add_option("--home", home, "persistence root (default: $TAUE_HOME)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : taue::kExitConfig;
  }

  taue::Overrides ov;
  ov.seed = seed;
  if (!backend.empty()) ov.backend = backend;
  if (!out.empty()) ov.out = out;

  if (gen->parsed()) return taue::cmd_generate(config, ov, std::cout, std::cerr);
  if (rep->parsed()) {
    std::pair<std::ptrdiff_t, std::ptrdiff_t> d;
    try {
      d = parse_offset(offset);
    } catch (const taue::ConfigError& e) {
      std::cerr << "taue: config error: " << e.what() << '\n';
      return taue::kExitConfig;
    }
    return taue::cmd_replace_bg(layerset, prompt_bg, d.first, d.second, out.empty() ? layerset + "_replaced" : out, ov, std::cout,
                                std::cerr);
  }
  if (abl->parsed()) return taue::cmd_ablate(config, axis, ov, std::cout, std::cerr);
  if (ev->parsed()) return taue::cmd_eval(dirs, annotations, scorer, std::cout, std::cerr);
  if (srv->parsed()) {
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    taue::ServeOptions so;
    so.addr = addr;
    so.home = home;
    so.stop = &g_stop;
    return taue::cmd_serve(config, so, std::cout, std::cerr);
  }
  return taue::kExitConfig;
}
