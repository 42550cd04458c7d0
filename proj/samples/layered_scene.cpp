// Generates a layer set on the toy backend, then swaps the background while
// keeping the foreground, and prints the region metrics of both.

#include <iostream>

#include "taue/metrics.hpp"
#include "taue/pipeline.hpp"
#include "taue/store.hpp"

int main(int argc, char** argv) {
  using namespace taue;
  const std::string out = argc > 1 ? argv[1] : "layered_scene_out";

  PipelineConfig cfg;
  cfg.prompt_fg = "a ceramic mug";
  cfg.prompt_bg = "a sunlit kitchen counter";
  cfg.width = cfg.height = 256;
  cfg.steps = 30;
  cfg.boxes.push_back({BoxSpec{16, 18, 12, 12}, ""});

  auto backend = make_backend(cfg.backend, cfg.latent_shape());
  const LayerSet first = generate_layers(cfg, *backend);
  const LayerSet second = replace_background(first, *backend, "a snowy window sill");
  save_layerset(out + "/original", first);
  save_layerset(out + "/replaced", second);

  std::vector<ReportRow> rows{{"original", region_split_eval(first), {}}, {"replaced", region_split_eval(second), {}}};
  std::cout << format_table(rows);
  std::cout << "foreground kept: " << (first.fg_bundle == second.fg_bundle ? "yes" : "no") << '\n';
}
