#pragma once

// Three-phase layered generation (foreground -> composite -> background) and the
// layout applications built on it: background replacement with optional
// repositioning, and multi-object placement.

#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "taue/attention.hpp"
#include "taue/backend.hpp"
#include "taue/core.hpp"
#include "taue/image.hpp"
#include "taue/masks.hpp"
#include "taue/ntc.hpp"

namespace taue {

inline constexpr std::size_t kMaxBoxes = 8;

struct LayoutBox {
  BoxSpec box;
  std::string prompt;  // per-object foreground prompt; empty = prompt_fg

  friend bool operator==(const LayoutBox&, const LayoutBox&) = default;
};

struct PipelineConfig {
  std::string prompt_fg;
  std::string prompt_bg;
  std::string prompt_all;  // empty = prompt_fg + ", " + prompt_bg
  std::vector<LayoutBox> boxes;
  double alpha = 0.8;
  double lambda = 1.0;
  double sigma_blur = 1.0;
  std::optional<double> tau_bg;     // empty = percentile of v_gb
  double tau_bg_percentile = 0.3;
  double tau_attn = 0.3;
  double r_crop = 0.5;
  std::size_t steps = 50;
  double guidance_fg = 7.5;
  double guidance_other = 5.0;
  std::uint64_t seed = 0;
  bool highpass = true;
  bool mask_postprocess = true;
  bool recompute_mask = false;
  std::size_t width = 1024;   // image pixels
  std::size_t height = 1024;
  double feather_radius = 2.0;  // image pixels
  GreenLatentVector green;
  BackendConfig backend;

  Shape latent_shape() const { return {kLatentChannels, height / kLatentScale, width / kLatentScale}; }
  std::string effective_prompt_all() const { return prompt_all.empty() ? prompt_fg + ", " + prompt_bg : prompt_all; }
  std::size_t crop() const { return crop_step(steps, r_crop); }

  std::vector<BoxSpec> box_specs() const {
    std::vector<BoxSpec> out;
    for (const auto& b : boxes) out.push_back(b.box);
    return out;
  }
};

// Throws ConfigError naming the offending field.
inline void validate(const PipelineConfig& c) {
  if (c.prompt_fg.empty()) throw ConfigError("prompt_fg", "must be non-empty");
  if (c.prompt_bg.empty()) throw ConfigError("prompt_bg", "must be non-empty");
  if (c.width == 0 || c.width % kLatentScale != 0) throw ConfigError("width", "must be a positive multiple of 8");
  if (c.height == 0 || c.height % kLatentScale != 0) throw ConfigError("height", "must be a positive multiple of 8");
  if (c.boxes.empty()) throw ConfigError("boxes", "at least one box is required");
  if (c.boxes.size() > kMaxBoxes) throw ConfigError("boxes", "at most " + std::to_string(kMaxBoxes) + " boxes are supported");
  const Shape s = c.latent_shape();
  for (std::size_t i = 0; i < c.boxes.size(); ++i) {
    try {
      validate_box(c.boxes[i].box, s.height, s.width);
    } catch (const InvalidArgument& e) {
      throw ConfigError("boxes[" + std::to_string(i) + "]", e.what());
    }
  }
  if (!(c.alpha >= 0.0 && c.alpha <= 1.0)) throw ConfigError("alpha", "must lie in [0, 1]");
  if (!(c.lambda >= 0.0) || !std::isfinite(c.lambda)) throw ConfigError("lambda", "must be >= 0");
  if (!(c.sigma_blur > 0.0)) throw ConfigError("sigma_blur", "must be > 0");
  if (c.tau_bg && !std::isfinite(*c.tau_bg)) throw ConfigError("tau_bg", "must be finite");
  if (!(c.tau_bg_percentile >= 0.0 && c.tau_bg_percentile <= 1.0)) throw ConfigError("tau_bg_percentile", "must lie in [0, 1]");
  if (!std::isfinite(c.tau_attn)) throw ConfigError("tau_attn", "must be finite");
  if (!(c.r_crop >= 0.0 && c.r_crop <= 1.0)) throw ConfigError("r_crop", "must lie in [0, 1]");
  if (c.steps < 2) throw ConfigError("steps", "must be >= 2");
  if (!(c.guidance_fg >= 0.0)) throw ConfigError("guidance_fg", "must be >= 0");
  if (!(c.guidance_other >= 0.0)) throw ConfigError("guidance_other", "must be >= 0");
  if (!(c.feather_radius >= 0.0)) throw ConfigError("feather_radius", "must be >= 0");
  if (c.backend.name != "toy" && c.backend.name != "ldm") throw ConfigError("backend.name", "must be \"toy\" or \"ldm\"");
  if (!(c.backend.toy.k > 0.0 && c.backend.toy.k < 1.0)) throw ConfigError("backend.toy.k", "must lie in (0, 1)");
}

// Sub-stream ids for the seeded random source. Box i of a multi-object job uses
// id + 16 * i for its foreground streams.
enum Stream : std::uint64_t { kStreamFgNoise = 1, kStreamBoxMask = 2, kStreamComposite = 3, kStreamBackground = 4 };

struct PhaseOptions {
  bool record_all = false;  // keep every (z_t, n_t) of the run
  StepCallback on_step;
};

struct ForegroundResult {
  Image image;             // decoded RGB
  SeedlingBundle bundle;   // L_fg, n_crop, frozen object mask
  BoxMask box_mask;
  RetentionMap retention;
  LatentTensor z_init;
  LatentTensor final_latent;
  Map2D activation;        // v_gb
  Map2D attention;         // aggregated A_fg
  double tau_bg = 0.0;
  Trajectory trajectory;   // filled when PhaseOptions::record_all
  std::vector<std::string> warnings;
};

struct CompositeResult {
  Image image;
  SeedlingBundle bundle;   // L_bg, n_crop (composite phase), m_obj
  ObjectMask m_obj;
  LatentTensor z_init;
  LatentTensor final_latent;
  bool hooked = false;     // false: single-prompt fallback on prompt_all
  Trajectory trajectory;
  std::vector<std::string> warnings;
};

struct BackgroundResult {
  Image image;
  ObjectMask m_obj;
  LatentTensor z_init;
  LatentTensor final_latent;
  Trajectory trajectory;
};

struct LayerSet {
  Image foreground;   // RGBA
  Image background;   // RGB
  Image composite;    // RGB
  ObjectMask m_obj;
  BoxMask box_mask;
  PipelineConfig config;
  SeedlingBundle fg_bundle;
  SeedlingBundle comp_bundle;
  Image foreground_rgb;  // decoded foreground before alpha extraction
  nlohmann::json metadata;
};

namespace detail {

inline std::vector<std::size_t> record_steps(std::size_t steps, std::size_t crop, bool all) {
  if (!all) return {crop};
  std::vector<std::size_t> v;
  for (std::size_t t = 0; t <= steps; ++t) v.push_back(t);
  return v;
}

template <typename F>
auto tag_phase(const char* phase, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const CapabilityError& e) {
    throw CapabilityError(e.phase().empty() ? e.detail() : e.what(), phase);
  } catch (const BackendError& e) {
    throw BackendError(e.phase().empty() ? e.detail() : e.what(), phase);
  }
}

inline void warn(std::vector<std::string>& sink, std::string msg) {
  std::cerr << "taue: warning: " << msg << '\n';
  sink.push_back(std::move(msg));
}

}  // namespace detail

// Object region from the foreground seedling: thresholded green activation and
// foreground attention, restricted to the boxes, optionally cleaned up.
inline ObjectMask derive_object_mask(const PipelineConfig& cfg, DenoiserBackend& backend, const LatentTensor& seedling,
                                     std::size_t t_crop, std::span<const BoxSpec> boxes, const std::string& prompt,
                                     Map2D* activation_out = nullptr, Map2D* attention_out = nullptr, double* tau_out = nullptr) {
  const Map2D v_gb = activation_map(seedling, cfg.sigma_blur);
  const AttentionProbe probe = backend.probe_attention(seedling, t_crop, Conditioning{prompt, cfg.guidance_fg, {}});
  const AggregatedAttention attn = aggregate_attention(probe, seedling.height(), seedling.width());
  const double tau_bg = cfg.tau_bg ? *cfg.tau_bg : percentile(v_gb, cfg.tau_bg_percentile);
  ObjectMask m = intersect(object_mask(v_gb, attn.values, tau_bg, cfg.tau_attn),
                           box_region(boxes, seedling.height(), seedling.width()));
  if (cfg.mask_postprocess) m = postprocess_object_mask(m, boxes);
  if (activation_out) *activation_out = v_gb;
  if (attention_out) *attention_out = attn.values;
  if (tau_out) *tau_out = tau_bg;
  return m;
}

namespace detail {

// Foreground phase for the given boxes and prompt; `slot` selects the random
// sub-streams (0 for single-trajectory jobs).
inline ForegroundResult run_foreground(const PipelineConfig& cfg, DenoiserBackend& backend, std::span<const BoxSpec> boxes,
                                       const std::string& prompt, std::size_t slot, const PhaseOptions& opts) {
  return tag_phase("foreground", [&] {
    const Shape shape = cfg.latent_shape();
    const std::size_t t_crop = cfg.crop();
    const RandomSource root(cfg.seed);
    RandomSource noise_rng = root.fork(kStreamFgNoise + 16 * slot);
    RandomSource mask_rng = root.fork(kStreamBoxMask + 16 * slot);

    ForegroundResult r;
    const LatentTensor z_T = sample_gaussian(shape, noise_rng);
    r.retention = retention_map(boxes, shape.height, shape.width);
    r.box_mask = sample_box_mask(r.retention, mask_rng);
    r.z_init = blend_green(z_T, r.box_mask, cfg.alpha, cfg.green);

    DenoiseRequest req;
    req.z_init = r.z_init;
    req.total_steps = cfg.steps;
    req.cond = Conditioning{prompt, cfg.guidance_fg, {}};
    req.record = record_steps(cfg.steps, t_crop, opts.record_all);
    req.on_step = opts.on_step;
    DenoiseResult d = run_denoise(backend, req);

    r.bundle = extract_seedling(d.recorded, t_crop, std::nullopt, Phase::foreground);
    r.bundle.mask = derive_object_mask(cfg, backend, r.bundle.latent, t_crop, boxes, prompt, &r.activation, &r.attention, &r.tau_bg);
    if (!r.bundle.mask->any()) warn(r.warnings, "object mask is empty; the scene will be generated without a transplanted object");
    r.final_latent = std::move(d.final_latent);
    r.image = backend.decode(r.final_latent);
    if (opts.record_all) r.trajectory = std::move(d.recorded);
    return r;
  });
}

struct ObjectRegion {
  std::string prompt;
  ObjectMask mask;
};

// Composite phase from a (possibly merged) foreground bundle and disjoint
// object regions.
inline CompositeResult run_composite(const PipelineConfig& cfg, DenoiserBackend& backend, const SeedlingBundle& fg_bundle,
                                     const std::vector<ObjectRegion>& regions, const PhaseOptions& opts) {
  return tag_phase("composite", [&] {
    const Shape shape = cfg.latent_shape();
    const std::size_t t_crop = cfg.crop();
    if (fg_bundle.phase != Phase::foreground) throw InvalidArgument("composite phase needs a foreground bundle");
    if (fg_bundle.latent.shape() != shape) throw InvalidArgument("foreground bundle shape does not match the configuration");

    CompositeResult r;
    r.m_obj = ObjectMask(shape.height, shape.width);
    for (const auto& reg : regions)
      for (std::size_t y = 0; y < shape.height; ++y)
        for (std::size_t x = 0; x < shape.width; ++x)
          if (reg.mask(y, x)) r.m_obj.set(y, x, true);
    if (!r.m_obj.any()) warn(r.warnings, "composite phase runs with an empty object mask");

    RandomSource fresh_rng = RandomSource(cfg.seed).fork(kStreamComposite);
    const LatentTensor z_fresh = sample_gaussian(shape, fresh_rng);
    r.z_init = composite_init(fg_bundle, r.m_obj, cfg.lambda, z_fresh, cfg.highpass);

    const Capabilities caps = backend.capabilities();
    r.hooked = caps.attention_hooks && caps.dual_conditioning;
    std::optional<AttentionHook> hook;
    DenoiseRequest req;
    req.z_init = r.z_init;
    req.total_steps = cfg.steps;
    if (r.hooked) {
      std::vector<ObjectMask> masks;
      Conditioning cond{cfg.prompt_bg, cfg.guidance_other, {}};
      for (const auto& reg : regions) {
        cond.region_prompts.push_back(reg.prompt);
        masks.push_back(reg.mask);
      }
      hook.emplace(std::move(masks));
      req.cond = std::move(cond);
      req.hook = &*hook;
    } else {
      req.cond = Conditioning{cfg.effective_prompt_all(), cfg.guidance_other, {}};
    }
    req.noise_override = [&](const LatentTensor& n, std::size_t t) { return pin_noise_fg(n, fg_bundle, r.m_obj, t); };
    req.record = record_steps(cfg.steps, t_crop, opts.record_all);
    req.on_step = opts.on_step;
    DenoiseResult d = run_denoise(backend, req);

    r.bundle = extract_seedling(d.recorded, t_crop, r.m_obj, Phase::composite);
    r.final_latent = std::move(d.final_latent);
    r.image = backend.decode(r.final_latent);
    if (opts.record_all) r.trajectory = std::move(d.recorded);
    return r;
  });
}

}  // namespace detail

// Green-initialized foreground run; the bundle carries L_fg, n_crop and the
// object mask derived from them.
inline ForegroundResult generate_foreground(const PipelineConfig& cfg, DenoiserBackend& backend, const PhaseOptions& opts = {}) {
  validate(cfg);
  const auto boxes = cfg.box_specs();
  return detail::run_foreground(cfg, backend, boxes, cfg.prompt_fg, 0, opts);
}

// Transplants the foreground seedling into a fresh trajectory, blending
// attention (foreground prompt inside m_obj) and pinning object noise while
// t >= t_crop. Uses the bundle's frozen mask, deriving one if it has none.
inline CompositeResult generate_composite(const PipelineConfig& cfg, DenoiserBackend& backend, const SeedlingBundle& fg_bundle,
                                          const PhaseOptions& opts = {}) {
  validate(cfg);
  ObjectMask m = fg_bundle.mask ? *fg_bundle.mask : detail::tag_phase("composite", [&] {
    const auto boxes = cfg.box_specs();
    return derive_object_mask(cfg, backend, fg_bundle.latent, fg_bundle.step, boxes, cfg.prompt_fg);
  });
  return detail::run_composite(cfg, backend, fg_bundle, {{cfg.prompt_fg, std::move(m)}}, opts);
}

// Transplants the composite seedling outside m_obj and pins background noise
// while t >= t_crop.
inline BackgroundResult generate_background(const PipelineConfig& cfg, DenoiserBackend& backend, const SeedlingBundle& comp_bundle,
                                            const PhaseOptions& opts = {}) {
  validate(cfg);
  return detail::tag_phase("background", [&] {
    if (comp_bundle.phase != Phase::composite) throw InvalidArgument("background phase needs a composite bundle");
    if (!comp_bundle.mask) throw InvalidArgument("composite bundle carries no object mask");
    const Shape shape = cfg.latent_shape();
    BackgroundResult r;
    r.m_obj = *comp_bundle.mask;
    if (cfg.recompute_mask) {
      const auto boxes = cfg.box_specs();
      const AttentionProbe probe =
          backend.probe_attention(comp_bundle.latent, comp_bundle.step, Conditioning{cfg.prompt_fg, cfg.guidance_fg, {}});
      const AggregatedAttention attn = aggregate_attention(probe, shape.height, shape.width);
      ObjectMask m(shape.height, shape.width);
      for (std::size_t y = 0; y < shape.height; ++y)
        for (std::size_t x = 0; x < shape.width; ++x) m.set(y, x, static_cast<double>(attn.values(y, x)) > cfg.tau_attn);
      m = intersect(m, box_region(boxes, shape.height, shape.width));
      if (cfg.mask_postprocess) m = postprocess_object_mask(m, boxes);
      r.m_obj = std::move(m);
    }
    RandomSource fresh_rng = RandomSource(cfg.seed).fork(kStreamBackground);
    const LatentTensor z_fresh = sample_gaussian(shape, fresh_rng);
    r.z_init = background_init(comp_bundle, r.m_obj, cfg.lambda, z_fresh);

    DenoiseRequest req;
    req.z_init = r.z_init;
    req.total_steps = cfg.steps;
    req.cond = Conditioning{cfg.prompt_bg, cfg.guidance_other, {}};
    SeedlingBundle pinned = comp_bundle;
    req.noise_override = [&](const LatentTensor& n, std::size_t t) { return pin_noise_bg(n, pinned, r.m_obj, t); };
    req.record = detail::record_steps(cfg.steps, cfg.crop(), opts.record_all);
    req.on_step = opts.on_step;
    DenoiseResult d = run_denoise(backend, req);
    r.final_latent = std::move(d.final_latent);
    r.image = backend.decode(r.final_latent);
    if (opts.record_all) r.trajectory = std::move(d.recorded);
    return r;
  });
}

// RGBA foreground layer: mask upsampled x8 (bilinear), Gaussian feather of
// `feather_radius` image pixels, colour from the decoded foreground.
inline Image extract_rgba_foreground(const Image& fg, const ObjectMask& m_obj, double feather_radius = 2.0) {
  if (fg.width != m_obj.width() * kLatentScale || fg.height != m_obj.height() * kLatentScale) {
    throw InvalidArgument("extract_rgba_foreground: image must be 8x the mask resolution");
  }
  Map2D coarse(m_obj.height(), m_obj.width());
  for (std::size_t y = 0; y < m_obj.height(); ++y)
    for (std::size_t x = 0; x < m_obj.width(); ++x) coarse(y, x) = m_obj(y, x) ? 1.0f : 0.0f;
  Map2D alpha = resize_bilinear(coarse, fg.height, fg.width);
  if (feather_radius > 0.0) alpha = gaussian_blur(alpha, feather_radius);
  Image out(fg.width, fg.height, 4);
  const Image rgb = to_rgb(fg);
  for (std::size_t y = 0; y < fg.height; ++y) {
    for (std::size_t x = 0; x < fg.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = rgb.at(y, x, c);
      out.at(y, x, 3) = static_cast<std::uint8_t>(std::lround(std::clamp(static_cast<double>(alpha(y, x)), 0.0, 1.0) * 255.0));
    }
  }
  return out;
}

// Progress across a multi-phase job: each phase contributes `steps`.
struct JobProgress {
  StepCallback sink;
  std::size_t phases = 3;

  StepCallback phase(std::size_t index) const {
    if (!sink) return {};
    return [s = sink, index, n = phases](std::size_t done, std::size_t total) { s(index * total + done, n * total); };
  }
};

namespace detail {

inline nlohmann::json base_metadata(const PipelineConfig& cfg, DenoiserBackend& backend) {
  return {{"backend", backend.name()},
          {"t_crop", cfg.crop()},
          {"steps", cfg.steps},
          {"latent_shape", {kLatentChannels, cfg.latent_shape().height, cfg.latent_shape().width}},
          {"overlap_rule", "first-listed box wins"}};
}

inline LayerSet assemble(const PipelineConfig& cfg, DenoiserBackend& backend, const Image& fg_rgb, const BoxMask& box_mask,
                         const SeedlingBundle& fg_bundle, const CompositeResult& comp, const BackgroundResult& bg,
                         std::vector<std::string> warnings, const std::string& operation) {
  LayerSet ls;
  ls.foreground_rgb = fg_rgb;
  ls.foreground = extract_rgba_foreground(fg_rgb, comp.m_obj, cfg.feather_radius);
  ls.composite = comp.image;
  ls.background = bg.image;
  ls.m_obj = comp.m_obj;
  ls.box_mask = box_mask;
  ls.config = cfg;
  ls.fg_bundle = fg_bundle;
  ls.comp_bundle = comp.bundle;
  warnings.insert(warnings.end(), comp.warnings.begin(), comp.warnings.end());
  ls.metadata = base_metadata(cfg, backend);
  ls.metadata["operation"] = operation;
  ls.metadata["attention_blending"] = comp.hooked;
  ls.metadata["mask_pixels"] = comp.m_obj.count();
  ls.metadata["warnings"] = warnings;
  ls.metadata["fg_bundle_checksum"] = checksum(fg_bundle);
  ls.metadata["comp_bundle_checksum"] = checksum(comp.bundle);
  return ls;
}

inline void check_capabilities(const PipelineConfig& cfg, DenoiserBackend& backend) {
  const Capabilities caps = backend.capabilities();
  if (caps.latent_shape != cfg.latent_shape()) {
    throw CapabilityError("backend latent shape " + to_string(caps.latent_shape) + " does not match configured " +
                          to_string(cfg.latent_shape()));
  }
}

}  // namespace detail

// Full job: foreground, composite, background.
inline LayerSet generate_layers(const PipelineConfig& cfg, DenoiserBackend& backend, const JobProgress& progress = {}) {
  validate(cfg);
  detail::check_capabilities(cfg, backend);
  ForegroundResult fg = generate_foreground(cfg, backend, {false, progress.phase(0)});
  CompositeResult comp = generate_composite(cfg, backend, fg.bundle, {false, progress.phase(1)});
  BackgroundResult bg = generate_background(cfg, backend, comp.bundle, {false, progress.phase(2)});
  LayerSet ls = detail::assemble(cfg, backend, fg.image, fg.box_mask, fg.bundle, comp, bg, fg.warnings, "generate_layers");
  ls.metadata["tau_bg"] = fg.tau_bg;
  return ls;
}

// Stored foreground needed to regenerate the other layers.
struct ForegroundLayer {
  SeedlingBundle bundle;
  Image image_rgb;
  BoxMask box_mask;
};

inline ForegroundLayer foreground_of(const LayerSet& ls) { return {ls.fg_bundle, ls.foreground_rgb, ls.box_mask}; }

// Re-runs composite and background with a new background prompt. A non-zero
// offset (latent pixels) moves the seedling, its mask and the boxes. The stored
// foreground is never modified.
inline LayerSet replace_background(const PipelineConfig& base, DenoiserBackend& backend, const ForegroundLayer& fg,
                                   const std::string& new_prompt_bg, std::ptrdiff_t dx = 0, std::ptrdiff_t dy = 0,
                                   const JobProgress& progress = {}) {
  if (fg.bundle.phase != Phase::foreground) throw DependencyError("replace_background needs a foreground bundle");
  PipelineConfig cfg = base;
  cfg.prompt_bg = new_prompt_bg;
  for (auto& b : cfg.boxes) {
    b.box.cx += static_cast<double>(dx);
    b.box.cy += static_cast<double>(dy);
  }
  validate(cfg);
  detail::check_capabilities(cfg, backend);
  JobProgress p2 = progress;
  p2.phases = 2;

  const SeedlingBundle moved = (dx == 0 && dy == 0) ? fg.bundle : translate_bundle(fg.bundle, dx, dy);
  Image moved_image = fg.image_rgb;
  if (dx != 0 || dy != 0) {
    moved_image = Image(fg.image_rgb.width, fg.image_rgb.height, fg.image_rgb.channels);
    const auto w = static_cast<std::ptrdiff_t>(fg.image_rgb.width), h = static_cast<std::ptrdiff_t>(fg.image_rgb.height);
    const std::ptrdiff_t px = dx * static_cast<std::ptrdiff_t>(kLatentScale), py = dy * static_cast<std::ptrdiff_t>(kLatentScale);
    for (std::ptrdiff_t y = 0; y < h; ++y)
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        const std::ptrdiff_t sy = y - py, sx = x - px;
        if (sy < 0 || sx < 0 || sy >= h || sx >= w) continue;
        for (std::size_t c = 0; c < moved_image.channels; ++c)
          moved_image.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) =
              fg.image_rgb.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), c);
      }
  }
  const BoxMask moved_box = (dx == 0 && dy == 0) ? fg.box_mask : translate_mask(fg.box_mask, dx, dy);

  CompositeResult comp = generate_composite(cfg, backend, moved, {false, p2.phase(0)});
  BackgroundResult bg = generate_background(cfg, backend, comp.bundle, {false, p2.phase(1)});
  LayerSet ls = detail::assemble(cfg, backend, moved_image, moved_box, moved, comp, bg, {}, "replace_background");
  ls.metadata["offset"] = {dx, dy};
  return ls;
}

inline LayerSet replace_background(const LayerSet& base, DenoiserBackend& backend, const std::string& new_prompt_bg,
                                   std::ptrdiff_t dx = 0, std::ptrdiff_t dy = 0, const JobProgress& progress = {}) {
  return replace_background(base.config, backend, foreground_of(base), new_prompt_bg, dx, dy, progress);
}

// One foreground trajectory per box (box prompt or prompt_fg), merged into a
// single composite init: each location takes the seedling of the first box
// whose object mask covers it.
inline LayerSet place_multi_objects(const PipelineConfig& cfg, DenoiserBackend& backend, const JobProgress& progress = {}) {
  validate(cfg);
  detail::check_capabilities(cfg, backend);
  const Shape shape = cfg.latent_shape();
  const std::size_t n = cfg.boxes.size();
  JobProgress p = progress;
  p.phases = n + 2;

  std::vector<ForegroundResult> fgs;
  std::vector<std::string> warnings;
  for (std::size_t i = 0; i < n; ++i) {
    const BoxSpec box = cfg.boxes[i].box;
    const std::string& prompt = cfg.boxes[i].prompt.empty() ? cfg.prompt_fg : cfg.boxes[i].prompt;
    fgs.push_back(detail::run_foreground(cfg, backend, std::span(&box, 1), prompt, i, {false, p.phase(i)}));
    warnings.insert(warnings.end(), fgs.back().warnings.begin(), fgs.back().warnings.end());
  }

  SeedlingBundle merged = fgs.front().bundle;
  ObjectMask taken(shape.height, shape.width);
  BoxMask merged_box(shape.height, shape.width, true);
  std::vector<detail::ObjectRegion> regions;
  Image fg_image = fgs.front().image;
  for (std::size_t i = 0; i < n; ++i) {
    const ObjectMask& mi = *fgs[i].bundle.mask;
    ObjectMask own(shape.height, shape.width);
    for (std::size_t y = 0; y < shape.height; ++y) {
      for (std::size_t x = 0; x < shape.width; ++x) {
        // Box masks mark green locations; a location keeps noise if any box keeps it.
        if (!fgs[i].box_mask(y, x)) merged_box.set(y, x, false);
        if (!mi(y, x) || taken(y, x)) continue;
        own.set(y, x, true);
        taken.set(y, x, true);
        for (std::size_t c = 0; c < kLatentChannels; ++c) {
          merged.latent(c, y, x) = fgs[i].bundle.latent(c, y, x);
          merged.noise(c, y, x) = fgs[i].bundle.noise(c, y, x);
        }
        for (std::size_t dy = 0; dy < kLatentScale; ++dy)
          for (std::size_t dx = 0; dx < kLatentScale; ++dx)
            for (std::size_t c = 0; c < 3; ++c)
              fg_image.at(y * kLatentScale + dy, x * kLatentScale + dx, c) =
                  fgs[i].image.at(y * kLatentScale + dy, x * kLatentScale + dx, c);
      }
    }
    const std::string& prompt = cfg.boxes[i].prompt.empty() ? cfg.prompt_fg : cfg.boxes[i].prompt;
    regions.push_back({prompt, std::move(own)});
  }
  merged.mask = taken;

  CompositeResult comp = detail::run_composite(cfg, backend, merged, regions, {false, p.phase(n)});
  BackgroundResult bg = generate_background(cfg, backend, comp.bundle, {false, p.phase(n + 1)});
  LayerSet ls = detail::assemble(cfg, backend, fg_image, merged_box, merged, comp, bg, warnings,
                                 n == 1 ? "generate_layers" : "place_multi_objects");
  nlohmann::json owners = nlohmann::json::array();
  for (const auto& r : regions) owners.push_back(r.mask.count());
  ls.metadata["region_pixels"] = owners;
  if (n == 1) ls.metadata["tau_bg"] = fgs.front().tau_bg;
  return ls;
}

}  // namespace taue
