#pragma once

// Denoiser contract, the spatially-local toy backend used for exact testing,
// the generic denoising loop and the (optional) latent-diffusion adapter config.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "taue/attention.hpp"
#include "taue/core.hpp"
#include "taue/image.hpp"
#include "taue/ntc.hpp"

namespace taue {

// What a denoising step is conditioned on. A non-empty `region_prompts` means
// dual conditioning: each region prompt applies inside its hook mask and
// `prompt` applies everywhere else.
struct Conditioning {
  std::string prompt;
  double guidance = 7.5;
  std::vector<std::string> region_prompts;

  bool dual() const noexcept { return !region_prompts.empty(); }

  void validate() const {
    if (!(guidance >= 0.0)) throw InvalidArgument("guidance must be >= 0");
    if (prompt.empty()) throw InvalidArgument("conditioning prompt must be non-empty");
  }
};

struct Capabilities {
  Shape latent_shape;
  bool attention_hooks = false;
  bool dual_conditioning = false;
};

class DenoiserBackend {
 public:
  virtual ~DenoiserBackend() = default;

  virtual std::string name() const = 0;
  virtual Capabilities capabilities() const = 0;

  // Noise prediction at step t. With dual conditioning the hook blends the
  // per-prompt cross-attention outputs before the prediction is formed.
  virtual LatentTensor predict_noise(const LatentTensor& z, std::size_t t, const Conditioning& cond,
                                     const AttentionHook* hook) = 0;

  // One reverse step producing z_{t-1}.
  virtual LatentTensor scheduler_step(const LatentTensor& z_t, const LatentTensor& n_t, std::size_t t) = 0;

  // Per-token cross-attention maps of `cond.prompt` evaluated at (z, t).
  virtual AttentionProbe probe_attention(const LatentTensor& z, std::size_t t, const Conditioning& cond) = 0;

  virtual Image decode(const LatentTensor& z) = 0;
};

// Fixed latent-to-RGB map used by the toy decoder (rows: latent channels,
// columns: R, G, B). Output = clamp((sum + 1) / 2) * 255.
inline constexpr double kToyLatentToRgb[4][3] = {
    {0.298, 0.207, 0.208},
    {0.187, 0.286, 0.173},
    {-0.158, 0.189, 0.264},
    {-0.184, -0.271, -0.473},
};

struct ToyOptions {
  double k = 0.2;                // contraction rate, in (0, 1)
  bool attention_hooks = true;   // emulate one cross-attention layer
  std::size_t step_delay_ms = 0; // artificial per-step latency (progress tests)
};

// Denoiser whose noise prediction is k (z - target(prompt)), evaluated
// independently at every location. Targets are standard-normal latents seeded
// by a stable hash of the prompt. With hooks enabled the target itself plays the
// role of the cross-attention output (4 features per location), so attention
// blending selects a target per location.
class ToyBackend final : public DenoiserBackend {
 public:
  explicit ToyBackend(Shape shape, ToyOptions opts = {}) : shape_(shape), opts_(opts) {
    LatentTensor probe(shape);  // validates the shape
    if (!(opts.k > 0.0 && opts.k < 1.0)) throw InvalidArgument("toy contraction rate k must lie in (0, 1)");
  }

  std::string name() const override { return "toy"; }

  Capabilities capabilities() const override { return {shape_, opts_.attention_hooks, opts_.attention_hooks}; }

  const ToyOptions& options() const noexcept { return opts_; }

  const LatentTensor& target(const std::string& prompt) {
    std::lock_guard lock(mu_);
    auto it = targets_.find(prompt);
    if (it == targets_.end()) {
      RandomSource rng(stable_hash(prompt));
      it = targets_.emplace(prompt, sample_gaussian(shape_, rng)).first;
    }
    return it->second;
  }

  // Target rearranged as a location-major attention output.
  RawAttention attention_output(const std::string& prompt) {
    const LatentTensor& tgt = target(prompt);
    RawAttention a(shape_.height, shape_.width, shape_.channels);
    for (std::size_t c = 0; c < shape_.channels; ++c)
      for (std::size_t y = 0; y < shape_.height; ++y)
        for (std::size_t x = 0; x < shape_.width; ++x) a(y, x, c) = tgt(c, y, x);
    return a;
  }

  LatentTensor predict_noise(const LatentTensor& z, std::size_t t, const Conditioning& cond, const AttentionHook* hook) override {
    check_shape(z);
    (void)t;
    cond.validate();
    if ((hook != nullptr || cond.dual()) && !opts_.attention_hooks) {
      throw CapabilityError("toy backend was built without attention hook support");
    }
    if (opts_.step_delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(opts_.step_delay_ms));

    LatentTensor out(shape_);
    if (hook == nullptr && !cond.dual()) {
      const LatentTensor& tgt = target(cond.prompt);
      for (std::size_t i = 0; i < out.values().size(); ++i) {
        out.values()[i] = contract(z.values()[i], tgt.values()[i]);
      }
      return out;
    }

    // One emulated cross-attention layer.
    std::vector<RawAttention> fg;
    const std::vector<std::string>& region_prompts = cond.dual() ? cond.region_prompts : std::vector<std::string>{cond.prompt};
    for (const auto& p : region_prompts) fg.push_back(attention_output(p));
    const RawAttention bg = attention_output(cond.prompt);
    const RawAttention mixed = hook ? (*hook)(0, fg, cond.dual() ? &bg : nullptr) : bg;
    if (mixed.height() != shape_.height || mixed.width() != shape_.width || mixed.features() != shape_.channels) {
      throw BackendError("attention hook returned a tensor of the wrong shape");
    }
    for (std::size_t c = 0; c < shape_.channels; ++c)
      for (std::size_t y = 0; y < shape_.height; ++y)
        for (std::size_t x = 0; x < shape_.width; ++x) out(c, y, x) = contract(z(c, y, x), mixed(y, x, c));
    return out;
  }

  LatentTensor scheduler_step(const LatentTensor& z_t, const LatentTensor& n_t, std::size_t t) override {
    if (t == 0) throw InvalidArgument("scheduler_step: trajectory already complete at t = 0");
    check_shape(z_t);
    require_same_shape(z_t, n_t, "scheduler_step");
    LatentTensor out(shape_);
    for (std::size_t i = 0; i < out.values().size(); ++i) {
      out.values()[i] = static_cast<float>(static_cast<double>(z_t.values()[i]) - static_cast<double>(n_t.values()[i]));
    }
    return out;
  }

  // Tokens are <bos> word... <eos>. Each content token attends with strength
  // proportional to the distance of the latent from the green vector, scaled by
  // a per-word weight; markers attend uniformly.
  AttentionProbe probe_attention(const LatentTensor& z, std::size_t t, const Conditioning& cond) override {
    check_shape(z);
    (void)t;
    std::vector<std::string> words;
    std::istringstream ss(cond.prompt);
    for (std::string w; ss >> w;) words.push_back(w);
    const GreenLatentVector green;
    Map2D distance(shape_.height, shape_.width);
    for (std::size_t y = 0; y < shape_.height; ++y) {
      for (std::size_t x = 0; x < shape_.width; ++x) {
        double d2 = 0.0;
        for (std::size_t c = 0; c < shape_.channels; ++c) {
          const double d = static_cast<double>(z(c, y, x)) - green.values[c];
          d2 += d * d;
        }
        distance(y, x) = static_cast<float>(std::sqrt(d2));
      }
    }
    AttentionProbe probe;
    std::vector<Map2D> tokens;
    tokens.emplace_back(shape_.height, shape_.width, 1.0f);
    for (const auto& w : words) {
      const double weight = 0.5 + 0.5 * static_cast<double>(stable_hash(w) % 1000) / 1000.0;
      Map2D m = distance;
      for (float& v : m.values()) v = static_cast<float>(weight * v);
      tokens.push_back(std::move(m));
      probe.token_span.push_back(tokens.size() - 1);
    }
    tokens.emplace_back(shape_.height, shape_.width, 1.0f);
    probe.layers.push_back(std::move(tokens));
    return probe;
  }

  Image decode(const LatentTensor& z) override {
    check_shape(z);
    Image img(shape_.width * kLatentScale, shape_.height * kLatentScale, 3);
    for (std::size_t y = 0; y < shape_.height; ++y) {
      for (std::size_t x = 0; x < shape_.width; ++x) {
        std::uint8_t rgb[3];
        for (std::size_t k = 0; k < 3; ++k) {
          double v = 0.0;
          for (std::size_t c = 0; c < shape_.channels; ++c) v += kToyLatentToRgb[c][k] * z(c, y, x);
          const double s = std::clamp((v + 1.0) / 2.0, 0.0, 1.0);
          rgb[k] = static_cast<std::uint8_t>(std::lround(s * 255.0));
        }
        for (std::size_t dy = 0; dy < kLatentScale; ++dy)
          for (std::size_t dx = 0; dx < kLatentScale; ++dx)
            for (std::size_t k = 0; k < 3; ++k) img.at(y * kLatentScale + dy, x * kLatentScale + dx, k) = rgb[k];
      }
    }
    return img;
  }

 private:
  float contract(float z, float target) const {
    return static_cast<float>(opts_.k * (static_cast<double>(z) - static_cast<double>(target)));
  }

  void check_shape(const LatentTensor& z) const {
    if (z.shape() != shape_) {
      throw CapabilityError("toy backend latent shape is " + to_string(shape_) + ", got " + to_string(z.shape()));
    }
  }

  Shape shape_;
  ToyOptions opts_;
  std::mutex mu_;
  std::map<std::string, LatentTensor> targets_;
};

// ---------------------------------------------------------------------------
// Denoising loop.
// ---------------------------------------------------------------------------

using NoiseOverride = std::function<LatentTensor(const LatentTensor& n_t, std::size_t t)>;
using StepCallback = std::function<void(std::size_t done, std::size_t total)>;

struct DenoiseRequest {
  LatentTensor z_init;
  std::size_t total_steps = 50;
  Conditioning cond;
  NoiseOverride noise_override;
  const AttentionHook* hook = nullptr;
  std::vector<std::size_t> record;  // steps whose (z_t, raw n_t) are cached
  StepCallback on_step;
};

struct DenoiseResult {
  LatentTensor final_latent;
  Trajectory recorded;
};

// Raises capability errors before any step runs.
inline void check_request(DenoiserBackend& backend, const DenoiseRequest& req) {
  const TimeGrid grid(req.total_steps);
  for (std::size_t s : req.record) {
    if (!grid.contains(s)) throw InvalidArgument("record step " + std::to_string(s) + " outside [0, T]");
  }
  req.cond.validate();
  const Capabilities caps = backend.capabilities();
  if (req.z_init.shape() != caps.latent_shape) {
    throw CapabilityError("backend latent shape is " + to_string(caps.latent_shape) + ", got " + to_string(req.z_init.shape()));
  }
  if (req.hook != nullptr && !caps.attention_hooks) throw CapabilityError("backend does not support attention hooks");
  if (req.cond.dual() && !caps.dual_conditioning) throw CapabilityError("backend does not support dual conditioning");
  if (req.cond.dual() && req.hook == nullptr) throw InvalidArgument("dual conditioning needs an attention hook");
}

// t = T .. 1: predict, record (latent before the step, raw prediction),
// override, step. Recording step 0 caches the final latent and a prediction at t = 0.
inline DenoiseResult run_denoise(DenoiserBackend& backend, const DenoiseRequest& req) {
  check_request(backend, req);
  const auto wants = [&](std::size_t t) { return std::find(req.record.begin(), req.record.end(), t) != req.record.end(); };
  DenoiseResult result;
  LatentTensor z = req.z_init;
  for (std::size_t t = req.total_steps; t >= 1; --t) {
    LatentTensor n = backend.predict_noise(z, t, req.cond, req.hook);
    if (wants(t)) {
      result.recorded.latents.insert_or_assign(t, z);
      result.recorded.noises.insert_or_assign(t, n);
    }
    if (req.noise_override) {
      LatentTensor overridden = req.noise_override(n, t);
      if (overridden.shape() != n.shape()) throw InvalidArgument("noise override returned a tensor of the wrong shape");
      n = std::move(overridden);
    }
    z = backend.scheduler_step(z, n, t);
    if (req.on_step) req.on_step(req.total_steps - t + 1, req.total_steps);
  }
  if (wants(0)) {
    result.recorded.latents.insert_or_assign(0, z);
    result.recorded.noises.insert_or_assign(0, backend.predict_noise(z, 0, req.cond, req.hook));
  }
  result.final_latent = std::move(z);
  return result;
}

// ---------------------------------------------------------------------------
// Backend selection.
// ---------------------------------------------------------------------------

// Settings for a real latent-diffusion adapter. Defaults follow the reference
// setup: 1024x1024 images (128x128 latents), Euler discrete scheduler, 50 steps,
// guidance 7.5 for the foreground and 5.0 elsewhere, seedlings at half the
// trajectory.
struct LdmSettings {
  std::string model = "stabilityai/stable-diffusion-xl-base-1.0";
  std::string device = "cuda";
  std::string precision = "fp16";
  std::string scheduler = "euler_discrete";
  std::size_t image_size = 1024;
  std::size_t steps = 50;
  double guidance_fg = 7.5;
  double guidance_other = 5.0;
  double r_crop = 0.5;
};

struct BackendConfig {
  std::string name = "toy";  // "toy" | "ldm"
  ToyOptions toy;
  LdmSettings ldm;
};

// Adapter factory hook for builds that link a real model runtime.
using LdmFactory = std::function<std::unique_ptr<DenoiserBackend>(const LdmSettings&, Shape)>;

inline LdmFactory& ldm_factory() {
  static LdmFactory factory;
  return factory;
}

inline std::unique_ptr<DenoiserBackend> make_backend(const BackendConfig& cfg, Shape shape) {
  if (cfg.name == "toy") return std::make_unique<ToyBackend>(shape, cfg.toy);
  if (cfg.name == "ldm") {
    if (!ldm_factory()) throw BackendError("ldm adapter is not available in this build (model '" + cfg.ldm.model + "')");
    return ldm_factory()(cfg.ldm, shape);
  }
  throw BackendError("unknown backend '" + cfg.name + "'");
}

}  // namespace taue
