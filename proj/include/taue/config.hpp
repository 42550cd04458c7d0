#pragma once

// JSON form of PipelineConfig. Parsing is strict: unknown keys and type errors
// raise ConfigError with the JSON path of the offending field.

#include <array>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "taue/pipeline.hpp"

namespace taue {

using nlohmann::json;

namespace detail {

inline void reject_unknown(const json& j, const std::string& path, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(path.empty() ? key : path + "." + key, "unknown key");
  }
}

template <typename T>
void read_field(const json& j, const std::string& path, const char* key, T& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  const std::string where = path.empty() ? key : path + "." + key;
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!it->is_number_integer() || (!it->is_number_unsigned() && it->template get<long long>() < 0)) {
        throw ConfigError(where, "expected a non-negative integer");
      }
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError(where, "expected a boolean");
    } else if constexpr (std::is_same_v<T, double>) {
      if (!it->is_number()) throw ConfigError(where, "expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw ConfigError(where, "expected a string");
    }
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where, e.what());
  }
}

}  // namespace detail

inline json to_json(const BackendConfig& b) {
  return {{"name", b.name},
          {"toy", {{"k", b.toy.k}, {"attention_hooks", b.toy.attention_hooks}, {"step_delay_ms", b.toy.step_delay_ms}}},
          {"ldm",
           {{"model", b.ldm.model},
            {"device", b.ldm.device},
            {"precision", b.ldm.precision},
            {"scheduler", b.ldm.scheduler},
            {"image_size", b.ldm.image_size},
            {"steps", b.ldm.steps},
            {"guidance_fg", b.ldm.guidance_fg},
            {"guidance_other", b.ldm.guidance_other},
            {"r_crop", b.ldm.r_crop}}}};
}

inline BackendConfig backend_from_json(const json& j, const std::string& path) {
  BackendConfig b;
  detail::reject_unknown(j, path, {"name", "toy", "ldm"});
  detail::read_field(j, path, "name", b.name);
  if (j.contains("toy")) {
    const std::string p = path + ".toy";
    detail::reject_unknown(j["toy"], p, {"k", "attention_hooks", "step_delay_ms"});
    detail::read_field(j["toy"], p, "k", b.toy.k);
    detail::read_field(j["toy"], p, "attention_hooks", b.toy.attention_hooks);
    detail::read_field(j["toy"], p, "step_delay_ms", b.toy.step_delay_ms);
  }
  if (j.contains("ldm")) {
    const std::string p = path + ".ldm";
    const json& l = j["ldm"];
    detail::reject_unknown(l, p, {"model", "device", "precision", "scheduler", "image_size", "steps", "guidance_fg", "guidance_other", "r_crop"});
    detail::read_field(l, p, "model", b.ldm.model);
    detail::read_field(l, p, "device", b.ldm.device);
    detail::read_field(l, p, "precision", b.ldm.precision);
    detail::read_field(l, p, "scheduler", b.ldm.scheduler);
    detail::read_field(l, p, "image_size", b.ldm.image_size);
    detail::read_field(l, p, "steps", b.ldm.steps);
    detail::read_field(l, p, "guidance_fg", b.ldm.guidance_fg);
    detail::read_field(l, p, "guidance_other", b.ldm.guidance_other);
    detail::read_field(l, p, "r_crop", b.ldm.r_crop);
  }
  return b;
}

inline json to_json(const PipelineConfig& c) {
  json boxes = json::array();
  for (const auto& b : c.boxes) {
    json jb{{"cx", b.box.cx}, {"cy", b.box.cy}, {"w", b.box.w}, {"h", b.box.h},
            {"sigma_box", b.box.sigma_box}, {"p_min", b.box.p_min}, {"p_max", b.box.p_max}};
    if (!b.prompt.empty()) jb["prompt"] = b.prompt;
    boxes.push_back(std::move(jb));
  }
  json j{{"prompt_fg", c.prompt_fg},
         {"prompt_bg", c.prompt_bg},
         {"prompt_all", c.prompt_all},
         {"boxes", boxes},
         {"alpha", c.alpha},
         {"lambda", c.lambda},
         {"sigma_blur", c.sigma_blur},
         {"tau_bg", c.tau_bg ? json(*c.tau_bg) : json(nullptr)},
         {"tau_bg_percentile", c.tau_bg_percentile},
         {"tau_attn", c.tau_attn},
         {"r_crop", c.r_crop},
         {"steps", c.steps},
         {"guidance_fg", c.guidance_fg},
         {"guidance_other", c.guidance_other},
         {"seed", c.seed},
         {"highpass", c.highpass},
         {"mask_postprocess", c.mask_postprocess},
         {"recompute_mask", c.recompute_mask},
         {"width", c.width},
         {"height", c.height},
         {"feather_radius", c.feather_radius},
         {"green", c.green.values},
         {"backend", to_json(c.backend)}};
  return j;
}

inline constexpr std::array kPipelineKeys{
    "prompt_fg", "prompt_bg", "prompt_all", "boxes", "alpha", "lambda", "sigma_blur", "tau_bg", "tau_bg_percentile",
    "tau_attn", "r_crop", "steps", "guidance_fg", "guidance_other", "seed", "highpass", "mask_postprocess",
    "recompute_mask", "width", "height", "feather_radius", "green", "backend"};

// Reads the PipelineConfig fields of `j` on top of `base`; keys in `extra` are
// tolerated (and ignored) so callers can embed the config in a larger document.
inline PipelineConfig merge_config(PipelineConfig c, const json& j, std::initializer_list<const char*> extra = {}) {
  if (!j.is_object()) throw ConfigError("<root>", "expected an object");
  std::set<std::string> allowed(kPipelineKeys.begin(), kPipelineKeys.end());
  allowed.insert(extra.begin(), extra.end());
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(key, "unknown key");
  }
  using detail::read_field;
  read_field(j, "", "prompt_fg", c.prompt_fg);
  read_field(j, "", "prompt_bg", c.prompt_bg);
  read_field(j, "", "prompt_all", c.prompt_all);
  if (j.contains("boxes")) {
    const json& jb = j["boxes"];
    if (!jb.is_array()) throw ConfigError("boxes", "expected an array");
    c.boxes.clear();
    for (std::size_t i = 0; i < jb.size(); ++i) {
      const std::string p = "boxes[" + std::to_string(i) + "]";
      detail::reject_unknown(jb[i], p, {"cx", "cy", "w", "h", "sigma_box", "p_min", "p_max", "prompt"});
      for (const char* req : {"cx", "cy", "w", "h"}) {
        if (!jb[i].contains(req)) throw ConfigError(p + "." + req, "required");
      }
      LayoutBox b;
      read_field(jb[i], p, "cx", b.box.cx);
      read_field(jb[i], p, "cy", b.box.cy);
      read_field(jb[i], p, "w", b.box.w);
      read_field(jb[i], p, "h", b.box.h);
      read_field(jb[i], p, "sigma_box", b.box.sigma_box);
      read_field(jb[i], p, "p_min", b.box.p_min);
      read_field(jb[i], p, "p_max", b.box.p_max);
      read_field(jb[i], p, "prompt", b.prompt);
      c.boxes.push_back(std::move(b));
    }
  }
  read_field(j, "", "alpha", c.alpha);
  read_field(j, "", "lambda", c.lambda);
  read_field(j, "", "sigma_blur", c.sigma_blur);
  if (j.contains("tau_bg")) {
    if (j["tau_bg"].is_null()) {
      c.tau_bg.reset();
    } else {
      double v = 0.0;
      read_field(j, "", "tau_bg", v);
      c.tau_bg = v;
    }
  }
  read_field(j, "", "tau_bg_percentile", c.tau_bg_percentile);
  read_field(j, "", "tau_attn", c.tau_attn);
  read_field(j, "", "r_crop", c.r_crop);
  read_field(j, "", "steps", c.steps);
  read_field(j, "", "guidance_fg", c.guidance_fg);
  read_field(j, "", "guidance_other", c.guidance_other);
  read_field(j, "", "seed", c.seed);
  read_field(j, "", "highpass", c.highpass);
  read_field(j, "", "mask_postprocess", c.mask_postprocess);
  read_field(j, "", "recompute_mask", c.recompute_mask);
  read_field(j, "", "width", c.width);
  read_field(j, "", "height", c.height);
  read_field(j, "", "feather_radius", c.feather_radius);
  if (j.contains("green")) {
    const json& g = j["green"];
    if (!g.is_array() || g.size() != kLatentChannels) throw ConfigError("green", "expected an array of 4 numbers");
    std::array<float, kLatentChannels> v{};
    for (std::size_t i = 0; i < kLatentChannels; ++i) {
      if (!g[i].is_number()) throw ConfigError("green[" + std::to_string(i) + "]", "expected a number");
      v[i] = g[i].get<float>();
    }
    c.green = GreenLatentVector(v);
  }
  if (j.contains("backend")) {
    // A delta may carry a partial backend section; merge through the JSON form.
    json merged = to_json(c.backend);
    const json& jb = j["backend"];
    detail::reject_unknown(jb, "backend", {"name", "toy", "ldm"});
    for (const auto& [k, v] : jb.items()) {
      if (v.is_object()) {
        if (!merged[k].is_object()) merged[k] = json::object();
        merged[k].update(v);
      } else {
        merged[k] = v;
      }
    }
    c.backend = backend_from_json(merged, "backend");
  }
  return c;
}

inline PipelineConfig config_from_json(const json& j, std::initializer_list<const char*> extra = {}) {
  PipelineConfig c = merge_config(PipelineConfig{}, j, extra);
  validate(c);
  return c;
}

inline json parse_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open config file");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path, std::string("malformed JSON: ") + e.what());
  }
}

}  // namespace taue
