#pragma once

// Cross-attention aggregation for object masks and mask-driven blending of
// foreground/background-conditioned attention outputs.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "taue/core.hpp"
#include "taue/masks.hpp"

namespace taue {

// Attention layer output: `features` values per location, location-major.
class RawAttention {
 public:
  RawAttention() = default;
  RawAttention(std::size_t height, std::size_t width, std::size_t features, float fill = 0.0f)
      : height_(height), width_(width), features_(features), data_(height * width * features, fill) {
    if (height == 0 || width == 0 || features == 0) throw InvalidArgument("attention dimensions must be >= 1");
  }
  RawAttention(std::size_t height, std::size_t width, std::size_t features, std::vector<float> data)
      : RawAttention(height, width, features) {
    if (data.size() != data_.size()) throw InvalidArgument("attention data size does not match dimensions");
    for (float v : data) {
      if (!std::isfinite(v)) throw InvalidArgument("attention values must be finite");
    }
    data_ = std::move(data);
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t features() const noexcept { return features_; }

  float& operator()(std::size_t y, std::size_t x, std::size_t f) { return data_[(y * width_ + x) * features_ + f]; }
  float operator()(std::size_t y, std::size_t x, std::size_t f) const { return data_[(y * width_ + x) * features_ + f]; }

  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }

  bool same_shape(const RawAttention& o) const noexcept {
    return height_ == o.height_ && width_ == o.width_ && features_ == o.features_;
  }

  friend bool operator==(const RawAttention&, const RawAttention&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t features_ = 0;
  std::vector<float> data_;
};

// Token-aggregated attention map with values in [0, 1].
struct AggregatedAttention {
  Map2D values;
};

// Bilinear resize with half-pixel centres and edge clamping.
inline Map2D resize_bilinear(const Map2D& src, std::size_t height, std::size_t width) {
  if (src.empty() || height == 0 || width == 0) throw InvalidArgument("resize_bilinear: empty grid");
  if (src.height() == height && src.width() == width) return src;
  Map2D out(height, width);
  const double sy = static_cast<double>(src.height()) / static_cast<double>(height);
  const double sx = static_cast<double>(src.width()) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height() - 1));
    const auto y0 = static_cast<std::size_t>(std::floor(fy));
    const std::size_t y1 = std::min(y0 + 1, src.height() - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width() - 1));
      const auto x0 = static_cast<std::size_t>(std::floor(fx));
      const std::size_t x1 = std::min(x0 + 1, src.width() - 1);
      const double tx = fx - static_cast<double>(x0);
      const double top = (1.0 - tx) * src(y0, x0) + tx * src(y0, x1);
      const double bot = (1.0 - tx) * src(y1, x0) + tx * src(y1, x1);
      out(y, x) = static_cast<float>((1.0 - ty) * top + ty * bot);
    }
  }
  return out;
}

template <typename Tag>
Mask<Tag> resize_nearest(const Mask<Tag>& m, std::size_t height, std::size_t width) {
  if (m.height() == height && m.width() == width) return m;
  Mask<Tag> out(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = std::min(m.height() - 1, (2 * y + 1) * m.height() / (2 * height));
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sx = std::min(m.width() - 1, (2 * x + 1) * m.width() / (2 * width));
      out.set(y, x, m(sy, sx));
    }
  }
  return out;
}

// Min-max normalization to [0, 1]; a constant map becomes all zeros.
inline Map2D normalize_min_max(const Map2D& map) {
  Map2D out(map.height(), map.width(), 0.0f);
  if (map.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(map.values().begin(), map.values().end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return out;
  auto src = map.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<float>((src[i] - lo) / (hi - lo));
  return out;
}

inline Map2D mean_maps(std::span<const Map2D> maps) {
  if (maps.empty()) throw InvalidArgument("mean_maps: no maps");
  Map2D out(maps.front().height(), maps.front().width());
  std::vector<double> acc(out.size(), 0.0);
  for (const Map2D& m : maps) {
    if (!m.same_shape(out)) throw InvalidArgument("mean_maps: shape mismatch");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += m.values()[i];
  }
  for (std::size_t i = 0; i < acc.size(); ++i) out.values()[i] = static_cast<float>(acc[i] / static_cast<double>(maps.size()));
  return out;
}

// Per-layer, per-token cross-attention probabilities (heads already averaged,
// see mean_maps) plus the indices of the prompt's content tokens.
struct AttentionProbe {
  std::vector<std::vector<Map2D>> layers;  // layers[l][token]
  std::vector<std::size_t> token_span;
};

// Mean over the selected tokens, bilinear resize to the base latent grid,
// min-max normalization.
inline AggregatedAttention aggregate_attention(std::span<const Map2D> per_token_maps, std::span<const std::size_t> token_span,
                                               std::size_t base_height, std::size_t base_width) {
  if (token_span.empty()) throw InvalidArgument("aggregate_attention: empty token span");
  std::vector<Map2D> selected;
  selected.reserve(token_span.size());
  for (std::size_t t : token_span) {
    if (t >= per_token_maps.size()) throw InvalidArgument("aggregate_attention: token index out of range");
    selected.push_back(per_token_maps[t]);
  }
  return {normalize_min_max(resize_bilinear(mean_maps(selected), base_height, base_width))};
}

// Multi-layer form: each layer is token-averaged and resized, then layers are
// averaged before normalization.
inline AggregatedAttention aggregate_attention(const AttentionProbe& probe, std::size_t base_height, std::size_t base_width) {
  if (probe.layers.empty()) throw InvalidArgument("aggregate_attention: probe has no layers");
  if (probe.token_span.empty()) throw InvalidArgument("aggregate_attention: empty token span");
  std::vector<Map2D> per_layer;
  for (const auto& layer : probe.layers) {
    std::vector<Map2D> selected;
    for (std::size_t t : probe.token_span) {
      if (t >= layer.size()) throw InvalidArgument("aggregate_attention: token index out of range");
      selected.push_back(layer[t]);
    }
    per_layer.push_back(resize_bilinear(mean_maps(selected), base_height, base_width));
  }
  return {normalize_min_max(mean_maps(per_layer))};
}

// A_mix = m * A_fg + (1 - m) * A_bg, mask broadcast over features. The mask is
// resized (nearest) to the attention resolution when they differ.
inline RawAttention blend_attention(const RawAttention& fg, const RawAttention& bg, const ObjectMask& m_obj) {
  if (!fg.same_shape(bg)) throw InvalidArgument("blend_attention: foreground and background shapes differ");
  const ObjectMask m = resize_nearest(m_obj, fg.height(), fg.width());
  RawAttention out = bg;
  for (std::size_t y = 0; y < fg.height(); ++y) {
    for (std::size_t x = 0; x < fg.width(); ++x) {
      if (!m(y, x)) continue;
      for (std::size_t f = 0; f < fg.features(); ++f) out(y, x, f) = fg(y, x, f);
    }
  }
  return out;
}

// Cross-attention interception installed into a backend. One mask per
// foreground conditioning; masks should already be disjoint (earlier entries
// win where they are not).
class AttentionHook {
 public:
  AttentionHook() = default;
  explicit AttentionHook(ObjectMask m_obj, bool enabled = true) : masks_{std::move(m_obj)}, enabled_(enabled) {}
  explicit AttentionHook(std::vector<ObjectMask> region_masks, bool enabled = true)
      : masks_(std::move(region_masks)), enabled_(enabled) {}

  bool enabled() const noexcept { return enabled_; }
  std::size_t regions() const noexcept { return masks_.size(); }
  const std::vector<ObjectMask>& masks() const noexcept { return masks_; }

  // `fg` carries one output per region conditioning; `bg` the background
  // conditioning. Disabled hooks return the primary output unchanged.
  RawAttention operator()(std::size_t /*layer_id*/, std::span<const RawAttention> fg, const RawAttention* bg) const {
    if (fg.empty()) throw BackendError("attention hook: missing foreground conditioning");
    if (!enabled_) return fg.front();
    if (bg == nullptr) throw BackendError("attention hook: missing background conditioning");
    if (fg.size() != masks_.size()) throw BackendError("attention hook: conditioning count does not match masks");
    RawAttention out = *bg;
    for (std::size_t i = masks_.size(); i-- > 0;) out = blend_attention(fg[i], out, masks_[i]);
    return out;
  }

 private:
  std::vector<ObjectMask> masks_;
  bool enabled_ = false;
};

}  // namespace taue
