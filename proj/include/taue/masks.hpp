#pragma once

// Probabilistic box masks (retention map + Bernoulli sampling) and object-region
// masks from green-channel activation and foreground attention.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "taue/core.hpp"

namespace taue {

// Binary mask at latent resolution. The tag keeps box masks (green-blend region)
// and object masks (object region) from being swapped by accident.
template <typename Tag>
class Mask {
 public:
  Mask() = default;
  Mask(std::size_t height, std::size_t width, bool fill = false) : grid_(height, width, fill ? 1 : 0) {}
  explicit Mask(Grid<std::uint8_t> grid) : grid_(std::move(grid)) {
    for (auto v : grid_.values()) {
      if (v > 1) throw InvalidArgument("mask values must be 0 or 1");
    }
  }

  std::size_t height() const noexcept { return grid_.height(); }
  std::size_t width() const noexcept { return grid_.width(); }
  std::size_t size() const noexcept { return grid_.size(); }

  bool operator()(std::size_t y, std::size_t x) const { return grid_(y, x) != 0; }
  void set(std::size_t y, std::size_t x, bool v) { grid_(y, x) = v ? 1 : 0; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(grid_.values().begin(), grid_.values().end(), std::uint8_t{1}));
  }
  bool any() const { return count() > 0; }

  const Grid<std::uint8_t>& grid() const noexcept { return grid_; }

  Mask complement() const {
    Mask out = *this;
    for (auto& v : out.grid_.values()) v = 1 - v;
    return out;
  }

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  Grid<std::uint8_t> grid_;
};

struct BoxMaskTag {};
struct ObjectMaskTag {};
// 1 = green-blend location, 0 = retained noise.
using BoxMask = Mask<BoxMaskTag>;
// 1 = object region.
using ObjectMask = Mask<ObjectMaskTag>;

template <typename Tag>
void require_mask_shape(const Mask<Tag>& m, const LatentTensor& t, std::string_view what) {
  if (m.height() != t.height() || m.width() != t.width()) {
    throw InvalidArgument(std::string(what) + ": mask " + std::to_string(m.height()) + "x" + std::to_string(m.width()) +
                          " does not match latent " + to_string(t.shape()));
  }
}

// Object box in latent pixel units. Pixel (x, y) sits at integer coordinates.
struct BoxSpec {
  double cx = 0.0;
  double cy = 0.0;
  double w = 1.0;
  double h = 1.0;
  double sigma_box = 0.5;
  double p_min = 0.2;
  double p_max = 0.95;

  bool contains(double x, double y) const { return std::abs(x - cx) <= w / 2.0 && std::abs(y - cy) <= h / 2.0; }

  friend bool operator==(const BoxSpec&, const BoxSpec&) = default;
};

inline void validate_box(const BoxSpec& b, std::size_t height, std::size_t width) {
  if (!(b.w > 0.0) || !(b.h > 0.0)) throw InvalidArgument("box width and height must be > 0");
  if (!(b.sigma_box > 0.0)) throw InvalidArgument("sigma_box must be > 0");
  if (!(b.p_min >= 0.0 && b.p_min <= b.p_max && b.p_max <= 1.0)) {
    throw InvalidArgument("box retention range must satisfy 0 <= p_min <= p_max <= 1");
  }
  // Intersects the grid iff some integer coordinate lies within each half-extent.
  const auto axis_hits = [](double c, double half, std::size_t n) {
    const double lo = std::max(0.0, std::ceil(c - half));
    const double hi = std::min(static_cast<double>(n) - 1.0, std::floor(c + half));
    return lo <= hi;
  };
  if (!axis_hits(b.cx, b.w / 2.0, width) || !axis_hits(b.cy, b.h / 2.0, height)) {
    throw InvalidArgument("box does not intersect the latent grid");
  }
}

struct RetentionMap {
  Map2D values;
};

// Unscaled boxed Gaussian retention score at (x, y); 0 outside the box.
inline double box_retention(const BoxSpec& b, double x, double y) {
  if (!b.contains(x, y)) return 0.0;
  const double u = (x - b.cx) / (b.w / 2.0);
  const double v = (y - b.cy) / (b.h / 2.0);
  return std::exp(-(u * u + v * v) / (2.0 * b.sigma_box * b.sigma_box));
}

// Per box: boxed Gaussian, affinely rescaled so the in-box extremes map to
// [p_min, p_max]. Boxes combine by pointwise maximum.
inline RetentionMap retention_map(std::span<const BoxSpec> boxes, std::size_t height, std::size_t width) {
  if (boxes.empty()) throw InvalidArgument("retention_map needs at least one box");
  if (height == 0 || width == 0) throw InvalidArgument("retention_map grid must be non-empty");
  RetentionMap out{Map2D(height, width, 0.0f)};
  std::vector<double> raw(height * width);
  for (const BoxSpec& b : boxes) {
    validate_box(b, height, width);
    double lo = 2.0, hi = -1.0;
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const auto fx = static_cast<double>(x), fy = static_cast<double>(y);
        if (!b.contains(fx, fy)) continue;
        const double p = box_retention(b, fx, fy);
        raw[y * width + x] = p;
        lo = std::min(lo, p);
        hi = std::max(hi, p);
      }
    }
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        if (!b.contains(static_cast<double>(x), static_cast<double>(y))) continue;
        const double p = raw[y * width + x];
        const double scaled = hi > lo ? b.p_min + (p - lo) / (hi - lo) * (b.p_max - b.p_min) : b.p_max;
        out.values(y, x) = std::max(out.values(y, x), static_cast<float>(scaled));
      }
    }
  }
  return out;
}

// M(x,y) = 1 iff R(x,y) > P(x,y), R ~ U[0,1) drawn in row-major order.
inline BoxMask sample_box_mask(const RetentionMap& map, RandomSource& rng) {
  BoxMask m(map.values.height(), map.values.width());
  for (std::size_t y = 0; y < m.height(); ++y) {
    for (std::size_t x = 0; x < m.width(); ++x) {
      const double r = rng.uniform();
      m.set(y, x, r > static_cast<double>(map.values(y, x)));
    }
  }
  return m;
}

// Blurred sum of the two green-injected channels (0-based 1 and 2).
inline Map2D activation_map(const LatentTensor& seedling, double sigma_blur) {
  Map2D sum(seedling.height(), seedling.width());
  auto g = seedling.plane(1);
  auto b = seedling.plane(2);
  auto dst = sum.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(static_cast<double>(g[i]) + static_cast<double>(b[i]));
  return gaussian_blur(sum, sigma_blur);
}

// m_obj = [v_gb < tau_bg] AND [attn > tau_attn].
inline ObjectMask object_mask(const Map2D& v_gb, const Map2D& attn, double tau_bg, double tau_attn) {
  if (!v_gb.same_shape(attn)) throw InvalidArgument("object_mask: activation and attention shapes differ");
  ObjectMask m(v_gb.height(), v_gb.width());
  for (std::size_t y = 0; y < m.height(); ++y) {
    for (std::size_t x = 0; x < m.width(); ++x) {
      m.set(y, x, static_cast<double>(v_gb(y, x)) < tau_bg && static_cast<double>(attn(y, x)) > tau_attn);
    }
  }
  return m;
}

// Linear-interpolated quantile (q in [0,1]) of the map values.
inline double percentile(const Map2D& map, double q) {
  if (map.empty()) throw InvalidArgument("percentile of an empty map");
  if (!(q >= 0.0 && q <= 1.0)) throw InvalidArgument("percentile fraction must lie in [0, 1]");
  std::vector<double> v(map.values().begin(), map.values().end());
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Pixels covered by any box, grown by `dilate` pixels in each direction.
inline ObjectMask box_region(std::span<const BoxSpec> boxes, std::size_t height, std::size_t width, double dilate = 0.0) {
  ObjectMask m(height, width);
  for (const BoxSpec& b : boxes) {
    BoxSpec grown = b;
    grown.w += 2.0 * dilate;
    grown.h += 2.0 * dilate;
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        if (grown.contains(static_cast<double>(x), static_cast<double>(y))) m.set(y, x, true);
      }
    }
  }
  return m;
}

inline ObjectMask intersect(const ObjectMask& a, const ObjectMask& b) {
  if (!a.grid().same_shape(b.grid())) throw InvalidArgument("intersect: mask shapes differ");
  ObjectMask out(a.height(), a.width());
  for (std::size_t y = 0; y < a.height(); ++y)
    for (std::size_t x = 0; x < a.width(); ++x) out.set(y, x, a(y, x) && b(y, x));
  return out;
}

namespace detail {

// 3x3 max (dilate) or min (erode) filter that ignores out-of-bounds neighbours.
inline ObjectMask morph3(const ObjectMask& m, bool dilate) {
  ObjectMask out(m.height(), m.width());
  const auto h = static_cast<std::ptrdiff_t>(m.height()), w = static_cast<std::ptrdiff_t>(m.width());
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      bool v = !dilate;
      for (std::ptrdiff_t dy = -1; dy <= 1; ++dy) {
        for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
          const std::ptrdiff_t yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
          const bool s = m(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
          v = dilate ? (v || s) : (v && s);
        }
      }
      out.set(static_cast<std::size_t>(y), static_cast<std::size_t>(x), v);
    }
  }
  return out;
}

}  // namespace detail

inline ObjectMask morphological_close(const ObjectMask& m) { return detail::morph3(detail::morph3(m, true), false); }

// Largest 4-connected component of `m` restricted to `region`. Ties go to the
// component whose first pixel comes first in row-major order.
inline ObjectMask largest_component(const ObjectMask& m, const ObjectMask& region) {
  const std::size_t h = m.height(), w = m.width();
  std::vector<int> label(h * w, -1);
  std::vector<std::size_t> sizes;
  for (std::size_t start = 0; start < h * w; ++start) {
    const std::size_t sy = start / w, sx = start % w;
    if (label[start] >= 0 || !m(sy, sx) || !region(sy, sx)) continue;
    const int id = static_cast<int>(sizes.size());
    sizes.push_back(0);
    std::queue<std::size_t> q;
    q.push(start);
    label[start] = id;
    while (!q.empty()) {
      const std::size_t p = q.front();
      q.pop();
      ++sizes.back();
      const std::size_t py = p / w, px = p % w;
      const std::size_t nbrs[4][2] = {{py - 1, px}, {py + 1, px}, {py, px - 1}, {py, px + 1}};
      for (const auto& n : nbrs) {
        // Unsigned wrap-around takes care of the negative side.
        if (n[0] >= h || n[1] >= w) continue;
        const std::size_t np = n[0] * w + n[1];
        if (label[np] >= 0 || !m(n[0], n[1]) || !region(n[0], n[1])) continue;
        label[np] = id;
        q.push(np);
      }
    }
  }
  ObjectMask out(h, w);
  if (sizes.empty()) return out;
  const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (std::size_t i = 0; i < h * w; ++i) {
    if (label[i] == best) out.set(i / w, i % w, true);
  }
  return out;
}

// Object-mask clean-up: 3x3 closing, then the largest component inside each box
// (grown by one pixel, the closing radius).
inline ObjectMask postprocess_object_mask(const ObjectMask& m, std::span<const BoxSpec> boxes) {
  const ObjectMask closed = morphological_close(m);
  ObjectMask out(m.height(), m.width());
  for (const BoxSpec& b : boxes) {
    const ObjectMask region = box_region(std::span(&b, 1), m.height(), m.width(), 1.0);
    const ObjectMask keep = largest_component(closed, region);
    for (std::size_t y = 0; y < m.height(); ++y)
      for (std::size_t x = 0; x < m.width(); ++x)
        if (keep(y, x)) out.set(y, x, true);
  }
  return out;
}

}  // namespace taue
