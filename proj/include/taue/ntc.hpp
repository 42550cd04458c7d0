#pragma once

// Noise transplantation and cultivation: green-latent initialization, seedling
// extraction, transplanted initial latents and the pinned-noise schedules.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "taue/core.hpp"
#include "taue/masks.hpp"

namespace taue {

enum class Phase { foreground, composite, background };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::foreground: return "foreground";
    case Phase::composite: return "composite";
    case Phase::background: return "background";
  }
  return "unknown";
}

inline Phase phase_from_string(const std::string& s) {
  if (s == "foreground") return Phase::foreground;
  if (s == "composite") return Phase::composite;
  if (s == "background") return Phase::background;
  throw InvalidArgument("unknown phase '" + s + "'");
}

// Per-channel latent value blended into the background to get a chroma-key-like
// backdrop.
struct GreenLatentVector {
  std::array<float, kLatentChannels> values{0.0f, 1.0f, 1.0f, 0.0f};

  GreenLatentVector() = default;
  explicit GreenLatentVector(std::array<float, kLatentChannels> v) : values(v) {
    for (float x : values) {
      if (!std::isfinite(x)) throw InvalidArgument("green latent vector must be finite");
    }
  }
};

// Latents and raw noise predictions recorded during a denoising run, keyed by step.
struct Trajectory {
  std::map<std::size_t, LatentTensor> latents;
  std::map<std::size_t, LatentTensor> noises;
};

// Seedling latent L and the predicted noise at the crop step, plus the object
// mask for composite-phase bundles. Immutable once built.
struct SeedlingBundle {
  LatentTensor latent;
  LatentTensor noise;
  std::size_t step = 0;
  std::optional<ObjectMask> mask;
  Phase phase = Phase::foreground;

  void validate() const {
    require_same_shape(latent, noise, "seedling bundle");
    if (mask) require_mask_shape(*mask, latent, "seedling bundle");
  }

  friend bool operator==(const SeedlingBundle&, const SeedlingBundle&) = default;
};

inline std::uint64_t checksum(const SeedlingBundle& b) {
  std::uint64_t h = checksum(b.latent) ^ splitmix64(checksum(b.noise));
  h ^= splitmix64(b.step * 0x9e37u + static_cast<std::uint64_t>(b.phase));
  if (b.mask) h ^= splitmix64(fnv1a(std::as_bytes(b.mask->grid().values())));
  return h;
}

// z_fg = (1 - M) z + M ((1 - alpha) z + alpha C_gb).
inline LatentTensor blend_green(const LatentTensor& z, const BoxMask& mask, double alpha, const GreenLatentVector& cgb = {}) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must lie in [0, 1]");
  require_mask_shape(mask, z, "blend_green");
  LatentTensor out = z;
  for (std::size_t c = 0; c < z.channels(); ++c) {
    const double g = cgb.values[c];
    for (std::size_t y = 0; y < z.height(); ++y) {
      for (std::size_t x = 0; x < z.width(); ++x) {
        if (!mask(y, x)) continue;
        out(c, y, x) = static_cast<float>((1.0 - alpha) * static_cast<double>(z(c, y, x)) + alpha * g);
      }
    }
  }
  return out;
}

// Copies the recorded latent and raw predicted noise at `step`.
inline SeedlingBundle extract_seedling(const Trajectory& traj, std::size_t step, std::optional<ObjectMask> mask, Phase phase) {
  const auto lz = traj.latents.find(step);
  const auto ln = traj.noises.find(step);
  if (lz == traj.latents.end() || ln == traj.noises.end()) {
    throw InvalidArgument("extract_seedling: step " + std::to_string(step) + " was not recorded");
  }
  SeedlingBundle b{lz->second, ln->second, step, std::move(mask), phase};
  b.validate();
  return b;
}

namespace detail {

inline void require_lambda(double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be >= 0");
}

// where(m): seed + lambda * noise, elsewhere: fresh.
template <typename Pred>
LatentTensor transplant(const LatentTensor& seed, const LatentTensor& noise, double lambda, const LatentTensor& fresh,
                        Pred in_seed_region) {
  LatentTensor out = fresh;
  for (std::size_t c = 0; c < fresh.channels(); ++c) {
    for (std::size_t y = 0; y < fresh.height(); ++y) {
      for (std::size_t x = 0; x < fresh.width(); ++x) {
        if (!in_seed_region(y, x)) continue;
        out(c, y, x) = static_cast<float>(static_cast<double>(seed(c, y, x)) + lambda * static_cast<double>(noise(c, y, x)));
      }
    }
  }
  return out;
}

template <typename Pred>
LatentTensor pin(const LatentTensor& n_t, const LatentTensor& pinned, Pred use_pinned) {
  LatentTensor out = n_t;
  for (std::size_t c = 0; c < n_t.channels(); ++c)
    for (std::size_t y = 0; y < n_t.height(); ++y)
      for (std::size_t x = 0; x < n_t.width(); ++x)
        if (use_pinned(y, x)) out(c, y, x) = pinned(c, y, x);
  return out;
}

}  // namespace detail

// Composite initial latent: m (f(L_fg) + lambda n_crop) + (1 - m) z_fresh, with f
// the Laplacian high-pass when `highpass` is set and the identity otherwise.
inline LatentTensor composite_init(const SeedlingBundle& bundle, const ObjectMask& m_obj, double lambda,
                                   const LatentTensor& z_fresh, bool highpass) {
  detail::require_lambda(lambda);
  if (bundle.phase != Phase::foreground) throw InvalidArgument("composite_init expects a foreground-phase bundle");
  bundle.validate();
  require_same_shape(bundle.latent, z_fresh, "composite_init");
  require_mask_shape(m_obj, z_fresh, "composite_init");
  const LatentTensor seed = highpass ? laplacian_highpass(bundle.latent) : bundle.latent;
  return detail::transplant(seed, bundle.noise, lambda, z_fresh, [&](std::size_t y, std::size_t x) { return m_obj(y, x); });
}

// While t >= t_crop the object region uses the cached noise.
inline LatentTensor pin_noise_fg(const LatentTensor& n_t, const SeedlingBundle& bundle, const ObjectMask& m_obj, std::size_t t) {
  require_same_shape(n_t, bundle.noise, "pin_noise_fg");
  require_mask_shape(m_obj, n_t, "pin_noise_fg");
  if (t < bundle.step) return n_t;
  return detail::pin(n_t, bundle.noise, [&](std::size_t y, std::size_t x) { return m_obj(y, x); });
}

// Background initial latent: (1 - m) (L_bg + lambda n_crop) + m z_fresh.
inline LatentTensor background_init(const SeedlingBundle& bundle, const ObjectMask& m_obj, double lambda,
                                    const LatentTensor& z_fresh) {
  detail::require_lambda(lambda);
  if (bundle.phase != Phase::composite) throw InvalidArgument("background_init expects a composite-phase bundle");
  bundle.validate();
  require_same_shape(bundle.latent, z_fresh, "background_init");
  require_mask_shape(m_obj, z_fresh, "background_init");
  return detail::transplant(bundle.latent, bundle.noise, lambda, z_fresh,
                            [&](std::size_t y, std::size_t x) { return !m_obj(y, x); });
}

// While t >= t_crop the background region uses the cached noise.
inline LatentTensor pin_noise_bg(const LatentTensor& n_t, const SeedlingBundle& bundle, const ObjectMask& m_obj, std::size_t t) {
  require_same_shape(n_t, bundle.noise, "pin_noise_bg");
  require_mask_shape(m_obj, n_t, "pin_noise_bg");
  if (t < bundle.step) return n_t;
  return detail::pin(n_t, bundle.noise, [&](std::size_t y, std::size_t x) { return !m_obj(y, x); });
}

// Shifts a bundle by (dx, dy) latent pixels; vacated locations are zero and
// masked out.
inline SeedlingBundle translate_bundle(const SeedlingBundle& b, std::ptrdiff_t dx, std::ptrdiff_t dy) {
  const auto h = static_cast<std::ptrdiff_t>(b.latent.height()), w = static_cast<std::ptrdiff_t>(b.latent.width());
  SeedlingBundle out{LatentTensor(b.latent.shape()), LatentTensor(b.noise.shape()), b.step, std::nullopt, b.phase};
  if (b.mask) out.mask = ObjectMask(b.mask->height(), b.mask->width());
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      const std::ptrdiff_t sy = y - dy, sx = x - dx;
      if (sy < 0 || sx < 0 || sy >= h || sx >= w) continue;
      const auto uy = static_cast<std::size_t>(y), ux = static_cast<std::size_t>(x);
      const auto vy = static_cast<std::size_t>(sy), vx = static_cast<std::size_t>(sx);
      for (std::size_t c = 0; c < b.latent.channels(); ++c) {
        out.latent(c, uy, ux) = b.latent(c, vy, vx);
        out.noise(c, uy, ux) = b.noise(c, vy, vx);
      }
      if (b.mask) out.mask->set(uy, ux, (*b.mask)(vy, vx));
    }
  }
  return out;
}

template <typename Tag>
Mask<Tag> translate_mask(const Mask<Tag>& m, std::ptrdiff_t dx, std::ptrdiff_t dy) {
  Mask<Tag> out(m.height(), m.width());
  const auto h = static_cast<std::ptrdiff_t>(m.height()), w = static_cast<std::ptrdiff_t>(m.width());
  for (std::ptrdiff_t y = 0; y < h; ++y)
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      const std::ptrdiff_t sy = y - dy, sx = x - dx;
      if (sy >= 0 && sx >= 0 && sy < h && sx < w)
        out.set(static_cast<std::size_t>(y), static_cast<std::size_t>(x), m(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence. Masks are stored as 1-channel buffers of 0/1 floats.
// ---------------------------------------------------------------------------

template <typename Tag>
std::vector<std::byte> encode_mask(const Mask<Tag>& m) {
  std::vector<float> v(m.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(m.grid().values()[i]);
  return encode_buffer(Shape{1, m.height(), m.width()}, v);
}

template <typename Tag>
Mask<Tag> decode_mask(std::span<const std::byte> bytes) {
  const Buffer buf = decode_buffer(bytes);
  if (buf.shape.channels != 1) throw IoError("mask buffer must have one channel");
  Grid<std::uint8_t> g(buf.shape.height, buf.shape.width);
  for (std::size_t i = 0; i < buf.data.size(); ++i) {
    if (buf.data[i] != 0.0f && buf.data[i] != 1.0f) throw IoError("mask buffer holds non-binary values");
    g.values()[i] = buf.data[i] != 0.0f ? 1 : 0;
  }
  return Mask<Tag>(std::move(g));
}

// Layout: <dir>/latent.taue, noise.taue, [mask.taue], bundle.json.
inline void save_bundle(const std::filesystem::path& dir, const SeedlingBundle& b) {
  std::filesystem::create_directories(dir);
  save_latent((dir / "latent.taue").string(), b.latent);
  save_latent((dir / "noise.taue").string(), b.noise);
  nlohmann::json meta{{"step", b.step}, {"phase", to_string(b.phase)}, {"mask", nullptr}, {"checksum", checksum(b)}};
  if (b.mask) {
    write_file_bytes((dir / "mask.taue").string(), encode_mask(*b.mask));
    meta["mask"] = "mask.taue";
  }
  std::ofstream(dir / "bundle.json") << meta.dump(2) << '\n';
}

inline SeedlingBundle load_bundle(const std::filesystem::path& dir) {
  std::ifstream in(dir / "bundle.json");
  if (!in) throw IoError("missing bundle metadata in " + dir.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad bundle metadata in " + dir.string() + ": " + e.what());
  }
  SeedlingBundle b;
  b.latent = load_latent((dir / "latent.taue").string());
  b.noise = load_latent((dir / "noise.taue").string());
  b.step = meta.at("step").get<std::size_t>();
  b.phase = phase_from_string(meta.at("phase").get<std::string>());
  if (!meta.at("mask").is_null()) {
    b.mask = decode_mask<ObjectMaskTag>(read_file_bytes((dir / meta.at("mask").get<std::string>()).string()));
  }
  b.validate();
  if (meta.contains("checksum") && meta["checksum"].get<std::uint64_t>() != checksum(b)) {
    throw IoError("bundle checksum mismatch in " + dir.string());
  }
  return b;
}

}  // namespace taue
