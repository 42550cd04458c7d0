#pragma once

// Latent tensors, seeded randomness, timestep arithmetic and the two spatial
// filters (Gaussian blur, Laplacian high-pass) every other module builds on.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "taue/errors.hpp"

namespace taue {

inline constexpr std::size_t kLatentChannels = 4;
// Latent grids are 1/8 of the image resolution.
inline constexpr std::size_t kLatentScale = 8;

// Row-major 2-D grid. Used for real-valued maps (retention, activation,
// attention) and, through Mask, for binary masks.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(std::size_t height, std::size_t width, T fill = T{})
      : height_(height), width_(width), data_(height * width, fill) {}
  Grid(std::size_t height, std::size_t width, std::vector<T> data)
      : height_(height), width_(width), data_(std::move(data)) {
    if (data_.size() != height_ * width_) {
      throw InvalidArgument("grid data size does not match " + std::to_string(height) + "x" +
                            std::to_string(width));
    }
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t y, std::size_t x) { return data_[y * width_ + x]; }
  const T& operator()(std::size_t y, std::size_t x) const { return data_[y * width_ + x]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  bool same_shape(const Grid<T>& o) const noexcept { return height_ == o.height_ && width_ == o.width_; }
  template <typename U>
  bool same_shape(const Grid<U>& o) const noexcept {
    return height_ == o.height() && width_ == o.width();
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<T> data_;
};

using Map2D = Grid<float>;

struct Shape {
  std::size_t channels = kLatentChannels;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t count() const noexcept { return channels * height * width; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

// 4 x H x W float tensor, channel-major.
class LatentTensor {
 public:
  LatentTensor() = default;

  explicit LatentTensor(Shape shape, float fill = 0.0f) : shape_(validated(shape)), data_(shape.count(), fill) {
    if (!std::isfinite(fill)) throw InvalidArgument("latent fill value must be finite");
  }

  LatentTensor(Shape shape, std::vector<float> data) : shape_(validated(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.count()) {
      throw InvalidArgument("latent data size " + std::to_string(data_.size()) + " does not match shape " +
                            to_string(shape_));
    }
    for (float v : data_) {
      if (!std::isfinite(v)) throw InvalidArgument("latent values must be finite");
    }
  }

  LatentTensor(std::size_t height, std::size_t width, float fill = 0.0f)
      : LatentTensor(Shape{kLatentChannels, height, width}, fill) {}

  const Shape& shape() const noexcept { return shape_; }
  std::size_t channels() const noexcept { return shape_.channels; }
  std::size_t height() const noexcept { return shape_.height; }
  std::size_t width() const noexcept { return shape_.width; }
  std::size_t plane_size() const noexcept { return shape_.height * shape_.width; }
  bool empty() const noexcept { return data_.empty(); }

  float& operator()(std::size_t c, std::size_t y, std::size_t x) { return data_[(c * shape_.height + y) * shape_.width + x]; }
  float operator()(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }

  std::span<float> plane(std::size_t c) { return std::span<float>(data_).subspan(c * plane_size(), plane_size()); }
  std::span<const float> plane(std::size_t c) const {
    return std::span<const float>(data_).subspan(c * plane_size(), plane_size());
  }

  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }

  // Bit-level equality (distinguishes -0 from +0; never equal on NaN, which the
  // invariants exclude anyway).
  friend bool operator==(const LatentTensor& a, const LatentTensor& b) {
    return a.shape_ == b.shape_ &&
           (a.data_.empty() || std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(float)) == 0);
  }

 private:
  static Shape validated(Shape s) {
    if (s.channels != kLatentChannels) {
      throw InvalidArgument("latent tensors have exactly 4 channels, got " + std::to_string(s.channels));
    }
    if (s.height == 0 || s.width == 0) throw InvalidArgument("latent height and width must be >= 1");
    return s;
  }

  Shape shape_{kLatentChannels, 0, 0};
  std::vector<float> data_;
};

inline void require_same_shape(const LatentTensor& a, const LatentTensor& b, std::string_view what) {
  if (a.shape() != b.shape()) {
    throw InvalidArgument(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

// FNV-1a, 64-bit. Stable across platforms; used to key per-prompt state and to
// checksum buffers.
inline std::uint64_t fnv1a(std::span<const std::byte> bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t stable_hash(std::string_view s) { return fnv1a(std::as_bytes(std::span(s.data(), s.size()))); }

inline std::uint64_t checksum(const LatentTensor& t) {
  std::uint64_t h = fnv1a(std::as_bytes(std::span(t.values())));
  const std::array<std::uint64_t, 3> dims{t.channels(), t.height(), t.width()};
  return fnv1a(std::as_bytes(std::span(dims)), h);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Seeded sample stream. mt19937_64 output is fixed by the standard; uniform and
// normal variates are derived here rather than through std distributions, whose
// algorithms are implementation-defined.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  // Independent stream derived from this source's seed (not its state).
  RandomSource fork(std::uint64_t stream) const { return RandomSource(splitmix64(seed_ ^ splitmix64(stream))); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; the second variate of each pair is kept.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline LatentTensor sample_gaussian(Shape shape, RandomSource& rng) {
  LatentTensor out(shape);
  for (float& v : out.values()) v = static_cast<float>(rng.normal());
  return out;
}

// Descending step axis: step T is pure noise, step 0 is the clean sample.
struct TimeGrid {
  std::size_t total_steps;

  explicit TimeGrid(std::size_t steps) : total_steps(steps) {
    if (steps < 2) throw InvalidArgument("total_steps must be >= 2");
  }
  bool contains(std::size_t t) const noexcept { return t <= total_steps; }
};

// Step index at which a fraction r_crop of denoising has been completed:
// floor(T * (1 - r_crop)).
inline std::size_t crop_step(std::size_t total_steps, double r_crop) {
  if (!(r_crop >= 0.0 && r_crop <= 1.0)) throw InvalidArgument("r_crop must lie in [0, 1]");
  // 1e-9 absorbs binary rounding of (1 - r) so exact products are not floored down.
  const double v = std::floor(static_cast<double>(total_steps) * (1.0 - r_crop) + 1e-9);
  return std::min<std::size_t>(total_steps, static_cast<std::size_t>(std::max(0.0, v)));
}

namespace detail {

// Half-sample symmetric extension (... c b a | a b c ... | z y x | x y z ...),
// valid for any offset.
inline std::size_t mirror_index(std::ptrdiff_t i, std::size_t n) {
  const auto period = static_cast<std::ptrdiff_t>(2 * n);
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<std::ptrdiff_t>(n) ? m : period - 1 - m);
}

inline std::size_t clamp_index(std::ptrdiff_t i, std::size_t n) {
  if (i < 0) return 0;
  if (i >= static_cast<std::ptrdiff_t>(n)) return n - 1;
  return static_cast<std::size_t>(i);
}

}  // namespace detail

// Normalized 1-D Gaussian taps, truncated at radius ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidArgument("sigma must be > 0");
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = w;
    sum += w;
  }
  for (double& w : k) w /= sum;
  return k;
}

// Separable Gaussian blur. With the mirror boundary the operator is symmetric and
// row-stochastic, so it preserves constants and total mass.
template <typename T>
Grid<T> gaussian_blur(const Grid<T>& map, double sigma) {
  const std::vector<double> k = gaussian_kernel(sigma);
  const auto radius = static_cast<std::ptrdiff_t>(k.size() / 2);
  const std::size_t h = map.height(), w = map.width();
  std::vector<double> tmp(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
        acc += k[static_cast<std::size_t>(i + radius)] *
               static_cast<double>(map(y, detail::mirror_index(static_cast<std::ptrdiff_t>(x) + i, w)));
      }
      tmp[y * w + x] = acc;
    }
  }
  Grid<T> out(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
        acc += k[static_cast<std::size_t>(i + radius)] *
               tmp[detail::mirror_index(static_cast<std::ptrdiff_t>(y) + i, h) * w + x];
      }
      out(y, x) = static_cast<T>(acc);
    }
  }
  return out;
}

// Per-channel 4-neighbour Laplacian [[0,1,0],[1,-4,1],[0,1,0]], replicate padding.
inline LatentTensor laplacian_highpass(const LatentTensor& latent) {
  LatentTensor out(latent.shape());
  const std::size_t h = latent.height(), w = latent.width();
  for (std::size_t c = 0; c < latent.channels(); ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t up = detail::clamp_index(static_cast<std::ptrdiff_t>(y) - 1, h);
      const std::size_t down = detail::clamp_index(static_cast<std::ptrdiff_t>(y) + 1, h);
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t left = detail::clamp_index(static_cast<std::ptrdiff_t>(x) - 1, w);
        const std::size_t right = detail::clamp_index(static_cast<std::ptrdiff_t>(x) + 1, w);
        const double centre = latent(c, y, x);
        // Neighbour differences keep constant inputs at exactly zero.
        const double v = (static_cast<double>(latent(c, up, x)) - centre) + (static_cast<double>(latent(c, down, x)) - centre) +
                         (static_cast<double>(latent(c, y, left)) - centre) + (static_cast<double>(latent(c, y, right)) - centre);
        out(c, y, x) = static_cast<float>(v);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Buffer format: 16-byte little-endian header followed by C*H*W float32 values.
//   bytes 0-3   magic "TAUE"
//   bytes 4-5   u16 version (1)
//   bytes 6-7   u16 channels
//   bytes 8-11  u32 height
//   bytes 12-15 u32 width
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 4> kBufferMagic{'T', 'A', 'U', 'E'};
inline constexpr std::uint16_t kBufferVersion = 1;
inline constexpr std::size_t kBufferHeaderSize = 16;

struct Buffer {
  Shape shape;
  std::vector<float> data;
};

namespace detail {

template <typename U>
void put_le(std::vector<std::byte>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const std::byte* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
  return v;
}

}  // namespace detail

inline std::vector<std::byte> encode_buffer(Shape shape, std::span<const float> values) {
  if (values.size() != shape.count()) throw InvalidArgument("buffer value count does not match shape");
  if (shape.channels > 0xffff || shape.height > 0xffffffffu || shape.width > 0xffffffffu) {
    throw InvalidArgument("buffer dimensions exceed header range");
  }
  std::vector<std::byte> out;
  out.reserve(kBufferHeaderSize + values.size() * 4);
  for (char c : kBufferMagic) out.push_back(static_cast<std::byte>(c));
  detail::put_le<std::uint16_t>(out, kBufferVersion);
  detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(shape.channels));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.height));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.width));
  for (float v : values) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline Buffer decode_buffer(std::span<const std::byte> bytes) {
  if (bytes.size() < kBufferHeaderSize) throw IoError("buffer shorter than header");
  for (std::size_t i = 0; i < 4; ++i) {
    if (static_cast<char>(bytes[i]) != kBufferMagic[i]) throw IoError("bad buffer magic");
  }
  const auto version = detail::get_le<std::uint16_t>(bytes.data() + 4);
  if (version != kBufferVersion) throw IoError("unsupported buffer version " + std::to_string(version));
  Buffer buf;
  buf.shape.channels = detail::get_le<std::uint16_t>(bytes.data() + 6);
  buf.shape.height = detail::get_le<std::uint32_t>(bytes.data() + 8);
  buf.shape.width = detail::get_le<std::uint32_t>(bytes.data() + 12);
  const std::size_t n = buf.shape.count();
  if (bytes.size() != kBufferHeaderSize + 4 * n) throw IoError("buffer payload size does not match header");
  buf.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    buf.data[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes.data() + kBufferHeaderSize + 4 * i));
  }
  return buf;
}

inline std::vector<std::byte> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::byte> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw IoError("short read on " + path);
  return bytes;
}

inline void write_file_bytes(const std::string& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write on " + path);
}

inline void save_latent(const std::string& path, const LatentTensor& t) {
  write_file_bytes(path, encode_buffer(t.shape(), t.values()));
}

inline LatentTensor load_latent(const std::string& path) {
  Buffer buf = decode_buffer(read_file_bytes(path));
  return LatentTensor(buf.shape, std::move(buf.data));
}

}  // namespace taue
