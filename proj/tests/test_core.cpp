#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>

#include "oracles.hpp"
#include "taue/core.hpp"

using namespace taue;

TEST(LatentTensor, RejectsWrongChannelCount) {
  EXPECT_THROW(LatentTensor(Shape{3, 4, 4}), InvalidArgument);
  EXPECT_THROW(LatentTensor(Shape{4, 0, 4}), InvalidArgument);
  EXPECT_NO_THROW(LatentTensor(Shape{4, 1, 1}));
}

TEST(LatentTensor, RejectsNonFiniteValues) {
  std::vector<float> v(16, 0.0f);
  v[5] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(LatentTensor(Shape{4, 2, 2}, v), InvalidArgument);
  v[5] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(LatentTensor(Shape{4, 2, 2}, v), InvalidArgument);
  EXPECT_THROW(LatentTensor(Shape{4, 2, 2}, std::vector<float>(15)), InvalidArgument);
}

TEST(LatentTensor, ChannelMajorIndexing) {
  std::vector<float> v(4 * 2 * 3);
  std::iota(v.begin(), v.end(), 0.0f);
  LatentTensor t(Shape{4, 2, 3}, v);
  EXPECT_EQ(t(0, 0, 0), 0.0f);
  EXPECT_EQ(t(0, 1, 2), 5.0f);
  EXPECT_EQ(t(2, 0, 1), 13.0f);
  EXPECT_EQ(t.plane(3)[0], 18.0f);
}

TEST(RandomSource, SameSeedSameStream) {
  RandomSource a(42), b(42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.uniform(), b.uniform());
  RandomSource c(42), d(42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(c.normal(), d.normal());
}

TEST(RandomSource, ForkedStreamsDiffer) {
  RandomSource base(7);
  RandomSource s1 = base.fork(1), s2 = base.fork(2), s1b = base.fork(1);
  EXPECT_NE(s1.seed(), s2.seed());
  EXPECT_EQ(s1.seed(), s1b.seed());
  // Forking depends on the seed only, not on consumed state.
  RandomSource used(7);
  for (int i = 0; i < 10; ++i) used.uniform();
  EXPECT_EQ(used.fork(1).seed(), s1.seed());
}

TEST(RandomSource, UniformRangeAndMoments) {
  RandomSource r(3);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 0.005);
  RandomSource g(4);
  sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = g.normal();
    sum += v;
    sq += v * v;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(SampleGaussian, DeterministicPerSeed) {
  RandomSource a(11), b(11), c(12);
  const Shape s{4, 8, 8};
  EXPECT_EQ(sample_gaussian(s, a), sample_gaussian(s, b));
  RandomSource a2(11);
  EXPECT_FALSE(sample_gaussian(s, a2) == sample_gaussian(s, c));
}

TEST(CropStep, ReferenceTable) {
  EXPECT_EQ(crop_step(50, 0.0), 50u);
  EXPECT_EQ(crop_step(50, 0.25), 37u);
  EXPECT_EQ(crop_step(50, 0.5), 25u);
  EXPECT_EQ(crop_step(50, 0.75), 12u);
  EXPECT_EQ(crop_step(50, 1.0), 0u);
}

TEST(CropStep, MatchesFloorFormulaAndIsMonotone) {
  oracle::Gen g(5);
  for (int i = 0; i < 2000; ++i) {
    const std::size_t T = g.index(2, 200);
    const double r = g.uniform(0.0, 1.0);
    const std::size_t t = crop_step(T, r);
    ASSERT_LE(t, T);
    const double exact = static_cast<double>(T) * (1.0 - r);
    ASSERT_TRUE(static_cast<double>(t) <= exact + 1e-6 && exact < static_cast<double>(t) + 1.0 + 1e-6) << T << " " << r;
    ASSERT_GE(t, crop_step(T, std::min(1.0, r + 0.01)));
  }
}

TEST(CropStep, RejectsOutOfRangeRatio) {
  EXPECT_THROW(crop_step(50, -0.01), InvalidArgument);
  EXPECT_THROW(crop_step(50, 1.01), InvalidArgument);
  EXPECT_THROW(crop_step(50, std::nan("")), InvalidArgument);
}

TEST(GaussianKernel, NormalizedSymmetric) {
  for (double sigma : {0.3, 1.0, 1.5, 2.7}) {
    const auto k = gaussian_kernel(sigma);
    EXPECT_EQ(k.size(), 2 * static_cast<std::size_t>(std::ceil(3 * sigma)) + 1);
    EXPECT_NEAR(std::accumulate(k.begin(), k.end(), 0.0), 1.0, 1e-12);
    for (std::size_t i = 0; i < k.size(); ++i) EXPECT_DOUBLE_EQ(k[i], k[k.size() - 1 - i]);
  }
  EXPECT_THROW(gaussian_kernel(0.0), InvalidArgument);
}

TEST(GaussianBlur, PreservesConstantsAndMass) {
  oracle::Gen g(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = g.index(1, 20), w = g.index(1, 20);
    Map2D c(h, w, 0.37f);
    const Map2D blurred = gaussian_blur(c, g.uniform(0.3, 3.0));
    for (float v : blurred.values()) ASSERT_NEAR(v, 0.37f, 1e-6);
    const auto vals = g.floats(h * w, 0.0, 1.0);
    const Map2D m = oracle::map(vals, h, w);
    const Map2D b = gaussian_blur(m, g.uniform(0.3, 3.0));
    double s0 = 0, s1 = 0;
    for (std::size_t i = 0; i < vals.size(); ++i) s0 += m.values()[i], s1 += b.values()[i];
    ASSERT_NEAR(s0, s1, 1e-4 * (1.0 + s0));
  }
}

TEST(GaussianBlur, MatchesDirectConvolution) {
  oracle::Gen g(10);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t h = g.index(1, 12), w = g.index(1, 12);
    const double sigma = g.uniform(0.4, 2.0);
    const auto vals = g.floats(h * w);
    const Map2D got = gaussian_blur(oracle::map(vals, h, w), sigma);
    // 2-D sum with a separable kernel and half-sample reflection.
    const long r = static_cast<long>(std::ceil(3 * sigma));
    std::vector<double> k;
    double ks = 0;
    for (long i = -r; i <= r; ++i) k.push_back(std::exp(-0.5 * i * i / (sigma * sigma))), ks += k.back();
    auto refl = [](long i, long n) {
      while (i < 0 || i >= n) i = i < 0 ? -1 - i : 2 * n - 1 - i;
      return static_cast<std::size_t>(i);
    };
    for (long y = 0; y < static_cast<long>(h); ++y)
      for (long x = 0; x < static_cast<long>(w); ++x) {
        double acc = 0;
        for (long a = -r; a <= r; ++a)
          for (long b = -r; b <= r; ++b)
            acc += k[a + r] * k[b + r] / (ks * ks) * vals[refl(y + a, h) * w + refl(x + b, w)];
        ASSERT_NEAR(got(y, x), acc, 1e-5);
      }
  }
}

TEST(Highpass, ZeroOnConstants) {
  oracle::Gen g(1);
  for (int i = 0; i < 100; ++i) {
    const auto d = g.dims();
    std::vector<float> v(4 * d.h * d.w);
    for (std::size_t c = 0; c < 4; ++c) {
      const float k = static_cast<float>(g.uniform(-50, 50));
      std::fill(v.begin() + c * d.h * d.w, v.begin() + (c + 1) * d.h * d.w, k);
    }
    const LatentTensor hp = laplacian_highpass(oracle::latent(d, v));
    for (float x : hp.values()) ASSERT_EQ(x, 0.0f);
  }
}

TEST(Highpass, MatchesStencilOracle) {
  oracle::Gen g(2);
  for (int i = 0; i < 200; ++i) {
    const auto d = g.dims();
    const auto v = g.floats(4 * d.h * d.w);
    const LatentTensor hp = laplacian_highpass(oracle::latent(d, v));
    ASSERT_LE(oracle::max_abs(hp.values(), oracle::laplacian(oracle::to_vec(v), d)), 1e-6);
  }
}

TEST(Highpass, ShiftEquivariantOnInterior) {
  oracle::Gen g(3);
  for (int i = 0; i < 100; ++i) {
    const std::size_t h = g.index(4, 14), w = g.index(4, 14);
    const auto dy = static_cast<std::ptrdiff_t>(g.index(0, 2)), dx = static_cast<std::ptrdiff_t>(g.index(0, 2));
    const oracle::Dims d{4, h, w};
    const auto v = g.floats(4 * h * w);
    std::vector<float> shifted(v.size(), 0.0f);
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const auto sy = static_cast<std::ptrdiff_t>(y) - dy, sx = static_cast<std::ptrdiff_t>(x) - dx;
          if (sy >= 0 && sx >= 0) shifted[d.at(c, y, x)] = v[d.at(c, sy, sx)];
        }
    const LatentTensor a = laplacian_highpass(oracle::latent(d, v));
    const LatentTensor b = laplacian_highpass(oracle::latent(d, shifted));
    // Pixels whose stencil is interior in both inputs match bit for bit.
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t y = 1 + dy; y + 1 < h; ++y)
        for (std::size_t x = 1 + dx; x + 1 < w; ++x) {
          const float p = b(c, y, x), q = a(c, y - dy, x - dx);
          ASSERT_EQ(std::memcmp(&p, &q, sizeof p), 0);
        }
  }
}

TEST(Buffer, HeaderLayout) {
  LatentTensor t(Shape{4, 3, 5}, 1.5f);
  const auto bytes = encode_buffer(t.shape(), t.values());
  ASSERT_EQ(bytes.size(), kBufferHeaderSize + 4 * 3 * 5 * 4);
  EXPECT_EQ(static_cast<char>(bytes[0]), 'T');
  EXPECT_EQ(static_cast<char>(bytes[3]), 'E');
  EXPECT_EQ(static_cast<unsigned>(bytes[4]), 1u);  // version, little endian
  EXPECT_EQ(static_cast<unsigned>(bytes[6]), 4u);  // channels
  EXPECT_EQ(static_cast<unsigned>(bytes[8]), 3u);  // height
  EXPECT_EQ(static_cast<unsigned>(bytes[12]), 5u); // width
  float first = 0;
  std::memcpy(&first, bytes.data() + kBufferHeaderSize, 4);
  EXPECT_EQ(first, 1.5f);
}

TEST(Buffer, RoundTripIsBitExact) {
  oracle::Gen g(4);
  for (int i = 0; i < 50; ++i) {
    const auto d = g.dims();
    auto v = g.floats(4 * d.h * d.w, -1e6, 1e6);
    v[0] = -0.0f;
    const LatentTensor t = oracle::latent(d, v);
    const Buffer b = decode_buffer(encode_buffer(t.shape(), t.values()));
    ASSERT_EQ(LatentTensor(b.shape, b.data), t);
  }
}

TEST(Buffer, RejectsCorruptInput) {
  LatentTensor t(Shape{4, 2, 2}, 0.5f);
  auto bytes = encode_buffer(t.shape(), t.values());
  auto bad_magic = bytes;
  bad_magic[0] = std::byte{'X'};
  EXPECT_THROW(decode_buffer(bad_magic), IoError);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_buffer(truncated), IoError);
  auto bad_version = bytes;
  bad_version[4] = std::byte{9};
  EXPECT_THROW(decode_buffer(bad_version), IoError);
  EXPECT_THROW(decode_buffer(std::span<const std::byte>(bytes.data(), 10)), IoError);
}

TEST(Buffer, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "taue_test_core_latent.taue";
  RandomSource r(1);
  const LatentTensor t = sample_gaussian(Shape{4, 6, 7}, r);
  save_latent(path.string(), t);
  EXPECT_EQ(load_latent(path.string()), t);
  std::filesystem::remove(path);
  EXPECT_THROW(load_latent(path.string()), IoError);
}

TEST(Hashing, StableAcrossCalls) {
  EXPECT_EQ(stable_hash("a red apple"), stable_hash("a red apple"));
  EXPECT_NE(stable_hash("a red apple"), stable_hash("a red appl"));
  // FNV-1a 64 of the empty string is the offset basis.
  EXPECT_EQ(stable_hash(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(stable_hash("a"), 0xaf63dc4c8601ec8cull);
}
