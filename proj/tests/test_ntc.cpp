#include <gtest/gtest.h>

#include <filesystem>

#include "oracles.hpp"
#include "taue/ntc.hpp"

using namespace taue;

namespace {

struct Instance {
  oracle::Dims d;
  std::vector<float> L, n, fresh, nt;
  oracle::Bits m;
  double lambda;

  SeedlingBundle bundle(Phase phase, std::size_t step = 5) const {
    return {oracle::latent(d, L), oracle::latent(d, n), step, std::nullopt, phase};
  }
  ObjectMask mask() const { return oracle::mask<ObjectMaskTag>(m, d.h, d.w); }
};

Instance random_instance(oracle::Gen& g) {
  Instance in;
  in.d = g.dims();
  const std::size_t n = 4 * in.d.h * in.d.w;
  in.L = g.floats(n);
  in.n = g.floats(n);
  in.fresh = g.floats(n);
  in.nt = g.floats(n);
  in.m = g.bits(in.d.h * in.d.w, g.uniform(0.1, 0.9));
  in.lambda = g.uniform(0.0, 2.0);
  return in;
}

}  // namespace

TEST(BlendGreen, MatchesOracle) {
  oracle::Gen g(41);
  for (int i = 0; i < 300; ++i) {
    const auto d = g.dims();
    const auto z = g.floats(4 * d.h * d.w);
    const auto bits = g.bits(d.h * d.w);
    const double alpha = g.uniform(0, 1);
    const std::array<float, 4> cv{float(g.uniform(-1, 1)), float(g.uniform(-1, 1)), float(g.uniform(-1, 1)), float(g.uniform(-1, 1))};
    const double cgb[4] = {cv[0], cv[1], cv[2], cv[3]};
    const LatentTensor out = blend_green(oracle::latent(d, z), oracle::mask<BoxMaskTag>(bits, d.h, d.w), alpha, GreenLatentVector(cv));
    ASSERT_LE(oracle::max_abs(out.values(), oracle::blend_green(oracle::to_vec(z), bits, alpha, cgb, d)), 1e-6);
  }
}

TEST(BlendGreen, AlphaBoundsAndIdentity) {
  LatentTensor z(Shape{4, 2, 2}, 0.5f);
  EXPECT_THROW(blend_green(z, BoxMask(2, 2), 1.5), InvalidArgument);
  EXPECT_EQ(blend_green(z, BoxMask(2, 2, true), 0.0), z);
  EXPECT_EQ(blend_green(z, BoxMask(2, 2, false), 0.7), z);
  const LatentTensor full = blend_green(z, BoxMask(2, 2, true), 1.0);
  EXPECT_EQ(full(1, 0, 0), 1.0f);
  EXPECT_EQ(full(3, 1, 1), 0.0f);
  EXPECT_THROW(blend_green(z, BoxMask(3, 2), 0.5), InvalidArgument);
}

TEST(CompositeInit, MatchesOracleWithAndWithoutHighpass) {
  oracle::Gen g(42);
  for (int i = 0; i < 300; ++i) {
    const Instance in = random_instance(g);
    for (bool hp : {false, true}) {
      const LatentTensor out = composite_init(in.bundle(Phase::foreground), in.mask(), in.lambda, oracle::latent(in.d, in.fresh), hp);
      const auto want = oracle::composite_init(oracle::to_vec(in.L), oracle::to_vec(in.n), in.m, in.lambda, oracle::to_vec(in.fresh), hp, in.d);
      ASSERT_LE(oracle::max_abs(out.values(), want), 1e-6);
    }
  }
}

TEST(CompositeInit, HighpassOnlyChangesObjectRegion) {
  oracle::Gen g(43);
  for (int i = 0; i < 200; ++i) {
    const Instance in = random_instance(g);
    const auto b = in.bundle(Phase::foreground);
    const LatentTensor fresh = oracle::latent(in.d, in.fresh);
    const LatentTensor a = composite_init(b, in.mask(), in.lambda, fresh, true);
    const LatentTensor c = composite_init(b, in.mask(), in.lambda, fresh, false);
    for (std::size_t ch = 0; ch < 4; ++ch)
      for (std::size_t y = 0; y < in.d.h; ++y)
        for (std::size_t x = 0; x < in.d.w; ++x) {
          if (in.m[y * in.d.w + x]) continue;
          const float p = a(ch, y, x), q = c(ch, y, x), f = fresh(ch, y, x);
          ASSERT_EQ(std::memcmp(&p, &q, 4), 0);
          ASSERT_EQ(std::memcmp(&p, &f, 4), 0);
        }
  }
}

TEST(CompositeInit, Preconditions) {
  oracle::Gen g(44);
  const Instance in = random_instance(g);
  const LatentTensor fresh = oracle::latent(in.d, in.fresh);
  EXPECT_THROW(composite_init(in.bundle(Phase::composite), in.mask(), 1.0, fresh, true), InvalidArgument);
  EXPECT_THROW(composite_init(in.bundle(Phase::foreground), in.mask(), -0.1, fresh, true), InvalidArgument);
  EXPECT_THROW(composite_init(in.bundle(Phase::foreground), ObjectMask(in.d.h + 1, in.d.w), 1.0, fresh, true), InvalidArgument);
}

TEST(BackgroundInit, MatchesOracle) {
  oracle::Gen g(45);
  for (int i = 0; i < 300; ++i) {
    const Instance in = random_instance(g);
    const LatentTensor out = background_init(in.bundle(Phase::composite), in.mask(), in.lambda, oracle::latent(in.d, in.fresh));
    const auto want = oracle::background_init(oracle::to_vec(in.L), oracle::to_vec(in.n), in.m, in.lambda, oracle::to_vec(in.fresh), in.d);
    ASSERT_LE(oracle::max_abs(out.values(), want), 1e-6);
  }
  const Instance in = random_instance(g);
  EXPECT_THROW(background_init(in.bundle(Phase::foreground), in.mask(), 1.0, oracle::latent(in.d, in.fresh)), InvalidArgument);
}

TEST(PinNoise, MatchesOracleOnBothSidesOfCrop) {
  oracle::Gen g(46);
  for (int i = 0; i < 300; ++i) {
    const Instance in = random_instance(g);
    const std::size_t t_crop = g.index(1, 20), t = g.index(0, 25);
    const auto fg = in.bundle(Phase::foreground, t_crop);
    const auto bg = in.bundle(Phase::composite, t_crop);
    const LatentTensor nt = oracle::latent(in.d, in.nt);
    const auto wf = oracle::pin(oracle::to_vec(in.nt), oracle::to_vec(in.n), in.m, t, t_crop, true, in.d);
    const auto wb = oracle::pin(oracle::to_vec(in.nt), oracle::to_vec(in.n), in.m, t, t_crop, false, in.d);
    ASSERT_LE(oracle::max_abs(pin_noise_fg(nt, fg, in.mask(), t).values(), wf), 0.0);
    ASSERT_LE(oracle::max_abs(pin_noise_bg(nt, bg, in.mask(), t).values(), wb), 0.0);
  }
}

TEST(Seedling, ExtractCopiesRecordedStep) {
  Trajectory tr;
  tr.latents.emplace(5, LatentTensor(Shape{4, 2, 2}, 1.0f));
  tr.noises.emplace(5, LatentTensor(Shape{4, 2, 2}, 2.0f));
  const SeedlingBundle b = extract_seedling(tr, 5, std::nullopt, Phase::foreground);
  EXPECT_EQ(b.step, 5u);
  EXPECT_EQ(b.latent(0, 0, 0), 1.0f);
  EXPECT_EQ(b.noise(3, 1, 1), 2.0f);
  EXPECT_THROW(extract_seedling(tr, 4, std::nullopt, Phase::foreground), InvalidArgument);
}

TEST(Seedling, TranslateMovesEverythingTogether) {
  oracle::Gen g(47);
  Instance in = random_instance(g);
  in.d = {4, 6, 7};
  in.L = g.floats(4 * 42);
  in.n = g.floats(4 * 42);
  in.m = g.bits(42);
  SeedlingBundle b = in.bundle(Phase::foreground);
  b.mask = in.mask();
  const SeedlingBundle t = translate_bundle(b, 2, -1);
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 7; ++x) {
      const long sy = long(y) + 1, sx = long(x) - 2;
      if (sy < 0 || sy >= 6 || sx < 0 || sx >= 7) {
        EXPECT_EQ(t.latent(0, y, x), 0.0f);
        EXPECT_FALSE((*t.mask)(y, x));
        continue;
      }
      EXPECT_EQ(t.latent(2, y, x), b.latent(2, sy, sx));
      EXPECT_EQ(t.noise(1, y, x), b.noise(1, sy, sx));
      EXPECT_EQ((*t.mask)(y, x), (*b.mask)(sy, sx));
    }
  EXPECT_EQ(translate_bundle(b, 0, 0), b);
}

TEST(Seedling, PersistenceRoundTrip) {
  oracle::Gen g(48);
  const Instance in = random_instance(g);
  const auto dir = std::filesystem::temp_directory_path() / "taue_test_bundle";
  std::filesystem::remove_all(dir);
  for (bool with_mask : {false, true}) {
    SeedlingBundle b = in.bundle(with_mask ? Phase::composite : Phase::foreground, 7);
    if (with_mask) b.mask = in.mask();
    save_bundle(dir, b);
    const SeedlingBundle back = load_bundle(dir);
    EXPECT_EQ(back, b);
    EXPECT_EQ(checksum(back), checksum(b));
    std::filesystem::remove_all(dir);
  }
  EXPECT_THROW(load_bundle(dir), Error);
}

TEST(Seedling, ChecksumSeesEveryField) {
  oracle::Gen g(49);
  const Instance in = random_instance(g);
  SeedlingBundle b = in.bundle(Phase::foreground, 3);
  const auto base = checksum(b);
  SeedlingBundle c = b;
  c.step = 4;
  EXPECT_NE(checksum(c), base);
  c = b;
  c.phase = Phase::composite;
  EXPECT_NE(checksum(c), base);
  c = b;
  c.latent(0, 0, 0) += 1.0f;
  EXPECT_NE(checksum(c), base);
  c = b;
  c.mask = in.mask();
  EXPECT_NE(checksum(c), base);
}

TEST(Phase, StringRoundTrip) {
  for (Phase p : {Phase::foreground, Phase::composite, Phase::background}) EXPECT_EQ(phase_from_string(to_string(p)), p);
  EXPECT_THROW(phase_from_string("middle"), Error);
}
