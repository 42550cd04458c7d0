#include <gtest/gtest.h>

#include "oracles.hpp"
#include "taue/attention.hpp"

using namespace taue;

namespace {

RawAttention random_attention(oracle::Gen& g, std::size_t h, std::size_t w, std::size_t f) {
  return RawAttention(h, w, f, g.floats(h * w * f));
}

}  // namespace

TEST(BlendAttention, MatchesOracleSameResolution) {
  oracle::Gen g(31);
  for (int i = 0; i < 300; ++i) {
    const std::size_t h = g.index(1, 10), w = g.index(1, 10), f = g.index(1, 6);
    const RawAttention fg = random_attention(g, h, w, f), bg = random_attention(g, h, w, f);
    const auto bits = g.bits(h * w);
    const RawAttention out = blend_attention(fg, bg, oracle::mask<ObjectMaskTag>(bits, h, w));
    const auto want = oracle::blend_attention(oracle::to_vec(fg.values()), oracle::to_vec(bg.values()), bits, h, w, h, w, f);
    ASSERT_LE(oracle::max_abs(out.values(), want), 0.0);
  }
}

TEST(BlendAttention, MatchesOracleAcrossResolutions) {
  oracle::Gen g(32);
  for (int i = 0; i < 300; ++i) {
    const std::size_t mh = g.index(1, 16), mw = g.index(1, 16);
    const std::size_t h = g.index(1, 12), w = g.index(1, 12), f = g.index(1, 4);
    const RawAttention fg = random_attention(g, h, w, f), bg = random_attention(g, h, w, f);
    const auto bits = g.bits(mh * mw);
    const RawAttention out = blend_attention(fg, bg, oracle::mask<ObjectMaskTag>(bits, mh, mw));
    const auto want = oracle::blend_attention(oracle::to_vec(fg.values()), oracle::to_vec(bg.values()), bits, mh, mw, h, w, f);
    ASSERT_LE(oracle::max_abs(out.values(), want), 0.0);
  }
}

TEST(BlendAttention, ExtremeMasks) {
  oracle::Gen g(33);
  const RawAttention fg = random_attention(g, 4, 5, 3), bg = random_attention(g, 4, 5, 3);
  EXPECT_EQ(blend_attention(fg, bg, ObjectMask(4, 5, true)).values()[7], fg.values()[7]);
  const RawAttention none = blend_attention(fg, bg, ObjectMask(4, 5, false));
  EXPECT_TRUE(std::equal(none.values().begin(), none.values().end(), bg.values().begin()));
  EXPECT_THROW(blend_attention(fg, random_attention(g, 4, 5, 2), ObjectMask(4, 5)), InvalidArgument);
}

TEST(AttentionHook, DisabledPassesThrough) {
  oracle::Gen g(34);
  const RawAttention fg = random_attention(g, 3, 3, 2), bg = random_attention(g, 3, 3, 2);
  const AttentionHook hook(ObjectMask(3, 3, true), false);
  const RawAttention out = hook(0, std::span(&fg, 1), &bg);
  EXPECT_TRUE(std::equal(out.values().begin(), out.values().end(), fg.values().begin()));
}

TEST(AttentionHook, RegionsFirstWins) {
  oracle::Gen g(35);
  std::vector<RawAttention> fg{random_attention(g, 2, 3, 1), random_attention(g, 2, 3, 1)};
  const RawAttention bg = random_attention(g, 2, 3, 1);
  ObjectMask a(2, 3), b(2, 3);
  a.set(0, 0, true);
  a.set(0, 1, true);
  b.set(0, 1, true);
  b.set(1, 2, true);
  const AttentionHook hook(std::vector<ObjectMask>{a, b});
  const RawAttention out = hook(0, fg, &bg);
  EXPECT_EQ(out(0, 0, 0), fg[0](0, 0, 0));
  EXPECT_EQ(out(0, 1, 0), fg[0](0, 1, 0));
  EXPECT_EQ(out(1, 2, 0), fg[1](1, 2, 0));
  EXPECT_EQ(out(1, 0, 0), bg(1, 0, 0));
}

TEST(AttentionHook, Errors) {
  oracle::Gen g(36);
  const RawAttention fg = random_attention(g, 2, 2, 1);
  const AttentionHook hook(ObjectMask(2, 2, true));
  EXPECT_THROW(hook(0, {}, &fg), BackendError);
  EXPECT_THROW(hook(0, std::span(&fg, 1), nullptr), BackendError);
  std::vector<RawAttention> two{fg, fg};
  EXPECT_THROW(hook(0, two, &fg), BackendError);
}

TEST(AggregateAttention, UsesOnlyContentTokens) {
  // Marker tokens carry a large uniform map; excluding them leaves the content shape.
  std::vector<Map2D> tokens{Map2D(4, 4, 100.0f), Map2D(4, 4, 0.0f), Map2D(4, 4, 0.0f), Map2D(4, 4, 100.0f)};
  tokens[1](1, 1) = 1.0f;
  tokens[2](2, 2) = 3.0f;
  const std::vector<std::size_t> span{1, 2};
  const AggregatedAttention a = aggregate_attention(tokens, span, 4, 4);
  EXPECT_FLOAT_EQ(a.values(2, 2), 1.0f);
  EXPECT_FLOAT_EQ(a.values(1, 1), 1.0f / 3.0f);
  EXPECT_FLOAT_EQ(a.values(0, 0), 0.0f);
  EXPECT_THROW(aggregate_attention(tokens, std::vector<std::size_t>{}, 4, 4), InvalidArgument);
  EXPECT_THROW(aggregate_attention(tokens, std::vector<std::size_t>{9}, 4, 4), InvalidArgument);
}

TEST(AggregateAttention, NormalizedAtBaseResolution) {
  oracle::Gen g(37);
  for (int i = 0; i < 50; ++i) {
    const std::size_t h = g.index(1, 8), w = g.index(1, 8);
    AttentionProbe probe;
    for (std::size_t l = g.index(1, 3); l > 0; --l) {
      std::vector<Map2D> layer;
      for (int t = 0; t < 4; ++t) layer.push_back(oracle::map(g.floats(h * w, 0, 1), h, w));
      probe.layers.push_back(std::move(layer));
    }
    probe.token_span = {1, 2};
    const std::size_t bh = g.index(1, 20), bw = g.index(1, 20);
    const AggregatedAttention a = aggregate_attention(probe, bh, bw);
    ASSERT_EQ(a.values.height(), bh);
    ASSERT_EQ(a.values.width(), bw);
    for (float v : a.values.values()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
}

TEST(Resize, BilinearPreservesConstantsAndIdentity) {
  const Map2D c(3, 5, 0.25f);
  const Map2D big = resize_bilinear(c, 11, 7);
  for (float v : big.values()) EXPECT_FLOAT_EQ(v, 0.25f);
  oracle::Gen g(38);
  const Map2D m = oracle::map(g.floats(12), 3, 4);
  EXPECT_EQ(resize_bilinear(m, 3, 4), m);
}

TEST(Resize, NearestUpscaleReplicatesBlocks) {
  ObjectMask m(2, 2);
  m.set(0, 1, true);
  const ObjectMask up = resize_nearest(m, 4, 4);
  EXPECT_TRUE(up(0, 2) && up(1, 3));
  EXPECT_FALSE(up(0, 1) || up(2, 2));
}

TEST(NormalizeMinMax, ConstantBecomesZero) {
  const Map2D n = normalize_min_max(Map2D(2, 2, 3.0f));
  for (float v : n.values()) EXPECT_EQ(v, 0.0f);
}
