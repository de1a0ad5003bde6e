#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"
#include "wdis/error.hpp"
#include "wdis/models.hpp"

namespace wdis {
namespace {

using testing::random_array;

ModelSpec small_spec() {
  ModelSpec s;
  s.d_x = 6;
  s.trunk_widths = {8};
  s.d_z = 5;
  s.split = 3;
  s.critic_widths = {7};
  s.k_fg = 4;
  s.k_bg = 3;
  return s;
}

TEST(ModelSpec, SplitBounds) {
  ModelSpec s;
  s.d_z = 2048;
  s.split = 1798;
  EXPECT_NO_THROW(s.validate());
  EXPECT_EQ(s.bg_dim(), 250u);
  s.split = 2048;
  EXPECT_THROW(s.validate(), Error);
  s.split = 0;
  EXPECT_THROW(s.validate(), Error);
}

TEST(ParamStore, SameSeedIsBitIdentical) {
  const ModelSpec spec;
  const ParamStore a = init_params(spec, 7);
  const ParamStore b = init_params(spec, 7);
  const ParamStore c = init_params(spec, 8);
  EXPECT_TRUE(a == b);
  EXPECT_EQ(a.digest(), b.digest());
  EXPECT_FALSE(a == c);
  EXPECT_NE(a.digest(), c.digest());
}

TEST(ParamStore, LayoutAndShapes) {
  const ModelSpec spec;
  const ParamStore p = init_params(spec, 1);
  EXPECT_EQ(p.get("extractor.0.weight").shape(), (Shape{32, 64}));
  EXPECT_EQ(p.get("extractor.2.weight").shape(), (Shape{64, 24}));
  EXPECT_EQ(p.get("head_fg.weight").shape(), (Shape{16, 16}));
  EXPECT_EQ(p.get("head_bg.weight").shape(), (Shape{8, 8}));
  EXPECT_EQ(p.get("critic_fg.0.weight").shape(), (Shape{16 + 8, 64}));
  EXPECT_EQ(p.get("critic_bg.0.weight").shape(), (Shape{8 + 16, 64}));
  EXPECT_EQ(p.get("critic_bg.2.weight").shape(), (Shape{64, 1}));
  for (const auto& name : p.names_with_prefix("extractor.")) {
    if (name.ends_with(".bias")) {
      for (double v : p.get(name).data()) EXPECT_EQ(v, 0.0);
    }
  }
  const double bound = std::sqrt(6.0 / (1.04 * 32.0));
  for (double v : p.get("extractor.0.weight").data()) EXPECT_LE(std::abs(v), bound);
}

TEST(ParamStore, ErrorsNameTheParameter) {
  ParamStore p = init_params(small_spec(), 1);
  try {
    p.get("nope");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("nope"), std::string::npos);
  }
  EXPECT_THROW(p.set("head_fg.bias", NumArray({1, 9})), Error);
  EXPECT_THROW(p.add("head_fg.bias", NumArray({1, 4})), Error);
  const auto v0 = p.version();
  p.set("head_fg.bias", NumArray::filled({1, 4}, 2.0));
  EXPECT_GT(p.version(), v0);
}

TEST(Extractor, ZeroWeightsGiveZeroFeatures) {
  const ModelSpec spec = small_spec();
  ParamStore p = init_params(spec, 3);
  for (const auto& name : p.names_with_prefix("extractor.")) {
    p.set(name, NumArray(p.get(name).shape()));
  }
  Rng rng(1);
  const auto f = extract(p, spec, random_array({4, spec.d_x}, rng));
  for (double v : f.z_fg.data()) EXPECT_EQ(v, 0.0);
  for (double v : f.z_bg.data()) EXPECT_EQ(v, 0.0);
}

TEST(Extractor, SliceMatchesFullOutputAndIsBatchConsistent) {
  const ModelSpec spec = small_spec();
  const ParamStore p = init_params(spec, 3);
  Rng rng(2);
  const NumArray x = random_array({6, spec.d_x}, rng);
  const NumArray full = extract_full(p, spec, x);
  const auto part = extract(p, spec, x);
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 0; c < spec.d_z; ++c) {
      const double v = c < spec.split ? part.z_fg.at(r, c) : part.z_bg.at(r, c - spec.split);
      EXPECT_EQ(v, full.at(r, c));
    }
    const std::size_t idx[] = {r};
    const NumArray single = extract_full(p, spec, take_rows(x, idx));
    for (std::size_t c = 0; c < spec.d_z; ++c) EXPECT_NEAR(single.at(0, c), full.at(r, c), 1e-12);
  }
}

TEST(Heads, ReadOnlyTheirPartition) {
  const ModelSpec spec = small_spec();
  const ParamStore p = init_params(spec, 4);
  Rng rng(5);
  const NumArray zf = random_array({3, spec.fg_dim()}, rng);
  const NumArray zb = random_array({3, spec.bg_dim()}, rng);
  const NumArray lf = head_logits(p, HeadId::kFg, zf);
  EXPECT_EQ(lf.shape(), (Shape{3, spec.k_fg}));
  const NumArray w = p.get("head_fg.weight");
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t k = 0; k < spec.k_fg; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < spec.fg_dim(); ++j) s += zf.at(r, j) * w.at(k, j);
      EXPECT_NEAR(lf.at(r, k), s, 1e-12);
    }
  }
  EXPECT_THROW(head_logits(p, HeadId::kFg, zb), Error);
}

TEST(Critic, LinearCriticIsDotProduct) {
  ModelSpec spec = small_spec();
  spec.critic_widths = {};
  const ParamStore p = init_params(spec, 9);
  Rng rng(6);
  const NumArray feat = random_array({4, spec.fg_dim()}, rng);
  const std::uint32_t labels[] = {0, 2, 1, 2};
  const NumArray lab = one_hot(labels, spec.k_bg);
  const auto scores = critic_score(p, spec, CriticId::kFg, feat, lab);
  const NumArray& w = p.get("critic_fg.0.weight");
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < spec.fg_dim(); ++j) s += feat.at(r, j) * w.at(j, 0);
    s += w.at(spec.fg_dim() + labels[r], 0);
    EXPECT_NEAR(scores[r], s, 1e-12);
  }
}

TEST(Critic, RowPermutationEquivariant) {
  const ModelSpec spec = small_spec();
  const ParamStore p = init_params(spec, 10);
  Rng rng(7);
  const NumArray feat = random_array({5, spec.bg_dim()}, rng);
  const std::uint32_t labels[] = {0, 3, 1, 2, 3};
  const NumArray lab = one_hot(labels, spec.k_fg);
  const auto base = critic_score(p, spec, CriticId::kBg, feat, lab);
  const std::size_t perm[] = {4, 2, 0, 1, 3};
  const auto permuted =
      critic_score(p, spec, CriticId::kBg, take_rows(feat, perm), take_rows(lab, perm));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(permuted[i], base[perm[i]]);
}

TEST(Critic, AcceptsSimplexLabelsOnly) {
  const ModelSpec spec = small_spec();
  const ParamStore p = init_params(spec, 11);
  NumArray feat({1, spec.fg_dim()});
  const NumArray mixed = NumArray::matrix(1, 3, {0.25, 0.75, 0.0});
  EXPECT_NO_THROW(critic_score(p, spec, CriticId::kFg, feat, mixed));
  const NumArray off = NumArray::matrix(1, 3, {0.5, 0.75, 0.0});
  EXPECT_THROW(critic_score(p, spec, CriticId::kFg, feat, off), Error);
  const NumArray negative = NumArray::matrix(1, 3, {1.5, -0.5, 0.0});
  EXPECT_THROW(critic_score(p, spec, CriticId::kFg, feat, negative), Error);
  EXPECT_THROW(critic_score(p, spec, CriticId::kFg, feat, NumArray({1, 4})), Error);
}

}  // namespace
}  // namespace wdis
