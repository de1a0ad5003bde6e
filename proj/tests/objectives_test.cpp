#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"
#include "wdis/error.hpp"
#include "wdis/objectives.hpp"

namespace wdis {
namespace {

using testing::random_array;

ModelSpec small_spec() {
  ModelSpec s;
  s.d_x = 5;
  s.trunk_widths = {6};
  s.d_z = 4;
  s.split = 3;
  s.critic_widths = {5};
  s.k_fg = 4;
  s.k_bg = 3;
  return s;
}

std::vector<std::uint32_t> random_labels(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::uint32_t> out(n);
  for (auto& l : out) l = static_cast<std::uint32_t>(rng.uniform_int(k));
  return out;
}

struct CriticBatches {
  JointBatch joint;
  JointBatch product;
  InterpolatedBatch interp;
};

CriticBatches critic_batches(const ModelSpec& spec, std::size_t n, Rng& rng) {
  const auto labels = random_labels(n, spec.k_bg, rng);
  JointBatch joint = make_joint(random_array({n, spec.fg_dim()}, rng), one_hot(labels, spec.k_bg));
  JointBatch product = shuffle_to_product(joint, rng);
  InterpolatedBatch interp = make_interpolates(joint, product, rng);
  return {std::move(joint), std::move(product), std::move(interp)};
}

ModelSpec linear_critic_spec() {
  ModelSpec s = small_spec();
  s.critic_widths = {};
  return s;
}

TEST(CriticLoss, ConstantCriticPaysLambda) {
  const ModelSpec spec = small_spec();
  ParamStore p = init_params(spec, 1);
  for (const auto& name : p.names_with_prefix("critic_fg.")) p.set(name, NumArray(p.get(name).shape()));
  p.set("critic_fg.1.bias", NumArray::matrix(1, 1, {0.7}));
  Rng rng(2);
  const auto b = critic_batches(spec, 8, rng);
  const CriticLoss l = critic_loss(p, spec, CriticId::kFg, b.joint, b.product, b.interp, 10.0);
  EXPECT_EQ(l.loss, 10.0);
  EXPECT_EQ(l.zero_norm_rows, 8u);
  for (const auto& g : l.grads) {
    for (double v : g.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(CriticLoss, LinearCriticClosedForm) {
  const ModelSpec spec = linear_critic_spec();
  const ParamStore p = init_params(spec, 3);
  Rng rng(4);
  const auto b = critic_batches(spec, 6, rng);
  const NumArray& w = p.get("critic_fg.0.weight");
  const NumArray j = concat_columns(b.joint.features, b.joint.labels);
  const NumArray q = concat_columns(b.product.features, b.product.labels);
  double diff = 0.0, norm2 = 0.0;
  for (std::size_t c = 0; c < w.rows(); ++c) {
    double mj = 0.0, mq = 0.0;
    for (std::size_t r = 0; r < 6; ++r) {
      mj += j.at(r, c) / 6.0;
      mq += q.at(r, c) / 6.0;
    }
    diff += w.at(c, 0) * (mq - mj);
    norm2 += w.at(c, 0) * w.at(c, 0);
  }
  const CriticLoss l0 = critic_loss(p, spec, CriticId::kFg, b.joint, b.product, b.interp, 0.0);
  EXPECT_NEAR(l0.loss, diff, 1e-12);
  const CriticLoss l10 = critic_loss(p, spec, CriticId::kFg, b.joint, b.product, b.interp, 10.0);
  const double pen = (std::sqrt(norm2) - 1.0) * (std::sqrt(norm2) - 1.0);
  EXPECT_NEAR(l10.penalty, pen, 1e-12);
  EXPECT_NEAR(l10.loss, diff + 10.0 * pen, 1e-12);
}

TEST(CriticLoss, GradientMatchesFiniteDifferences) {
  const ModelSpec spec = small_spec();
  const ParamStore p = init_params(spec, 5);
  Rng rng(6);
  const auto b = critic_batches(spec, 5, rng);
  const CriticLoss l = critic_loss(p, spec, CriticId::kFg, b.joint, b.product, b.interp, 10.0);
  std::vector<NumArray> at;
  for (const auto& n : l.names) at.push_back(p.get(n));
  const auto fd = testing::central_differences(
      [&](const std::vector<NumArray>& vals) {
        ParamStore q = p;
        for (std::size_t i = 0; i < vals.size(); ++i) q.set(l.names[i], vals[i]);
        return critic_loss(q, spec, CriticId::kFg, b.joint, b.product, b.interp, 10.0).loss;
      },
      at);
  EXPECT_LT(testing::max_rel_error(l.grads, fd), 1e-3);
}

TEST(CriticLoss, OutputBiasCancels) {
  const ModelSpec spec = small_spec();
  ParamStore p = init_params(spec, 7);
  Rng rng(8);
  const auto b = critic_batches(spec, 9, rng);
  const CriticLoss before = critic_loss(p, spec, CriticId::kFg, b.joint, b.product, b.interp, 10.0);
  p.set("critic_fg.1.bias", NumArray::matrix(1, 1, {3.25}));
  const CriticLoss after = critic_loss(p, spec, CriticId::kFg, b.joint, b.product, b.interp, 10.0);
  EXPECT_NEAR(before.wasserstein, after.wasserstein, 1e-12);
  EXPECT_EQ(before.penalty, after.penalty);
}

TEST(CriticLoss, IdenticalBatchesGiveZeroTerm) {
  const ModelSpec spec = small_spec();
  const ParamStore p = init_params(spec, 9);
  Rng rng(10);
  const auto b = critic_batches(spec, 7, rng);
  JointBatch same = b.joint;
  same.origin = Origin::kProduct;
  const auto interp = make_interpolates(b.joint, same, rng);
  const CriticLoss l = critic_loss(p, spec, CriticId::kFg, b.joint, same, interp, 0.0);
  EXPECT_EQ(l.wasserstein, 0.0);
  EXPECT_EQ(l.loss, 0.0);
  for (const auto& g : l.grads) {
    for (double v : g.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(CriticLoss, RejectsSwappedOriginsAndNegativeLambda) {
  const ModelSpec spec = small_spec();
  const ParamStore p = init_params(spec, 9);
  Rng rng(11);
  const auto b = critic_batches(spec, 4, rng);
  EXPECT_THROW(critic_loss(p, spec, CriticId::kFg, b.product, b.joint, b.interp, 1.0), Error);
  EXPECT_THROW(critic_loss(p, spec, CriticId::kFg, b.joint, b.product, b.interp, -1.0), Error);
}

ExtractorInputs extractor_inputs(const ModelSpec& spec, std::size_t n, Rng& rng,
                                 std::size_t missing_every = 0) {
  ExtractorInputs in;
  in.x = random_array({n, spec.d_x}, rng);
  in.fg = random_labels(n, spec.k_fg, rng);
  in.bg = random_labels(n, spec.k_bg, rng);
  std::vector<std::uint32_t> present;
  for (std::size_t i = 0; i < n; ++i) {
    if (missing_every && i % missing_every == 0) in.bg[i] = kMissingLabel;
    if (in.bg[i] != kMissingLabel) present.push_back(in.bg[i]);
  }
  in.fg_product = shuffle_labels(one_hot(in.fg, spec.k_fg), rng);
  in.bg_product = shuffle_labels(one_hot(present, spec.k_bg), rng);
  return in;
}

TEST(ExtractorLoss, AlphaZeroLeavesWassersteinTerms) {
  const ModelSpec spec = small_spec();
  const ParamStore p = init_params(spec, 12);
  Rng rng(13);
  const ExtractorInputs in = extractor_inputs(spec, 10, rng);
  const ExtractorLoss l = extractor_loss(p, spec, in, 0.0, Objective::kDisentangle);
  EXPECT_NEAR(l.breakdown.total, l.breakdown.w_fg + l.breakdown.w_bg, 1e-12);
  EXPECT_GT(l.breakdown.ce_fg, 0.0);
}

TEST(ExtractorLoss, ZeroCriticsUniformHeads) {
  ModelSpec spec = small_spec();
  spec.k_fg = 16;
  spec.k_bg = 8;
  ParamStore p = init_params(spec, 14);
  for (const auto& name : p.names()) {
    if (!name.starts_with("extractor.")) p.set(name, NumArray(p.get(name).shape()));
  }
  Rng rng(15);
  const ExtractorInputs in = extractor_inputs(spec, 12, rng);
  const ExtractorLoss l = extractor_loss(p, spec, in, 1.0, Objective::kDisentangle);
  EXPECT_NEAR(l.breakdown.total, std::log(16.0) + std::log(8.0), 1e-12);
  EXPECT_NEAR(l.breakdown.total, 4.852030, 1e-6);
}

TEST(ExtractorLoss, GradientMatchesFiniteDifferences) {
  const ModelSpec spec = small_spec();
  const ParamStore p = init_params(spec, 16);
  Rng rng(17);
  const ExtractorInputs in = extractor_inputs(spec, 8, rng, 3);
  const ExtractorLoss l = extractor_loss(p, spec, in, 1.0, Objective::kDisentangle);
  std::vector<NumArray> at;
  for (const auto& n : l.names) at.push_back(p.get(n));
  const auto fd = testing::central_differences(
      [&](const std::vector<NumArray>& vals) {
        ParamStore q = p;
        for (std::size_t i = 0; i < vals.size(); ++i) q.set(l.names[i], vals[i]);
        return extractor_loss(q, spec, in, 1.0, Objective::kDisentangle).breakdown.total;
      },
      at);
  EXPECT_LT(testing::max_rel_error(l.grads, fd), 1e-3);
  for (const auto& n : l.names) EXPECT_FALSE(n.starts_with("critic_"));
}

TEST(ExtractorLoss, TotalRecomputesFromParts) {
  const ModelSpec spec = small_spec();
  const ParamStore p = init_params(spec, 18);
  Rng rng(19);
  const ExtractorInputs in = extractor_inputs(spec, 9, rng, 4);
  for (double alpha : {0.0, 0.5, 2.0}) {
    const auto b = extractor_loss(p, spec, in, alpha, Objective::kDisentangle).breakdown;
    EXPECT_NEAR(b.total, b.recompute_total(), 1e-12);
  }
  const auto base = extractor_loss(p, spec, in, 1.0, Objective::kBaseline).breakdown;
  EXPECT_EQ(base.total, base.ce_fg);
  EXPECT_EQ(base.recompute_total(), base.total);
}

TEST(ExtractorLoss, AntisymmetricToCriticLoss) {
  const ModelSpec spec = small_spec();
  const ParamStore p = init_params(spec, 20);
  Rng rng(21);
  const ExtractorInputs in = extractor_inputs(spec, 10, rng);
  const auto e = extractor_loss(p, spec, in, 1.0, Objective::kDisentangle).breakdown;
  const PartitionedFeatures f = extract(p, spec, in.x);

  const JointBatch jf = make_joint(f.z_fg, one_hot(in.bg, spec.k_bg));
  const JointBatch pf{f.z_fg, in.bg_product, Origin::kProduct};
  const auto cf = critic_loss(p, spec, CriticId::kFg, jf, pf, make_interpolates(jf, pf, rng), 0.0);
  EXPECT_NEAR(cf.loss, -e.w_fg, 1e-12);

  const JointBatch jb = make_joint(f.z_bg, one_hot(in.fg, spec.k_fg));
  const JointBatch pb{f.z_bg, in.fg_product, Origin::kProduct};
  const auto cb = critic_loss(p, spec, CriticId::kBg, jb, pb, make_interpolates(jb, pb, rng), 0.0);
  EXPECT_NEAR(cb.loss, -e.w_bg, 1e-12);
}

TEST(ExtractorLoss, MissingBackgroundRowsOnlyFeedForegroundCe) {
  const ModelSpec spec = small_spec();
  const ParamStore p = init_params(spec, 22);
  Rng rng(23);
  const ExtractorInputs in = extractor_inputs(spec, 9, rng, 3);
  const auto full = extractor_loss(p, spec, in, 1.0, Objective::kDisentangle).breakdown;

  // The same loss on only the labelled rows.
  ExtractorInputs kept;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < 9; ++i) {
    if (in.bg[i] != kMissingLabel) rows.push_back(i);
  }
  kept.x = take_rows(in.x, rows);
  for (std::size_t r : rows) {
    kept.fg.push_back(in.fg[r]);
    kept.bg.push_back(in.bg[r]);
  }
  kept.bg_product = in.bg_product;
  kept.fg_product = one_hot(kept.fg, spec.k_fg);
  const auto sub = extractor_loss(p, spec, kept, 1.0, Objective::kDisentangle).breakdown;
  EXPECT_NEAR(full.ce_bg, sub.ce_bg, 1e-12);
  EXPECT_NEAR(full.w_fg, sub.w_fg, 1e-12);
  EXPECT_GT(std::abs(full.ce_fg - sub.ce_fg), 1e-9);
}

TEST(ExtractorLoss, LabelOutOfRangeRejected) {
  const ModelSpec spec = small_spec();
  const ParamStore p = init_params(spec, 24);
  Rng rng(25);
  ExtractorInputs in = extractor_inputs(spec, 4, rng);
  in.fg[2] = 99;
  EXPECT_THROW(extractor_loss(p, spec, in, 1.0, Objective::kDisentangle), Error);
}

TEST(CeLoss, Examples) {
  EXPECT_NEAR(ce_loss(NumArray::matrix(1, 5, {0, 0, 0, 0, 0}),
                      NumArray::matrix(1, 5, {0, 0, 1, 0, 0})).value,
              std::log(5.0), 1e-15);
  const CeValue margin = ce_loss(NumArray::matrix(1, 2, {20.0, 0.0}), NumArray::matrix(1, 2, {1, 0}));
  EXPECT_LT(margin.value, 1e-8);
  const CeValue empty = ce_loss(NumArray({0, 3}), NumArray({0, 3}));
  EXPECT_TRUE(empty.empty);
  EXPECT_EQ(empty.value, 0.0);
}

TEST(CeLoss, MatchesDirectFormula) {
  Rng rng(26);
  const NumArray logits = random_array({7, 5}, rng, 3.0);
  const auto labels = random_labels(7, 5, rng);
  double direct = 0.0;
  for (std::size_t r = 0; r < 7; ++r) {
    double z = 0.0;
    for (double v : logits.row(r)) z += std::exp(v);
    direct -= std::log(std::exp(logits.at(r, labels[r])) / z);
  }
  direct /= 7.0;
  EXPECT_NEAR(ce_loss(logits, one_hot(labels, 5)).value, direct, 1e-12);
}

}  // namespace
}  // namespace wdis
