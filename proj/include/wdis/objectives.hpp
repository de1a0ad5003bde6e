#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "wdis/models.hpp"
#include "wdis/num_array.hpp"
#include "wdis/sampling.hpp"

namespace wdis {

enum class LossKind { kCritic, kExtractor };

// Scalar parts of one critic step or one extractor step. w_* are always
// E_joint[D] - E_product[D].
struct LossBreakdown {
  LossKind kind = LossKind::kCritic;
  double w_fg = 0.0;
  double w_bg = 0.0;
  double gp_fg = 0.0;
  double gp_bg = 0.0;
  double ce_fg = 0.0;
  double ce_bg = 0.0;
  double total = 0.0;
  double lambda = 0.0;
  double alpha = 0.0;
  std::size_t zero_norm_rows = 0;
  bool baseline = false;

  // Critic: -(w_fg + w_bg) + lambda (gp_fg + gp_bg).
  // Extractor: w_fg + w_bg + alpha (ce_fg + ce_bg); baseline: ce_fg.
  double recompute_total() const;
};

struct CriticLoss {
  double loss = 0.0;
  double wasserstein = 0.0;  // E_joint[D] - E_product[D]
  double penalty = 0.0;      // mean over interpolates of (|grad D| - 1)^2
  std::size_t zero_norm_rows = 0;
  std::vector<std::string> names;
  std::vector<NumArray> grads;
};

// mean_product[D] - mean_joint[D] + lambda * penalty, with gradients for every
// parameter of critic `id`. Inputs are rows of concat(feature, label). Empty
// batches give a zero loss and zero gradients.
CriticLoss critic_loss_inputs(const ParamStore& params, const ModelSpec& spec, CriticId id,
                              const NumArray& joint, const NumArray& product,
                              const NumArray& interp, double lambda);

CriticLoss critic_loss(const ParamStore& params, const ModelSpec& spec, CriticId id,
                       const JointBatch& joint, const JointBatch& product,
                       const InterpolatedBatch& interp, double lambda);

enum class Objective { kDisentangle, kBaseline };

// "disentangle" or "baseline".
Objective parse_objective(std::string_view name);
std::string_view objective_name(Objective objective);

// Inputs of one extractor+heads step. `bg_product` holds product-side
// background labels for the rows that have one, in order; `fg_product` the
// product-side foreground labels for every row.
struct ExtractorInputs {
  NumArray x;
  std::vector<std::uint32_t> fg;
  std::vector<std::uint32_t> bg;
  NumArray fg_product;
  NumArray bg_product;
};

struct ExtractorLoss {
  LossBreakdown breakdown;
  std::vector<std::string> names;
  std::vector<NumArray> grads;
};

// Gradients cover extractor and head parameters only; critics are constants.
ExtractorLoss extractor_loss(const ParamStore& params, const ModelSpec& spec,
                             const ExtractorInputs& in, double alpha, Objective objective);

struct CeValue {
  double value = 0.0;
  bool empty = false;
};

// Mean softmax cross-entropy over rows; an empty batch is 0 and flagged.
CeValue ce_loss(const NumArray& logits, const NumArray& targets);

// concat(feature, label) row-wise.
NumArray concat_columns(const NumArray& a, const NumArray& b);

}  // namespace wdis
