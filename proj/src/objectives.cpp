#include "wdis/objectives.hpp"

#include <array>

#include "wdis/error.hpp"

namespace wdis {

Objective parse_objective(std::string_view name) {
  if (name == "disentangle") return Objective::kDisentangle;
  if (name == "baseline") return Objective::kBaseline;
  fail(ErrorCode::kConfigInvalid, "unknown objective: " + std::string(name));
}

std::string_view objective_name(Objective objective) {
  return objective == Objective::kDisentangle ? "disentangle" : "baseline";
}

using ad::Tape;
using ad::Var;

double LossBreakdown::recompute_total() const {
  if (kind == LossKind::kCritic) return -(w_fg + w_bg) + lambda * (gp_fg + gp_bg);
  if (baseline) return ce_fg;
  return w_fg + w_bg + alpha * (ce_fg + ce_bg);
}

NumArray concat_columns(const NumArray& a, const NumArray& b) {
  Tape tape;
  return tape.value(tape.concat(tape.constant(a), tape.constant(b)));
}

CriticLoss critic_loss_inputs(const ParamStore& params, const ModelSpec& spec, CriticId id,
                              const NumArray& joint, const NumArray& product,
                              const NumArray& interp, double lambda) {
  if (!(lambda >= 0.0)) fail(ErrorCode::kContractViolation, "critic_loss: lambda must be >= 0");
  if (joint.shape() != product.shape() || joint.shape() != interp.shape()) {
    fail(ErrorCode::kContractViolation, "critic_loss: joint " + shape_string(joint.shape()) +
                                            ", product " + shape_string(product.shape()) +
                                            ", interpolates " + shape_string(interp.shape()));
  }
  CriticLoss out;
  out.names = params.names_with_prefix(critic_prefix(id));
  if (joint.rows() == 0) {
    for (const auto& n : out.names) out.grads.emplace_back(params.get(n).shape());
    return out;
  }
  Tape tape;
  BoundParams p;
  p.bind(tape, params, critic_prefix(id), ad::LeafKind::kParameter);
  const Var d_joint = tape.mean(critic_forward(tape, p, spec, id, tape.constant(joint)));
  const Var d_product = tape.mean(critic_forward(tape, p, spec, id, tape.constant(product)));
  const Var mixed = tape.parameter(interp);
  const Var d_mixed = tape.sum(critic_forward(tape, p, spec, id, mixed));
  const Var input_grad = tape.grad_graph(d_mixed, std::array{mixed})[0];
  const Var norms = tape.l2_norm(input_grad);
  const Var ones = tape.constant(NumArray::filled(tape.value(norms).shape(), 1.0));
  const Var penalty = tape.mean(tape.square(tape.sub(norms, ones)));
  const Var loss = tape.add(tape.sub(d_product, d_joint), tape.scale(penalty, lambda));

  for (double v : tape.value(norms).data()) {
    if (v == 0.0) ++out.zero_norm_rows;
  }
  out.loss = tape.value(loss).item();
  out.wasserstein = tape.value(tape.sub(d_joint, d_product)).item();
  out.penalty = tape.value(penalty).item();
  const auto vars = p.vars();
  out.grads = tape.grad(loss, vars);
  return out;
}

CriticLoss critic_loss(const ParamStore& params, const ModelSpec& spec, CriticId id,
                       const JointBatch& joint, const JointBatch& product,
                       const InterpolatedBatch& interp, double lambda) {
  if (joint.origin != Origin::kJoint || product.origin != Origin::kProduct) {
    fail(ErrorCode::kContractViolation, "critic_loss: batch origin tags are swapped");
  }
  check_simplex_rows(interp.labels);
  return critic_loss_inputs(params, spec, id, concat_columns(joint.features, joint.labels),
                            concat_columns(product.features, product.labels),
                            concat_columns(interp.features, interp.labels), lambda);
}

namespace {

// Rows of `m` at positions `rows`, as a matmul by a 0/1 selection matrix.
Var select_rows(Tape& tape, Var m, const std::vector<std::size_t>& rows) {
  const std::size_t n = tape.value(m).rows();
  if (rows.size() == n) return m;
  NumArray s({rows.size(), n});
  for (std::size_t i = 0; i < rows.size(); ++i) s.at(i, rows[i]) = 1.0;
  return tape.matmul(tape.constant(std::move(s)), m);
}

Var wasserstein_term(Tape& tape, const BoundParams& p, const ModelSpec& spec, CriticId id,
                     Var features, const NumArray& joint_labels, const NumArray& product_labels) {
  const Var joint = tape.concat(features, tape.constant(joint_labels));
  const Var product = tape.concat(features, tape.constant(product_labels));
  return tape.sub(tape.mean(critic_forward(tape, p, spec, id, joint)),
                  tape.mean(critic_forward(tape, p, spec, id, product)));
}

}  // namespace

ExtractorLoss extractor_loss(const ParamStore& params, const ModelSpec& spec,
                             const ExtractorInputs& in, double alpha, Objective objective) {
  if (!(alpha >= 0.0)) fail(ErrorCode::kContractViolation, "extractor_loss: alpha must be >= 0");
  const std::size_t n = in.fg.size();
  if (in.x.rows() != n || in.bg.size() != n) {
    fail(ErrorCode::kContractViolation, "extractor_loss: batch parts disagree on row count");
  }
  std::vector<std::size_t> with_bg;
  std::vector<std::uint32_t> bg_present;
  for (std::size_t i = 0; i < n; ++i) {
    if (in.bg[i] != kMissingLabel) {
      with_bg.push_back(i);
      bg_present.push_back(in.bg[i]);
    }
  }
  const NumArray fg_hot = one_hot(in.fg, spec.k_fg);
  const NumArray bg_hot = one_hot(bg_present, spec.k_bg);

  Tape tape;
  BoundParams p;
  p.bind(tape, params, "extractor.", ad::LeafKind::kParameter);
  p.bind(tape, params, "head_fg.", ad::LeafKind::kParameter);
  p.bind(tape, params, "head_bg.", ad::LeafKind::kParameter);
  BoundParams critics;
  critics.bind(tape, params, "critic_", ad::LeafKind::kConstant);

  const Var z = extractor_forward(tape, p, spec, tape.constant(in.x));
  const Var z_fg = tape.slice(z, 0, spec.split);
  const Var z_bg = tape.slice(z, spec.split, spec.d_z);

  ExtractorLoss out;
  LossBreakdown& b = out.breakdown;
  b.kind = LossKind::kExtractor;
  b.alpha = alpha;
  b.baseline = objective == Objective::kBaseline;

  const Var ce_fg =
      tape.softmax_cross_entropy(head_forward(tape, p, HeadId::kFg, z_fg), tape.constant(fg_hot));
  b.ce_fg = tape.value(ce_fg).item();
  Var total = ce_fg;
  if (objective == Objective::kDisentangle) {
    total = tape.scale(ce_fg, alpha);
    if (!with_bg.empty()) {
      if (in.bg_product.shape() != bg_hot.shape()) {
        fail(ErrorCode::kContractViolation, "extractor_loss: bg product labels " +
                                                shape_string(in.bg_product.shape()) +
                                                ", expected " + shape_string(bg_hot.shape()));
      }
      const Var ce_bg = tape.softmax_cross_entropy(
          head_forward(tape, p, HeadId::kBg, select_rows(tape, z_bg, with_bg)),
          tape.constant(bg_hot));
      const Var w_fg = wasserstein_term(tape, critics, spec, CriticId::kFg,
                                        select_rows(tape, z_fg, with_bg), bg_hot, in.bg_product);
      b.ce_bg = tape.value(ce_bg).item();
      b.w_fg = tape.value(w_fg).item();
      total = tape.add(tape.add(total, tape.scale(ce_bg, alpha)), w_fg);
    }
    if (in.fg_product.shape() != fg_hot.shape()) {
      fail(ErrorCode::kContractViolation, "extractor_loss: fg product labels " +
                                              shape_string(in.fg_product.shape()) +
                                              ", expected " + shape_string(fg_hot.shape()));
    }
    const Var w_bg =
        wasserstein_term(tape, critics, spec, CriticId::kBg, z_bg, fg_hot, in.fg_product);
    b.w_bg = tape.value(w_bg).item();
    total = tape.add(total, w_bg);
  }
  b.total = tape.value(total).item();
  out.names = p.names();
  const auto vars = p.vars();
  out.grads = tape.grad(total, vars);
  return out;
}

CeValue ce_loss(const NumArray& logits, const NumArray& targets) {
  if (logits.rank() == 2 && logits.rows() == 0) return {0.0, true};
  Tape tape;
  return {tape.value(tape.softmax_cross_entropy(tape.constant(logits), tape.constant(targets)))
              .item(),
          false};
}

}  // namespace wdis
