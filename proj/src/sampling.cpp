#include "wdis/sampling.hpp"

#include "wdis/error.hpp"

namespace wdis {

std::vector<std::size_t> ExampleBatch::rows_with_bg() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < bg.size(); ++i) {
    if (bg[i] != kMissingLabel) out.push_back(i);
  }
  return out;
}

ExampleBatch sample_joint(const Dataset& data, std::size_t batch, Rng& rng) {
  if (data.size() == 0) fail(ErrorCode::kContractViolation, "sample_joint: empty dataset");
  ExampleBatch b;
  b.index.resize(batch);
  for (auto& i : b.index) i = static_cast<std::size_t>(rng.uniform_int(data.size()));
  b.x = take_rows(data.features, b.index);
  for (std::size_t i : b.index) {
    b.fg.push_back(data.fg[i]);
    b.bg.push_back(data.bg[i]);
  }
  return b;
}

JointBatch make_joint(NumArray features, NumArray labels) {
  if (features.rank() != 2 || labels.rank() != 2 || features.rows() != labels.rows()) {
    fail(ErrorCode::kContractViolation, "joint batch: features " + shape_string(features.shape()) +
                                            " vs labels " + shape_string(labels.shape()));
  }
  for (std::size_t r = 0; r < labels.rows(); ++r) {
    std::size_t ones = 0;
    for (double v : labels.row(r)) {
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        ones = 2;
      }
    }
    if (ones != 1) {
      fail(ErrorCode::kContractViolation, "joint batch: label row " + std::to_string(r) +
                                              " is not one-hot");
    }
  }
  return {std::move(features), std::move(labels), Origin::kJoint};
}

NumArray shuffle_labels(const NumArray& labels, Rng& rng) {
  const auto perm = uniform_permutation(labels.rows(), rng);
  return take_rows(labels, perm);
}

JointBatch shuffle_to_product(const JointBatch& joint, Rng& rng) {
  return {joint.features, shuffle_labels(joint.labels, rng), Origin::kProduct};
}

JointBatch pair_independent(const JointBatch& joint, NumArray other_labels) {
  if (other_labels.shape() != joint.labels.shape()) {
    fail(ErrorCode::kContractViolation, "independent labels " +
                                            shape_string(other_labels.shape()) + " vs " +
                                            shape_string(joint.labels.shape()));
  }
  return {joint.features, std::move(other_labels), Origin::kProduct};
}

ProductMode parse_product_mode(std::string_view name) {
  if (name == "shuffle") return ProductMode::kShuffle;
  if (name == "independent") return ProductMode::kIndependent;
  fail(ErrorCode::kConfigInvalid, "product mode must be \"shuffle\" or \"independent\", got \"" +
                                      std::string(name) + "\"");
}

std::string_view product_mode_name(ProductMode mode) {
  return mode == ProductMode::kShuffle ? "shuffle" : "independent";
}

InterpolatedBatch make_interpolates(const JointBatch& joint, const JointBatch& product, Rng& rng) {
  std::vector<double> eps(joint.size());
  for (auto& e : eps) e = rng.uniform();
  return make_interpolates(joint, product, std::move(eps));
}

namespace {

NumArray mix_rows(const NumArray& a, const NumArray& b, const std::vector<double>& eps) {
  NumArray out(a.shape());
  const std::size_t w = a.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      out.at(r, c) = eps[r] * b.at(r, c) + (1.0 - eps[r]) * a.at(r, c);
    }
  }
  return out;
}

}  // namespace

InterpolatedBatch make_interpolates(const JointBatch& joint, const JointBatch& product,
                                    std::vector<double> eps) {
  if (joint.features.shape() != product.features.shape() ||
      joint.labels.shape() != product.labels.shape()) {
    fail(ErrorCode::kContractViolation,
         "interpolates: joint " + shape_string(joint.features.shape()) + "/" +
             shape_string(joint.labels.shape()) + " vs product " +
             shape_string(product.features.shape()) + "/" + shape_string(product.labels.shape()));
  }
  if (eps.size() != joint.size()) {
    fail(ErrorCode::kContractViolation, "interpolates: one eps per row required");
  }
  for (double e : eps) {
    if (!(e >= 0.0 && e <= 1.0)) fail(ErrorCode::kContractViolation, "interpolates: eps outside [0, 1]");
  }
  InterpolatedBatch out;
  out.features = mix_rows(joint.features, product.features, eps);
  out.labels = mix_rows(joint.labels, product.labels, eps);
  out.eps = std::move(eps);
  return out;
}

}  // namespace wdis
