#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "wdis/dataset.hpp"
#include "wdis/num_array.hpp"
#include "wdis/rng.hpp"

namespace wdis {

// Rows of a dataset drawn for one training step.
struct ExampleBatch {
  std::vector<std::size_t> index;
  NumArray x;
  std::vector<std::uint32_t> fg;
  std::vector<std::uint32_t> bg;

  std::size_t size() const noexcept { return index.size(); }
  // Positions of rows that carry a background label.
  std::vector<std::size_t> rows_with_bg() const;
};

// Uniform with replacement. Empty datasets are rejected.
ExampleBatch sample_joint(const Dataset& data, std::size_t batch, Rng& rng);

enum class Origin { kJoint, kProduct };

// Features paired with label rows. Joint batches must carry one-hot labels.
struct JointBatch {
  NumArray features;
  NumArray labels;
  Origin origin = Origin::kJoint;

  std::size_t size() const { return features.rows(); }
};

JointBatch make_joint(NumArray features, NumArray labels);

// Permutes label rows uniformly; features and the label multiset are kept.
NumArray shuffle_labels(const NumArray& labels, Rng& rng);
JointBatch shuffle_to_product(const JointBatch& joint, Rng& rng);
// Product sample from an independent draw of labels.
JointBatch pair_independent(const JointBatch& joint, NumArray other_labels);

enum class ProductMode { kShuffle, kIndependent };
ProductMode parse_product_mode(std::string_view name);
std::string_view product_mode_name(ProductMode mode);

struct InterpolatedBatch {
  NumArray features;
  NumArray labels;
  std::vector<double> eps;
};

// Row i = eps_i * product_i + (1 - eps_i) * joint_i, for features and labels.
InterpolatedBatch make_interpolates(const JointBatch& joint, const JointBatch& product, Rng& rng);
InterpolatedBatch make_interpolates(const JointBatch& joint, const JointBatch& product,
                                    std::vector<double> eps);

}  // namespace wdis
