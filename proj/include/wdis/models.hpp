#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "wdis/num_array.hpp"
#include "wdis/tape.hpp"

namespace wdis {

// Architecture of the partitioned extractor, the two linear heads and the
// two label-conditioned critics.
struct ModelSpec {
  std::size_t d_x = 32;
  std::vector<std::size_t> trunk_widths = {64, 64};
  std::size_t d_z = 24;
  // z_fg = dims [0, split), z_bg = dims [split, d_z).
  std::size_t split = 16;
  std::vector<std::size_t> critic_widths = {64, 64};
  double leaky_slope = 0.2;
  std::size_t k_fg = 16;
  std::size_t k_bg = 8;

  std::size_t fg_dim() const { return split; }
  std::size_t bg_dim() const { return d_z - split; }
  void validate() const;
};

enum class CriticId { kFg, kBg };
enum class HeadId { kFg, kBg };

std::string_view critic_prefix(CriticId id);
std::string_view head_prefix(HeadId id);
// Feature-slice width plus label one-hot width.
std::size_t critic_input_dim(const ModelSpec& spec, CriticId id);
// Number of classes the critic's label input encodes: D_fg sees l_bg.
std::size_t critic_label_classes(const ModelSpec& spec, CriticId id);

// Named parameter arrays. Insertion order is the canonical order used for
// hashing, serialization and optimizer state.
class ParamStore {
 public:
  void add(std::string name, NumArray value);
  bool contains(std::string_view name) const;
  const NumArray& get(std::string_view name) const;
  // Replaces the payload; the shape must not change.
  void set(std::string_view name, NumArray value);
  NumArray& mutable_value(std::string_view name);

  const std::vector<std::string>& names() const noexcept { return names_; }
  std::vector<std::string> names_with_prefix(std::string_view prefix) const;
  std::size_t size() const noexcept { return names_.size(); }
  std::size_t parameter_count() const;

  std::uint64_t version() const noexcept { return version_; }
  void bump_version() noexcept { ++version_; }

  // SHA-256 over names, shapes and payload bytes, hex encoded.
  std::string digest() const;

  friend bool operator==(const ParamStore& a, const ParamStore& b);

 private:
  std::size_t index_of(std::string_view name) const;

  std::vector<std::string> names_;
  std::vector<NumArray> values_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t version_ = 0;
};

// Kaiming-style uniform weights scaled by fan-in, zero biases.
ParamStore init_params(const ModelSpec& spec, std::uint64_t seed);

// Parameter leaves of one store placed on a tape.
class BoundParams {
 public:
  // Binds every parameter whose name starts with `prefix`.
  void bind(ad::Tape& tape, const ParamStore& store, std::string_view prefix,
            ad::LeafKind kind);
  ad::Var operator[](std::string_view name) const;
  const std::vector<std::pair<std::string, ad::Var>>& entries() const { return entries_; }
  std::vector<ad::Var> vars() const;
  std::vector<std::string> names() const;

 private:
  std::vector<std::pair<std::string, ad::Var>> entries_;
};

// x @ w + 1 b, with the bias row spread over the batch by a matmul.
ad::Var dense(ad::Tape& tape, ad::Var x, ad::Var w, ad::Var b);
// Full extractor output, shape [n, d_z].
ad::Var extractor_forward(ad::Tape& tape, const BoundParams& p, const ModelSpec& spec, ad::Var x);
// Logits z @ W^T + b of a linear head.
ad::Var head_forward(ad::Tape& tape, const BoundParams& p, HeadId head, ad::Var z);
// Critic scores [n, 1] of an input already laid out as concat(feature, label).
ad::Var critic_forward(ad::Tape& tape, const BoundParams& p, const ModelSpec& spec,
                       CriticId id, ad::Var input);

struct PartitionedFeatures {
  NumArray z_fg;
  NumArray z_bg;
};

PartitionedFeatures extract(const ParamStore& params, const ModelSpec& spec, const NumArray& x);
NumArray extract_full(const ParamStore& params, const ModelSpec& spec, const NumArray& x);
NumArray head_logits(const ParamStore& params, HeadId head, const NumArray& z);

// Critic score per row of concat(feature, label). Label rows must lie in the
// probability simplex (tolerance 1e-9); interpolated labels are fine.
std::vector<double> critic_score(const ParamStore& params, const ModelSpec& spec, CriticId id,
                                 const NumArray& features, const NumArray& labels);
// Same, for inputs already concatenated (no simplex check).
std::vector<double> critic_score_joint(const ParamStore& params, const ModelSpec& spec,
                                       CriticId id, const NumArray& inputs);

void check_simplex_rows(const NumArray& labels, double tol = 1e-9);

}  // namespace wdis
