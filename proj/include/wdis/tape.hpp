#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "wdis/num_array.hpp"

namespace wdis::ad {

// Closed primitive set. There is no implicit broadcasting anywhere: a row
// vector is spread over a batch with matmul(ones_column, row).
enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kScale,   // a * s, s a rank-0 node
  kMatMul,  // op(a) @ op(b), op = optional transpose
  kConcat,  // along the last axis
  kSlice,   // [begin, end) of the last axis
  kLeakyRelu,
  kMean,    // full reduction to rank 0
  kSum,     // full reduction to rank 0
  kL2Norm,  // over the last axis: [n, m] -> [n, 1], [m] -> []
  kSquare,
  kSoftmaxCrossEntropy,  // mean over rows, targets are probability rows
};

std::string_view op_name(Op op);

struct Var {
  std::uint32_t id = 0;
  friend bool operator==(Var, Var) = default;
};

struct OpAttrs {
  double slope = 0.0;
  std::size_t begin = 0;
  std::size_t end = 0;
  bool transpose_a = false;
  bool transpose_b = false;
};

enum class LeafKind : std::uint8_t { kParameter, kConstant };

struct Node {
  Op op = Op::kLeaf;
  std::vector<Var> inputs;
  OpAttrs attrs;
  LeafKind leaf_kind = LeafKind::kConstant;
  // Emitted by a first-order backward pass; must not be differentiated again.
  bool detached = false;
  NumArray value;
};

// Evaluates one primitive on concrete values. Throws on shape mismatch
// (both shapes are named in the message) and on non-finite results.
NumArray evaluate_primitive(Op op, std::span<const NumArray* const> inputs,
                            const OpAttrs& attrs);

// Append-only record of primitive applications. Single-threaded; separate
// tapes share nothing.
class Tape {
 public:
  Var parameter(NumArray value);
  Var constant(NumArray value);

  // Applies `op`, records exactly one node and returns it.
  Var apply(Op op, std::span<const Var> inputs, const OpAttrs& attrs = {});

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, Var s);
  Var scale(Var a, double s);
  Var matmul(Var a, Var b, bool transpose_a = false, bool transpose_b = false);
  Var concat(std::span<const Var> parts);
  Var concat(Var a, Var b);
  Var slice(Var a, std::size_t begin, std::size_t end);
  Var leaky_relu(Var a, double slope);
  Var mean(Var a);
  Var sum(Var a);
  Var l2_norm(Var a);
  Var square(Var a);
  Var softmax_cross_entropy(Var logits, Var targets);

  const NumArray& value(Var v) const;
  const Node& node(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  // Reverse-mode gradient of a one-element `output` with respect to leaves.
  // Leaves the output does not reach get zeros.
  std::vector<NumArray> grad(Var output, std::span<const Var> wrt);

  // Same, but the backward pass is itself recorded with differentiable
  // primitives, so the returned nodes can be differentiated once more.
  // l2_norm and softmax_cross_entropy are first-order only.
  std::vector<Var> grad_graph(Var output, std::span<const Var> wrt);

  // Recomputes every node from the leaf values.
  std::vector<NumArray> replay() const;

 private:
  std::vector<Var> backward(Var output, std::span<const Var> wrt, bool create_graph);
  Var push(Node node);
  void check(Var v) const;

  std::vector<Node> nodes_;
  bool emitting_detached_ = false;
};

struct GradNormResult {
  // d(sum_i ||dD/dx_i||)/d(param) for each parameter leaf.
  std::vector<NumArray> param_grads;
  // Per-row norm of the input gradient, shape [n, 1].
  NumArray norms;
  // Rows whose input gradient vanished; their norm gets subgradient 0.
  std::size_t zero_norm_rows = 0;
};

// Double backward: `critic_output` is a scalar (usually the sum of per-row
// critic scores, so row i of the input gradient belongs to sample i).
GradNormResult grad_of_gradnorm(Tape& tape, Var critic_output, Var input,
                                std::span<const Var> params);

}  // namespace wdis::ad
