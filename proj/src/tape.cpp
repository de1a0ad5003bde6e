#include "wdis/tape.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <sstream>

#include "wdis/error.hpp"

namespace wdis::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void shape_error(Op op, const NumArray& a, const NumArray& b) {
  std::ostringstream os;
  os << op_name(op) << ": shape mismatch " << shape_string(a.shape()) << " vs "
     << shape_string(b.shape());
  fail(ErrorCode::kContractViolation, os.str());
}

[[noreturn]] void shape_error(Op op, const NumArray& a, const std::string& why) {
  std::ostringstream os;
  os << op_name(op) << ": " << why << ", got shape " << shape_string(a.shape());
  fail(ErrorCode::kContractViolation, os.str());
}

void expect_arity(Op op, std::size_t got, std::size_t want) {
  if (got != want) {
    fail(ErrorCode::kContractViolation, std::string(op_name(op)) + ": expected " +
                                            std::to_string(want) + " inputs, got " +
                                            std::to_string(got));
  }
}

template <typename F>
NumArray elementwise(Op op, const NumArray& a, const NumArray& b, F f) {
  if (a.shape() != b.shape()) shape_error(op, a, b);
  NumArray out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

NumArray matmul_values(const NumArray& a, const NumArray& b, bool ta, bool tb) {
  if (a.rank() != 2) shape_error(Op::kMatMul, a, "expects rank 2");
  if (b.rank() != 2) shape_error(Op::kMatMul, b, "expects rank 2");
  const std::size_t m = ta ? a.cols() : a.rows();
  const std::size_t k = ta ? a.rows() : a.cols();
  const std::size_t k2 = tb ? b.cols() : b.rows();
  const std::size_t n = tb ? b.rows() : b.cols();
  if (k != k2) shape_error(Op::kMatMul, a, b);
  NumArray out({m, n});
  if (m == 0 || n == 0) return out;
  if (k == 0) return out;
  ConstMap am(a.data().data(), a.rows(), a.cols());
  ConstMap bm(b.data().data(), b.rows(), b.cols());
  MutMap om(out.data().data(), m, n);
  if (!ta && !tb) {
    om.noalias() = am * bm;
  } else if (ta && !tb) {
    om.noalias() = am.transpose() * bm;
  } else if (!ta && tb) {
    om.noalias() = am * bm.transpose();
  } else {
    om.noalias() = am.transpose() * bm.transpose();
  }
  return out;
}

// Leading extent (rows) and last extent of a rank-1 or rank-2 array.
std::pair<std::size_t, std::size_t> as_rows(Op op, const NumArray& a) {
  if (a.rank() == 1) return {1, a.shape()[0]};
  if (a.rank() == 2) return {a.shape()[0], a.shape()[1]};
  shape_error(op, a, "expects rank 1 or 2");
}

NumArray concat_values(std::span<const NumArray* const> parts) {
  if (parts.empty()) fail(ErrorCode::kContractViolation, "concat: no inputs");
  const NumArray& first = *parts[0];
  auto [rows, w0] = as_rows(Op::kConcat, first);
  (void)w0;
  std::size_t total = 0;
  for (const NumArray* p : parts) {
    if (p->rank() != first.rank()) shape_error(Op::kConcat, first, *p);
    auto [r, w] = as_rows(Op::kConcat, *p);
    if (r != rows) shape_error(Op::kConcat, first, *p);
    total += w;
  }
  Shape shape = first.shape();
  shape.back() = total;
  NumArray out(shape);
  std::size_t offset = 0;
  for (const NumArray* p : parts) {
    const std::size_t w = p->last_extent();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(p->data().begin() + r * w, w, out.data().begin() + r * total + offset);
    }
    offset += w;
  }
  return out;
}

NumArray slice_values(const NumArray& a, std::size_t begin, std::size_t end) {
  auto [rows, w] = as_rows(Op::kSlice, a);
  if (begin > end || end > w) {
    std::ostringstream os;
    os << "slice [" << begin << ", " << end << ") out of bounds";
    shape_error(Op::kSlice, a, os.str());
  }
  Shape shape = a.shape();
  shape.back() = end - begin;
  NumArray out(shape);
  const std::size_t ow = end - begin;
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().begin() + r * w + begin, ow, out.data().begin() + r * ow);
  }
  return out;
}

NumArray l2_norm_values(const NumArray& a) {
  auto [rows, w] = as_rows(Op::kL2Norm, a);
  NumArray out(a.rank() == 1 ? Shape{} : Shape{rows, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < w; ++c) {
      const double v = a[r * w + c];
      s += v * v;
    }
    out[r] = std::sqrt(s);
  }
  return out;
}

// Row-wise log-softmax of a [n, K] matrix.
NumArray log_softmax(const NumArray& logits) {
  const std::size_t n = logits.rows();
  const std::size_t k = logits.cols();
  NumArray out(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    auto row = logits.row(r);
    double mx = -INFINITY;
    for (double v : row) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : row) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < k; ++c) out.at(r, c) = row[c] - lse;
  }
  return out;
}

NumArray softmax_ce_values(const NumArray& logits, const NumArray& targets) {
  if (logits.rank() != 2) shape_error(Op::kSoftmaxCrossEntropy, logits, "expects rank 2");
  if (logits.shape() != targets.shape()) shape_error(Op::kSoftmaxCrossEntropy, logits, targets);
  const std::size_t n = logits.rows();
  if (n == 0) return NumArray::scalar(0.0);
  const NumArray ls = log_softmax(logits);
  double total = 0.0;
  for (std::size_t i = 0; i < ls.size(); ++i) total -= targets[i] * ls[i];
  return NumArray::scalar(total / static_cast<double>(n));
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "subtract";
    case Op::kMul: return "multiply";
    case Op::kScale: return "scale";
    case Op::kMatMul: return "matmul";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kLeakyRelu: return "leaky_relu";
    case Op::kMean: return "mean";
    case Op::kSum: return "sum";
    case Op::kL2Norm: return "l2_norm";
    case Op::kSquare: return "square";
    case Op::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
  }
  return "?";
}

NumArray evaluate_primitive(Op op, std::span<const NumArray* const> in, const OpAttrs& attrs) {
  NumArray out;
  switch (op) {
    case Op::kLeaf:
      fail(ErrorCode::kContractViolation, "leaf is not an operation");
    case Op::kAdd:
      expect_arity(op, in.size(), 2);
      out = elementwise(op, *in[0], *in[1], [](double x, double y) { return x + y; });
      break;
    case Op::kSub:
      expect_arity(op, in.size(), 2);
      out = elementwise(op, *in[0], *in[1], [](double x, double y) { return x - y; });
      break;
    case Op::kMul:
      expect_arity(op, in.size(), 2);
      out = elementwise(op, *in[0], *in[1], [](double x, double y) { return x * y; });
      break;
    case Op::kScale: {
      expect_arity(op, in.size(), 2);
      if (in[1]->rank() != 0) shape_error(op, *in[1], "scale factor must be rank 0");
      const double s = in[1]->item();
      out = NumArray(in[0]->shape());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*in[0])[i] * s;
      break;
    }
    case Op::kMatMul:
      expect_arity(op, in.size(), 2);
      out = matmul_values(*in[0], *in[1], attrs.transpose_a, attrs.transpose_b);
      break;
    case Op::kConcat:
      out = concat_values(in);
      break;
    case Op::kSlice:
      expect_arity(op, in.size(), 1);
      out = slice_values(*in[0], attrs.begin, attrs.end);
      break;
    case Op::kLeakyRelu: {
      expect_arity(op, in.size(), 1);
      if (!(attrs.slope > 0.0 && attrs.slope < 1.0)) {
        fail(ErrorCode::kContractViolation,
             "leaky_relu: slope must lie in (0, 1), got " + std::to_string(attrs.slope));
      }
      out = NumArray(in[0]->shape());
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = (*in[0])[i];
        out[i] = x >= 0.0 ? x : attrs.slope * x;
      }
      break;
    }
    case Op::kMean:
    case Op::kSum: {
      expect_arity(op, in.size(), 1);
      double s = 0.0;
      for (double v : in[0]->data()) s += v;
      if (op == Op::kMean) {
        if (in[0]->size() == 0) shape_error(op, *in[0], "mean of an empty array");
        s /= static_cast<double>(in[0]->size());
      }
      out = NumArray::scalar(s);
      break;
    }
    case Op::kL2Norm:
      expect_arity(op, in.size(), 1);
      out = l2_norm_values(*in[0]);
      break;
    case Op::kSquare:
      expect_arity(op, in.size(), 1);
      out = NumArray(in[0]->shape());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*in[0])[i] * (*in[0])[i];
      break;
    case Op::kSoftmaxCrossEntropy:
      expect_arity(op, in.size(), 2);
      out = softmax_ce_values(*in[0], *in[1]);
      break;
  }
  if (!out.all_finite()) {
    fail(ErrorCode::kNonFinite, std::string(op_name(op)) + ": non-finite result");
  }
  return out;
}

Var Tape::push(Node node) {
  node.detached = emitting_detached_;
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Tape::check(Var v) const {
  if (v.id >= nodes_.size()) {
    fail(ErrorCode::kContractViolation, "node " + std::to_string(v.id) + " is not on this tape");
  }
}

Var Tape::parameter(NumArray value) {
  if (!value.all_finite()) fail(ErrorCode::kNonFinite, "parameter leaf has non-finite entries");
  Node n;
  n.leaf_kind = LeafKind::kParameter;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(NumArray value) {
  if (!value.all_finite()) fail(ErrorCode::kNonFinite, "constant leaf has non-finite entries");
  Node n;
  n.leaf_kind = LeafKind::kConstant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::apply(Op op, std::span<const Var> inputs, const OpAttrs& attrs) {
  std::vector<const NumArray*> values;
  values.reserve(inputs.size());
  for (Var v : inputs) {
    check(v);
    values.push_back(&nodes_[v.id].value);
  }
  Node n;
  n.op = op;
  n.inputs.assign(inputs.begin(), inputs.end());
  n.attrs = attrs;
  n.value = evaluate_primitive(op, values, attrs);
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) { return apply(Op::kAdd, std::array{a, b}); }
Var Tape::sub(Var a, Var b) { return apply(Op::kSub, std::array{a, b}); }
Var Tape::mul(Var a, Var b) { return apply(Op::kMul, std::array{a, b}); }
Var Tape::scale(Var a, Var s) { return apply(Op::kScale, std::array{a, s}); }
Var Tape::scale(Var a, double s) { return scale(a, constant(NumArray::scalar(s))); }

Var Tape::matmul(Var a, Var b, bool transpose_a, bool transpose_b) {
  OpAttrs attrs;
  attrs.transpose_a = transpose_a;
  attrs.transpose_b = transpose_b;
  return apply(Op::kMatMul, std::array{a, b}, attrs);
}

Var Tape::concat(std::span<const Var> parts) { return apply(Op::kConcat, parts); }
Var Tape::concat(Var a, Var b) { return apply(Op::kConcat, std::array{a, b}); }

Var Tape::slice(Var a, std::size_t begin, std::size_t end) {
  OpAttrs attrs;
  attrs.begin = begin;
  attrs.end = end;
  return apply(Op::kSlice, std::array{a}, attrs);
}

Var Tape::leaky_relu(Var a, double slope) {
  OpAttrs attrs;
  attrs.slope = slope;
  return apply(Op::kLeakyRelu, std::array{a}, attrs);
}

Var Tape::mean(Var a) { return apply(Op::kMean, std::array{a}); }
Var Tape::sum(Var a) { return apply(Op::kSum, std::array{a}); }
Var Tape::l2_norm(Var a) { return apply(Op::kL2Norm, std::array{a}); }
Var Tape::square(Var a) { return apply(Op::kSquare, std::array{a}); }

Var Tape::softmax_cross_entropy(Var logits, Var targets) {
  return apply(Op::kSoftmaxCrossEntropy, std::array{logits, targets});
}

const NumArray& Tape::value(Var v) const {
  check(v);
  return nodes_[v.id].value;
}

const Node& Tape::node(Var v) const {
  check(v);
  return nodes_[v.id];
}

std::vector<NumArray> Tape::grad(Var output, std::span<const Var> wrt) {
  emitting_detached_ = true;
  std::vector<Var> vars;
  try {
    vars = backward(output, wrt, /*create_graph=*/false);
  } catch (...) {
    emitting_detached_ = false;
    throw;
  }
  emitting_detached_ = false;
  std::vector<NumArray> out;
  out.reserve(vars.size());
  for (Var v : vars) out.push_back(nodes_[v.id].value);
  return out;
}

std::vector<Var> Tape::grad_graph(Var output, std::span<const Var> wrt) {
  return backward(output, wrt, /*create_graph=*/true);
}

std::vector<Var> Tape::backward(Var output, std::span<const Var> wrt, bool create_graph) {
  check(output);
  if (nodes_[output.id].value.size() != 1) {
    fail(ErrorCode::kContractViolation,
         "grad: output must be scalar, got shape " +
             shape_string(nodes_[output.id].value.shape()));
  }
  const std::size_t limit = output.id + 1;
  std::vector<char> depends(limit, 0);
  for (Var w : wrt) {
    check(w);
    if (nodes_[w.id].op != Op::kLeaf) {
      fail(ErrorCode::kContractViolation, "grad: node " + std::to_string(w.id) + " is not a leaf");
    }
    if (w.id < limit) depends[w.id] = 1;
  }
  for (std::size_t i = 0; i < limit; ++i) {
    if (depends[i]) continue;
    for (Var in : nodes_[i].inputs) {
      if (depends[in.id]) {
        depends[i] = 1;
        break;
      }
    }
  }

  std::vector<std::optional<Var>> adjoint(limit);
  if (depends[output.id]) {
    adjoint[output.id] = constant(NumArray::filled(nodes_[output.id].value.shape(), 1.0));
  }
  auto accumulate = [&](Var target, Var contribution) {
    auto& slot = adjoint[target.id];
    slot = slot ? add(*slot, contribution) : contribution;
  };

  for (std::size_t idx = limit; idx-- > 0;) {
    if (!adjoint[idx] || !depends[idx] || nodes_[idx].op == Op::kLeaf) continue;
    if (nodes_[idx].detached) {
      fail(ErrorCode::kContractViolation,
           "grad: cannot differentiate through a first-order gradient node");
    }
    // Copy what we need: pushing nodes may reallocate nodes_.
    const Op op = nodes_[idx].op;
    const std::vector<Var> in = nodes_[idx].inputs;
    const OpAttrs attrs = nodes_[idx].attrs;
    const Var g = *adjoint[idx];
    auto needs = [&](std::size_t k) { return depends[in[k].id] != 0; };

    switch (op) {
      case Op::kLeaf:
        break;
      case Op::kAdd:
        if (needs(0)) accumulate(in[0], g);
        if (needs(1)) accumulate(in[1], g);
        break;
      case Op::kSub:
        if (needs(0)) accumulate(in[0], g);
        if (needs(1)) accumulate(in[1], scale(g, -1.0));
        break;
      case Op::kMul:
        if (needs(0)) accumulate(in[0], mul(g, in[1]));
        if (needs(1)) accumulate(in[1], mul(g, in[0]));
        break;
      case Op::kSquare:
        accumulate(in[0], mul(g, scale(in[0], 2.0)));
        break;
      case Op::kScale:
        if (needs(0)) accumulate(in[0], scale(g, in[1]));
        if (needs(1)) accumulate(in[1], sum(mul(g, in[0])));
        break;
      case Op::kMatMul: {
        const bool ta = attrs.transpose_a;
        const bool tb = attrs.transpose_b;
        if (needs(0)) {
          accumulate(in[0], ta ? matmul(in[1], g, tb, true) : matmul(g, in[1], false, !tb));
        }
        if (needs(1)) {
          accumulate(in[1], tb ? matmul(g, in[0], true, ta) : matmul(in[0], g, !ta, false));
        }
        break;
      }
      case Op::kConcat: {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < in.size(); ++k) {
          const std::size_t w = nodes_[in[k].id].value.last_extent();
          if (needs(k)) accumulate(in[k], slice(g, offset, offset + w));
          offset += w;
        }
        break;
      }
      case Op::kSlice: {
        const NumArray& src = nodes_[in[0].id].value;
        const std::size_t w = src.last_extent();
        std::vector<Var> parts;
        auto zeros = [&](std::size_t width) {
          Shape s = src.shape();
          s.back() = width;
          return constant(NumArray(s));
        };
        if (attrs.begin > 0) parts.push_back(zeros(attrs.begin));
        parts.push_back(g);
        if (attrs.end < w) parts.push_back(zeros(w - attrs.end));
        accumulate(in[0], parts.size() == 1 ? g : concat(parts));
        break;
      }
      case Op::kLeakyRelu: {
        // The kink at 0 takes the positive-side slope.
        const NumArray& x = nodes_[in[0].id].value;
        NumArray mask(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) mask[i] = x[i] >= 0.0 ? 1.0 : attrs.slope;
        accumulate(in[0], mul(g, constant(std::move(mask))));
        break;
      }
      case Op::kSum: {
        const Shape s = nodes_[in[0].id].value.shape();
        accumulate(in[0], scale(constant(NumArray::filled(s, 1.0)), g));
        break;
      }
      case Op::kMean: {
        const Shape s = nodes_[in[0].id].value.shape();
        const double inv = 1.0 / static_cast<double>(shape_size(s));
        accumulate(in[0], scale(constant(NumArray::filled(s, inv)), g));
        break;
      }
      case Op::kL2Norm: {
        if (create_graph) {
          fail(ErrorCode::kContractViolation, "l2_norm supports first-order gradients only");
        }
        const NumArray& x = nodes_[in[0].id].value;
        const NumArray& norm = nodes_[idx].value;
        // Zero rows take the subgradient 0.
        NumArray inv(norm.shape());
        for (std::size_t i = 0; i < norm.size(); ++i) inv[i] = norm[i] > 0.0 ? 1.0 / norm[i] : 0.0;
        const Var coef = mul(g, constant(std::move(inv)));
        if (x.rank() == 1) {
          accumulate(in[0], scale(in[0], coef));
        } else {
          const Var spread = matmul(coef, constant(NumArray::filled({1, x.cols()}, 1.0)));
          accumulate(in[0], mul(in[0], spread));
        }
        break;
      }
      case Op::kSoftmaxCrossEntropy: {
        if (create_graph) {
          fail(ErrorCode::kContractViolation,
               "softmax_cross_entropy supports first-order gradients only");
        }
        const NumArray& logits = nodes_[in[0].id].value;
        const NumArray& targets = nodes_[in[1].id].value;
        const std::size_t n = logits.rows();
        if (n == 0) break;
        const double inv_n = 1.0 / static_cast<double>(n);
        const NumArray ls = log_softmax(logits);
        if (needs(0)) {
          NumArray d(logits.shape());
          for (std::size_t r = 0; r < n; ++r) {
            double tsum = 0.0;
            for (std::size_t c = 0; c < logits.cols(); ++c) tsum += targets.at(r, c);
            for (std::size_t c = 0; c < logits.cols(); ++c) {
              d.at(r, c) = (std::exp(ls.at(r, c)) * tsum - targets.at(r, c)) * inv_n;
            }
          }
          accumulate(in[0], scale(constant(std::move(d)), g));
        }
        if (needs(1)) {
          NumArray d(ls.shape());
          for (std::size_t i = 0; i < ls.size(); ++i) d[i] = -ls[i] * inv_n;
          accumulate(in[1], scale(constant(std::move(d)), g));
        }
        break;
      }
    }
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (Var w : wrt) {
    if (w.id < limit && adjoint[w.id]) {
      result.push_back(*adjoint[w.id]);
    } else {
      result.push_back(constant(NumArray(nodes_[w.id].value.shape())));
    }
  }
  return result;
}

std::vector<NumArray> Tape::replay() const {
  std::vector<NumArray> values;
  values.reserve(nodes_.size());
  for (const Node& n : nodes_) {
    if (n.op == Op::kLeaf) {
      values.push_back(n.value);
      continue;
    }
    std::vector<const NumArray*> in;
    for (Var v : n.inputs) in.push_back(&values[v.id]);
    values.push_back(evaluate_primitive(n.op, in, n.attrs));
  }
  return values;
}

GradNormResult grad_of_gradnorm(Tape& tape, Var critic_output, Var input,
                                std::span<const Var> params) {
  const std::vector<Var> input_grad = tape.grad_graph(critic_output, std::array{input});
  Var g = input_grad[0];
  const bool vector_input = tape.value(g).rank() == 1;
  const Var norms = tape.l2_norm(g);
  GradNormResult result;
  result.norms = tape.value(norms);
  if (vector_input) result.norms = NumArray({1, 1}, {result.norms.item()});
  for (double v : result.norms.data()) {
    if (v == 0.0) ++result.zero_norm_rows;
  }
  result.param_grads = tape.grad(tape.sum(norms), params);
  return result;
}

}  // namespace wdis::ad
