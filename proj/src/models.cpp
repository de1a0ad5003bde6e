#include "wdis/models.hpp"

#include <cmath>

#include "wdis/codec.hpp"
#include "wdis/error.hpp"
#include "wdis/rng.hpp"

namespace wdis {

using ad::Tape;
using ad::Var;

void ModelSpec::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::kConfigInvalid, what); };
  if (d_x == 0) bad("model.d_x must be positive");
  if (d_z == 0) bad("model.d_z must be positive");
  for (auto w : trunk_widths) {
    if (w == 0) bad("model.trunk_widths entries must be positive");
  }
  for (auto w : critic_widths) {
    if (w == 0) bad("model.critic_widths entries must be positive");
  }
  if (split == 0 || split >= d_z) {
    bad("model.split must satisfy 0 < split < d_z (split=" + std::to_string(split) +
        ", d_z=" + std::to_string(d_z) + ")");
  }
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) bad("model.leaky_slope must lie in (0, 1)");
  if (k_fg < 2) bad("model.k_fg must be at least 2");
  if (k_bg < 2) bad("model.k_bg must be at least 2");
}

std::string_view critic_prefix(CriticId id) {
  return id == CriticId::kFg ? "critic_fg." : "critic_bg.";
}

std::string_view head_prefix(HeadId id) { return id == HeadId::kFg ? "head_fg." : "head_bg."; }

std::size_t critic_label_classes(const ModelSpec& spec, CriticId id) {
  return id == CriticId::kFg ? spec.k_bg : spec.k_fg;
}

std::size_t critic_input_dim(const ModelSpec& spec, CriticId id) {
  const std::size_t feat = id == CriticId::kFg ? spec.fg_dim() : spec.bg_dim();
  return feat + critic_label_classes(spec, id);
}

// ---------------------------------------------------------------------------
// ParamStore

std::size_t ParamStore::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    fail(ErrorCode::kContractViolation, "unknown parameter: " + std::string(name));
  }
  return it->second;
}

void ParamStore::add(std::string name, NumArray value) {
  if (index_.count(name)) fail(ErrorCode::kContractViolation, "duplicate parameter: " + name);
  index_.emplace(name, names_.size());
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
}

bool ParamStore::contains(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

const NumArray& ParamStore::get(std::string_view name) const { return values_[index_of(name)]; }

void ParamStore::set(std::string_view name, NumArray value) {
  NumArray& slot = values_[index_of(name)];
  if (slot.shape() != value.shape()) {
    fail(ErrorCode::kContractViolation, "parameter " + std::string(name) + " has shape " +
                                            shape_string(slot.shape()) + ", cannot assign " +
                                            shape_string(value.shape()));
  }
  slot = std::move(value);
  ++version_;
}

NumArray& ParamStore::mutable_value(std::string_view name) { return values_[index_of(name)]; }

std::vector<std::string> ParamStore::names_with_prefix(std::string_view prefix) const {
  std::vector<std::string> out;
  for (const auto& n : names_) {
    if (n.starts_with(prefix)) out.push_back(n);
  }
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

std::string ParamStore::digest() const {
  Sha256 h;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    h.update_u64(names_[i].size());
    h.update(names_[i]);
    h.update_u64(values_[i].rank());
    for (auto e : values_[i].shape()) h.update_u64(e);
    for (double v : values_[i].data()) h.update_f64(v);
  }
  const Digest d = h.finish();
  return to_hex(d);
}

bool operator==(const ParamStore& a, const ParamStore& b) {
  return a.names_ == b.names_ && a.values_ == b.values_;
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

void add_mlp(ParamStore& store, Rng& rng, const std::string& prefix, std::size_t in,
             const std::vector<std::size_t>& hidden, std::size_t out, double slope) {
  std::vector<std::size_t> dims = {in};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  for (std::size_t layer = 0; layer + 1 < dims.size(); ++layer) {
    const std::size_t fan_in = dims[layer];
    const double bound = std::sqrt(6.0 / ((1.0 + slope * slope) * static_cast<double>(fan_in)));
    NumArray w({fan_in, dims[layer + 1]});
    for (auto& v : w.data()) v = rng.uniform(-bound, bound);
    const std::string base = prefix + std::to_string(layer);
    store.add(base + ".weight", std::move(w));
    store.add(base + ".bias", NumArray({1, dims[layer + 1]}));
  }
}

void add_head(ParamStore& store, Rng& rng, const std::string& prefix, std::size_t classes,
              std::size_t features) {
  const double bound = std::sqrt(3.0 / static_cast<double>(features));
  NumArray w({classes, features});
  for (auto& v : w.data()) v = rng.uniform(-bound, bound);
  store.add(prefix + "weight", std::move(w));
  store.add(prefix + "bias", NumArray({1, classes}));
}

std::size_t layer_count(const BoundParams& p, std::string_view prefix) {
  std::size_t n = 0;
  for (const auto& [name, var] : p.entries()) {
    if (name.starts_with(prefix) && name.ends_with(".weight")) ++n;
  }
  return n;
}

Var mlp_forward(Tape& tape, const BoundParams& p, std::string_view prefix, Var x, double slope) {
  const std::size_t layers = layer_count(p, prefix);
  if (layers == 0) {
    fail(ErrorCode::kContractViolation, "no parameters bound under " + std::string(prefix));
  }
  Var h = x;
  for (std::size_t layer = 0; layer < layers; ++layer) {
    const std::string base = std::string(prefix) + std::to_string(layer);
    h = dense(tape, h, p[base + ".weight"], p[base + ".bias"]);
    if (layer + 1 < layers) h = tape.leaky_relu(h, slope);
  }
  return h;
}

void check_width(const NumArray& x, std::size_t want, const char* what) {
  if (x.rank() != 2 || x.cols() != want) {
    fail(ErrorCode::kContractViolation, std::string(what) + ": expected width " +
                                            std::to_string(want) + ", got shape " +
                                            shape_string(x.shape()));
  }
}

}  // namespace

ParamStore init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ParamStore store;
  add_mlp(store, rng, "extractor.", spec.d_x, spec.trunk_widths, spec.d_z, spec.leaky_slope);
  add_head(store, rng, "head_fg.", spec.k_fg, spec.fg_dim());
  add_head(store, rng, "head_bg.", spec.k_bg, spec.bg_dim());
  add_mlp(store, rng, "critic_fg.", critic_input_dim(spec, CriticId::kFg), spec.critic_widths, 1,
          spec.leaky_slope);
  add_mlp(store, rng, "critic_bg.", critic_input_dim(spec, CriticId::kBg), spec.critic_widths, 1,
          spec.leaky_slope);
  return store;
}

// ---------------------------------------------------------------------------
// Tape forward passes

void BoundParams::bind(Tape& tape, const ParamStore& store, std::string_view prefix,
                       ad::LeafKind kind) {
  for (const auto& name : store.names_with_prefix(prefix)) {
    const NumArray& v = store.get(name);
    entries_.emplace_back(name, kind == ad::LeafKind::kParameter ? tape.parameter(v)
                                                                 : tape.constant(v));
  }
}

Var BoundParams::operator[](std::string_view name) const {
  for (const auto& [n, v] : entries_) {
    if (n == name) return v;
  }
  fail(ErrorCode::kContractViolation, "parameter not bound: " + std::string(name));
}

std::vector<Var> BoundParams::vars() const {
  std::vector<Var> out;
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

std::vector<std::string> BoundParams::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.first);
  return out;
}

Var dense(Tape& tape, Var x, Var w, Var b) {
  const std::size_t n = tape.value(x).rows();
  const Var ones = tape.constant(NumArray::filled({n, 1}, 1.0));
  return tape.add(tape.matmul(x, w), tape.matmul(ones, b));
}

Var extractor_forward(Tape& tape, const BoundParams& p, const ModelSpec& spec, Var x) {
  check_width(tape.value(x), spec.d_x, "extractor input");
  return mlp_forward(tape, p, "extractor.", x, spec.leaky_slope);
}

Var head_forward(Tape& tape, const BoundParams& p, HeadId head, Var z) {
  const std::string prefix(head_prefix(head));
  const Var w = p[prefix + "weight"];
  check_width(tape.value(z), tape.value(w).cols(), "head input");
  const std::size_t n = tape.value(z).rows();
  const Var ones = tape.constant(NumArray::filled({n, 1}, 1.0));
  return tape.add(tape.matmul(z, w, false, true), tape.matmul(ones, p[prefix + "bias"]));
}

Var critic_forward(Tape& tape, const BoundParams& p, const ModelSpec& spec, CriticId id,
                   Var input) {
  check_width(tape.value(input), critic_input_dim(spec, id), "critic input");
  return mlp_forward(tape, p, critic_prefix(id), input, spec.leaky_slope);
}

// ---------------------------------------------------------------------------
// Value-level helpers

NumArray extract_full(const ParamStore& params, const ModelSpec& spec, const NumArray& x) {
  check_width(x, spec.d_x, "extract");
  Tape tape;
  BoundParams p;
  p.bind(tape, params, "extractor.", ad::LeafKind::kConstant);
  return tape.value(extractor_forward(tape, p, spec, tape.constant(x)));
}

PartitionedFeatures extract(const ParamStore& params, const ModelSpec& spec, const NumArray& x) {
  check_width(x, spec.d_x, "extract");
  Tape tape;
  BoundParams p;
  p.bind(tape, params, "extractor.", ad::LeafKind::kConstant);
  const Var z = extractor_forward(tape, p, spec, tape.constant(x));
  return {tape.value(tape.slice(z, 0, spec.split)), tape.value(tape.slice(z, spec.split, spec.d_z))};
}

NumArray head_logits(const ParamStore& params, HeadId head, const NumArray& z) {
  Tape tape;
  BoundParams p;
  p.bind(tape, params, head_prefix(head), ad::LeafKind::kConstant);
  return tape.value(head_forward(tape, p, head, tape.constant(z)));
}

void check_simplex_rows(const NumArray& labels, double tol) {
  for (std::size_t r = 0; r < labels.rows(); ++r) {
    double s = 0.0;
    for (double v : labels.row(r)) {
      if (v < -tol || v > 1.0 + tol) {
        fail(ErrorCode::kContractViolation,
             "label row " + std::to_string(r) + " has an entry outside [0, 1]");
      }
      s += v;
    }
    if (std::abs(s - 1.0) > tol) {
      fail(ErrorCode::kContractViolation, "label row " + std::to_string(r) + " sums to " +
                                              std::to_string(s) + ", not 1");
    }
  }
}

std::vector<double> critic_score_joint(const ParamStore& params, const ModelSpec& spec,
                                       CriticId id, const NumArray& inputs) {
  Tape tape;
  BoundParams p;
  p.bind(tape, params, critic_prefix(id), ad::LeafKind::kConstant);
  const NumArray& out = tape.value(critic_forward(tape, p, spec, id, tape.constant(inputs)));
  return std::vector<double>(out.data().begin(), out.data().end());
}

std::vector<double> critic_score(const ParamStore& params, const ModelSpec& spec, CriticId id,
                                 const NumArray& features, const NumArray& labels) {
  if (features.rows() != labels.rows()) {
    fail(ErrorCode::kContractViolation, "critic_score: feature rows " +
                                            shape_string(features.shape()) + " vs label rows " +
                                            shape_string(labels.shape()));
  }
  check_width(labels, critic_label_classes(spec, id), "critic label");
  check_simplex_rows(labels);
  Tape tape;
  const Var joint = tape.concat(tape.constant(features), tape.constant(labels));
  BoundParams p;
  p.bind(tape, params, critic_prefix(id), ad::LeafKind::kConstant);
  const NumArray& out = tape.value(critic_forward(tape, p, spec, id, joint));
  return std::vector<double>(out.data().begin(), out.data().end());
}

}  // namespace wdis
