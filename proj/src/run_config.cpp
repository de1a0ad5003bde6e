#include "wdis/run_config.hpp"

#include <algorithm>
#include <set>

#include "json.hpp"
#include "wdis/error.hpp"
#include "wdis/io.hpp"

namespace wdis {

using Json = nlohmann::ordered_json;

FactorSpec RunConfig::factor_spec() const {
  FactorSpec f;
  f.k_fg = model.k_fg;
  f.k_bg = model.k_bg;
  f.d_x = model.d_x;
  f.gamma = data.gamma;
  f.sigma = data.sigma;
  f.seed = seed;
  return f;
}

Pairing RunConfig::corr_pairing() const {
  Pairing pi = default_pairing(model.k_fg, model.k_bg);
  pi.resize(std::min(pi.size(), data.corr_pairs));
  return pi;
}

void RunConfig::resolve() {
  auto bad = [](const std::string& what) { fail(ErrorCode::kConfigInvalid, what); };
  train.model = model;
  train.seed = seed;
  probe.seed = seed;
  if (out_dir.empty()) bad("out_dir must not be empty");
  train.validate();
  factor_spec().validate();
  probe.validate();
  if (data.n_train == 0) bad("data.n_train must be positive");
  if (data.n_val == 0) bad("data.n_val must be positive");
  if (!(data.missing_bg_fraction >= 0.0 && data.missing_bg_fraction < 1.0)) {
    bad("data.missing_bg_fraction must lie in [0, 1)");
  }
  if (data.corr_pairs < 2 || data.corr_pairs > std::min(model.k_fg, model.k_bg)) {
    bad("data.corr_pairs must lie in [2, min(k_fg, k_bg)]");
  }
  if (!(guides.strength >= 0.0 && guides.strength <= 1.0)) bad("guides.strength must lie in [0, 1]");
  if (!(guides.scale_min >= kMinGuideScale && guides.scale_min <= guides.scale_max &&
        guides.scale_max <= kMaxGuideScale)) {
    bad("guides.scale_min/scale_max must satisfy 0.3 <= min <= max <= 0.5");
  }
  if (guides.backgrounds.empty()) bad("guides.backgrounds must not be empty");
  for (const auto& b : guides.backgrounds) {
    if (b.empty()) bad("guides.backgrounds entries must not be empty");
  }
  if (guides.parallelism == 0) bad("guides.parallelism must be positive");
  if (guides.max_attempts == 0) bad("guides.max_attempts must be positive");
  if (guides.backoff_ms < 0) bad("guides.backoff_ms must be >= 0");
  if (guides.timeout_ms <= 0) bad("guides.timeout_ms must be positive");
  if (eval.mi_anchors < 2) bad("eval.mi_anchors must be at least 2");
  if (eval.mi_samples < eval.mi_anchors) bad("eval.mi_samples must be at least eval.mi_anchors");
}

namespace {

// One JSON object whose keys are consumed by typed reads; leftovers are
// unknown keys.
class Section {
 public:
  Section(const Json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) invalid(name_.empty() ? "config" : name_, "must be an object");
  }

  void number(const char* key, double& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number()) invalid(field(key), "must be a number");
      out = v->get<double>();
    }
  }

  void count(const char* key, std::size_t& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number_unsigned()) invalid(field(key), "must be a non-negative integer");
      out = v->get<std::size_t>();
    }
  }

  void u64(const char* key, std::uint64_t& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number_unsigned()) invalid(field(key), "must be a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }

  void integer(const char* key, int& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number_integer()) invalid(field(key), "must be an integer");
      const auto x = v->get<std::int64_t>();
      if (x < -(1LL << 30) || x > (1LL << 30)) invalid(field(key), "is out of range");
      out = static_cast<int>(x);
    }
  }

  void text(const char* key, std::string& out) {
    if (const Json* v = find(key)) {
      if (!v->is_string()) invalid(field(key), "must be a string");
      out = v->get<std::string>();
    }
  }

  void counts(const char* key, std::vector<std::size_t>& out) {
    if (const Json* v = find(key)) {
      if (!v->is_array()) invalid(field(key), "must be an array");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number_unsigned()) invalid(field(key), "entries must be non-negative integers");
        out.push_back(e.get<std::size_t>());
      }
    }
  }

  void texts(const char* key, std::vector<std::string>& out) {
    if (const Json* v = find(key)) {
      if (!v->is_array()) invalid(field(key), "must be an array");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_string()) invalid(field(key), "entries must be strings");
        out.push_back(e.get<std::string>());
      }
    }
  }

  const Json* child(const char* key) { return find(key); }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) {
        fail(ErrorCode::kConfigUnknownKey,
             "unknown key: " + k + (name_.empty() ? "" : " in " + name_));
      }
    }
  }

 private:
  const Json* find(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string field(const char* key) const { return name_.empty() ? key : name_ + "." + key; }

  [[noreturn]] static void invalid(const std::string& field, const std::string& what) {
    fail(ErrorCode::kConfigInvalid, field + " " + what);
  }

  const Json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void read_model(const Json& j, ModelSpec& m) {
  Section s(j, "model");
  s.count("d_x", m.d_x);
  s.counts("trunk_widths", m.trunk_widths);
  s.count("d_z", m.d_z);
  s.count("split", m.split);
  s.counts("critic_widths", m.critic_widths);
  s.number("leaky_slope", m.leaky_slope);
  s.count("k_fg", m.k_fg);
  s.count("k_bg", m.k_bg);
  s.finish();
}

void read_train(const Json& j, TrainConfig& t) {
  Section s(j, "train");
  s.number("lambda", t.lambda);
  s.number("alpha", t.alpha);
  s.count("critic_ratio", t.critic_ratio);
  s.number("lr", t.adam.lr);
  s.number("critic_lr", t.critic_lr);
  s.number("beta1", t.adam.beta1);
  s.number("beta2", t.adam.beta2);
  s.number("eps", t.adam.eps);
  s.count("iterations", t.iterations);
  s.count("batch", t.batch);
  s.count("snapshot_interval", t.snapshot_interval);
  std::string objective(objective_name(t.objective));
  s.text("objective", objective);
  t.objective = parse_objective(objective);
  std::string mode(product_mode_name(t.product_mode));
  s.text("product_mode", mode);
  try {
    t.product_mode = parse_product_mode(mode);
  } catch (const Error&) {
    fail(ErrorCode::kConfigInvalid, "train.product_mode must be shuffle or independent");
  }
  s.finish();
}

void read_data(const Json& j, DataConfig& d) {
  Section s(j, "data");
  s.number("gamma", d.gamma);
  s.number("sigma", d.sigma);
  s.count("n_train", d.n_train);
  s.count("n_val", d.n_val);
  s.number("missing_bg_fraction", d.missing_bg_fraction);
  s.count("corr_pairs", d.corr_pairs);
  s.finish();
}

void read_probe(const Json& j, ProbeConfig& p) {
  Section s(j, "probe");
  s.number("lr", p.lr);
  s.count("steps", p.steps);
  s.count("batch", p.batch);
  s.number("beta1", p.beta1);
  s.number("beta2", p.beta2);
  s.number("eps", p.eps);
  s.finish();
}

void read_guides(const Json& j, GuideConfig& g) {
  Section s(j, "guides");
  s.number("strength", g.strength);
  s.number("scale_min", g.scale_min);
  s.number("scale_max", g.scale_max);
  s.texts("backgrounds", g.backgrounds);
  s.text("manifest", g.manifest);
  s.count("parallelism", g.parallelism);
  s.count("max_attempts", g.max_attempts);
  s.integer("backoff_ms", g.backoff_ms);
  s.integer("timeout_ms", g.timeout_ms);
  s.finish();
}

void read_eval(const Json& j, EvalConfig& e) {
  Section s(j, "eval");
  s.count("mi_anchors", e.mi_anchors);
  s.count("mi_samples", e.mi_samples);
  s.finish();
}

}  // namespace

RunConfig parse_config(std::string_view json_text) {
  Json j;
  try {
    j = Json::parse(json_text);
  } catch (const Json::parse_error& e) {
    fail(ErrorCode::kConfigInvalid, std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section top(j, "");
  top.u64("seed", c.seed);
  top.text("out_dir", c.out_dir);
  if (const Json* v = top.child("model")) read_model(*v, c.model);
  if (const Json* v = top.child("train")) read_train(*v, c.train);
  if (const Json* v = top.child("data")) read_data(*v, c.data);
  if (const Json* v = top.child("probe")) read_probe(*v, c.probe);
  if (const Json* v = top.child("guides")) read_guides(*v, c.guides);
  if (const Json* v = top.child("eval")) read_eval(*v, c.eval);
  top.finish();
  c.resolve();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_text(path, ErrorCode::kConfigInvalid));
}

std::string config_to_json(const RunConfig& c, int indent) {
  Json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  const ModelSpec& m = c.model;
  j["model"] = {{"d_x", m.d_x},
                {"trunk_widths", m.trunk_widths},
                {"d_z", m.d_z},
                {"split", m.split},
                {"critic_widths", m.critic_widths},
                {"leaky_slope", m.leaky_slope},
                {"k_fg", m.k_fg},
                {"k_bg", m.k_bg}};
  const TrainConfig& t = c.train;
  j["train"] = {{"lambda", t.lambda},
                {"alpha", t.alpha},
                {"critic_ratio", t.critic_ratio},
                {"lr", t.adam.lr},
                {"critic_lr", t.critic_lr},
                {"beta1", t.adam.beta1},
                {"beta2", t.adam.beta2},
                {"eps", t.adam.eps},
                {"iterations", t.iterations},
                {"batch", t.batch},
                {"snapshot_interval", t.snapshot_interval},
                {"objective", objective_name(t.objective)},
                {"product_mode", product_mode_name(t.product_mode)}};
  const DataConfig& d = c.data;
  j["data"] = {{"gamma", d.gamma},
               {"sigma", d.sigma},
               {"n_train", d.n_train},
               {"n_val", d.n_val},
               {"missing_bg_fraction", d.missing_bg_fraction},
               {"corr_pairs", d.corr_pairs}};
  const ProbeConfig& p = c.probe;
  j["probe"] = {{"lr", p.lr},       {"steps", p.steps}, {"batch", p.batch},
                {"beta1", p.beta1}, {"beta2", p.beta2}, {"eps", p.eps}};
  const GuideConfig& g = c.guides;
  j["guides"] = {{"strength", g.strength},
                 {"scale_min", g.scale_min},
                 {"scale_max", g.scale_max},
                 {"backgrounds", g.backgrounds},
                 {"manifest", g.manifest},
                 {"parallelism", g.parallelism},
                 {"max_attempts", g.max_attempts},
                 {"backoff_ms", g.backoff_ms},
                 {"timeout_ms", g.timeout_ms}};
  j["eval"] = {{"mi_anchors", c.eval.mi_anchors}, {"mi_samples", c.eval.mi_samples}};
  return j.dump(indent);
}

}  // namespace wdis
