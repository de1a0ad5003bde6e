#include "wdis/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"
#include "wdis/checkpoint.hpp"
#include "wdis/codec.hpp"
#include "wdis/guide_pipeline.hpp"
#include "wdis/io.hpp"
#include "wdis/ot_oracle.hpp"
#include "wdis/probe_eval.hpp"

namespace wdis {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

fs::path RunPaths::split(std::string_view name) const {
  return data_dir() / (std::string(name) + ".bin");
}

fs::path RunPaths::train_dir(Objective objective) const {
  return root / "train" / std::string(objective_name(objective));
}

fs::path RunPaths::checkpoint(Objective objective) const {
  return train_dir(objective) / "model.ckpt";
}

fs::path RunPaths::metrics(Objective objective) const {
  return train_dir(objective) / "metrics.jsonl";
}

fs::path RunPaths::timing(std::string_view command) const {
  return root / "timings" / (std::string(command) + ".json");
}

Splits generate_splits(const RunConfig& c) {
  const Factors f = build_factors(c.factor_spec());
  const std::size_t kf = c.model.k_fg, kb = c.model.k_bg;
  const Pairing pi = c.corr_pairing();
  Rng root(c.seed ^ 0x3C6EF372FE94F82BULL);
  Rng r_train = root.split(), r_val = root.split(), r_ctrain = root.split(),
      r_cval = root.split(), r_aval = root.split(), r_uval = root.split();
  const std::size_t nt = c.data.n_train, nv = c.data.n_val;
  Splits s;
  s.train = make_dataset(f, unbiased(kf, kb), {nt, c.data.missing_bg_fraction}, r_train);
  s.val = make_dataset(f, unbiased(kf, kb), {nv, 0.0}, r_val);
  s.corr_train = make_dataset(f, correlated(kf, kb, pi), {nt, 0.0}, r_ctrain);
  s.corr_val = make_dataset(f, correlated(kf, kb, pi), {nv, 0.0}, r_cval);
  s.anticorr_val = make_dataset(f, anticorrelated(kf, kb, pi), {nv, 0.0}, r_aval);
  s.unbiased_val = make_dataset(f, unbiased_on(kf, kb, pairing_domain(pi)), {nv, 0.0}, r_uval);
  return s;
}

Dataset mi_eval_set(const RunConfig& c) {
  Rng rng(c.seed ^ 0x1F83D9ABFB41BD6BULL);
  return make_dataset(build_factors(c.factor_spec()), unbiased(c.model.k_fg, c.model.k_bg),
                      {c.eval.mi_samples, 0.0}, rng);
}

MiReport measure_mi(const ParamStore& params, const RunConfig& c, const Dataset& d) {
  const PartitionedFeatures z = extract(params, c.model, d.features);
  const std::size_t m = c.eval.mi_anchors;
  return {binned_mi(z.z_fg, d.bg, c.model.k_bg, m), binned_mi(z.z_bg, d.fg, c.model.k_fg, m)};
}

std::vector<std::pair<DiscreteDistribution, DiscreteDistribution>> oracle_pairs(
    const ModelSpec& spec, std::uint64_t seed, std::size_t count, std::size_t points) {
  const std::size_t width = spec.fg_dim(), classes = critic_label_classes(spec, CriticId::kFg);
  Rng rng(seed ^ 0xA54FF53A5F1D36F1ULL);
  auto cloud = [&](double shift) {
    NumArray a({points, width + classes});
    for (std::size_t r = 0; r < points; ++r) {
      for (std::size_t c = 0; c < width; ++c) a.at(r, c) = 0.2 * rng.gaussian() + shift;
      a.at(r, width + rng.uniform_int(classes)) = 1.0;
    }
    return DiscreteDistribution::uniform(std::move(a));
  };
  std::vector<std::pair<DiscreteDistribution, DiscreteDistribution>> out;
  for (std::size_t i = 0; i < count; ++i) {
    const double shift = 0.05 * static_cast<double>(i + 1);
    DiscreteDistribution p = cloud(0.0);
    DiscreteDistribution q = cloud(shift);
    out.emplace_back(std::move(p), std::move(q));
  }
  return out;
}

std::vector<DualCheckRow> dual_checks(const RunConfig& config, std::size_t steps) {
  std::vector<DualCheckRow> rows;
  const auto pairs = oracle_pairs(config.model, config.seed);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& [p, q] = pairs[i];
    const CriticFit fit = fit_critic(config.model, CriticId::kFg, p.points, q.points,
                                     config.train.lambda, steps, config.train.adam,
                                     config.seed + i);
    const DualGap g = dual_gap(fit.params, config.model, CriticId::kFg, p, q);
    rows.push_back({g.exact, g.dual, std::abs(g.dual - g.exact) / g.exact, g.max_lipschitz});
  }
  return rows;
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"gen-data",       "train", "probe",
                                                 "corr-exp",       "oracle-check",
                                                 "compose-guides", "report"};
  return names;
}

std::string error_json(ErrorCode code, const std::string& message) {
  Json j;
  j["error"] = {{"code", error_code_name(code)}, {"message", message}};
  return j.dump();
}

namespace {

// Resolved config without out_dir.
Json config_json(const RunConfig& c) {
  Json j = Json::parse(config_to_json(c, -1));
  j.erase("out_dir");
  return j;
}

Json breakdown_json(const LossBreakdown& b) {
  Json j;
  j["total"] = b.total;
  if (b.kind == LossKind::kCritic) {
    j["w_fg"] = b.w_fg;
    j["w_bg"] = b.w_bg;
    j["gp_fg"] = b.gp_fg;
    j["gp_bg"] = b.gp_bg;
    j["zero_norm_rows"] = b.zero_norm_rows;
  } else {
    j["w_fg"] = b.w_fg;
    j["w_bg"] = b.w_bg;
    j["ce_fg"] = b.ce_fg;
    j["ce_bg"] = b.ce_bg;
  }
  return j;
}

Json accuracy_json(const Accuracy& a) {
  Json j;
  j["top1"] = a.top1;
  if (a.top5 >= 0.0) j["top5"] = a.top5;
  j["n"] = a.n;
  return j;
}

void write_json(const fs::path& path, const Json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

Json read_json(const fs::path& path, ErrorCode missing) {
  const std::string text = read_text(path, missing);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    fail(ErrorCode::kIo, path.string() + ": " + e.what());
  }
}

Dataset load_split(const RunConfig& c, const fs::path& dir, std::string_view name) {
  const fs::path path = dir / (std::string(name) + ".bin");
  Dataset d;
  try {
    d = read_dataset(path);
  } catch (const Error& e) {
    fail(e.code(), path.string() + ": " + e.what());
  }
  if (d.k_fg != c.model.k_fg || d.k_bg != c.model.k_bg || d.features.cols() != c.model.d_x) {
    fail(ErrorCode::kConfigInvalid, path.string() + " was generated for a different model shape");
  }
  return d;
}

void check_layout(const ParamStore& params, const ModelSpec& spec, const fs::path& from) {
  const ParamStore ref = init_params(spec, 0);
  bool ok = ref.names() == params.names();
  for (std::size_t k = 0; ok && k < ref.size(); ++k) {
    ok = ref.get(ref.names()[k]).shape() == params.get(ref.names()[k]).shape();
  }
  if (!ok) {
    fail(ErrorCode::kConfigInvalid, from.string() + " does not match the configured model");
  }
}

ParamStore load_params(const RunConfig& c, const fs::path& path) {
  Checkpoint ck = load_checkpoint(path);
  check_layout(ck.params, c.model, path);
  return std::move(ck.params);
}

struct Context {
  const CommandOptions& opt;
  const RunConfig& config;
  RunPaths paths;
  fs::path data_dir;
  Json summary;
};

void cmd_gen_data(Context& ctx) {
  const RunConfig& c = ctx.config;
  const Splits s = generate_splits(c);
  const Dataset* sets[] = {&s.train,    &s.val,          &s.corr_train,
                           &s.corr_val, &s.anticorr_val, &s.unbiased_val};
  Json manifest;
  manifest["config"] = config_json(c);
  manifest["identifiable"] = build_factors(c.factor_spec()).identifiable;
  Json splits = Json::object();
  for (std::size_t k = 0; k < split_names().size(); ++k) {
    const auto bytes = encode_dataset(*sets[k]);
    write_file_atomic(ctx.data_dir / (split_names()[k] + ".bin"), bytes);
    splits[split_names()[k]] = {{"n", sets[k]->size()}, {"sha256", to_hex(sha256(bytes))}};
  }
  manifest["splits"] = splits;
  write_json(ctx.data_dir / "manifest.json", manifest);
  ctx.summary["data_dir"] = ctx.data_dir.string();
  ctx.summary["splits"] = splits;
}

void cmd_train(Context& ctx) {
  const RunConfig& c = ctx.config;
  const Objective objective = c.train.objective;
  const Dataset train = load_split(c, ctx.data_dir, "train");
  std::optional<TrainState> resume;
  if (ctx.opt.resume) {
    const Checkpoint ck = load_checkpoint(*ctx.opt.resume);
    check_layout(ck.params, c.model, *ctx.opt.resume);
    if (!ck.resume) {
      fail(ErrorCode::kCheckpointCorrupt, ctx.opt.resume->string() + " has no training state");
    }
    resume = ck.to_state();
  }
  std::ostringstream lines;
  Json header;
  header["type"] = "config";
  header["config"] = config_json(c);
  lines << header.dump() << "\n";
  const TrainResult r = run_training(c.train, train, resume, [&](const MetricsRecord& m) {
    Json j;
    j["type"] = m.final ? "final" : "snapshot";
    j["iteration"] = m.iteration;
    if (objective == Objective::kDisentangle) j["critic"] = breakdown_json(m.critic);
    j["extractor"] = breakdown_json(m.extractor);
    lines << j.dump() << "\n";
  });
  write_text_atomic(ctx.paths.metrics(objective), lines.str());
  save_checkpoint(ctx.paths.checkpoint(objective),
                  Checkpoint::from_state(config_json(c).dump(), r.state));
  ctx.summary["objective"] = objective_name(objective);
  ctx.summary["iterations"] = r.state.iteration;
  ctx.summary["checkpoint"] = ctx.paths.checkpoint(objective).string();
  ctx.summary["param_digest"] = r.state.params.digest();
  if (r.aborted) fail(ErrorCode::kTrainingDiverged, r.abort_reason);
  ctx.summary["final"] = {{"extractor", breakdown_json(r.history.back().extractor)}};
}

Json mi_json(const ParamStore& params, const RunConfig& c, const Dataset& d) {
  const MiReport r = measure_mi(params, c, d);
  return {{"z_fg_l_bg", r.z_fg_l_bg}, {"z_bg_l_fg", r.z_bg_l_fg}};
}

void cmd_probe(Context& ctx) {
  const RunConfig& c = ctx.config;
  const fs::path ck = ctx.opt.checkpoint.value_or(ctx.paths.checkpoint(Objective::kDisentangle));
  const ParamStore params = load_params(c, ck);
  const Dataset train = load_split(c, ctx.data_dir, "train");
  const Dataset val = load_split(c, ctx.data_dir, "val");
  const ProbeGrid g = probe_grid(params, c.model, train, val, c.probe);
  Json report;
  report["config"] = config_json(c);
  report["param_digest"] = params.digest();
  report["probe_grid"] = {{"fg_from_fg", accuracy_json(g.fg_from_fg.eval)},
                          {"fg_from_bg", accuracy_json(g.fg_from_bg.eval)},
                          {"bg_from_bg", accuracy_json(g.bg_from_bg.eval)},
                          {"bg_from_fg", accuracy_json(g.bg_from_fg.eval)}};
  const Dataset mi_set = mi_eval_set(c);
  Json mi = mi_json(params, c, mi_set);
  mi["anchors"] = c.eval.mi_anchors;
  mi["samples"] = c.eval.mi_samples;
  const fs::path base = ctx.paths.checkpoint(Objective::kBaseline);
  if (!ctx.opt.checkpoint && fs::exists(base)) {
    const Json b = mi_json(load_params(c, base), c, mi_set);
    mi["baseline_z_fg_l_bg"] = b["z_fg_l_bg"];
    const double ours = mi["z_fg_l_bg"].get<double>();
    mi["baseline_ratio"] = ours > 0.0 ? Json(b["z_fg_l_bg"].get<double>() / ours) : Json(nullptr);
  }
  report["mi"] = mi;
  write_json(ctx.paths.probe_report(), report);
  ctx.summary["probe_grid"] = report["probe_grid"];
  ctx.summary["mi"] = mi;
}

std::string csv_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", 100.0 * v);
  return buf;
}

void cmd_corr(Context& ctx) {
  const RunConfig& c = ctx.config;
  const ParamStore dis = load_params(c, ctx.paths.checkpoint(Objective::kDisentangle));
  const ParamStore base = load_params(c, ctx.paths.checkpoint(Objective::kBaseline));
  CorrSplits splits{load_split(c, ctx.data_dir, "corr_train"),
                    load_split(c, ctx.data_dir, "corr_val"),
                    load_split(c, ctx.data_dir, "anticorr_val"),
                    load_split(c, ctx.data_dir, "unbiased_val")};
  const auto rows = corr_experiment(dis, base, c.model, splits, c.probe);
  std::string csv = "variant,corr_fg,anticorr_fg,corr_bg,anticorr_bg,unbiased_fg,average\n";
  Json jrows = Json::array();
  for (const auto& r : rows) {
    csv += r.variant + "," + csv_number(r.corr_fg) + "," + csv_number(r.anticorr_fg) + "," +
           csv_number(r.corr_bg) + "," + csv_number(r.anticorr_bg) + "," +
           csv_number(r.unbiased_fg) + "," + csv_number(r.average) + "\n";
    jrows.push_back({{"variant", r.variant},
                     {"corr_fg", r.corr_fg},
                     {"anticorr_fg", r.anticorr_fg},
                     {"corr_bg", r.corr_bg},
                     {"anticorr_bg", r.anticorr_bg},
                     {"unbiased_fg", r.unbiased_fg},
                     {"average", r.average}});
  }
  write_text_atomic(ctx.paths.corr_csv(), csv);
  Json report;
  report["config"] = config_json(c);
  report["rows"] = jrows;
  write_json(ctx.paths.corr_json(), report);
  ctx.summary["rows"] = jrows;
}

void cmd_oracle(Context& ctx) {
  const RunConfig& c = ctx.config;
  Json rows = Json::array();
  bool within = true, weak = true;
  for (const auto& r : dual_checks(c)) {
    const bool w = r.max_lipschitz > 1.0 || r.dual <= r.exact + 1e-6;
    within = within && r.rel_error < 0.15;
    weak = weak && w;
    rows.push_back({{"exact", r.exact},
                    {"dual", r.dual},
                    {"rel_error", r.rel_error},
                    {"max_lipschitz", r.max_lipschitz},
                    {"weak_duality", w}});
  }
  Json report;
  report["config"] = config_json(c);
  report["pairs"] = rows;
  report["all_within_15pct"] = within;
  report["weak_duality_holds"] = weak;
  write_json(ctx.paths.oracle_report(), report);
  ctx.summary["pairs"] = rows;
  ctx.summary["all_within_15pct"] = within;
  ctx.summary["weak_duality_holds"] = weak;
}

bool safe_id(const std::string& id) {
  return !id.empty() && id[0] != '.' && std::all_of(id.begin(), id.end(), [](char ch) {
    return std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.';
  });
}

std::unique_ptr<Backend> make_backend(const std::string& spec, const GuideConfig& g) {
  if (spec == "identity") return std::make_unique<IdentityBackend>();
  if (spec.starts_with("remote:")) {
    RemoteOptions o = parse_backend_url(spec.substr(7));
    o.timeout_ms = g.timeout_ms;
    return std::make_unique<RemoteBackend>(o);
  }
  fail(ErrorCode::kUsage, "--backend must be identity or remote:<url>, got " + spec);
}

void cmd_guides(Context& ctx) {
  const RunConfig& c = ctx.config;
  const GuideConfig& g = c.guides;
  if (g.manifest.empty()) {
    fail(ErrorCode::kConfigInvalid, "guides.manifest is required for compose-guides");
  }
  const fs::path manifest_path = g.manifest;
  const Json manifest = read_json(manifest_path, ErrorCode::kConfigInvalid);
  if (!manifest.is_object() || !manifest.contains("items") || !manifest["items"].is_array()) {
    fail(ErrorCode::kConfigInvalid, manifest_path.string() + ": expected {\"items\": [...]}");
  }
  const fs::path base = manifest_path.parent_path();
  auto field = [&](const Json& item, const char* key) {
    if (!item.is_object() || !item.contains(key) || !item[key].is_string()) {
      fail(ErrorCode::kConfigInvalid, manifest_path.string() + ": item lacks string field " + key);
    }
    return item[key].get<std::string>();
  };
  std::map<std::string, RGBImage> image_cache;
  auto image = [&](const std::string& rel) -> const RGBImage& {
    auto it = image_cache.find(rel);
    if (it == image_cache.end()) it = image_cache.emplace(rel, read_p6(base / rel)).first;
    return it->second;
  };
  Rng root(c.seed ^ 0x510E527FADE682D1ULL);
  std::vector<BackendRequest> requests;
  std::vector<Rect> rects;
  std::map<std::string, std::size_t> seen;
  for (const auto& item : manifest["items"]) {
    for (const auto& [k, v] : item.items()) {
      static const std::vector<std::string> allowed = {"id", "fg", "definition", "bg",
                                                       "fg_image", "bg_template"};
      if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
        fail(ErrorCode::kConfigUnknownKey, "unknown key: " + k + " in " + manifest_path.string());
      }
    }
    BackendRequest req;
    req.request_id = field(item, "id");
    if (!safe_id(req.request_id)) {
      fail(ErrorCode::kConfigInvalid, "item id must use [A-Za-z0-9._-]: " + req.request_id);
    }
    if (!seen.emplace(req.request_id, requests.size()).second) {
      fail(ErrorCode::kConfigInvalid, "duplicate item id " + req.request_id);
    }
    req.prompt = build_prompt({field(item, "fg"), field(item, "definition"), field(item, "bg")},
                              g.backgrounds);
    Rng rng = root.split();
    const double scale = rng.uniform(g.scale_min, g.scale_max);
    ComposedGuide composed =
        compose_guide(image(field(item, "fg_image")), image(field(item, "bg_template")), scale, rng);
    req.guide = std::move(composed.image);
    req.strength = g.strength;
    req.seed = rng.next_u64();
    rects.push_back(composed.rect);
    requests.push_back(std::move(req));
  }
  for (const auto& r : requests) write_p6(ctx.paths.guides_dir() / (r.request_id + ".guide.ppm"), r.guide);
  const auto backend = make_backend(ctx.opt.backend, g);
  const auto results = generate_all(requests, *backend, g.parallelism,
                                    RetryPolicy{g.max_attempts, g.backoff_ms});
  Json header;
  header["type"] = "config";
  header["config"] = config_json(c);
  std::string prov = header.dump() + "\n";
  for (const auto& gen : results) {
    const std::string& id = gen.provenance.request_id;
    write_p6(ctx.paths.guides_dir() / (id + ".out.ppm"), gen.image);
    Json line = Json::parse(provenance_json(gen.provenance));
    const Rect& r = rects[seen.at(id)];
    line["rect"] = {r.x, r.y, r.width, r.height};
    prov += line.dump() + "\n";
  }
  write_text_atomic(ctx.paths.guides_dir() / "provenance.jsonl", prov);
  ctx.summary["generated"] = results.size();
  ctx.summary["backend"] = backend->name();
}

Json training_summary(const fs::path& metrics) {
  std::istringstream in(read_text(metrics, ErrorCode::kIo));
  std::string line;
  Json out;
  std::size_t snapshots = 0;
  double min_w = INFINITY;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const Json j = Json::parse(line);
    if (j["type"] == "snapshot") {
      ++snapshots;
      if (j.contains("critic")) {
        min_w = std::min({min_w, j["critic"]["w_fg"].get<double>(), j["critic"]["w_bg"].get<double>()});
      }
    } else if (j["type"] == "final") {
      out["final"] = j;
    }
  }
  out["snapshots"] = snapshots;
  out["min_critic_wasserstein"] = std::isfinite(min_w) ? Json(min_w) : Json(nullptr);
  return out;
}

void cmd_report(Context& ctx) {
  const RunConfig& c = ctx.config;
  Json report;
  report["config"] = config_json(c);
  Json training = Json::object();
  for (Objective o : {Objective::kDisentangle, Objective::kBaseline}) {
    if (fs::exists(ctx.paths.metrics(o))) {
      training[std::string(objective_name(o))] = training_summary(ctx.paths.metrics(o));
    }
  }
  report["training"] = training;
  const Json probe = read_json(ctx.paths.probe_report(), ErrorCode::kIo);
  report["probe_grid"] = probe.at("probe_grid");
  report["mi"] = probe.at("mi");
  report["corr"] = fs::exists(ctx.paths.corr_json())
                       ? read_json(ctx.paths.corr_json(), ErrorCode::kIo).at("rows")
                       : Json(nullptr);
  report["oracle"] = fs::exists(ctx.paths.oracle_report())
                         ? read_json(ctx.paths.oracle_report(), ErrorCode::kIo)
                         : Json(nullptr);
  if (report["oracle"].is_object()) report["oracle"].erase("config");
  write_json(ctx.paths.report(), report);
  ctx.summary["report"] = ctx.paths.report().string();
  ctx.summary["probe_grid"] = report["probe_grid"];
}

}  // namespace

void run_command(const CommandOptions& options, std::ostream& out) {
  static const std::map<std::string, std::function<void(Context&)>> table = {
      {"gen-data", cmd_gen_data}, {"train", cmd_train},
      {"probe", cmd_probe},       {"corr-exp", cmd_corr},
      {"oracle-check", cmd_oracle}, {"compose-guides", cmd_guides},
      {"report", cmd_report}};
  const auto it = table.find(options.name);
  if (it == table.end()) fail(ErrorCode::kUsage, "unknown subcommand: " + options.name);
  RunConfig config = options.config;
  config.resolve();
  Context ctx{options, config, RunPaths{config.out_dir}, {}, Json::object()};
  ctx.data_dir = options.data_dir.value_or(ctx.paths.data_dir());
  ctx.summary["command"] = options.name;
  const auto t0 = std::chrono::steady_clock::now();
  it->second(ctx);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_json(ctx.paths.timing(options.name), {{"command", options.name}, {"wall_seconds", wall}});
  ctx.summary["status"] = "ok";
  out << ctx.summary.dump() << "\n";
}

}  // namespace wdis
