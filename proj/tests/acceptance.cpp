// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "test_support.hpp"
#include "wdis/checkpoint.hpp"
#include "wdis/commands.hpp"
#include "wdis/guide_pipeline.hpp"
#include "wdis/io.hpp"
#include "wdis/objectives.hpp"
#include "wdis/ot_oracle.hpp"
#include "wdis/probe_eval.hpp"
#include "wdis/sampling.hpp"

namespace wdis {
namespace {

using testing::random_array;

// Pinned tolerances.
constexpr double kFdStep = 1e-5;
constexpr double kGradTol = 1e-4;
constexpr double kPenaltyTol = 1e-3;
constexpr double kRelFloor = 1e-6;
constexpr double kGradSeconds = 30.0;

constexpr std::size_t kDualSteps = 2000;
constexpr double kDualTol = 0.15;
constexpr double kWeakDualitySlack = 1e-6;
constexpr double kOracleSeconds = 120.0;

constexpr double kSameFactorMin = 0.90;
constexpr double kFgLeakMax = 1.0 / 16 + 0.10;
constexpr double kBgLeakMax = 1.0 / 8 + 0.15;
constexpr double kMiRatioMin = 5.0;
constexpr double kCorrGapMin = 0.20;
constexpr double kTrainSeconds = 600.0;
constexpr double kSnapshotWMin = -0.05;
constexpr double kCeDropMin = 0.5;

constexpr double kChiSquareP = 0.01;
constexpr double kResumeTol = 1e-12;

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += (ok ? "" : "FAILED ") + what;
  }
};

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Random small architecture with every parameter perturbed off its init.
ModelSpec random_spec(Rng& rng) {
  ModelSpec s;
  s.d_x = 2 + rng.uniform_int(4);
  s.trunk_widths.resize(1 + rng.uniform_int(2));
  for (auto& w : s.trunk_widths) w = 2 + rng.uniform_int(5);
  s.d_z = 2 + rng.uniform_int(4);
  s.split = 1 + rng.uniform_int(s.d_z - 1);
  s.critic_widths.resize(1 + rng.uniform_int(2));
  for (auto& w : s.critic_widths) w = 2 + rng.uniform_int(5);
  s.k_fg = 2 + rng.uniform_int(3);
  s.k_bg = 2 + rng.uniform_int(2);
  return s;
}

ParamStore random_params(const ModelSpec& s, Rng& rng) {
  ParamStore p = init_params(s, rng.next_u64());
  for (const auto& name : p.names()) {
    NumArray v = p.get(name);
    const NumArray noise = random_array(v.shape(), rng, 0.3);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += noise[i];
    p.set(name, std::move(v));
  }
  return p;
}

std::vector<std::uint32_t> labels(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::uint32_t> out(n);
  for (auto& l : out) l = static_cast<std::uint32_t>(rng.uniform_int(k));
  return out;
}

std::vector<NumArray> fd_over(const ParamStore& p, const std::vector<std::string>& names,
                              const std::function<double(const ParamStore&)>& f) {
  std::vector<NumArray> at;
  for (const auto& n : names) at.push_back(p.get(n));
  return testing::central_differences(
      [&](const std::vector<NumArray>& vals) {
        ParamStore q = p;
        for (std::size_t i = 0; i < vals.size(); ++i) q.set(names[i], vals[i]);
        return f(q);
      },
      at, kFdStep);
}

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1001);
  double worst_net = 0.0, worst_pen = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const ModelSpec s = random_spec(rng);
    const ParamStore p = random_params(s, rng);
    const std::size_t n = 5;

    ExtractorInputs in;
    in.x = random_array({n, s.d_x}, rng, 2.0);
    in.fg = labels(n, s.k_fg, rng);
    in.bg = labels(n, s.k_bg, rng);
    in.fg_product = one_hot(labels(n, s.k_fg, rng), s.k_fg);
    in.bg_product = one_hot(labels(n, s.k_bg, rng), s.k_bg);
    const ExtractorLoss l = extractor_loss(p, s, in, 1.0, Objective::kDisentangle);
    const auto fd = fd_over(p, l.names, [&](const ParamStore& q) {
      return extractor_loss(q, s, in, 1.0, Objective::kDisentangle).breakdown.total;
    });
    worst_net = std::max(worst_net, testing::max_rel_error(l.grads, fd, kRelFloor));

    // Identical joint and product batches: the loss is lambda * penalty exactly.
    const CriticId id = trial % 2 ? CriticId::kBg : CriticId::kFg;
    const std::size_t width =
        (id == CriticId::kFg ? s.fg_dim() : s.bg_dim()) + critic_label_classes(s, id);
    const NumArray joint = random_array({n, width}, rng, 2.0);
    const NumArray interp = random_array({n, width}, rng, 2.0);
    const CriticLoss c = critic_loss_inputs(p, s, id, joint, joint, interp, 10.0);
    const auto fd_pen = fd_over(p, c.names, [&](const ParamStore& q) {
      return 10.0 * critic_loss_inputs(q, s, id, joint, joint, interp, 10.0).penalty;
    });
    worst_pen = std::max(worst_pen, testing::max_rel_error(c.grads, fd_pen, kRelFloor));
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.check(worst_net < kGradTol, fmt("20 networks, worst rel err %.2e (< %.0e)", worst_net, kGradTol));
  o.check(worst_pen < kPenaltyTol,
          fmt("penalty derivative worst rel err %.2e (< %.0e)", worst_pen, kPenaltyTol));
  o.check(secs < kGradSeconds, fmt("%.1f s (< %.0f s)", secs, kGradSeconds));
  return o;
}

Outcome dual_vs_exact() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig c;
  c.resolve();
  Outcome o;
  double worst = 0.0;
  bool weak = true;
  for (const auto& r : dual_checks(c, kDualSteps)) {
    worst = std::max(worst, r.rel_error);
    if (r.max_lipschitz <= 1.0 && r.dual > r.exact + kWeakDualitySlack) weak = false;
  }
  o.check(worst < kDualTol, fmt("5 pairs, worst dual rel err %.3f (< %.2f)", worst, kDualTol));
  o.check(weak, "weak duality where Lipschitz ratio <= 1");

  Rng rng(2002);
  std::size_t cases = 0, agree = 0;
  for (std::size_t n = 1; n <= 6; ++n) {
    for (int trial = 0; trial < 20; ++trial) {
      const NumArray p = random_array({n, 3}, rng, 2.0);
      const NumArray q = random_array({n, 3}, rng, 2.0);
      ++cases;
      if (testing::brute_force_assignment_w1(p, q) ==
          exact_w1(DiscreteDistribution::uniform(p), DiscreteDistribution::uniform(q))) {
        ++agree;
      }
    }
  }
  o.check(agree == cases, fmt("assignment oracle equals flow solver on %zu/%zu cases", agree, cases));
  const double secs = seconds_since(t0);
  o.check(secs < kOracleSeconds, fmt("%.1f s (< %.0f s)", secs, kOracleSeconds));
  return o;
}

struct SeedRun {
  ProbeGrid grid;
  MiReport mi_dis, mi_base;
  std::vector<CorrRow> corr;
  double train_seconds = 0.0;
  double probe_seconds = 0.0;
  double corr_seconds = 0.0;
  bool aborted = false;
  double min_snapshot_w = 0.0;
  double final_ce_fg = 0.0;
};

// Default configuration, one seed: both extractors, the probe grid, MI on the
// dedicated draw and the spurious-correlation probes.
SeedRun run_seed(std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  c.resolve();
  SeedRun out;
  auto t0 = std::chrono::steady_clock::now();
  const Splits sp = generate_splits(c);
  const TrainResult dis = run_training(c.train, sp.train);
  TrainConfig base_cfg = c.train;
  base_cfg.objective = Objective::kBaseline;
  const TrainResult base = run_training(base_cfg, sp.train);
  out.aborted = dis.aborted || base.aborted;
  out.min_snapshot_w = INFINITY;
  for (const auto& m : dis.history) {
    if (!m.final) out.min_snapshot_w = std::min({out.min_snapshot_w, m.critic.w_fg, m.critic.w_bg});
  }
  out.final_ce_fg = dis.history.back().extractor.ce_fg;
  out.train_seconds = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  out.grid = probe_grid(dis.state.params, c.model, sp.train, sp.val, c.probe);
  const Dataset mi_set = mi_eval_set(c);
  out.mi_dis = measure_mi(dis.state.params, c, mi_set);
  out.mi_base = measure_mi(base.state.params, c, mi_set);
  out.probe_seconds = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  out.corr = corr_experiment(dis.state.params, base.state.params, c.model,
                             {sp.corr_train, sp.corr_val, sp.anticorr_val, sp.unbiased_val},
                             c.probe);
  out.corr_seconds = seconds_since(t0);
  return out;
}

const std::vector<SeedRun>& seed_runs() {
  static const std::vector<SeedRun> runs = [] {
    std::vector<SeedRun> r;
    for (std::uint64_t s = 0; s < 3; ++s) {
      r.push_back(run_seed(s));
      std::fprintf(stderr, "  seed %llu trained in %.1f s\n", static_cast<unsigned long long>(s),
                   r.back().train_seconds);
    }
    return r;
  }();
  return runs;
}

Outcome disentanglement() {
  Outcome o;
  double secs = 0.0;
  for (std::size_t s = 0; s < seed_runs().size(); ++s) {
    const SeedRun& r = seed_runs()[s];
    const auto& g = r.grid;
    const double ratio = r.mi_base.z_fg_l_bg / r.mi_dis.z_fg_l_bg;
    o.check(!r.aborted, fmt("seed %zu trained without abort", s));
    o.check(r.min_snapshot_w >= kSnapshotWMin && r.final_ce_fg <= kCeDropMin * std::log(16.0),
            fmt("seed %zu min snapshot W %.3f (>= %.2f), final fg CE %.3f (<= %.2f ln 16)", s,
                r.min_snapshot_w, kSnapshotWMin, r.final_ce_fg, kCeDropMin));
    o.check(g.fg_from_fg.eval.top1 >= kSameFactorMin && g.bg_from_bg.eval.top1 >= kSameFactorMin &&
                g.fg_from_bg.eval.top1 <= kFgLeakMax && g.bg_from_fg.eval.top1 <= kBgLeakMax,
            fmt("seed %zu fg|fg %.3f bg|bg %.3f fg|bg %.3f bg|fg %.3f", s, g.fg_from_fg.eval.top1,
                g.bg_from_bg.eval.top1, g.fg_from_bg.eval.top1, g.bg_from_fg.eval.top1));
    o.check(ratio >= kMiRatioMin, fmt("seed %zu MI(z_fg;l_bg) %.4f vs baseline %.4f, ratio %.1f", s,
                                      r.mi_dis.z_fg_l_bg, r.mi_base.z_fg_l_bg, ratio));
    secs += r.train_seconds + r.probe_seconds;
  }
  o.check(secs < kTrainSeconds, fmt("%.0f s (< %.0f s)", secs, kTrainSeconds));
  return o;
}

Outcome spurious_correlation() {
  Outcome o;
  double secs = 0.0;
  for (std::size_t s = 0; s < seed_runs().size(); ++s) {
    const SeedRun& r = seed_runs()[s];
    const CorrRow& correct = r.corr.at(0);
    const CorrRow& all = r.corr.at(1);
    const CorrRow& base = r.corr.at(2);
    const double fg_gap = correct.anticorr_fg - all.anticorr_fg;
    const double bg_gap = correct.anticorr_bg - base.anticorr_bg;
    o.check(fg_gap >= kCorrGapMin && bg_gap >= kCorrGapMin,
            fmt("seed %zu anticorr fg %.1f vs all %.1f, bg %.1f vs baseline %.1f", s,
                100 * correct.anticorr_fg, 100 * all.anticorr_fg, 100 * correct.anticorr_bg,
                100 * base.anticorr_bg));
    secs += r.train_seconds + r.corr_seconds;
  }
  o.check(secs < kTrainSeconds, fmt("%.0f s including shared training (< %.0f s)", secs, kTrainSeconds));
  return o;
}

Outcome sampler_laws() {
  Outcome o;
  Rng rng(5005);
  bool multisets = true;
  for (int call = 0; call < 2000; ++call) {
    const std::size_t n = 1 + rng.uniform_int(64), k = 1 + rng.uniform_int(8);
    const JointBatch joint = make_joint(random_array({n, 3}, rng), one_hot(labels(n, k, rng), k));
    const JointBatch prod = shuffle_to_product(joint, rng);
    std::multiset<std::vector<double>> a, b;
    for (std::size_t r = 0; r < n; ++r) {
      a.emplace(joint.labels.row(r).begin(), joint.labels.row(r).end());
      b.emplace(prod.labels.row(r).begin(), prod.labels.row(r).end());
    }
    multisets = multisets && a == b && prod.features == joint.features;
  }
  o.check(multisets, "label multiset kept on 2000/2000 shuffles");

  // 4 distinct labels: 24 permutations, 1000 expected per cell.
  const std::uint32_t four[] = {0, 1, 2, 3};
  const NumArray l = one_hot(four, 4);
  std::map<std::vector<std::size_t>, double> perm_counts;
  const std::size_t perm_trials = 24000;
  for (std::size_t t = 0; t < perm_trials; ++t) {
    const NumArray s = shuffle_labels(l, rng);
    std::vector<std::size_t> key;
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 4; ++c) {
        if (s.at(r, c) == 1.0) key.push_back(c);
      }
    }
    perm_counts[key] += 1.0;
  }
  std::vector<double> obs, exp;
  for (const auto& [key, c] : perm_counts) obs.push_back(c);
  obs.resize(24, 0.0);
  exp.assign(24, perm_trials / 24.0);
  const double p_perm = testing::chi_square_p_value(obs, exp, 23);
  o.check(perm_counts.size() == 24 && p_perm > kChiSquareP,
          fmt("permutation chi-square p %.3f over %zu shuffles", p_perm, perm_trials));

  // Unbiased joint over 16 x 8 cells, 1000 expected per cell.
  const std::size_t n = 128000;
  Rng data_rng(5006);
  const Dataset d = make_dataset(build_factors(FactorSpec{}), unbiased(16, 8), {n, 0.0}, data_rng);
  std::vector<double> cells(128, 0.0), expected(128, n / 128.0);
  for (std::size_t i = 0; i < n; ++i) cells[d.fg[i] * 8 + d.bg[i]] += 1.0;
  const double p_joint = testing::chi_square_p_value(cells, expected, 127);
  o.check(p_joint > kChiSquareP, fmt("unbiased joint chi-square p %.3f over %zu draws", p_joint, n));
  return o;
}

RGBImage random_image(std::size_t w, std::size_t h, Rng& rng) {
  RGBImage img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(256));
  return img;
}

Outcome guide_exactness() {
  Outcome o;
  const std::string otter = build_prompt(
      {"otter", "freshwater carnivorous mammal having webbed and clawed feet and dark brown fur",
       "in a cave"});
  const std::string thatch =
      build_prompt({"thatch", "a house roof made with a plant material (as straw)", "in snow"});
  o.check(otter ==
                  "a photo of a otter, freshwater carnivorous mammal having webbed and clawed feet "
                  "and dark brown fur, in a cave" &&
              thatch ==
                  "a photo of a thatch, a house roof made with a plant material (as straw), in snow",
          "both reference prompts reproduced");

  Rng rng(6006);
  bool outside = true, identity = true, p6 = true, wire = true;
  IdentityBackend backend;
  for (int trial = 0; trial < 50; ++trial) {
    const RGBImage bg = random_image(16 + rng.uniform_int(40), 16 + rng.uniform_int(40), rng);
    const std::size_t fw = 4 + rng.uniform_int(60);
    const RGBImage fg = random_image(fw, fw / 2 + rng.uniform_int(fw), rng);
    const double scale = rng.uniform(kMinGuideScale, kMaxGuideScale);
    const ComposedGuide g = compose_guide(fg, bg, scale, rng);
    const Rect& r = g.rect;
    for (std::size_t y = 0; y < bg.height; ++y) {
      for (std::size_t x = 0; x < bg.width; ++x) {
        if (x >= r.x && x < r.x + r.width && y >= r.y && y < r.y + r.height) continue;
        outside = outside && std::equal(bg.at(x, y), bg.at(x, y) + 3, g.image.at(x, y));
      }
    }
    BackendRequest req;
    req.request_id = "r" + std::to_string(trial);
    req.prompt = otter;
    req.guide = g.image;
    req.seed = rng.next_u64();
    identity = identity && generate(req, backend).image == g.image;

    const auto bytes = encode_p6(g.image);
    p6 = p6 && decode_p6(bytes) == g.image && encode_p6(decode_p6(bytes)) == bytes;
    const std::string body = encode_request_json(req);
    const BackendRequest back = decode_request_json(body);
    const std::string resp = encode_response_json(g.image);
    wire = wire && encode_request_json(back) == body && back.guide == req.guide &&
           back.prompt == req.prompt && back.seed == req.seed &&
           decode_response_json(resp) == g.image &&
           encode_response_json(decode_response_json(resp)) == resp;
  }
  o.check(outside, "off-rectangle pixels equal the template on 50 composites");
  o.check(identity, "identity backend returns the guide");
  o.check(p6, "P6 round trip");
  o.check(wire, "wire request/response round trip");
  return o;
}

Outcome determinism() {
  Outcome o;
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "wdis_acceptance_determinism";
  fs::remove_all(root);
  RunConfig c;
  c.seed = 7;
  c.train.iterations = 200;
  c.train.snapshot_interval = 20;
  c.data.n_train = 4000;
  c.data.n_val = 1000;
  std::string metrics[2];
  std::ostringstream sink;
  for (int k = 0; k < 2; ++k) {
    CommandOptions opt;
    opt.config = c;
    opt.config.out_dir = (root / std::to_string(k)).string();
    for (const char* cmd : {"gen-data", "train"}) {
      opt.name = cmd;
      run_command(opt, sink);
    }
    metrics[k] = read_text(RunPaths{opt.config.out_dir}.metrics(Objective::kDisentangle), ErrorCode::kIo);
  }
  o.check(!metrics[0].empty() && metrics[0] == metrics[1],
          fmt("metrics.jsonl byte-identical across two runs (%zu bytes)", metrics[0].size()));

  c.resolve();
  const Dataset data = read_dataset(RunPaths{(root / "0").string()}.split("train"));
  TrainConfig half = c.train;
  half.iterations = 100;
  half.snapshot_interval = 1;
  const TrainResult first = run_training(half, data);
  const Checkpoint ck = Checkpoint::from_state(config_to_json(c, -1), first.state);
  const auto bytes = encode_checkpoint(ck);
  const fs::path path = root / "half.ckpt";
  save_checkpoint(path, ck);
  const Checkpoint loaded = load_checkpoint(path);
  o.check(encode_checkpoint(loaded) == bytes && loaded.to_state() == first.state,
          "checkpoint round trip bit-exact");

  TrainConfig full = half;
  full.iterations = 101;
  const TrainResult unbroken = run_training(full, data);
  const TrainResult resumed = run_training(full, data, loaded.to_state());
  auto step = [](const TrainResult& r) {
    for (const auto& m : r.history) {
      if (!m.final && m.iteration == 101) return m;
    }
    fail(ErrorCode::kContractViolation, "no record for iteration 101");
  };
  const MetricsRecord a = step(unbroken), b = step(resumed);
  const double diff = std::max(std::abs(a.extractor.total - b.extractor.total),
                               std::abs(a.critic.total - b.critic.total));
  o.check(diff <= kResumeTol, fmt("resumed next-step loss differs by %.1e (<= %.0e)", diff, kResumeTol));
  fs::remove_all(root);
  return o;
}

}  // namespace
}  // namespace wdis

int main(int argc, char** argv) {
  using namespace wdis;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradients},
      {"dual vs exact transport", dual_vs_exact},
      {"disentanglement direction", disentanglement},
      {"spurious-correlation robustness", spurious_correlation},
      {"sampler laws", sampler_laws},
      {"guide pipeline exactness", guide_exactness},
      {"determinism and persistence", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  bool all = true;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o.check(false, std::string("threw: ") + e.what());
    }
    all = all && o.pass;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[k].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
