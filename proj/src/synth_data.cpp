#include "wdis/synth_data.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <set>

#include "wdis/codec.hpp"
#include "wdis/error.hpp"
#include "wdis/io.hpp"

namespace wdis {

void FactorSpec::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::kConfigInvalid, what); };
  if (k_fg < 2 || k_bg < 2) bad("data: need at least 2 classes per factor");
  if (d_x == 0) bad("data.d_x must be positive");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) bad("data.sigma must be finite and >= 0");
  if (!std::isfinite(gamma)) bad("data.gamma must be finite");
}

namespace {

NumArray unit_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  NumArray m({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    double norm2 = 0.0;
    for (auto& v : m.row(r)) {
      v = rng.gaussian();
      norm2 += v * v;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (auto& v : m.row(r)) v *= inv;
  }
  return m;
}

}  // namespace

Factors build_factors(const FactorSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Factors f;
  f.spec = spec;
  f.u = unit_rows(spec.k_fg, spec.d_x, rng);
  f.v = unit_rows(spec.k_bg, spec.d_x, rng);
  const std::size_t k = spec.k_fg + spec.k_bg;
  Eigen::MatrixXd stacked(k, spec.d_x);
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < spec.d_x; ++c) {
      stacked(r, c) = r < spec.k_fg ? f.u.at(r, c) : f.v.at(r - spec.k_fg, c);
    }
  }
  f.identifiable = static_cast<std::size_t>(Eigen::FullPivLU<Eigen::MatrixXd>(stacked).rank()) == k;
  return f;
}

LabeledExample sample_example(const Factors& factors, std::uint32_t f, std::uint32_t b, Rng& rng) {
  const FactorSpec& s = factors.spec;
  if (f >= s.k_fg || b >= s.k_bg) {
    fail(ErrorCode::kContractViolation, "sample_example: labels (" + std::to_string(f) + ", " +
                                            std::to_string(b) + ") out of range");
  }
  LabeledExample ex;
  ex.fg = f;
  ex.bg = b;
  ex.x.resize(s.d_x);
  for (std::size_t c = 0; c < s.d_x; ++c) {
    const double uf = factors.u.at(f, c);
    const double vb = factors.v.at(b, c);
    ex.x[c] = uf + vb + s.gamma * (uf * vb) + s.sigma * rng.gaussian();
  }
  return ex;
}

std::vector<double> CorrelationSpec::fg_marginal() const {
  std::vector<double> m(k_fg, 0.0);
  for (std::size_t f = 0; f < k_fg; ++f) {
    for (std::size_t b = 0; b < k_bg; ++b) m[f] += at(f, b);
  }
  return m;
}

std::vector<double> CorrelationSpec::bg_marginal() const {
  std::vector<double> m(k_bg, 0.0);
  for (std::size_t f = 0; f < k_fg; ++f) {
    for (std::size_t b = 0; b < k_bg; ++b) m[b] += at(f, b);
  }
  return m;
}

void CorrelationSpec::validate() const {
  if (p.size() != k_fg * k_bg) fail(ErrorCode::kConfigInvalid, "correlation table has wrong size");
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      fail(ErrorCode::kConfigInvalid, "correlation table entries must be finite and >= 0");
    }
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9) {
    fail(ErrorCode::kConfigInvalid, "correlation table sums to " + std::to_string(s));
  }
}

Pairing default_pairing(std::size_t k_fg, std::size_t k_bg) {
  Pairing pi;
  for (std::size_t f = 0; f < std::min(k_fg, k_bg); ++f) {
    pi.emplace_back(static_cast<std::uint32_t>(f), static_cast<std::uint32_t>(f % k_bg));
  }
  return pi;
}

std::vector<std::uint32_t> pairing_domain(const Pairing& pi) {
  std::vector<std::uint32_t> dom;
  for (const auto& [f, b] : pi) dom.push_back(f);
  return dom;
}

namespace {

CorrelationSpec uniform_over(std::string name, std::size_t k_fg, std::size_t k_bg,
                             const std::vector<bool>& mask) {
  CorrelationSpec c{std::move(name), k_fg, k_bg, std::vector<double>(k_fg * k_bg, 0.0)};
  const auto count = static_cast<double>(std::count(mask.begin(), mask.end(), true));
  if (count == 0) fail(ErrorCode::kConfigInvalid, c.name + ": empty support");
  for (std::size_t i = 0; i < mask.size(); ++i) c.p[i] = mask[i] ? 1.0 / count : 0.0;
  return c;
}

void check_pairing(std::size_t k_fg, std::size_t k_bg, const Pairing& pi) {
  std::set<std::uint32_t> fs, bs;
  for (const auto& [f, b] : pi) {
    if (f >= k_fg || b >= k_bg) {
      fail(ErrorCode::kConfigInvalid, "pairing (" + std::to_string(f) + ", " +
                                          std::to_string(b) + ") is out of range");
    }
    if (!fs.insert(f).second) {
      fail(ErrorCode::kConfigInvalid, "pairing maps fg " + std::to_string(f) + " twice");
    }
    if (!bs.insert(b).second) {
      fail(ErrorCode::kConfigInvalid,
           "pairing is not injective: bg " + std::to_string(b) + " used twice");
    }
  }
  if (pi.empty()) fail(ErrorCode::kConfigInvalid, "pairing is empty");
}

}  // namespace

CorrelationSpec unbiased(std::size_t k_fg, std::size_t k_bg) {
  return uniform_over("unbiased", k_fg, k_bg, std::vector<bool>(k_fg * k_bg, true));
}

CorrelationSpec unbiased_on(std::size_t k_fg, std::size_t k_bg,
                            const std::vector<std::uint32_t>& fg_domain) {
  std::vector<bool> mask(k_fg * k_bg, false);
  for (auto f : fg_domain) {
    if (f >= k_fg) fail(ErrorCode::kConfigInvalid, "fg domain entry out of range");
    for (std::size_t b = 0; b < k_bg; ++b) mask[f * k_bg + b] = true;
  }
  return uniform_over("unbiased", k_fg, k_bg, mask);
}

CorrelationSpec correlated(std::size_t k_fg, std::size_t k_bg, const Pairing& pi) {
  check_pairing(k_fg, k_bg, pi);
  std::vector<bool> mask(k_fg * k_bg, false);
  for (const auto& [f, b] : pi) mask[f * k_bg + b] = true;
  return uniform_over("corr", k_fg, k_bg, mask);
}

CorrelationSpec anticorrelated(std::size_t k_fg, std::size_t k_bg, const Pairing& pi) {
  check_pairing(k_fg, k_bg, pi);
  std::vector<bool> mask(k_fg * k_bg, false);
  for (const auto& [f, b] : pi) {
    for (std::size_t bb = 0; bb < k_bg; ++bb) mask[f * k_bg + bb] = bb != b;
  }
  return uniform_over("anticorr", k_fg, k_bg, mask);
}

CorrelationSpec mixture(const CorrelationSpec& a, const CorrelationSpec& b, double w) {
  if (a.k_fg != b.k_fg || a.k_bg != b.k_bg) {
    fail(ErrorCode::kConfigInvalid, "mixture of tables with different class counts");
  }
  if (!(w >= 0.0 && w <= 1.0)) fail(ErrorCode::kConfigInvalid, "mixture weight outside [0, 1]");
  CorrelationSpec c{"mixture", a.k_fg, a.k_bg, std::vector<double>(a.p.size())};
  for (std::size_t i = 0; i < c.p.size(); ++i) c.p[i] = w * a.p[i] + (1.0 - w) * b.p[i];
  return c;
}

Dataset make_dataset(const Factors& factors, const CorrelationSpec& corr,
                     const DatasetOptions& options, Rng& rng) {
  corr.validate();
  if (options.n == 0) fail(ErrorCode::kConfigInvalid, "dataset size must be positive");
  if (corr.k_fg != factors.spec.k_fg || corr.k_bg != factors.spec.k_bg) {
    fail(ErrorCode::kConfigInvalid, "correlation table does not match the factor class counts");
  }
  if (!(options.missing_bg_fraction >= 0.0 && options.missing_bg_fraction <= 1.0)) {
    fail(ErrorCode::kConfigInvalid, "missing_bg_fraction must lie in [0, 1]");
  }
  std::vector<double> cdf(corr.p.size());
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < corr.p.size(); ++i) {
    acc += corr.p[i];
    cdf[i] = acc;
    if (corr.p[i] > 0.0) last_positive = i;
  }

  Dataset d;
  d.k_fg = corr.k_fg;
  d.k_bg = corr.k_bg;
  d.features = NumArray({options.n, factors.spec.d_x});
  d.fg.reserve(options.n);
  d.bg.reserve(options.n);
  for (std::size_t i = 0; i < options.n; ++i) {
    const double u = rng.uniform() * acc;
    std::size_t cell = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    if (cell >= cdf.size() || corr.p[cell] == 0.0) cell = last_positive;
    const auto f = static_cast<std::uint32_t>(cell / corr.k_bg);
    const auto b = static_cast<std::uint32_t>(cell % corr.k_bg);
    const LabeledExample ex = sample_example(factors, f, b, rng);
    std::copy(ex.x.begin(), ex.x.end(), d.features.row(i).begin());
    const bool withheld = rng.uniform() < options.missing_bg_fraction;
    d.fg.push_back(f);
    d.bg.push_back(withheld ? kMissingLabel : b);
  }
  return d;
}

BayesRates bayes_rates(const CorrelationSpec& corr) {
  corr.validate();
  BayesRates r;
  for (std::size_t f = 0; f < corr.k_fg; ++f) {
    double best = 0.0;
    for (std::size_t b = 0; b < corr.k_bg; ++b) best = std::max(best, corr.at(f, b));
    r.bg_from_fg += best;
  }
  for (std::size_t b = 0; b < corr.k_bg; ++b) {
    double best = 0.0;
    for (std::size_t f = 0; f < corr.k_fg; ++f) best = std::max(best, corr.at(f, b));
    r.fg_from_bg += best;
  }
  r.chance_fg = 1.0 / static_cast<double>(corr.k_fg);
  r.chance_bg = 1.0 / static_cast<double>(corr.k_bg);
  return r;
}

namespace {

constexpr std::string_view kDatasetMagic = "WDISDATA";
constexpr std::uint32_t kDatasetVersion = 1;

}  // namespace

std::vector<std::uint8_t> encode_dataset(const Dataset& data) {
  data.validate();
  std::vector<std::uint8_t> out;
  put_bytes(out, kDatasetMagic);
  put_u32(out, kDatasetVersion);
  put_u64(out, data.size());
  put_u64(out, data.features.cols());
  put_u64(out, data.k_fg);
  put_u64(out, data.k_bg);
  for (double v : data.features.data()) put_f64(out, v);
  for (auto l : data.fg) put_u32(out, l);
  for (auto l : data.bg) put_u32(out, l);
  const Digest d = sha256(out);
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  constexpr auto kCorrupt = ErrorCode::kDatasetCorrupt;
  if (bytes.size() < 32) fail(kCorrupt, "dataset file too short");
  const auto body = bytes.first(bytes.size() - 32);
  const Digest want = sha256(body);
  if (!std::equal(want.begin(), want.end(), bytes.end() - 32)) {
    fail(kCorrupt, "dataset checksum mismatch");
  }
  ByteReader r(body, kCorrupt);
  if (r.bytes(kDatasetMagic.size()) != kDatasetMagic) fail(kCorrupt, "not a dataset file");
  const auto version = r.u32();
  if (version != kDatasetVersion) {
    fail(kCorrupt, "unsupported dataset version " + std::to_string(version));
  }
  const auto n = r.u64();
  const auto d_x = r.u64();
  Dataset d;
  d.k_fg = r.u64();
  d.k_bg = r.u64();
  if (n > r.remaining() || d_x > r.remaining() || n * d_x * 8 + n * 8 != r.remaining()) {
    fail(kCorrupt, "dataset payload size does not match its header");
  }
  d.features = NumArray({n, d_x});
  for (auto& v : d.features.data()) v = r.f64();
  d.fg.resize(n);
  d.bg.resize(n);
  for (auto& l : d.fg) l = r.u32();
  for (auto& l : d.bg) l = r.u32();
  d.validate();
  return d;
}

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
  write_file_atomic(path, encode_dataset(data));
}

Dataset read_dataset(const std::filesystem::path& path) {
  return decode_dataset(read_file(path, ErrorCode::kDatasetNotFound));
}

std::string generation_digest(const FactorSpec& spec, const CorrelationSpec& corr,
                              const DatasetOptions& options, std::uint64_t seed) {
  Sha256 h;
  h.update_u64(spec.k_fg);
  h.update_u64(spec.k_bg);
  h.update_u64(spec.d_x);
  h.update_f64(spec.gamma);
  h.update_f64(spec.sigma);
  h.update_u64(spec.seed);
  h.update(corr.name);
  for (double v : corr.p) h.update_f64(v);
  h.update_u64(options.n);
  h.update_f64(options.missing_bg_fraction);
  h.update_u64(seed);
  const Digest d = h.finish();
  return to_hex(d);
}

}  // namespace wdis
