#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "wdis/dataset.hpp"
#include "wdis/num_array.hpp"
#include "wdis/rng.hpp"

namespace wdis {

struct FactorSpec {
  std::size_t k_fg = 16;
  std::size_t k_bg = 8;
  std::size_t d_x = 32;
  double gamma = 0.5;
  double sigma = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

// Class dictionaries: U holds one unit row per foreground class, V one per
// background class.
struct Factors {
  FactorSpec spec;
  NumArray u;  // [k_fg, d_x]
  NumArray v;  // [k_bg, d_x]
  // Rows of U and V together are linearly independent, so a noiseless
  // additive observation identifies its (fg, bg) pair.
  bool identifiable = false;
};

Factors build_factors(const FactorSpec& spec);

struct LabeledExample {
  std::vector<double> x;
  std::uint32_t fg = 0;
  std::uint32_t bg = 0;
};

// x = U[f] + V[b] + gamma (U[f] * V[b]) + sigma * noise.
LabeledExample sample_example(const Factors& factors, std::uint32_t f, std::uint32_t b, Rng& rng);

// Joint probability table over (fg, bg), row-major [k_fg][k_bg].
struct CorrelationSpec {
  std::string name;
  std::size_t k_fg = 0;
  std::size_t k_bg = 0;
  std::vector<double> p;

  double at(std::size_t f, std::size_t b) const { return p[f * k_bg + b]; }
  bool in_support(std::size_t f, std::size_t b) const { return at(f, b) > 0.0; }
  std::vector<double> fg_marginal() const;
  std::vector<double> bg_marginal() const;
  void validate() const;
};

// (fg, bg) pairs of an injective foreground-to-background map.
using Pairing = std::vector<std::pair<std::uint32_t, std::uint32_t>>;

// f -> f for the first min(k_fg, k_bg) foreground classes.
Pairing default_pairing(std::size_t k_fg, std::size_t k_bg);

// Uniform over every (f, b), or over `fg_domain` x all backgrounds.
CorrelationSpec unbiased(std::size_t k_fg, std::size_t k_bg);
CorrelationSpec unbiased_on(std::size_t k_fg, std::size_t k_bg,
                            const std::vector<std::uint32_t>& fg_domain);
// Uniform over the pairs of `pi`. Rejects maps that are not injective.
CorrelationSpec correlated(std::size_t k_fg, std::size_t k_bg, const Pairing& pi);
// Uniform over dom(pi) x backgrounds minus the pairs of `pi`.
CorrelationSpec anticorrelated(std::size_t k_fg, std::size_t k_bg, const Pairing& pi);
// w * a + (1 - w) * b.
CorrelationSpec mixture(const CorrelationSpec& a, const CorrelationSpec& b, double w);
std::vector<std::uint32_t> pairing_domain(const Pairing& pi);

struct DatasetOptions {
  std::size_t n = 0;
  double missing_bg_fraction = 0.0;
};

// Pairs drawn i.i.d. from the table by inverse CDF, then observations.
Dataset make_dataset(const Factors& factors, const CorrelationSpec& corr,
                     const DatasetOptions& options, Rng& rng);

// Best accuracies achievable from the labels alone.
struct BayesRates {
  double bg_from_fg = 0.0;  // sum_f max_b P(f, b)
  double fg_from_bg = 0.0;  // sum_b max_f P(f, b)
  double chance_fg = 0.0;
  double chance_bg = 0.0;
};

BayesRates bayes_rates(const CorrelationSpec& corr);

// Columnar little-endian file with a SHA-256 trailer. Read errors surface as
// kDatasetNotFound or kDatasetCorrupt.
void write_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_dataset(const Dataset& data);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);

// Hex SHA-256 of the generation inputs.
std::string generation_digest(const FactorSpec& spec, const CorrelationSpec& corr,
                              const DatasetOptions& options, std::uint64_t seed);

}  // namespace wdis
