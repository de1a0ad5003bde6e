#include "wdis/rng.hpp"

#include <cmath>

namespace wdis {

double Rng::gaussian() {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::vector<std::size_t> uniform_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  shuffle_in_place(std::span<std::size_t>(perm), rng);
  return perm;
}

}  // namespace wdis
