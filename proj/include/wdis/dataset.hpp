#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "wdis/num_array.hpp"

namespace wdis {

// Stands in for a withheld background label.
inline constexpr std::uint32_t kMissingLabel = std::numeric_limits<std::uint32_t>::max();

// Observations with foreground and (optional) background labels.
struct Dataset {
  NumArray features;  // [n, d_x]
  std::vector<std::uint32_t> fg;
  std::vector<std::uint32_t> bg;
  std::size_t k_fg = 0;
  std::size_t k_bg = 0;

  std::size_t size() const noexcept { return fg.size(); }
  bool has_bg(std::size_t i) const { return bg[i] != kMissingLabel; }
  // Row counts agree and labels are in range; throws kDatasetCorrupt otherwise.
  void validate() const;
};

Dataset subset(const Dataset& d, std::span<const std::size_t> rows);

}  // namespace wdis
