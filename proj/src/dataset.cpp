#include "wdis/dataset.hpp"

#include "wdis/error.hpp"

namespace wdis {

void Dataset::validate() const {
  const std::size_t n = fg.size();
  auto bad = [](const std::string& what) { fail(ErrorCode::kDatasetCorrupt, what); };
  if (bg.size() != n) bad("fg/bg label counts differ");
  if (features.rank() != 2 || features.rows() != n) {
    bad("feature rows " + shape_string(features.shape()) + " do not match " +
        std::to_string(n) + " labels");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (fg[i] >= k_fg) bad("fg label out of range at row " + std::to_string(i));
    if (bg[i] != kMissingLabel && bg[i] >= k_bg) {
      bad("bg label out of range at row " + std::to_string(i));
    }
  }
  if (!features.all_finite()) bad("non-finite feature value");
}

Dataset subset(const Dataset& d, std::span<const std::size_t> rows) {
  Dataset out;
  out.features = take_rows(d.features, rows);
  out.k_fg = d.k_fg;
  out.k_bg = d.k_bg;
  for (std::size_t r : rows) {
    out.fg.push_back(d.fg.at(r));
    out.bg.push_back(d.bg.at(r));
  }
  return out;
}

}  // namespace wdis
