#include "wdis/num_array.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <sstream>

#include "wdis/error.hpp"

namespace wdis {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kContractViolation: return "CONTRACT_VIOLATION";
    case ErrorCode::kNonFinite: return "NON_FINITE";
    case ErrorCode::kConfigInvalid: return "CONFIG_INVALID";
    case ErrorCode::kConfigUnknownKey: return "CONFIG_UNKNOWN_KEY";
    case ErrorCode::kDatasetNotFound: return "DATASET_NOT_FOUND";
    case ErrorCode::kDatasetCorrupt: return "DATASET_CORRUPT";
    case ErrorCode::kCheckpointNotFound: return "CHECKPOINT_NOT_FOUND";
    case ErrorCode::kCheckpointCorrupt: return "CHECKPOINT_CORRUPT";
    case ErrorCode::kCheckpointVersion: return "CHECKPOINT_VERSION";
    case ErrorCode::kBackendFailure: return "BACKEND_FAILURE";
    case ErrorCode::kTrainingDiverged: return "TRAINING_DIVERGED";
    case ErrorCode::kIo: return "IO_ERROR";
    case ErrorCode::kUsage: return "USAGE";
    case ErrorCode::kImageCorrupt: return "IMAGE_CORRUPT";
  }
  return "UNKNOWN";
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

NumArray::NumArray(Shape shape)
    : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {}

NumArray::NumArray(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    std::ostringstream os;
    os << "shape " << shape_string(shape_) << " needs " << shape_size(shape_)
       << " values, got " << data_.size();
    fail(ErrorCode::kContractViolation, os.str());
  }
}

NumArray NumArray::scalar(double value) { return NumArray({}, {value}); }

NumArray NumArray::filled(Shape shape, double value) {
  NumArray a(std::move(shape));
  for (auto& v : a.data_) v = value;
  return a;
}

NumArray NumArray::matrix(std::size_t rows, std::size_t cols,
                          std::initializer_list<double> values) {
  return NumArray({rows, cols}, std::vector<double>(values));
}

NumArray NumArray::identity(std::size_t n) {
  NumArray a({n, n});
  for (std::size_t i = 0; i < n; ++i) a.at(i, i) = 1.0;
  return a;
}

std::size_t NumArray::rows() const {
  if (rank() != 2) fail(ErrorCode::kContractViolation, "rows() needs a matrix, got shape " + shape_string(shape_));
  return shape_[0];
}

std::size_t NumArray::cols() const {
  if (rank() != 2) fail(ErrorCode::kContractViolation, "cols() needs a matrix, got shape " + shape_string(shape_));
  return shape_[1];
}

std::span<const double> NumArray::row(std::size_t r) const {
  const std::size_t c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

std::span<double> NumArray::row(std::size_t r) {
  const std::size_t c = cols();
  return std::span<double>(data_).subspan(r * c, c);
}

double NumArray::item() const {
  if (data_.size() != 1) {
    fail(ErrorCode::kContractViolation, "item() needs one element, got shape " + shape_string(shape_));
  }
  return data_[0];
}

bool NumArray::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool operator==(const NumArray& a, const NumArray& b) {
  if (a.shape_ != b.shape_) return false;
  if (a.data_.empty()) return true;
  return std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(double)) == 0;
}

NumArray take_rows(const NumArray& m, std::span<const std::size_t> rows) {
  const std::size_t c = m.cols();
  NumArray out({rows.size(), c});
  const std::size_t n = m.rows();
  const double* src = m.data().data();
  double* dst = out.data().data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) fail(ErrorCode::kContractViolation, "take_rows: row index out of range");
    std::copy_n(src + rows[i] * c, c, dst + i * c);
  }
  return out;
}

NumArray vstack(const NumArray& top, const NumArray& bottom) {
  if (top.cols() != bottom.cols()) {
    fail(ErrorCode::kContractViolation, "vstack: column mismatch " + shape_string(top.shape()) +
                                            " vs " + shape_string(bottom.shape()));
  }
  std::vector<double> data(top.values());
  data.insert(data.end(), bottom.values().begin(), bottom.values().end());
  return NumArray({top.rows() + bottom.rows(), top.cols()}, std::move(data));
}

NumArray one_hot(std::span<const std::uint32_t> labels, std::size_t classes) {
  NumArray out({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) {
      fail(ErrorCode::kContractViolation,
           "label " + std::to_string(labels[i]) + " out of range for " +
               std::to_string(classes) + " classes");
    }
    out.at(i, labels[i]) = 1.0;
  }
  return out;
}

}  // namespace wdis
