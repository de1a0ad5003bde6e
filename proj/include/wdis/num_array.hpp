#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace wdis {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

// Dense row-major array of doubles. Rank 0 is a scalar, rank 2 a matrix.
class NumArray {
 public:
  NumArray() : shape_{}, data_(1, 0.0) {}
  explicit NumArray(Shape shape);
  NumArray(Shape shape, std::vector<double> data);

  static NumArray scalar(double value);
  static NumArray filled(Shape shape, double value);
  static NumArray matrix(std::size_t rows, std::size_t cols,
                         std::initializer_list<double> values);
  static NumArray identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  // Matrix helpers; only meaningful for rank 2.
  std::size_t rows() const;
  std::size_t cols() const;
  // Extent of the last axis (1 for scalars).
  std::size_t last_extent() const noexcept {
    return shape_.empty() ? 1 : shape_.back();
  }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  // Matrix element; rank 2 only, unchecked.
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  std::span<const double> row(std::size_t r) const;
  std::span<double> row(std::size_t r);

  // Scalar value of a one-element array.
  double item() const;
  bool all_finite() const noexcept;

  // Bit-exact comparison (shape and every payload bit).
  friend bool operator==(const NumArray& a, const NumArray& b);

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Row subset / row gather of a matrix.
NumArray take_rows(const NumArray& m, std::span<const std::size_t> rows);
// Stacks matrices with equal column counts on top of each other.
NumArray vstack(const NumArray& top, const NumArray& bottom);
// One-hot rows for the given labels.
NumArray one_hot(std::span<const std::uint32_t> labels, std::size_t classes);

}  // namespace wdis
