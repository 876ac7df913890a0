#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace c2freg {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised when operand shapes do not satisfy a primitive's shape rule.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

[[noreturn]] void throw_shape_error(std::string_view op, const Shape& a,
                                    const Shape& b);

/// Dense row-major array of doubles. The shape is fixed at construction.
class NdArray {
 public:
  NdArray() = default;
  explicit NdArray(Shape shape, double fill = 0.0);
  NdArray(Shape shape, std::vector<double> data);

  static NdArray scalar(double v) { return NdArray({1}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double item() const;

  NdArray reshaped(Shape shape) const;

  void fill(double v);
  /// this += other (same shape).
  void accumulate(const NdArray& other);

  bool all_finite() const;

  friend bool operator==(const NdArray& a, const NdArray& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace c2freg
