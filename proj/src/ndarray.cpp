#include "c2freg/ndarray.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace c2freg {

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

void throw_shape_error(std::string_view op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) +
                   " vs " + shape_str(b));
}

NdArray::NdArray(Shape shape, double fill) : shape_(std::move(shape)) {
  if (shape_.empty()) throw ShapeError("NdArray: empty shape");
  for (auto e : shape_)
    if (e == 0) throw ShapeError("NdArray: zero extent in " + shape_str(shape_));
  data_.assign(shape_numel(shape_), fill);
}

NdArray::NdArray(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty()) throw ShapeError("NdArray: empty shape");
  for (auto e : shape_)
    if (e == 0) throw ShapeError("NdArray: zero extent in " + shape_str(shape_));
  if (shape_numel(shape_) != data_.size())
    throw ShapeError("NdArray: shape " + shape_str(shape_) + " needs " +
                     std::to_string(shape_numel(shape_)) + " values, got " +
                     std::to_string(data_.size()));
}

double NdArray::item() const {
  if (data_.size() != 1)
    throw ShapeError("NdArray::item: not a scalar " + shape_str(shape_));
  return data_[0];
}

NdArray NdArray::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) throw_shape_error("reshape", shape_, shape);
  return NdArray(std::move(shape), data_);
}

void NdArray::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void NdArray::accumulate(const NdArray& other) {
  if (other.shape_ != shape_) throw_shape_error("accumulate", shape_, other.shape_);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

bool NdArray::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

}  // namespace c2freg
