#include "sm2/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace sm2 {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (auto e : shape_) {
    if (e == 0) {
      throw DimensionError("tensor extents must be positive, got " +
                           shape_to_string(shape_));
    }
  }
  values_.assign(shape_numel(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  for (auto e : shape_) {
    if (e == 0) {
      throw DimensionError("tensor extents must be positive, got " +
                           shape_to_string(shape_));
    }
  }
  if (shape_numel(shape_) != values_.size()) {
    throw DimensionError("shape " + shape_to_string(shape_) + " needs " +
                         std::to_string(shape_numel(shape_)) +
                         " values, got " + std::to_string(values_.size()));
  }
}

std::size_t Tensor::rows() const {
  if (shape_.size() <= 1) return 1;
  return values_.size() / shape_.back();
}

std::size_t Tensor::cols() const {
  return shape_.empty() ? 1 : shape_.back();
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), values_);
}

bool Tensor::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace sm2
