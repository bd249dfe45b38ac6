#include "seqmech/tensor.hpp"

#include <cmath>
#include <sstream>

namespace seqmech {

std::string shape_str(const Shape& shape) {
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
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
  }
}

Tensor Tensor::vector(std::initializer_list<double> v) {
  return Tensor(Shape{v.size()}, std::vector<double>(v));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(m * n);
  for (const auto& r : rows) {
    if (r.size() != n) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor(Shape{m, n}, std::move(data));
}

std::size_t Tensor::dim(int axis) const {
  const int r = static_cast<int>(shape_.size());
  const int a = axis < 0 ? r + axis : axis;
  if (a < 0 || a >= r) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
  return shape_[static_cast<std::size_t>(a)];
}

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(double v) {
  for (auto& x : data_) x = v;
}

bool operator==(const Tensor& a, const Tensor& b) { return a.shape() == b.shape() && a.storage() == b.storage(); }

}  // namespace seqmech
