#include "ttm/numerics/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "ttm/error.hpp"

namespace ttm {

namespace {

std::size_t product(const Tensor::Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

std::string shape_string(const Tensor::Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  for (auto e : shape_) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + ttm::shape_string(shape_));
  }
  if (product(shape_) != values_.size()) {
    throw DimensionError("tensor shape " + ttm::shape_string(shape_) + " does not match " +
                         std::to_string(values_.size()) + " values");
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw NumericError("tensor value at flat index " + std::to_string(i) + " is not finite");
    }
  }
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::from_matrix(const Matrix& m) {
  std::vector<double> v(m.data(), m.data() + m.size());
  return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(v));
}

Tensor Tensor::from_vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor({n}, std::move(values));
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) throw DimensionError("axis out of range for " + ttm::shape_string(shape_));
  return shape_[axis];
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw DimensionError("index rank mismatch for tensor " + ttm::shape_string(shape_));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw DimensionError("index out of range for tensor " + ttm::shape_string(shape_));
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

double Tensor::at(std::initializer_list<std::size_t> index) const { return values_[offset(index)]; }
double& Tensor::at(std::initializer_list<std::size_t> index) { return values_[offset(index)]; }

double Tensor::item() const {
  if (values_.size() != 1) throw DimensionError("item() on non-scalar tensor " + ttm::shape_string(shape_));
  return values_[0];
}

std::span<const double> Tensor::grad() const {
  if (!grad_) throw Error("tensor has no gradient buffer");
  return *grad_;
}

void Tensor::zero_grad() { grad_.emplace(values_.size(), 0.0); }

void Tensor::accumulate_grad(std::span<const double> g) {
  if (g.size() != values_.size()) {
    throw DimensionError("gradient size does not match tensor " + ttm::shape_string(shape_));
  }
  if (!grad_) zero_grad();
  for (std::size_t i = 0; i < g.size(); ++i) (*grad_)[i] += g[i];
}

Matrix Tensor::matrix() const {
  if (shape_.empty()) return Matrix();
  const auto cols = static_cast<Index>(shape_.back());
  const auto rows = static_cast<Index>(values_.size()) / cols;
  return Eigen::Map<const Matrix>(values_.data(), rows, cols);
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), values_); }

std::string Tensor::shape_string() const { return ttm::shape_string(shape_); }

}  // namespace ttm
