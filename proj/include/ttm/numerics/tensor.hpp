#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ttm/numerics/types.hpp"

namespace ttm {

/// Dense float64 array in row-major order, with an optional gradient buffer
/// of identical shape.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor scalar(double value);
  static Tensor from_matrix(const Matrix& m);
  /// Shape [n] tensor.
  static Tensor from_vector(std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t extent(std::size_t axis) const;

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  double at(std::initializer_list<std::size_t> index) const;
  double& at(std::initializer_list<std::size_t> index);
  double item() const;

  bool has_grad() const { return grad_.has_value(); }
  std::span<const double> grad() const;
  void zero_grad();
  void accumulate_grad(std::span<const double> g);
  void clear_grad() { grad_.reset(); }

  /// Collapses leading axes into rows; the last axis becomes columns.
  Matrix matrix() const;
  Tensor reshaped(Shape shape) const;

  std::string shape_string() const;

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<double> values_;
  std::optional<std::vector<double>> grad_;
};

std::string shape_string(const Tensor::Shape& shape);

}  // namespace ttm
