#pragma once

#include <Eigen/Core>

namespace ttm {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

// Float64 everywhere; row-major so a Matrix maps directly onto Tensor storage.
using Matrix = MatrixX<double>;
using RowVector = RowVectorX<double>;
using Vector = Eigen::VectorXd;

}  // namespace ttm
