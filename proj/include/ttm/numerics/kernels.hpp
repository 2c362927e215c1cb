#pragma once

// Scalar-generic forward kernels. The tape ops in ops.hpp call these with
// double; tests instantiate some of them with long double as a reference.

#include <cmath>
#include <concepts>
#include <numbers>

#include "ttm/numerics/types.hpp"

namespace ttm::kernels {

template <std::floating_point Scalar>
Scalar sigmoid(Scalar x) {
  using std::exp;
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-x));
  const Scalar e = exp(x);
  return e / (Scalar(1) + e);
}

/// Exact (erf) GELU.
template <std::floating_point Scalar>
Scalar gelu(Scalar x) {
  using std::erf;
  return Scalar(0.5) * x * (Scalar(1) + erf(x / std::numbers::sqrt2_v<Scalar>));
}

template <std::floating_point Scalar>
Scalar gelu_derivative(Scalar x) {
  using std::erf;
  using std::exp;
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + erf(x / std::numbers::sqrt2_v<Scalar>));
  const Scalar pdf = exp(Scalar(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<Scalar> / std::numbers::sqrt2_v<Scalar>;
  return cdf + x * pdf;
}

/// eps + (1 - 2 eps) * sigmoid(x): a sigmoid pinned inside [eps, 1 - eps].
template <std::floating_point Scalar>
Scalar squash(Scalar x, Scalar eps) {
  return eps + (Scalar(1) - Scalar(2) * eps) * sigmoid(x);
}

template <typename Derived>
MatrixX<typename Derived::Scalar> sigmoid(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return sigmoid(v); });
}

/// Row-wise softmax with max subtraction. Shifted logits below the exp
/// underflow point give exactly 0 (Eigen's vectorized exp saturates instead).
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar m = x.row(i).maxCoeff();
    const auto shifted = (x.row(i).array() - m).eval();
    out.row(i) = (shifted < Scalar(-745)).select(Scalar(0), shifted.exp()).matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

/// Per-row standardization (eps inside the square root), then gain and bias.
template <typename Derived, typename GainDerived, typename BiasDerived>
MatrixX<typename Derived::Scalar> layer_norm_rows(const Eigen::MatrixBase<Derived>& x,
                                                  const Eigen::MatrixBase<GainDerived>& gain,
                                                  const Eigen::MatrixBase<BiasDerived>& bias,
                                                  typename Derived::Scalar eps) {
  using Scalar = typename Derived::Scalar;
  using std::sqrt;
  MatrixX<Scalar> out(x.rows(), x.cols());
  const auto d = static_cast<Scalar>(x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar mean = x.row(i).sum() / d;
    const auto centered = (x.row(i).array() - mean).eval();
    const Scalar var = centered.square().sum() / d;
    const Scalar inv = Scalar(1) / sqrt(var + eps);
    out.row(i) = (centered * inv * gain.array().reshaped().transpose() + bias.array().reshaped().transpose()).matrix();
  }
  return out;
}

}  // namespace ttm::kernels
