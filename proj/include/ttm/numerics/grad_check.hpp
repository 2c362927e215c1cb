#pragma once

#include <functional>

#include "ttm/numerics/tape.hpp"
#include "ttm/numerics/tensor.hpp"

namespace ttm {

/// A scalar-valued map built on a tape from one input node.
using ScalarFn = std::function<Var(Tape&, Var)>;

struct GradCheckResult {
  double max_rel_err = 0.0;  // max |analytic - numeric| / max(1, |analytic|)
  double max_abs_err = 0.0;
  Index worst_index = 0;     // flat row-major coordinate of max_rel_err
  Matrix analytic;
  Matrix numeric;
};

inline constexpr double kDefaultGradCheckEps = 1e-5;

/// Compares the tape gradient of f at x with central differences.
GradCheckResult grad_check_detailed(const ScalarFn& f, const Matrix& x, double eps = kDefaultGradCheckEps);

double grad_check(const ScalarFn& f, const Tensor& x, double eps = kDefaultGradCheckEps);

}  // namespace ttm
