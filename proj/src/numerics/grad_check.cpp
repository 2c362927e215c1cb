#include "ttm/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ttm/error.hpp"

namespace ttm {

namespace {

double evaluate(const ScalarFn& f, const Matrix& x) {
  Tape tape;
  const Var out = f(tape, tape.constant(x));
  return out.scalar();
}

}  // namespace

GradCheckResult grad_check_detailed(const ScalarFn& f, const Matrix& x, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw Error("grad_check: eps must lie in [1e-7, 1e-3]");

  GradCheckResult r;
  {
    Tape tape;
    const Var in = tape.leaf(x);
    const Var out = f(tape, in);
    tape.backward(out);
    r.analytic = tape.grad(in);
  }
  r.numeric.resize(x.rows(), x.cols());
  Matrix probe = x;
  for (Index k = 0; k < x.size(); ++k) {
    const double orig = probe.data()[k];
    double up = 0.0;
    double down = 0.0;
    try {
      probe.data()[k] = orig + eps;
      up = evaluate(f, probe);
      probe.data()[k] = orig - eps;
      down = evaluate(f, probe);
    } catch (const NumericError& e) {
      throw NumericError("grad_check: coordinate " + std::to_string(k) + ": " + e.what());
    }
    probe.data()[k] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("grad_check: non-finite value at coordinate " + std::to_string(k));
    }
    r.numeric.data()[k] = (up - down) / (2.0 * eps);
  }
  for (Index k = 0; k < x.size(); ++k) {
    const double a = r.analytic.data()[k];
    const double diff = std::abs(a - r.numeric.data()[k]);
    const double rel = diff / std::max(1.0, std::abs(a));
    r.max_abs_err = std::max(r.max_abs_err, diff);
    if (k == 0 || rel > r.max_rel_err) {
      r.max_rel_err = rel;
      r.worst_index = k;
    }
  }
  return r;
}

double grad_check(const ScalarFn& f, const Tensor& x, double eps) {
  return grad_check_detailed(f, x.matrix(), eps).max_rel_err;
}

}  // namespace ttm
