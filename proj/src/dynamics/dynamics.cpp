#include "ttm/dynamics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <string>

#include "ttm/error.hpp"
#include "ttm/numerics/kernels.hpp"

namespace ttm {

void EvolutionConfig::validate() const {
  if (!(mix >= 0.0 && mix <= 1.0)) throw ConfigError("evolution mix must lie in [0, 1]");
  if (!std::isfinite(gain)) throw ConfigError("evolution gain must be finite");
  if (!(tolerance > 0.0)) throw ConfigError("tolerance must be positive");
  if (!(noise_bound >= 0.0)) throw ConfigError("noise bound must be non-negative");
  if (max_iter == 0) throw ConfigError("max_iter must be at least 1");
}

TemperatureField evolve_layer(const TemperatureField& field, const Vector& context, const Matrix& activations,
                              const EvolutionConfig& cfg, Rng& rng) {
  cfg.validate();
  const Index h = field.head_count();
  const Index n = field.seq_len();
  const double eps = field.eps_min();

  Matrix logits = cfg.gain * (field.values().array() - 0.5).matrix();
  if (cfg.bias.size() != 0) {
    if (cfg.bias.size() != h) throw DimensionError("evolution bias needs one entry per head");
    logits.colwise() += cfg.bias.transpose();
  }
  if (cfg.w_context.size() != 0) {
    if (cfg.w_context.rows() != h || cfg.w_context.cols() != context.size()) {
      throw DimensionError("context weights do not match heads x d_c");
    }
    logits.colwise() += cfg.w_context * context;
  }
  if (cfg.w_activation.size() != 0) {
    if (cfg.w_activation.rows() != h || activations.rows() != n || activations.cols() != cfg.w_activation.cols()) {
      throw DimensionError("activation weights do not match heads x d_model for this sequence");
    }
    logits += cfg.w_activation * activations.transpose();
  }
  const Matrix target = logits.unaryExpr([eps](double z) { return kernels::squash(z, eps); });
  Matrix next = (1.0 - cfg.mix) * field.values() + cfg.mix * target;

  if (cfg.noise_bound > 0.0) {
    Matrix noise = rng.normal_matrix(h, n, cfg.noise_bound);
    const double norm = noise.norm();
    if (norm > cfg.noise_bound) noise *= cfg.noise_bound / norm;
    next += noise;
  }
  return TemperatureField(next.cwiseMax(eps).cwiseMin(1.0 - eps), eps);
}

ConvergenceReport iterate_to_fixed_point(const FieldMap& update, const Matrix& start, double tol,
                                         std::size_t max_iter) {
  if (!(tol > 0.0)) throw ConfigError("tolerance must be positive");
  if (max_iter == 0) throw ConfigError("max_iter must be at least 1");
  ConvergenceReport r;
  r.iterates.push_back(start);
  for (std::size_t t = 0; t < max_iter; ++t) {
    Matrix next = update(r.iterates.back());
    if (next.rows() != start.rows() || next.cols() != start.cols()) {
      throw DimensionError("update changed the field shape");
    }
    const double res = (next - r.iterates.back()).norm();
    r.residuals.push_back(res);
    r.iterates.push_back(std::move(next));
    if (!std::isfinite(res)) break;
    if (res < tol) {
      r.converged = true;
      break;
    }
  }
  r.final_residual = r.residuals.back();
  r.iterations = r.converged ? std::max<std::size_t>(1, r.residuals.size() - 1) : r.residuals.size();
  const auto fit = convergence_rate_fit(r.residuals);
  r.alpha_hat = fit.alpha_hat;
  r.gamma_hat = fit.gamma_hat;
  return r;
}

double estimate_contraction(const FieldMap& update, std::size_t sample_count, std::uint64_t seed, Index heads,
                            Index tokens, double lo, double hi) {
  if (sample_count < 2) throw ConfigError("contraction estimate needs at least two samples");
  Rng rng(seed);
  std::vector<Matrix> xs;
  std::vector<Matrix> ys;
  for (std::size_t s = 0; s < sample_count; ++s) {
    xs.push_back(rng.uniform_matrix(heads, tokens, lo, hi));
    ys.push_back(update(xs.back()));
  }
  double best = 0.0;
  for (std::size_t i = 0; i < sample_count; ++i) {
    for (std::size_t j = i + 1; j < sample_count; ++j) {
      const double dx = (xs[i] - xs[j]).norm();
      if (dx == 0.0) continue;
      best = std::max(best, (ys[i] - ys[j]).norm() / dx);
    }
  }
  return best;
}

RateFit convergence_rate_fit(std::span<const double> residuals) {
  std::size_t used = 0;
  while (used < residuals.size() && residuals[used] > 0.0 && std::isfinite(residuals[used])) ++used;
  // Fewer than three positive points cannot pin a slope; report what we can.
  RateFit fit;
  fit.used = used;
  if (used < 3) {
    if (used == 2) fit.gamma_hat = residuals[1] / residuals[0];
    fit.alpha_hat = 1.0 - fit.gamma_hat;
    return fit;
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < used; ++k) {
    const double x = static_cast<double>(k);
    const double y = std::log(residuals[k]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double m = static_cast<double>(used);
  const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  fit.gamma_hat = std::exp(slope);
  fit.alpha_hat = 1.0 - fit.gamma_hat;
  return fit;
}

std::vector<double> sweep_grid(double t_min, double t_max, std::size_t steps, GridSpacing spacing) {
  if (!(t_min < t_max)) throw ConfigError("sweep needs t_min < t_max");
  if (steps < 2) throw ConfigError("sweep needs at least two grid points");
  if (spacing == GridSpacing::log && !(t_min > 0.0)) throw ConfigError("log-spaced sweep needs t_min > 0");
  std::vector<double> grid(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double u = static_cast<double>(i) / static_cast<double>(steps - 1);
    grid[i] = spacing == GridSpacing::linear ? t_min + u * (t_max - t_min)
                                             : std::exp(std::log(t_min) + u * (std::log(t_max) - std::log(t_min)));
  }
  grid.front() = t_min;
  grid.back() = t_max;
  return grid;
}

SweepResult temperature_sweep(const std::function<double(double)>& loss_at, double t_min, double t_max,
                              std::size_t steps, GridSpacing spacing) {
  SweepResult r;
  r.grid = sweep_grid(t_min, t_max, steps, spacing);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < r.grid.size(); ++i) {
    const double loss = loss_at(r.grid[i]);
    r.losses.push_back(loss);
    if (loss < best) {
      best = loss;
      r.best = i;
    }
  }
  if (!std::isfinite(best)) throw NumericError("every sweep point produced a non-finite loss");
  r.t_star = r.grid[r.best];
  return r;
}

SweepResult temperature_sweep(const ModelParams& model, std::span<const Example> data, double t_min, double t_max,
                              std::size_t steps, GridSpacing spacing) {
  if (data.empty()) throw ConfigError("temperature sweep needs a non-empty dataset");
  return temperature_sweep(
      [&](double t) {
        ForwardOptions opts;
        opts.temp_multiplier = t;
        return mean_loss(model, data, opts);
      },
      t_min, t_max, steps, spacing);
}

std::string series_csv(std::span<const double> values) {
  std::string out = "step,value\n";
  char buf[64];
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, values[i]);
    out += buf;
  }
  return out;
}

}  // namespace ttm
