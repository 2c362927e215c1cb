#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ttm/model.hpp"
#include "ttm/numerics/rng.hpp"
#include "ttm/numerics/tensor.hpp"
#include "ttm/temperature.hpp"

namespace ttm {

/// f(T) = (1 - mix) * T + mix * squash(gain * (T - 0.5) + W_c c + W_x x_i + b),
/// plus noise with 2-norm at most noise_bound, then clamped into the band.
struct EvolutionConfig {
  double mix = 0.0;
  double gain = 0.0;
  Matrix w_context;     // heads x d_c, empty = no context term
  Matrix w_activation;  // heads x d_model, empty = no activation term
  RowVector bias;       // heads, empty = zero
  double noise_bound = 0.0;
  std::size_t max_iter = 200;
  double tolerance = 1e-6;
  std::uint64_t seed = 0;

  void validate() const;
};

/// `context` (d_c) and `activations` (n x d_model) may be empty when the
/// corresponding weights are absent.
TemperatureField evolve_layer(const TemperatureField& field, const Vector& context, const Matrix& activations,
                              const EvolutionConfig& cfg, Rng& rng);

using FieldMap = std::function<Matrix(const Matrix&)>;

struct ConvergenceReport {
  std::size_t iterations = 0;
  bool converged = false;
  double final_residual = 0.0;
  std::vector<double> residuals;  // ||T_{t+1} - T_t||_2 for t = 0, 1, ...
  std::vector<Matrix> iterates;   // T_0, T_1, ...
  double alpha_hat = 0.0;
  double gamma_hat = 0.0;
};

/// Iterates until a step moves less than tol or max_iter updates were made.
/// `iterations` counts the updates needed to reach the iterate whose next step
/// fell below tol (a constant map needs 1).
ConvergenceReport iterate_to_fixed_point(const FieldMap& update, const Matrix& start, double tol, std::size_t max_iter);

/// Max over sampled pairs of ||f(A) - f(B)|| / ||A - B|| with entries drawn in [lo, hi].
double estimate_contraction(const FieldMap& update, std::size_t sample_count, std::uint64_t seed, Index heads,
                            Index tokens, double lo = 0.01, double hi = 0.99);

struct RateFit {
  double alpha_hat = 0.0;
  double gamma_hat = 0.0;
  std::size_t used = 0;  // length of the positive prefix that was fitted
};

RateFit convergence_rate_fit(std::span<const double> residuals);

enum class GridSpacing { linear, log };

struct SweepResult {
  std::vector<double> grid;
  std::vector<double> losses;
  double t_star = 0.0;
  std::size_t best = 0;
};

std::vector<double> sweep_grid(double t_min, double t_max, std::size_t steps, GridSpacing spacing);

SweepResult temperature_sweep(const std::function<double(double)>& loss_at, double t_min, double t_max,
                              std::size_t steps, GridSpacing spacing = GridSpacing::linear);
SweepResult temperature_sweep(const ModelParams& model, std::span<const Example> data, double t_min, double t_max,
                              std::size_t steps, GridSpacing spacing = GridSpacing::linear);

/// "step,value" rows, one per entry.
std::string series_csv(std::span<const double> values);

}  // namespace ttm
