#include <gtest/gtest.h>

#include <cmath>

#include "ttm/dynamics.hpp"
#include "ttm/error.hpp"

using namespace ttm;

namespace {

FieldMap linear_contraction(double factor) {
  return [factor](const Matrix& t) { return Matrix((0.5 + factor * (t.array() - 0.5)).matrix()); };
}

FieldMap constant_map(Matrix c) {
  return [c](const Matrix&) { return c; };
}

}  // namespace

TEST(Evolve, IdentityConfigLeavesFieldUnchanged) {
  Rng rng(1);
  const TemperatureField f(rng.uniform_matrix(2, 5, 0.05, 0.95), 0.01);
  EvolutionConfig cfg;  // mix 0, no noise
  Rng noise(2);
  EXPECT_EQ(evolve_layer(f, Vector(), Matrix(), cfg, noise).values(), f.values());
}

TEST(Evolve, NoiseBoundIsNeverExceeded) {
  Rng rng(3);
  EvolutionConfig cfg;
  cfg.mix = 0.7;
  cfg.gain = 1.5;
  for (int trial = 0; trial < 200; ++trial) {
    const TemperatureField f(rng.uniform_matrix(3, 6, 0.01, 0.99), 0.01);
    cfg.noise_bound = 0.0;
    Rng a(trial);
    const auto clean = evolve_layer(f, Vector(), Matrix(), cfg, a);
    cfg.noise_bound = 0.1;
    Rng b(trial);
    const auto noisy = evolve_layer(f, Vector(), Matrix(), cfg, b);
    EXPECT_LE((noisy.values() - clean.values()).norm(), 0.1 + 1e-15);
  }
}

TEST(Evolve, HandCaseMatchesFormula) {
  const TemperatureField f((Matrix(1, 2) << 0.3, 0.8).finished(), 0.01);
  EvolutionConfig cfg;
  cfg.mix = 0.6;
  cfg.gain = 2.0;
  cfg.w_context = (Matrix(1, 2) << 0.5, -1.0).finished();
  cfg.w_activation = (Matrix(1, 1) << 1.5).finished();
  cfg.bias = (RowVector(1) << 0.1).finished();
  const Vector c = (Vector(2) << 0.4, 0.2).finished();
  const Matrix x = (Matrix(2, 1) << -0.3, 0.7).finished();
  Rng rng(4);
  const auto out = evolve_layer(f, c, x, cfg, rng);
  for (Index i = 0; i < 2; ++i) {
    const long double z = 2.0L * (f(0, i) - 0.5L) + (0.5L * 0.4L - 1.0L * 0.2L) + 1.5L * x(i, 0) + 0.1L;
    const long double sq = 0.01L + 0.98L / (1.0L + std::exp(-z));
    EXPECT_NEAR(out(0, i), static_cast<double>(0.4L * f(0, i) + 0.6L * sq), 1e-15);
  }
  cfg.w_context = Matrix(2, 2);
  EXPECT_THROW(evolve_layer(f, c, x, cfg, rng), DimensionError);
}

TEST(FixedPoint, ConstantMapConvergesInOneStep) {
  const Matrix c = Matrix::Constant(2, 3, 0.4);
  const auto r = iterate_to_fixed_point(constant_map(c), Matrix::Constant(2, 3, 0.9), 1e-9, 100);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.iterations, 1u);
  EXPECT_EQ(r.final_residual, 0.0);
}

TEST(FixedPoint, LinearContractionGeometricDecay) {
  const Matrix start = Matrix::Constant(1, 4, 0.9);
  const auto r = iterate_to_fixed_point(linear_contraction(0.9), start, 1e-6, 1000);
  ASSERT_TRUE(r.converged);
  for (std::size_t k = 1; k < r.residuals.size(); ++k) EXPECT_NEAR(r.residuals[k] / r.residuals[k - 1], 0.9, 1e-9);
  const double predicted = std::ceil(std::log(r.residuals[0] / 1e-6) / std::log(1.0 / 0.9));
  EXPECT_NEAR(static_cast<double>(r.iterations), predicted, 1.0);
  EXPECT_NEAR(r.gamma_hat, 0.9, 1e-9);
}

TEST(FixedPoint, ExpansionIsFlagged) {
  const auto r = iterate_to_fixed_point(linear_contraction(1.05), Matrix::Constant(1, 2, 0.6), 1e-6, 50);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 50u);
  EXPECT_GT(r.final_residual, r.residuals.front());
}

TEST(Contraction, Estimates) {
  EXPECT_NEAR(estimate_contraction(linear_contraction(0.9), 10, 1, 2, 3), 0.9, 1e-9);
  EXPECT_EQ(estimate_contraction(constant_map(Matrix::Constant(2, 3, 0.5)), 10, 1, 2, 3), 0.0);
  EXPECT_THROW(estimate_contraction(linear_contraction(0.9), 1, 1, 2, 3), ConfigError);
}

TEST(RateFit, Cases) {
  const std::vector<double> geometric{1.0, 0.93, 0.93 * 0.93};
  EXPECT_NEAR(convergence_rate_fit(geometric).gamma_hat, 0.93, 1e-9);
  const std::vector<double> flat{0.2, 0.2, 0.2, 0.2};
  const auto f = convergence_rate_fit(flat);
  EXPECT_NEAR(f.gamma_hat, 1.0, 1e-12);
  EXPECT_NEAR(f.alpha_hat, 0.0, 1e-12);

  Rng rng(5);
  for (double truth : {0.5, 0.8, 0.93}) {
    std::vector<double> noisy;
    for (int k = 0; k < 40; ++k) noisy.push_back(std::pow(truth, k) * (1.0 + rng.uniform(-0.01, 0.01)));
    EXPECT_NEAR(convergence_rate_fit(noisy).gamma_hat, truth, 0.02);
  }
  const std::vector<double> with_zero{1.0, 0.5, 0.25, 0.0, 3.0};
  const auto p = convergence_rate_fit(with_zero);
  EXPECT_EQ(p.used, 3u);
  EXPECT_NEAR(p.gamma_hat, 0.5, 1e-12);
}

TEST(Sweep, Contract) {
  const auto two = temperature_sweep([](double t) { return (t - 0.9) * (t - 0.9); }, 0.1, 1.0, 2);
  EXPECT_EQ(two.grid.size(), 2u);
  EXPECT_EQ(two.t_star, 1.0);

  const double optimum = 0.437;
  const auto r = temperature_sweep([&](double t) { return (t - optimum) * (t - optimum); }, 0.1, 1.0, 10);
  double nearest = r.grid[0];
  for (double g : r.grid)
    if (std::abs(g - optimum) < std::abs(nearest - optimum)) nearest = g;
  EXPECT_EQ(r.t_star, nearest);
  EXPECT_GE(r.t_star, 0.1);
  EXPECT_LE(r.t_star, 1.0);

  const auto tie = temperature_sweep([](double) { return 1.0; }, 0.2, 0.8, 4);
  EXPECT_EQ(tie.t_star, 0.2);

  const auto lg = sweep_grid(0.1, 10.0, 3, GridSpacing::log);
  EXPECT_NEAR(lg[1], 1.0, 1e-12);
  EXPECT_THROW(sweep_grid(1.0, 1.0, 3, GridSpacing::linear), ConfigError);
  EXPECT_THROW(sweep_grid(0.1, 1.0, 1, GridSpacing::linear), ConfigError);
}

TEST(Sweep, ModelSweepIsExactGridArgmin) {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.d_ff = 8;
  cfg.vocab_size = 6;
  const auto params = ModelParams::init(cfg);
  std::vector<Example> data{{{1, 2, 3}, {1, 2, 3}}, {{4, 0, 5}, {4, -1, 5}}};
  const auto r = temperature_sweep(params, data, 0.2, 2.0, 5);
  std::size_t best = 0;
  std::vector<double> independent;
  for (std::size_t i = 0; i < 5; ++i) {
    ForwardOptions opts;
    opts.temp_multiplier = 0.2 + 0.45 * static_cast<double>(i);
    double total = 0.0;
    for (const auto& ex : data) {
      const auto out = model_forward(params, ex.input, opts);
      double loss = 0.0;
      int count = 0;
      for (std::size_t p = 0; p < ex.target.size(); ++p) {
        if (ex.target[p] < 0) continue;
        const auto row = out.logits.row(static_cast<Index>(p));
        const double m = row.maxCoeff();
        loss += m + std::log((row.array() - m).exp().sum()) - row(ex.target[p]);
        ++count;
      }
      total += loss / count;
    }
    independent.push_back(total / 2.0);
    if (independent.back() < independent[best]) best = i;
  }
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(r.losses[i], independent[i], 1e-12);
  EXPECT_EQ(r.best, best);
  EXPECT_THROW(temperature_sweep(params, std::span<const Example>(), 0.1, 1.0, 3), ConfigError);
}

TEST(SeriesCsv, Format) {
  const std::vector<double> v{1.0, 0.5};
  EXPECT_EQ(series_csv(v), "step,value\n0,1\n1,0.5\n");
}
