#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ttm/attention.hpp"
#include "ttm/check.hpp"
#include "ttm/dynamics.hpp"
#include "ttm/gsot.hpp"
#include "ttm/numerics.hpp"
#include "ttm/temperature.hpp"
#include "ttm/training.hpp"

namespace ttm {
namespace {

template <class... Parts>
std::string cat(const Parts&... parts) {
  std::ostringstream os;
  os.precision(6);
  (os << ... << parts);
  return os.str();
}

// Counts checks and keeps the first failure; descriptions are built only on failure.
class Tally {
 public:
  template <class Describe>
  void expect(bool ok, Describe&& describe) {
    ++checks_;
    if (!ok && failures_++ == 0) first_ = describe();
  }

  PropertyOutcome finish(const std::string& summary = "") const {
    if (failures_ > 0) return {false, cat(failures_, "/", checks_, " checks failed; first: ", first_)};
    return {true, summary.empty() ? cat(checks_, " checks") : summary};
  }

 private:
  long checks_ = 0;
  long failures_ = 0;
  std::string first_;
};

// seed 0 reproduces the streams the suites were written against.
Rng stream(const CheckContext& ctx, std::uint64_t salt) { return Rng(salt ^ (ctx.seed * 0x9E3779B97F4A7C15ULL)); }

Index draw_between(Rng& rng, Index lo, Index hi) { return lo + static_cast<Index>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); }

double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

double row_sum_error(const std::vector<Matrix>& weights) {
  double worst = 0.0;
  for (const auto& w : weights) worst = std::max(worst, (w.rowwise().sum().array() - 1.0).abs().maxCoeff());
  return worst;
}

PropertyOutcome from_gradchecks(const std::string& module) {
  Tally t;
  double worst = 0.0;
  for (const auto& e : gradcheck_suite(kDefaultGradCheckEps, module)) {
    worst = std::max(worst, e.max_rel_err);
    t.expect(e.passed(), [&] { return cat(e.component, " rel err ", e.max_rel_err, " >= ", e.threshold); });
  }
  return t.finish(cat("worst rel err ", worst));
}

// --- numerics ---------------------------------------------------------------------

PropertyOutcome matmul_associative(const CheckContext& ctx) {
  Rng rng = stream(ctx, 31);
  Tally t;
  for (int trial = 0; trial < 50; ++trial) {
    const Index m = draw_between(rng, 1, 6), k = draw_between(rng, 1, 6), p = draw_between(rng, 1, 6),
                q = draw_between(rng, 1, 6);
    const Tensor a = Tensor::from_matrix(rng.normal_matrix(m, k, 1.0));
    const Tensor b = Tensor::from_matrix(rng.normal_matrix(k, p, 1.0));
    const Tensor c = Tensor::from_matrix(rng.normal_matrix(p, q, 1.0));
    const Matrix l = matmul(matmul(a, b), c).matrix();
    const Matrix r = matmul(a, matmul(b, c)).matrix();
    t.expect((l - r).norm() <= 1e-9 * std::max(1.0, l.norm()), [&] { return cat("trial ", trial); });
  }
  return t.finish();
}

PropertyOutcome softmax_rows_normalized(const CheckContext& ctx) {
  Rng rng = stream(ctx, 41);
  Tally t;
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = draw_between(rng, 1, 20);
    const Matrix y = softmax_rows(Tensor::from_matrix(rng.uniform_matrix(3, n, -100.0, 100.0))).matrix();
    const double err = (y.rowwise().sum().array() - 1.0).abs().maxCoeff();
    t.expect(err <= 1e-9 && y.minCoeff() >= 0.0, [&] { return cat("trial ", trial, " row error ", err); });
  }
  return t.finish();
}

PropertyOutcome rng_reproducible(const CheckContext& ctx) {
  Tally t;
  Rng a = stream(ctx, 51), b = stream(ctx, 51);
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.next_u64(), y = b.next_u64();
    t.expect(x == y, [&] { return cat("draw ", i); });
  }
  const Matrix ma = stream(ctx, 52).normal_matrix(4, 4, 1.0);
  const Matrix mb = stream(ctx, 52).normal_matrix(4, 4, 1.0);
  t.expect(ma == mb, [] { return std::string("normal_matrix differs"); });
  return t.finish();
}

// --- temperature ------------------------------------------------------------------

PropertyOutcome temperature_bounded(const CheckContext& ctx) {
  Rng rng = stream(ctx, 60);
  Tally t;
  double lo = 1.0, hi = 0.0;
  for (int draw = 0; draw < 1000; ++draw) {
    auto p = random_head(rng, draw_between(rng, 1, 4), 4, rng.uniform(0.0, 20.0), rng.uniform(0.0, 20.0));
    p.w_c = rng.normal_matrix(p.heads(), 2, 10.0);
    const Tensor a = Tensor::from_matrix(rng.normal_matrix(draw_between(rng, 1, 8), 4, 5.0));
    const auto f = draw % 2 ? compute_temperature(a, p)
                            : compute_temperature_ctx(a, Tensor::from_matrix(rng.normal_matrix(1, 2, 5.0)), p);
    const double fmin = f.values().minCoeff(), fmax = f.values().maxCoeff();
    lo = std::min(lo, fmin);
    hi = std::max(hi, fmax);
    t.expect(fmin >= 0.01 && fmax <= 0.99, [&] { return cat("draw ", draw, " range [", fmin, ", ", fmax, "]"); });
  }
  return t.finish(cat("1000 draws, observed range [", lo, ", ", hi, "]"));
}

PropertyOutcome zero_head_is_neutral(const CheckContext& ctx) {
  Rng rng = stream(ctx, 61);
  TemperatureHeadParams p;
  p.w_t = Matrix::Zero(2, 3);
  p.b_t = RowVector::Zero(2);
  p.w_c = Matrix::Zero(2, 4);
  const auto f = compute_temperature_ctx(Tensor::from_matrix(rng.normal_matrix(3, 3, 1.0)),
                                         Tensor::from_matrix(rng.normal_matrix(1, 4, 1.0)), p);
  Tally t;
  t.expect((f.values().array() == 0.5).all(), [] { return std::string("field not 0.5"); });
  return t.finish();
}

PropertyOutcome collapse_penalty_centered(const CheckContext& ctx) {
  Rng rng = stream(ctx, 10);
  Tally t;
  for (int trial = 0; trial < 50; ++trial) {
    Matrix v = rng.uniform_matrix(3, 4, 0.01, 0.99);
    if (trial % 5 == 0) v.setConstant(0.5);
    const double pen = collapse_penalty(TemperatureField(v, 0.01), 0.7);
    const bool centered = (v.array() == 0.5).all();
    t.expect(centered ? pen == 0.0 : pen > 0.0, [&] { return cat("trial ", trial, " penalty ", pen); });
    Tape tape;
    const Var leaf = tape.leaf(v);
    const Var loss = collapse_penalty(leaf, 0.7);
    tape.backward(loss);
    const Matrix& g = tape.grad(leaf);
    for (Index i = 0; i < v.rows(); ++i)
      for (Index j = 0; j < v.cols(); ++j) {
        const double d = v(i, j) - 0.5;
        t.expect(d == 0.0 || ((d > 0) == (g(i, j) > 0.0) && g(i, j) != 0.0),
                 [&] { return cat("trial ", trial, " entry (", i, ",", j, ") gradient points away from 0.5"); });
      }
  }
  return t.finish();
}

PropertyOutcome clipped_gradient_bounded(const CheckContext& ctx) {
  Rng rng = stream(ctx, 12);
  Tally t;
  for (Index d_k : {4, 16, 64}) {
    const double tau = default_clip_tau(d_k);
    for (int trial = 0; trial < 20; ++trial) {
      const auto p = random_head(rng, 2, 5, 2.0, 1.0);
      Tape tape;
      const Var field =
          temperature_field(tape.constant(rng.normal_matrix(6, 5, 1.0)), tape.leaf(p.w_t), tape.constant(p.b_t), 0.01);
      tape.backward(sum(hadamard(clip_grad(field, tau), tape.constant(rng.normal_matrix(2, 6, 10.0)))));
      const double g = max_abs(tape.grad(field));
      t.expect(g <= tau, [&] { return cat("d_k ", d_k, " trial ", trial, " |grad| ", g, " > ", tau); });
    }
  }
  return t.finish();
}

Neighborhoods chain(Index n) {
  Neighborhoods nb(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    if (i > 0) nb[static_cast<std::size_t>(i)].push_back(i - 1);
    if (i + 1 < n) nb[static_cast<std::size_t>(i)].push_back(i + 1);
  }
  return nb;
}

PropertyOutcome multiscale_contracts(const CheckContext& ctx) {
  Rng rng = stream(ctx, 23);
  Tally t;
  for (int trial = 0; trial < 100; ++trial) {
    const double gamma = rng.uniform(0.05, 0.95);
    const Index n = draw_between(rng, 3, 8);
    const auto p = random_head(rng, 2, 3, 1.0, 0.5);
    const Matrix e = rng.normal_matrix(n, 3, 1.0);
    MultiScaleConfig cfg;
    for (int s = 0; s < 5; ++s) {
      cfg.weights.push_back(p.w_t);
      cfg.biases.push_back(p.b_t);
      cfg.coupling.push_back(gamma);
      cfg.neighborhoods.push_back(chain(n));
    }
    const auto out = multiscale_temperature(TemperatureField::constant(2, n, 0.5), Tensor::from_matrix(e), cfg);
    for (std::size_t s = 2; s < out.size(); ++s) {
      const double prev = max_abs(out[s - 1].values() - out[s - 2].values());
      const double cur = max_abs(out[s].values() - out[s - 1].values());
      if (prev < 1e-14) continue;
      t.expect(cur / prev <= gamma + 0.05,
               [&] { return cat("trial ", trial, " scale ", s, " ratio ", cur / prev, " gamma ", gamma); });
    }
  }
  return t.finish();
}

PropertyOutcome adaptive_bounded_variation(const CheckContext& ctx) {
  Rng rng = stream(ctx, 42);
  Tally t;
  for (int trial = 0; trial < 200; ++trial) {
    const Index d = 3;
    const auto p = random_head(rng, 1, d, 1.0, 0.5);
    ContextCategory category{"c", rng.normal(), rng.normal(0.0, 0.5), rng.normal_matrix(1, d, 1.0), rng.normal(), 0.0};
    AdaptiveTempConfig cfg;
    cfg.max_jump = rng.uniform(0.0, 0.3);
    const double base_lipschitz = (1.0 - 2.0 * p.eps_min) * 0.25 * p.w_t.row(0).norm();
    category.lipschitz_bound =
        adaptive_scale(category) * base_lipschitz + std::abs(category.jump_magnitude) * category.jump_weights.norm();
    cfg.categories.push_back(category);

    const Matrix x = rng.normal_matrix(2, d, 1.0);
    const Tensor xt = Tensor::from_matrix(x);
    const auto r = adaptive_temperature(compute_temperature(xt, p), "c", xt, cfg);
    const double gap = std::abs(r.field(0, 0) - r.field(0, 1));
    const double bound = category.lipschitz_bound * (x.row(0) - x.row(1)).norm() + cfg.max_jump + 1e-15;
    t.expect(gap <= bound, [&] { return cat("trial ", trial, " gap ", gap, " bound ", bound); });
  }
  return t.finish();
}

// --- attention --------------------------------------------------------------------

PropertyOutcome attention_row_stochastic(const CheckContext& ctx) {
  Rng rng = stream(ctx, 8);
  Tally t;
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Index heads = draw_between(rng, 1, 4);
    const Index n = draw_between(rng, 1, 16);
    const auto p = AttentionParams::random(rng, 8, heads, 2);
    const Tensor x = Tensor::from_matrix(rng.normal_matrix(n, 8, 2.0));
    const TemperatureField f(rng.uniform_matrix(heads, n, 0.01, 0.99), 0.01);
    const AttentionOptions opts{trial % 3 == 0, false};
    for (const auto& out : {attention_baseline(x, p, opts), attention_temp_broadcast(x, p, f, opts),
                            attention_temp_outer(x, p, f, opts)}) {
      const double err = row_sum_error(out.weights);
      worst = std::max(worst, err);
      t.expect(err <= 1e-9, [&] { return cat("trial ", trial, " row error ", err); });
    }
  }
  return t.finish(cat("200 instances x 3 variants, worst row error ", worst));
}

PropertyOutcome attention_identity_reduction(const CheckContext& ctx) {
  Rng rng = stream(ctx, 9);
  Tally t;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index heads = draw_between(rng, 1, 4);
    const Index n = draw_between(rng, 1, 16);
    const auto p = AttentionParams::random(rng, 8, heads, 2);
    const Tensor x = Tensor::from_matrix(rng.normal_matrix(n, 8, 2.0));
    const auto unit = TemperatureField::constant(heads, n, 1.0, 0.0);
    const auto base = attention_baseline(x, p);
    for (const auto& out : {attention_temp_broadcast(x, p, unit), attention_temp_outer(x, p, unit)}) {
      double err = max_abs(out.values - base.values);
      for (std::size_t h = 0; h < base.weights.size(); ++h) err = std::max(err, max_abs(out.weights[h] - base.weights[h]));
      worst = std::max(worst, err);
      t.expect(err <= 1e-12, [&] { return cat("trial ", trial, " deviation ", err); });
    }
  }
  return t.finish(cat("100 instances, worst deviation ", worst));
}

PropertyOutcome attention_monotone_suppression(const CheckContext& ctx) {
  Rng rng = stream(ctx, 9);
  Tally t;
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = draw_between(rng, 2, 6);
    const Matrix w = rng.uniform_matrix(3, 3, 0.1, 1.0);
    AttentionParams p;
    p.w_q = w;
    p.w_k = w;
    p.w_v = Matrix::Identity(3, 3);
    p.w_o = Matrix::Identity(3, 3);
    p.heads = 1;
    p.d_k = 3;
    // Positive queries and keys keep every logit positive, where shrinking T shrinks the logit.
    const Tensor x = Tensor::from_matrix(rng.uniform_matrix(n, 3, 0.1, 1.0));
    Matrix field = rng.uniform_matrix(1, n, 0.2, 0.99);
    const auto before = attention_temp_broadcast(x, p, TemperatureField(field, 0.01));
    const Index j = draw_between(rng, 0, n - 1);
    field(0, j) *= rng.uniform(0.05, 0.95);
    const auto after = attention_temp_broadcast(x, p, TemperatureField(field, 0.0));
    for (Index i = 0; i < n; ++i)
      t.expect(after.weights[0](i, j) <= before.weights[0](i, j) + 1e-15,
               [&] { return cat("trial ", trial, " row ", i, " weight rose"); });
  }
  return t.finish();
}

PropertyOutcome attention_permutation_equivariant(const CheckContext& ctx) {
  Rng rng = stream(ctx, 10);
  Tally t;
  const Index n = 5;
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = AttentionParams::random(rng, 6, 2, 3);
    const Matrix x = rng.normal_matrix(n, 6, 1.0);
    const Matrix field = rng.uniform_matrix(2, n, 0.01, 0.99);
    std::vector<Index> perm{0, 1, 2, 3, 4};
    for (Index i = n - 1; i > 0; --i) std::swap(perm[static_cast<std::size_t>(i)], perm[rng.below(static_cast<std::uint64_t>(i + 1))]);
    Matrix xp(n, 6), fp(2, n);
    for (Index i = 0; i < n; ++i) {
      xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
      fp.col(i) = field.col(perm[static_cast<std::size_t>(i)]);
    }
    for (auto fn : {&attention_temp_broadcast, &attention_temp_outer}) {
      const auto a = fn(Tensor::from_matrix(x), p, TemperatureField(field, 0.01), {});
      const auto b = fn(Tensor::from_matrix(xp), p, TemperatureField(fp, 0.01), {});
      double err = 0.0;
      for (Index i = 0; i < n; ++i) {
        const Index pi = perm[static_cast<std::size_t>(i)];
        err = std::max(err, max_abs(b.values.row(i) - a.values.row(pi)));
        for (std::size_t h = 0; h < 2; ++h)
          for (Index j = 0; j < n; ++j)
            err = std::max(err, std::abs(b.weights[h](i, j) - a.weights[h](pi, perm[static_cast<std::size_t>(j)])));
      }
      t.expect(err <= 1e-12, [&] { return cat("trial ", trial, " deviation ", err); });
    }
  }
  return t.finish();
}

// --- model ------------------------------------------------------------------------

std::vector<int> random_tokens(Rng& rng, std::size_t n, Index vocab) {
  std::vector<int> t(n);
  for (auto& v : t) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab)));
  return t;
}

PropertyOutcome model_deterministic(const CheckContext& ctx) {
  Rng rng = stream(ctx, 70);
  Tally t;
  for (auto variant : {AttentionVariant::baseline, AttentionVariant::broadcast, AttentionVariant::outer}) {
    ModelConfig cfg = ctx.model;
    cfg.attention_variant = variant;
    const auto tokens = random_tokens(rng, 6, cfg.vocab_size);
    const auto params = ModelParams::init(cfg);
    const auto a = model_forward(params, tokens);
    const auto b = model_forward(ModelParams::init(cfg), tokens);
    t.expect(a.logits == b.logits, [&] { return cat(to_string(variant), ": logits differ between runs"); });
    // Temperature scaling of the logits never changes the prediction.
    Matrix raw = a.hidden * params.out_w;
    raw.rowwise() += params.out_b;
    for (Index i = 0; i < raw.rows(); ++i) {
      Index raw_arg = 0, scaled_arg = 0;
      raw.row(i).maxCoeff(&raw_arg);
      a.logits.row(i).maxCoeff(&scaled_arg);
      t.expect(raw_arg == scaled_arg, [&] { return cat(to_string(variant), ": argmax moved at row ", i); });
    }
  }
  return t.finish();
}

PropertyOutcome model_modulation_live(const CheckContext& ctx) {
  Rng rng = stream(ctx, 71);
  Tally t;
  ModelConfig base_cfg = ctx.model;
  base_cfg.attention_variant = AttentionVariant::baseline;
  ModelConfig mod_cfg = ctx.model;
  mod_cfg.attention_variant = AttentionVariant::broadcast;
  const auto tokens = random_tokens(rng, 4, ctx.model.vocab_size);
  const auto base = ModelParams::init(base_cfg);
  const auto a = model_forward(base, tokens);
  const auto b = model_forward(ModelParams::init(mod_cfg), tokens);
  t.expect(max_abs(a.logits - b.logits) > 1e-6, [] { return std::string("broadcast variant matches baseline"); });
  if (ctx.model.layers > 1) {
    // In the baseline only the last field scales the logits.
    auto perturbed = base;
    perturbed.blocks[0].temp.b_t.array() += 1.0;
    const auto c = model_forward(perturbed, tokens);
    t.expect(a.logits == c.logits, [] { return std::string("baseline logits depend on an inner field"); });
    t.expect(max_abs(a.fields[0].values() - c.fields[0].values()) > 1e-3,
             [] { return std::string("perturbation did not reach the field"); });
  }
  return t.finish();
}

// --- dynamics ---------------------------------------------------------------------

FieldMap linear_contraction(double factor) {
  return [factor](const Matrix& t) { return Matrix((0.5 + factor * (t.array() - 0.5)).matrix()); };
}

PropertyOutcome residuals_monotone(const CheckContext& ctx) {
  Rng rng = stream(ctx, 6);
  Tally t;
  int contractive = 0;
  for (int trial = 0; trial < 30; ++trial) {
    EvolutionConfig cfg;
    cfg.mix = rng.uniform(0.1, 1.0);
    cfg.gain = rng.uniform(-3.0, 3.0);
    cfg.w_activation = rng.normal_matrix(2, 3, 1.0);
    const Matrix x = rng.normal_matrix(4, 3, 1.0);
    const FieldMap update = [&](const Matrix& m) {
      Rng unused(0);
      return evolve_layer(TemperatureField(m, 0.01), Vector(), x, cfg, unused).values();
    };
    const double l_hat = estimate_contraction(update, 20, 7 + static_cast<std::uint64_t>(trial), 2, 4);
    t.expect(std::isfinite(l_hat), [&] { return cat("trial ", trial, " contraction estimate not finite"); });
    if (!(l_hat < 1.0)) continue;
    ++contractive;
    const auto r = iterate_to_fixed_point(update, rng.uniform_matrix(2, 4, 0.01, 0.99), 1e-12, 500);
    for (std::size_t k = 2; k < r.residuals.size(); ++k)
      t.expect(r.residuals[k] <= r.residuals[k - 1] + 1e-12, [&] { return cat("trial ", trial, " step ", k); });
  }
  return t.finish(cat(contractive, " contractive maps checked"));
}

PropertyOutcome contraction_error_bound(const CheckContext& ctx) {
  Rng rng = stream(ctx, 8);
  Tally t;
  for (double factor : {0.3, 0.6, 0.9, 0.93}) {
    const FieldMap update = linear_contraction(factor);
    const double l_hat = estimate_contraction(update, 10, 3, 2, 3);
    const Matrix start = rng.uniform_matrix(2, 3, 0.01, 0.99);
    const Matrix fixed = Matrix::Constant(2, 3, 0.5);
    // Deeper than 1e-6 the iterates sit a few ulp from 0.5 and rounding exceeds the 1e-9 slack.
    const auto r = iterate_to_fixed_point(update, start, 1e-6, 2000);
    const double e0 = (start - fixed).norm();
    for (std::size_t k = 0; k < r.iterates.size(); ++k) {
      const double err = (r.iterates[k] - fixed).norm();
      const double bound = std::pow(l_hat, static_cast<double>(k)) * e0 * (1 + 1e-9);
      t.expect(err <= bound, [&] { return cat("factor ", factor, " step ", k, " error ", err, " bound ", bound); });
    }
  }
  return t.finish();
}

PropertyOutcome iterations_scale_with_log_tolerance(const CheckContext&) {
  Tally t;
  const Matrix start = Matrix::Constant(1, 4, 0.95);
  for (double factor : {0.5, 0.8, 0.9}) {
    const auto coarse = iterate_to_fixed_point(linear_contraction(factor), start, 1e-4, 10000);
    const auto fine = iterate_to_fixed_point(linear_contraction(factor), start, 1e-8, 10000);
    const double r0 = coarse.residuals[0];
    const double predicted = std::log(r0 / 1e-8) / std::log(r0 / 1e-4) * static_cast<double>(coarse.iterations);
    t.expect(std::abs(static_cast<double>(fine.iterations) - predicted) <= 2.0,
             [&] { return cat("factor ", factor, " iterations ", fine.iterations, " predicted ", predicted); });
  }
  return t.finish();
}

PropertyOutcome noisy_iterates_stay_in_band(const CheckContext& ctx) {
  Rng rng = stream(ctx, 9);
  Tally t;
  for (int trial = 0; trial < 20; ++trial) {
    EvolutionConfig cfg;
    cfg.mix = 1.0;
    cfg.gain = rng.uniform(-1.5, 1.5);  // Lipschitz at most |gain| / 4 < 0.5
    cfg.bias = rng.normal_matrix(1, 2, 1.0);
    cfg.noise_bound = 0.02;
    EvolutionConfig clean = cfg;
    clean.noise_bound = 0.0;
    Rng unused(0);
    const FieldMap clean_map = [&](const Matrix& m) {
      return evolve_layer(TemperatureField(m, 0.01), Vector(), Matrix(), clean, unused).values();
    };
    const Matrix fixed = iterate_to_fixed_point(clean_map, Matrix::Constant(2, 5, 0.5), 1e-14, 1000).iterates.back();
    Rng noise(100 + static_cast<std::uint64_t>(trial) + ctx.seed);
    TemperatureField field(rng.uniform_matrix(2, 5, 0.01, 0.99), 0.01);
    bool entered = false;
    for (int step = 0; step < 200; ++step) {
      field = evolve_layer(field, Vector(), Matrix(), cfg, noise);
      const double dist = (field.values() - fixed).norm();
      if (dist <= 2 * cfg.noise_bound) entered = true;
      if (entered)
        t.expect(dist <= 2 * cfg.noise_bound, [&] { return cat("trial ", trial, " step ", step, " left the band"); });
    }
    t.expect(entered, [&] { return cat("trial ", trial, " never reached the band"); });
  }
  return t.finish();
}

// --- gsot -------------------------------------------------------------------------

ModelParams gsot_model(std::uint64_t seed, double widen) {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.d_ff = 8;
  cfg.vocab_size = 6;
  cfg.d_c = 4;
  cfg.seed = seed;
  auto p = ModelParams::init(cfg);
  // A wider head spreads the token summaries over the band.
  for (auto& b : p.blocks) b.temp.w_t *= widen;
  return p;
}

PropertyOutcome raising_threshold_shrinks_active_set(const CheckContext& ctx) {
  Rng rng = stream(ctx, 7);
  Tally t;
  for (int inst = 0; inst < 100; ++inst) {
    const auto p = gsot_model(rng.next_u64(), 40.0);
    const auto u = TokenUniverse::from_model(p, 4, rng.next_u64());
    const auto tokens = random_tokens(rng, 3 + rng.below(6), 6);
    const Vector context = sequence_context(p, tokens);
    GsotConfig lo;
    lo.tau_p = rng.uniform(0.02, 0.9);
    GsotConfig hi = lo;
    hi.tau_p = rng.uniform(lo.tau_p, 0.98);
    const auto a = integrated_token_processing(tokens, context, u, p, lo).active_primary;
    const auto b = integrated_token_processing(tokens, context, u, p, hi).active_primary;
    t.expect(std::includes(a.begin(), a.end(), b.begin(), b.end()), [&] { return cat("instance ", inst); });
  }
  return t.finish();
}

PropertyOutcome rank_schedule_bound(const CheckContext& ctx) {
  Rng rng = stream(ctx, 21);
  Tally t;
  for (int inst = 0; inst < 100; ++inst) {
    const auto p = gsot_model(rng.next_u64(), 8.0);
    const auto u = TokenUniverse::from_model(p, 4, rng.next_u64());
    GsotConfig cfg;
    cfg.steps = 2 + static_cast<int>(rng.below(4));
    cfg.tau_p = 0.02;
    cfg.tau_h = 0.3;
    cfg.tau_backtrack = rng.uniform(0.05, 0.6);
    const auto n = static_cast<std::size_t>(cfg.steps) + rng.below(12);
    const auto tokens = random_tokens(rng, n, 6);
    try {
      const auto r = gsot_pipeline(tokens, u, p, cfg);
      const auto report = active_set_schedule_check(r.trace, static_cast<Index>(n), cfg.steps);
      t.expect(report.satisfied, [&] { return cat("instance ", inst, " n ", n, " K ", cfg.steps); });
    } catch (const EmptyPathError& e) {
      t.expect(false, [&] { return cat("instance ", inst, ": ", e.what()); });
    }
  }
  return t.finish("100 instances");
}

PropertyOutcome path_selection_is_argmin(const CheckContext& ctx) {
  Rng rng = stream(ctx, 33);
  Tally t;
  const PathLoss abs_loss = [](const Vector& out, int label) { return std::abs(out(0) - label); };
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<LabeledInstance> data;
    for (int i = 0; i < 5; ++i) data.push_back({{static_cast<int>(rng.below(10))}, static_cast<int>(rng.below(20))});
    std::vector<ReasoningPath> paths;
    const auto count = 1 + rng.below(6);
    for (std::uint64_t k = 0; k < count; ++k) {
      // Small integer slopes make exact ties common.
      const double slope = static_cast<double>(rng.below(3));
      const int id = static_cast<int>(rng.below(100));
      paths.push_back({id, {"scale"}, [slope](std::span<const int> x) { return Vector::Constant(1, slope * x[0]); }});
    }
    const auto pick = select_path(paths, data, abs_loss);
    std::size_t best = 0;
    double best_loss = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < paths.size(); ++k) {
      double total = 0.0;
      for (const auto& d : data) total += abs_loss(paths[k].run(d.input), d.label);
      const double loss = total / static_cast<double>(data.size());
      if (loss < best_loss || (loss == best_loss && paths[k].id < paths[best].id)) {
        best = k;
        best_loss = loss;
      }
    }
    t.expect(pick.best_id == paths[best].id, [&] { return cat("trial ", trial, " picked ", pick.best_id); });
  }
  return t.finish();
}

PropertyOutcome pipeline_deterministic(const CheckContext& ctx) {
  Rng rng = stream(ctx, 34);
  Tally t;
  for (int inst = 0; inst < 10; ++inst) {
    const auto p = gsot_model(rng.next_u64(), 8.0);
    const auto u = TokenUniverse::from_model(p, 4, rng.next_u64());
    const auto tokens = random_tokens(rng, 8, 6);
    GsotConfig cfg;
    cfg.tau_p = 0.02;
    const auto a = gsot_pipeline(tokens, u, p, cfg);
    const auto b = gsot_pipeline(tokens, u, p, cfg);
    t.expect(a.trace.to_jsonl() == b.trace.to_jsonl() && a.logits == b.logits,
             [&] { return cat("instance ", inst, " differs between runs"); });
  }
  return t.finish();
}

// --- training ---------------------------------------------------------------------

PropertyOutcome total_loss_dominates_task(const CheckContext& ctx) {
  Rng rng = stream(ctx, 1);
  Tally t;
  for (int i = 0; i < 200; ++i) {
    TrainConfig cfg;
    cfg.lambda_t = rng.uniform(0.0, 3.0);
    cfg.lambda_s = rng.uniform(0.0, 3.0);
    const TemperatureField f(rng.uniform_matrix(2, 4, 0.01, 0.99), 0.01);
    const double task = rng.uniform(0.0, 5.0);
    const double total = total_loss(task, f, stability_term(rng.uniform(0.0, 2.0), 0.5), cfg);
    t.expect(total >= task, [&] { return cat("draw ", i, " total ", total, " < task ", task); });
  }
  return t.finish();
}

PropertyOutcome schedule_nonincreasing_and_clipped(const CheckContext& ctx) {
  Rng rng = stream(ctx, 2);
  Tally t;
  for (int i = 0; i < 100; ++i) {
    TrainConfig cfg;
    cfg.eta0 = rng.uniform(0.001, 1.0);
    cfg.t0 = rng.uniform(1.0, 1000.0);
    cfg.clip_lo = rng.uniform(0.01, 1.0);
    cfg.clip_hi = cfg.clip_lo + rng.uniform(0.0, 3.0);
    const double g = rng.uniform(0.0, 5.0);
    double prev = lr_schedule(1, g, cfg);
    for (int step = 2; step < 3000; step += 7) {
      const double lr = lr_schedule(step, g, cfg);
      const double factor = lr / (cfg.eta0 * std::min(1.0, std::sqrt(cfg.t0 / step)));
      t.expect(lr <= prev && factor >= cfg.clip_lo * (1 - 1e-12) && factor <= cfg.clip_hi * (1 + 1e-12),
               [&] { return cat("draw ", i, " step ", step); });
      prev = lr;
    }
  }
  return t.finish();
}

PropertyOutcome training_deterministic(const CheckContext& ctx) {
  TaskSpec spec;
  spec.kind = TaskKind::copy;
  spec.alphabet = 6;
  spec.length = 5;
  spec.count = 16;
  spec.seed = ctx.seed;
  const auto data = make_task(spec);
  ModelConfig mc;
  mc.d_model = 8;
  mc.heads = 2;
  mc.layers = 1;
  mc.d_ff = 16;
  mc.vocab_size = task_vocab_size(spec);
  mc.seed = ctx.seed;
  TrainConfig tc;
  tc.steps = 10;
  tc.batch = 4;
  tc.seed = ctx.seed;
  auto a = ModelParams::init(mc);
  auto b = ModelParams::init(mc);
  const auto ra = train(a, data, tc);
  const auto rb = train(b, data, tc);
  Tally t;
  t.expect(metrics_csv(ra.history) == metrics_csv(rb.history), [] { return std::string("metrics differ"); });
  t.expect(a.tok_emb == b.tok_emb && a.out_w == b.out_w, [] { return std::string("parameters differ"); });
  return t.finish();
}

std::vector<Property> build_registry() {
  const auto gradients = [](const char* module) {
    return [module](const CheckContext&) { return from_gradchecks(module); };
  };
  return {
      {"numerics", "matmul_associative", matmul_associative},
      {"numerics", "softmax_rows_normalized", softmax_rows_normalized},
      {"numerics", "rng_reproducible", rng_reproducible},
      {"numerics", "op_gradients", gradients("numerics")},
      {"temperature", "bounded_field", temperature_bounded},
      {"temperature", "zero_head_is_neutral", zero_head_is_neutral},
      {"temperature", "collapse_penalty_centered", collapse_penalty_centered},
      {"temperature", "clipped_gradient_bounded", clipped_gradient_bounded},
      {"temperature", "multiscale_contracts", multiscale_contracts},
      {"temperature", "adaptive_bounded_variation", adaptive_bounded_variation},
      {"temperature", "head_gradients", gradients("temperature")},
      {"attention", "row_stochastic", attention_row_stochastic},
      {"attention", "identity_reduction", attention_identity_reduction},
      {"attention", "monotone_suppression", attention_monotone_suppression},
      {"attention", "permutation_equivariant", attention_permutation_equivariant},
      {"attention", "gradients", gradients("attention")},
      {"model", "deterministic_forward", model_deterministic},
      {"model", "modulation_live", model_modulation_live},
      {"model", "full_model_gradients", gradients("model")},
      {"dynamics", "residuals_monotone", residuals_monotone},
      {"dynamics", "contraction_error_bound", contraction_error_bound},
      {"dynamics", "log_tolerance_scaling", iterations_scale_with_log_tolerance},
      {"dynamics", "noisy_band", noisy_iterates_stay_in_band},
      {"gsot", "threshold_monotone", raising_threshold_shrinks_active_set},
      {"gsot", "rank_schedule_bound", rank_schedule_bound},
      {"gsot", "path_selection_argmin", path_selection_is_argmin},
      {"gsot", "pipeline_deterministic", pipeline_deterministic},
      {"training", "total_loss_dominates_task", total_loss_dominates_task},
      {"training", "schedule_nonincreasing_clipped", schedule_nonincreasing_and_clipped},
      {"training", "deterministic_run", training_deterministic},
  };
}

}  // namespace

const std::vector<Property>& property_registry() {
  static const std::vector<Property> registry = build_registry();
  return registry;
}

}  // namespace ttm
