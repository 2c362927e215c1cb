#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "ttm/error.hpp"
#include "ttm/numerics/kernels.hpp"
#include "ttm/numerics/ops.hpp"
#include "ttm/temperature.hpp"

namespace ttm {

namespace {
constexpr double kBandSlack = 1e-12;
}

TemperatureField::TemperatureField(Matrix values, double eps_min) : values_(std::move(values)), eps_min_(eps_min) {
  if (!(eps_min_ >= 0.0 && eps_min_ < 0.5)) throw ConfigError("eps_min must lie in [0, 0.5)");
  if (values_.size() == 0) throw DimensionError("temperature field must have at least one head and one token");
  if (!values_.allFinite()) throw NumericError("temperature field has non-finite entries");
  const double lo = eps_min_;
  const double hi = 1.0 - eps_min_;
  if (values_.minCoeff() < lo - kBandSlack || values_.maxCoeff() > hi + kBandSlack) {
    throw NumericError("temperature outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  values_ = values_.cwiseMax(lo).cwiseMin(hi);
}

TemperatureField TemperatureField::constant(Index heads, Index tokens, double value, double eps_min) {
  return TemperatureField(Matrix::Constant(heads, tokens, value), eps_min);
}

std::string TemperatureField::to_csv() const {
  std::string out = "head,token,value\n";
  char buf[96];
  for (Index h = 0; h < values_.rows(); ++h) {
    for (Index i = 0; i < values_.cols(); ++i) {
      std::snprintf(buf, sizeof buf, "%td,%td,%.17g\n", h, i, values_(h, i));
      out += buf;
    }
  }
  return out;
}

void TemperatureHeadParams::validate() const {
  if (!(eps_min > 0.0 && eps_min < 0.5)) throw ConfigError("eps_min must lie in (0, 0.5)");
  if (w_t.size() == 0) throw ConfigError("temperature projection is empty");
  if (b_t.size() != w_t.rows()) {
    throw ConfigError("temperature bias has " + std::to_string(b_t.size()) + " entries for " +
                      std::to_string(w_t.rows()) + " heads");
  }
  if (w_c && w_c->rows() != w_t.rows()) throw ConfigError("context weights must have one row per head");
  if (!w_t.allFinite() || !b_t.allFinite() || (w_c && !w_c->allFinite())) {
    throw ConfigError("temperature parameters must be finite");
  }
}

namespace {

Matrix squash_matrix(const Matrix& logits, double eps) {
  return logits.unaryExpr([eps](double z) { return kernels::squash(z, eps); });
}

Matrix activations_for(const Tensor& activations, const TemperatureHeadParams& params) {
  if (activations.rank() != 2) throw DimensionError("activations must be n x d_model, got " + activations.shape_string());
  if (static_cast<Index>(activations.extent(1)) != params.model_width()) {
    throw DimensionError("temperature projection expects width " + std::to_string(params.model_width()) +
                         ", activations are " + activations.shape_string());
  }
  return activations.matrix();
}

}  // namespace

Var temperature_field(Var activations, Var w_t, Var b_t, double eps_min) {
  return transpose(squash(add_row(matmul(activations, transpose(w_t)), b_t), eps_min));
}

TemperatureField compute_temperature(const Tensor& activations, const TemperatureHeadParams& params) {
  params.validate();
  const Matrix a = activations_for(activations, params);
  Matrix logits = params.w_t * a.transpose();
  logits.colwise() += params.b_t.transpose();
  return TemperatureField(squash_matrix(logits, params.eps_min), params.eps_min);
}

TemperatureField compute_temperature_ctx(const Tensor& activations, const Tensor& context,
                                         const TemperatureHeadParams& params, ContextMode mode) {
  params.validate();
  if (!params.w_c) throw ConfigError("context-conditioned temperature needs context weights");
  if (static_cast<Index>(context.size()) != params.w_c->cols()) {
    throw DimensionError("context has " + std::to_string(context.size()) + " entries, weights expect " +
                         std::to_string(params.w_c->cols()));
  }
  const Matrix a = activations_for(activations, params);
  Vector c = Eigen::Map<const Vector>(context.values().data(), static_cast<Index>(context.size()));
  Vector offset = *params.w_c * c + params.b_t.transpose();

  Matrix logits;
  if (mode == ContextMode::per_token) {
    logits = params.w_t * a.transpose();
  } else {
    Vector pooled = a.colwise().mean().transpose();
    logits = (params.w_t * pooled).replicate(1, a.rows());
  }
  logits.colwise() += offset;
  return TemperatureField(squash_matrix(logits, params.eps_min), params.eps_min);
}

double collapse_penalty(const TemperatureField& field, double lambda) {
  if (lambda < 0.0) throw ConfigError("collapse penalty weight must be non-negative");
  return lambda * (field.values().array() - 0.5).square().sum();
}

Var collapse_penalty(Var field, double lambda) {
  if (lambda < 0.0) throw ConfigError("collapse penalty weight must be non-negative");
  return scale(sum(square(shift(field, -0.5))), lambda);
}

CollapseReport detect_collapse(const TemperatureField& field, double eps) {
  if (!(eps > 0.0 && eps < 0.5)) throw ConfigError("collapse threshold must lie in (0, 0.5)");
  const auto& v = field.values().array();
  CollapseReport r;
  r.low_count = static_cast<std::size_t>((v < eps).count());
  r.high_count = static_cast<std::size_t>((v > 1.0 - eps).count());
  r.collapsed = r.low_count + r.high_count > 0;
  r.fraction = static_cast<double>(r.low_count + r.high_count) / static_cast<double>(v.size());
  r.min = v.minCoeff();
  r.max = v.maxCoeff();
  return r;
}

double default_clip_tau(Index d_k) {
  if (d_k <= 0) throw ConfigError("head width must be positive");
  return 1.0 / std::sqrt(static_cast<double>(d_k));
}

Tensor clip_temperature_grad(const Tensor& grad, double tau) {
  if (!(tau > 0.0)) throw ConfigError("clip threshold must be positive");
  std::vector<double> out(grad.values().begin(), grad.values().end());
  for (double& g : out) g = std::clamp(g, -tau, tau);
  return Tensor(grad.shape(), std::move(out));
}

NormalizedField normalize_temperature(const TemperatureField& field) {
  const Matrix& v = field.values();
  if (v.cols() < 2) return {field, Matrix::Zero(v.rows(), v.cols()), true};
  constexpr double kVarEps = 1e-12;
  Matrix z(v.rows(), v.cols());
  for (Index h = 0; h < v.rows(); ++h) {
    const double mu = v.row(h).mean();
    const double var = (v.row(h).array() - mu).square().mean();
    z.row(h) = (v.row(h).array() - mu) / std::sqrt(var + kVarEps);
  }
  return {TemperatureField(squash_matrix(z, field.eps_min()), field.eps_min()), std::move(z), false};
}

TemperatureHeadParams random_head(Rng& rng, Index heads, Index width, double weight_scale, double bias_scale,
                                  double eps_min) {
  TemperatureHeadParams p;
  p.w_t = rng.normal_matrix(heads, width, weight_scale);
  p.b_t = rng.normal_matrix(1, heads, bias_scale);
  p.eps_min = eps_min;
  return p;
}

}  // namespace ttm
