#include "ttm/attention.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "ttm/error.hpp"
#include "ttm/numerics/ops.hpp"

namespace ttm {

namespace {

constexpr double kMasked = -1e30;

std::string dims(Index r, Index c) { return "[" + std::to_string(r) + "x" + std::to_string(c) + "]"; }

void expect_shape(const Matrix& m, Index rows, Index cols, const char* name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ConfigError(std::string(name) + " is " + dims(m.rows(), m.cols()) + ", expected " + dims(rows, cols));
  }
}

Tensor stack(const std::vector<Matrix>& heads) {
  if (heads.empty()) throw DimensionError("no attention heads to stack");
  const auto n = static_cast<std::size_t>(heads.front().rows());
  const auto m = static_cast<std::size_t>(heads.front().cols());
  std::vector<double> flat;
  flat.reserve(heads.size() * n * m);
  for (const auto& h : heads) flat.insert(flat.end(), h.data(), h.data() + h.size());
  return Tensor({heads.size(), n, m}, std::move(flat));
}

Matrix causal_mask(Index n) {
  Matrix mask = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) mask(i, j) = kMasked;
  return mask;
}

AttentionOutput run(const Tensor& x, const AttentionParams& params, Modulation mode, const Matrix* field,
                    const AttentionOptions& opts) {
  params.validate();
  if (x.rank() != 2) throw DimensionError("attention input must be n x d_model, got " + x.shape_string());
  Tape tape;
  const Var xv = tape.constant(x.matrix());
  const AttentionVars p = attach(tape, params, false);
  std::optional<Var> fv;
  if (field) fv = tape.constant(*field);
  std::vector<Var> logits;
  const auto weights = attention_weights(xv, p, mode, fv, opts, &logits);
  AttentionOutput out;
  out.values = attention_values(xv, p, weights).value();
  for (const auto& w : weights) out.weights.push_back(w.value());
  for (const auto& l : logits) out.pre_softmax.push_back(l.value());
  return out;
}

}  // namespace

void AttentionParams::validate() const {
  if (heads <= 0) throw ConfigError("attention needs at least one head");
  if (d_k <= 0) throw ConfigError("key dimension d_k must be positive");
  const Index d_model = w_q.rows();
  const Index inner = heads * d_k;
  if (inner > d_model) {
    throw ConfigError("heads * d_k = " + std::to_string(inner) + " exceeds d_model = " + std::to_string(d_model));
  }
  expect_shape(w_q, d_model, inner, "w_q");
  expect_shape(w_k, d_model, inner, "w_k");
  expect_shape(w_v, d_model, inner, "w_v");
  expect_shape(w_o, inner, d_model, "w_o");
  if (!w_q.allFinite() || !w_k.allFinite() || !w_v.allFinite() || !w_o.allFinite()) {
    throw ConfigError("attention parameters must be finite");
  }
}

AttentionParams AttentionParams::random(Rng& rng, Index d_model, Index heads, Index d_k) {
  AttentionParams p;
  p.heads = heads;
  p.d_k = d_k;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d_model));
  p.w_q = rng.normal_matrix(d_model, heads * d_k, sd);
  p.w_k = rng.normal_matrix(d_model, heads * d_k, sd);
  p.w_v = rng.normal_matrix(d_model, heads * d_k, sd);
  p.w_o = rng.normal_matrix(heads * d_k, d_model, 1.0 / std::sqrt(static_cast<double>(heads * d_k)));
  return p;
}

Tensor AttentionOutput::weights_tensor() const { return stack(weights); }
Tensor AttentionOutput::pre_softmax_tensor() const { return stack(pre_softmax); }

AttentionVars attach(Tape& tape, const AttentionParams& params, bool trainable) {
  const auto make = [&](const Matrix& m) { return trainable ? tape.leaf(m) : tape.constant(m); };
  return {make(params.w_q), make(params.w_k), make(params.w_v), make(params.w_o), params.heads, params.d_k};
}

std::vector<Var> attention_weights(Var x, const AttentionVars& p, Modulation mode, std::optional<Var> field,
                                   const AttentionOptions& opts, std::vector<Var>* logits_out) {
  if (p.d_k <= 0) throw ConfigError("key dimension d_k must be positive");
  if (x.cols() != p.w_q.rows()) {
    throw DimensionError("attention input is " + dims(x.rows(), x.cols()) + ", projections expect width " +
                         std::to_string(p.w_q.rows()));
  }
  const Index n = x.rows();
  if (mode != Modulation::none) {
    if (!field) throw ConfigError("temperature-modulated attention needs a field");
    if (field->rows() != p.heads || field->cols() != n) {
      throw DimensionError("temperature field is " + dims(field->rows(), field->cols()) + ", attention needs " +
                           dims(p.heads, n));
    }
  }
  const Var q = matmul(x, p.w_q);
  const Var k = matmul(x, p.w_k);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(p.d_k));
  const Matrix mask = opts.causal ? causal_mask(n) : Matrix();

  std::vector<Var> weights;
  weights.reserve(static_cast<std::size_t>(p.heads));
  for (Index h = 0; h < p.heads; ++h) {
    const Var qh = col_block(q, h * p.d_k, p.d_k);
    const Var kh = col_block(k, h * p.d_k, p.d_k);
    Var s = scale(matmul(qh, transpose(kh)), inv_sqrt);
    if (mode != Modulation::none) {
      const Var t = row_block(*field, h, 1);
      if (mode == Modulation::outer) {
        s = scale_columns(scale_rows(s, t), t);
      } else {
        s = opts.row_axis ? scale_rows(s, t) : scale_columns(s, t);
      }
    }
    if (opts.causal) s = add_constant(s, mask);
    if (logits_out) logits_out->push_back(s);
    weights.push_back(softmax_rows(s));
  }
  return weights;
}

Var attention_values(Var x, const AttentionVars& p, const std::vector<Var>& weights) {
  if (static_cast<Index>(weights.size()) != p.heads) throw DimensionError("one weight matrix per head expected");
  const Var v = matmul(x, p.w_v);
  std::vector<Var> heads;
  heads.reserve(weights.size());
  for (Index h = 0; h < p.heads; ++h) heads.push_back(matmul(weights[static_cast<std::size_t>(h)], col_block(v, h * p.d_k, p.d_k)));
  return matmul(heads.size() == 1 ? heads.front() : hconcat(heads), p.w_o);
}

std::vector<Var> residual_blend(const std::vector<Var>& base, const std::vector<Var>& modulated, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("blend alpha must lie in [0, 1]");
  if (base.size() != modulated.size()) throw DimensionError("blend inputs have different head counts");
  if (alpha == 1.0) return base;
  if (alpha == 0.0) return modulated;
  std::vector<Var> out;
  out.reserve(base.size());
  for (std::size_t h = 0; h < base.size(); ++h) {
    out.push_back(normalize_rows(add(scale(base[h], alpha), scale(modulated[h], 1.0 - alpha))));
  }
  return out;
}

AttentionOutput attention_baseline(const Tensor& x, const AttentionParams& params, const AttentionOptions& opts) {
  return run(x, params, Modulation::none, nullptr, opts);
}

AttentionOutput attention_temp_broadcast(const Tensor& x, const AttentionParams& params, const TemperatureField& field,
                                         const AttentionOptions& opts) {
  return run(x, params, Modulation::broadcast, &field.values(), opts);
}

AttentionOutput attention_temp_outer(const Tensor& x, const AttentionParams& params, const TemperatureField& field,
                                     const AttentionOptions& opts) {
  return run(x, params, Modulation::outer, &field.values(), opts);
}

std::vector<Matrix> residual_blend(const std::vector<Matrix>& base, const std::vector<Matrix>& modulated, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("blend alpha must lie in [0, 1]");
  if (base.size() != modulated.size()) throw DimensionError("blend inputs have different head counts");
  if (alpha == 1.0) return base;
  if (alpha == 0.0) return modulated;
  std::vector<Matrix> out;
  out.reserve(base.size());
  for (std::size_t h = 0; h < base.size(); ++h) {
    if (base[h].rows() != modulated[h].rows() || base[h].cols() != modulated[h].cols()) {
      throw DimensionError("blend inputs differ in shape at head " + std::to_string(h));
    }
    Matrix m = alpha * base[h] + (1.0 - alpha) * modulated[h];
    m.array().colwise() /= m.rowwise().sum().array();
    out.push_back(std::move(m));
  }
  return out;
}

double interference_ratio(const std::vector<Matrix>& weights, const Matrix& field) {
  if (static_cast<Index>(weights.size()) != field.rows()) throw DimensionError("field needs one row per head");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t h = 0; h < weights.size(); ++h) {
    const Matrix& a = weights[h];
    if (a.cols() != field.cols()) throw DimensionError("field length does not match attention width");
    num += (a.array().rowwise() * field.row(static_cast<Index>(h)).array()).square().sum();
    den += a.squaredNorm();
  }
  if (!(den > 0.0)) throw NumericError("interference ratio undefined for zero attention weights");
  return std::sqrt(num / den);
}

double interference_ratio(const std::vector<Matrix>& weights, const TemperatureField& field) {
  return interference_ratio(weights, field.values());
}

std::vector<Matrix> split_heads(const Tensor& weights) {
  if (weights.rank() != 3) throw DimensionError("expected heads x n x m, got " + weights.shape_string());
  const auto n = static_cast<Index>(weights.extent(1));
  const auto m = static_cast<Index>(weights.extent(2));
  std::vector<Matrix> out;
  const double* p = weights.values().data();
  for (std::size_t h = 0; h < weights.extent(0); ++h, p += n * m) out.push_back(Eigen::Map<const Matrix>(p, n, m));
  return out;
}

}  // namespace ttm
