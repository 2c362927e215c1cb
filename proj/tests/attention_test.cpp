#include <gtest/gtest.h>

#include <cmath>

#include "ttm/attention.hpp"
#include "ttm/error.hpp"
#include "ttm/numerics.hpp"

using namespace ttm;

namespace {

Matrix mat(Index r, Index c, std::initializer_list<double> v) {
  Matrix m(r, c);
  auto it = v.begin();
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = *it++;
  return m;
}

AttentionParams single_head(Matrix wq, Matrix wk, Matrix wv, Matrix wo, Index d_k) {
  AttentionParams p;
  p.w_q = std::move(wq);
  p.w_k = std::move(wk);
  p.w_v = std::move(wv);
  p.w_o = std::move(wo);
  p.heads = 1;
  p.d_k = d_k;
  return p;
}

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

double row_sum_error(const std::vector<Matrix>& weights) {
  double worst = 0.0;
  for (const auto& w : weights) worst = std::max(worst, (w.rowwise().sum().array() - 1.0).abs().maxCoeff());
  return worst;
}

// Straightforward single-head attention in long double.
struct Oracle {
  std::vector<std::vector<long double>> weights;
  std::vector<std::vector<long double>> out;
};

Oracle oracle(const Matrix& x, const AttentionParams& p, const std::vector<double>& row_t,
              const std::vector<double>& col_t) {
  const Index n = x.rows();
  const Index d = x.cols();
  const Index dk = p.d_k;
  auto proj = [&](const Matrix& w) {
    std::vector<std::vector<long double>> r(n, std::vector<long double>(dk, 0.0L));
    for (Index i = 0; i < n; ++i)
      for (Index c = 0; c < dk; ++c)
        for (Index t = 0; t < d; ++t) r[i][c] += static_cast<long double>(x(i, t)) * w(t, c);
    return r;
  };
  const auto q = proj(p.w_q), k = proj(p.w_k), v = proj(p.w_v);
  Oracle o;
  o.weights.assign(n, std::vector<long double>(n));
  for (Index i = 0; i < n; ++i) {
    std::vector<long double> s(n);
    long double mx = -1e300L;
    for (Index j = 0; j < n; ++j) {
      long double dot = 0.0L;
      for (Index c = 0; c < dk; ++c) dot += q[i][c] * k[j][c];
      s[j] = dot / std::sqrt(static_cast<long double>(dk)) * row_t[i] * col_t[j];
      mx = std::max(mx, s[j]);
    }
    long double z = 0.0L;
    for (Index j = 0; j < n; ++j) z += std::exp(s[j] - mx);
    for (Index j = 0; j < n; ++j) o.weights[i][j] = std::exp(s[j] - mx) / z;
  }
  o.out.assign(n, std::vector<long double>(d, 0.0L));
  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < d; ++c)
      for (Index j = 0; j < n; ++j)
        for (Index t = 0; t < dk; ++t) o.out[i][c] += o.weights[i][j] * v[j][t] * p.w_o(t, c);
  return o;
}

}  // namespace

TEST(Baseline, SingleTokenWeightsAreOne) {
  Rng rng(1);
  const auto p = AttentionParams::random(rng, 8, 2, 4);
  const auto out = attention_baseline(Tensor::from_matrix(rng.normal_matrix(1, 8, 1.0)), p);
  ASSERT_EQ(out.weights.size(), 2u);
  for (const auto& w : out.weights) EXPECT_EQ(w(0, 0), 1.0);
}

TEST(Baseline, UniformLogitsAverageValueRows) {
  // Zero queries make every logit 0; identity value/output projections.
  const auto p = single_head(Matrix::Zero(3, 3), Matrix::Identity(3, 3), Matrix::Identity(3, 3),
                             Matrix::Identity(3, 3), 3);
  const Matrix x = mat(4, 3, {1, 2, 3, 4, 5, 6, 7, 8, 9, -1, 0, 2});
  const auto out = attention_baseline(Tensor::from_matrix(x), p);
  for (Index i = 0; i < 4; ++i) EXPECT_LT(max_abs(out.values.row(i) - x.colwise().mean()), 1e-14);
}

TEST(Baseline, HandCaseMatchesStepOracle) {
  const auto p = single_head(mat(2, 2, {0.5, -0.2, 0.1, 0.8}), mat(2, 2, {1.0, 0.3, -0.4, 0.6}),
                             mat(2, 2, {0.2, 0.7, -0.5, 0.1}), mat(2, 2, {1.0, 0.5, 0.0, 2.0}), 2);
  const Matrix x = mat(3, 2, {1.0, 2.0, -0.5, 0.3, 0.8, -1.2});
  const auto out = attention_baseline(Tensor::from_matrix(x), p);
  const auto o = oracle(x, p, {1, 1, 1}, {1, 1, 1});
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 3; ++j) EXPECT_NEAR(out.weights[0](i, j), static_cast<double>(o.weights[i][j]), 1e-12);
    for (Index c = 0; c < 2; ++c) EXPECT_NEAR(out.values(i, c), static_cast<double>(o.out[i][c]), 1e-12);
  }
  EXPECT_EQ(out.weights_tensor().shape(), (Tensor::Shape{1, 3, 3}));
}

TEST(Baseline, InvalidParams) {
  Rng rng(2);
  auto p = AttentionParams::random(rng, 4, 1, 2);
  p.d_k = 0;
  EXPECT_THROW(attention_baseline(Tensor::zeros({2, 4}), p), ConfigError);
  auto wide = AttentionParams::random(rng, 4, 3, 2);
  EXPECT_THROW(wide.validate(), ConfigError);
  EXPECT_THROW(attention_baseline(Tensor::zeros({2, 5}), AttentionParams::random(rng, 4, 1, 2)), DimensionError);
}

TEST(Broadcast, UnitFieldIsBaselineBitForBit) {
  Rng rng(3);
  const auto p = AttentionParams::random(rng, 6, 2, 3);
  const Tensor x = Tensor::from_matrix(rng.normal_matrix(5, 6, 1.0));
  const auto base = attention_baseline(x, p);
  const auto unit = TemperatureField::constant(2, 5, 1.0, 0.0);
  const auto b = attention_temp_broadcast(x, p, unit);
  const auto o = attention_temp_outer(x, p, unit);
  EXPECT_EQ(b.values, base.values);
  EXPECT_EQ(o.values, base.values);
  for (std::size_t h = 0; h < 2; ++h) {
    EXPECT_EQ(b.weights[h], base.weights[h]);
    EXPECT_EQ(o.weights[h], base.weights[h]);
  }
}

TEST(Broadcast, ZeroLogitsStayUniform) {
  const auto p = single_head(Matrix::Zero(2, 2), Matrix::Identity(2, 2), Matrix::Identity(2, 2),
                             Matrix::Identity(2, 2), 2);
  const auto out = attention_temp_broadcast(Tensor::from_matrix(mat(3, 2, {1, 2, 3, 4, 5, 6})), p,
                                            TemperatureField::constant(1, 3, 0.3));
  EXPECT_LT((out.weights[0].array() - 1.0 / 3.0).abs().maxCoeff(), 1e-15);
}

TEST(Broadcast, TwoTokenClosedForm) {
  const auto p = single_head(mat(1, 1, {1.0}), mat(1, 1, {1.0}), mat(1, 1, {1.0}), mat(1, 1, {1.0}), 1);
  const Matrix x = mat(2, 1, {1.5, -0.7});
  const TemperatureField field(mat(1, 2, {0.9, 0.1}), 0.01);
  const auto out = attention_temp_broadcast(Tensor::from_matrix(x), p, field);
  for (Index i = 0; i < 2; ++i) {
    const long double s0 = x(i, 0) * x(0, 0) * 0.9L;
    const long double s1 = x(i, 0) * x(1, 0) * 0.1L;
    const long double w0 = 1.0L / (1.0L + std::exp(s1 - s0));
    EXPECT_NEAR(out.weights[0](i, 0), static_cast<double>(w0), 1e-15);
    EXPECT_NEAR(out.weights[0](i, 1), static_cast<double>(1.0L - w0), 1e-15);
    EXPECT_NEAR(out.values(i, 0), static_cast<double>(w0 * x(0, 0) + (1.0L - w0) * x(1, 0)), 1e-14);
  }
  const auto rows = attention_temp_broadcast(Tensor::from_matrix(x), p, field, {false, true});
  const auto o = oracle(x, p, {0.9, 0.1}, {1, 1});
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 2; ++j) EXPECT_NEAR(rows.weights[0](i, j), static_cast<double>(o.weights[i][j]), 1e-14);
}

TEST(Broadcast, FieldShapeMismatch) {
  Rng rng(4);
  const auto p = AttentionParams::random(rng, 4, 2, 2);
  EXPECT_THROW(attention_temp_broadcast(Tensor::zeros({3, 4}), p, TemperatureField::constant(2, 4, 0.5)), DimensionError);
  EXPECT_THROW(attention_temp_outer(Tensor::zeros({3, 4}), p, TemperatureField::constant(1, 3, 0.5)), DimensionError);
}

TEST(Outer, ConstantFieldScalesLogitsBySquare) {
  Rng rng(5);
  const auto p = AttentionParams::random(rng, 4, 1, 4);
  const Tensor x = Tensor::from_matrix(rng.normal_matrix(4, 4, 1.0));
  const double c = 0.6;
  const auto base = attention_baseline(x, p);
  const auto out = attention_temp_outer(x, p, TemperatureField::constant(1, 4, c));
  const Tensor expected = softmax_rows(Tensor::from_matrix(base.pre_softmax[0] * (c * c)));
  EXPECT_LT(max_abs(out.weights[0] - expected.matrix()), 1e-15);
}

TEST(Outer, TwoTokenOracle) {
  const auto p = single_head(mat(2, 1, {0.4, -0.3}), mat(2, 1, {1.1, 0.2}), mat(2, 1, {0.5, 0.5}),
                             mat(1, 2, {1.0, -1.0}), 1);
  const Matrix x = mat(2, 2, {1.0, 2.0, -1.5, 0.5});
  const TemperatureField field(mat(1, 2, {0.8, 0.3}), 0.01);
  const auto out = attention_temp_outer(Tensor::from_matrix(x), p, field);
  const auto o = oracle(x, p, {0.8, 0.3}, {0.8, 0.3});
  for (Index i = 0; i < 2; ++i) {
    for (Index j = 0; j < 2; ++j) EXPECT_NEAR(out.weights[0](i, j), static_cast<double>(o.weights[i][j]), 1e-14);
    for (Index c = 0; c < 2; ++c) EXPECT_NEAR(out.values(i, c), static_cast<double>(o.out[i][c]), 1e-14);
  }
}

TEST(Blend, Cases) {
  const std::vector<Matrix> a{mat(2, 2, {0.7, 0.3, 0.4, 0.6})};
  const std::vector<Matrix> b{mat(2, 2, {0.1, 0.9, 0.5, 0.5})};
  EXPECT_EQ(residual_blend(a, b, 1.0)[0], a[0]);
  EXPECT_EQ(residual_blend(a, b, 0.0)[0], b[0]);
  const auto m = residual_blend(a, b, 0.5)[0];
  EXPECT_NEAR(m(0, 0), 0.4, 1e-15);
  EXPECT_NEAR(m(0, 1), 0.6, 1e-15);
  EXPECT_NEAR(m(1, 0), 0.45, 1e-15);
  EXPECT_NEAR(m(1, 1), 0.55, 1e-15);

  const std::vector<Matrix> unnormalized{mat(1, 2, {0.2, 0.2})};
  const std::vector<Matrix> other{mat(1, 2, {0.6, 0.2})};
  const auto r = residual_blend(unnormalized, other, 0.5)[0];
  EXPECT_NEAR(r(0, 0), 0.4 / 0.6, 1e-15);
  EXPECT_THROW(residual_blend(a, b, 1.5), ConfigError);
  EXPECT_THROW(residual_blend(a, b, -0.1), ConfigError);
}

TEST(Interference, Cases) {
  Rng rng(6);
  const auto p = AttentionParams::random(rng, 4, 2, 2);
  const auto w = attention_baseline(Tensor::from_matrix(rng.normal_matrix(5, 4, 1.0)), p).weights;
  EXPECT_NEAR(interference_ratio(w, TemperatureField::constant(2, 5, 1.0, 0.0)), 1.0, 1e-15);
  EXPECT_NEAR(interference_ratio(w, TemperatureField::constant(2, 5, 0.5)), 0.5, 1e-15);

  const TemperatureField f(rng.uniform_matrix(2, 5, 0.01, 0.99), 0.01);
  long double num = 0.0L, den = 0.0L;
  for (Index h = 0; h < 2; ++h)
    for (Index i = 0; i < 5; ++i)
      for (Index j = 0; j < 5; ++j) {
        const long double a = w[h](i, j);
        num += (a * f(h, j)) * (a * f(h, j));
        den += a * a;
      }
  EXPECT_NEAR(interference_ratio(w, f), static_cast<double>(std::sqrt(num / den)), 1e-14);
  EXPECT_THROW(interference_ratio({Matrix::Zero(2, 2)}, Matrix::Ones(1, 2)), NumericError);
}

TEST(Causal, MaskKeepsRowsStochasticAndLowerTriangular) {
  Rng rng(7);
  const auto p = AttentionParams::random(rng, 4, 2, 2);
  const auto out = attention_baseline(Tensor::from_matrix(rng.normal_matrix(5, 4, 1.0)), p, {true, false});
  EXPECT_LT(row_sum_error(out.weights), 1e-12);
  for (const auto& w : out.weights)
    for (Index i = 0; i < 5; ++i)
      for (Index j = i + 1; j < 5; ++j) EXPECT_EQ(w(i, j), 0.0);
  EXPECT_EQ(out.weights[0](0, 0), 1.0);
}
