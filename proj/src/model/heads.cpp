#include <string>
#include <vector>

#include "ttm/error.hpp"
#include "ttm/model.hpp"
#include "ttm/numerics/kernels.hpp"

namespace ttm {

namespace {

Matrix rows_of(const Tensor& t, Index width, const char* what) {
  if (t.rank() != 2 || static_cast<Index>(t.extent(1)) != width) {
    throw DimensionError(std::string(what) + " expects rows of width " + std::to_string(width) + ", got " +
                         t.shape_string());
  }
  return t.matrix();
}

}  // namespace

Tensor context_processor(const Tensor& x, const ContextProcessorParams& params) {
  const Index d = params.lin_w.rows();
  if (params.lin_w.cols() != d || params.lin_b.size() != d || params.ln_gain.size() != d ||
      params.ln_bias.size() != d || params.w_c.rows() != 3 * d) {
    throw DimensionError("context processor parameters are inconsistent with width " + std::to_string(d));
  }
  const Matrix a = rows_of(x, d, "context processor");
  Matrix stages(a.rows(), 3 * d);
  Matrix lin = a * params.lin_w;
  lin.rowwise() += params.lin_b;
  stages.leftCols(d) = lin;
  stages.middleCols(d, d) = kernels::layer_norm_rows(a, params.ln_gain, params.ln_bias, kLayerNormEps);
  stages.rightCols(d) = a.unaryExpr([](double v) { return kernels::gelu(v); });
  return Tensor::from_matrix(stages * params.w_c);
}

Tensor token_importance(const Tensor& ctx, const ImportanceParams& params) {
  if (params.w.cols() != 1) throw DimensionError("importance weights must be a single column");
  const Matrix c = rows_of(ctx, params.w.rows(), "token importance");
  Vector z = c * params.w;
  z.array() += params.b;
  std::vector<double> out(static_cast<std::size_t>(z.size()));
  for (Index i = 0; i < z.size(); ++i) out[static_cast<std::size_t>(i)] = kernels::sigmoid(z(i));
  return Tensor::from_vector(std::move(out));
}

Tensor reasoning_head(const Tensor& attn_out, const TemperatureField& field, const ReasoningHeadParams& params) {
  const Index heads = field.head_count();
  const Index width = params.w.rows() - heads;
  if (width <= 0) throw DimensionError("reasoning projection is narrower than the head count");
  if (params.b.size() != params.w.cols()) throw DimensionError("reasoning bias does not match projection width");
  const Matrix a = rows_of(attn_out, width, "reasoning head");
  if (a.rows() != field.seq_len()) throw DimensionError("field length differs from attention output rows");
  Matrix joined(a.rows(), width + heads);
  joined.leftCols(width) = a;
  joined.rightCols(heads) = field.values().transpose();
  Matrix z = joined * params.w;
  z.rowwise() += params.b;
  return Tensor::from_matrix(kernels::softmax_rows(z));
}

}  // namespace ttm
