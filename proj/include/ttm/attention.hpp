#pragma once

#include <optional>
#include <vector>

#include "ttm/numerics/rng.hpp"
#include "ttm/numerics/tape.hpp"
#include "ttm/numerics/tensor.hpp"
#include "ttm/numerics/types.hpp"
#include "ttm/temperature.hpp"

namespace ttm {

/// Query/key/value projections are stored concatenated: head h owns columns
/// [h*d_k, (h+1)*d_k) of w_q, w_k and w_v. w_o maps the concatenated heads back.
struct AttentionParams {
  Matrix w_q;  // d_model x (heads * d_k)
  Matrix w_k;
  Matrix w_v;
  Matrix w_o;  // (heads * d_k) x d_model
  Index heads = 0;
  Index d_k = 0;

  Index model_width() const { return w_q.rows(); }
  void validate() const;

  static AttentionParams random(Rng& rng, Index d_model, Index heads, Index d_k);
};

enum class Modulation {
  none,
  broadcast,  // logits[i][j] * T[h][j] (or T[h][i] with row_axis)
  outer,      // logits[i][j] * T[h][i] * T[h][j]
};

struct AttentionOptions {
  bool causal = false;
  bool row_axis = false;  // broadcast variant scales query rows instead of key columns
};

struct AttentionOutput {
  Matrix values;                    // n x d_model
  std::vector<Matrix> weights;      // per head, n x n, rows sum to 1
  std::vector<Matrix> pre_softmax;  // per head, n x n

  Tensor weights_tensor() const;      // heads x n x n
  Tensor pre_softmax_tensor() const;  // heads x n x n
};

// --- differentiable building blocks ----------------------------------------

struct AttentionVars {
  Var w_q, w_k, w_v, w_o;
  Index heads = 0;
  Index d_k = 0;
};

AttentionVars attach(Tape& tape, const AttentionParams& params, bool trainable);

/// Per-head softmax weights. `field` (heads x n) is required unless mode is none.
/// `logits_out`, when given, receives the modulated pre-softmax logits.
std::vector<Var> attention_weights(Var x, const AttentionVars& p, Modulation mode, std::optional<Var> field,
                                   const AttentionOptions& opts = {}, std::vector<Var>* logits_out = nullptr);

/// concat_h(weights_h * x W_v[h]) * W_o.
Var attention_values(Var x, const AttentionVars& p, const std::vector<Var>& weights);

/// alpha * base + (1 - alpha) * modulated, rows renormalized. alpha 0 and 1
/// return the corresponding input untouched.
std::vector<Var> residual_blend(const std::vector<Var>& base, const std::vector<Var>& modulated, double alpha);

// --- plain entry points ------------------------------------------------------

AttentionOutput attention_baseline(const Tensor& x, const AttentionParams& params, const AttentionOptions& opts = {});
AttentionOutput attention_temp_broadcast(const Tensor& x, const AttentionParams& params, const TemperatureField& field,
                                         const AttentionOptions& opts = {});
AttentionOutput attention_temp_outer(const Tensor& x, const AttentionParams& params, const TemperatureField& field,
                                     const AttentionOptions& opts = {});

std::vector<Matrix> residual_blend(const std::vector<Matrix>& base, const std::vector<Matrix>& modulated, double alpha);

/// ||T (.) A||_F / ||A||_F with T broadcast along the key axis.
double interference_ratio(const std::vector<Matrix>& weights, const Matrix& field);
double interference_ratio(const std::vector<Matrix>& weights, const TemperatureField& field);

/// Splits a heads x n x n tensor into per-head matrices.
std::vector<Matrix> split_heads(const Tensor& weights);

}  // namespace ttm
