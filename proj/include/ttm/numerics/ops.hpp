#pragma once

// Differentiable ops on a Tape. Every op checks shapes, records its forward
// value and the backward rule for that value.

#include <span>
#include <utility>
#include <vector>

#include "ttm/numerics/tape.hpp"
#include "ttm/numerics/tensor.hpp"

namespace ttm {

Var matmul(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
/// a + 1 * row, with row of shape 1 x cols(a).
Var add_row(Var a, Var row);

Var scale(Var a, double s);
Var shift(Var a, double s);
/// a * s where s is a 1x1 node.
Var scale_by(Var a, Var s);
/// out[i][j] = a[i][j] * v[j]; v is 1 x cols(a).
Var scale_columns(Var a, Var v);
/// out[i][j] = a[i][j] * v[i]; v is 1 x rows(a).
Var scale_rows(Var a, Var v);

Var sigmoid(Var a);
/// eps + (1 - 2 eps) * sigmoid(a).
Var squash(Var a, double eps);
Var gelu(Var a);
Var square(Var a);

Var softmax_rows(Var a);
/// Divides every row by its sum.
Var normalize_rows(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps);

Var sum(Var a);
Var mean(Var a);

Var col_block(Var a, Index start, Index width);
Var row_block(Var a, Index start, Index height);
Var hconcat(const std::vector<Var>& parts);
Var vconcat(const std::vector<Var>& parts);
Var gather_rows(Var table, std::span<const int> ids);

/// Adds a constant matrix (no gradient flows into the constant).
Var add_constant(Var a, const Matrix& c);

/// Mean cross-entropy of softmax(logits) over the listed (row, target) pairs.
Var cross_entropy(Var logits, std::span<const std::pair<Index, int>> targets);

/// Identity forward; the backward pass clamps the incoming gradient into
/// [-tau, tau] elementwise.
Var clip_grad(Var a, double tau);

// Tensor-level entry points for the core numerics.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& x);
Tensor sigmoid_map(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

}  // namespace ttm
