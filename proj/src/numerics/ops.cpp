#include "ttm/numerics/ops.hpp"

#include <cmath>
#include <string>

#include "ttm/error.hpp"
#include "ttm/numerics/kernels.hpp"

namespace ttm {

namespace {

std::string dims(const Matrix& m) { return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]"; }

void require_same_shape(const char* op, Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + dims(a.value()) + " vs " + dims(b.value()));
  }
}

void require_row(const char* op, Var v, Index expected) {
  if (v.rows() != 1 || v.cols() != expected) {
    throw DimensionError(std::string(op) + ": expected [1x" + std::to_string(expected) + "], got " + dims(v.value()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents differ " + dims(a.value()) + " x " + dims(b.value()));
  }
  const auto ia = a.id();
  const auto ib = b.id();
  return a.tape().record("matmul", a.value() * b.value(), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var transpose(Var a) {
  const auto ia = a.id();
  return a.tape().record("transpose", a.value().transpose(), {a},
                         [ia](Tape& t, std::size_t self) { t.accumulate(ia, t.grad(self).transpose()); });
}

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  const auto ia = a.id();
  const auto ib = b.id();
  return a.tape().record("add", a.value() + b.value(), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  const auto ia = a.id();
  const auto ib = b.id();
  return a.tape().record("sub", a.value() - b.value(), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, -t.grad(self));
  });
}

Var hadamard(Var a, Var b) {
  require_same_shape("hadamard", a, b);
  const auto ia = a.id();
  const auto ib = b.id();
  return a.tape().record("hadamard", a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

Var add_row(Var a, Var row) {
  require_row("add_row", row, a.cols());
  const auto ia = a.id();
  const auto ir = row.id();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape().record("add_row", std::move(out), {a, row}, [ia, ir](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    t.accumulate(ia, g);
    t.accumulate(ir, g.colwise().sum());
  });
}

Var scale(Var a, double s) {
  const auto ia = a.id();
  return a.tape().record("scale", a.value() * s, {a},
                         [ia, s](Tape& t, std::size_t self) { t.accumulate(ia, t.grad(self) * s); });
}

Var shift(Var a, double s) {
  const auto ia = a.id();
  Matrix out = a.value().array() + s;
  return a.tape().record("shift", std::move(out), {a},
                         [ia](Tape& t, std::size_t self) { t.accumulate(ia, t.grad(self)); });
}

Var scale_by(Var a, Var s) {
  if (s.value().size() != 1) throw DimensionError("scale_by: factor must be 1x1, got " + dims(s.value()));
  const auto ia = a.id();
  const auto is = s.id();
  return a.tape().record("scale_by", a.value() * s.scalar(), {a, s}, [ia, is](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    t.accumulate(ia, g * t.value(is)(0, 0));
    if (t.requires_grad(is)) {
      Matrix ds(1, 1);
      ds(0, 0) = g.cwiseProduct(t.value(ia)).sum();
      t.accumulate(is, ds);
    }
  });
}

Var scale_columns(Var a, Var v) {
  require_row("scale_columns", v, a.cols());
  const auto ia = a.id();
  const auto iv = v.id();
  Matrix out = a.value().array().rowwise() * v.value().row(0).array();
  return a.tape().record("scale_columns", std::move(out), {a, v}, [ia, iv](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) {
      t.accumulate(ia, (g.array().rowwise() * t.value(iv).row(0).array()).matrix());
    }
    if (t.requires_grad(iv)) t.accumulate(iv, g.cwiseProduct(t.value(ia)).colwise().sum());
  });
}

Var scale_rows(Var a, Var v) {
  require_row("scale_rows", v, a.rows());
  const auto ia = a.id();
  const auto iv = v.id();
  Matrix out = a.value().array().colwise() * v.value().row(0).transpose().array();
  return a.tape().record("scale_rows", std::move(out), {a, v}, [ia, iv](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) {
      t.accumulate(ia, (g.array().colwise() * t.value(iv).row(0).transpose().array()).matrix());
    }
    if (t.requires_grad(iv)) t.accumulate(iv, g.cwiseProduct(t.value(ia)).rowwise().sum().transpose());
  });
}

Var sigmoid(Var a) {
  const auto ia = a.id();
  return a.tape().record("sigmoid", kernels::sigmoid(a.value()), {a}, [ia](Tape& t, std::size_t self) {
    const auto& y = t.value(self);
    t.accumulate(ia, (t.grad(self).array() * y.array() * (1.0 - y.array())).matrix());
  });
}

Var squash(Var a, double eps) {
  const auto ia = a.id();
  const double span = 1.0 - 2.0 * eps;
  Matrix out = (span * kernels::sigmoid(a.value()).array() + eps).matrix();
  return a.tape().record("squash", std::move(out), {a}, [ia, eps, span](Tape& t, std::size_t self) {
    const auto s = ((t.value(self).array() - eps) / span).eval();
    t.accumulate(ia, (t.grad(self).array() * span * s * (1.0 - s)).matrix());
  });
}

Var gelu(Var a) {
  const auto ia = a.id();
  Matrix out = a.value().unaryExpr([](double v) { return kernels::gelu(v); });
  return a.tape().record("gelu", std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const Matrix d = t.value(ia).unaryExpr([](double v) { return kernels::gelu_derivative(v); });
    t.accumulate(ia, t.grad(self).cwiseProduct(d));
  });
}

Var square(Var a) {
  const auto ia = a.id();
  return a.tape().record("square", a.value().cwiseAbs2(), {a}, [ia](Tape& t, std::size_t self) {
    t.accumulate(ia, 2.0 * t.grad(self).cwiseProduct(t.value(ia)));
  });
}

Var softmax_rows(Var a) {
  if (a.cols() < 1) throw DimensionError("softmax_rows: empty last axis");
  const auto ia = a.id();
  return a.tape().record("softmax_rows", kernels::softmax_rows(a.value()), {a}, [ia](Tape& t, std::size_t self) {
    const auto& y = t.value(self);
    const auto& g = t.grad(self);
    const Vector dots = g.cwiseProduct(y).rowwise().sum();
    t.accumulate(ia, (y.array() * (g.array().colwise() - dots.array())).matrix());
  });
}

Var normalize_rows(Var a) {
  const auto ia = a.id();
  const Vector sums = a.value().rowwise().sum();
  if ((sums.array() == 0.0).any()) throw NumericError("normalize_rows: zero row sum");
  Matrix out = a.value().array().colwise() / sums.array();
  return a.tape().record("normalize_rows", std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const auto& x = t.value(ia);
    const auto& g = t.grad(self);
    const Vector s = x.rowwise().sum();
    const Vector gx = g.cwiseProduct(x).rowwise().sum();
    const Vector c = (gx.array() / s.array().square()).matrix();
    Matrix d = (g.array().colwise() / s.array()).matrix();
    d.colwise() -= c;
    t.accumulate(ia, d);
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  if (x.cols() < 1) throw DimensionError("layer_norm: empty feature axis");
  require_row("layer_norm gain", gain, x.cols());
  require_row("layer_norm bias", bias, x.cols());
  if (!(eps > 0.0)) throw DimensionError("layer_norm: eps must be positive");
  const auto ix = x.id();
  const auto ig = gain.id();
  const auto ib = bias.id();
  return x.tape().record(
      "layer_norm", kernels::layer_norm_rows(x.value(), gain.value(), bias.value(), eps), {x, gain, bias},
      [ix, ig, ib, eps](Tape& t, std::size_t self) {
        const auto& xv = t.value(ix);
        const auto& g = t.grad(self);
        const auto& gain_v = t.value(ig);
        const double d = static_cast<double>(xv.cols());
        Matrix xhat(xv.rows(), xv.cols());
        Vector inv(xv.rows());
        for (Index i = 0; i < xv.rows(); ++i) {
          const double mu = xv.row(i).mean();
          const auto c = (xv.row(i).array() - mu).eval();
          inv(i) = 1.0 / std::sqrt(c.square().sum() / d + eps);
          xhat.row(i) = (c * inv(i)).matrix();
        }
        if (t.requires_grad(ig)) t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
        if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
        if (t.requires_grad(ix)) {
          Matrix dx(xv.rows(), xv.cols());
          for (Index i = 0; i < xv.rows(); ++i) {
            const auto dxhat = (g.row(i).array() * gain_v.row(0).array()).eval();
            const double m1 = dxhat.mean();
            const double m2 = (dxhat * xhat.row(i).array()).mean();
            dx.row(i) = (inv(i) * (dxhat - m1 - xhat.row(i).array() * m2)).matrix();
          }
          t.accumulate(ix, dx);
        }
      });
}

Var sum(Var a) {
  const auto ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().record("sum", std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const auto& v = t.value(ia);
    t.accumulate(ia, Matrix::Constant(v.rows(), v.cols(), t.grad(self)(0, 0)));
  });
}

Var mean(Var a) {
  const auto ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().mean();
  return a.tape().record("mean", std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const auto& v = t.value(ia);
    const double g = t.grad(self)(0, 0) / static_cast<double>(v.size());
    t.accumulate(ia, Matrix::Constant(v.rows(), v.cols(), g));
  });
}

Var col_block(Var a, Index start, Index width) {
  if (start < 0 || width < 1 || start + width > a.cols()) {
    throw DimensionError("col_block: columns [" + std::to_string(start) + ", " + std::to_string(start + width) +
                         ") out of range for " + dims(a.value()));
  }
  const auto ia = a.id();
  Matrix out = a.value().middleCols(start, width);
  return a.tape().record("col_block", std::move(out), {a}, [ia, start, width](Tape& t, std::size_t self) {
    const auto& v = t.value(ia);
    Matrix d = Matrix::Zero(v.rows(), v.cols());
    d.middleCols(start, width) = t.grad(self);
    t.accumulate(ia, d);
  });
}

Var row_block(Var a, Index start, Index height) {
  if (start < 0 || height < 1 || start + height > a.rows()) {
    throw DimensionError("row_block: rows [" + std::to_string(start) + ", " + std::to_string(start + height) +
                         ") out of range for " + dims(a.value()));
  }
  const auto ia = a.id();
  Matrix out = a.value().middleRows(start, height);
  return a.tape().record("row_block", std::move(out), {a}, [ia, start, height](Tape& t, std::size_t self) {
    const auto& v = t.value(ia);
    Matrix d = Matrix::Zero(v.rows(), v.cols());
    d.middleRows(start, height) = t.grad(self);
    t.accumulate(ia, d);
  });
}

Var hconcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("hconcat: no operands");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DimensionError("hconcat: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<std::size_t, Index>> layout;
  Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    layout.emplace_back(p.id(), c);
    c += p.cols();
  }
  return parts.front().tape().record("hconcat", std::move(out), parts, [layout](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    for (const auto& [id, start] : layout) {
      if (t.requires_grad(id)) t.accumulate(id, g.middleCols(start, t.value(id).cols()));
    }
  });
}

Var vconcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("vconcat: no operands");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw DimensionError("vconcat: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<std::size_t, Index>> layout;
  Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    layout.emplace_back(p.id(), r);
    r += p.rows();
  }
  return parts.front().tape().record("vconcat", std::move(out), parts, [layout](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    for (const auto& [id, start] : layout) {
      if (t.requires_grad(id)) t.accumulate(id, g.middleRows(start, t.value(id).rows()));
    }
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  const auto& tv = table.value();
  Matrix out(static_cast<Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw DimensionError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                           std::to_string(tv.rows()) + " rows");
    }
    out.row(static_cast<Index>(i)) = tv.row(ids[i]);
  }
  const auto it = table.id();
  std::vector<int> idx(ids.begin(), ids.end());
  return table.tape().record("gather_rows", std::move(out), {table}, [it, idx](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& v = t.value(it);
    Matrix d = Matrix::Zero(v.rows(), v.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) d.row(idx[i]) += g.row(static_cast<Index>(i));
    t.accumulate(it, d);
  });
}

Var add_constant(Var a, const Matrix& c) {
  if (c.rows() != a.rows() || c.cols() != a.cols()) {
    throw DimensionError("add_constant: shape mismatch " + dims(a.value()) + " vs " + dims(c));
  }
  const auto ia = a.id();
  return a.tape().record("add_constant", a.value() + c, {a},
                         [ia](Tape& t, std::size_t self) { t.accumulate(ia, t.grad(self)); });
}

Var cross_entropy(Var logits, std::span<const std::pair<Index, int>> targets) {
  if (targets.empty()) throw DimensionError("cross_entropy: no targets");
  const auto& z = logits.value();
  double total = 0.0;
  for (const auto& [row, target] : targets) {
    if (row < 0 || row >= z.rows() || target < 0 || target >= z.cols()) {
      throw DimensionError("cross_entropy: target (" + std::to_string(row) + ", " + std::to_string(target) +
                           ") outside logits " + dims(z));
    }
    const double m = z.row(row).maxCoeff();
    const double lse = m + std::log((z.row(row).array() - m).exp().sum());
    total += lse - z(row, target);
  }
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<double>(targets.size());
  const auto il = logits.id();
  std::vector<std::pair<Index, int>> tg(targets.begin(), targets.end());
  return logits.tape().record("cross_entropy", std::move(out), {logits}, [il, tg](Tape& t, std::size_t self) {
    const auto& zv = t.value(il);
    const double scale = t.grad(self)(0, 0) / static_cast<double>(tg.size());
    Matrix d = Matrix::Zero(zv.rows(), zv.cols());
    for (const auto& [row, target] : tg) {
      const double m = zv.row(row).maxCoeff();
      RowVector p = (zv.row(row).array() - m).exp().matrix();
      p /= p.sum();
      p(target) -= 1.0;
      d.row(row) += scale * p;
    }
    t.accumulate(il, d);
  });
}

Var clip_grad(Var a, double tau) {
  if (!(tau > 0.0)) throw DimensionError("clip_grad: tau must be positive");
  const auto ia = a.id();
  return a.tape().record("clip_grad", a.value(), {a}, [ia, tau](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self).cwiseMax(-tau).cwiseMin(tau));
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw DimensionError("matmul: incompatible shapes " + a.shape_string() + " x " + b.shape_string());
  }
  return Tensor::from_matrix(a.matrix() * b.matrix());
}

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() == 0) throw DimensionError("softmax_rows: empty last axis");
  Matrix y = kernels::softmax_rows(x.matrix());
  return Tensor(x.shape(), std::vector<double>(y.data(), y.data() + y.size()));
}

Tensor sigmoid_map(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = kernels::sigmoid(x.values()[i]);
  return Tensor(x.shape(), std::move(out));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const auto d = x.shape().back();
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: feature width " + std::to_string(d) + " vs gain " + gain.shape_string() +
                         " / bias " + bias.shape_string());
  }
  if (!(eps > 0.0)) throw DimensionError("layer_norm: eps must be positive");
  const Eigen::Map<const RowVector> g(gain.values().data(), static_cast<Index>(d));
  const Eigen::Map<const RowVector> b(bias.values().data(), static_cast<Index>(d));
  Matrix y = kernels::layer_norm_rows(x.matrix(), g, b, eps);
  return Tensor(x.shape(), std::vector<double>(y.data(), y.data() + y.size()));
}

}  // namespace ttm
