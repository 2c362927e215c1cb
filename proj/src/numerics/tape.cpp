#include "ttm/numerics/tape.hpp"

#include <string>

#include "ttm/error.hpp"

namespace ttm {

namespace fault {

namespace {
thread_local std::string g_faulty_op;
}

void set_faulty_backward(std::string op) { g_faulty_op = std::move(op); }
const std::string& faulty_backward() { return g_faulty_op; }

}  // namespace fault

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const auto& v = value();
  if (v.size() != 1) throw DimensionError("scalar() on a non-scalar node");
  return v(0, 0);
}

Var Tape::leaf(Matrix value) {
  if (!value.allFinite()) throw NumericError("leaf: non-finite value");
  nodes_.push_back(Node{"leaf", std::move(value), Matrix(), nullptr, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  if (!value.allFinite()) throw NumericError("constant: non-finite value");
  nodes_.push_back(Node{"constant", std::move(value), Matrix(), nullptr, false});
  return Var(this, nodes_.size() - 1);
}

template <typename Parents>
Var Tape::record_impl(std::string_view op, Matrix value, const Parents& parents, Backward backward) {
  if (!value.allFinite()) throw NumericError(std::string(op) + ": non-finite value");
  bool needs = false;
  for (const Var& p : parents) {
    if (p.tape_ != this) throw Error(std::string(op) + ": operand belongs to another tape");
    needs = needs || nodes_[p.id_].requires_grad;
  }
  nodes_.push_back(Node{op, std::move(value), Matrix(), needs ? std::move(backward) : nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Matrix value, std::initializer_list<Var> parents, Backward backward) {
  return record_impl(op, std::move(value), parents, std::move(backward));
}

Var Tape::record(std::string_view op, Matrix value, const std::vector<Var>& parents, Backward backward) {
  return record_impl(op, std::move(value), parents, std::move(backward));
}

void Tape::backward(Var root) {
  if (root.tape_ != this) throw Error("backward: root belongs to another tape");
  if (nodes_[root.id_].value.size() != 1) throw DimensionError("backward: root must be a scalar");
  if (backward_done_) throw Error("backward: tape already swept");
  backward_done_ = true;
  for (std::size_t i = 0; i <= root.id_; ++i) {
    auto& n = nodes_[i];
    if (n.requires_grad) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  }
  if (!nodes_[root.id_].requires_grad) return;
  nodes_[root.id_].grad(0, 0) = 1.0;
  const auto& faulty = fault::faulty_backward();
  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.backward) continue;
    if (!faulty.empty() && n.op == faulty) n.grad *= 1.5;
    n.backward(*this, i);
  }
}

}  // namespace ttm
