#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include "ttm/numerics/types.hpp"

namespace ttm {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape: nodes are appended in evaluation order, so a reverse
/// sweep visits every node after all of its consumers. Confined to one thread.
class Tape {
 public:
  /// Propagates the node's accumulated gradient into its parents.
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value);
  Var constant(Matrix value);

  /// Records an op result. The backward rule is kept only when some parent
  /// needs a gradient. Throws NumericError if `value` has non-finite entries.
  Var record(std::string_view op, Matrix value, std::initializer_list<Var> parents, Backward backward);
  Var record(std::string_view op, Matrix value, const std::vector<Var>& parents, Backward backward);

  /// Seeds d(root)/d(root) = 1 and sweeps backwards. Root must be 1x1.
  void backward(Var root);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& value(Var v) const { return nodes_[v.id()].value; }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  const Matrix& grad(Var v) const { return nodes_[v.id()].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  std::string_view op(std::size_t id) const { return nodes_[id].op; }

  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    auto& node = nodes_[id];
    if (node.requires_grad) node.grad += g;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string_view op;
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
  };

  template <typename Parents>
  Var record_impl(std::string_view op, Matrix value, const Parents& parents, Backward backward);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

namespace fault {

/// Test fixture hook: when set to an op name, that op's backward rule
/// receives a corrupted upstream gradient. Empty string disables it.
void set_faulty_backward(std::string op);
const std::string& faulty_backward();

}  // namespace fault

}  // namespace ttm
