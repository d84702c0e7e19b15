#pragma once

#include "affspace/tensor.hpp"

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace affspace {

template <typename Scalar>
class Tape;

/// Handle to one node on a tape. Cheap to copy; valid while the tape lives.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor<Scalar>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  Tensor<Scalar> grad() const { return tape_->grad(id_); }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode record. Nodes are appended in evaluation order, so the node
/// vector is already a topological order of the DAG.
template <typename Scalar>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<Scalar>& out_grad)>;

  struct Node {
    std::string op;
    std::vector<std::size_t> parents;
    Tensor<Scalar> value;
    Tensor<Scalar> grad;  // empty until something flows into it
    bool requires_grad = false;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> leaf(Tensor<Scalar> value, bool requires_grad = true) {
    return push("leaf", {}, std::move(value), requires_grad, {});
  }
  Var<Scalar> constant(Tensor<Scalar> value) { return leaf(std::move(value), false); }

  /// Records an op result. The backward closure is dropped when no parent
  /// needs a gradient.
  Var<Scalar> push(std::string op, std::vector<std::size_t> parents, Tensor<Scalar> value,
                   bool requires_grad, BackwardFn backward) {
    const std::size_t id = nodes_.size();
    for (std::size_t p : parents)
      if (p >= id) throw std::logic_error("tape: parent " + std::to_string(p) + " does not precede node " + std::to_string(id));
    Node node;
    node.op = std::move(op);
    node.parents = std::move(parents);
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    if (requires_grad && !node.parents.empty()) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var<Scalar>(this, id);
  }

  bool any_requires_grad(std::initializer_list<Var<Scalar>> vars) const {
    for (const auto& v : vars)
      if (requires_grad(v.id())) return true;
    return false;
  }

  const Tensor<Scalar>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::string& op(std::size_t id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of the last backward root with respect to node `id`; zeros when
  /// the node was not reached.
  Tensor<Scalar> grad(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.grad.empty() ? Tensor<Scalar>(n.value.shape()) : n.grad;
  }

  /// Adds `g` into the gradient accumulator of `id` (no-op for nodes that do
  /// not require a gradient).
  void accumulate(std::size_t id, const Tensor<Scalar>& g) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (g.shape() != n.value.shape())
      throw ShapeError("gradient shape " + shape_str(g.shape()) + " does not match value shape " +
                       shape_str(n.value.shape()) + " at op " + n.op);
    if (n.grad.empty())
      n.grad = g;
    else
      n.grad.array() += g.array();
  }

  void accumulate(std::size_t id, Tensor<Scalar>&& g) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (n.grad.empty() && g.shape() == n.value.shape())
      n.grad = std::move(g);
    else
      accumulate(id, static_cast<const Tensor<Scalar>&>(g));
  }

  void zero_grad() {
    for (Node& n : nodes_) n.grad = Tensor<Scalar>();
  }

  /// Seeds d(root)/d(root) = 1 and propagates adjoints in reverse order.
  /// Previous gradients are cleared first.
  void backward(const Var<Scalar>& root) {
    if (&root.tape() != this) throw std::logic_error("backward: root belongs to another tape");
    if (value(root.id()).size() != 1)
      throw ShapeError("backward: root must be scalar, got " + shape_str(value(root.id()).shape()));
    zero_grad();
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      for (std::size_t p : nodes_[i].parents)
        if (p >= i) throw std::logic_error("backward: cycle detected at node " + std::to_string(i));
    Node& r = nodes_[root.id()];
    if (!r.requires_grad) return;
    r.grad = Tensor<Scalar>(r.value.shape(), Scalar(1));
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      // Backward rules only write into parents (ids < i), so n.grad stays put.
      n.backward(*this, n.grad);
    }
  }

 private:
  std::deque<Node> nodes_;
};

/// Copies the value of `v` onto `tape` as a constant; gradients stop here.
template <typename Scalar>
Var<Scalar> detach(const Var<Scalar>& v) {
  return v.tape().constant(v.value());
}

}  // namespace affspace
