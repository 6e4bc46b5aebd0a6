#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "gcn/tensor.hpp"

namespace gcn {

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  /// Empty until something flows into it; then shaped like value.
  Tensor<Scalar> grad;
  std::string op;
  std::vector<std::shared_ptr<Node>> parents;
  /// Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backprop;
  bool requires_grad = false;
  bool consumed = false;

  bool is_leaf() const { return parents.empty(); }

  Tensor<Scalar>& grad_buffer() {
    if (grad.empty()) grad = Tensor<Scalar>::zeros(value.shape());
    return grad;
  }
};

/// Handle to a node of the computation graph. Copies share the node.
template <typename Scalar>
class Var {
public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  /// A value that gradients do not flow into (inputs, labels, targets).
  static Var constant(Tensor<Scalar> value) {
    auto n = std::make_shared<Node<Scalar>>();
    n->value = std::move(value);
    n->op = "constant";
    return Var(std::move(n));
  }

  /// A trainable leaf. Its grad accumulates across backward() calls until zero_grad().
  static Var parameter(Tensor<Scalar> value) {
    auto n = std::make_shared<Node<Scalar>>();
    n->value = std::move(value);
    n->op = "parameter";
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<Scalar>& value() const { return node_->value; }
  /// Direct access for optimizers and checkpoint loading; never call mid-graph.
  Tensor<Scalar>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& op() const { return node_->op; }

  /// Accumulated gradient; zeros if nothing has flowed in yet.
  Tensor<Scalar> grad() const {
    return node_->grad.empty() ? Tensor<Scalar>::zeros(node_->value.shape()) : node_->grad;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.fill(Scalar(0));
  }

  Scalar item() const {
    if (node_->value.size() != 1) throw ContractError("item() on a non-scalar value");
    return node_->value[0];
  }

  const NodePtr& node() const { return node_; }

private:
  NodePtr node_;
};

/// Builds an op node. The closure is dropped when no parent needs gradients.
template <typename Scalar>
Var<Scalar> make_op(std::string op, Tensor<Scalar> value, std::vector<Var<Scalar>> parents,
                    std::function<void(Node<Scalar>&)> backprop) {
  auto n = std::make_shared<Node<Scalar>>();
  n->value = std::move(value);
  n->op = std::move(op);
  for (auto& p : parents) {
    n->requires_grad = n->requires_grad || p.requires_grad();
    n->parents.push_back(p.node());
  }
  if (n->requires_grad) n->backprop = std::move(backprop);
  return Var<Scalar>(std::move(n));
}

/// Reverse-mode sweep from a scalar loss. Gradients are added into every reachable
/// trainable leaf; leaves not reachable from the loss are left untouched. Returns the
/// reached leaves. Running it a second time over the same graph throws ContractError.
template <typename Scalar>
std::vector<Var<Scalar>> backward(const Var<Scalar>& loss) {
  if (loss.value().size() != 1)
    throw ContractError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  std::vector<Var<Scalar>> leaves;
  if (!loss.requires_grad()) return leaves;

  using NodeT = Node<Scalar>;
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (NodeT* n : order)
    if (!n->is_leaf() && n->consumed)
      throw ContractError("backward() already ran over node '" + n->op + "'");

  if (loss.node()->is_leaf())
    loss.node()->grad_buffer().array() += Scalar(1);
  else
    loss.node()->grad_buffer().fill(Scalar(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (n->is_leaf()) continue;
    if (!n->grad.empty() && n->backprop) n->backprop(*n);
    n->consumed = true;
    n->backprop = nullptr;
    n->grad = Tensor<Scalar>();
  }
  // Recover shared handles for the leaves through their children's parent lists.
  std::unordered_set<NodeT*> emitted;
  for (NodeT* n : order)
    for (auto& p : n->parents)
      if (p->is_leaf() && p->requires_grad && emitted.insert(p.get()).second) leaves.emplace_back(p);
  if (loss.node()->is_leaf()) leaves.push_back(loss);
  return leaves;
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops

template <typename Scalar>
void require_same_shape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()) + " differ");
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a, b, "add");
  Tensor<Scalar> out(a.shape());
  out.array() = a.value().array() + b.value().array();
  return make_op<Scalar>("add", std::move(out), {a, b}, [](Node<Scalar>& n) {
    for (auto& p : n.parents)
      if (p->requires_grad) p->grad_buffer().array() += n.grad.array();
  });
}

template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a, b, "sub");
  Tensor<Scalar> out(a.shape());
  out.array() = a.value().array() - b.value().array();
  return make_op<Scalar>("sub", std::move(out), {a, b}, [](Node<Scalar>& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->grad_buffer().array() += n.grad.array();
    if (n.parents[1]->requires_grad) n.parents[1]->grad_buffer().array() -= n.grad.array();
  });
}

/// Elementwise product.
template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a, b, "mul");
  Tensor<Scalar> out(a.shape());
  out.array() = a.value().array() * b.value().array();
  return make_op<Scalar>("mul", std::move(out), {a, b}, [](Node<Scalar>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) pa.grad_buffer().array() += n.grad.array() * pb.value.array();
    if (pb.requires_grad) pb.grad_buffer().array() += n.grad.array() * pa.value.array();
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar k) {
  Tensor<Scalar> out(a.shape());
  out.array() = a.value().array() * k;
  return make_op<Scalar>("scale", std::move(out), {a}, [k](Node<Scalar>& n) {
    n.parents[0]->grad_buffer().array() += n.grad.array() * k;
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  auto out = Tensor<Scalar>::scalar(a.value().array().sum());
  return make_op<Scalar>("sum", std::move(out), {a}, [](Node<Scalar>& n) {
    n.parents[0]->grad_buffer().array() += n.grad[0];
  });
}

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  Tensor<Scalar> out = matmul(a.value(), b.value());
  return make_op<Scalar>("matmul", std::move(out), {a, b}, [](Node<Scalar>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    const auto g = n.grad.matrix();
    if (pa.requires_grad) pa.grad_buffer().matrix().noalias() += g * pb.value.matrix().transpose();
    if (pb.requires_grad) pb.grad_buffer().matrix().noalias() += pa.value.matrix().transpose() * g;
  });
}

}  // namespace gcn
