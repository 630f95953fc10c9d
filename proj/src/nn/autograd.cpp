// SPDX-License-Identifier: Apache-2.0
#include "qsam/nn/autograd.hpp"

#include <unordered_set>

#include "qsam/error.hpp"

namespace qsam::nn {

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

void Var::set_requires_grad(bool on) {
  if (!node_->is_leaf) fail(ErrorCode::ModeError, "requires_grad can only be toggled on leaves");
  node_->requires_grad = on;
}

Tensor Var::grad() const {
  if (node_->grad.empty()) return Tensor(node_->value.shape(), 0.0);
  return node_->grad;
}

void Var::zero_grad() { node_->grad = Tensor(); }

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var parameter(Tensor value, std::string name) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->name = std::move(name);
  return Var(std::move(n));
}

Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->is_leaf = false;
  for (const auto& in : inputs) {
    if (in.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (auto& in : inputs) n->inputs.push_back(in.ptr());
    n->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(n));
}

void backward(const Var& root) {
  Node* r = root.node();
  if (r->value.size() != 1) fail(ErrorCode::ShapeMismatch, "backward() needs a scalar root");
  if (r->released) fail(ErrorCode::ModeError, "backward() on a released graph; run the forward pass again");
  if (!r->requires_grad) fail(ErrorCode::ModeError, "backward() on a value with no differentiable inputs");

  // Iterative post-order DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{r, 0}};
  seen.insert(r);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && !child->is_leaf && seen.insert(child).second) stack.push_back({child, 0});
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  r->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  for (Node* n : order) {
    n->backward_fn = nullptr;
    n->inputs.clear();
    n->grad = Tensor();
    n->released = true;
  }
}

}  // namespace qsam::nn
