// SPDX-License-Identifier: Apache-2.0
//
// Tape-free reverse-mode autodiff: every op output keeps shared ownership of
// its inputs plus a closure that pushes its gradient back to them.
// backward() topologically sorts the graph reachable from a scalar root.
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "qsam/nn/tensor.hpp"

namespace qsam::nn {

struct Node {
  Tensor value;
  Tensor grad;  // empty until something accumulates into it
  bool requires_grad = false;
  bool is_leaf = true;
  bool released = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;
  std::string name;

  // Allocates grad on first use.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  const std::string& name() const { return node_->name; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Zero-filled tensor of the value's shape when no gradient has arrived.
  Tensor grad() const;
  Tensor& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad();

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var parameter(Tensor value, std::string name = {});

// Builds a non-leaf node. requires_grad is inherited from the inputs; when
// no input needs a gradient the closure is dropped.
Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn);

// Accumulates d(root)/d(x) into every reachable x with requires_grad.
// root must be a scalar. The graph is released afterwards; a second call
// on the same root throws ModeError.
void backward(const Var& root);

}  // namespace qsam::nn
