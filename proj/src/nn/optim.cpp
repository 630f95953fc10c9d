// SPDX-License-Identifier: Apache-2.0
#include "qsam/nn/optim.hpp"

#include <cmath>
#include <string>

#include "qsam/error.hpp"

namespace qsam::nn {
namespace {

void check_shapes(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                  const OptimizerState& state) {
  if (!(state.lr > 0.0)) fail(ErrorCode::InvalidArgument, "learning rate must be positive");
  if (params.size() != grads.size()) {
    fail(ErrorCode::ShapeMismatch, std::to_string(params.size()) + " params vs " + std::to_string(grads.size()) +
                                       " grads");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i]->shape()) {
      fail(ErrorCode::ShapeMismatch, "param " + shape_string(params[i]->shape()) + " vs grad " +
                                         shape_string(grads[i]->shape()));
    }
  }
}

void ensure_buffers(std::vector<Tensor>& buf, const std::vector<Tensor*>& params) {
  if (buf.empty()) {
    for (const auto* p : params) buf.emplace_back(p->shape(), 0.0);
    return;
  }
  if (buf.size() != params.size()) fail(ErrorCode::ShapeMismatch, "optimizer state built for other parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (buf[i].shape() != params[i]->shape()) fail(ErrorCode::ShapeMismatch, "optimizer moment shape changed");
  }
}

}  // namespace

OptimizerState OptimizerState::sgd(double lr, double momentum, double weight_decay, double dampening) {
  OptimizerState s;
  s.kind = OptimizerKind::SgdNesterov;
  s.lr = lr;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  s.dampening = dampening;
  return s;
}

OptimizerState OptimizerState::adam(double lr, double beta1, double beta2, double eps) {
  OptimizerState s;
  s.kind = OptimizerKind::Adam;
  s.lr = lr;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps = eps;
  return s;
}

// Nesterov SGD with the torch.optim.SGD conventions: the momentum buffer is
// seeded with the first gradient, dampening applies afterwards.
void sgd_nesterov_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                       OptimizerState& state) {
  check_shapes(params, grads, state);
  const bool first = state.first_moment.empty();
  ensure_buffers(state.first_moment, params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    Tensor& buf = state.first_moment[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      double d = g[k] + state.weight_decay * p[k];
      if (state.momentum != 0.0) {
        buf[k] = first ? d : state.momentum * buf[k] + (1.0 - state.dampening) * d;
        d += state.momentum * buf[k];
      }
      p[k] -= state.lr * d;
    }
  }
  ++state.steps;
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, OptimizerState& state) {
  check_shapes(params, grads, state);
  ensure_buffers(state.first_moment, params);
  ensure_buffers(state.second_moment, params);
  ++state.steps;
  const double t = static_cast<double>(state.steps);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      p[k] -= state.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + state.eps);
    }
  }
}

void optimizer_step(std::vector<Var>& params, OptimizerState& state) {
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(p.grad());
  std::vector<Tensor*> values;
  std::vector<const Tensor*> grad_ptrs;
  for (std::size_t i = 0; i < params.size(); ++i) {
    values.push_back(&params[i].mutable_value());
    grad_ptrs.push_back(&grads[i]);
  }
  if (state.kind == OptimizerKind::SgdNesterov) {
    sgd_nesterov_step(values, grad_ptrs, state);
  } else {
    adam_step(values, grad_ptrs, state);
  }
}

}  // namespace qsam::nn
