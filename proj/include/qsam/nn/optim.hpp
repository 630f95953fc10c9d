// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "qsam/nn/autograd.hpp"

namespace qsam::nn {

enum class OptimizerKind { SgdNesterov, Adam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::SgdNesterov;
  double lr = 0.1;
  // SGD
  double momentum = 0.9;
  double weight_decay = 0.0;
  double dampening = 0.0;
  // Adam
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  std::size_t steps = 0;
  std::vector<Tensor> first_moment;   // SGD momentum buffer / Adam m
  std::vector<Tensor> second_moment;  // Adam v

  static OptimizerState sgd(double lr, double momentum, double weight_decay, double dampening = 0.0);
  static OptimizerState adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
};

// Both functions update params[i] in place from grads[i]; moment buffers
// are allocated on the first call and must keep matching shapes after.
void sgd_nesterov_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                       OptimizerState& state);
void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, OptimizerState& state);

// Steps the values of `params` with their accumulated gradients (zero when
// none arrived), dispatching on state.kind.
void optimizer_step(std::vector<Var>& params, OptimizerState& state);

}  // namespace qsam::nn
