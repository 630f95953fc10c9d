// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "qsam/nn/autograd.hpp"

namespace qsam::nn {

enum class BnMode { Train, Eval };

// Per-channel batch-normalization parameters and running statistics.
struct BnState {
  Var gamma;  // [C]
  Var beta;   // [C]
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]
  double momentum = 0.1;
  double eps = 1e-5;

  static BnState create(std::size_t channels, double momentum = 0.1, double eps = 1e-5);
  std::size_t channels() const { return running_mean.size(); }
  // Deep copy: fresh parameter nodes, same values.
  BnState clone() const;
};

// x: [N, C, H, W]. Train mode normalizes with (biased) batch statistics and
// moves the running statistics toward the batch:
//   running <- (1 - momentum) * running + momentum * batch
// (running_var uses the unbiased batch variance). Eval mode uses the
// running statistics.
Var batch_norm2d(const Var& x, BnState& state, BnMode mode);

// Convex mixture of several BN states applied to the same input:
//   out[n] = sum_i weights[n, i] * BN_i(x)[n]
// weights: [N, M]. In Train mode all states share the batch statistics and
// state i's running statistics move with momentum * mean_n weights[n, i].
Var mixed_batch_norm2d(const Var& x, std::vector<BnState*> states, const Var& weights, BnMode mode);

}  // namespace qsam::nn
