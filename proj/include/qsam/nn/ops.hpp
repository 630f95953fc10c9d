// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "qsam/nn/autograd.hpp"

namespace qsam::nn {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var abs(const Var& a);
Var sum(const Var& a);
Var reshape(const Var& a, Shape shape);

// x: [N, in], weight: [out, in], bias: [out] (may be undefined).
Var linear(const Var& x, const Var& weight, const Var& bias);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// x: [N, C, H, W], weight: [O, C, k, k], bias: [O] (may be undefined).
Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions opts = {});

Var relu(const Var& x);
// 2x2 window, stride 2; odd trailing rows/cols are dropped.
Var max_pool2(const Var& x);
// [N, C, H, W] -> [N, C]
Var global_avg_pool(const Var& x);
// Row-wise softmax over [N, K].
Var softmax(const Var& x);

enum class Reduction { Sum, Mean };

// sum_i w_i * CE(logits_i, label_i); Mean divides by sum_i w_i.
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels, std::span<const double> weights,
                          Reduction reduction = Reduction::Mean);
// Unit weights.
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels, Reduction reduction = Reduction::Mean);

}  // namespace qsam::nn
