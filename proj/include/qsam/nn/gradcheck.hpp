// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "qsam/nn/autograd.hpp"

namespace qsam::nn {

struct GradCheckOptions {
  double step = 1e-5;                // central-difference h
  std::size_t param_samples = 50;    // coordinates drawn across all parameters
  std::size_t input_samples = 50;    // coordinates drawn from the input
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_param_rel_error = 0.0;
  double max_input_rel_error = 0.0;
  std::size_t params_checked = 0;
  std::size_t inputs_checked = 0;
  bool passed = false;
};

// |a - n| / max(|a|, |n|, 1e-6)
double relative_error(double analytic, double numeric);

// loss(input) must build a fresh graph from `params` and `input` on every
// call and return a scalar. Analytic gradients come from one backward pass;
// numeric ones from central differences on sampled coordinates.
GradCheckReport finite_difference_check(const std::function<Var(const Var&)>& loss, std::vector<Var> params,
                                        Var input, const GradCheckOptions& opts = {});

}  // namespace qsam::nn
