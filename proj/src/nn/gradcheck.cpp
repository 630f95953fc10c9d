// SPDX-License-Identifier: Apache-2.0
#include "qsam/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace qsam::nn {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
  return std::fabs(analytic - numeric) / denom;
}

GradCheckReport finite_difference_check(const std::function<Var(const Var&)>& loss, std::vector<Var> params,
                                        Var input, const GradCheckOptions& opts) {
  const bool input_was_diff = input.requires_grad();
  input.set_requires_grad(opts.input_samples > 0);
  for (auto& p : params) p.zero_grad();
  input.zero_grad();
  backward(loss(input));

  std::vector<Tensor> param_grads;
  for (const auto& p : params) param_grads.push_back(p.grad());
  const Tensor input_grad = input.grad();

  auto numeric = [&](Tensor& target, std::size_t k) {
    const double saved = target[k];
    target[k] = saved + opts.step;
    const double up = loss(input).value().item();
    target[k] = saved - opts.step;
    const double down = loss(input).value().item();
    target[k] = saved;
    return (up - down) / (2.0 * opts.step);
  };

  GradCheckReport report;
  std::mt19937_64 rng(opts.seed);
  std::size_t total = 0;
  for (const auto& p : params) total += p.value().size();
  if (total > 0) {
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    for (std::size_t s = 0; s < opts.param_samples; ++s) {
      std::size_t flat = pick(rng), which = 0;
      while (flat >= params[which].value().size()) flat -= params[which++].value().size();
      const double n = numeric(params[which].mutable_value(), flat);
      report.max_param_rel_error =
          std::max(report.max_param_rel_error, relative_error(param_grads[which][flat], n));
      ++report.params_checked;
    }
  }
  if (opts.input_samples > 0 && input.value().size() > 0) {
    std::uniform_int_distribution<std::size_t> pick(0, input.value().size() - 1);
    for (std::size_t s = 0; s < opts.input_samples; ++s) {
      const std::size_t k = pick(rng);
      const double n = numeric(input.mutable_value(), k);
      report.max_input_rel_error = std::max(report.max_input_rel_error, relative_error(input_grad[k], n));
      ++report.inputs_checked;
    }
  }
  input.set_requires_grad(input_was_diff);
  report.passed = report.max_param_rel_error < opts.tolerance && report.max_input_rel_error < opts.tolerance;
  return report;
}

}  // namespace qsam::nn
