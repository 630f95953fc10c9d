// SPDX-License-Identifier: Apache-2.0
#include "qsam/qac.hpp"

#include "qsam/error.hpp"

namespace qsam::qac {

double qac(const Qst& q, const QacConfig& cfg) {
  if (!cfg.enabled) return 1.0;
  if (!(cfg.normalizer > 0.0)) fail(ErrorCode::InvalidArgument, "QAC normalizer must be positive");
  double s = 0.0;
  for (auto step : q.steps()) s += 1.0 / static_cast<double>(step);
  return cfg.normalizer * s;
}

nn::Var weighted_ce_loss(const nn::Var& logits, std::span<const int> labels, std::span<const double> weights,
                         Reduction reduction) {
  for (double w : weights) {
    if (!(w > 0.0)) fail(ErrorCode::InvalidArgument, "sample weights must be positive");
  }
  return nn::softmax_cross_entropy(logits, labels, weights, reduction);
}

codec::Block8 frequency_gradient(const codec::Block8& pixel_grad) {
  return codec::dct2d(pixel_grad, codec::LevelShift::Coefficient);
}

}  // namespace qsam::qac
