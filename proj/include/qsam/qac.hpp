// SPDX-License-Identifier: Apache-2.0
//
// Quantization-aware confidence (QAC): a per-image weight that treats 1/q
// as the probability that a coefficient with step q survives quantization
// unchanged, summed over all 128 steps of the image's QST.
#pragma once

#include <span>

#include "qsam/codec_sim.hpp"
#include "qsam/nn/ops.hpp"
#include "qsam/qst.hpp"

namespace qsam::qac {

struct QacConfig {
  // 1/128 keeps weights in (1/255, 1]; 1.0 gives the raw reciprocal sum.
  double normalizer = 1.0 / 128.0;
  bool enabled = true;
};

// normalizer * sum over the 128 steps of 1/q; 1 when disabled.
double qac(const Qst& q, const QacConfig& cfg = {});

using nn::Reduction;

// sum_i weights_i * CE(logits_i, labels_i); Mean divides by sum_i weights_i.
nn::Var weighted_ce_loss(const nn::Var& logits, std::span<const int> labels, std::span<const double> weights,
                         Reduction reduction = Reduction::Mean);

// dL/dc for one 8x8 block given dL/dp: the adjoint of the orthonormal
// inverse DCT, which is the forward DCT without level shift.
codec::Block8 frequency_gradient(const codec::Block8& pixel_grad);

}  // namespace qsam::qac
