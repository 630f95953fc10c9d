// SPDX-License-Identifier: Apache-2.0
//
// Quantization-aware batch normalization: each normalization site keeps M
// parallel BN "bases"; one meta-learner shared by every site maps a QST to
// the mixing vector over those bases.
#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "qsam/nn/autograd.hpp"
#include "qsam/nn/batch_norm.hpp"
#include "qsam/qst.hpp"

namespace qsam::qabn {

using nn::BnMode;
using nn::BnState;
using nn::Var;

enum class FeatureEncoding { Reciprocal, Raw };

// Channel 0 then channel 1, row-major; Reciprocal maps s -> 1/s, Raw maps
// s -> s / 255.
std::array<double, kQstSize> qst_to_feature(const Qst& q, FeatureEncoding enc = FeatureEncoding::Reciprocal);

// Ordered, pairwise-distinct QSTs; position i anchors BN base i.
class QstBasisSet {
 public:
  QstBasisSet() = default;
  explicit QstBasisSet(std::vector<Qst> bases);

  std::size_t size() const { return bases_.size(); }
  const Qst& operator[](std::size_t i) const { return bases_.at(i); }
  const std::vector<Qst>& bases() const { return bases_; }
  // Position of q, or -1.
  int index_of(const Qst& q) const;

 private:
  std::vector<Qst> bases_;
};

class QabnLayer {
 public:
  QabnLayer() = default;
  QabnLayer(std::size_t channels, std::size_t bases, int site_id);

  // Every base becomes a deep copy of `baseline`.
  static QabnLayer init_from_baseline(const BnState& baseline, std::size_t bases, int site_id);

  std::size_t channels() const { return channels_; }
  std::size_t num_bases() const { return bases_.size(); }
  int site_id() const { return site_id_; }
  BnState& base(std::size_t i);
  const BnState& base(std::size_t i) const;

  // Only base i sees the features (and, in Train mode, only its running
  // statistics move).
  Var forward_base(const Var& x, std::size_t base_index, BnMode mode);
  // out = sum_i f_meta[:, i] * BN_i(x); f_meta is [N, M].
  Var forward_meta(const Var& x, const Var& f_meta, BnMode mode);

 private:
  std::size_t channels_ = 0;
  int site_id_ = 0;
  std::vector<BnState> bases_;
};

enum class OutputActivation { Softmax, Linear };

// 128 -> hidden (ReLU) -> M, softmax output by default.
class MetaLearner {
 public:
  MetaLearner() = default;
  MetaLearner(std::size_t hidden, std::size_t bases, std::mt19937_64& rng,
              FeatureEncoding enc = FeatureEncoding::Reciprocal, OutputActivation act = OutputActivation::Softmax);

  std::size_t num_bases() const { return w2_.shape()[0]; }
  std::size_t hidden() const { return w1_.shape()[0]; }
  FeatureEncoding encoding() const { return enc_; }
  OutputActivation activation() const { return act_; }

  // One row per QST -> [N, M].
  Var forward(std::span<const Qst> qsts) const;
  // Plain-value convenience for a single QST.
  std::vector<double> forward(const Qst& q) const;

  // fc1.weight, fc1.bias, fc2.weight, fc2.bias
  std::vector<Var> parameters() const { return {w1_, b1_, w2_, b2_}; }
  std::vector<std::string> parameter_names() const;

 private:
  Var w1_, b1_, w2_, b2_;
  FeatureEncoding enc_ = FeatureEncoding::Reciprocal;
  OutputActivation act_ = OutputActivation::Softmax;
};

}  // namespace qsam::qabn
