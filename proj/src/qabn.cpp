// SPDX-License-Identifier: Apache-2.0
#include "qsam/qabn.hpp"

#include <cmath>
#include <string>

#include "qsam/error.hpp"
#include "qsam/nn/ops.hpp"

namespace qsam::qabn {

std::array<double, kQstSize> qst_to_feature(const Qst& q, FeatureEncoding enc) {
  std::array<double, kQstSize> f{};
  for (std::size_t k = 0; k < kQstSize; ++k) {
    const double s = q.steps()[k];
    f[k] = enc == FeatureEncoding::Reciprocal ? 1.0 / s : s / 255.0;
  }
  return f;
}

QstBasisSet::QstBasisSet(std::vector<Qst> bases) : bases_(std::move(bases)) {
  for (std::size_t i = 0; i < bases_.size(); ++i) {
    for (std::size_t j = i + 1; j < bases_.size(); ++j) {
      if (bases_[i] == bases_[j]) fail(ErrorCode::InvalidArgument, "QST bases must be pairwise distinct");
    }
  }
}

int QstBasisSet::index_of(const Qst& q) const {
  for (std::size_t i = 0; i < bases_.size(); ++i) {
    if (bases_[i] == q) return static_cast<int>(i);
  }
  return -1;
}

QabnLayer::QabnLayer(std::size_t channels, std::size_t bases, int site_id) : channels_(channels), site_id_(site_id) {
  if (bases == 0) fail(ErrorCode::InvalidArgument, "QABN needs at least one base");
  for (std::size_t i = 0; i < bases; ++i) bases_.push_back(BnState::create(channels));
}

QabnLayer QabnLayer::init_from_baseline(const BnState& baseline, std::size_t bases, int site_id) {
  if (bases == 0) fail(ErrorCode::InvalidArgument, "QABN needs at least one base");
  QabnLayer layer;
  layer.channels_ = baseline.channels();
  layer.site_id_ = site_id;
  for (std::size_t i = 0; i < bases; ++i) layer.bases_.push_back(baseline.clone());
  return layer;
}

BnState& QabnLayer::base(std::size_t i) {
  if (i >= bases_.size()) {
    fail(ErrorCode::IndexOutOfRange, "base " + std::to_string(i) + " of " + std::to_string(bases_.size()));
  }
  return bases_[i];
}

const BnState& QabnLayer::base(std::size_t i) const { return const_cast<QabnLayer*>(this)->base(i); }

Var QabnLayer::forward_base(const Var& x, std::size_t base_index, BnMode mode) {
  return nn::batch_norm2d(x, base(base_index), mode);
}

Var QabnLayer::forward_meta(const Var& x, const Var& f_meta, BnMode mode) {
  std::vector<BnState*> states;
  for (auto& b : bases_) states.push_back(&b);
  return nn::mixed_batch_norm2d(x, std::move(states), f_meta, mode);
}

MetaLearner::MetaLearner(std::size_t hidden, std::size_t bases, std::mt19937_64& rng, FeatureEncoding enc,
                         OutputActivation act)
    : enc_(enc), act_(act) {
  if (hidden == 0 || bases == 0) fail(ErrorCode::InvalidArgument, "meta-learner needs hidden > 0 and M > 0");
  auto uniform = [&](nn::Shape shape, double bound) {
    nn::Tensor t(std::move(shape));
    std::uniform_real_distribution<double> d(-bound, bound);
    for (auto& v : t.values()) v = d(rng);
    return t;
  };
  const double b1 = 1.0 / std::sqrt(static_cast<double>(kQstSize));
  const double b2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  w1_ = nn::parameter(uniform({hidden, kQstSize}, b1));
  b1_ = nn::parameter(uniform({hidden}, b1));
  w2_ = nn::parameter(uniform({bases, hidden}, b2));
  b2_ = nn::parameter(uniform({bases}, b2));
}

Var MetaLearner::forward(std::span<const Qst> qsts) const {
  nn::Tensor in(nn::Shape{qsts.size(), kQstSize});
  for (std::size_t n = 0; n < qsts.size(); ++n) {
    const auto f = qst_to_feature(qsts[n], enc_);
    std::copy(f.begin(), f.end(), in.data() + n * kQstSize);
  }
  Var h = nn::relu(nn::linear(nn::constant(std::move(in)), w1_, b1_));
  Var out = nn::linear(h, w2_, b2_);
  return act_ == OutputActivation::Softmax ? nn::softmax(out) : out;
}

std::vector<double> MetaLearner::forward(const Qst& q) const {
  const Var out = forward(std::span<const Qst>(&q, 1));
  return out.value().vector();
}

std::vector<std::string> MetaLearner::parameter_names() const {
  return {"meta.fc1.weight", "meta.fc1.bias", "meta.fc2.weight", "meta.fc2.bias"};
}

}  // namespace qsam::qabn
