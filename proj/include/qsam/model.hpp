// SPDX-License-Identifier: Apache-2.0
//
// TinyNet: conv3x3(w1)-QABN-ReLU-pool2 -> conv3x3(w2)-QABN-ReLU-pool2
//          -> global-avg-pool -> linear(classes)
// With one BN base per site it is an ordinary BN network; the baseline is
// exactly that configuration.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "qsam/nn/checkpoint.hpp"
#include "qsam/qabn.hpp"

namespace qsam {

struct TinyNetConfig {
  std::size_t classes = 4;
  std::size_t bases = 1;  // M
  std::size_t width1 = 16;
  std::size_t width2 = 32;
  std::size_t meta_hidden = 64;
  qabn::FeatureEncoding encoding = qabn::FeatureEncoding::Reciprocal;
  qabn::OutputActivation activation = qabn::OutputActivation::Softmax;
};

struct BaseRoute {
  std::size_t index = 0;
  nn::BnMode mode = nn::BnMode::Train;
};

struct MetaRoute {
  nn::Var f_meta;  // [N, M]
  nn::BnMode mode = nn::BnMode::Eval;
};

using NormRoute = std::variant<BaseRoute, MetaRoute>;

// Copies the features entering (or leaving) one QABN site during forward().
struct FeatureTap {
  enum class Point { Input, Output };
  int site = 1;  // 1-based
  Point point = Point::Input;
  nn::Tensor captured;
};

enum class ParamGroup { BnBases, Remaining, Meta };

struct NamedParam {
  std::string name;
  nn::Var var;
  ParamGroup group;
};

struct NamedBuffer {
  std::string name;
  nn::Tensor* tensor;
};

class TinyNet {
 public:
  static constexpr int kSites = 2;

  TinyNet(const TinyNetConfig& cfg, std::uint64_t seed);

  const TinyNetConfig& config() const { return cfg_; }

  nn::Var forward(const nn::Var& images, const NormRoute& route, FeatureTap* tap = nullptr);
  // Meta path with f_meta computed from each sample's QST by the shared
  // meta-learner.
  nn::Var forward_meta(const nn::Var& images, std::span<const Qst> qsts, nn::BnMode mode = nn::BnMode::Eval,
                       FeatureTap* tap = nullptr);

  qabn::QabnLayer& site(int k);  // 1-based
  const qabn::QabnLayer& site(int k) const;
  qabn::MetaLearner& meta() { return meta_; }
  const qabn::MetaLearner& meta() const { return meta_; }

  std::vector<NamedParam> named_parameters() const;
  std::vector<nn::Var> parameters(ParamGroup group) const;
  std::vector<NamedBuffer> named_buffers();
  void set_trainable(ParamGroup group, bool on);
  void zero_grad();

  // Replace every base of every site with copies of `baseline`'s single
  // base at that site (baseline must have M = 1).
  void init_bases_from(const TinyNet& baseline);

  // Manifest is the config as JSON merged with `extra` (a JSON object).
  nn::Checkpoint to_checkpoint(const std::string& extra_json = "{}") const;
  static TinyNet from_checkpoint(const nn::Checkpoint& ckpt);
  void load_state(const nn::Checkpoint& ckpt);

 private:
  TinyNetConfig cfg_;
  nn::Var conv1_, conv2_, fc_w_, fc_b_;
  qabn::QabnLayer qabn1_, qabn2_;
  qabn::MetaLearner meta_;
};

}  // namespace qsam
