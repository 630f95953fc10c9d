// SPDX-License-Identifier: Apache-2.0
#include "qsam/model.hpp"

#include <cmath>
#include <json.hpp>
#include <random>

#include "qsam/error.hpp"
#include "qsam/nn/ops.hpp"

namespace qsam {
namespace {

using nlohmann::json;

nn::Tensor kaiming_normal(nn::Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  nn::Tensor t(std::move(shape));
  std::normal_distribution<double> d(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : t.values()) v = d(rng);
  return t;
}

nn::Tensor uniform(nn::Shape shape, double bound, std::mt19937_64& rng) {
  nn::Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(-bound, bound);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

std::string site_prefix(int site, std::size_t base) {
  return "qabn." + std::to_string(site) + ".base." + std::to_string(base) + ".";
}

void tap_if(FeatureTap* tap, int site, FeatureTap::Point point, const nn::Var& v) {
  if (tap && tap->site == site && tap->point == point) tap->captured = v.value();
}

}  // namespace

TinyNet::TinyNet(const TinyNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.classes < 2) fail(ErrorCode::InvalidArgument, "TinyNet needs at least 2 classes");
  std::mt19937_64 rng(seed);
  conv1_ = nn::parameter(kaiming_normal({cfg.width1, 3, 3, 3}, 27, rng), "conv1.weight");
  conv2_ = nn::parameter(kaiming_normal({cfg.width2, cfg.width1, 3, 3}, cfg.width1 * 9, rng), "conv2.weight");
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.width2));
  fc_w_ = nn::parameter(uniform({cfg.classes, cfg.width2}, bound, rng), "fc.weight");
  fc_b_ = nn::parameter(uniform({cfg.classes}, bound, rng), "fc.bias");
  qabn1_ = qabn::QabnLayer(cfg.width1, cfg.bases, 1);
  qabn2_ = qabn::QabnLayer(cfg.width2, cfg.bases, 2);
  meta_ = qabn::MetaLearner(cfg.meta_hidden, cfg.bases, rng, cfg.encoding, cfg.activation);
}

qabn::QabnLayer& TinyNet::site(int k) {
  if (k == 1) return qabn1_;
  if (k == 2) return qabn2_;
  fail(ErrorCode::IndexOutOfRange, "TinyNet has QABN sites 1 and 2, not " + std::to_string(k));
}

const qabn::QabnLayer& TinyNet::site(int k) const { return const_cast<TinyNet*>(this)->site(k); }

nn::Var TinyNet::forward(const nn::Var& images, const NormRoute& route, FeatureTap* tap) {
  auto normalize = [&](qabn::QabnLayer& layer, const nn::Var& x) {
    tap_if(tap, layer.site_id(), FeatureTap::Point::Input, x);
    nn::Var y = std::visit(
        [&](const auto& r) -> nn::Var {
          using R = std::decay_t<decltype(r)>;
          if constexpr (std::is_same_v<R, BaseRoute>) {
            return layer.forward_base(x, r.index, r.mode);
          } else {
            return layer.forward_meta(x, r.f_meta, r.mode);
          }
        },
        route);
    tap_if(tap, layer.site_id(), FeatureTap::Point::Output, y);
    return y;
  };
  nn::Var h = nn::conv2d(images, conv1_, nn::Var(), {1, 1});
  h = nn::max_pool2(nn::relu(normalize(qabn1_, h)));
  h = nn::conv2d(h, conv2_, nn::Var(), {1, 1});
  h = nn::max_pool2(nn::relu(normalize(qabn2_, h)));
  return nn::linear(nn::global_avg_pool(h), fc_w_, fc_b_);
}

nn::Var TinyNet::forward_meta(const nn::Var& images, std::span<const Qst> qsts, nn::BnMode mode, FeatureTap* tap) {
  if (qsts.size() != images.shape()[0]) {
    fail(ErrorCode::ShapeMismatch, "forward_meta: one QST per image required");
  }
  return forward(images, MetaRoute{meta_.forward(qsts), mode}, tap);
}

std::vector<NamedParam> TinyNet::named_parameters() const {
  std::vector<NamedParam> out;
  out.push_back({"conv1.weight", conv1_, ParamGroup::Remaining});
  out.push_back({"conv2.weight", conv2_, ParamGroup::Remaining});
  out.push_back({"fc.weight", fc_w_, ParamGroup::Remaining});
  out.push_back({"fc.bias", fc_b_, ParamGroup::Remaining});
  for (int s = 1; s <= kSites; ++s) {
    const auto& layer = site(s);
    for (std::size_t i = 0; i < layer.num_bases(); ++i) {
      out.push_back({site_prefix(s, i) + "gamma", layer.base(i).gamma, ParamGroup::BnBases});
      out.push_back({site_prefix(s, i) + "beta", layer.base(i).beta, ParamGroup::BnBases});
    }
  }
  const auto names = meta_.parameter_names();
  const auto params = meta_.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back({names[i], params[i], ParamGroup::Meta});
  return out;
}

std::vector<nn::Var> TinyNet::parameters(ParamGroup group) const {
  std::vector<nn::Var> out;
  for (auto& p : named_parameters()) {
    if (p.group == group) out.push_back(p.var);
  }
  return out;
}

std::vector<NamedBuffer> TinyNet::named_buffers() {
  std::vector<NamedBuffer> out;
  for (int s = 1; s <= kSites; ++s) {
    auto& layer = site(s);
    for (std::size_t i = 0; i < layer.num_bases(); ++i) {
      out.push_back({site_prefix(s, i) + "running_mean", &layer.base(i).running_mean});
      out.push_back({site_prefix(s, i) + "running_var", &layer.base(i).running_var});
    }
  }
  return out;
}

void TinyNet::set_trainable(ParamGroup group, bool on) {
  for (auto& p : named_parameters()) {
    if (p.group == group) p.var.set_requires_grad(on);
  }
}

void TinyNet::zero_grad() {
  for (auto& p : named_parameters()) p.var.zero_grad();
}

void TinyNet::init_bases_from(const TinyNet& baseline) {
  if (baseline.cfg_.bases != 1) fail(ErrorCode::InvalidArgument, "baseline model must have a single BN base");
  if (baseline.cfg_.width1 != cfg_.width1 || baseline.cfg_.width2 != cfg_.width2) {
    fail(ErrorCode::ShapeMismatch, "baseline widths differ");
  }
  qabn1_ = qabn::QabnLayer::init_from_baseline(baseline.qabn1_.base(0), cfg_.bases, 1);
  qabn2_ = qabn::QabnLayer::init_from_baseline(baseline.qabn2_.base(0), cfg_.bases, 2);
  conv1_.mutable_value() = baseline.conv1_.value();
  conv2_.mutable_value() = baseline.conv2_.value();
  fc_w_.mutable_value() = baseline.fc_w_.value();
  fc_b_.mutable_value() = baseline.fc_b_.value();
}

nn::Checkpoint TinyNet::to_checkpoint(const std::string& extra_json) const {
  json manifest = json::parse(extra_json);
  if (!manifest.is_object()) fail(ErrorCode::InvalidArgument, "checkpoint extra manifest must be a JSON object");
  manifest["format"] = "qsam-tinynet";
  manifest["classes"] = cfg_.classes;
  manifest["bases"] = cfg_.bases;
  manifest["width1"] = cfg_.width1;
  manifest["width2"] = cfg_.width2;
  manifest["meta_hidden"] = cfg_.meta_hidden;
  manifest["encoding"] = cfg_.encoding == qabn::FeatureEncoding::Reciprocal ? "reciprocal" : "raw";
  manifest["activation"] = cfg_.activation == qabn::OutputActivation::Softmax ? "softmax" : "linear";
  nn::Checkpoint ckpt;
  ckpt.manifest = manifest.dump();
  for (const auto& p : named_parameters()) ckpt.tensors.push_back({p.name, p.var.value()});
  for (const auto& b : const_cast<TinyNet*>(this)->named_buffers()) ckpt.tensors.push_back({b.name, *b.tensor});
  return ckpt;
}

TinyNet TinyNet::from_checkpoint(const nn::Checkpoint& ckpt) {
  json m;
  try {
    m = json::parse(ckpt.manifest);
  } catch (const json::exception& e) {
    fail(ErrorCode::BadContainer, std::string("checkpoint manifest is not JSON: ") + e.what());
  }
  if (m.value("format", "") != "qsam-tinynet") fail(ErrorCode::BadContainer, "checkpoint is not a TinyNet");
  TinyNetConfig cfg;
  cfg.classes = m.at("classes").get<std::size_t>();
  cfg.bases = m.at("bases").get<std::size_t>();
  cfg.width1 = m.at("width1").get<std::size_t>();
  cfg.width2 = m.at("width2").get<std::size_t>();
  cfg.meta_hidden = m.at("meta_hidden").get<std::size_t>();
  cfg.encoding = m.at("encoding") == "raw" ? qabn::FeatureEncoding::Raw : qabn::FeatureEncoding::Reciprocal;
  cfg.activation = m.at("activation") == "linear" ? qabn::OutputActivation::Linear : qabn::OutputActivation::Softmax;
  TinyNet net(cfg, 0);
  net.load_state(ckpt);
  return net;
}

void TinyNet::load_state(const nn::Checkpoint& ckpt) {
  auto load = [&](const std::string& name, nn::Tensor& dst) {
    const nn::Tensor* src = ckpt.find(name);
    if (!src) fail(ErrorCode::BadContainer, "checkpoint lacks tensor '" + name + "'");
    if (src->shape() != dst.shape()) {
      fail(ErrorCode::ShapeMismatch, "tensor '" + name + "' has shape " + nn::shape_string(src->shape()) +
                                         ", model expects " + nn::shape_string(dst.shape()));
    }
    dst = *src;
  };
  for (auto& p : named_parameters()) load(p.name, p.var.mutable_value());
  for (auto& b : named_buffers()) load(b.name, *b.tensor);
}

}  // namespace qsam
