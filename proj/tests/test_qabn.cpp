// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "qsam/codec_sim.hpp"
#include "qsam/error.hpp"
#include "qsam/model.hpp"
#include "qsam/nn/ops.hpp"
#include "qsam/qabn.hpp"

using namespace qsam;
using namespace qsam::nn;
using namespace qsam::qabn;

namespace {

Tensor randn(Shape s, std::mt19937_64& rng, double sd = 1.0, double mean = 0.0) {
  Tensor t(std::move(s));
  std::normal_distribution<double> d(mean, sd);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

// Distinct affine parameters and running statistics per base.
void scramble(QabnLayer& layer, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < layer.num_bases(); ++i) {
    auto& b = layer.base(i);
    b.gamma.mutable_value() = randn({layer.channels()}, rng, 0.5, 1.0);
    b.beta.mutable_value() = randn({layer.channels()}, rng);
    b.running_mean = randn({layer.channels()}, rng);
    for (std::size_t c = 0; c < layer.channels(); ++c) b.running_var[c] = 0.3 + static_cast<double>(rng() % 100) / 50.0;
  }
}

Var weights(std::size_t n, const std::vector<double>& row) {
  Tensor t({n, row.size()});
  for (std::size_t i = 0; i < n; ++i) std::copy(row.begin(), row.end(), t.data() + i * row.size());
  return constant(t);
}

double max_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

bool same_state(const BnState& a, const BnState& b) {
  return a.gamma.value() == b.gamma.value() && a.beta.value() == b.beta.value() && a.running_mean == b.running_mean &&
         a.running_var == b.running_var;
}

}  // namespace

TEST_SUITE("qabn") {

TEST_CASE("feature encoding") {
  for (double v : qst_to_feature(Qst())) CHECK(v == 1.0);
  std::array<std::uint8_t, kQstSize> all255{};
  all255.fill(255);
  for (double v : qst_to_feature(Qst::from_steps(all255))) CHECK(v == 1.0 / 255.0);
  const auto f = qst_to_feature(codec::scale_default_table(50));
  CHECK(f[0] == 1.0 / 16.0);
  CHECK(f[1] == 1.0 / 11.0);
  CHECK(f[64] == 1.0 / 17.0);
  CHECK(qst_to_feature(codec::scale_default_table(50), FeatureEncoding::Raw)[0] == 16.0 / 255.0);
}

TEST_CASE("meta-learner output") {
  std::mt19937_64 rng(51);
  MetaLearner m(16, 4, rng);
  std::mt19937_64 qrng(52);
  for (int t = 0; t < 50; ++t) {
    std::array<std::uint8_t, kQstSize> s{};
    for (auto& v : s) v = static_cast<std::uint8_t>(1 + qrng() % 255);
    const auto f = m.forward(Qst::from_steps(s));
    REQUIRE(f.size() == 4);
    double total = 0.0;
    for (double v : f) {
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
  }
  m.parameters()[2].mutable_value().fill(0.0);
  m.parameters()[3].mutable_value().fill(0.0);
  for (double v : m.forward(codec::scale_default_table(30))) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("single base is plain batch normalization") {
  std::mt19937_64 rng(53);
  QabnLayer layer(3, 1, 1);
  scramble(layer, rng);
  BnState plain = layer.base(0).clone();
  for (int step = 0; step < 3; ++step) {
    for (auto mode : {BnMode::Train, BnMode::Eval}) {
      const Var x = constant(randn({4, 3, 5, 5}, rng, 2.0, 1.0));
      const auto ref = batch_norm2d(x, plain, mode).value();
      QabnLayer copy = layer;
      CHECK(copy.forward_base(x, 0, mode).value() == ref);
      CHECK(layer.forward_meta(x, weights(4, {1.0}), mode).value() == ref);
      CHECK(layer.base(0).running_mean == plain.running_mean);
      CHECK(layer.base(0).running_var == plain.running_var);
    }
  }
  CHECK_THROWS_AS(layer.forward_base(constant(Tensor({1, 3, 2, 2})), 1, BnMode::Eval), Error);
}

TEST_CASE("one-hot mixing selects a base") {
  std::mt19937_64 rng(54);
  QabnLayer layer(4, 3, 1);
  scramble(layer, rng);
  const Var x = constant(randn({5, 4, 3, 3}, rng, 1.5));
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> row(3, 0.0);
    row[k] = 1.0;
    BnState ref = layer.base(k).clone();
    const auto expected = batch_norm2d(x, ref, BnMode::Eval).value();
    CHECK(max_diff(layer.forward_meta(x, weights(5, row), BnMode::Eval).value(), expected) < 1e-12);
  }
}

TEST_CASE("mixing with explicit weights") {
  std::mt19937_64 rng(55);
  QabnLayer layer(3, 2, 1);
  scramble(layer, rng);
  const Var x = constant(randn({2, 3, 4, 4}, rng));
  BnState b0 = layer.base(0).clone(), b1 = layer.base(1).clone();
  const auto y0 = batch_norm2d(x, b0, BnMode::Eval).value();
  const auto y1 = batch_norm2d(x, b1, BnMode::Eval).value();
  const auto mixed = layer.forward_meta(x, weights(2, {0.3, 0.7}), BnMode::Eval).value();
  for (std::size_t i = 0; i < mixed.size(); ++i) CHECK(mixed[i] == doctest::Approx(0.3 * y0[i] + 0.7 * y1[i]).epsilon(1e-13));

  QabnLayer twins = QabnLayer::init_from_baseline(layer.base(0), 2, 1);
  const auto half = twins.forward_meta(x, weights(2, {0.5, 0.5}), BnMode::Eval).value();
  CHECK(max_diff(half, y0) < 1e-12);
}

TEST_CASE("mixture stays inside the per-base envelope") {
  std::mt19937_64 rng(56);
  QabnLayer layer(3, 4, 2);
  scramble(layer, rng);
  for (int t = 0; t < 20; ++t) {
    const Var x = constant(randn({3, 3, 3, 3}, rng, 2.0));
    Tensor f({3, 4});
    for (std::size_t n = 0; n < 3; ++n) {
      double s = 0.0;
      for (std::size_t b = 0; b < 4; ++b) s += f[n * 4 + b] = static_cast<double>(rng() % 1000) + 1.0;
      for (std::size_t b = 0; b < 4; ++b) f[n * 4 + b] /= s;
    }
    const auto mixed = layer.forward_meta(x, constant(f), BnMode::Eval).value();
    std::vector<Tensor> per;
    for (std::size_t b = 0; b < 4; ++b) {
      BnState s = layer.base(b).clone();
      per.push_back(batch_norm2d(x, s, BnMode::Eval).value());
    }
    for (std::size_t i = 0; i < mixed.size(); ++i) {
      double lo = per[0][i], hi = per[0][i];
      for (const auto& p : per) {
        lo = std::min(lo, p[i]);
        hi = std::max(hi, p[i]);
      }
      CHECK(mixed[i] >= lo - 1e-12);
      CHECK(mixed[i] <= hi + 1e-12);
    }
  }
}

TEST_CASE("routing only moves the chosen base") {
  std::mt19937_64 rng(57);
  QabnLayer layer(2, 2, 1);
  const BnState before1 = layer.base(1).clone();
  double expect0 = 0.0, expect1 = 0.0;
  for (int step = 0; step < 6; ++step) {
    const bool first = step % 2 == 0;
    const Var x = constant(randn({8, 2, 3, 3}, rng, 1.0, first ? -2.0 : 3.0));
    layer.forward_base(x, first ? 0 : 1, BnMode::Train);
    double mean = 0.0;
    for (std::size_t n = 0; n < 8; ++n) {
      for (std::size_t i = 0; i < 9; ++i) mean += x.value()[(n * 2) * 9 + i];
    }
    mean /= 72.0;
    double& e = first ? expect0 : expect1;
    e = 0.9 * e + 0.1 * mean;
    if (step == 0) CHECK(same_state(layer.base(1), before1));
  }
  CHECK(layer.base(0).running_mean[0] == doctest::Approx(expect0).epsilon(1e-12));
  CHECK(layer.base(1).running_mean[0] == doctest::Approx(expect1).epsilon(1e-12));
  CHECK(layer.base(0).running_mean[0] < -0.5);
  CHECK(layer.base(1).running_mean[0] > 0.5);
}

TEST_CASE("initialization from a baseline") {
  std::mt19937_64 rng(58);
  QabnLayer src(3, 1, 1);
  scramble(src, rng);
  QabnLayer layer = QabnLayer::init_from_baseline(src.base(0), 4, 1);
  for (std::size_t i = 1; i < 4; ++i) CHECK(same_state(layer.base(i), layer.base(0)));
  // Deep copies: no shared parameter nodes.
  CHECK(layer.base(1).gamma.node() != layer.base(0).gamma.node());

  const Var x = constant(randn({3, 3, 4, 4}, rng));
  BnState ref = src.base(0).clone();
  const auto expected = batch_norm2d(x, ref, BnMode::Eval).value();
  for (int t = 0; t < 10; ++t) {
    Tensor f({3, 4});
    for (std::size_t n = 0; n < 3; ++n) {
      double rest = 1.0;
      for (std::size_t k = 0; k < 3; ++k) rest -= f[n * 4 + k] = static_cast<double>(rng() % 1000) / 250.0 - 2.0;
      f[n * 4 + 3] = rest;  // affine, not convex
    }
    CHECK(max_diff(layer.forward_meta(x, constant(f), BnMode::Eval).value(), expected) < 1e-12);
  }

  const Var xb = constant(randn({4, 3, 4, 4}, rng, 1.0, 0.5));
  const std::vector<int> labels{0, 1, 0, 1};
  Var out = layer.forward_base(xb, 0, BnMode::Train);
  backward(sum(mul(out, out)));
  auto& g = layer.base(0).gamma.mutable_value();
  for (std::size_t c = 0; c < 3; ++c) g[c] -= 0.1 * layer.base(0).gamma.grad()[c];
  CHECK_FALSE(same_state(layer.base(0), layer.base(1)));
  CHECK(same_state(layer.base(1), layer.base(2)));
}

TEST_CASE("network initialized from a single-base network matches it on the meta path") {
  std::mt19937_64 rng(59);
  TinyNetConfig one;
  one.width1 = 4;
  one.width2 = 5;
  TinyNet base(one, 3);
  for (auto& b : base.named_buffers()) {
    for (auto& v : b.tensor->values()) v = b.name.find("var") != std::string::npos ? 0.7 : -0.2;
  }
  TinyNetConfig many = one;
  many.bases = 4;
  TinyNet net(many, 4);
  net.init_bases_from(base);
  // Backbone weights come from the baseline too.
  for (const auto& p : base.named_parameters()) {
    for (const auto& q : net.named_parameters()) {
      if (q.name == p.name && p.group == ParamGroup::Remaining) q.var.node()->value = p.var.value();
    }
  }
  const Var x = constant(randn({3, 3, 8, 8}, rng));
  const std::vector<Qst> qs{codec::scale_default_table(10), codec::scale_default_table(55), Qst()};
  const auto ref = base.forward(x, BaseRoute{0, BnMode::Eval}).value();
  CHECK(max_diff(net.forward_meta(x, qs).value(), ref) < 1e-12);
}

TEST_CASE("parameter groups partition the network") {
  TinyNetConfig cfg;
  cfg.bases = 3;
  TinyNet net(cfg, 1);
  std::set<std::string> all, bnb, rem, meta;
  for (const auto& p : net.named_parameters()) {
    CHECK(all.insert(p.name).second);
    (p.group == ParamGroup::BnBases ? bnb : p.group == ParamGroup::Remaining ? rem : meta).insert(p.name);
  }
  CHECK(bnb.size() + rem.size() + meta.size() == all.size());
  std::set<std::string> uni(bnb);
  uni.insert(rem.begin(), rem.end());
  uni.insert(meta.begin(), meta.end());
  CHECK(uni == all);
  CHECK(bnb.size() == 2 * 3 * 2);
  CHECK(meta.size() == 4);
  for (const auto& n : meta) CHECK(n.rfind("meta.", 0) == 0);
  for (const auto& n : bnb) CHECK(n.rfind("qabn.", 0) == 0);

  // Every checkpoint tensor is a parameter or a running statistic.
  std::set<std::string> buffers;
  for (const auto& b : net.named_buffers()) buffers.insert(b.name);
  for (const auto& t : net.to_checkpoint().tensors) CHECK((all.count(t.name) + buffers.count(t.name)) == 1);
  CHECK(net.to_checkpoint().tensors.size() == all.size() + buffers.size());
}

TEST_CASE("one meta-learner drives every site") {
  std::mt19937_64 rng(60);
  TinyNetConfig cfg;
  cfg.bases = 3;
  cfg.width1 = 4;
  cfg.width2 = 5;
  TinyNet net(cfg, 8);
  for (int s = 1; s <= TinyNet::kSites; ++s) scramble(net.site(s), rng);
  const Var x = constant(randn({2, 3, 8, 8}, rng));
  const std::vector<Qst> qs{codec::scale_default_table(20), codec::scale_default_table(80)};

  auto check_sites = [&] {
    const Var f = net.meta().forward(qs);
    for (int s = 1; s <= TinyNet::kSites; ++s) {
      FeatureTap in{s, FeatureTap::Point::Input, {}}, out{s, FeatureTap::Point::Output, {}};
      net.forward_meta(x, qs, BnMode::Eval, &in);
      net.forward_meta(x, qs, BnMode::Eval, &out);
      QabnLayer copy = net.site(s);
      CHECK(max_diff(copy.forward_meta(constant(in.captured), f, BnMode::Eval).value(), out.captured) < 1e-12);
    }
    return f.value();
  };
  const Tensor before = check_sites();
  net.meta().parameters()[3].mutable_value()[0] += 1.5;
  const Tensor after = check_sites();
  CHECK(max_diff(before, after) > 1e-3);
}

}  // TEST_SUITE
