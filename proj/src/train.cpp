// SPDX-License-Identifier: Apache-2.0
#include "qsam/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "qsam/error.hpp"
#include "qsam/jpeg_io.hpp"
#include "qsam/nn/ops.hpp"

namespace qsam::train {
namespace {

// Independent streams for independent purposes, all from the one seed.
enum class Stream : std::uint32_t { Model = 1, BaseShuffle = 2, MetaSampling = 3 };

std::mt19937_64 make_rng(std::uint64_t seed, Stream s) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(s)};
  return std::mt19937_64(seq);
}

std::uint64_t model_seed(std::uint64_t seed) { return make_rng(seed, Stream::Model)(); }

std::vector<int> labels_of(const data::Dataset& ds, std::span<const std::size_t> records) {
  std::vector<int> out;
  out.reserve(records.size());
  for (auto r : records) out.push_back(ds.records[r].label);
  return out;
}

std::vector<Qst> qsts_of(const data::Dataset& ds, std::span<const std::size_t> records) {
  std::vector<Qst> out;
  out.reserve(records.size());
  for (auto r : records) out.push_back(ds.qsts[ds.records[r].qst_id]);
  return out;
}

std::vector<double> qac_weights(const data::Dataset& ds, std::span<const std::size_t> records,
                                const qac::QacConfig& cfg) {
  std::vector<double> w;
  w.reserve(records.size());
  for (auto r : records) w.push_back(qac::qac(ds.qsts[ds.records[r].qst_id], cfg));
  return w;
}

std::size_t argmax_row(const nn::Tensor& logits, std::size_t n) {
  const std::size_t K = logits.dim(1);
  const double* row = logits.data() + n * K;
  return static_cast<std::size_t>(std::max_element(row, row + K) - row);
}

// Running per-QST hit counts for one epoch.
struct HitCounter {
  std::vector<std::size_t> correct, total;
  explicit HitCounter(std::size_t n) : correct(n, 0), total(n, 0) {}
  void add(std::size_t qst_id, bool hit) {
    ++total[qst_id];
    if (hit) ++correct[qst_id];
  }
  std::vector<std::optional<double>> accuracy() const {
    std::vector<std::optional<double>> out(total.size());
    for (std::size_t i = 0; i < total.size(); ++i) {
      if (total[i]) out[i] = static_cast<double>(correct[i]) / static_cast<double>(total[i]);
    }
    return out;
  }
};

std::string format_double(double v) {
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

std::vector<nn::Tensor> take_grads(std::vector<nn::Var>& params) {
  std::vector<nn::Tensor> g;
  g.reserve(params.size());
  for (auto& p : params) g.push_back(p.grad());
  return g;
}

std::vector<nn::Tensor> gradient_of(std::vector<nn::Var>& params, const nn::Var& loss) {
  for (auto& p : params) p.zero_grad();
  nn::backward(loss);
  auto g = take_grads(params);
  for (auto& p : params) p.zero_grad();
  return g;
}

// params <- base + s * dir
void set_shifted(std::vector<nn::Var>& params, const std::vector<nn::Tensor>& base,
                 const std::vector<nn::Tensor>& dir, double s) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    nn::Tensor& v = params[i].mutable_value();
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = base[i][j] + s * dir[i][j];
  }
}

double norm2(const std::vector<nn::Tensor>& ts) {
  double s = 0.0;
  for (const auto& t : ts) {
    for (double v : t.values()) s += v * v;
  }
  return std::sqrt(s);
}

// Saves requires_grad of the backbone and BN bases, freezes them, and puts
// them back on destruction.
class FreezeBackbone {
 public:
  explicit FreezeBackbone(TinyNet& m) {
    for (auto& p : m.named_parameters()) {
      if (p.group != ParamGroup::Meta) {
        saved_.emplace_back(p.var, p.var.requires_grad());
        p.var.set_requires_grad(false);
      }
    }
    for (auto& p : m.parameters(ParamGroup::Meta)) p.set_requires_grad(true);
  }
  ~FreezeBackbone() {
    for (auto& [v, on] : saved_) v.set_requires_grad(on);
  }
  FreezeBackbone(const FreezeBackbone&) = delete;
  FreezeBackbone& operator=(const FreezeBackbone&) = delete;

 private:
  std::vector<std::pair<nn::Var, bool>> saved_;
};

TinyNetConfig net_config(const data::Dataset& ds, const TrainConfig& cfg, std::size_t bases) {
  TinyNetConfig tc;
  tc.classes = ds.classes;
  tc.bases = bases;
  tc.width1 = cfg.width1;
  tc.width2 = cfg.width2;
  tc.meta_hidden = cfg.meta_hidden;
  tc.encoding = cfg.encoding;
  tc.activation = cfg.activation;
  return tc;
}

}  // namespace

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) fail(ErrorCode::InvalidArgument, std::string(name) + " must be > 0");
  };
  positive(alpha, "alpha");
  positive(gamma, "gamma");
  if (!(beta >= 0.0) || !std::isfinite(beta)) fail(ErrorCode::InvalidArgument, "beta must be >= 0");
  positive(lr_factor, "lr_factor");
  if (batch == 0) fail(ErrorCode::InvalidArgument, "batch must be >= 1");
  if (M == 0) fail(ErrorCode::InvalidArgument, "M must be >= 1");
  if (!(weight_decay >= 0.0) || !(momentum >= 0.0) || !(dampening >= 0.0)) {
    fail(ErrorCode::InvalidArgument, "weight_decay, momentum and dampening must be >= 0");
  }
  for (double m : milestones) {
    if (!(m > 0.0 && m < 1.0)) fail(ErrorCode::InvalidArgument, "milestones are fractions in (0, 1)");
  }
  if (!(qac.normalizer > 0.0)) fail(ErrorCode::InvalidArgument, "QAC normalizer must be > 0");
}

double TrainConfig::base_lr(std::size_t epoch) const {
  double lr = alpha;
  for (double m : milestones) {
    const auto at = static_cast<std::size_t>(std::lround(m * static_cast<double>(ite1)));
    if (epoch >= at) lr *= lr_factor;
  }
  return lr;
}

// ---------------------------------------------------------------- statistics

std::size_t QstHistogram::total() const {
  std::size_t t = 0;
  for (const auto& b : buckets) t += b.count;
  return t;
}

QstHistogram collect_qst_stats(const data::Dataset& ds) {
  std::vector<std::size_t> counts(ds.qsts.size(), 0);
  for (const auto& r : ds.records) ++counts.at(r.qst_id);
  QstHistogram h;
  for (std::size_t i = 0; i < ds.qsts.size(); ++i) {
    if (counts[i] == 0) continue;
    h.buckets.push_back({ds.qsts[i], counts[i], jpeg::classify_qst(ds.qsts[i]).qf});
  }
  std::stable_sort(h.buckets.begin(), h.buckets.end(), [](const QstBucket& a, const QstBucket& b) {
    if (a.count != b.count) return a.count > b.count;
    if (a.qf.has_value() != b.qf.has_value()) return a.qf.has_value();
    if (a.qf && b.qf) return *a.qf < *b.qf;
    return a.qst < b.qst;
  });
  return h;
}

namespace {

// Sorted ascending gaps between consecutive chosen QFs.
std::vector<int> sorted_gaps(const std::vector<int>& chosen_desc) {
  std::vector<int> g;
  for (std::size_t i = 1; i < chosen_desc.size(); ++i) g.push_back(chosen_desc[i - 1] - chosen_desc[i]);
  std::sort(g.begin(), g.end());
  return g;
}

// True when candidate `a` ranks above `b`: larger minimum gap, then larger
// gaps in leximin order, then wider range, then smaller QF sum.
bool spread_better(const std::vector<int>& a, const std::vector<int>& b) {
  const auto ga = sorted_gaps(a), gb = sorted_gaps(b);
  if (ga != gb) return std::lexicographical_compare(gb.begin(), gb.end(), ga.begin(), ga.end());
  const int ra = a.front() - a.back(), rb = b.front() - b.back();
  if (ra != rb) return ra > rb;
  const int sa = std::accumulate(a.begin(), a.end(), 0), sb = std::accumulate(b.begin(), b.end(), 0);
  return sa < sb;
}

// Branch and bound over subsets of `qfs` (descending). Adding a QF never
// raises the minimum gap, so branches whose running minimum already falls
// below the best one are cut.
void spread_search(const std::vector<int>& qfs, std::size_t M, std::size_t next, std::vector<int>& cur,
                   int cur_min_gap, std::vector<int>& best, int& best_min_gap) {
  if (cur.size() == M) {
    if (best.empty() || spread_better(cur, best)) {
      best = cur;
      best_min_gap = cur_min_gap;
    }
    return;
  }
  for (std::size_t i = next; i + (M - cur.size()) <= qfs.size(); ++i) {
    const int gap = cur.empty() ? std::numeric_limits<int>::max() : cur.back() - qfs[i];
    const int m = std::min(cur_min_gap, gap);
    if (!best.empty() && m < best_min_gap) continue;
    cur.push_back(qfs[i]);
    spread_search(qfs, M, i + 1, cur, m, best, best_min_gap);
    cur.pop_back();
  }
}

}  // namespace

qabn::QstBasisSet select_bases(const QstHistogram& hist, std::size_t M, BasisStrategy strategy) {
  if (M == 0) fail(ErrorCode::InvalidArgument, "M must be >= 1");
  if (hist.buckets.size() < M) {
    fail(ErrorCode::InsufficientDistinctQsts, "histogram has " + std::to_string(hist.buckets.size()) +
                                                  " distinct QSTs, " + std::to_string(M) + " bases requested");
  }
  if (strategy == BasisStrategy::TopFrequency) {
    std::vector<QstBucket> order = hist.buckets;
    std::stable_sort(order.begin(), order.end(), [](const QstBucket& a, const QstBucket& b) {
      if (a.count != b.count) return a.count > b.count;
      if (a.qf.has_value() != b.qf.has_value()) return a.qf.has_value();
      if (a.qf && b.qf) return *a.qf > *b.qf;
      return a.qst < b.qst;
    });
    std::vector<Qst> out;
    for (std::size_t i = 0; i < M; ++i) out.push_back(order[i].qst);
    return qabn::QstBasisSet(std::move(out));
  }

  std::map<int, Qst, std::greater<>> by_qf;
  for (const auto& b : hist.buckets) {
    if (b.qf) by_qf.emplace(*b.qf, b.qst);
  }
  if (by_qf.size() < M) {
    fail(ErrorCode::InsufficientDistinctQsts, "spread selection needs " + std::to_string(M) +
                                                  " default-table QSTs, histogram has " +
                                                  std::to_string(by_qf.size()));
  }
  std::vector<int> qfs;
  for (const auto& [qf, q] : by_qf) qfs.push_back(qf);
  std::vector<int> cur, best;
  int best_min_gap = 0;
  spread_search(qfs, M, 0, cur, std::numeric_limits<int>::max(), best, best_min_gap);
  std::vector<Qst> out;
  for (int qf : best) out.push_back(by_qf.at(qf));
  return qabn::QstBasisSet(std::move(out));
}

// ---------------------------------------------------------------- split

DatasetSplit split_dataset(const data::Dataset& ds, const qabn::QstBasisSet& bases) {
  std::vector<int> route(ds.qsts.size());
  for (std::size_t i = 0; i < ds.qsts.size(); ++i) route[i] = bases.index_of(ds.qsts[i]);
  DatasetSplit s;
  for (std::size_t r = 0; r < ds.records.size(); ++r) {
    const int b = route.at(ds.records[r].qst_id);
    if (b >= 0) {
      s.base.push_back(r);
      s.base_index.push_back(static_cast<std::size_t>(b));
    } else {
      s.meta.push_back(r);
    }
  }
  return s;
}

DatasetSplit single_base_split(const data::Dataset& ds) {
  DatasetSplit s;
  s.base.resize(ds.records.size());
  std::iota(s.base.begin(), s.base.end(), std::size_t{0});
  s.base_index.assign(ds.records.size(), 0);
  return s;
}

nn::Tensor images_to_tensor(const data::Dataset& ds, std::span<const std::size_t> records) {
  if (records.empty()) fail(ErrorCode::InvalidArgument, "empty batch");
  const auto& first = ds.records.at(records[0]).image;
  const std::size_t H = first.height, W = first.width, HW = H * W;
  nn::Tensor t(nn::Shape{records.size(), 3, H, W});
  for (std::size_t n = 0; n < records.size(); ++n) {
    const auto& img = ds.records.at(records[n]).image;
    if (img.height != H || img.width != W) fail(ErrorCode::ShapeMismatch, "images in a batch differ in size");
    double* dst = t.data() + n * 3 * HW;
    for (std::size_t i = 0; i < HW; ++i) {
      for (std::size_t c = 0; c < 3; ++c) dst[c * HW + i] = (static_cast<double>(img.pixels[3 * i + c]) - 128.0) / 64.0;
    }
  }
  return t;
}

// ---------------------------------------------------------------- metrics

std::string metrics_csv_header(const data::Dataset& ds) {
  std::string h = "epoch,phase,loss,L_inner,L_out,L_basis";
  for (const auto& q : ds.qsts) h += ",acc_" + data::qst_label(q);
  return h + "\n";
}

std::string metrics_csv_row(const EpochMetrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  std::string row = std::to_string(m.epoch) + "," + m.phase + "," + format_double(m.loss) + "," + opt(m.l_inner) +
                    "," + opt(m.l_out) + "," + opt(m.l_basis);
  for (const auto& a : m.qst_accuracy) row += "," + opt(a);
  return row + "\n";
}

// ---------------------------------------------------------------- base phase

std::vector<EpochMetrics> base_train(TinyNet& model, const data::Dataset& ds, const DatasetSplit& split,
                                     const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (split.base.empty()) fail(ErrorCode::EmptyBaseSplit, "no samples carry a basis QST");
  if (split.base_index.size() != split.base.size()) fail(ErrorCode::InvalidArgument, "split is inconsistent");
  for (auto b : split.base_index) {
    if (b >= model.config().bases) fail(ErrorCode::IndexOutOfRange, "split routes to a missing BN base");
  }

  model.set_trainable(ParamGroup::Meta, false);
  model.set_trainable(ParamGroup::Remaining, true);
  model.set_trainable(ParamGroup::BnBases, true);
  std::vector<nn::Var> params = model.parameters(ParamGroup::Remaining);
  for (auto& p : model.parameters(ParamGroup::BnBases)) params.push_back(p);
  auto opt = nn::OptimizerState::sgd(cfg.alpha, cfg.momentum, cfg.weight_decay, cfg.dampening);
  auto rng = make_rng(cfg.seed, Stream::BaseShuffle);

  std::vector<std::size_t> order(split.base.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<EpochMetrics> history;
  for (std::size_t epoch = 0; epoch < cfg.ite1; ++epoch) {
    opt.lr = cfg.base_lr(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    HitCounter hits(ds.qsts.size());
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      std::map<std::size_t, std::vector<std::size_t>> groups;
      for (std::size_t i = start; i < end; ++i) groups[split.base_index[order[i]]].push_back(split.base[order[i]]);

      nn::Var total;
      double total_w = 0.0;
      for (const auto& [b, recs] : groups) {
        nn::Var logits = model.forward(nn::constant(images_to_tensor(ds, recs)), BaseRoute{b, nn::BnMode::Train});
        const auto labels = labels_of(ds, recs);
        const auto w = qac_weights(ds, recs, cfg.qac);
        nn::Var l = qac::weighted_ce_loss(logits, labels, w, nn::Reduction::Sum);
        total = total.defined() ? nn::add(total, l) : l;
        total_w += std::accumulate(w.begin(), w.end(), 0.0);
        for (std::size_t n = 0; n < recs.size(); ++n) {
          hits.add(ds.records[recs[n]].qst_id, argmax_row(logits.value(), n) == static_cast<std::size_t>(labels[n]));
        }
      }
      nn::Var loss = nn::scale(total, 1.0 / total_w);
      for (auto& p : params) p.zero_grad();
      nn::backward(loss);
      nn::optimizer_step(params, opt);
      loss_sum += loss.value().item();
      ++batches;
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.phase = "base";
    m.loss = loss_sum / static_cast<double>(batches);
    m.qst_accuracy = hits.accuracy();
    if (!std::isfinite(m.loss)) fail(ErrorCode::InvalidArgument, "base training diverged (non-finite loss)");
    if (on_epoch) on_epoch(m);
    history.push_back(std::move(m));
  }
  for (auto& p : params) p.zero_grad();
  model.set_trainable(ParamGroup::Meta, true);
  return history;
}

// ---------------------------------------------------------------- meta phase

nn::Var basis_loss(const qabn::MetaLearner& meta, const qabn::QstBasisSet& bases) {
  const std::size_t M = bases.size();
  if (meta.num_bases() != M) fail(ErrorCode::ShapeMismatch, "meta-learner width differs from the basis count");
  nn::Tensor onehot(nn::Shape{M, M}, 0.0);
  for (std::size_t k = 0; k < M; ++k) onehot[k * M + k] = 1.0;
  return nn::sum(nn::abs(nn::sub(meta.forward(bases.bases()), nn::constant(std::move(onehot)))));
}

MetaTrainer::MetaTrainer(const data::Dataset& ds, const DatasetSplit& split, const qabn::QstBasisSet& bases,
                         const TrainConfig& cfg)
    : ds_(ds), split_(split), bases_(bases), cfg_(cfg), rng_(make_rng(cfg.seed, Stream::MetaSampling)),
      adam_(nn::OptimizerState::adam(cfg.gamma)) {
  cfg_.validate();
  if (split.base.empty()) fail(ErrorCode::EmptyBaseSplit, "no samples carry a basis QST");
  if (split.meta.empty()) fail(ErrorCode::EmptyMetaSplit, "every sample carries a basis QST");
  per_basis_.resize(bases.size());
  for (std::size_t i = 0; i < split.base.size(); ++i) per_basis_.at(split.base_index[i]).push_back(split.base[i]);
  per_basis_cursor_.assign(bases.size(), 0);
  for (auto& v : per_basis_) std::shuffle(v.begin(), v.end(), rng_);
  meta_order_ = split.meta;
  std::shuffle(meta_order_.begin(), meta_order_.end(), rng_);
}

std::size_t MetaTrainer::steps_per_epoch() const { return (split_.meta.size() + cfg_.batch - 1) / cfg_.batch; }

std::vector<std::size_t> MetaTrainer::next_inner(std::size_t basis) {
  auto& pool = per_basis_[basis];
  auto& cur = per_basis_cursor_[basis];
  std::vector<std::size_t> out;
  while (out.size() < std::min(cfg_.batch, pool.size())) {
    if (cur == pool.size()) {
      std::shuffle(pool.begin(), pool.end(), rng_);
      cur = 0;
    }
    out.push_back(pool[cur++]);
  }
  return out;
}

std::vector<std::size_t> MetaTrainer::next_outer() {
  if (meta_cursor_ == meta_order_.size()) {
    std::shuffle(meta_order_.begin(), meta_order_.end(), rng_);
    meta_cursor_ = 0;
  }
  const std::size_t end = std::min(meta_order_.size(), meta_cursor_ + cfg_.batch);
  std::vector<std::size_t> out(meta_order_.begin() + static_cast<long>(meta_cursor_),
                               meta_order_.begin() + static_cast<long>(end));
  meta_cursor_ = end;
  return out;
}

MetaStepLosses MetaTrainer::step(TinyNet& model) {
  // Round robin over bases that have samples.
  std::size_t basis = round_robin_ % bases_.size();
  for (std::size_t tries = 0; per_basis_[basis].empty(); ++tries) {
    if (tries == bases_.size()) fail(ErrorCode::EmptyBaseSplit, "no basis has samples");
    basis = (basis + 1) % bases_.size();
  }
  round_robin_ = basis + 1;
  const auto inner = next_inner(basis);
  const auto outer = next_outer();
  return step(model, basis, inner, outer);
}

MetaStepLosses MetaTrainer::step(TinyNet& model, std::size_t basis, std::span<const std::size_t> inner_records,
                                 std::span<const std::size_t> outer_records) {
  if (basis >= bases_.size()) fail(ErrorCode::IndexOutOfRange, "basis index out of range");
  if (inner_records.empty()) fail(ErrorCode::EmptyBaseSplit, "empty inner batch");
  if (outer_records.empty()) fail(ErrorCode::EmptyMetaSplit, "empty outer batch");
  FreezeBackbone freeze(model);
  std::vector<nn::Var> params = model.meta().parameters();

  const nn::Var x_in = nn::constant(images_to_tensor(ds_, inner_records));
  const std::vector<Qst> q_in(inner_records.size(), bases_[basis]);
  const auto y_in = labels_of(ds_, inner_records);
  const auto w_in = qac_weights(ds_, inner_records, cfg_.qac);
  auto inner_loss = [&] {
    return qac::weighted_ce_loss(model.forward_meta(x_in, q_in, nn::BnMode::Eval), y_in, w_in);
  };

  MetaStepLosses losses;
  const nn::Var l_in = inner_loss();
  losses.inner = l_in.value().item();
  const auto g_in = gradient_of(params, l_in);

  std::vector<nn::Tensor> theta;
  for (auto& p : params) theta.push_back(p.value());
  set_shifted(params, theta, g_in, -cfg_.beta);

  const nn::Var x_out = nn::constant(images_to_tensor(ds_, outer_records));
  const auto q_out = qsts_of(ds_, outer_records);
  const auto y_out = labels_of(ds_, outer_records);
  const auto w_out = qac_weights(ds_, outer_records, cfg_.qac);
  const nn::Var logits_out = model.forward_meta(x_out, q_out, nn::BnMode::Eval);
  const nn::Var l_out = qac::weighted_ce_loss(logits_out, y_out, w_out);
  losses.outer = l_out.value().item();
  outer_hits_.clear();
  for (std::size_t n = 0; n < outer_records.size(); ++n) {
    outer_hits_.emplace_back(ds_.records[outer_records[n]].qst_id,
                             argmax_row(logits_out.value(), n) == static_cast<std::size_t>(y_out[n]));
  }
  auto g_out = gradient_of(params, l_out);

  if (cfg_.second_order && cfg_.beta > 0.0) {
    // d/dθ of L_out(θ - β∇L_in(θ)) = (I - β H_in(θ)) g_out, with the
    // Hessian-vector product from a central difference of inner gradients.
    const double gn = norm2(g_out);
    if (gn > 0.0) {
      const double eps = 1e-4 * std::max(1.0, norm2(theta)) / gn;
      set_shifted(params, theta, g_out, eps);
      const auto g_plus = gradient_of(params, inner_loss());
      set_shifted(params, theta, g_out, -eps);
      const auto g_minus = gradient_of(params, inner_loss());
      for (std::size_t i = 0; i < g_out.size(); ++i) {
        for (std::size_t j = 0; j < g_out[i].size(); ++j) {
          g_out[i][j] -= cfg_.beta * (g_plus[i][j] - g_minus[i][j]) / (2.0 * eps);
        }
      }
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].mutable_value() = theta[i];

  const nn::Var l_basis = basis_loss(model.meta(), bases_);
  losses.basis = l_basis.value().item();
  const auto g_basis = gradient_of(params, l_basis);

  std::vector<nn::Tensor> total = g_in;
  for (std::size_t i = 0; i < total.size(); ++i) {
    for (std::size_t j = 0; j < total[i].size(); ++j) total[i][j] += g_out[i][j] + g_basis[i][j];
  }
  std::vector<nn::Tensor*> ptrs;
  std::vector<const nn::Tensor*> grads;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ptrs.push_back(&params[i].mutable_value());
    grads.push_back(&total[i]);
  }
  nn::adam_step(ptrs, grads, adam_);
  return losses;
}

std::vector<EpochMetrics> meta_train(TinyNet& model, const data::Dataset& ds, const DatasetSplit& split,
                                     const qabn::QstBasisSet& bases, const TrainConfig& cfg,
                                     const EpochCallback& on_epoch) {
  cfg.validate();
  std::vector<EpochMetrics> history;
  if (cfg.ite2 == 0) return history;
  MetaTrainer trainer(ds, split, bases, cfg);
  for (std::size_t epoch = 0; epoch < cfg.ite2; ++epoch) {
    HitCounter hits(ds.qsts.size());
    MetaStepLosses sum;
    const std::size_t steps = trainer.steps_per_epoch();
    for (std::size_t s = 0; s < steps; ++s) {
      const auto l = trainer.step(model);
      sum.inner += l.inner;
      sum.outer += l.outer;
      sum.basis += l.basis;
      for (const auto& [q, hit] : trainer.last_outer_hits()) hits.add(q, hit);
    }
    const double n = static_cast<double>(steps);
    EpochMetrics m;
    m.epoch = epoch;
    m.phase = "meta";
    m.l_inner = sum.inner / n;
    m.l_out = sum.outer / n;
    m.l_basis = sum.basis / n;
    m.loss = *m.l_inner + *m.l_out + *m.l_basis;
    m.qst_accuracy = hits.accuracy();
    if (!std::isfinite(m.loss)) fail(ErrorCode::InvalidArgument, "meta training diverged (non-finite loss)");
    if (on_epoch) on_epoch(m);
    history.push_back(std::move(m));
  }
  return history;
}

TrainOutcome train_qam(const data::Dataset& ds, const TrainConfig& cfg, const EpochCallback& on_epoch,
                       const TinyNet* init) {
  cfg.validate();
  const auto hist = collect_qst_stats(ds);
  auto bases = select_bases(hist, cfg.M, cfg.strategy);
  const auto split = split_dataset(ds, bases);
  TinyNet model(net_config(ds, cfg, cfg.M), model_seed(cfg.seed));
  if (init) model.init_bases_from(*init);
  auto history = base_train(model, ds, split, cfg, on_epoch);
  auto meta_hist = meta_train(model, ds, split, bases, cfg, on_epoch);
  history.insert(history.end(), meta_hist.begin(), meta_hist.end());
  return TrainOutcome{std::move(model), std::move(bases), std::move(history)};
}

TrainOutcome train_baseline(const data::Dataset& ds, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  TrainConfig c = cfg;
  c.M = 1;
  c.qac.enabled = false;
  c.validate();
  TinyNet model(net_config(ds, c, 1), model_seed(c.seed));
  auto history = base_train(model, ds, single_base_split(ds), c, on_epoch);
  return TrainOutcome{std::move(model), qabn::QstBasisSet{}, std::move(history)};
}

// ---------------------------------------------------------------- evaluation

EvalReport evaluate(TinyNet& model, const data::Dataset& ds, std::span<const Qst> seen) {
  constexpr std::size_t kChunk = 256;
  std::vector<std::size_t> correct(ds.qsts.size(), 0), total(ds.qsts.size(), 0);
  std::vector<std::size_t> all(ds.records.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  for (std::size_t start = 0; start < all.size(); start += kChunk) {
    const std::span<const std::size_t> recs(all.data() + start, std::min(kChunk, all.size() - start));
    const auto qsts = qsts_of(ds, recs);
    const nn::Var logits = model.forward_meta(nn::constant(images_to_tensor(ds, recs)), qsts, nn::BnMode::Eval);
    for (std::size_t n = 0; n < recs.size(); ++n) {
      const auto& r = ds.records[recs[n]];
      ++total[r.qst_id];
      if (argmax_row(logits.value(), n) == r.label) ++correct[r.qst_id];
    }
  }
  EvalReport rep;
  double s_sum = 0.0, u_sum = 0.0, all_sum = 0.0;
  std::size_t s_n = 0, u_n = 0;
  for (std::size_t i = 0; i < ds.qsts.size(); ++i) {
    if (total[i] == 0) continue;
    QstAccuracy row;
    row.qst = ds.qsts[i];
    row.label = data::qst_label(ds.qsts[i]);
    row.seen = std::find(seen.begin(), seen.end(), ds.qsts[i]) != seen.end();
    row.correct = correct[i];
    row.total = total[i];
    all_sum += row.accuracy();
    if (row.seen) {
      s_sum += row.accuracy();
      ++s_n;
    } else {
      u_sum += row.accuracy();
      ++u_n;
    }
    rep.rows.push_back(std::move(row));
  }
  if (!rep.rows.empty()) rep.mean_accuracy = all_sum / static_cast<double>(rep.rows.size());
  if (s_n) rep.avg_seen = s_sum / static_cast<double>(s_n);
  if (u_n) rep.avg_unseen = u_sum / static_cast<double>(u_n);
  return rep;
}

std::string eval_csv(const EvalReport& r) {
  std::string out = "qst,seen,correct,total,accuracy\n";
  for (const auto& row : r.rows) {
    out += row.label + "," + (row.seen ? "1" : "0") + "," + std::to_string(row.correct) + "," +
           std::to_string(row.total) + "," + format_double(row.accuracy()) + "\n";
  }
  out += "Avg,,,," + format_double(r.mean_accuracy) + "\n";
  if (r.avg_seen) out += "Avg(S),,,," + format_double(*r.avg_seen) + "\n";
  if (r.avg_unseen) out += "Avg(U),,,," + format_double(*r.avg_unseen) + "\n";
  return out;
}

// ---------------------------------------------------------------- diagnostics

double gaussian_kl(double mu_p, double var_p, double mu_q, double var_q) {
  return 0.5 * (std::log(var_q / var_p) + (var_p + (mu_p - mu_q) * (mu_p - mu_q)) / var_q - 1.0);
}

double symmetric_kl(double mu_p, double var_p, double mu_q, double var_q) {
  return gaussian_kl(mu_p, var_p, mu_q, var_q) + gaussian_kl(mu_q, var_q, mu_p, var_p);
}

double gaussian_js(double mu_p, double var_p, double mu_q, double var_q) {
  if (mu_p == mu_q && var_p == var_q) return 0.0;
  constexpr int kIntervals = 4000;  // even, Simpson's rule
  const double sp = std::sqrt(var_p), sq = std::sqrt(var_q);
  const double lo = std::min(mu_p - 12.0 * sp, mu_q - 12.0 * sq);
  const double hi = std::max(mu_p + 12.0 * sp, mu_q + 12.0 * sq);
  const double h = (hi - lo) / kIntervals;
  auto log_pdf = [](double x, double mu, double var) {
    return -0.5 * std::log(2.0 * std::numbers::pi * var) - (x - mu) * (x - mu) / (2.0 * var);
  };
  auto integrand = [&](double x) {
    const double lp = log_pdf(x, mu_p, var_p), lq = log_pdf(x, mu_q, var_q);
    const double p = std::exp(lp), q = std::exp(lq);
    const double m = 0.5 * (p + q);
    if (m <= 0.0) return 0.0;
    const double lm = std::log(m);
    return 0.5 * (p * (lp - lm) + q * (lq - lm));
  };
  double s = integrand(lo) + integrand(hi);
  for (int i = 1; i < kIntervals; ++i) s += (i % 2 ? 4.0 : 2.0) * integrand(lo + i * h);
  return std::max(0.0, s * h / 3.0);
}

double GapMatrix::kl_between(const std::string& a, const std::string& b) const {
  const auto ia = std::find(labels.begin(), labels.end(), a);
  const auto ib = std::find(labels.begin(), labels.end(), b);
  if (ia == labels.end() || ib == labels.end()) fail(ErrorCode::IndexOutOfRange, "no QST group " + a + " / " + b);
  return kl[static_cast<std::size_t>(ia - labels.begin())][static_cast<std::size_t>(ib - labels.begin())];
}

GapMatrix distribution_gap_from_fits(std::vector<Qst> qsts, std::vector<GaussianFit> fits) {
  if (qsts.size() != fits.size()) fail(ErrorCode::ShapeMismatch, "one fit per QST required");
  GapMatrix g;
  const std::size_t n = qsts.size();
  g.kl.assign(n, std::vector<double>(n, 0.0));
  g.js.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const std::size_t C = fits[a].mean.size();
      if (fits[b].mean.size() != C || C == 0) fail(ErrorCode::ShapeMismatch, "fits differ in channel count");
      double kl = 0.0, js = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double va = std::max(fits[a].var[c], 1e-12), vb = std::max(fits[b].var[c], 1e-12);
        kl += symmetric_kl(fits[a].mean[c], va, fits[b].mean[c], vb);
        js += gaussian_js(fits[a].mean[c], va, fits[b].mean[c], vb);
      }
      g.kl[a][b] = g.kl[b][a] = kl / static_cast<double>(C);
      g.js[a][b] = g.js[b][a] = js / static_cast<double>(C);
    }
  }
  for (const auto& q : qsts) g.labels.push_back(data::qst_label(q));
  g.qsts = std::move(qsts);
  g.fits = std::move(fits);
  return g;
}

GapMatrix measure_distribution_gap(TinyNet& model, const data::Dataset& ds, int site, const GapOptions& opts) {
  model.site(site);  // validates the site id
  std::vector<std::vector<std::size_t>> groups(ds.qsts.size());
  for (std::size_t r = 0; r < ds.records.size(); ++r) groups[ds.records[r].qst_id].push_back(r);
  std::vector<Qst> qsts;
  std::vector<GaussianFit> fits;
  for (std::size_t q = 0; q < groups.size(); ++q) {
    const auto& recs = groups[q];
    if (recs.empty()) continue;
    if (recs.size() < opts.min_samples) {
      fail(ErrorCode::InsufficientSamples, data::qst_label(ds.qsts[q]) + " has " + std::to_string(recs.size()) +
                                               " samples, at least " + std::to_string(opts.min_samples) +
                                               " needed");
    }
    std::vector<double> s1, s2;
    double count = 0.0;
    for (std::size_t start = 0; start < recs.size(); start += opts.batch) {
      const std::span<const std::size_t> chunk(recs.data() + start, std::min(opts.batch, recs.size() - start));
      FeatureTap tap{site, opts.point, {}};
      const std::vector<Qst> qs(chunk.size(), ds.qsts[q]);
      model.forward_meta(nn::constant(images_to_tensor(ds, chunk)), qs, nn::BnMode::Eval, &tap);
      const auto& f = tap.captured;
      const std::size_t N = f.dim(0), C = f.dim(1), HW = f.dim(2) * f.dim(3);
      s1.resize(C, 0.0);
      s2.resize(C, 0.0);
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
          const double* p = f.data() + (n * C + c) * HW;
          for (std::size_t i = 0; i < HW; ++i) {
            s1[c] += p[i];
            s2[c] += p[i] * p[i];
          }
        }
      }
      count += static_cast<double>(N * HW);
    }
    GaussianFit fit;
    for (std::size_t c = 0; c < s1.size(); ++c) {
      const double mu = s1[c] / count;
      fit.mean.push_back(mu);
      fit.var.push_back(std::max(0.0, s2[c] / count - mu * mu));
    }
    qsts.push_back(ds.qsts[q]);
    fits.push_back(std::move(fit));
  }
  return distribution_gap_from_fits(std::move(qsts), std::move(fits));
}

}  // namespace qsam::train
