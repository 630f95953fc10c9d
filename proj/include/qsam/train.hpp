// SPDX-License-Identifier: Apache-2.0
//
// Two-phase training of a TinyNet with QABN sites:
//   base phase  - BN bases and backbone on samples whose QST is a basis,
//                 each sample normalized only by its own base;
//   meta phase  - meta-learner only, backbone and bases frozen, one
//                 MAML-style inner step on a basis batch followed by an
//                 outer loss on the remaining (simulated unseen) QSTs.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qsam/data.hpp"
#include "qsam/model.hpp"
#include "qsam/nn/optim.hpp"
#include "qsam/qac.hpp"

namespace qsam::train {

enum class BasisStrategy { Spread, TopFrequency };

struct TrainConfig {
  double alpha = 0.1;    // base-phase learning rate
  double beta = 0.001;   // inner-loop learning rate
  double gamma = 0.004;  // meta-phase learning rate
  std::size_t ite1 = 40;  // base epochs (0 skips the phase)
  std::size_t ite2 = 30;  // meta epochs (0 skips the phase)
  std::size_t batch = 128;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  double dampening = 0.0;
  std::vector<double> milestones{0.3, 0.6, 0.8};  // fractions of ite1
  double lr_factor = 0.2;
  std::uint64_t seed = 0;
  std::size_t M = 4;
  BasisStrategy strategy = BasisStrategy::Spread;
  qac::QacConfig qac;
  bool second_order = false;
  // Model shape beyond M.
  std::size_t width1 = 16;
  std::size_t width2 = 32;
  std::size_t meta_hidden = 64;
  qabn::FeatureEncoding encoding = qabn::FeatureEncoding::Reciprocal;
  qabn::OutputActivation activation = qabn::OutputActivation::Softmax;

  void validate() const;
  // Base-phase learning rate for a 0-based epoch.
  double base_lr(std::size_t epoch) const;
};

// ---------------------------------------------------------------- statistics

struct QstBucket {
  Qst qst;
  std::size_t count = 0;
  std::optional<int> qf;  // set when the QST is a scaled default table
};

struct QstHistogram {
  // Count descending, then QF ascending; non-default QSTs after default ones
  // of equal count, ordered by their bytes.
  std::vector<QstBucket> buckets;
  std::size_t total() const;
};

QstHistogram collect_qst_stats(const data::Dataset& ds);

qabn::QstBasisSet select_bases(const QstHistogram& hist, std::size_t M, BasisStrategy strategy);

// ---------------------------------------------------------------- split

struct DatasetSplit {
  std::vector<std::size_t> base;        // record indices in D_base
  std::vector<std::size_t> base_index;  // basis position of each base record
  std::vector<std::size_t> meta;        // record indices in D_meta
};

DatasetSplit split_dataset(const data::Dataset& ds, const qabn::QstBasisSet& bases);
// Every record in D_base, routed to base 0 (the single-BN baseline).
DatasetSplit single_base_split(const data::Dataset& ds);

// Images scaled to roughly unit range: (p - 128) / 64, NCHW.
nn::Tensor images_to_tensor(const data::Dataset& ds, std::span<const std::size_t> records);

// ---------------------------------------------------------------- metrics

struct EpochMetrics {
  std::size_t epoch = 0;
  std::string phase;  // "base" or "meta"
  double loss = 0.0;  // base: mean batch loss; meta: mean total meta loss
  std::optional<double> l_inner, l_out, l_basis;
  // Training accuracy per dataset QST id seen this epoch.
  std::vector<std::optional<double>> qst_accuracy;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// CSV with columns epoch, phase, loss, L_inner, L_out, L_basis and one
// acc_<label> column per dataset QST; blank cells for missing values.
std::string metrics_csv_header(const data::Dataset& ds);
std::string metrics_csv_row(const EpochMetrics& m);

// ---------------------------------------------------------------- phases

// ite1 epochs of SGD-Nesterov on D_base; θ_meta is left alone.
std::vector<EpochMetrics> base_train(TinyNet& model, const data::Dataset& ds, const DatasetSplit& split,
                                     const TrainConfig& cfg, const EpochCallback& on_epoch = {});

struct MetaStepLosses {
  double inner = 0.0;
  double outer = 0.0;
  double basis = 0.0;
};

// Sampling cursors and optimizer state carried between meta steps.
class MetaTrainer {
 public:
  MetaTrainer(const data::Dataset& ds, const DatasetSplit& split, const qabn::QstBasisSet& bases,
              const TrainConfig& cfg);

  // One update of θ_meta. Backbone and BN bases are frozen for the
  // duration of the call and their trainability restored afterwards.
  MetaStepLosses step(TinyNet& model);
  // Same, with explicit inner (single basis) and outer batches.
  MetaStepLosses step(TinyNet& model, std::size_t basis, std::span<const std::size_t> inner_records,
                      std::span<const std::size_t> outer_records);

  std::size_t steps_per_epoch() const;
  const nn::OptimizerState& optimizer() const { return adam_; }
  // Predictions of the last outer batch, for training-accuracy metrics.
  const std::vector<std::pair<std::size_t, bool>>& last_outer_hits() const { return outer_hits_; }

 private:
  std::vector<std::size_t> next_inner(std::size_t basis);
  std::vector<std::size_t> next_outer();

  const data::Dataset& ds_;
  const DatasetSplit& split_;
  const qabn::QstBasisSet& bases_;
  TrainConfig cfg_;
  std::mt19937_64 rng_;
  nn::OptimizerState adam_;
  std::size_t round_robin_ = 0;
  std::vector<std::vector<std::size_t>> per_basis_;
  std::vector<std::size_t> per_basis_cursor_;
  std::vector<std::size_t> meta_order_;
  std::size_t meta_cursor_ = 0;
  std::vector<std::pair<std::size_t, bool>> outer_hits_;  // (qst_id, correct)
};

// L_basis = sum_k |meta(Q_k) - onehot(k)|_1, as a graph node on θ_meta.
nn::Var basis_loss(const qabn::MetaLearner& meta, const qabn::QstBasisSet& bases);

std::vector<EpochMetrics> meta_train(TinyNet& model, const data::Dataset& ds, const DatasetSplit& split,
                                     const qabn::QstBasisSet& bases, const TrainConfig& cfg,
                                     const EpochCallback& on_epoch = {});

struct TrainOutcome {
  TinyNet model;
  qabn::QstBasisSet bases;
  std::vector<EpochMetrics> history;
};

// Full run: statistics, basis selection, split, base phase, meta phase.
// `init` (M = 1) seeds backbone and every base when given.
TrainOutcome train_qam(const data::Dataset& ds, const TrainConfig& cfg, const EpochCallback& on_epoch = {},
                       const TinyNet* init = nullptr);
// Single BN, no QAC, every sample, base phase only.
TrainOutcome train_baseline(const data::Dataset& ds, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// ---------------------------------------------------------------- evaluation

struct QstAccuracy {
  Qst qst;
  std::string label;
  bool seen = false;
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

struct EvalReport {
  std::vector<QstAccuracy> rows;  // only QSTs with samples, dictionary order
  double mean_accuracy = 0.0;     // mean over rows
  std::optional<double> avg_seen, avg_unseen;
};

// Meta path, eval mode. `seen` lists the training QSTs.
EvalReport evaluate(TinyNet& model, const data::Dataset& ds, std::span<const Qst> seen);
std::string eval_csv(const EvalReport& r);

// ---------------------------------------------------------------- diagnostics

struct GaussianFit {
  std::vector<double> mean, var;  // per channel
};

double gaussian_kl(double mu_p, double var_p, double mu_q, double var_q);
// KL(p||q) + KL(q||p).
double symmetric_kl(double mu_p, double var_p, double mu_q, double var_q);
// Jensen-Shannon divergence by numerical quadrature (natural log).
double gaussian_js(double mu_p, double var_p, double mu_q, double var_q);

struct GapOptions {
  FeatureTap::Point point = FeatureTap::Point::Input;
  std::size_t min_samples = 32;
  std::size_t batch = 256;
};

struct GapMatrix {
  std::vector<Qst> qsts;  // groups with samples, dictionary order
  std::vector<std::string> labels;
  std::vector<std::vector<double>> kl;  // channel-averaged symmetric KL
  std::vector<std::vector<double>> js;  // channel-averaged JS
  std::vector<GaussianFit> fits;
  // Entry for two dictionary QSTs, by label.
  double kl_between(const std::string& a, const std::string& b) const;
};

// Features at QABN site `site`, meta path in eval mode, grouped by QST.
GapMatrix measure_distribution_gap(TinyNet& model, const data::Dataset& ds, int site, const GapOptions& opts = {});
GapMatrix distribution_gap_from_fits(std::vector<Qst> qsts, std::vector<GaussianFit> fits);

}  // namespace qsam::train
