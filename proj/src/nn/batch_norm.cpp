// SPDX-License-Identifier: Apache-2.0
#include "qsam/nn/batch_norm.hpp"

#include <array>
#include <cmath>
#include <string>

#include "qsam/error.hpp"

namespace qsam::nn {
namespace {

// Reductions with eight fixed lanes: the order depends only on the length,
// never on buffer alignment, so results are reproducible.
template <typename Term>
double lane_sum(std::size_t n, Term term) {
  std::array<double, 8> acc{};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) acc[j] += term(i + j);
  }
  for (; i < n; ++i) acc[i % 8] += term(i);
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

double sum_of(const Tensor& a, std::size_t base, std::size_t n) {
  const double* p = a.data() + base;
  return lane_sum(n, [p](std::size_t i) { return p[i]; });
}

double dot_of(const Tensor& a, const Tensor& b, std::size_t base, std::size_t n) {
  const double* p = a.data() + base;
  const double* q = b.data() + base;
  return lane_sum(n, [p, q](std::size_t i) { return p[i] * q[i]; });
}

struct BatchStats {
  std::vector<double> mean, var, invstd;
};

void check_input(const Var& x, std::size_t channels) {
  if (x.value().rank() != 4 || x.shape()[1] != channels) {
    fail(ErrorCode::ShapeMismatch, "batch_norm2d: input " + shape_string(x.shape()) + " for " +
                                       std::to_string(channels) + " channels");
  }
}

BatchStats batch_stats(const Tensor& x, double eps) {
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const double m = static_cast<double>(N * HW);
  BatchStats st{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t n = 0; n < N; ++n) s += sum_of(x, (n * C + c) * HW, HW);
    const double mu = s / m;
    double ss = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const double* p = x.data() + (n * C + c) * HW;
      ss += lane_sum(HW, [p, mu](std::size_t i) { return (p[i] - mu) * (p[i] - mu); });
    }
    st.mean[c] = mu;
    st.var[c] = ss / m;
    st.invstd[c] = 1.0 / std::sqrt(st.var[c] + eps);
  }
  return st;
}

void update_running(BnState& s, const BatchStats& st, double count, double weight) {
  const double mom = s.momentum * weight;
  const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
  for (std::size_t c = 0; c < s.channels(); ++c) {
    s.running_mean[c] = (1.0 - mom) * s.running_mean[c] + mom * st.mean[c];
    s.running_var[c] = (1.0 - mom) * s.running_var[c] + mom * st.var[c] * unbias;
  }
}

// dx for x_hat = (x - mean) * invstd given d(x_hat), per channel.
void batch_norm_input_grad(const Tensor& xhat, const Tensor& dxhat, const std::vector<double>& invstd,
                           double* dx) {
  const std::size_t N = xhat.dim(0), C = xhat.dim(1), HW = xhat.dim(2) * xhat.dim(3);
  const double m = static_cast<double>(N * HW);
  for (std::size_t c = 0; c < C; ++c) {
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t base = (n * C + c) * HW;
      s1 += sum_of(dxhat, base, HW);
      s2 += dot_of(dxhat, xhat, base, HW);
    }
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t base = (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        dx[base + i] += invstd[c] / m * (m * dxhat[base + i] - s1 - xhat[base + i] * s2);
      }
    }
  }
}

}  // namespace

BnState BnState::create(std::size_t channels, double momentum, double eps) {
  if (!(eps > 0.0) || !(momentum > 0.0 && momentum <= 1.0)) {
    fail(ErrorCode::InvalidArgument, "BN momentum must lie in (0,1] and eps must be positive");
  }
  BnState s;
  s.gamma = parameter(Tensor(Shape{channels}, 1.0));
  s.beta = parameter(Tensor(Shape{channels}, 0.0));
  s.running_mean = Tensor(Shape{channels}, 0.0);
  s.running_var = Tensor(Shape{channels}, 1.0);
  s.momentum = momentum;
  s.eps = eps;
  return s;
}

BnState BnState::clone() const {
  BnState s;
  s.gamma = parameter(gamma.value(), gamma.name());
  s.gamma.set_requires_grad(gamma.requires_grad());
  s.beta = parameter(beta.value(), beta.name());
  s.beta.set_requires_grad(beta.requires_grad());
  s.running_mean = running_mean;
  s.running_var = running_var;
  s.momentum = momentum;
  s.eps = eps;
  return s;
}

Var batch_norm2d(const Var& x, BnState& state, BnMode mode) {
  check_input(x, state.channels());
  const std::size_t N = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
  const Tensor& gamma = state.gamma.value();
  const Tensor& beta = state.beta.value();

  Tensor xhat(x.shape());
  Tensor out(x.shape());
  std::vector<double> invstd(C);
  if (mode == BnMode::Train) {
    const BatchStats st = batch_stats(x.value(), state.eps);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t base = (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          xhat[base + i] = (x.value()[base + i] - st.mean[c]) * st.invstd[c];
          out[base + i] = gamma[c] * xhat[base + i] + beta[c];
        }
      }
    }
    invstd = st.invstd;
    update_running(state, st, static_cast<double>(N * HW), 1.0);
  } else {
    for (std::size_t c = 0; c < C; ++c) invstd[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t base = (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          xhat[base + i] = (x.value()[base + i] - state.running_mean[c]) * invstd[c];
          out[base + i] = gamma[c] * xhat[base + i] + beta[c];
        }
      }
    }
  }

  return make_op(std::move(out), {x, state.gamma, state.beta},
                 [N, C, HW, mode, xhat = std::move(xhat), invstd = std::move(invstd)](Node& self) {
                   Node& xn = *self.inputs[0];
                   Node& gn = *self.inputs[1];
                   Node& bn = *self.inputs[2];
                   const Tensor& dy = self.grad;
                   if (gn.requires_grad || bn.requires_grad) {
                     auto& dg = gn.grad_buffer();
                     auto& db = bn.grad_buffer();
                     for (std::size_t n = 0; n < N; ++n) {
                       for (std::size_t c = 0; c < C; ++c) {
                         const std::size_t base = (n * C + c) * HW;
                         dg[c] += dot_of(dy, xhat, base, HW);
                         db[c] += sum_of(dy, base, HW);
                       }
                     }
                   }
                   if (!xn.requires_grad) return;
                   const Tensor& gamma = gn.value;
                   auto& dx = xn.grad_buffer();
                   if (mode == BnMode::Eval) {
                     for (std::size_t n = 0; n < N; ++n) {
                       for (std::size_t c = 0; c < C; ++c) {
                         const std::size_t base = (n * C + c) * HW;
                         const double k = gamma[c] * invstd[c];
                         for (std::size_t i = 0; i < HW; ++i) dx[base + i] += dy[base + i] * k;
                       }
                     }
                     return;
                   }
                   Tensor dxhat(dy.shape());
                   for (std::size_t n = 0; n < N; ++n) {
                     for (std::size_t c = 0; c < C; ++c) {
                       const std::size_t base = (n * C + c) * HW;
                       for (std::size_t i = 0; i < HW; ++i) dxhat[base + i] = dy[base + i] * gamma[c];
                     }
                   }
                   batch_norm_input_grad(xhat, dxhat, invstd, dx.data());
                 });
}

Var mixed_batch_norm2d(const Var& x, std::vector<BnState*> states, const Var& weights, BnMode mode) {
  const std::size_t M = states.size();
  if (M == 0) fail(ErrorCode::InvalidArgument, "mixed_batch_norm2d: no BN states");
  check_input(x, states[0]->channels());
  const std::size_t N = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
  if (weights.shape() != Shape{N, M}) {
    fail(ErrorCode::ShapeMismatch, "mixed_batch_norm2d: weights " + shape_string(weights.shape()) + " for " +
                                       std::to_string(N) + " samples and " + std::to_string(M) + " bases");
  }
  for (const auto* s : states) {
    if (s->channels() != C) fail(ErrorCode::ShapeMismatch, "mixed_batch_norm2d: bases disagree on channels");
  }
  const Tensor& F = weights.value();

  // Per-base normalized input x_hat_i; in Train mode every base shares one.
  std::vector<Tensor> xhat(mode == BnMode::Train ? 1 : M, Tensor(x.shape()));
  std::vector<std::vector<double>> invstd(xhat.size(), std::vector<double>(C));
  if (mode == BnMode::Train) {
    const BatchStats st = batch_stats(x.value(), states[0]->eps);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t base = (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) xhat[0][base + i] = (x.value()[base + i] - st.mean[c]) * st.invstd[c];
      }
    }
    invstd[0] = st.invstd;
    for (std::size_t b = 0; b < M; ++b) {
      double share = 0.0;
      for (std::size_t n = 0; n < N; ++n) share += F[n * M + b];
      update_running(*states[b], st, static_cast<double>(N * HW), share / static_cast<double>(N));
    }
  } else {
    for (std::size_t b = 0; b < M; ++b) {
      const BnState& s = *states[b];
      for (std::size_t c = 0; c < C; ++c) invstd[b][c] = 1.0 / std::sqrt(s.running_var[c] + s.eps);
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t base = (n * C + c) * HW;
          for (std::size_t i = 0; i < HW; ++i) {
            xhat[b][base + i] = (x.value()[base + i] - s.running_mean[c]) * invstd[b][c];
          }
        }
      }
    }
  }

  auto xhat_of = [&](std::size_t b) -> const Tensor& { return xhat[mode == BnMode::Train ? 0 : b]; };
  Tensor out(x.shape(), 0.0);
  for (std::size_t b = 0; b < M; ++b) {
    const Tensor& g = states[b]->gamma.value();
    const Tensor& be = states[b]->beta.value();
    const Tensor& xh = xhat_of(b);
    for (std::size_t n = 0; n < N; ++n) {
      const double f = F[n * M + b];
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t base = (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) out[base + i] += f * (g[c] * xh[base + i] + be[c]);
      }
    }
  }

  std::vector<Var> inputs{x, weights};
  for (auto* s : states) {
    inputs.push_back(s->gamma);
    inputs.push_back(s->beta);
  }
  return make_op(std::move(out), std::move(inputs),
                 [N, C, HW, M, mode, xhat = std::move(xhat), invstd = std::move(invstd)](Node& self) {
                   Node& xn = *self.inputs[0];
                   Node& fn = *self.inputs[1];
                   const Tensor& F = fn.value;
                   const Tensor& dy = self.grad;
                   auto xh_of = [&](std::size_t b) -> const Tensor& { return xhat[mode == BnMode::Train ? 0 : b]; };
                   for (std::size_t b = 0; b < M; ++b) {
                     Node& gn = *self.inputs[2 + 2 * b];
                     Node& bn = *self.inputs[3 + 2 * b];
                     const Tensor& xh = xh_of(b);
                     if (fn.requires_grad) {
                       auto& dF = fn.grad_buffer();
                       for (std::size_t n = 0; n < N; ++n) {
                         double s = 0.0;
                         for (std::size_t c = 0; c < C; ++c) {
                           const std::size_t base = (n * C + c) * HW;
                           s += gn.value[c] * dot_of(dy, xh, base, HW) + bn.value[c] * sum_of(dy, base, HW);
                         }
                         dF[n * M + b] += s;
                       }
                     }
                     if (gn.requires_grad || bn.requires_grad) {
                       auto& dg = gn.grad_buffer();
                       auto& db = bn.grad_buffer();
                       for (std::size_t n = 0; n < N; ++n) {
                         const double f = F[n * M + b];
                         for (std::size_t c = 0; c < C; ++c) {
                           const std::size_t base = (n * C + c) * HW;
                           dg[c] += f * dot_of(dy, xh, base, HW);
                           db[c] += f * sum_of(dy, base, HW);
                         }
                       }
                     }
                   }
                   if (!xn.requires_grad) return;
                   auto& dx = xn.grad_buffer();
                   if (mode == BnMode::Eval) {
                     for (std::size_t b = 0; b < M; ++b) {
                       const Tensor& g = self.inputs[2 + 2 * b]->value;
                       for (std::size_t n = 0; n < N; ++n) {
                         const double f = F[n * M + b];
                         for (std::size_t c = 0; c < C; ++c) {
                           const double k = f * g[c] * invstd[b][c];
                           const std::size_t base = (n * C + c) * HW;
                           for (std::size_t i = 0; i < HW; ++i) dx[base + i] += dy[base + i] * k;
                         }
                       }
                     }
                     return;
                   }
                   Tensor dxhat(dy.shape(), 0.0);
                   for (std::size_t b = 0; b < M; ++b) {
                     const Tensor& g = self.inputs[2 + 2 * b]->value;
                     for (std::size_t n = 0; n < N; ++n) {
                       const double f = F[n * M + b];
                       for (std::size_t c = 0; c < C; ++c) {
                         const std::size_t base = (n * C + c) * HW;
                         for (std::size_t i = 0; i < HW; ++i) dxhat[base + i] += f * dy[base + i] * g[c];
                       }
                     }
                   }
                   batch_norm_input_grad(xhat[0], dxhat, invstd[0], dx.data());
                 });
}

}  // namespace qsam::nn
