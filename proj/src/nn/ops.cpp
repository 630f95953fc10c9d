// SPDX-License-Identifier: Apache-2.0
#include "qsam/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "qsam/error.hpp"

namespace qsam::nn {
namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::ShapeMismatch,
         std::string(op) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.value().rank() != rank) {
    fail(ErrorCode::ShapeMismatch, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                       shape_string(a.shape()));
  }
}

Node& in(Node& n, std::size_t i) { return *n.inputs[i]; }

void accumulate(Node& target, const Tensor& delta) {
  auto& g = target.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

// Output columns [lo, hi) whose input column ox*s + kx - p lies inside [0, W).
std::pair<std::size_t, std::size_t> valid_cols(std::size_t kx, std::size_t s, std::size_t p, std::size_t W,
                                               std::size_t Wo) {
  std::size_t lo = 0;
  while (lo < Wo && lo * s + kx < p) ++lo;
  std::size_t hi = lo;
  while (hi < Wo && hi * s + kx < p + W) ++hi;
  return {lo, hi};
}

// cols[(c*k + ky)*k + kx, oy*Wo + ox] = x[c, oy*s + ky - p, ox*s + kx - p]
void im2col(const double* x, std::size_t C, std::size_t H, std::size_t W, std::size_t k, std::size_t s,
            std::size_t p, std::size_t Ho, std::size_t Wo, double* cols) {
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = cols + ((c * k + ky) * k + kx) * Ho * Wo;
        const auto [lo, hi] = valid_cols(kx, s, p, W, Wo);
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          double* dst = row + oy * Wo;
          const long iy = static_cast<long>(oy * s + ky) - static_cast<long>(p);
          if (iy < 0 || iy >= static_cast<long>(H)) {
            std::fill(dst, dst + Wo, 0.0);
            continue;
          }
          const double* src = x + (c * H + iy) * W;
          std::fill(dst, dst + lo, 0.0);
          for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * s + kx - p];
          std::fill(dst + hi, dst + Wo, 0.0);
        }
      }
    }
  }
}

void col2im(const double* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t k, std::size_t s,
            std::size_t p, std::size_t Ho, std::size_t Wo, double* dx) {
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = cols + ((c * k + ky) * k + kx) * Ho * Wo;
        const auto [lo, hi] = valid_cols(kx, s, p, W, Wo);
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const long iy = static_cast<long>(oy * s + ky) - static_cast<long>(p);
          if (iy < 0 || iy >= static_cast<long>(H)) continue;
          double* dst = dx + (c * H + iy) * W;
          const double* src = row + oy * Wo;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[ox * s + kx - p] += src[ox];
        }
      }
    }
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (in(self, k).requires_grad) accumulate(in(self, k), self.grad);
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    if (in(self, 0).requires_grad) accumulate(in(self, 0), self.grad);
    if (in(self, 1).requires_grad) {
      auto& g = in(self, 1).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    Node& x = in(self, 0);
    Node& y = in(self, 1);
    if (x.requires_grad) {
      auto& g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y.value[i];
    }
    if (y.requires_grad) {
      auto& g = y.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x.value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= s;
  return make_op(std::move(out), {a}, [s](Node& self) {
    auto& g = in(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Var abs(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::fabs(v);
  return make_op(std::move(out), {a}, [](Node& self) {
    Node& x = in(self, 0);
    auto& g = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = x.value[i];
      g[i] += (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0)) * self.grad[i];
    }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make_op(Tensor::scalar(s), {a}, [](Node& self) {
    auto& g = in(self, 0).grad_buffer();
    const double d = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += d;
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value();
  out.reshape(std::move(shape));
  return make_op(std::move(out), {a}, [](Node& self) {
    auto& g = in(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const std::size_t N = x.shape()[0], I = x.shape()[1], O = weight.shape()[0];
  if (weight.shape()[1] != I) fail(ErrorCode::ShapeMismatch, "linear: weight " + shape_string(weight.shape()) +
                                                               " vs input " + shape_string(x.shape()));
  if (bias.defined() && bias.shape() != Shape{O}) fail(ErrorCode::ShapeMismatch, "linear: bias shape");
  Tensor out(Shape{N, O});
  MapR Y(out.data(), N, O);
  Y.noalias() = CMapR(x.value().data(), N, I) * CMapR(weight.value().data(), O, I).transpose();
  if (bias.defined()) Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().data(), O);

  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_op(std::move(out), std::move(inputs), [N, I, O](Node& self) {
    CMapR dY(self.grad.data(), N, O);
    Node& xn = in(self, 0);
    Node& wn = in(self, 1);
    if (xn.requires_grad) {
      MapR(xn.grad_buffer().data(), N, I).noalias() += dY * CMapR(wn.value.data(), O, I);
    }
    if (wn.requires_grad) {
      MapR(wn.grad_buffer().data(), O, I).noalias() += dY.transpose() * CMapR(xn.value.data(), N, I);
    }
    if (self.inputs.size() > 2 && in(self, 2).requires_grad) {
      Eigen::Map<Eigen::RowVectorXd>(in(self, 2).grad_buffer().data(), O) += dY.colwise().sum();
    }
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions opts) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  const std::size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const std::size_t O = weight.shape()[0], k = weight.shape()[2];
  const std::size_t s = opts.stride, p = opts.padding;
  if (weight.shape()[1] != C || weight.shape()[3] != k) {
    fail(ErrorCode::ShapeMismatch, "conv2d: weight " + shape_string(weight.shape()) + " vs input " +
                                       shape_string(x.shape()));
  }
  if (s == 0 || H + 2 * p < k || W + 2 * p < k) fail(ErrorCode::ShapeMismatch, "conv2d: kernel larger than input");
  if (bias.defined() && bias.shape() != Shape{O}) fail(ErrorCode::ShapeMismatch, "conv2d: bias shape");
  const std::size_t Ho = (H + 2 * p - k) / s + 1, Wo = (W + 2 * p - k) / s + 1;
  const std::size_t K = C * k * k, P = Ho * Wo;

  Tensor out(Shape{N, O, Ho, Wo});
  std::vector<double> cols(K * P);
  CMapR Wm(weight.value().data(), O, K);
  for (std::size_t n = 0; n < N; ++n) {
    im2col(x.value().data() + n * C * H * W, C, H, W, k, s, p, Ho, Wo, cols.data());
    MapR Y(out.data() + n * O * P, O, P);
    Y.noalias() = Wm * CMapR(cols.data(), K, P);
    if (bias.defined()) Y.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.value().data(), O);
  }

  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_op(std::move(out), std::move(inputs), [=](Node& self) {
    Node& xn = in(self, 0);
    Node& wn = in(self, 1);
    const bool has_bias = self.inputs.size() > 2 && in(self, 2).requires_grad;
    std::vector<double> cols(K * P), dcols(K * P);
    CMapR Wm(wn.value.data(), O, K);
    double* dW = wn.requires_grad ? wn.grad_buffer().data() : nullptr;
    double* dx = xn.requires_grad ? xn.grad_buffer().data() : nullptr;
    double* db = has_bias ? in(self, 2).grad_buffer().data() : nullptr;
    for (std::size_t n = 0; n < N; ++n) {
      CMapR dY(self.grad.data() + n * O * P, O, P);
      if (dW) {
        im2col(xn.value.data() + n * C * H * W, C, H, W, k, s, p, Ho, Wo, cols.data());
        MapR(dW, O, K).noalias() += dY * CMapR(cols.data(), K, P).transpose();
      }
      if (dx) {
        MapR(dcols.data(), K, P).noalias() = Wm.transpose() * dY;
        col2im(dcols.data(), C, H, W, k, s, p, Ho, Wo, dx + n * C * H * W);
      }
      if (db) {
        // Plain loop: a vectorized row sum would depend on buffer alignment.
        for (std::size_t o = 0; o < O; ++o) {
          const double* row = self.grad.data() + n * O * P + o * P;
          double acc = 0.0;
          for (std::size_t i = 0; i < P; ++i) acc += row[i];
          db[o] += acc;
        }
      }
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make_op(std::move(out), {x}, [](Node& self) {
    Node& xn = in(self, 0);
    auto& g = xn.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += xn.value[i] > 0.0 ? self.grad[i] : 0.0;
  });
}

Var max_pool2(const Var& x) {
  require_rank(x, 4, "max_pool2");
  const std::size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const std::size_t Ho = H / 2, Wo = W / 2;
  if (Ho == 0 || Wo == 0) fail(ErrorCode::ShapeMismatch, "max_pool2: input smaller than 2x2");
  Tensor out(Shape{N, C, Ho, Wo});
  std::vector<std::size_t> argmax(out.size());
  const double* xv = x.value().data();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = nc * H * W + (2 * oy) * W + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = nc * H * W + (2 * oy + dy) * W + 2 * ox + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        }
        const std::size_t o = (nc * Ho + oy) * Wo + ox;
        out[o] = xv[best];
        argmax[o] = best;
      }
    }
  }
  return make_op(std::move(out), {x}, [argmax = std::move(argmax)](Node& self) {
    auto& g = in(self, 0).grad_buffer();
    for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
  });
}

Var global_avg_pool(const Var& x) {
  require_rank(x, 4, "global_avg_pool");
  const std::size_t N = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
  Tensor out(Shape{N, C});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    double s = 0.0;
    for (std::size_t i = 0; i < HW; ++i) s += x.value()[nc * HW + i];
    out[nc] = s / static_cast<double>(HW);
  }
  return make_op(std::move(out), {x}, [N, C, HW](Node& self) {
    auto& g = in(self, 0).grad_buffer();
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      const double d = self.grad[nc] / static_cast<double>(HW);
      for (std::size_t i = 0; i < HW; ++i) g[nc * HW + i] += d;
    }
  });
}

Var softmax(const Var& x) {
  require_rank(x, 2, "softmax");
  const std::size_t N = x.shape()[0], K = x.shape()[1];
  Tensor out(Shape{N, K});
  for (std::size_t n = 0; n < N; ++n) {
    const double* row = x.value().data() + n * K;
    const double m = *std::max_element(row, row + K);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(row[k] - m);
    for (std::size_t k = 0; k < K; ++k) out[n * K + k] = std::exp(row[k] - m) / z;
  }
  return make_op(out, {x}, [N, K, out](Node& self) {
    auto& g = in(self, 0).grad_buffer();
    for (std::size_t n = 0; n < N; ++n) {
      double dot = 0.0;
      for (std::size_t k = 0; k < K; ++k) dot += self.grad[n * K + k] * out[n * K + k];
      for (std::size_t k = 0; k < K; ++k) g[n * K + k] += out[n * K + k] * (self.grad[n * K + k] - dot);
    }
  });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels, std::span<const double> weights,
                          Reduction reduction) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t N = logits.shape()[0], K = logits.shape()[1];
  if (labels.size() != N || weights.size() != N) {
    fail(ErrorCode::ShapeMismatch, "softmax_cross_entropy: " + std::to_string(N) + " rows, " +
                                       std::to_string(labels.size()) + " labels, " +
                                       std::to_string(weights.size()) + " weights");
  }
  double denom = 1.0;
  if (reduction == Reduction::Mean) {
    denom = 0.0;
    for (double w : weights) denom += w;
    if (!(denom > 0.0)) fail(ErrorCode::InvalidArgument, "softmax_cross_entropy: weights sum to zero");
  }
  Tensor probs(Shape{N, K});
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= K) {
      fail(ErrorCode::IndexOutOfRange, "label " + std::to_string(labels[n]) + " outside [0, " +
                                           std::to_string(K) + ")");
    }
    const double* row = logits.value().data() + n * K;
    const double m = *std::max_element(row, row + K);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(row[k] - m);
    const double log_z = m + std::log(z);
    for (std::size_t k = 0; k < K; ++k) probs[n * K + k] = std::exp(row[k] - log_z);
    total += weights[n] * (log_z - row[labels[n]]);
  }
  std::vector<int> lab(labels.begin(), labels.end());
  std::vector<double> w(weights.begin(), weights.end());
  return make_op(Tensor::scalar(total / denom), {logits},
                 [N, K, denom, probs = std::move(probs), lab = std::move(lab), w = std::move(w)](Node& self) {
                   auto& g = in(self, 0).grad_buffer();
                   const double d = self.grad[0] / denom;
                   for (std::size_t n = 0; n < N; ++n) {
                     for (std::size_t k = 0; k < K; ++k) {
                       const double onehot = static_cast<int>(k) == lab[n] ? 1.0 : 0.0;
                       g[n * K + k] += d * w[n] * (probs[n * K + k] - onehot);
                     }
                   }
                 });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels, Reduction reduction) {
  std::vector<double> ones(labels.size(), 1.0);
  return softmax_cross_entropy(logits, labels, ones, reduction);
}

}  // namespace qsam::nn
