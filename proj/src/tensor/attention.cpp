// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <vector>

#include "moelab/errors.hpp"
#include "moelab/ops.hpp"
#include "tensor/node_util.hpp"

namespace moelab {

using detail::make_result;
using detail::Node;

namespace {

struct HeadLayout {
  std::size_t rows, width, heads, head_dim, seq_len, batch;
};

HeadLayout layout_for(const char* op, const Tensor& x, std::size_t n_heads, std::size_t seq_len) {
  if (x.rank() != 2) throw DimensionError(std::string(op) + ": expected rank-2 input");
  const std::size_t rows = x.dim(0), width = x.dim(1);
  if (n_heads == 0 || width % n_heads != 0) {
    throw DimensionError(std::string(op) + ": width " + std::to_string(width) +
                         " not divisible by " + std::to_string(n_heads) + " heads");
  }
  if (seq_len == 0 || rows % seq_len != 0) {
    throw DimensionError(std::string(op) + ": " + std::to_string(rows) +
                         " rows are not a whole number of sequences of length " +
                         std::to_string(seq_len));
  }
  return {rows, width, n_heads, width / n_heads, seq_len, rows / seq_len};
}

}  // namespace

Tensor rope(const Tensor& x, std::size_t n_heads, std::size_t seq_len, double base) {
  const HeadLayout l = layout_for("rope", x, n_heads, seq_len);
  if (l.head_dim % 2 != 0) throw DimensionError("rope: head dimension must be even");
  const std::size_t half = l.head_dim / 2;
  // cos/sin table indexed [pos][pair]
  std::vector<double> cos_t(seq_len * half), sin_t(seq_len * half);
  for (std::size_t p = 0; p < seq_len; ++p) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(l.head_dim));
      const double angle = static_cast<double>(p) * freq;
      cos_t[p * half + i] = std::cos(angle);
      sin_t[p * half + i] = std::sin(angle);
    }
  }
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t r = 0; r < l.rows; ++r) {
    const std::size_t p = r % seq_len;
    for (std::size_t h = 0; h < l.heads; ++h) {
      const std::size_t off = r * l.width + h * l.head_dim;
      for (std::size_t i = 0; i < half; ++i) {
        const double c = cos_t[p * half + i], s = sin_t[p * half + i];
        const double x0 = xd[off + 2 * i], x1 = xd[off + 2 * i + 1];
        out[off + 2 * i] = x0 * c - x1 * s;
        out[off + 2 * i + 1] = x0 * s + x1 * c;
      }
    }
  }
  return make_result("rope", x.shape(), std::move(out), {&x},
                     [l, half, cos_t = std::move(cos_t), sin_t = std::move(sin_t)](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::size_t r = 0; r < l.rows; ++r) {
                         const std::size_t p = r % l.seq_len;
                         for (std::size_t h = 0; h < l.heads; ++h) {
                           const std::size_t off = r * l.width + h * l.head_dim;
                           for (std::size_t i = 0; i < half; ++i) {
                             const double c = cos_t[p * half + i], s = sin_t[p * half + i];
                             const double g0 = self.grad[off + 2 * i], g1 = self.grad[off + 2 * i + 1];
                             g[off + 2 * i] += g0 * c + g1 * s;
                             g[off + 2 * i + 1] += -g0 * s + g1 * c;
                           }
                         }
                       }
                     });
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                        std::size_t seq_len) {
  const HeadLayout l = layout_for("causal_attention", q, n_heads, seq_len);
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw DimensionError("causal_attention: q, k, v shapes differ");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(l.head_dim));
  const std::size_t S = l.seq_len, d = l.head_dim, W = l.width;
  auto qd = q.data(), kd = k.data(), vd = v.data();
  std::vector<double> out(qd.size(), 0.0);
  // probs[(b * heads + h) * S * S + i * S + j], zero above the diagonal
  std::vector<double> probs(l.batch * l.heads * S * S, 0.0);
  for (std::size_t b = 0; b < l.batch; ++b) {
    for (std::size_t h = 0; h < l.heads; ++h) {
      double* P = probs.data() + (b * l.heads + h) * S * S;
      for (std::size_t i = 0; i < S; ++i) {
        const double* qi = qd.data() + (b * S + i) * W + h * d;
        double mx = -INFINITY;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* kj = kd.data() + (b * S + j) * W + h * d;
          double s = 0.0;
          for (std::size_t t = 0; t < d; ++t) s += qi[t] * kj[t];
          P[i * S + j] = s * scale;
          mx = std::max(mx, P[i * S + j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          P[i * S + j] = std::exp(P[i * S + j] - mx);
          z += P[i * S + j];
        }
        double* oi = out.data() + (b * S + i) * W + h * d;
        for (std::size_t j = 0; j <= i; ++j) {
          P[i * S + j] /= z;
          const double* vj = vd.data() + (b * S + j) * W + h * d;
          for (std::size_t t = 0; t < d; ++t) oi[t] += P[i * S + j] * vj[t];
        }
      }
    }
  }
  return make_result(
      "causal_attention", q.shape(), std::move(out), {&q, &k, &v},
      [l, scale, probs = std::move(probs)](Node& self) {
        Node& qn = *self.inputs[0];
        Node& kn = *self.inputs[1];
        Node& vn = *self.inputs[2];
        const std::size_t S = l.seq_len, d = l.head_dim, W = l.width;
        // Inputs that do not need a gradient write into scratch space.
        std::vector<double> scratch_q, scratch_k, scratch_v;
        auto target = [](Node& n, std::vector<double>& scratch) -> double* {
          if (n.requires_grad) return n.ensure_grad().data();
          scratch.assign(n.data.size(), 0.0);
          return scratch.data();
        };
        double* gq = target(qn, scratch_q);
        double* gk = target(kn, scratch_k);
        double* gv = target(vn, scratch_v);
        std::vector<double> dS(S);
        for (std::size_t b = 0; b < l.batch; ++b) {
          for (std::size_t h = 0; h < l.heads; ++h) {
            const double* P = probs.data() + (b * l.heads + h) * S * S;
            for (std::size_t i = 0; i < S; ++i) {
              const std::size_t ri = (b * S + i) * W + h * d;
              const double* dO = self.grad.data() + ri;
              double dot = 0.0;
              for (std::size_t j = 0; j <= i; ++j) {
                const std::size_t rj = (b * S + j) * W + h * d;
                double dp = 0.0;
                for (std::size_t t = 0; t < d; ++t) {
                  dp += dO[t] * vn.data[rj + t];
                  gv[rj + t] += P[i * S + j] * dO[t];
                }
                dS[j] = dp;
                dot += P[i * S + j] * dp;
              }
              for (std::size_t j = 0; j <= i; ++j) {
                const std::size_t rj = (b * S + j) * W + h * d;
                const double ds = P[i * S + j] * (dS[j] - dot) * scale;
                for (std::size_t t = 0; t < d; ++t) {
                  gq[ri + t] += ds * kn.data[rj + t];
                  gk[rj + t] += ds * qn.data[ri + t];
                }
              }
            }
          }
        }
      });
}

}  // namespace moelab
