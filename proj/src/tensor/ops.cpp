// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "moelab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "moelab/errors.hpp"
#include "tensor/node_util.hpp"

namespace moelab {

using detail::make_result;
using detail::Node;

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

void require_rank2(const char* op, const Tensor& a) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                         shape_to_string(a.shape()));
  }
}

// C[m x n] += A[m x k] * B[k x n]
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x n] += A[m x k] * B^T where B is [n x k]
void gemm_bt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] += s;
    }
  }
}

// C[k x n] += A^T * G where A is [m x k], G is [m x n]
void gemm_at_acc(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  return make_result("add", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  return make_result("sub", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& in = self.inputs[k];
      if (!in->requires_grad) continue;
      const double sign = k == 0 ? 1.0 : -1.0;
      auto& g = in->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return make_result("mul", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) {
      auto& g = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y.data[i];
    }
    if (y.requires_grad) {
      auto& g = y.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x.data[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  return make_result("scale", a.shape(), std::move(out), {&a}, [factor](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result("sum", {1}, {s}, {&a}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.numel());
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result("mean", {1}, {s / n}, {&a}, [n](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (double& v : g) v += self.grad[0] / n;
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(a.shape()) + " as " +
                         shape_to_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {&a}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result("matmul", {m, n}, std::move(out), {&a, &b}, [m, k, n](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) gemm_bt_acc(self.grad.data(), y.data.data(), x.ensure_grad().data(), m, n, k);
    if (y.requires_grad) gemm_at_acc(x.data.data(), self.grad.data(), y.ensure_grad().data(), m, k, n);
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw DimensionError("softmax: axis out of range for " + shape_to_string(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, xd[base + i * inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double e = std::exp(xd[base + i * inner] - mx);
        out[base + i * inner] = e;
        z += e;
      }
      for (std::size_t i = 0; i < n; ++i) out[base + i * inner] /= z;
    }
  }
  return make_result("softmax", s, std::move(out), {&x}, [outer, inner, n](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    const auto& y = self.data;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += self.grad[base + i * inner] * y[base + i * inner];
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t idx = base + i * inner;
          g[idx] += y[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor logsumexp_rows(const Tensor& x) {
  require_rank2("logsumexp_rows", x);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  auto xd = x.data();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(row[c] - mx);
    out[r] = mx + std::log(z);
  }
  return make_result("logsumexp_rows", {rows}, std::move(out), {&x}, [rows, cols](Node& self) {
    Node& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t idx = r * cols + c;
        g[idx] += self.grad[r] * std::exp(in.data[idx] - self.data[r]);
      }
    }
  });
}

Tensor column_mean(const Tensor& x) {
  require_rank2("column_mean", x);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  auto xd = x.data();
  std::vector<double> out(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c] += xd[r * cols + c];
  }
  const double inv = 1.0 / static_cast<double>(rows);
  for (double& v : out) v *= inv;
  return make_result("column_mean", {cols}, std::move(out), {&x}, [rows, cols, inv](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[c] * inv;
    }
  });
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
  const std::size_t h = x.shape().back();
  if (gain.rank() != 1 || gain.dim(0) != h) {
    throw DimensionError("rms_norm: gain " + shape_to_string(gain.shape()) +
                         " does not match last extent of " + shape_to_string(x.shape()));
  }
  const std::size_t rows = x.numel() / h;
  auto xd = x.data();
  auto gd = gain.data();
  std::vector<double> out(xd.size());
  std::vector<double> inv_rms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * h;
    double ss = 0.0;
    for (std::size_t i = 0; i < h; ++i) ss += row[i] * row[i];
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(h) + eps);
    inv_rms[r] = inv;
    for (std::size_t i = 0; i < h; ++i) out[r * h + i] = row[i] * inv * gd[i];
  }
  return make_result("rms_norm", x.shape(), std::move(out), {&x, &gain},
                     [rows, h, inv_rms = std::move(inv_rms)](Node& self) {
                       Node& xin = *self.inputs[0];
                       Node& gin = *self.inputs[1];
                       const double hd = static_cast<double>(h);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double inv = inv_rms[r];
                         const double* xr = xin.data.data() + r * h;
                         const double* gr = self.grad.data() + r * h;
                         if (gin.requires_grad) {
                           auto& gg = gin.ensure_grad();
                           for (std::size_t i = 0; i < h; ++i) gg[i] += gr[i] * xr[i] * inv;
                         }
                         if (xin.requires_grad) {
                           // dn = dy * gain; dx = inv * (dn - n * mean(dn * n)) with n = x * inv
                           double dot = 0.0;
                           for (std::size_t i = 0; i < h; ++i) dot += gr[i] * gin.data[i] * xr[i] * inv;
                           dot /= hd;
                           auto& gx = xin.ensure_grad();
                           for (std::size_t i = 0; i < h; ++i) {
                             gx[r * h + i] += inv * (gr[i] * gin.data[i] - xr[i] * inv * dot);
                           }
                         }
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets) {
  require_rank2("cross_entropy", logits);
  const std::size_t t = logits.dim(0), v = logits.dim(1);
  if (targets.size() != t) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(t) + " rows");
  }
  for (std::size_t i = 0; i < t; ++i) {
    if (targets[i] >= v) {
      throw IndexError("cross_entropy: target id " + std::to_string(targets[i]) + " at position " +
                       std::to_string(i) + " outside vocabulary of " + std::to_string(v));
    }
  }
  auto ld = logits.data();
  std::vector<double> lse(t);
  double total = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    const double* row = ld.data() + i * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    lse[i] = mx + std::log(z);
    total += lse[i] - row[targets[i]];
  }
  std::vector<TokenId> tgt(targets.begin(), targets.end());
  return make_result("cross_entropy", {1}, {total / static_cast<double>(t)}, {&logits},
                     [t, v, lse = std::move(lse), tgt = std::move(tgt)](Node& self) {
                       Node& in = *self.inputs[0];
                       auto& g = in.ensure_grad();
                       const double s = self.grad[0] / static_cast<double>(t);
                       for (std::size_t i = 0; i < t; ++i) {
                         for (std::size_t j = 0; j < v; ++j) {
                           const std::size_t idx = i * v + j;
                           g[idx] += s * std::exp(in.data[idx] - lse[i]);
                         }
                         g[i * v + tgt[i]] -= s;
                       }
                     });
}

Tensor swiglu(const Tensor& gate, const Tensor& up) {
  require_same_shape("swiglu", gate, up);
  auto gd = gate.data(), ud = up.data();
  std::vector<double> out(gd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gd[i] * sigmoid(gd[i]) * ud[i];
  return make_result("swiglu", gate.shape(), std::move(out), {&gate, &up}, [](Node& self) {
    Node& g = *self.inputs[0];
    Node& u = *self.inputs[1];
    const std::size_t n = self.data.size();
    if (g.requires_grad) {
      auto& gg = g.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double s = sigmoid(g.data[i]);
        gg[i] += self.grad[i] * u.data[i] * s * (1.0 + g.data[i] * (1.0 - s));
      }
    }
    if (u.requires_grad) {
      auto& gu = u.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) gu[i] += self.grad[i] * g.data[i] * sigmoid(g.data[i]);
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const TokenId> ids) {
  require_rank2("embedding", table);
  const std::size_t vocab = table.dim(0), h = table.dim(1);
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) {
      throw IndexError("embedding: token id " + std::to_string(ids[i]) + " at position " +
                       std::to_string(i) + " outside vocabulary of " + std::to_string(vocab));
    }
  }
  auto td = table.data();
  std::vector<double> out(ids.size() * h);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(td.data() + ids[i] * h, h, out.data() + i * h);
  }
  std::vector<TokenId> idv(ids.begin(), ids.end());
  return make_result("embedding", {ids.size(), h}, std::move(out), {&table},
                     [h, idv = std::move(idv)](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::size_t i = 0; i < idv.size(); ++i) {
                         for (std::size_t j = 0; j < h; ++j) g[idv[i] * h + j] += self.grad[i * h + j];
                       }
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index) {
  require_rank2("gather_rows", x);
  const std::size_t rows = x.dim(0), h = x.dim(1);
  if (index.empty()) throw DimensionError("gather_rows: empty index");
  for (std::size_t r : index) {
    if (r >= rows) throw IndexError("gather_rows: row " + std::to_string(r) + " out of range");
  }
  auto xd = x.data();
  std::vector<double> out(index.size() * h);
  for (std::size_t i = 0; i < index.size(); ++i) {
    std::copy_n(xd.data() + index[i] * h, h, out.data() + i * h);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result("gather_rows", {index.size(), h}, std::move(out), {&x},
                     [h, idx = std::move(idx)](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         for (std::size_t j = 0; j < h; ++j) g[idx[i] * h + j] += self.grad[i * h + j];
                       }
                     });
}

Tensor index_add_rows(const Tensor& base, std::span<const std::size_t> index, const Tensor& src) {
  require_rank2("index_add_rows", base);
  require_rank2("index_add_rows", src);
  const std::size_t rows = base.dim(0), h = base.dim(1);
  if (src.dim(1) != h || src.dim(0) != index.size()) {
    throw DimensionError("index_add_rows: src " + shape_to_string(src.shape()) +
                         " incompatible with base " + shape_to_string(base.shape()));
  }
  for (std::size_t r : index) {
    if (r >= rows) throw IndexError("index_add_rows: row " + std::to_string(r) + " out of range");
  }
  std::vector<double> out(base.data().begin(), base.data().end());
  auto sd = src.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    for (std::size_t j = 0; j < h; ++j) out[index[i] * h + j] += sd[i * h + j];
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result("index_add_rows", base.shape(), std::move(out), {&base, &src},
                     [h, idx = std::move(idx)](Node& self) {
                       Node& b = *self.inputs[0];
                       Node& s = *self.inputs[1];
                       if (b.requires_grad) {
                         auto& g = b.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                       }
                       if (s.requires_grad) {
                         auto& g = s.ensure_grad();
                         for (std::size_t i = 0; i < idx.size(); ++i) {
                           for (std::size_t j = 0; j < h; ++j) g[i * h + j] += self.grad[idx[i] * h + j];
                         }
                       }
                     });
}

Tensor gather_elements(const Tensor& x, std::span<const std::size_t> rows,
                       std::span<const std::size_t> cols) {
  require_rank2("gather_elements", x);
  if (rows.size() != cols.size() || rows.empty()) {
    throw DimensionError("gather_elements: rows and cols must be equal-length and non-empty");
  }
  const std::size_t nr = x.dim(0), nc = x.dim(1);
  std::vector<std::size_t> flat(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= nr || cols[i] >= nc) throw IndexError("gather_elements: index out of range");
    flat[i] = rows[i] * nc + cols[i];
  }
  auto xd = x.data();
  std::vector<double> out(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) out[i] = xd[flat[i]];
  const std::size_t count = flat.size();
  return make_result("gather_elements", {count}, std::move(out), {&x},
                     [flat = std::move(flat)](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::size_t i = 0; i < flat.size(); ++i) g[flat[i]] += self.grad[i];
                     });
}

Tensor scale_rows(const Tensor& x, const Tensor& weights) {
  require_rank2("scale_rows", x);
  const std::size_t rows = x.dim(0), h = x.dim(1);
  if (weights.rank() != 1 || weights.dim(0) != rows) {
    throw DimensionError("scale_rows: weights " + shape_to_string(weights.shape()) + " for " +
                         shape_to_string(x.shape()));
  }
  auto xd = x.data(), wd = weights.data();
  std::vector<double> out(xd.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < h; ++j) out[r * h + j] = wd[r] * xd[r * h + j];
  }
  return make_result("scale_rows", x.shape(), std::move(out), {&x, &weights},
                     [rows, h](Node& self) {
                       Node& xn = *self.inputs[0];
                       Node& wn = *self.inputs[1];
                       if (xn.requires_grad) {
                         auto& g = xn.ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t j = 0; j < h; ++j) g[r * h + j] += wn.data[r] * self.grad[r * h + j];
                         }
                       }
                       if (wn.requires_grad) {
                         auto& g = wn.ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r) {
                           double s = 0.0;
                           for (std::size_t j = 0; j < h; ++j) s += xn.data[r * h + j] * self.grad[r * h + j];
                           g[r] += s;
                         }
                       }
                     });
}

TopK top_k(std::span<const double> values, std::size_t k) {
  if (k > values.size()) {
    throw ContractError("top_k: k=" + std::to_string(k) + " exceeds " + std::to_string(values.size()) +
                        " values");
  }
  detail::check_finite("top_k", values);
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (values[a] != values[b]) return values[a] > values[b];
                      return a < b;
                    });
  TopK out;
  out.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  out.values.reserve(k);
  for (std::size_t i : out.indices) out.values.push_back(values[i]);
  return out;
}

std::vector<TopK> top_k_rows(const Tensor& x, std::size_t k) {
  require_rank2("top_k_rows", x);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<TopK> out;
  out.reserve(rows);
  for (std::size_t r = 0; r < rows; ++r) out.push_back(top_k(x.data().subspan(r * cols, cols), k));
  return out;
}

}  // namespace moelab
