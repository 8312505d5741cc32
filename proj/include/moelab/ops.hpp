// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "moelab/tensor.hpp"

namespace moelab {

using TokenId = std::uint32_t;

// Elementwise, same shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// [m x k] x [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

/// Row-wise log-sum-exp of a rank-2 tensor: [T x n] -> [T].
Tensor logsumexp_rows(const Tensor& x);

/// Mean over the first axis of a rank-2 tensor: [T x n] -> [n].
Tensor column_mean(const Tensor& x);

/// x * gain / sqrt(mean(x^2) + eps) over the last axis.
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps);

/// Mean negative log-likelihood of `targets` under row-wise softmax(logits).
Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets);

/// silu(gate) * up, elementwise.
Tensor swiglu(const Tensor& gate, const Tensor& up);

/// Row lookup into a [V x H] table; the gradient scatter-adds into the table.
Tensor embedding(const Tensor& table, std::span<const TokenId> ids);

/// Rows `index` of a rank-2 tensor.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index);

/// base with src row r added into row index[r]. Repeated indices accumulate.
Tensor index_add_rows(const Tensor& base, std::span<const std::size_t> index,
                      const Tensor& src);

/// out[r] = x[rows[r], cols[r]].
Tensor gather_elements(const Tensor& x, std::span<const std::size_t> rows,
                       std::span<const std::size_t> cols);

/// Row r of x multiplied by weights[r].
Tensor scale_rows(const Tensor& x, const Tensor& weights);

/// Rotary position embedding on a [B*seq_len x H] tensor split into n_heads.
/// The position of row r is r % seq_len.
Tensor rope(const Tensor& x, std::size_t n_heads, std::size_t seq_len,
            double base = 10000.0);

/// Multi-head scaled-dot-product attention with a causal mask. q, k, v are
/// [B*seq_len x H]; attention never crosses a sequence boundary.
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        std::size_t n_heads, std::size_t seq_len);

struct TopK {
  std::vector<std::size_t> indices;  // descending value, ties by ascending index
  std::vector<double> values;
};

TopK top_k(std::span<const double> values, std::size_t k);
std::vector<TopK> top_k_rows(const Tensor& x, std::size_t k);

}  // namespace moelab
