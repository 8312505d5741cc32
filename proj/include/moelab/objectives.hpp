// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training objective: next-token cross-entropy plus the router load-balance
// and z-loss auxiliaries.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "moelab/model.hpp"

namespace moelab {

/// One routing operation's inputs to the auxiliary losses.
struct RouterBatchStats {
  std::size_t n_tokens = 0;
  std::size_t n_columns = 0;          // experts the router scores over
  Tensor logits;                      // [T x n_columns]
  Tensor probs;                       // softmax(logits)
  std::vector<std::uint8_t> dispatch; // T x n_columns indicators

  static RouterBatchStats from_routing(const RoutingOutcome& r);
};

/// N * sum_i m_i * P_i, where m_i is the fraction of tokens dispatched to
/// column i and P_i the mean gate probability. Differentiable through P only.
Tensor load_balance_loss(const Tensor& probs, std::span<const std::uint8_t> dispatch);
Tensor load_balance_loss(const RouterBatchStats& stats);

/// mean over tokens of logsumexp(logits)^2.
Tensor router_z_loss(const Tensor& logits);
Tensor router_z_loss(const RouterBatchStats& stats);

struct LossWeights {
  double gamma = 0.01;   // load balance
  double eta = 0.001;    // router z-loss
};

double total_loss(double ce, double lb, double rz, const LossWeights& w = {});

struct ObjectiveTerms {
  Tensor ce, lb, rz, total;  // scalars; lb and rz are means over MoE layers
};

/// targets[i] is the token that follows position i.
ObjectiveTerms compute_objective(const ForwardResult& fwd, std::span<const TokenId> targets,
                                 const LossWeights& w = {});

}  // namespace moelab
