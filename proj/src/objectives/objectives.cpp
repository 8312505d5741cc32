// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "moelab/objectives.hpp"

#include "moelab/errors.hpp"

namespace moelab {

RouterBatchStats RouterBatchStats::from_routing(const RoutingOutcome& r) {
  RouterBatchStats s;
  s.n_tokens = r.n_tokens;
  s.n_columns = r.column_offset + r.n_routed;
  s.logits = r.logits;
  s.probs = r.probs;
  s.dispatch = r.dispatch_mask();
  return s;
}

Tensor load_balance_loss(const Tensor& probs, std::span<const std::uint8_t> dispatch) {
  if (!probs.defined() || probs.rank() != 2) throw ContractError("load_balance_loss: empty batch");
  const std::size_t T = probs.dim(0), N = probs.dim(1);
  if (dispatch.size() != T * N) {
    throw DimensionError("load_balance_loss: dispatch has " + std::to_string(dispatch.size()) +
                         " entries, expected " + std::to_string(T * N));
  }
  std::vector<double> m(N, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < N; ++i) m[i] += dispatch[t * N + i] ? 1.0 : 0.0;
  for (double& v : m) v /= static_cast<double>(T);
  Tensor mt = Tensor::from_data({N}, std::move(m));
  return scale(sum(mul(column_mean(probs), mt)), static_cast<double>(N));
}

Tensor load_balance_loss(const RouterBatchStats& stats) {
  if (stats.n_tokens == 0) throw ContractError("load_balance_loss: empty batch");
  return load_balance_loss(stats.probs, stats.dispatch);
}

Tensor router_z_loss(const Tensor& logits) {
  if (!logits.defined() || logits.rank() != 2) throw ContractError("router_z_loss: empty batch");
  Tensor lse = logsumexp_rows(logits);
  return mean(mul(lse, lse));
}

Tensor router_z_loss(const RouterBatchStats& stats) {
  if (stats.n_tokens == 0) throw ContractError("router_z_loss: empty batch");
  return router_z_loss(stats.logits);
}

double total_loss(double ce, double lb, double rz, const LossWeights& w) {
  return ce + w.gamma * lb + w.eta * rz;
}

ObjectiveTerms compute_objective(const ForwardResult& fwd, std::span<const TokenId> targets,
                                 const LossWeights& w) {
  ObjectiveTerms o;
  o.ce = cross_entropy(fwd.logits, targets);
  if (fwd.routing.empty()) {
    o.lb = Tensor::scalar(0.0);
    o.rz = Tensor::scalar(0.0);
  } else {
    Tensor lb, rz;
    for (const LayerRouting& lr : fwd.routing) {
      RouterBatchStats s = RouterBatchStats::from_routing(lr.outcome);
      Tensor l = load_balance_loss(s), z = router_z_loss(s);
      lb = lb.defined() ? add(lb, l) : l;
      rz = rz.defined() ? add(rz, z) : z;
    }
    const double inv = 1.0 / static_cast<double>(fwd.routing.size());
    o.lb = scale(lb, inv);
    o.rz = scale(rz, inv);
  }
  o.total = add(o.ce, add(scale(o.lb, w.gamma), scale(o.rz, w.eta)));
  return o;
}

}  // namespace moelab
