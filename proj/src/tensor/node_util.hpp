// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "moelab/errors.hpp"
#include "moelab/tensor.hpp"

namespace moelab::detail {

inline void check_finite(const std::string& op, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(op + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

// Builds an op result. The backward closure and input links are only kept when
// grad mode is on and some input requires grad.
template <typename Backward>
Tensor make_result(std::string op, Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor*> inputs, Backward&& backward) {
  check_finite(op, data);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = std::move(op);
  bool needs = false;
  if (grad_enabled()) {
    for (const Tensor* in : inputs) needs = needs || in->requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const Tensor* in : inputs) node->inputs.push_back(in->node());
    node->backward = std::forward<Backward>(backward);
  }
  return Tensor(std::move(node));
}

inline bool wants_grad(const NodePtr& n) { return n->requires_grad; }

}  // namespace moelab::detail
