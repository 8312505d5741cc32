// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float64 tensors with a reverse-mode differentiation record.
//
// A Tensor is a cheap handle onto an immutable node. Operations that consume a
// tensor with requires_grad() append a node holding a local backward closure;
// backward() orders the reachable nodes topologically and runs each closure
// exactly once. Only leaf tensors (parameters) may be written in place.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace moelab {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::string op;  // "leaf" for user-created tensors
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad();
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Value of a one-element tensor.
  double item() const;
  /// Element (i, j) of a rank-2 tensor.
  double at(std::size_t i, std::size_t j) const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  /// Accumulated gradient; zeros if nothing has flowed into this tensor yet.
  std::vector<double> grad() const;
  void zero_grad();

  /// In-place write access for optimizers and checkpoint loading. Leaf only.
  std::span<double> mutable_data();

  const std::string& op_name() const;

  // Internal plumbing for op implementations.
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}
  const detail::NodePtr& node() const { return node_; }

 private:
  detail::NodePtr node_;
};

/// Disables recording of differentiation records for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Topologically ordered list of the records reachable from a root.
class Graph {
 public:
  static Graph trace(const Tensor& root);

  std::size_t size() const { return order_.size(); }
  const std::string& op(std::size_t i) const { return order_[i]->op; }
  /// Positions (in this graph) of record i's inputs.
  std::vector<std::size_t> input_positions(std::size_t i) const;

  /// Seeds the root with 1 and propagates. Returns the number of backward
  /// closures executed.
  std::size_t backward();

 private:
  std::vector<detail::NodePtr> order_;  // inputs before consumers; root last
};

/// Populates grads of every requires_grad tensor reachable from `loss`,
/// accumulating onto existing grads. Throws ContractError unless `loss` is a
/// scalar that requires grad.
void backward(const Tensor& loss);

}  // namespace moelab
