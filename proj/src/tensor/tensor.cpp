// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "moelab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <utility>

#include "moelab/errors.hpp"
#include "tensor/node_util.hpp"

namespace moelab {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& detail::Node::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_to_string(shape));
  }
  if (data.size() != shape_numel(shape)) {
    throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_to_string(shape));
  }
  detail::check_finite("leaf", data);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  node->op = "leaf";
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw DimensionError("axis out of range for " + shape_to_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  shape();
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_to_string(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  const Shape& s = shape();
  if (s.size() != 2) throw DimensionError("at(i, j) needs a rank-2 tensor");
  if (i >= s[0] || j >= s[1]) throw IndexError("at(i, j) out of range");
  return node_->data[i * s[1] + j];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::is_leaf() const { return node_ && node_->op == "leaf"; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  shape();
  if (node_->grad.empty()) return std::vector<double>(node_->data.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) throw ContractError("only leaf tensors may be modified in place");
  return node_->data;
}

const std::string& Tensor::op_name() const {
  shape();
  return node_->op;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Graph Graph::trace(const Tensor& root) {
  Graph g;
  if (!root.defined()) throw ContractError("cannot trace an undefined tensor");
  // Iterative post-order DFS over nodes that require grad.
  std::unordered_map<const detail::Node*, bool> seen;
  std::vector<std::pair<detail::NodePtr, std::size_t>> stack;
  if (root.node()->requires_grad) stack.emplace_back(root.node(), 0);
  seen[root.node().get()] = true;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::NodePtr child = node->inputs[next++];
      if (child->requires_grad && !seen[child.get()]) {
        seen[child.get()] = true;
        stack.emplace_back(std::move(child), 0);
      }
    } else {
      g.order_.push_back(node);
      stack.pop_back();
    }
  }
  return g;
}

std::vector<std::size_t> Graph::input_positions(std::size_t i) const {
  std::unordered_map<const detail::Node*, std::size_t> pos;
  for (std::size_t j = 0; j < order_.size(); ++j) pos[order_[j].get()] = j;
  std::vector<std::size_t> out;
  for (const auto& in : order_[i]->inputs) {
    auto it = pos.find(in.get());
    if (it != pos.end()) out.push_back(it->second);
  }
  return out;
}

std::size_t Graph::backward() {
  if (order_.empty()) throw ContractError("backward on a graph with no differentiable records");
  detail::Node& root = *order_.back();
  if (root.data.size() != 1) {
    throw ContractError("backward seed must be a scalar, got " + shape_to_string(root.shape));
  }
  // Intermediate grads are per-pass; only leaves accumulate across passes.
  for (const auto& node : order_) {
    if (node->op != "leaf") node->grad.clear();
  }
  root.ensure_grad()[0] += 1.0;
  std::size_t visited = 0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    detail::Node& node = **it;
    if (node.backward && !node.grad.empty()) {
      node.backward(node);
      ++visited;
    }
  }
  for (const auto& node : order_) {
    if (!node->grad.empty()) detail::check_finite("backward(" + node->op + ")", node->grad);
  }
  return visited;
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward on an undefined tensor");
  if (loss.numel() != 1) {
    throw ContractError("backward seed must be a scalar, got " + shape_to_string(loss.shape()));
  }
  if (!loss.requires_grad()) throw ContractError("backward on a tensor that does not require grad");
  Graph::trace(loss).backward();
}

}  // namespace moelab
