// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only transformer whose FFN sublayers, except the first, are
// mixture-of-experts layers: a fixed set of shared experts that every token
// passes through plus routed experts chosen by a softmax router's top-k.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "moelab/ops.hpp"
#include "moelab/tensor.hpp"

namespace moelab {

/// How shared experts are weighted.
enum class SharedExpertGate {
  /// Shared experts add with weight 1.0; the router scores routed experts only.
  kUnitWeight,
  /// The router scores all experts; shared experts are always selected and
  /// weighted by their softmax entry.
  kRouterSoftmax,
};

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t hidden_size = 32;
  std::size_t dense_ffn_hidden = 64;
  std::size_t moe_ffn_hidden = 32;
  std::size_t n_experts = 8;
  std::size_t k_active = 2;  // shared experts included
  std::size_t n_shared = 1;
  std::size_t n_heads = 1;
  std::size_t vocab_size = 64;
  std::size_t max_seq_len = 64;

  SharedExpertGate shared_gate = SharedExpertGate::kUnitWeight;
  bool use_rope = true;
  double rope_base = 10000.0;
  double norm_eps = 1e-6;
  double init_std = 0.02;

  std::size_t n_routed() const { return n_experts - n_shared; }
  std::size_t k_routed() const { return k_active - n_shared; }
  /// Number of router output columns.
  std::size_t n_scored() const {
    return shared_gate == SharedExpertGate::kUnitWeight ? n_routed() : n_experts;
  }
  std::size_t head_dim() const { return hidden_size / n_heads; }
  bool is_moe_layer(std::size_t layer) const { return layer > 0; }

  /// Throws ContractError naming the first offending field.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// hidden_size / 64, at least 1.
std::size_t default_heads(std::size_t hidden_size);

/// Model cards of the released family, keyed "38M-100M" ... "1.7B-10.3B".
const std::map<std::string, ModelConfig>& model_presets();
ModelConfig preset(const std::string& name);

nlohmann::json to_json(const ModelConfig& config);
/// Strict: unknown keys and wrong types raise ContractError naming the field.
/// Missing keys keep the values already in `base`.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

/// Ordered, named parameter tensors.
class ParamStore {
 public:
  void add(const std::string& name, Tensor tensor);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::size_t size() const { return names_.size(); }
  std::size_t total_numel() const;
  void zero_grad();

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

/// Parameter names and shapes in canonical order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& config);

/// Normal(0, init_std) truncated at 3 sigma; norm gains start at 1. Each tensor
/// draws from its own stream seeded by (name, seed).
ParamStore init_params(const ModelConfig& config, std::uint64_t seed);

struct ExpertWeights {
  Tensor w_gate;  // [H x F]
  Tensor w_up;    // [H x F]
  Tensor w_down;  // [F x H]
};

/// Gated-linear-unit FFN: (silu(x W_gate) * (x W_up)) W_down.
Tensor expert_ffn(const Tensor& x, const ExpertWeights& w);

struct MoELayer {
  Tensor router;  // [H x n_scored]; undefined when nothing is routed
  std::vector<ExpertWeights> shared;
  std::vector<ExpertWeights> routed;
  std::size_t k_routed = 0;
  SharedExpertGate shared_gate = SharedExpertGate::kUnitWeight;

  /// Columns of the router that precede the routed experts (0 or n_shared).
  std::size_t routed_column_offset() const {
    return shared_gate == SharedExpertGate::kRouterSoftmax ? shared.size() : 0;
  }
};

MoELayer moe_layer(const ParamStore& params, const ModelConfig& config, std::size_t layer);

/// One routing decision over T tokens.
struct RoutingOutcome {
  std::size_t n_tokens = 0;
  std::size_t n_routed = 0;
  std::size_t k_routed = 0;
  std::size_t column_offset = 0;  // router columns before routed expert 0
  Tensor logits;                  // [T x n_scored]
  Tensor probs;                   // softmax(logits) along each row
  std::vector<std::size_t> selected;   // T x k_routed routed ids, descending gate
  std::vector<double> selected_gates;  // matching softmax entries, not renormalized

  std::span<const std::size_t> experts(std::size_t token) const {
    return std::span(selected).subspan(token * k_routed, k_routed);
  }
  std::span<const double> gates(std::size_t token) const {
    return std::span(selected_gates).subspan(token * k_routed, k_routed);
  }
  /// Softmax entries of all routed experts for one token.
  std::vector<double> gate_vector(std::size_t token) const;
  /// Row-major T x n_scored dispatch indicators (shared columns always 1).
  std::vector<std::uint8_t> dispatch_mask() const;
};

/// Softmax over the logits, then top-k_routed over the routed columns.
RoutingOutcome route_logits(const Tensor& logits, std::size_t k_routed, std::size_t column_offset);
RoutingOutcome route(const Tensor& x, const MoELayer& layer);

struct MoEOutput {
  Tensor output;
  RoutingOutcome routing;
};

MoEOutput moe_forward(const Tensor& x, const MoELayer& layer);

struct LayerRouting {
  std::size_t layer;
  RoutingOutcome outcome;
};

struct ForwardResult {
  Tensor logits;  // [T x V]
  std::vector<LayerRouting> routing;
};

/// tokens holds tokens.size() / seq_len sequences of length seq_len.
ForwardResult forward(std::span<const TokenId> tokens, std::size_t seq_len,
                      const ModelConfig& config, const ParamStore& params);
ForwardResult forward(std::span<const TokenId> tokens, const ModelConfig& config,
                      const ParamStore& params);

struct ParamCount {
  std::uint64_t total = 0;
  std::uint64_t active = 0;
};

ParamCount count_params(const ModelConfig& config);

}  // namespace moelab
