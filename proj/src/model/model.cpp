// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "moelab/model.hpp"

#include <algorithm>
#include <numeric>

#include "moelab/errors.hpp"
#include "moelab/random.hpp"

namespace moelab {

namespace {

std::string layer_prefix(std::size_t layer) { return "layers." + std::to_string(layer) + "."; }

void push_expert(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix,
                 std::size_t hidden, std::size_t ffn) {
  out.emplace_back(prefix + "w_gate", Shape{hidden, ffn});
  out.emplace_back(prefix + "w_up", Shape{hidden, ffn});
  out.emplace_back(prefix + "w_down", Shape{ffn, hidden});
}

ExpertWeights expert_at(const ParamStore& params, const std::string& prefix) {
  return {params.get(prefix + "w_gate"), params.get(prefix + "w_up"), params.get(prefix + "w_down")};
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ContractError("model." + field + ": " + why);
  };
  if (n_layers == 0) fail("n_layers", "must be positive");
  if (hidden_size == 0) fail("hidden_size", "must be positive");
  if (dense_ffn_hidden == 0) fail("dense_ffn_hidden", "must be positive");
  if (moe_ffn_hidden == 0) fail("moe_ffn_hidden", "must be positive");
  if (vocab_size == 0) fail("vocab_size", "must be positive");
  if (max_seq_len == 0) fail("max_seq_len", "must be positive");
  if (n_heads == 0 || hidden_size % n_heads != 0) {
    fail("n_heads", "must divide hidden_size " + std::to_string(hidden_size));
  }
  if (use_rope && head_dim() % 2 != 0) fail("n_heads", "rotary embeddings need an even head dimension");
  if (k_active > n_experts) fail("k_active", "exceeds n_experts");
  if (n_shared >= k_active) fail("n_shared", "must be smaller than k_active");
  if (!(norm_eps >= 0.0)) fail("norm_eps", "must be non-negative");
  if (!(init_std > 0.0)) fail("init_std", "must be positive");
}

std::size_t default_heads(std::size_t hidden_size) { return std::max<std::size_t>(1, hidden_size / 64); }

const std::map<std::string, ModelConfig>& model_presets() {
  static const std::map<std::string, ModelConfig> presets = [] {
    struct Row {
      const char* name;
      std::size_t layers, hidden, ffn, moe_ffn;
    };
    const Row rows[] = {
        {"38M-100M", 9, 256, 1368, 176},    {"98M-349M", 9, 512, 2736, 352},
        {"115M-459M", 12, 512, 2736, 352},  {"290M-1.3B", 9, 1024, 5472, 704},
        {"419M-2.2B", 15, 1024, 5472, 704}, {"721M-3.8B", 12, 1536, 8208, 1056},
        {"1.7B-10.3B", 18, 2048, 10944, 1408},
    };
    std::map<std::string, ModelConfig> m;
    for (const Row& r : rows) {
      ModelConfig c;
      c.n_layers = r.layers;
      c.hidden_size = r.hidden;
      c.dense_ffn_hidden = r.ffn;
      c.moe_ffn_hidden = r.moe_ffn;
      c.n_experts = 64;
      c.k_active = 8;
      c.n_shared = 2;
      c.n_heads = default_heads(r.hidden);
      c.vocab_size = 50304;
      c.max_seq_len = 2048;
      m.emplace(r.name, c);
    }
    return m;
  }();
  return presets;
}

ModelConfig preset(const std::string& name) {
  const auto& p = model_presets();
  auto it = p.find(name);
  if (it == p.end()) throw ContractError("unknown model preset '" + name + "'");
  return it->second;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {
      {"n_layers", c.n_layers},
      {"hidden_size", c.hidden_size},
      {"dense_ffn_hidden", c.dense_ffn_hidden},
      {"moe_ffn_hidden", c.moe_ffn_hidden},
      {"n_experts", c.n_experts},
      {"k_active", c.k_active},
      {"n_shared", c.n_shared},
      {"n_heads", c.n_heads},
      {"vocab_size", c.vocab_size},
      {"max_seq_len", c.max_seq_len},
      {"shared_gate", c.shared_gate == SharedExpertGate::kUnitWeight ? "unit_weight" : "router_softmax"},
      {"use_rope", c.use_rope},
      {"rope_base", c.rope_base},
      {"norm_eps", c.norm_eps},
      {"init_std", c.init_std},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base) {
  if (!j.is_object()) throw ContractError("model: expected an object");
  auto fail = [](const std::string& key, const std::string& why) {
    throw ContractError("model." + key + ": " + why);
  };
  if (j.contains("preset")) {
    if (!j["preset"].is_string()) fail("preset", "expected a string");
    base = preset(j["preset"].get<std::string>());
  }
  auto as_size = [&](const std::string& key, const nlohmann::json& v) {
    if (!v.is_number_integer() || v.get<long long>() < 0) fail(key, "expected a non-negative integer");
    return v.get<std::size_t>();
  };
  auto as_double = [&](const std::string& key, const nlohmann::json& v) {
    if (!v.is_number()) fail(key, "expected a number");
    return v.get<double>();
  };
  const std::map<std::string, std::size_t ModelConfig::*> sizes = {
      {"n_layers", &ModelConfig::n_layers},       {"hidden_size", &ModelConfig::hidden_size},
      {"dense_ffn_hidden", &ModelConfig::dense_ffn_hidden},
      {"moe_ffn_hidden", &ModelConfig::moe_ffn_hidden},
      {"n_experts", &ModelConfig::n_experts},     {"k_active", &ModelConfig::k_active},
      {"n_shared", &ModelConfig::n_shared},       {"n_heads", &ModelConfig::n_heads},
      {"vocab_size", &ModelConfig::vocab_size},   {"max_seq_len", &ModelConfig::max_seq_len},
  };
  const std::map<std::string, double ModelConfig::*> doubles = {
      {"rope_base", &ModelConfig::rope_base},
      {"norm_eps", &ModelConfig::norm_eps},
      {"init_std", &ModelConfig::init_std},
  };
  for (const auto& [key, value] : j.items()) {
    if (key == "preset") continue;
    if (auto it = sizes.find(key); it != sizes.end()) {
      base.*(it->second) = as_size(key, value);
    } else if (auto dt = doubles.find(key); dt != doubles.end()) {
      base.*(dt->second) = as_double(key, value);
    } else if (key == "use_rope") {
      if (!value.is_boolean()) fail(key, "expected a boolean");
      base.use_rope = value.get<bool>();
    } else if (key == "shared_gate") {
      if (!value.is_string()) fail(key, "expected a string");
      const auto s = value.get<std::string>();
      if (s == "unit_weight") {
        base.shared_gate = SharedExpertGate::kUnitWeight;
      } else if (s == "router_softmax") {
        base.shared_gate = SharedExpertGate::kRouterSoftmax;
      } else {
        fail(key, "expected 'unit_weight' or 'router_softmax'");
      }
    } else {
      fail(key, "unknown field");
    }
  }
  if (j.contains("hidden_size") && !j.contains("n_heads")) base.n_heads = default_heads(base.hidden_size);
  return base;
}

void ParamStore::add(const std::string& name, Tensor tensor) {
  if (contains(name)) throw ContractError("duplicate parameter '" + name + "'");
  index_[name] = names_.size();
  names_.push_back(name);
  tensors_.push_back(std::move(tensor));
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("missing parameter '" + name + "'");
  return tensors_[it->second];
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("missing parameter '" + name + "'");
  return tensors_[it->second];
}

std::size_t ParamStore::total_numel() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& c) {
  std::vector<std::pair<std::string, Shape>> out;
  const std::size_t H = c.hidden_size;
  out.emplace_back("embed", Shape{c.vocab_size, H});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = layer_prefix(l);
    out.emplace_back(p + "attn_norm", Shape{H});
    for (const char* w : {"wq", "wk", "wv", "wo"}) out.emplace_back(p + w, Shape{H, H});
    out.emplace_back(p + "ffn_norm", Shape{H});
    if (!c.is_moe_layer(l)) {
      push_expert(out, p + "ffn.", H, c.dense_ffn_hidden);
      continue;
    }
    if (c.n_scored() > 0 && c.n_routed() > 0) out.emplace_back(p + "router", Shape{H, c.n_scored()});
    for (std::size_t s = 0; s < c.n_shared; ++s) {
      push_expert(out, p + "shared." + std::to_string(s) + ".", H, c.moe_ffn_hidden);
    }
    for (std::size_t e = 0; e < c.n_routed(); ++e) {
      push_expert(out, p + "experts." + std::to_string(e) + ".", H, c.moe_ffn_hidden);
    }
  }
  out.emplace_back("final_norm", Shape{H});
  out.emplace_back("unembed", Shape{H, c.vocab_size});
  return out;
}

ParamStore init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ParamStore store;
  for (auto& [name, shape] : parameter_layout(config)) {
    std::vector<double> data(shape_numel(shape));
    if (ends_with(name, "norm")) {
      std::fill(data.begin(), data.end(), 1.0);
    } else {
      Rng rng(derive_seed(name, seed));
      for (double& v : data) {
        double z;
        do {
          z = rng.normal();
        } while (std::abs(z) > 3.0);
        v = config.init_std * z;
      }
    }
    store.add(name, Tensor::from_data(shape, std::move(data), true));
  }
  return store;
}

Tensor expert_ffn(const Tensor& x, const ExpertWeights& w) {
  return matmul(swiglu(matmul(x, w.w_gate), matmul(x, w.w_up)), w.w_down);
}

MoELayer moe_layer(const ParamStore& params, const ModelConfig& config, std::size_t layer) {
  if (!config.is_moe_layer(layer) || layer >= config.n_layers) {
    throw ContractError("layer " + std::to_string(layer) + " is not an MoE layer");
  }
  const std::string p = layer_prefix(layer);
  MoELayer m;
  m.k_routed = config.k_routed();
  m.shared_gate = config.shared_gate;
  if (params.contains(p + "router")) m.router = params.get(p + "router");
  for (std::size_t s = 0; s < config.n_shared; ++s) {
    m.shared.push_back(expert_at(params, p + "shared." + std::to_string(s) + "."));
  }
  for (std::size_t e = 0; e < config.n_routed(); ++e) {
    m.routed.push_back(expert_at(params, p + "experts." + std::to_string(e) + "."));
  }
  return m;
}

std::vector<double> RoutingOutcome::gate_vector(std::size_t token) const {
  const std::size_t cols = probs.dim(1);
  auto row = probs.data().subspan(token * cols + column_offset, n_routed);
  return {row.begin(), row.end()};
}

std::vector<std::uint8_t> RoutingOutcome::dispatch_mask() const {
  const std::size_t cols = column_offset + n_routed;
  std::vector<std::uint8_t> mask(n_tokens * cols, 0);
  for (std::size_t t = 0; t < n_tokens; ++t) {
    for (std::size_t c = 0; c < column_offset; ++c) mask[t * cols + c] = 1;
    for (std::size_t e : experts(t)) mask[t * cols + column_offset + e] = 1;
  }
  return mask;
}

RoutingOutcome route_logits(const Tensor& logits, std::size_t k_routed, std::size_t column_offset) {
  if (logits.rank() != 2) throw DimensionError("route: logits must be rank 2");
  const std::size_t T = logits.dim(0), cols = logits.dim(1);
  if (column_offset >= cols) throw DimensionError("route: no routed columns in router output");
  RoutingOutcome r;
  r.n_tokens = T;
  r.n_routed = cols - column_offset;
  r.k_routed = k_routed;
  r.column_offset = column_offset;
  r.logits = logits;
  r.probs = softmax(logits, 1);
  r.selected.reserve(T * k_routed);
  r.selected_gates.reserve(T * k_routed);
  for (std::size_t t = 0; t < T; ++t) {
    auto routed = r.probs.data().subspan(t * cols + column_offset, r.n_routed);
    TopK top = top_k(routed, k_routed);
    r.selected.insert(r.selected.end(), top.indices.begin(), top.indices.end());
    r.selected_gates.insert(r.selected_gates.end(), top.values.begin(), top.values.end());
  }
  return r;
}

RoutingOutcome route(const Tensor& x, const MoELayer& layer) {
  if (!layer.router.defined()) throw ContractError("route: layer has no routed experts");
  if (x.rank() != 2 || x.dim(1) != layer.router.dim(0)) {
    throw DimensionError("route: input " + shape_to_string(x.shape()) + " does not match router " +
                         shape_to_string(layer.router.shape()));
  }
  return route_logits(matmul(x, layer.router), layer.k_routed, layer.routed_column_offset());
}

MoEOutput moe_forward(const Tensor& x, const MoELayer& layer) {
  if (x.rank() != 2) throw DimensionError("moe_forward: input must be rank 2");
  const std::size_t T = x.dim(0), H = x.dim(1);
  MoEOutput res;
  if (!layer.routed.empty()) res.routing = route(x, layer);
  std::vector<std::size_t> all_rows(T);
  std::iota(all_rows.begin(), all_rows.end(), std::size_t{0});

  Tensor out = Tensor::zeros({T, H});
  for (std::size_t s = 0; s < layer.shared.size(); ++s) {
    Tensor y = expert_ffn(x, layer.shared[s]);
    if (layer.shared_gate == SharedExpertGate::kRouterSoftmax && res.routing.probs.defined()) {
      std::vector<std::size_t> col(T, s);
      y = scale_rows(y, gather_elements(res.routing.probs, all_rows, col));
    }
    out = add(out, y);
  }
  const RoutingOutcome& r = res.routing;
  for (std::size_t e = 0; e < layer.routed.size(); ++e) {
    std::vector<std::size_t> rows;
    for (std::size_t t = 0; t < T; ++t) {
      auto sel = r.experts(t);
      if (std::find(sel.begin(), sel.end(), e) != sel.end()) rows.push_back(t);
    }
    if (rows.empty()) continue;
    const std::vector<std::size_t> cols(rows.size(), r.column_offset + e);
    Tensor gates = gather_elements(r.probs, rows, cols);
    Tensor y = expert_ffn(gather_rows(x, rows), layer.routed[e]);
    out = index_add_rows(out, rows, scale_rows(y, gates));
  }
  res.output = out;
  return res;
}

ForwardResult forward(std::span<const TokenId> tokens, std::size_t seq_len, const ModelConfig& config,
                      const ParamStore& params) {
  config.validate();
  if (tokens.empty()) throw ContractError("forward: empty token sequence");
  if (seq_len == 0 || tokens.size() % seq_len != 0) {
    throw DimensionError("forward: " + std::to_string(tokens.size()) +
                         " tokens are not whole sequences of length " + std::to_string(seq_len));
  }
  if (seq_len > config.max_seq_len) {
    throw ContractError("forward: sequence length " + std::to_string(seq_len) + " exceeds max_seq_len " +
                        std::to_string(config.max_seq_len));
  }
  ForwardResult res;
  Tensor x = embedding(params.get("embed"), tokens);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const std::string p = layer_prefix(l);
    Tensor xn = rms_norm(x, params.get(p + "attn_norm"), config.norm_eps);
    Tensor q = matmul(xn, params.get(p + "wq"));
    Tensor k = matmul(xn, params.get(p + "wk"));
    Tensor v = matmul(xn, params.get(p + "wv"));
    if (config.use_rope) {
      q = rope(q, config.n_heads, seq_len, config.rope_base);
      k = rope(k, config.n_heads, seq_len, config.rope_base);
    }
    Tensor attn = matmul(causal_attention(q, k, v, config.n_heads, seq_len), params.get(p + "wo"));
    x = add(x, attn);
    Tensor hn = rms_norm(x, params.get(p + "ffn_norm"), config.norm_eps);
    if (!config.is_moe_layer(l)) {
      x = add(x, expert_ffn(hn, expert_at(params, p + "ffn.")));
    } else {
      MoEOutput mo = moe_forward(hn, moe_layer(params, config, l));
      x = add(x, mo.output);
      if (mo.routing.probs.defined()) res.routing.push_back({l, std::move(mo.routing)});
    }
  }
  x = rms_norm(x, params.get("final_norm"), config.norm_eps);
  res.logits = matmul(x, params.get("unembed"));
  return res;
}

ForwardResult forward(std::span<const TokenId> tokens, const ModelConfig& config, const ParamStore& params) {
  return forward(tokens, tokens.size(), config, params);
}

ParamCount count_params(const ModelConfig& c) {
  c.validate();
  const std::uint64_t H = c.hidden_size;
  const std::uint64_t expert = 3 * H * c.moe_ffn_hidden;
  const std::uint64_t attn_block = 2 * H + 4 * H * H;  // two norm gains + q, k, v, o
  ParamCount pc;
  std::uint64_t non_expert = 2 * c.vocab_size * H + H;  // embed, unembed, final norm
  std::uint64_t expert_total = 0, expert_active = 0;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    non_expert += attn_block;
    if (!c.is_moe_layer(l)) {
      non_expert += 3 * H * c.dense_ffn_hidden;
      continue;
    }
    if (c.n_routed() > 0) non_expert += H * c.n_scored();
    expert_total += c.n_experts * expert;
    expert_active += c.k_active * expert;
  }
  pc.total = non_expert + expert_total;
  pc.active = non_expert + expert_active;
  return pc;
}

}  // namespace moelab
