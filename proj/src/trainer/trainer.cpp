// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "moelab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "moelab/checkpoint.hpp"
#include "moelab/errors.hpp"
#include "moelab/format.hpp"

namespace moelab {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ContractError("train." + field + ": " + why);
  };
  if (batch_size == 0) fail("batch_size", "must be positive");
  if (seq_len == 0) fail("seq_len", "must be positive");
  if (total_steps == 0) fail("total_steps", "must be positive");
  if (!(max_lr > 0)) fail("max_lr", "must be positive");
  if (!(min_lr >= 0) || min_lr > max_lr) fail("min_lr", "must lie in [0, max_lr]");
  if (!(warmup_ratio >= 0) || !(decay_ratio >= 0) || warmup_ratio + decay_ratio > 1) {
    fail("warmup_ratio", "warmup_ratio and decay_ratio must be non-negative and sum to at most 1");
  }
  if (!(beta1 >= 0 && beta1 < 1)) fail("beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0 && beta2 < 1)) fail("beta2", "must lie in [0, 1)");
  if (!(adam_eps > 0)) fail("adam_eps", "must be positive");
  if (!(grad_clip >= 0)) fail("grad_clip", "must be non-negative");
  if (!(gamma >= 0)) fail("gamma", "must be non-negative");
  if (!(eta >= 0)) fail("eta", "must be non-negative");
  if (checkpoint_count == 0) fail("checkpoint_count", "must be positive");
  if (val_sequences == 0) fail("val_sequences", "must be positive");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {
      {"batch_size", c.batch_size},     {"seq_len", c.seq_len},
      {"total_steps", c.total_steps},   {"max_lr", c.max_lr},
      {"min_lr", c.min_lr},             {"warmup_ratio", c.warmup_ratio},
      {"decay_ratio", c.decay_ratio},   {"beta1", c.beta1},
      {"beta2", c.beta2},               {"adam_eps", c.adam_eps},
      {"grad_clip", c.grad_clip},       {"gamma", c.gamma},
      {"eta", c.eta},                   {"seed", c.seed},
      {"checkpoint_count", c.checkpoint_count},
      {"trace_cadence", c.trace_cadence},
      {"val_sequences", c.val_sequences},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base) {
  if (!j.is_object()) throw ContractError("train: expected an object");
  auto fail = [](const std::string& key, const std::string& why) {
    throw ContractError("train." + key + ": " + why);
  };
  const std::map<std::string, std::size_t TrainConfig::*> sizes = {
      {"batch_size", &TrainConfig::batch_size},
      {"seq_len", &TrainConfig::seq_len},
      {"checkpoint_count", &TrainConfig::checkpoint_count},
      {"val_sequences", &TrainConfig::val_sequences},
  };
  const std::map<std::string, std::uint64_t TrainConfig::*> u64s = {
      {"total_steps", &TrainConfig::total_steps},
      {"seed", &TrainConfig::seed},
      {"trace_cadence", &TrainConfig::trace_cadence},
  };
  const std::map<std::string, double TrainConfig::*> doubles = {
      {"max_lr", &TrainConfig::max_lr},       {"min_lr", &TrainConfig::min_lr},
      {"warmup_ratio", &TrainConfig::warmup_ratio}, {"decay_ratio", &TrainConfig::decay_ratio},
      {"beta1", &TrainConfig::beta1},         {"beta2", &TrainConfig::beta2},
      {"adam_eps", &TrainConfig::adam_eps},   {"grad_clip", &TrainConfig::grad_clip},
      {"gamma", &TrainConfig::gamma},         {"eta", &TrainConfig::eta},
  };
  for (const auto& [key, value] : j.items()) {
    const bool is_uint = value.is_number_integer() && value.get<long long>() >= 0;
    if (auto it = sizes.find(key); it != sizes.end()) {
      if (!is_uint) fail(key, "expected a non-negative integer");
      base.*(it->second) = value.get<std::size_t>();
    } else if (auto ut = u64s.find(key); ut != u64s.end()) {
      if (!is_uint) fail(key, "expected a non-negative integer");
      base.*(ut->second) = value.get<std::uint64_t>();
    } else if (auto dt = doubles.find(key); dt != doubles.end()) {
      if (!value.is_number()) fail(key, "expected a number");
      base.*(dt->second) = value.get<double>();
    } else {
      fail(key, "unknown field");
    }
  }
  return base;
}

double wsd_lr(std::uint64_t step, const TrainConfig& c) {
  if (step > c.total_steps) {
    throw ContractError("wsd_lr: step " + std::to_string(step) + " outside [0, " +
                        std::to_string(c.total_steps) + "]");
  }
  const double total = static_cast<double>(c.total_steps);
  const double s = static_cast<double>(step);
  const double warm = std::ceil(c.warmup_ratio * total);
  const double decay = std::ceil(c.decay_ratio * total);
  double lr = c.max_lr;
  if (warm > 0) lr = std::min(lr, c.max_lr * s / warm);
  if (decay > 0) {
    const double start = total - decay;
    if (s >= start) lr = std::min(lr, c.min_lr + (c.max_lr - c.min_lr) * (total - s) / decay);
  }
  return lr;
}

std::vector<std::uint64_t> checkpoint_steps(std::uint64_t total, std::size_t count) {
  if (count == 0) throw ContractError("checkpoint_count must be positive");
  std::vector<std::uint64_t> out;
  for (std::size_t i = 1; i <= count; ++i) {
    const std::uint64_t s = i * total / count;
    if (s > 0 && (out.empty() || out.back() != s)) out.push_back(s);
  }
  return out;
}

void adam_update(std::span<double> param, std::span<const double> grad, AdamMoments& st, std::uint64_t t,
                 double lr, double beta1, double beta2, double eps) {
  if (param.size() != grad.size()) throw DimensionError("adam_update: parameter and gradient sizes differ");
  if (t == 0) throw ContractError("adam_update: step count is 1-based");
  if (st.m.empty()) {
    st.m.assign(param.size(), 0.0);
    st.v.assign(param.size(), 0.0);
  }
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
    st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g * g;
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

Adam::Adam(const ParamStore& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), state_(params.size()) {}

double Adam::step(ParamStore& params, double lr, double clip_norm) {
  if (params.size() != state_.size()) throw ContractError("Adam: parameter set changed");
  std::vector<std::vector<double>> grads(params.size());
  double sq = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    grads[i] = params.tensors()[i].grad();
    for (std::size_t j = 0; j < grads[i].size(); ++j) {
      const double g = grads[i][j];
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient in '" + params.names()[i] + "' at element " + std::to_string(j) +
                           " (update " + std::to_string(t_ + 1) + ")");
      }
      sq += g * g;
    }
  }
  const double norm = std::sqrt(sq);
  if (clip_norm > 0 && norm > clip_norm) {
    const double f = clip_norm / norm;
    for (auto& g : grads)
      for (double& v : g) v *= f;
  }
  ++t_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    adam_update(params.tensors()[i].mutable_data(), grads[i], state_[i], t_, lr, beta1_, beta2_, eps_);
  }
  return norm;
}

Batcher::Batcher(std::span<const TokenId> tokens, std::size_t seq_len, std::size_t val_sequences)
    : seq_len_(seq_len) {
  if (seq_len == 0) throw ContractError("Batcher: seq_len must be positive");
  const std::size_t val_tokens = val_sequences * seq_len + 1;
  if (tokens.size() < val_tokens + seq_len + 1) {
    throw ContractError("corpus has " + std::to_string(tokens.size()) + " tokens; need at least " +
                        std::to_string(val_tokens + seq_len + 1) + " for seq_len " + std::to_string(seq_len) +
                        " and " + std::to_string(val_sequences) + " validation sequences");
  }
  const std::size_t split = tokens.size() - val_tokens;
  train_.assign(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(split));
  n_windows_ = (train_.size() - 1) / seq_len;
  for (std::size_t s = 0; s < val_sequences; ++s) {
    const std::size_t start = split + s * seq_len;
    for (std::size_t p = 0; p < seq_len; ++p) {
      val_inputs_.push_back(tokens[start + p]);
      val_targets_.push_back(tokens[start + p + 1]);
    }
  }
}

void Batcher::batch(std::uint64_t step, std::size_t batch_size, std::vector<TokenId>& inputs,
                    std::vector<TokenId>& targets) const {
  if (step == 0) throw ContractError("Batcher: steps are 1-based");
  inputs.clear();
  targets.clear();
  for (std::size_t b = 0; b < batch_size; ++b) {
    const std::uint64_t w = ((step - 1) * batch_size + b) % n_windows_;
    const std::size_t start = static_cast<std::size_t>(w) * seq_len_;
    for (std::size_t p = 0; p < seq_len_; ++p) {
      inputs.push_back(train_[start + p]);
      targets.push_back(train_[start + p + 1]);
    }
  }
}

nlohmann::json to_json(const RouteRecord& r) {
  return {{"step", r.step}, {"layer", r.layer}, {"seq", r.seq},        {"pos", r.pos},
          {"token", r.token}, {"experts", r.experts}, {"gates", r.gates}};
}

RouteRecord route_record_from_json(const nlohmann::json& j) {
  RouteRecord r;
  r.step = j.at("step").get<std::uint64_t>();
  r.layer = j.at("layer").get<std::size_t>();
  r.seq = j.at("seq").get<std::size_t>();
  r.pos = j.at("pos").get<std::size_t>();
  r.token = j.at("token").get<TokenId>();
  r.experts = j.at("experts").get<std::vector<std::size_t>>();
  r.gates = j.at("gates").get<std::vector<double>>();
  if (r.experts.size() != r.gates.size()) throw ContractError("experts and gates differ in length");
  return r;
}

std::vector<RouteRecord> trace_routing(std::span<const TokenId> inputs, std::size_t seq_len,
                                       const ModelConfig& model, const ParamStore& params, std::uint64_t step) {
  NoGradGuard no_grad;
  ForwardResult f = forward(inputs, seq_len, model, params);
  std::vector<RouteRecord> out;
  for (const LayerRouting& lr : f.routing) {
    const RoutingOutcome& r = lr.outcome;
    for (std::size_t t = 0; t < r.n_tokens; ++t) {
      RouteRecord rec;
      rec.step = step;
      rec.layer = lr.layer;
      rec.seq = t / seq_len;
      rec.pos = t % seq_len;
      rec.token = inputs[t];
      auto e = r.experts(t);
      auto g = r.gates(t);
      rec.experts.assign(e.begin(), e.end());
      rec.gates.assign(g.begin(), g.end());
      out.push_back(std::move(rec));
    }
  }
  return out;
}

void write_trace_file(const fs::path& file, std::span<const RouteRecord> records) {
  fs::path tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    for (const RouteRecord& r : records) out << to_json(r).dump() << '\n';
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, file, ec);
  if (ec) throw IoError("cannot move trace into " + file.string() + ": " + ec.message());
}

std::string loss_csv_header() { return "step,lr,ce,lb,rz,total"; }

std::string loss_csv_row(const StepLog& s) {
  return std::to_string(s.step) + "," + format_double(s.lr) + "," + format_double(s.ce) + "," +
         format_double(s.lb) + "," + format_double(s.rz) + "," + format_double(s.total);
}

namespace {

void write_json(const fs::path& file, const nlohmann::json& j) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + file.string());
}

}  // namespace

TrainResult train(const ModelConfig& model, const TrainConfig& config, const Corpus& corpus,
                  const fs::path& run_dir, const std::function<void(const StepLog&)>& progress) {
  model.validate();
  config.validate();
  if (config.seq_len > model.max_seq_len) {
    throw ContractError("train.seq_len: " + std::to_string(config.seq_len) + " exceeds model.max_seq_len " +
                        std::to_string(model.max_seq_len));
  }
  if (corpus.vocab_size > model.vocab_size) {
    throw ContractError("corpus vocab_size " + std::to_string(corpus.vocab_size) + " exceeds model.vocab_size " +
                        std::to_string(model.vocab_size));
  }
  Batcher batcher(corpus.tokens, config.seq_len, config.val_sequences);

  std::error_code ec;
  fs::create_directories(run_dir / "checkpoints", ec);
  fs::create_directories(run_dir / "traces", ec);
  if (ec) throw IoError("cannot create run directory " + run_dir.string() + ": " + ec.message());
  write_json(run_dir / "config.json", {{"model", to_json(model)}, {"train", to_json(config)}});

  TrainResult res;
  res.checkpoint_steps = checkpoint_steps(config.total_steps, config.checkpoint_count);
  std::set<std::uint64_t> trace_set(res.checkpoint_steps.begin(), res.checkpoint_steps.end());
  if (config.trace_cadence > 0) {
    for (std::uint64_t s = config.trace_cadence; s <= config.total_steps; s += config.trace_cadence) {
      trace_set.insert(s);
    }
  }
  res.trace_steps.assign(trace_set.begin(), trace_set.end());
  const std::set<std::uint64_t> ckpt_set(res.checkpoint_steps.begin(), res.checkpoint_steps.end());

  std::ofstream loss(run_dir / "loss.csv", std::ios::trunc);
  if (!loss) throw IoError("cannot write " + (run_dir / "loss.csv").string());
  loss << loss_csv_header() << '\n';

  res.params = init_params(model, config.seed);
  Adam adam(res.params, config.beta1, config.beta2, config.adam_eps);
  const LossWeights weights{config.gamma, config.eta};
  std::vector<TokenId> inputs, targets;
  for (std::uint64_t step = 1; step <= config.total_steps; ++step) {
    batcher.batch(step, config.batch_size, inputs, targets);
    ForwardResult f = forward(inputs, config.seq_len, model, res.params);
    ObjectiveTerms o = compute_objective(f, targets, weights);
    res.params.zero_grad();
    backward(o.total);
    const double lr = wsd_lr(step, config);
    StepLog entry{step, lr, o.ce.item(), o.lb.item(), o.rz.item(), 0.0};
    entry.total = total_loss(entry.ce, entry.lb, entry.rz, weights);
    adam.step(res.params, lr, config.grad_clip);

    loss << loss_csv_row(entry) << '\n';
    if (!loss) throw IoError("write failed for loss.csv");
    res.log.push_back(entry);
    if (progress) progress(entry);

    if (ckpt_set.count(step)) {
      loss.flush();
      save_checkpoint(run_dir / "checkpoints" / step_name(step), model, step, res.params);
    }
    if (trace_set.count(step)) {
      auto records = trace_routing(batcher.val_inputs(), config.seq_len, model, res.params, step);
      write_trace_file(run_dir / "traces" / (step_name(step) + ".jsonl"), records);
    }
  }
  loss.close();

  std::vector<std::size_t> moe_layers;
  for (std::size_t l = 0; l < model.n_layers; ++l)
    if (model.is_moe_layer(l)) moe_layers.push_back(l);
  nlohmann::json manifest = {
      {"format", "moelab-run-v1"},
      {"total_steps", config.total_steps},
      {"checkpoint_steps", res.checkpoint_steps},
      {"trace_steps", res.trace_steps},
      {"moe_layers", moe_layers},
      {"n_routed", model.n_routed()},
      {"k_routed", model.k_routed()},
      {"val_sequences", config.val_sequences},
      {"seq_len", config.seq_len},
      {"corpus_tokens", corpus.tokens.size()},
      {"final_ce", res.log.back().ce},
  };
  write_json(run_dir / "manifest.json", manifest);
  return res;
}

}  // namespace moelab
