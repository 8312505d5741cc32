// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pretraining loop. A run directory written by train() looks like
//
//   config.json                    effective {"model": ..., "train": ...}
//   manifest.json                  run summary (steps, checkpoints, traces)
//   loss.csv                       step,lr,ce,lb,rz,total
//   checkpoints/step_XXXXXX/       see checkpoint.hpp
//   traces/step_XXXXXX.jsonl       routing of the validation batch

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "moelab/corpus.hpp"
#include "moelab/model.hpp"
#include "moelab/objectives.hpp"

namespace moelab {

struct TrainConfig {
  std::size_t batch_size = 1024;  // sequences per step
  std::size_t seq_len = 2048;
  std::uint64_t total_steps = 1000;
  double max_lr = 3e-4;
  double min_lr = 3e-5;
  double warmup_ratio = 0.01;
  double decay_ratio = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;  // global L2 norm; 0 disables
  double gamma = 0.01;     // load-balance weight
  double eta = 0.001;      // router z-loss weight
  std::uint64_t seed = 0;
  std::size_t checkpoint_count = 10;
  std::uint64_t trace_cadence = 0;  // extra trace steps; 0 traces at checkpoints only
  std::size_t val_sequences = 16;   // held out from the end of the corpus

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Warmup-stable-decay schedule, defined for 0 <= step <= total_steps.
double wsd_lr(std::uint64_t step, const TrainConfig& config);

/// floor(i * total / count) for i = 1..count, deduplicated; always ends at total.
std::vector<std::uint64_t> checkpoint_steps(std::uint64_t total_steps, std::size_t count);

/// Per-tensor Adam moments.
struct AdamMoments {
  std::vector<double> m, v;
};

/// One bias-corrected Adam update of `param` in place; `t` is the 1-based
/// update count.
void adam_update(std::span<double> param, std::span<const double> grad, AdamMoments& state, std::uint64_t t,
                 double lr, double beta1, double beta2, double eps);

class Adam {
 public:
  Adam(const ParamStore& params, double beta1, double beta2, double eps);

  /// Reads the gradients held by `params`, optionally clips them to a global
  /// norm, and updates in place. Returns the pre-clip global norm. A
  /// non-finite gradient raises NumericError naming the parameter.
  double step(ParamStore& params, double lr, double clip_norm);
  std::uint64_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<AdamMoments> state_;
};

/// Train/validation split of a corpus. Sequence windows of seq_len + 1
/// tokens overlap by one token.
class Batcher {
 public:
  Batcher(std::span<const TokenId> tokens, std::size_t seq_len, std::size_t val_sequences);

  /// Inputs and next-token targets for the 1-based `step`, batch_size
  /// windows taken cyclically from the training region.
  void batch(std::uint64_t step, std::size_t batch_size, std::vector<TokenId>& inputs,
             std::vector<TokenId>& targets) const;
  const std::vector<TokenId>& val_inputs() const { return val_inputs_; }
  const std::vector<TokenId>& val_targets() const { return val_targets_; }
  std::size_t train_windows() const { return n_windows_; }

 private:
  std::vector<TokenId> train_;
  std::size_t seq_len_;
  std::size_t n_windows_;
  std::vector<TokenId> val_inputs_, val_targets_;
};

/// One token's routing at one MoE layer.
struct RouteRecord {
  std::uint64_t step = 0;
  std::size_t layer = 0;
  std::size_t seq = 0;
  std::size_t pos = 0;
  TokenId token = 0;
  std::vector<std::size_t> experts;  // routed ids, descending gate
  std::vector<double> gates;
};

nlohmann::json to_json(const RouteRecord& r);
RouteRecord route_record_from_json(const nlohmann::json& j);

/// Routes `inputs` (whole sequences) and returns records ordered by
/// (layer, seq, pos).
std::vector<RouteRecord> trace_routing(std::span<const TokenId> inputs, std::size_t seq_len,
                                       const ModelConfig& model, const ParamStore& params, std::uint64_t step);

void write_trace_file(const std::filesystem::path& file, std::span<const RouteRecord> records);

struct StepLog {
  std::uint64_t step;
  double lr, ce, lb, rz, total;
};

std::string loss_csv_header();
std::string loss_csv_row(const StepLog& s);

struct TrainResult {
  std::vector<StepLog> log;
  std::vector<std::uint64_t> checkpoint_steps;
  std::vector<std::uint64_t> trace_steps;
  ParamStore params;
};

/// Runs the loop and writes the run directory described at the top of this
/// file. `progress` (optional) receives each step's log entry.
TrainResult train(const ModelConfig& model, const TrainConfig& config, const Corpus& corpus,
                  const std::filesystem::path& run_dir,
                  const std::function<void(const StepLog&)>& progress = {});

}  // namespace moelab
