// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0
//
// The `moelab` command line. Exit codes: 0 success, 1 runtime failure,
// 2 usage or configuration error.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "moelab/model.hpp"
#include "moelab/scaling.hpp"
#include "moelab/trainer.hpp"

namespace moelab {

struct AnalyticsSettings {
  std::size_t heatmap_n = 16;
  std::size_t top_tokens = 2;
  std::vector<std::size_t> k_eval = {1, 2, 4, 8};

  bool operator==(const AnalyticsSettings&) const = default;
};

struct ScalingSettings {
  double kappa = 6.0;
  double delta = 1e-3;
  std::size_t max_iterations = 4000;
  ParametricGrid grid;
};

/// Everything a command can be configured with. Defaults, then the config
/// file, then command-line flags.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  AnalyticsSettings analytics;
  ScalingSettings scaling;
};

nlohmann::json to_json(const RunConfig& config);
/// Sections and keys are all optional; unknown keys raise ContractError
/// naming the field.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& file);

/// Exclusive lock on a run directory, held for the lifetime of the object.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path file_;
};

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace moelab
