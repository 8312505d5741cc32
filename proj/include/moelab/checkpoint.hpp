// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint directory layout:
//
//   manifest.json      {"format", "step", "config", "params": [{"name",
//                       "shape", "offset", "file"}]}
//   <name>.f64         raw little-endian float64, row-major
//
// "offset" is the element offset of the tensor in the canonical flattening
// of all parameters in manifest order.

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "moelab/model.hpp"

namespace moelab {

struct Checkpoint {
  ModelConfig config;
  std::uint64_t step = 0;
  ParamStore params;
};

/// Writes into a sibling temporary directory and renames it into place, so an
/// interrupted write never clobbers an existing checkpoint.
void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& config, std::uint64_t step,
                     const ParamStore& params);

Checkpoint load_checkpoint(const std::filesystem::path& dir);

void write_f64_le(const std::filesystem::path& file, std::span<const double> values);
std::vector<double> read_f64_le(const std::filesystem::path& file);

}  // namespace moelab
