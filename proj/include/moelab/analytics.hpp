// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Routing metrics over trace files: expert specialization, directional
// co-activation, and router saturation against a reference checkpoint.
// Only routed experts appear in traces, so shared experts never enter a
// metric. Ratios with a zero denominator raise UndefinedInputError.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "moelab/trainer.hpp"

namespace moelab {

class TraceSet {
 public:
  /// A .jsonl file or a directory of them. Malformed lines raise ParseError
  /// carrying the 1-based line number.
  static TraceSet load(const std::filesystem::path& path);

  /// Every record must list the same number of experts.
  void add(RouteRecord record);

  bool contains(std::uint64_t step, std::size_t layer) const;
  /// Throws ContractError listing the available (layer, step) pairs.
  const std::vector<RouteRecord>& records(std::uint64_t step, std::size_t layer) const;
  std::vector<std::uint64_t> steps() const;
  std::vector<std::size_t> layers() const;
  std::vector<std::pair<std::size_t, std::uint64_t>> available() const;  // (layer, step)
  std::size_t k_routed() const { return k_routed_; }
  std::size_t size() const;

  std::map<TokenId, std::size_t> token_frequency(std::uint64_t step, std::size_t layer) const;

 private:
  std::map<std::pair<std::uint64_t, std::size_t>, std::vector<RouteRecord>> by_key_;
  std::size_t k_routed_ = 0;
};

/// Fraction of occurrences of `token` whose selection contains `expert`.
double specialization(const TraceSet& ts, std::size_t layer, std::uint64_t step, TokenId token,
                      std::size_t expert);

/// The n tokens most specialized to `expert`, ties by ascending id. Tokens
/// never routed to the expert are not candidates.
std::vector<TokenId> top_specialized_tokens(const TraceSet& ts, std::size_t layer, std::uint64_t step,
                                            std::size_t expert, std::size_t n);

/// P(j selected | i selected), over records at (layer, step).
double coactivation(const TraceSet& ts, std::size_t layer, std::uint64_t step, std::size_t i, std::size_t j);

struct Heatmap {
  std::vector<std::size_t> experts;        // ascending labels
  std::vector<std::vector<double>> score;  // score[r][c] = coactivation(experts[r], experts[c])
  bool truncated = false;                  // fewer than n experts were active
};

/// The n active experts with the largest best off-diagonal score (ties by
/// ascending id) and their pairwise matrix.
Heatmap coactivation_heatmap(const TraceSet& ts, std::size_t layer, std::uint64_t step, std::size_t n = 16);

/// Mean over tokens of |top-k at step t  intersect  top-k at reference| / k.
/// Records are matched by (seq, pos); both steps must cover the same tokens.
double saturation(const TraceSet& ts, std::size_t layer, std::uint64_t step, std::uint64_t reference,
                  std::size_t k_eval);

enum class Metric { kSpecialization, kCoactivation, kSaturation };

struct SeriesRow {
  std::size_t layer;
  std::uint64_t step;
  std::string label;
  double value;
};

struct SeriesGap {
  std::size_t layer;
  std::uint64_t step;
  std::string reason;
};

struct SeriesTable {
  std::vector<SeriesRow> rows;
  std::vector<SeriesGap> gaps;
};

struct SeriesOptions {
  std::size_t top_tokens = 2;                      // specialization: tokens fixed per expert
  std::vector<std::size_t> k_eval = {1, 2, 4, 8};  // saturation; k above the traced width is skipped
};

/// Long-form trajectories. The final requested step is the reference:
///   specialization  label "e<expert>/t<token>", tokens fixed at the final step
///   coactivation    label "e<expert>", best off-diagonal score of that expert
///   saturation      label "k=<k>"
SeriesTable series(Metric metric, const TraceSet& ts, const std::vector<std::size_t>& layers,
                   const std::vector<std::uint64_t>& steps, const SeriesOptions& options = {});

void write_heatmap_csv(const std::filesystem::path& file, const Heatmap& h);
Heatmap read_heatmap_csv(const std::filesystem::path& file);
void write_series_csv(const std::filesystem::path& file, const SeriesTable& t);

}  // namespace moelab
