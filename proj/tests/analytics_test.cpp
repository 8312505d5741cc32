// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "moelab/analytics.hpp"
#include "moelab/errors.hpp"
#include "support/brute_force.hpp"
#include "support/random_traces.hpp"

namespace moelab {
namespace {

namespace fs = std::filesystem;
using testing::coact_bf;
using testing::sat_bf;
using testing::spec_bf;

RouteRecord rec(std::uint64_t step, std::size_t seq, std::size_t pos, TokenId tok, std::vector<std::size_t> ex,
                std::vector<double> g = {}) {
  if (g.empty())
    for (std::size_t i = 0; i < ex.size(); ++i) g.push_back(1.0 - 0.1 * static_cast<double>(i));
  return {step, 1, seq, pos, tok, std::move(ex), std::move(g)};
}

TraceSet make(const std::vector<RouteRecord>& rs) {
  TraceSet ts;
  for (const auto& r : rs) ts.add(r);
  return ts;
}

TEST(Specialization, HandCounts) {
  TraceSet ts = make({rec(5, 0, 0, 7, {1, 2}), rec(5, 0, 1, 7, {1, 3}), rec(5, 0, 2, 7, {2, 3}),
                      rec(5, 0, 3, 4, {1, 0})});
  EXPECT_DOUBLE_EQ(specialization(ts, 1, 5, 7, 1), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(specialization(ts, 1, 5, 4, 1), 1.0);
  EXPECT_DOUBLE_EQ(specialization(ts, 1, 5, 4, 3), 0.0);
  EXPECT_THROW(specialization(ts, 1, 5, 9, 1), UndefinedInputError);
  EXPECT_THROW(specialization(ts, 2, 5, 7, 1), ContractError);
}

TEST(Specialization, TopTokens) {
  TraceSet ts = make({rec(5, 0, 0, 3, {1}), rec(5, 0, 1, 3, {2}), rec(5, 0, 2, 8, {1}), rec(5, 0, 3, 2, {1}),
                      rec(5, 0, 4, 2, {0})});
  // expert 1: token 8 -> 1.0, tokens 2 and 3 -> 0.5 (tie to the lower id)
  EXPECT_EQ(top_specialized_tokens(ts, 1, 5, 1, 2), (std::vector<TokenId>{8, 2}));
  EXPECT_EQ(top_specialized_tokens(ts, 1, 5, 1, 9), (std::vector<TokenId>{8, 2, 3}));
  EXPECT_TRUE(top_specialized_tokens(ts, 1, 5, 6, 2).empty());
  TraceSet single = make({rec(1, 0, 0, 4, {0}), rec(1, 0, 1, 4, {0})});
  EXPECT_EQ(top_specialized_tokens(single, 1, 1, 0, 2), (std::vector<TokenId>{4}));
}

TEST(Specialization, TopTokensMatchExhaustiveRanking) {
  testing::TraceSpec spec;
  spec.vocab = 4;
  auto rs = testing::random_traces(spec, 11);
  TraceSet ts = make(rs);
  for (std::size_t e = 0; e < 16; ++e) {
    std::vector<std::pair<double, TokenId>> all;
    for (TokenId t = 0; t < 4; ++t) {
      double s = spec_bf(rs, 1, 30, t, e);
      if (s > 0) all.push_back({-s, t});
    }
    std::sort(all.begin(), all.end());
    std::vector<TokenId> want;
    for (std::size_t i = 0; i < all.size() && i < 3; ++i) want.push_back(all[i].second);
    EXPECT_EQ(top_specialized_tokens(ts, 1, 30, e, 3), want) << e;
  }
}

TEST(Coactivation, AsymmetricHandExample) {
  // i=0 active 4 times, j=1 twice, together twice
  TraceSet ts = make({rec(1, 0, 0, 1, {0, 1}), rec(1, 0, 1, 1, {0, 1}), rec(1, 0, 2, 1, {0, 2}),
                      rec(1, 0, 3, 1, {0, 2})});
  EXPECT_DOUBLE_EQ(coactivation(ts, 1, 1, 0, 1), 0.5);
  EXPECT_DOUBLE_EQ(coactivation(ts, 1, 1, 1, 0), 1.0);
  EXPECT_DOUBLE_EQ(coactivation(ts, 1, 1, 0, 0), 1.0);
  EXPECT_DOUBLE_EQ(coactivation(ts, 1, 1, 1, 2), 0.0);
  EXPECT_THROW(coactivation(ts, 1, 1, 5, 0), UndefinedInputError);
}

TEST(Coactivation, TwoExpertTraceIsFlagged) {
  TraceSet asym = make({rec(1, 0, 0, 1, {0, 1}), rec(1, 0, 1, 1, {1, 0})});
  Heatmap h = coactivation_heatmap(asym, 1, 1, 16);
  EXPECT_TRUE(h.truncated);
  EXPECT_EQ(h.experts, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(h.score, (std::vector<std::vector<double>>{{1, 1}, {1, 1}}));
}

TEST(Coactivation, HeatmapMatchesAsymmetricValues) {
  // width-2 records over experts {0,1,2}: 0 four times, 1 twice with 0
  TraceSet ts = make({rec(1, 0, 0, 1, {0, 1}), rec(1, 0, 1, 1, {0, 1}), rec(1, 0, 2, 1, {0, 2}),
                      rec(1, 0, 3, 1, {0, 2})});
  Heatmap h = coactivation_heatmap(ts, 1, 1, 2);
  EXPECT_FALSE(h.truncated);
  // best off-diagonal: e0 -> 0.5, e1 -> 1, e2 -> 1; top two by score then id are 1 and 2
  EXPECT_EQ(h.experts, (std::vector<std::size_t>{1, 2}));
  Heatmap all = coactivation_heatmap(ts, 1, 1, 3);
  EXPECT_EQ(all.experts, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(all.score[0], (std::vector<double>{1, 0.5, 0.5}));
  EXPECT_EQ(all.score[1], (std::vector<double>{1, 1, 0}));
  // rows/cols {0, 1} form [[1, 0.5], [1, 1]]
  Heatmap pair = coactivation_heatmap(make({rec(1, 0, 0, 1, {0, 1}), rec(1, 0, 1, 1, {0, 1}), rec(1, 0, 2, 1, {0, 3}),
                                            rec(1, 0, 3, 1, {0, 3})}),
                                       1, 1, 16);
  EXPECT_EQ(pair.experts, (std::vector<std::size_t>{0, 1, 3}));
  EXPECT_EQ(pair.score[0][0], 1.0);
  EXPECT_EQ(pair.score[0][1], 0.5);
  EXPECT_EQ(pair.score[1][0], 1.0);
  EXPECT_EQ(pair.score[1][1], 1.0);
}

TEST(Coactivation, HeatmapCsvRoundTrip) {
  auto rs = testing::random_traces({}, 3);
  TraceSet ts = make(rs);
  Heatmap h = coactivation_heatmap(ts, 2, 20, 16);
  EXPECT_EQ(h.experts.size(), 16u);
  fs::path f = fs::temp_directory_path() / "moelab_heatmap.csv";
  write_heatmap_csv(f, h);
  Heatmap back = read_heatmap_csv(f);
  EXPECT_EQ(back.experts, h.experts);
  EXPECT_EQ(back.score, h.score);
  for (std::size_t r = 0; r < h.experts.size(); ++r) {
    EXPECT_EQ(h.score[r][r], 1.0);
    for (double v : h.score[r]) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  fs::remove(f);
}

TEST(Saturation, HandExamples) {
  auto g4 = std::vector<double>{0.4, 0.3, 0.2, 0.1};
  TraceSet ts = make({
      rec(1, 0, 0, 5, {0, 1, 2, 3}, g4), rec(1, 0, 1, 6, {0, 1, 2, 3}, g4),
      rec(9, 0, 0, 5, {0, 1, 8, 9}, g4), rec(9, 0, 1, 6, {0, 1, 2, 9}, g4),
      rec(4, 0, 0, 5, {4, 5, 6, 7}, g4), rec(4, 0, 1, 6, {4, 5, 6, 7}, g4),
  });
  EXPECT_DOUBLE_EQ(saturation(ts, 1, 1, 9, 4), 0.625);
  EXPECT_DOUBLE_EQ(saturation(ts, 1, 4, 9, 4), 0.0);
  for (std::size_t k : {1u, 2u, 4u}) EXPECT_EQ(saturation(ts, 1, 9, 9, k), 1.0);
  EXPECT_THROW(saturation(ts, 1, 1, 9, 8), ContractError);
}

TEST(Saturation, UsesGateOrderNotListOrder) {
  TraceSet ts = make({rec(1, 0, 0, 5, {3, 4}, {0.1, 0.6}), rec(2, 0, 0, 5, {4, 7}, {0.9, 0.05})});
  EXPECT_EQ(saturation(ts, 1, 1, 2, 1), 1.0);
}

TEST(Saturation, TokenSetMismatchIsContractError) {
  TraceSet a = make({rec(1, 0, 0, 5, {0}), rec(2, 0, 0, 6, {0})});
  EXPECT_THROW(saturation(a, 1, 1, 2, 1), ContractError);
  TraceSet b = make({rec(1, 0, 0, 5, {0}), rec(1, 0, 1, 5, {0}), rec(2, 0, 0, 5, {0})});
  EXPECT_THROW(saturation(b, 1, 1, 2, 1), ContractError);
}

TEST(Saturation, MonotoneInSharedExperts) {
  auto g = std::vector<double>{0.4, 0.3, 0.2, 0.1};
  TraceSet before = make({rec(1, 0, 0, 5, {0, 1, 2, 3}, g), rec(2, 0, 0, 5, {0, 5, 6, 7}, g)});
  TraceSet after = make({rec(1, 0, 0, 5, {0, 1, 2, 3}, g), rec(2, 0, 0, 5, {0, 1, 6, 7}, g)});
  EXPECT_GE(saturation(after, 1, 1, 2, 4), saturation(before, 1, 1, 2, 4));
}

class OracleEquivalence : public ::testing::TestWithParam<int> {};

TEST_P(OracleEquivalence, MetricsEqualBruteForceRecount) {
  testing::TraceSpec spec;
  spec.n_experts = 10 + GetParam() % 7;
  spec.vocab = 3 + GetParam() % 9;
  auto rs = testing::random_traces(spec, 100 + GetParam());
  ASSERT_LE(rs.size(), 1000u);
  TraceSet ts = make(rs);
  for (std::size_t layer : spec.layers) {
    for (std::uint64_t step : spec.steps) {
      std::set<TokenId> present;
      for (const auto& r : ts.records(step, layer)) present.insert(r.token);
      for (TokenId t : present) {
        double total = 0;
        for (std::size_t e = 0; e < spec.n_experts; ++e) {
          const double s = specialization(ts, layer, step, t, e);
          EXPECT_EQ(s, spec_bf(rs, layer, step, t, e));
          total += s * static_cast<double>(ts.token_frequency(step, layer).at(t));
        }
        EXPECT_EQ(total, static_cast<double>(spec.width * ts.token_frequency(step, layer).at(t)));
      }
      std::set<std::size_t> active;
      for (const auto& r : ts.records(step, layer)) active.insert(r.experts.begin(), r.experts.end());
      for (std::size_t i : active)
        for (std::size_t j = 0; j < spec.n_experts; ++j) EXPECT_EQ(coactivation(ts, layer, step, i, j), coact_bf(rs, layer, step, i, j));
      for (std::size_t k : {1u, 2u, 4u, 8u}) {
        EXPECT_EQ(saturation(ts, layer, step, 30, k), sat_bf(rs, layer, step, 30, k));
        EXPECT_EQ(saturation(ts, layer, 30, 30, k), 1.0);
      }
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, OracleEquivalence, ::testing::Range(0, 8));

TEST(TraceSet, LoadsDirectoriesAndReportsLineNumbers) {
  fs::path dir = fs::temp_directory_path() / "moelab_traceset";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto rs = testing::random_traces({}, 4);
  std::vector<RouteRecord> s10, s20;
  for (const auto& r : rs) (r.step == 10 ? s10 : s20).push_back(r);
  write_trace_file(dir / "step_000010.jsonl", s10);
  write_trace_file(dir / "step_000020.jsonl", s20);
  TraceSet ts = TraceSet::load(dir);
  EXPECT_EQ(ts.steps(), (std::vector<std::uint64_t>{10, 20, 30}));
  EXPECT_EQ(ts.layers(), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(ts.size(), rs.size());
  EXPECT_EQ(ts.k_routed(), 8u);
  std::size_t freq = 0;
  for (auto [t, n] : ts.token_frequency(10, 1)) freq += n;
  EXPECT_EQ(freq, ts.records(10, 1).size());
  try {
    ts.records(40, 1);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("(2, 30)"), std::string::npos) << e.what();
  }
  {
    std::ofstream bad(dir / "step_000040.jsonl");
    bad << to_json(rs[0]).dump() << "\n{\"step\": 1\n";
  }
  try {
    TraceSet::load(dir);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 2u);
  }
  fs::remove_all(dir);
}

TEST(TraceSet, RejectsMixedWidths) {
  TraceSet ts;
  ts.add(rec(1, 0, 0, 1, {0, 1}));
  EXPECT_THROW(ts.add(rec(1, 0, 1, 1, {0})), ContractError);
}

TEST(Series, RowsMatchPointCallsAndGapsAreReported) {
  auto rs = testing::random_traces({}, 9);
  TraceSet ts = make(rs);
  SeriesTable sat = series(Metric::kSaturation, ts, {1, 2}, {10, 20, 25, 30});
  EXPECT_EQ(sat.gaps.size(), 2u);
  for (const auto& g : sat.gaps) EXPECT_EQ(g.step, 25u);
  std::size_t finals = 0;
  for (const auto& r : sat.rows) {
    const std::size_t k = std::stoul(r.label.substr(2));
    EXPECT_EQ(r.value, saturation(ts, r.layer, r.step, 30, k));
    if (r.step == 30) {
      EXPECT_EQ(r.value, 1.0);
      ++finals;
    }
  }
  EXPECT_EQ(finals, 8u);

  SeriesTable one = series(Metric::kSaturation, ts, {1}, {30});
  EXPECT_EQ(one.rows.size(), 4u);

  SeriesTable sp = series(Metric::kSpecialization, ts, {1}, {10, 30});
  EXPECT_FALSE(sp.rows.empty());
  for (const auto& r : sp.rows) {
    const auto slash = r.label.find('/');
    const std::size_t e = std::stoul(r.label.substr(1, slash - 1));
    const TokenId t = static_cast<TokenId>(std::stoul(r.label.substr(slash + 2)));
    EXPECT_EQ(r.value, specialization(ts, 1, r.step, t, e));
  }
  SeriesTable co = series(Metric::kCoactivation, ts, {2}, {20, 30});
  EXPECT_FALSE(co.rows.empty());
  for (const auto& r : co.rows) EXPECT_GE(r.value, 0.0);
  SeriesTable missing = series(Metric::kCoactivation, ts, {3}, {20, 30});
  EXPECT_TRUE(missing.rows.empty());
  EXPECT_EQ(missing.gaps.size(), 2u);
}

}  // namespace
}  // namespace moelab
