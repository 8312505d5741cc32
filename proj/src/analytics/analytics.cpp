// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "moelab/analytics.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "moelab/errors.hpp"
#include "moelab/format.hpp"

namespace moelab {

namespace fs = std::filesystem;

namespace {

bool selects(const RouteRecord& r, std::size_t e) {
  return std::find(r.experts.begin(), r.experts.end(), e) != r.experts.end();
}

std::string at(std::size_t layer, std::uint64_t step) {
  return "layer " + std::to_string(layer) + " step " + std::to_string(step);
}

void load_file(TraceSet& ts, const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open trace file " + file.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      ts.add(route_record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(file.string() + ":" + std::to_string(lineno) + ": " + e.what(), lineno);
    } catch (const ContractError& e) {
      throw ParseError(file.string() + ":" + std::to_string(lineno) + ": " + e.what(), lineno);
    }
  }
}

/// Experts by descending gate, ties by listing order.
std::vector<std::size_t> top_by_gate(const RouteRecord& r, std::size_t k) {
  std::vector<std::size_t> idx(r.experts.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return r.gates[a] > r.gates[b]; });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(r.experts[idx[i]]);
  return out;
}

double best_off_diagonal(const TraceSet& ts, std::size_t layer, std::uint64_t step, std::size_t i,
                         const std::set<std::size_t>& active) {
  double best = 0.0;
  for (std::size_t j : active)
    if (j != i) best = std::max(best, coactivation(ts, layer, step, i, j));
  return best;
}

std::set<std::size_t> active_experts(const std::vector<RouteRecord>& recs) {
  std::set<std::size_t> s;
  for (const auto& r : recs) s.insert(r.experts.begin(), r.experts.end());
  return s;
}

}  // namespace

TraceSet TraceSet::load(const fs::path& path) {
  TraceSet ts;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path))
      if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) load_file(ts, f);
  } else {
    load_file(ts, path);
  }
  return ts;
}

void TraceSet::add(RouteRecord r) {
  if (r.experts.size() != r.gates.size()) throw ContractError("trace record: experts and gates differ in length");
  if (size() == 0) {
    k_routed_ = r.experts.size();
  } else if (r.experts.size() != k_routed_) {
    throw ContractError("trace record lists " + std::to_string(r.experts.size()) + " experts, expected " +
                        std::to_string(k_routed_));
  }
  by_key_[{r.step, r.layer}].push_back(std::move(r));
}

bool TraceSet::contains(std::uint64_t step, std::size_t layer) const { return by_key_.count({step, layer}) != 0; }

const std::vector<RouteRecord>& TraceSet::records(std::uint64_t step, std::size_t layer) const {
  auto it = by_key_.find({step, layer});
  if (it == by_key_.end()) {
    std::string avail;
    for (auto [l, s] : available()) avail += (avail.empty() ? "" : ", ") + std::string("(") + std::to_string(l) +
                                             ", " + std::to_string(s) + ")";
    throw ContractError("no trace for " + at(layer, step) + "; available (layer, step): " +
                        (avail.empty() ? "none" : avail));
  }
  return it->second;
}

std::vector<std::uint64_t> TraceSet::steps() const {
  std::set<std::uint64_t> s;
  for (const auto& [k, v] : by_key_) s.insert(k.first);
  return {s.begin(), s.end()};
}

std::vector<std::size_t> TraceSet::layers() const {
  std::set<std::size_t> s;
  for (const auto& [k, v] : by_key_) s.insert(k.second);
  return {s.begin(), s.end()};
}

std::vector<std::pair<std::size_t, std::uint64_t>> TraceSet::available() const {
  std::vector<std::pair<std::size_t, std::uint64_t>> out;
  for (const auto& [k, v] : by_key_) out.emplace_back(k.second, k.first);
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t TraceSet::size() const {
  std::size_t n = 0;
  for (const auto& [k, v] : by_key_) n += v.size();
  return n;
}

std::map<TokenId, std::size_t> TraceSet::token_frequency(std::uint64_t step, std::size_t layer) const {
  std::map<TokenId, std::size_t> f;
  for (const auto& r : records(step, layer)) ++f[r.token];
  return f;
}

double specialization(const TraceSet& ts, std::size_t layer, std::uint64_t step, TokenId token,
                      std::size_t expert) {
  std::size_t occ = 0, hit = 0;
  for (const auto& r : ts.records(step, layer)) {
    if (r.token != token) continue;
    ++occ;
    hit += selects(r, expert);
  }
  if (occ == 0) {
    throw UndefinedInputError("specialization: token " + std::to_string(token) + " does not occur at " +
                              at(layer, step));
  }
  return static_cast<double>(hit) / static_cast<double>(occ);
}

std::vector<TokenId> top_specialized_tokens(const TraceSet& ts, std::size_t layer, std::uint64_t step,
                                            std::size_t expert, std::size_t n) {
  if (n == 0) throw ContractError("top_specialized_tokens: n must be positive");
  std::map<TokenId, std::pair<std::size_t, std::size_t>> counts;  // token -> (hits, occurrences)
  for (const auto& r : ts.records(step, layer)) {
    auto& c = counts[r.token];
    ++c.second;
    c.first += selects(r, expert);
  }
  std::vector<std::pair<double, TokenId>> ranked;
  for (const auto& [tok, c] : counts)
    if (c.first > 0) ranked.emplace_back(static_cast<double>(c.first) / static_cast<double>(c.second), tok);
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < ranked.size() && i < n; ++i) out.push_back(ranked[i].second);
  return out;
}

double coactivation(const TraceSet& ts, std::size_t layer, std::uint64_t step, std::size_t i, std::size_t j) {
  std::size_t with_i = 0, both = 0;
  for (const auto& r : ts.records(step, layer)) {
    if (!selects(r, i)) continue;
    ++with_i;
    both += selects(r, j);
  }
  if (with_i == 0) {
    throw UndefinedInputError("coactivation: expert " + std::to_string(i) + " is never activated at " +
                              at(layer, step));
  }
  return static_cast<double>(both) / static_cast<double>(with_i);
}

Heatmap coactivation_heatmap(const TraceSet& ts, std::size_t layer, std::uint64_t step, std::size_t n) {
  if (n == 0) throw ContractError("coactivation_heatmap: n must be positive");
  const std::set<std::size_t> active = active_experts(ts.records(step, layer));
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t i : active) ranked.emplace_back(best_off_diagonal(ts, layer, step, i, active), i);
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  Heatmap h;
  h.truncated = active.size() < n;
  for (std::size_t r = 0; r < ranked.size() && r < n; ++r) h.experts.push_back(ranked[r].second);
  std::sort(h.experts.begin(), h.experts.end());
  for (std::size_t i : h.experts) {
    std::vector<double> row;
    for (std::size_t j : h.experts) row.push_back(coactivation(ts, layer, step, i, j));
    h.score.push_back(std::move(row));
  }
  return h;
}

double saturation(const TraceSet& ts, std::size_t layer, std::uint64_t step, std::uint64_t reference,
                  std::size_t k_eval) {
  if (k_eval == 0) throw ContractError("saturation: k_eval must be positive");
  if (k_eval > ts.k_routed()) {
    throw ContractError("saturation: k_eval " + std::to_string(k_eval) + " exceeds the traced width " +
                        std::to_string(ts.k_routed()));
  }
  const auto& a = ts.records(step, layer);
  const auto& b = ts.records(reference, layer);
  std::map<std::pair<std::size_t, std::size_t>, const RouteRecord*> ref;
  for (const auto& r : b) ref[{r.seq, r.pos}] = &r;
  if (a.size() != b.size() || ref.size() != b.size()) {
    throw ContractError("saturation: " + at(layer, step) + " and " + at(layer, reference) +
                        " trace different token sets");
  }
  if (a.empty()) throw ContractError("saturation: no records at " + at(layer, step));
  std::size_t common = 0;
  for (const auto& r : a) {
    auto it = ref.find({r.seq, r.pos});
    if (it == ref.end() || it->second->token != r.token) {
      throw ContractError("saturation: token at seq " + std::to_string(r.seq) + " pos " + std::to_string(r.pos) +
                          " differs between steps " + std::to_string(step) + " and " + std::to_string(reference));
    }
    auto x = top_by_gate(r, k_eval), y = top_by_gate(*it->second, k_eval);
    for (std::size_t e : x) common += std::find(y.begin(), y.end(), e) != y.end();
  }
  // one rounding: total overlap over total slots
  return static_cast<double>(common) / static_cast<double>(k_eval * a.size());
}

SeriesTable series(Metric metric, const TraceSet& ts, const std::vector<std::size_t>& layers,
                   const std::vector<std::uint64_t>& steps, const SeriesOptions& opt) {
  if (steps.empty() || layers.empty()) throw ContractError("series: no layers or steps requested");
  SeriesTable t;
  const std::uint64_t final_step = steps.back();
  for (std::size_t layer : layers) {
    if (!ts.contains(final_step, layer)) {
      for (std::uint64_t s : steps) t.gaps.push_back({layer, s, "reference step " + std::to_string(final_step) + " missing"});
      continue;
    }
    // labels are fixed from the reference step
    std::vector<std::pair<std::size_t, TokenId>> pairs;
    std::vector<std::size_t> experts;
    if (metric == Metric::kSpecialization) {
      for (std::size_t e : active_experts(ts.records(final_step, layer)))
        for (TokenId tok : top_specialized_tokens(ts, layer, final_step, e, opt.top_tokens)) pairs.emplace_back(e, tok);
    } else if (metric == Metric::kCoactivation) {
      experts = coactivation_heatmap(ts, layer, final_step).experts;
    }
    for (std::uint64_t s : steps) {
      if (!ts.contains(s, layer)) {
        t.gaps.push_back({layer, s, "no trace"});
        continue;
      }
      switch (metric) {
        case Metric::kSpecialization:
          for (auto [e, tok] : pairs) {
            const std::string label = "e" + std::to_string(e) + "/t" + std::to_string(tok);
            try {
              t.rows.push_back({layer, s, label, specialization(ts, layer, s, tok, e)});
            } catch (const UndefinedInputError&) {
              t.gaps.push_back({layer, s, label + ": token absent"});
            }
          }
          break;
        case Metric::kCoactivation: {
          const std::set<std::size_t> active = active_experts(ts.records(s, layer));
          for (std::size_t e : experts) {
            const std::string label = "e" + std::to_string(e);
            if (!active.count(e)) {
              t.gaps.push_back({layer, s, label + ": expert inactive"});
              continue;
            }
            t.rows.push_back({layer, s, label, best_off_diagonal(ts, layer, s, e, active)});
          }
          break;
        }
        case Metric::kSaturation:
          for (std::size_t k : opt.k_eval) {
            if (k > ts.k_routed()) continue;
            t.rows.push_back({layer, s, "k=" + std::to_string(k), saturation(ts, layer, s, final_step, k)});
          }
          break;
      }
    }
  }
  return t;
}

void write_heatmap_csv(const fs::path& file, const Heatmap& h) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << "row_expert,col_expert,score\n";
  for (std::size_t r = 0; r < h.experts.size(); ++r)
    for (std::size_t c = 0; c < h.experts.size(); ++c)
      out << h.experts[r] << ',' << h.experts[c] << ',' << format_double(h.score[r][c]) << '\n';
  if (!out) throw IoError("write failed for " + file.string());
}

Heatmap read_heatmap_csv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file.string());
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || line != "row_expert,col_expert,score") {
    throw ParseError(file.string() + ":1: expected header row_expert,col_expert,score", 1);
  }
  std::vector<std::tuple<std::size_t, std::size_t, double>> cells;
  std::set<std::size_t> labels;
  while (std::getline(in, line)) {
    ++lineno;
    std::stringstream ss(line);
    std::string a, b, c;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c)) {
      throw ParseError(file.string() + ":" + std::to_string(lineno) + ": expected 3 fields", lineno);
    }
    try {
      cells.emplace_back(std::stoul(a), std::stoul(b), std::stod(c));
    } catch (const std::exception&) {
      throw ParseError(file.string() + ":" + std::to_string(lineno) + ": bad number", lineno);
    }
    labels.insert(std::get<0>(cells.back()));
  }
  Heatmap h;
  h.experts.assign(labels.begin(), labels.end());
  const std::size_t n = h.experts.size();
  h.score.assign(n, std::vector<double>(n, 0.0));
  if (cells.size() != n * n) throw ParseError(file.string() + ": matrix is not square", lineno);
  auto pos = [&](std::size_t e) {
    return static_cast<std::size_t>(std::lower_bound(h.experts.begin(), h.experts.end(), e) - h.experts.begin());
  };
  for (auto [r, c, v] : cells) h.score[pos(r)][pos(c)] = v;
  return h;
}

void write_series_csv(const fs::path& file, const SeriesTable& t) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << "layer,step,label,value\n";
  for (const auto& r : t.rows) out << r.layer << ',' << r.step << ',' << r.label << ',' << format_double(r.value) << '\n';
  if (!out) throw IoError("write failed for " + file.string());
}

}  // namespace moelab
