// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "moelab/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "moelab/analytics.hpp"
#include "moelab/corpus.hpp"
#include "moelab/errors.hpp"
#include "moelab/format.hpp"

namespace moelab {

namespace fs = std::filesystem;

namespace {

// Bad invocation that CLI11 cannot see (missing file, bad selector).
class UsageError : public Error {
 public:
  using Error::Error;
};

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(file.parent_path(), ec);
    if (ec) throw IoError("cannot create " + file.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << text;
  if (!out) throw IoError("write failed for " + file.string());
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

nlohmann::json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw UsageError("cannot open " + file.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ContractError(file.string() + ": " + e.what());
  }
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw UsageError(std::string(what) + " not found: " + p.string());
}

std::size_t as_size(const std::string& field, const nlohmann::json& v) {
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw ContractError(field + ": expected a non-negative integer");
  return v.get<std::size_t>();
}

double as_number(const std::string& field, const nlohmann::json& v) {
  if (!v.is_number()) throw ContractError(field + ": expected a number");
  return v.get<double>();
}

std::vector<double> as_numbers(const std::string& field, const nlohmann::json& v) {
  if (!v.is_array()) throw ContractError(field + ": expected an array of numbers");
  std::vector<double> out;
  for (const auto& x : v) out.push_back(as_number(field, x));
  return out;
}

AnalyticsSettings analytics_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ContractError("analytics: expected an object");
  AnalyticsSettings a;
  for (const auto& [key, v] : j.items()) {
    const std::string f = "analytics." + key;
    if (key == "heatmap_n") {
      a.heatmap_n = as_size(f, v);
    } else if (key == "top_tokens") {
      a.top_tokens = as_size(f, v);
    } else if (key == "k_eval") {
      if (!v.is_array()) throw ContractError(f + ": expected an array of integers");
      a.k_eval.clear();
      for (const auto& x : v) a.k_eval.push_back(as_size(f, x));
    } else {
      throw ContractError(f + ": unknown field");
    }
  }
  return a;
}

ScalingSettings scaling_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ContractError("scaling: expected an object");
  ScalingSettings s;
  for (const auto& [key, v] : j.items()) {
    const std::string f = "scaling." + key;
    if (key == "kappa") {
      s.kappa = as_number(f, v);
    } else if (key == "delta") {
      s.delta = as_number(f, v);
    } else if (key == "max_iterations") {
      s.max_iterations = as_size(f, v);
    } else if (key == "grid") {
      if (!v.is_object()) throw ContractError(f + ": expected an object");
      const std::map<std::string, std::vector<double> ParametricGrid::*> axes = {
          {"log_A", &ParametricGrid::log_A}, {"log_B", &ParametricGrid::log_B}, {"alpha", &ParametricGrid::alpha},
          {"beta", &ParametricGrid::beta},   {"L0", &ParametricGrid::L0}};
      for (const auto& [axis, values] : v.items()) {
        auto it = axes.find(axis);
        if (it == axes.end()) throw ContractError(f + "." + axis + ": unknown field");
        s.grid.*(it->second) = as_numbers(f + "." + axis, values);
      }
    } else {
      throw ContractError(f + ": unknown field");
    }
  }
  if (!(s.kappa > 0)) throw ContractError("scaling.kappa: must be positive");
  if (!(s.delta > 0)) throw ContractError("scaling.delta: must be positive");
  return s;
}

void validate(const AnalyticsSettings& a) {
  if (a.heatmap_n == 0) throw ContractError("analytics.heatmap_n: must be positive");
  if (a.top_tokens == 0) throw ContractError("analytics.top_tokens: must be positive");
  for (std::size_t k : a.k_eval)
    if (k == 0) throw ContractError("analytics.k_eval: entries must be positive");
}

// Reads manifest.json of a run directory.
nlohmann::json load_manifest(const fs::path& run) {
  const fs::path m = run / "manifest.json";
  if (!fs::is_regular_file(m)) throw UsageError("not a run directory (no manifest.json): " + run.string());
  return read_json(m);
}

std::string label_pairs(const TraceSet& ts) {
  std::string s;
  for (const auto& [layer, step] : ts.available()) {
    if (!s.empty()) s += ", ";
    s += "(" + std::to_string(layer) + ", " + std::to_string(step) + ")";
  }
  return s;
}

// Configuration shared by every command: --config plus override flags.
struct Common {
  std::string config_path;
};

RunConfig base_config(const Common& c) {
  if (c.config_path.empty()) return RunConfig{};
  require_file(c.config_path, "config file");
  return load_run_config(c.config_path);
}

template <class T>
void override_if(const CLI::Option* opt, T& target, const T& value) {
  if (opt->count() > 0) target = value;
}

}  // namespace

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json grid = {{"log_A", c.scaling.grid.log_A},
                         {"log_B", c.scaling.grid.log_B},
                         {"alpha", c.scaling.grid.alpha},
                         {"beta", c.scaling.grid.beta},
                         {"L0", c.scaling.grid.L0}};
  return {{"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"analytics",
           {{"heatmap_n", c.analytics.heatmap_n},
            {"top_tokens", c.analytics.top_tokens},
            {"k_eval", c.analytics.k_eval}}},
          {"scaling",
           {{"kappa", c.scaling.kappa},
            {"delta", c.scaling.delta},
            {"max_iterations", c.scaling.max_iterations},
            {"grid", grid}}}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ContractError("config: expected a JSON object");
  RunConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "model") {
      c.model = model_config_from_json(v);
    } else if (key == "train") {
      c.train = train_config_from_json(v);
    } else if (key == "analytics") {
      c.analytics = analytics_from_json(v);
    } else if (key == "scaling") {
      c.scaling = scaling_from_json(v);
    } else {
      throw ContractError(key + ": unknown section");
    }
  }
  return c;
}

RunConfig load_run_config(const fs::path& file) { return run_config_from_json(read_json(file)); }

RunLock::RunLock(const fs::path& run_dir) : file_(run_dir / "run.lock") {
  std::error_code ec;
  fs::create_directories(run_dir, ec);
  if (ec) throw IoError("cannot create run directory " + run_dir.string() + ": " + ec.message());
  const int fd = ::open(file_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST)
      throw IoError("run directory is locked by another command (remove " + file_.string() + " if stale)");
    throw IoError("cannot create " + file_.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(file_, ec);
}

namespace {

int cmd_train(const Common& common, const std::string& corpus_path, const std::string& out_dir,
              const std::function<void(RunConfig&)>& apply_flags, std::ostream& out) {
  RunConfig cfg = base_config(common);
  apply_flags(cfg);
  cfg.model.validate();
  cfg.train.validate();
  require_file(corpus_path, "corpus file");
  Corpus corpus = load_corpus(corpus_path);

  RunLock lock(out_dir);
  write_text(fs::path(out_dir) / "run_config.json", dump(to_json(cfg)));
  TrainResult r = train(cfg.model, cfg.train, corpus, out_dir);
  const StepLog& last = r.log.back();
  out << "trained " << last.step << " steps: ce " << format_double(last.ce) << ", lb " << format_double(last.lb)
      << ", " << r.checkpoint_steps.size() << " checkpoints in " << out_dir << "\n";
  return 0;
}

struct AnalyzeArgs {
  std::string run;
  std::string out;
  long long layer = -1;
  long long step = -1;
  std::vector<std::size_t> layers;
};

fs::path analysis_out(const AnalyzeArgs& a, const std::string& kind) {
  return a.out.empty() ? fs::path(a.run) / "analysis" / (kind + ".csv") : fs::path(a.out);
}

std::size_t pick_layer(const AnalyzeArgs& a, const nlohmann::json& manifest) {
  if (a.layer >= 0) return static_cast<std::size_t>(a.layer);
  const auto& moe = manifest.at("moe_layers");
  if (!moe.is_array() || moe.empty()) throw UsageError("run has no MoE layers");
  return moe.back().get<std::size_t>();
}

int cmd_analyze(const std::string& kind, const Common& common, const AnalyzeArgs& a,
                const std::function<void(RunConfig&)>& apply_flags, std::ostream& out) {
  RunConfig cfg = base_config(common);
  apply_flags(cfg);
  validate(cfg.analytics);
  const nlohmann::json manifest = load_manifest(a.run);
  const fs::path traces = fs::path(a.run) / "traces";
  if (!fs::is_directory(traces)) throw UsageError("run has no traces directory: " + traces.string());

  RunLock lock(a.run);
  TraceSet ts = TraceSet::load(traces);
  if (ts.size() == 0) throw UsageError("no trace records under " + traces.string());
  const std::vector<std::uint64_t> steps = ts.steps();
  const fs::path dest = analysis_out(a, kind);
  if (dest.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(dest.parent_path(), ec);
    if (ec) throw IoError("cannot create " + dest.parent_path().string() + ": " + ec.message());
  }

  if (kind == "coactivation") {
    const std::size_t layer = pick_layer(a, manifest);
    const std::uint64_t step = a.step >= 0 ? static_cast<std::uint64_t>(a.step) : steps.back();
    Heatmap h = coactivation_heatmap(ts, layer, step, cfg.analytics.heatmap_n);
    write_heatmap_csv(dest, h);
    double peak = -1;
    std::size_t pi = 0, pj = 0;
    for (std::size_t r = 0; r < h.experts.size(); ++r)
      for (std::size_t c = 0; c < h.experts.size(); ++c)
        if (r != c && h.score[r][c] > peak) {
          peak = h.score[r][c];
          pi = h.experts[r];
          pj = h.experts[c];
        }
    out << "coactivation layer " << layer << " step " << step << ": " << h.experts.size() << "x"
        << h.experts.size();
    if (peak >= 0) out << ", peak " << format_double(peak) << " (e" << pi << " -> e" << pj << ")";
    if (h.truncated) out << ", truncated: fewer than " << cfg.analytics.heatmap_n << " experts active";
    out << " -> " << dest.string() << "\n";
    return 0;
  }

  std::vector<std::size_t> layers = a.layers;
  if (layers.empty()) {
    if (kind == "specialization") {
      layers.push_back(pick_layer(a, manifest));
    } else {
      for (const auto& l : manifest.at("moe_layers")) layers.push_back(l.get<std::size_t>());
    }
  }
  for (std::size_t l : layers) {
    if (!ts.contains(steps.back(), l))
      throw ContractError("no trace for layer " + std::to_string(l) + "; available (layer, step): " +
                          label_pairs(ts));
  }
  SeriesOptions opt;
  opt.top_tokens = cfg.analytics.top_tokens;
  opt.k_eval = cfg.analytics.k_eval;
  const Metric metric = kind == "specialization" ? Metric::kSpecialization : Metric::kSaturation;
  SeriesTable t = series(metric, ts, layers, steps, opt);
  write_series_csv(dest, t);
  out << kind << ": " << t.rows.size() << " rows over " << steps.size() << " steps, reference step "
      << steps.back();
  if (kind == "saturation") {
    double low = 1.0;
    for (const auto& r : t.rows)
      if (r.label == "k=1") low = std::min(low, r.value);
    out << ", min k=1 value " << format_double(low);
  }
  if (!t.gaps.empty()) out << ", " << t.gaps.size() << " gaps";
  out << " -> " << dest.string() << "\n";
  return 0;
}

struct ScalingArgs {
  std::string in;
  std::string out_json;
  std::string out_csv;
};

void emit_json(const nlohmann::json& j, const std::string& path, const std::string& summary, std::ostream& out) {
  if (path.empty()) {
    out << dump(j);
  } else {
    write_text(path, dump(j));
    out << summary << " -> " << path << "\n";
  }
}

std::vector<ScalingPoint> load_points(const std::string& path, double kappa) {
  require_file(path, "scaling CSV");
  auto pts = read_scaling_csv(path);
  if (kappa != 6.0) {
    for (const auto& p : pts) validate(p, kappa);
  }
  return pts;
}

int cmd_isoflop(const Common& common, const ScalingArgs& a, std::ostream& out) {
  const RunConfig cfg = base_config(common);
  const auto pts = load_points(a.in, cfg.scaling.kappa);
  nlohmann::json budgets = nlohmann::json::array();
  std::vector<std::pair<double, double>> n_pairs, d_pairs;
  std::ostringstream csv;
  csv << "c_flops,n_active,loss,fitted_loss\n";
  for (const auto& group : group_by_budget(pts)) {
    IsoflopFit f = fit_isoflop_parabola(group);
    nlohmann::json j = to_json(f);
    const double d_opt = tokens_for_budget(f.c_flops, f.n_opt, cfg.scaling.kappa);
    j["d_opt"] = d_opt;
    budgets.push_back(j);
    n_pairs.push_back({f.c_flops, f.n_opt});
    d_pairs.push_back({f.c_flops, d_opt});
    for (const auto& p : group) {
      const double x = std::log10(p.n_active);
      csv << format_double(p.c_flops) << ',' << format_double(p.n_active) << ',' << format_double(p.loss) << ','
          << format_double(f.a * x * x + f.b * x + f.c) << '\n';
    }
  }
  nlohmann::json result = {{"budgets", budgets}, {"power_law_n", nullptr}, {"power_law_d", nullptr}};
  std::string summary = "isoflop: " + std::to_string(n_pairs.size()) + " budgets";
  if (n_pairs.size() >= 2) {
    PowerLaw pn = fit_power_law(n_pairs);
    result["power_law_n"] = to_json(pn);
    result["power_law_d"] = to_json(fit_power_law(d_pairs));
    summary += ", N* ~ C^" + format_double(pn.exponent);
  }
  if (!a.out_csv.empty()) write_text(a.out_csv, csv.str());
  emit_json(result, a.out_json, summary, out);
  return 0;
}

int cmd_parametric(const Common& common, const ScalingArgs& a, std::ostream& out) {
  const RunConfig cfg = base_config(common);
  const auto pts = load_points(a.in, cfg.scaling.kappa);
  FitOptions opt;
  opt.delta = cfg.scaling.delta;
  opt.max_iterations = cfg.scaling.max_iterations;
  ParametricFit fit = fit_parametric(pts, cfg.scaling.grid, opt);
  nlohmann::json optima = nlohmann::json::array();
  for (const auto& group : group_by_budget(pts)) {
    Allocation al = optimal_allocation(fit, group.front().c_flops, cfg.scaling.kappa);
    optima.push_back({{"c_flops", group.front().c_flops}, {"n_opt", al.n_opt}, {"d_opt", al.d_opt}});
  }
  const double s = fit.alpha + fit.beta;
  nlohmann::json result = {{"fit", to_json(fit)},
                           {"delta", cfg.scaling.delta},
                           {"n_points", pts.size()},
                           {"exponents", {{"a", fit.beta / s}, {"b", fit.alpha / s}}},
                           {"optima", optima}};
  emit_json(result, a.out_json,
            "parametric: alpha " + format_double(fit.alpha) + ", beta " + format_double(fit.beta) + ", L0 " +
                format_double(fit.L0),
            out);
  return 0;
}

struct OptimalArgs {
  double flops = 0;
  std::string fit_path;
  std::string out_json;
};

int cmd_optimal(const Common& common, const OptimalArgs& a, const std::function<void(ParametricFit&)>& apply_flags,
                std::ostream& out) {
  const RunConfig cfg = base_config(common);
  if (!(a.flops > 0)) throw UsageError("--flops must be positive");
  ParametricFit fit = reference_fit();
  if (!a.fit_path.empty()) {
    require_file(a.fit_path, "fit file");
    nlohmann::json j = read_json(a.fit_path);
    fit = parametric_fit_from_json(j.contains("fit") ? j.at("fit") : j);
  }
  apply_flags(fit);
  if (!(fit.A > 0) || !(fit.B > 0) || !(fit.L0 > 0) || !(fit.alpha > 0) || !(fit.beta > 0))
    throw ContractError("A, B, alpha, beta and L0 must be positive");
  const double kappa = cfg.scaling.kappa;
  Allocation al = optimal_allocation(fit, a.flops, kappa);
  Allocation num = optimal_allocation_numeric(fit, a.flops, kappa);
  nlohmann::json result = {
      {"c_flops", a.flops},      {"kappa", kappa},
      {"n_opt", al.n_opt},       {"d_opt", al.d_opt},
      {"n_opt_numeric", num.n_opt}, {"d_opt_numeric", num.d_opt},
      {"exponent_n", allocation_exponent(fit)},
      {"fit", {{"A", fit.A}, {"B", fit.B}, {"alpha", fit.alpha}, {"beta", fit.beta}, {"L0", fit.L0}}}};
  emit_json(result, a.out_json, "optimal: N* " + format_double(al.n_opt) + ", D* " + format_double(al.d_opt), out);
  return 0;
}

struct SynthArgs {
  std::string out;
  std::vector<double> budgets = {1e18, 6e18, 3e19, 2.4e20};
  std::size_t per_budget = 6;
  double noise = 0.0;
  double half_span = 0.6;
  std::uint64_t seed = 0;
};

int cmd_scaling_synth(const Common& common, const SynthArgs& a, std::ostream& out) {
  const RunConfig cfg = base_config(common);
  if (a.noise < 0) throw UsageError("--noise must be non-negative");
  for (double c : a.budgets)
    if (!(c > 0)) throw UsageError("--budgets must be positive");
  auto pts = synthetic_scaling_points(reference_fit(), a.budgets, a.per_budget, a.noise, a.seed, a.half_span,
                                      cfg.scaling.kappa);
  write_scaling_csv(a.out, pts);
  out << "wrote " << pts.size() << " points -> " << a.out << "\n";
  return 0;
}

struct CorpusArgs {
  std::string out;
  std::uint32_t vocab = 64;
  std::size_t tokens = 20000;
  std::uint64_t seed = 0;
};

int cmd_corpus_synth(const CorpusArgs& a, std::ostream& out) {
  if (a.vocab < 2) throw UsageError("--vocab must be at least 2");
  Corpus c = synthetic_markov_corpus(a.vocab, a.tokens, a.seed);
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  save_corpus(a.out, c);
  out << "wrote " << c.tokens.size() << " tokens (vocab " << c.vocab_size << ") -> " << a.out << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mixture-of-experts training, routing analytics and scaling-law fitting", "moelab"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough(false);

  Common common;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON run config (sections model, train, analytics, scaling)");
  };

  // train
  const RunConfig defaults;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model and write a run directory");
  add_config(train_cmd);
  std::string corpus_path, out_dir;
  train_cmd->add_option("--corpus", corpus_path, "Pre-tokenized corpus file")->required();
  train_cmd->add_option("--out", out_dir, "Run directory")->required();
  std::string preset_name;
  std::uint64_t seed = defaults.train.seed, steps = defaults.train.total_steps, cadence = defaults.train.trace_cadence;
  std::size_t batch = defaults.train.batch_size, seq = defaults.train.seq_len, ckpts = defaults.train.checkpoint_count,
              val = defaults.train.val_sequences;
  double max_lr = defaults.train.max_lr, min_lr = defaults.train.min_lr;
  auto* o_preset = train_cmd->add_option("--preset", preset_name, "Model card name, e.g. 38M-100M (default: toy model)");
  auto* o_seed = train_cmd->add_option("--seed", seed, "Random seed");
  auto* o_steps = train_cmd->add_option("--steps", steps, "Total optimizer steps");
  auto* o_batch = train_cmd->add_option("--batch-size", batch, "Sequences per step");
  auto* o_seq = train_cmd->add_option("--seq-len", seq, "Tokens per sequence");
  auto* o_max_lr = train_cmd->add_option("--max-lr", max_lr, "Peak learning rate");
  auto* o_min_lr = train_cmd->add_option("--min-lr", min_lr, "Final learning rate");
  auto* o_ckpts = train_cmd->add_option("--checkpoints", ckpts, "Number of evenly spaced checkpoints");
  auto* o_cadence = train_cmd->add_option("--trace-cadence", cadence, "Extra routing-trace interval in steps (0: checkpoints only)");
  auto* o_val = train_cmd->add_option("--val-sequences", val, "Held-out sequences taken from the corpus tail");
  auto train_flags = [&](RunConfig& c) {
    if (o_preset->count() > 0) c.model = preset(preset_name);
    override_if(o_seed, c.train.seed, seed);
    override_if(o_steps, c.train.total_steps, steps);
    override_if(o_batch, c.train.batch_size, batch);
    override_if(o_seq, c.train.seq_len, seq);
    override_if(o_max_lr, c.train.max_lr, max_lr);
    override_if(o_min_lr, c.train.min_lr, min_lr);
    override_if(o_ckpts, c.train.checkpoint_count, ckpts);
    override_if(o_cadence, c.train.trace_cadence, cadence);
    override_if(o_val, c.train.val_sequences, val);
  };

  // analyze
  CLI::App* analyze_cmd = app.add_subcommand("analyze", "Routing analytics over a run's traces");
  analyze_cmd->require_subcommand(1);
  AnalyzeArgs an;
  std::size_t heatmap_n = defaults.analytics.heatmap_n, top_tokens = defaults.analytics.top_tokens;
  std::vector<std::size_t> k_eval = defaults.analytics.k_eval;
  CLI::Option* o_n = nullptr;
  CLI::Option* o_top = nullptr;
  CLI::Option* o_k = nullptr;
  std::string analyze_kind;
  for (const char* kind : {"specialization", "coactivation", "saturation"}) {
    const std::string k = kind;
    const char* help = k == "specialization" ? "Token specialization trajectories (series CSV)"
                       : k == "coactivation" ? "Expert co-activation heatmap (heatmap CSV)"
                                             : "Router saturation against the final step (series CSV)";
    CLI::App* sub = analyze_cmd->add_subcommand(k, help);
    add_config(sub);
    sub->add_option("--run", an.run, "Run directory written by train")->required();
    sub->add_option("--out", an.out, "Output CSV (default: <run>/analysis/<kind>.csv)");
    if (k == "saturation") {
      sub->add_option("--layer", an.layers, "MoE layers (default: all)");
      o_k = sub->add_option("--k", k_eval, "k values to evaluate");
    } else {
      sub->add_option("--layer", an.layer, "Layer (default: last MoE layer)");
    }
    if (k == "coactivation") {
      sub->add_option("--step", an.step, "Trace step (default: final)");
      o_n = sub->add_option("--n", heatmap_n, "Number of experts shown");
    }
    if (k == "specialization") o_top = sub->add_option("--top-tokens", top_tokens, "Tokens tracked per expert");
    sub->callback([&analyze_kind, k] { analyze_kind = k; });
  }
  auto analyze_flags = [&](RunConfig& c) {
    if (o_n) override_if(o_n, c.analytics.heatmap_n, heatmap_n);
    if (o_top) override_if(o_top, c.analytics.top_tokens, top_tokens);
    if (o_k) override_if(o_k, c.analytics.k_eval, k_eval);
  };

  // scaling
  CLI::App* scaling_cmd = app.add_subcommand("scaling", "Scaling-law fitting");
  scaling_cmd->require_subcommand(1);
  ScalingArgs sa;
  CLI::App* iso_cmd = scaling_cmd->add_subcommand("isoflop", "Per-budget parabolas and power laws over the optima");
  CLI::App* par_cmd = scaling_cmd->add_subcommand("parametric", "Huber fit of the parametric loss");
  for (CLI::App* sub : {iso_cmd, par_cmd}) {
    add_config(sub);
    sub->add_option("--in", sa.in, "CSV with header n_active,d_tokens,c_flops,loss")->required();
    sub->add_option("--out-json", sa.out_json, "Result JSON (default: stdout)");
  }
  iso_cmd->add_option("--out-csv", sa.out_csv, "Observed and fitted losses per point");

  CLI::App* opt_cmd = scaling_cmd->add_subcommand("optimal", "Compute-optimal N and D for a budget");
  add_config(opt_cmd);
  OptimalArgs oa;
  const ParametricFit ref = reference_fit();
  double fa = ref.A, fb = ref.B, falpha = ref.alpha, fbeta = ref.beta, fl0 = ref.L0;
  opt_cmd->add_option("--flops", oa.flops, "Compute budget C")->required();
  opt_cmd->add_option("--fit", oa.fit_path, "JSON with A, B, alpha, beta, L0 (a parametric result works)");
  auto* o_A = opt_cmd->add_option("--A", fa, "Constant A");
  auto* o_B = opt_cmd->add_option("--B", fb, "Constant B");
  auto* o_alpha = opt_cmd->add_option("--alpha", falpha, "Exponent alpha");
  auto* o_beta = opt_cmd->add_option("--beta", fbeta, "Exponent beta");
  auto* o_L0 = opt_cmd->add_option("--L0", fl0, "Irreducible loss L0");
  o_A->default_str(format_double(fa));
  o_B->default_str(format_double(fb));
  o_alpha->default_str(format_double(falpha));
  o_beta->default_str(format_double(fbeta));
  o_L0->default_str(format_double(fl0));
  opt_cmd->add_option("--out-json", oa.out_json, "Result JSON (default: stdout)");
  auto fit_flags = [&](ParametricFit& f) {
    // without --fit every constant has its default; with it, only given flags apply
    const bool all = oa.fit_path.empty();
    if (all || o_A->count()) f.A = fa;
    if (all || o_B->count()) f.B = fb;
    if (all || o_alpha->count()) f.alpha = falpha;
    if (all || o_beta->count()) f.beta = fbeta;
    if (all || o_L0->count()) f.L0 = fl0;
  };

  CLI::App* synth_cmd = scaling_cmd->add_subcommand("synth", "Synthetic points from the published constants");
  add_config(synth_cmd);
  SynthArgs sy;
  synth_cmd->add_option("--out", sy.out, "Output CSV")->required();
  synth_cmd->add_option("--budgets", sy.budgets, "FLOP budgets");
  synth_cmd->add_option("--per-budget", sy.per_budget, "Model sizes per budget")->check(CLI::Range(2, 1000000));
  synth_cmd->add_option("--noise", sy.noise, "Relative Gaussian noise on the loss");
  synth_cmd->add_option("--half-span", sy.half_span, "Decades on each side of the optimum");
  synth_cmd->add_option("--seed", sy.seed, "Noise seed");

  // corpus
  CLI::App* corpus_cmd = app.add_subcommand("corpus", "Corpus utilities");
  corpus_cmd->require_subcommand(1);
  CLI::App* csynth_cmd = corpus_cmd->add_subcommand("synth", "Write a synthetic Markov corpus");
  CorpusArgs ca;
  csynth_cmd->add_option("--out", ca.out, "Output corpus file")->required();
  csynth_cmd->add_option("--vocab", ca.vocab, "Vocabulary size");
  csynth_cmd->add_option("--tokens", ca.tokens, "Number of tokens");
  csynth_cmd->add_option("--seed", ca.seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd) return cmd_train(common, corpus_path, out_dir, train_flags, out);
    if (*analyze_cmd) return cmd_analyze(analyze_kind, common, an, analyze_flags, out);
    if (*iso_cmd) return cmd_isoflop(common, sa, out);
    if (*par_cmd) return cmd_parametric(common, sa, out);
    if (*opt_cmd) return cmd_optimal(common, oa, fit_flags, out);
    if (*synth_cmd) return cmd_scaling_synth(common, sy, out);
    if (*csynth_cmd) return cmd_corpus_synth(ca, out);
    err << "no command given\n";
    return 2;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const UndefinedInputError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv = {"moelab"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace moelab
