// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "moelab/scaling.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <boost/math/tools/minima.hpp>

#include "moelab/errors.hpp"
#include "moelab/format.hpp"
#include "moelab/random.hpp"

namespace moelab {

namespace {

constexpr double kExponentFloor = 1e-6;

bool positive_finite(double v) { return std::isfinite(v) && v > 0; }

bool point_less(const ScalingPoint& a, const ScalingPoint& b) {
  return std::tie(a.c_flops, a.n_active, a.d_tokens, a.loss) < std::tie(b.c_flops, b.n_active, b.d_tokens, b.loss);
}

// Solves a 3x3 system by elimination with partial pivoting.
std::array<double, 3> solve3(std::array<std::array<double, 4>, 3> m) {
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r)
      if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
    if (m[piv][col] == 0.0) throw FitError("singular normal equations");
    std::swap(m[col], m[piv]);
    for (int r = col + 1; r < 3; ++r) {
      const double f = m[r][col] / m[col][col];
      for (int c = col; c < 4; ++c) m[r][c] -= f * m[col][c];
    }
  }
  std::array<double, 3> x{};
  for (int r = 2; r >= 0; --r) {
    double s = m[r][3];
    for (int c = r + 1; c < 3; ++c) s -= m[r][c] * x[c];
    x[r] = s / m[r][r];
  }
  return x;
}

// Objective over theta = (log A, log B, alpha, beta, log L0).
struct HuberProblem {
  std::vector<double> ln_n, ln_d, ln_obs;
  double delta;

  double value(const std::array<double, 5>& th, std::array<double, 5>* grad) const {
    double f = 0;
    std::array<double, 5> g{};
    const double l0 = std::exp(th[4]);
    for (std::size_t i = 0; i < ln_n.size(); ++i) {
      const double ta = std::exp(th[0] - th[2] * ln_n[i]);
      const double tb = std::exp(th[1] - th[3] * ln_d[i]);
      const double pred = ta + tb + l0;
      const double r = std::log(pred) - ln_obs[i];
      f += huber(r, delta);
      if (grad) {
        const double w = huber_grad(r, delta) / pred;
        g[0] += w * ta;
        g[1] += w * tb;
        g[2] -= w * ta * ln_n[i];
        g[3] -= w * tb * ln_d[i];
        g[4] += w * l0;
      }
    }
    if (grad) *grad = g;
    return f;
  }
};

void clamp_exponents(std::array<double, 5>& th) {
  th[2] = std::max(th[2], kExponentFloor);
  th[3] = std::max(th[3], kExponentFloor);
}

enum class StartStatus { kConverged, kStalled, kMaxIterations, kNonFinite };

const char* status_name(StartStatus s) {
  switch (s) {
    case StartStatus::kConverged: return "converged";
    case StartStatus::kStalled: return "stalled";
    case StartStatus::kMaxIterations: return "max_iterations";
    case StartStatus::kNonFinite: return "non_finite";
  }
  return "?";
}

struct StartResult {
  std::array<double, 5> theta;
  double f;
  StartStatus status;
};

double dot(const std::array<double, 5>& a, const std::array<double, 5>& b) {
  double s = 0;
  for (int i = 0; i < 5; ++i) s += a[i] * b[i];
  return s;
}

// BFGS on the inverse Hessian with Armijo backtracking.
StartResult bfgs(const HuberProblem& prob, std::array<double, 5> th, std::size_t max_iter) {
  using Mat = std::array<std::array<double, 5>, 5>;
  auto identity = [] {
    Mat h{};
    for (int i = 0; i < 5; ++i) h[i][i] = 1.0;
    return h;
  };
  clamp_exponents(th);
  std::array<double, 5> g;
  double f = prob.value(th, &g);
  if (!std::isfinite(f)) return {th, f, StartStatus::kNonFinite};
  Mat h = identity();
  bool scaled = false;
  for (std::size_t it = 0; it < max_iter; ++it) {
    double gmax = 0;
    for (double v : g) gmax = std::max(gmax, std::abs(v));
    if (gmax <= 1e-12) return {th, f, StartStatus::kConverged};

    std::array<double, 5> p{};
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) p[i] -= h[i][j] * g[j];
    double slope = dot(g, p);
    if (!(slope < 0)) {
      h = identity();
      for (int i = 0; i < 5; ++i) p[i] = -g[i];
      slope = dot(g, p);
    }

    double t = 1.0;
    std::array<double, 5> next;
    std::array<double, 5> g_next;
    double f_next;
    for (;;) {
      for (int i = 0; i < 5; ++i) next[i] = th[i] + t * p[i];
      clamp_exponents(next);
      f_next = prob.value(next, &g_next);
      if (std::isfinite(f_next) && f_next <= f + 1e-4 * t * slope) break;
      t *= 0.5;
      if (t < 1e-20) return {th, f, StartStatus::kStalled};
    }

    std::array<double, 5> s, y;
    for (int i = 0; i < 5; ++i) {
      s[i] = next[i] - th[i];
      y[i] = g_next[i] - g[i];
    }
    const double sy = dot(s, y);
    if (sy > 0) {
      if (!scaled) {
        const double scale = sy / dot(y, y);
        for (int i = 0; i < 5; ++i) h[i][i] = scale;
        scaled = true;
      }
      const double rho = 1.0 / sy;
      std::array<double, 5> hy{};
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) hy[i] += h[i][j] * y[j];
      const double yhy = dot(y, hy);
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j)
          h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
    }
    th = next;
    g = g_next;
    if (f_next == f) return {th, f_next, StartStatus::kStalled};
    f = f_next;
  }
  return {th, f, StartStatus::kMaxIterations};
}

double parse_field(const std::string& text, const std::filesystem::path& file, std::size_t lineno,
                   const char* name) {
  double v = 0;
  const char* b = text.data();
  const char* e = b + text.size();
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e)
    throw ParseError(file.string() + ":" + std::to_string(lineno) + ": bad number in " + name, lineno);
  return v;
}

}  // namespace

void validate(const ScalingPoint& p, double kappa) {
  if (!positive_finite(p.n_active)) throw ContractError("n_active must be positive");
  if (!positive_finite(p.d_tokens)) throw ContractError("d_tokens must be positive");
  if (!positive_finite(p.c_flops)) throw ContractError("c_flops must be positive");
  if (!positive_finite(p.loss)) throw ContractError("loss must be positive");
  const double implied = kappa * p.n_active * p.d_tokens;
  if (std::abs(implied - p.c_flops) > 0.01 * p.c_flops)
    throw ContractError("c_flops " + format_double(p.c_flops) + " differs from kappa*N*D = " + format_double(implied) +
                        " by more than 1%");
}

ParametricFit reference_fit() {
  ParametricFit f;
  f.A = 148.413257;
  f.B = 3269017.372472;
  f.L0 = 2.241716;
  f.alpha = 0.279702;
  f.beta = 0.715500;
  return f;
}

double tokens_for_budget(double c_flops, double n_active, double kappa) {
  if (!positive_finite(c_flops) || !positive_finite(n_active) || !positive_finite(kappa))
    throw ContractError("tokens_for_budget needs positive inputs");
  return c_flops / (kappa * n_active);
}

IsoflopFit fit_isoflop_parabola(const std::vector<ScalingPoint>& points) {
  if (points.size() < 3)
    throw ContractError("isoflop fit needs at least 3 points, got " + std::to_string(points.size()));
  std::vector<ScalingPoint> pts = points;
  std::sort(pts.begin(), pts.end(), point_less);
  std::vector<double> xs;
  for (const auto& p : pts) {
    if (!positive_finite(p.n_active) || !positive_finite(p.loss))
      throw ContractError("isoflop fit needs positive n_active and loss");
    xs.push_back(std::log10(p.n_active));
  }
  {
    std::vector<double> sorted = xs;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw ContractError("isoflop fit needs distinct n_active values");
  }
  double xm = 0;
  for (double x : xs) xm += x;
  xm /= static_cast<double>(xs.size());

  // normal equations in centered u = x - xm, columns (u^2, u, 1)
  std::array<std::array<double, 4>, 3> m{};
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double u = xs[i] - xm;
    const std::array<double, 3> row = {u * u, u, 1.0};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) m[r][c] += row[r] * row[c];
      m[r][3] += row[r] * pts[i].loss;
    }
  }
  const auto q = solve3(m);
  if (!(q[0] > 0))
    throw FitError("isoflop parabola is not convex (curvature " + format_double(q[0]) + ")");

  IsoflopFit fit;
  fit.c_flops = pts.front().c_flops;
  fit.n_points = pts.size();
  fit.a = q[0];
  fit.b = q[1] - 2 * q[0] * xm;
  fit.c = q[0] * xm * xm - q[1] * xm + q[2];
  fit.n_opt = std::pow(10.0, xm - q[1] / (2 * q[0]));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double u = xs[i] - xm;
    const double r = q[0] * u * u + q[1] * u + q[2] - pts[i].loss;
    fit.rss += r * r;
  }
  return fit;
}

std::vector<std::vector<ScalingPoint>> group_by_budget(const std::vector<ScalingPoint>& points) {
  std::map<double, std::vector<ScalingPoint>> by;
  for (const auto& p : points) by[p.c_flops].push_back(p);
  std::vector<std::vector<ScalingPoint>> out;
  for (auto& [c, v] : by) {
    std::sort(v.begin(), v.end(), point_less);
    out.push_back(std::move(v));
  }
  return out;
}

PowerLaw fit_power_law(const std::vector<std::pair<double, double>>& xy) {
  if (xy.size() < 2) throw ContractError("power law fit needs at least 2 pairs");
  double mx = 0, my = 0;
  for (const auto& [x, y] : xy) {
    if (!positive_finite(x) || !positive_finite(y)) throw ContractError("power law fit needs positive pairs");
    mx += std::log(x);
    my += std::log(y);
  }
  const double n = static_cast<double>(xy.size());
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (const auto& [x, y] : xy) {
    const double dx = std::log(x) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(y) - my);
  }
  if (sxx == 0) throw ContractError("power law fit needs at least 2 distinct x values");
  PowerLaw law;
  law.exponent = sxy / sxx;
  law.coefficient = std::exp(my - law.exponent * mx);
  return law;
}

PowerLaw fit_power_law(std::pair<double, double> xy, double assumed_exponent) {
  if (!positive_finite(xy.first) || !positive_finite(xy.second))
    throw ContractError("power law fit needs a positive pair");
  PowerLaw law;
  law.exponent = assumed_exponent;
  law.coefficient = xy.second / std::pow(xy.first, assumed_exponent);
  law.flagged = true;
  return law;
}

double huber(double residual, double delta) {
  if (!(delta > 0)) throw ContractError("huber delta must be positive");
  const double a = std::abs(residual);
  return a <= delta ? 0.5 * residual * residual : delta * (a - 0.5 * delta);
}

double huber_grad(double residual, double delta) {
  if (!(delta > 0)) throw ContractError("huber delta must be positive");
  if (std::abs(residual) <= delta) return residual;
  return residual > 0 ? delta : -delta;
}

double predict_loss(const ParametricFit& fit, double n_active, double d_tokens) {
  if (!positive_finite(n_active) || !positive_finite(d_tokens))
    throw ContractError("predict_loss needs positive n_active and d_tokens");
  return fit.A / std::pow(n_active, fit.alpha) + fit.B / std::pow(d_tokens, fit.beta) + fit.L0;
}

double parametric_objective(const ParametricFit& fit, const std::vector<ScalingPoint>& points, double delta) {
  std::vector<ScalingPoint> pts = points;
  std::sort(pts.begin(), pts.end(), point_less);
  double f = 0;
  for (const auto& p : pts) f += huber(std::log(predict_loss(fit, p.n_active, p.d_tokens)) - std::log(p.loss), delta);
  return f;
}

ParametricFit fit_parametric(const std::vector<ScalingPoint>& points, const ParametricGrid& grid,
                             const FitOptions& options) {
  if (points.size() < 6)
    throw ContractError("parametric fit needs at least 6 points, got " + std::to_string(points.size()));
  for (const auto& p : points)
    if (!positive_finite(p.n_active) || !positive_finite(p.d_tokens) || !positive_finite(p.loss))
      throw ContractError("parametric fit needs positive n_active, d_tokens and loss");
  if (group_by_budget(points).size() < 2) throw ContractError("parametric fit needs at least 2 budgets");
  for (double v : grid.L0)
    if (!(v > 0)) throw ContractError("grid L0 values must be positive");

  std::vector<ScalingPoint> pts = points;
  std::sort(pts.begin(), pts.end(), point_less);
  HuberProblem prob;
  prob.delta = options.delta;
  for (const auto& p : pts) {
    prob.ln_n.push_back(std::log(p.n_active));
    prob.ln_d.push_back(std::log(p.d_tokens));
    prob.ln_obs.push_back(std::log(p.loss));
  }

  std::vector<std::array<double, 5>> starts;
  for (double la : grid.log_A)
    for (double lb : grid.log_B)
      for (double a : grid.alpha)
        for (double b : grid.beta)
          for (double l0 : grid.L0) starts.push_back({la, lb, a, b, l0});
  std::sort(starts.begin(), starts.end());
  if (starts.empty()) throw ContractError("empty initialization grid");

  bool have = false;
  StartResult best{};
  std::array<double, 5> best_init{};
  std::size_t converged = 0;
  std::ostringstream diag;
  for (const auto& init : starts) {
    std::array<double, 5> th = init;
    th[4] = std::log(init[4]);
    StartResult r = bfgs(prob, th, options.max_iterations);
    const bool ok = r.status == StartStatus::kConverged || r.status == StartStatus::kStalled;
    if (!ok) {
      if (converged == 0 && diag.tellp() < 2000)
        diag << "\n  start (" << init[0] << ", " << init[1] << ", " << init[2] << ", " << init[3] << ", " << init[4]
             << "): " << status_name(r.status) << ", objective " << r.f;
      continue;
    }
    ++converged;
    // starts are visited in lexicographic order, so strict < keeps the smallest on ties
    if (!have || r.f < best.f) {
      best = r;
      best_init = init;
      have = true;
    }
  }
  if (!have)
    throw FitError("no start of the parametric fit converged (" + std::to_string(starts.size()) +
                   " starts):" + diag.str());

  ParametricFit fit;
  fit.A = std::exp(best.theta[0]);
  fit.B = std::exp(best.theta[1]);
  fit.alpha = best.theta[2];
  fit.beta = best.theta[3];
  fit.L0 = std::exp(best.theta[4]);
  fit.objective = best.f;
  fit.init = best_init;
  fit.starts = starts.size();
  fit.converged_starts = converged;
  return fit;
}

double allocation_exponent(const ParametricFit& fit) { return fit.beta / (fit.alpha + fit.beta); }

Allocation optimal_allocation(const ParametricFit& fit, double c_flops, double kappa) {
  if (!positive_finite(c_flops) || !positive_finite(kappa)) throw ContractError("optimal_allocation needs C > 0");
  // dL/dN = 0 on D = C/(kappa N) gives N^(alpha+beta) = (alpha A)/(beta B) * (C/kappa)^beta
  const double s = fit.alpha + fit.beta;
  const double g = std::pow(fit.alpha * fit.A / (fit.beta * fit.B), 1.0 / s);
  Allocation out;
  out.n_opt = g * std::pow(c_flops / kappa, fit.beta / s);
  out.d_opt = tokens_for_budget(c_flops, out.n_opt, kappa);
  return out;
}

Allocation optimal_allocation_numeric(const ParametricFit& fit, double c_flops, double kappa) {
  if (!positive_finite(c_flops) || !positive_finite(kappa)) throw ContractError("optimal_allocation needs C > 0");
  // the loss along the constraint is a sum of exponentials in log N, so it is unimodal
  auto along = [&](double ln_n) {
    const double n = std::exp(ln_n);
    return predict_loss(fit, n, c_flops / (kappa * n));
  };
  const double hi = std::log(c_flops / kappa);
  const auto res = boost::math::tools::brent_find_minima(along, 0.0, hi, std::numeric_limits<double>::digits / 2);
  Allocation out;
  out.n_opt = std::exp(res.first);
  out.d_opt = tokens_for_budget(c_flops, out.n_opt, kappa);
  return out;
}

std::vector<ScalingPoint> synthetic_scaling_points(const ParametricFit& truth, const std::vector<double>& budgets,
                                                   std::size_t n_per_budget, double noise, std::uint64_t seed,
                                                   double half_span, double kappa) {
  if (n_per_budget < 2) throw ContractError("synthetic data needs at least 2 points per budget");
  Rng rng(derive_seed("scaling", seed));
  std::vector<ScalingPoint> out;
  for (double c : budgets) {
    const double center = std::log10(optimal_allocation(truth, c, kappa).n_opt);
    for (std::size_t i = 0; i < n_per_budget; ++i) {
      const double off = half_span * (-1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n_per_budget - 1));
      ScalingPoint p;
      p.n_active = std::pow(10.0, center + off);
      p.d_tokens = tokens_for_budget(c, p.n_active, kappa);
      p.c_flops = c;
      const double z = rng.normal();
      p.loss = predict_loss(truth, p.n_active, p.d_tokens) * (1.0 + noise * z);
      out.push_back(p);
    }
  }
  return out;
}

std::vector<ScalingPoint> read_scaling_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file.string());
  std::string line;
  std::size_t lineno = 0;
  auto strip = [](std::string& s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  };
  if (!std::getline(in, line)) throw ParseError(file.string() + ":1: empty file, expected header", 1);
  ++lineno;
  strip(line);
  if (line != "n_active,d_tokens,c_flops,loss")
    throw ParseError(file.string() + ":1: expected header n_active,d_tokens,c_flops,loss", 1);
  std::vector<ScalingPoint> out;
  while (std::getline(in, line)) {
    ++lineno;
    strip(line);
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.push_back("");
    if (f.size() != 4)
      throw ParseError(file.string() + ":" + std::to_string(lineno) + ": expected 4 fields, got " +
                           std::to_string(f.size()),
                       lineno);
    ScalingPoint p;
    p.n_active = parse_field(f[0], file, lineno, "n_active");
    p.d_tokens = parse_field(f[1], file, lineno, "d_tokens");
    p.c_flops = parse_field(f[2], file, lineno, "c_flops");
    p.loss = parse_field(f[3], file, lineno, "loss");
    try {
      validate(p);
    } catch (const ContractError& e) {
      throw ParseError(file.string() + ":" + std::to_string(lineno) + ": " + e.what(), lineno);
    }
    out.push_back(p);
  }
  return out;
}

void write_scaling_csv(const std::filesystem::path& file, const std::vector<ScalingPoint>& points) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out << "n_active,d_tokens,c_flops,loss\n";
  for (const auto& p : points)
    out << format_double(p.n_active) << ',' << format_double(p.d_tokens) << ',' << format_double(p.c_flops) << ','
        << format_double(p.loss) << '\n';
  if (!out) throw IoError("write failed: " + file.string());
}

nlohmann::json to_json(const ParametricFit& fit) {
  return {{"A", fit.A},
          {"B", fit.B},
          {"alpha", fit.alpha},
          {"beta", fit.beta},
          {"L0", fit.L0},
          {"objective", fit.objective},
          {"init", {{"log_A", fit.init[0]}, {"log_B", fit.init[1]}, {"alpha", fit.init[2]}, {"beta", fit.init[3]},
                    {"L0", fit.init[4]}}},
          {"starts", fit.starts},
          {"converged_starts", fit.converged_starts}};
}

ParametricFit parametric_fit_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ContractError("fit: expected a JSON object");
  ParametricFit f;
  auto get = [&](const char* key) {
    if (!j.contains(key)) throw ContractError(std::string("fit: missing field ") + key);
    if (!j.at(key).is_number()) throw ContractError(std::string("fit: field ") + key + " must be a number");
    return j.at(key).get<double>();
  };
  f.A = get("A");
  f.B = get("B");
  f.alpha = get("alpha");
  f.beta = get("beta");
  f.L0 = get("L0");
  if (!(f.A > 0) || !(f.B > 0) || !(f.L0 > 0) || !(f.alpha > 0) || !(f.beta > 0))
    throw ContractError("fit: A, B, alpha, beta and L0 must be positive");
  return f;
}

nlohmann::json to_json(const IsoflopFit& fit) {
  return {{"c_flops", fit.c_flops}, {"n_opt", fit.n_opt}, {"a", fit.a},          {"b", fit.b},
          {"c", fit.c},             {"rss", fit.rss},     {"n_points", fit.n_points}};
}

nlohmann::json to_json(const PowerLaw& law) {
  return {{"coefficient", law.coefficient}, {"exponent", law.exponent}, {"flagged", law.flagged}};
}

}  // namespace moelab
