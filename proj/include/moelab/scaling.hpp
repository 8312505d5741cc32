// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Compute-optimal scaling: FLOPs accounting, per-budget IsoFLOP parabolas,
// power laws over the optima, and the parametric loss
//
//   L(N, D) = A / N^alpha + B / D^beta + L0
//
// fitted with a Huber objective on log-loss residuals from a grid of starts.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace moelab {

struct ScalingPoint {
  double n_active = 0;
  double d_tokens = 0;
  double c_flops = 0;
  double loss = 0;

  bool operator==(const ScalingPoint&) const = default;
};

/// Throws ContractError unless every field is positive and c_flops is within
/// 1% of kappa * n_active * d_tokens.
void validate(const ScalingPoint& p, double kappa = 6.0);

struct ParametricFit {
  double A = 0, B = 0, alpha = 0, beta = 0, L0 = 0;
  double objective = 0;
  // winning start as (log A, log B, alpha, beta, L0)
  std::array<double, 5> init{};
  std::size_t starts = 0;
  std::size_t converged_starts = 0;
};

/// The fitted constants published for the released model family.
ParametricFit reference_fit();

struct PowerLaw {
  double coefficient = 0;
  double exponent = 0;
  bool flagged = false;  // exponent was assumed, not fitted
};

double tokens_for_budget(double c_flops, double n_active, double kappa = 6.0);

struct IsoflopFit {
  double c_flops = 0;
  double n_opt = 0;
  // loss ~ a*x^2 + b*x + c with x = log10(n_active)
  double a = 0, b = 0, c = 0;
  double rss = 0;
  std::size_t n_points = 0;
};

/// Least-squares parabola in log10(n_active). Needs at least 3 points with
/// distinct n_active (ContractError); curvature <= 0 raises FitError.
IsoflopFit fit_isoflop_parabola(const std::vector<ScalingPoint>& points);

/// Groups by exact c_flops, ascending.
std::vector<std::vector<ScalingPoint>> group_by_budget(const std::vector<ScalingPoint>& points);

/// Slope and intercept of log y against log x. Needs 2 or more positive pairs.
PowerLaw fit_power_law(const std::vector<std::pair<double, double>>& xy);
/// One pair with the exponent taken as given; the result is flagged.
PowerLaw fit_power_law(std::pair<double, double> xy, double assumed_exponent);

double huber(double residual, double delta = 1e-3);
/// d huber / d residual.
double huber_grad(double residual, double delta = 1e-3);

double predict_loss(const ParametricFit& fit, double n_active, double d_tokens);

struct ParametricGrid {
  std::vector<double> log_A = {0, 5, 10, 15, 20};
  std::vector<double> log_B = {0, 5, 10, 15, 20};
  std::vector<double> alpha = {0.1, 0.3, 0.5, 0.7};
  std::vector<double> beta = {0.1, 0.3, 0.5, 0.7};
  std::vector<double> L0 = {1, 2, 3};
};

struct FitOptions {
  double delta = 1e-3;
  std::size_t max_iterations = 4000;
};

/// BFGS from every grid vertex over (log A, log B, alpha, beta, log L0),
/// alpha and beta clamped at 1e-6. The winner has the lowest objective,
/// ties broken by the lexicographically smallest start. Input order does
/// not matter. Needs 6 or more points over at least 2 budgets.
ParametricFit fit_parametric(const std::vector<ScalingPoint>& points, const ParametricGrid& grid = {},
                             const FitOptions& options = {});

/// Sum of Huber losses of log-residuals, the quantity fit_parametric minimizes.
double parametric_objective(const ParametricFit& fit, const std::vector<ScalingPoint>& points,
                            double delta = 1e-3);

struct Allocation {
  double n_opt = 0;
  double d_opt = 0;
};

/// Closed-form minimizer of predict_loss on kappa*N*D = C.
Allocation optimal_allocation(const ParametricFit& fit, double c_flops, double kappa = 6.0);
/// Same, found by one-dimensional Brent minimization over log N.
Allocation optimal_allocation_numeric(const ParametricFit& fit, double c_flops, double kappa = 6.0);
/// beta / (alpha + beta).
double allocation_exponent(const ParametricFit& fit);

/// n_per_budget model sizes per budget, log-spaced over +-half_span decades
/// around the closed-form optimum, losses from predict_loss times (1 + noise*z).
std::vector<ScalingPoint> synthetic_scaling_points(const ParametricFit& truth, const std::vector<double>& budgets,
                                                   std::size_t n_per_budget, double noise, std::uint64_t seed,
                                                   double half_span = 0.6, double kappa = 6.0);

/// CSV with header n_active,d_tokens,c_flops,loss. ParseError carries the
/// 1-based line number.
std::vector<ScalingPoint> read_scaling_csv(const std::filesystem::path& file);
void write_scaling_csv(const std::filesystem::path& file, const std::vector<ScalingPoint>& points);

nlohmann::json to_json(const ParametricFit& fit);
/// Needs numeric A, B, alpha, beta, L0. Other keys are ignored so a
/// parametric result file can be fed back in.
ParametricFit parametric_fit_from_json(const nlohmann::json& j);
nlohmann::json to_json(const IsoflopFit& fit);
nlohmann::json to_json(const PowerLaw& law);

}  // namespace moelab
