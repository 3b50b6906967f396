#pragma once

// Centralized solution of the welfare problem and a brute-force lattice oracle.
//
// solve_system() is an augmented-Lagrangian method whose inner loop is
// (optionally accelerated) projected gradient ascent. The simple constraints
// (consumption boxes, deferrable energy totals, battery rates and levels,
// generation and spot boxes) are handled by exact Euclidean projection; the
// coupling constraints (per-slot supply/demand balance and battery level
// dynamics) carry multipliers. The balance multipliers are the optimal prices.

#include <span>
#include <vector>

#include "gridnum/model.hpp"
#include "gridnum/report.hpp"

namespace gridnum {

enum class StepRule { constant, diminishing };

struct SolverConfig {
  StepRule step_rule = StepRule::constant;
  /// Step as a multiple of the safe step 1/L of the current inner problem.
  double gamma0 = 1.0;
  int max_iters = 400000;
  double tol_kkt = 1e-9;
  double tol_step = 1e-15;
  /// Nesterov momentum with adaptive restart (constant rule only).
  bool accelerate = true;
  /// Treat the scenario's spot market as part of the problem.
  bool include_spot = false;
};

struct SystemSolution {
  Allocation allocation;
  ConvergenceReport report;
  PriceSignal prices;
  /// Per user: multiplier of each level-dynamics equation (marginal value of
  /// stored energy at the end of the slot). Empty for users without battery.
  std::vector<std::vector<double>> storage_values;
};

void validate(const SolverConfig& cfg);

/// Euclidean projection of y onto { lo <= x <= hi, sum(x) = total } by the
/// sorting-based breakpoint sweep (ties broken by index). Feasible input is
/// returned unchanged. Throws SolverError if the set is empty.
void project_box_sum(std::span<double> x, std::span<const double> lo, std::span<const double> hi, double total);

/// Forward clipping of a battery schedule so every level stays in
/// [0, capacity], followed by a backward pass restoring the terminal level.
/// Schedules that already satisfy the constraints are not modified.
void restore_battery(const Battery& b, std::span<double> charge, std::span<double> discharge, double dt);

/// Box projection composed with deferrable-window projection and battery
/// feasibility restoration. Idempotent.
Allocation projection(const Scenario& s, const Allocation& raw);

SystemSolution solve_system(const Scenario& s, const SolverConfig& cfg = {});

struct OracleResult {
  Allocation allocation;
  double objective = 0.0;
  /// Guaranteed distance of `base_objective` from the true optimum (for an
  /// optimum within one cell of a feasible lattice point).
  double error_bound = 0.0;
  double base_objective = 0.0;
  int dimension = 0;
  long long evaluated = 0;
};

/// Exhaustive search over a grid_n-per-axis lattice. Axes are the free
/// consumptions (one per deferrable window is eliminated by its energy
/// equation), one net battery flow per slot and, with include_spot, one spot
/// purchase per slot. zoom_levels > 0 refines around the best point with
/// 11-point sub-lattices (pattern-search style).
OracleResult oracle_solve(const Scenario& s, int grid_n, int zoom_levels = 0, bool include_spot = false);

inline constexpr int kOracleMaxDimension = 6;

}  // namespace gridnum
