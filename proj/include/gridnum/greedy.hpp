#pragma once

// Myopic slot-by-slot scheduler and an a posteriori bound on its
// optimality gap from weak duality.

#include "gridnum/model.hpp"

namespace gridnum {

struct GreedyResult {
  Allocation allocation;
  /// Equilibrium marginal cost of each slot's static problem.
  PriceSignal multipliers;
  double welfare = 0.0;
};

/// Solves the slots in order. Deferrable loads consume while their marginal
/// utility exceeds the slot price, within bounds that keep the remaining
/// energy deliverable; batteries discharge when the slot price exceeds the
/// running average of past prices and charge when it is below.
GreedyResult greedy_solve(const Scenario& s);

/// max(0, dual_value(multipliers) - welfare(greedy allocation)). Valid for any
/// feasible allocation and any nonnegative multipliers.
double gap_upper_bound(const Scenario& s, const GreedyResult& greedy);
double gap_upper_bound(const Scenario& s, const Allocation& x, const PriceSignal& multipliers);

/// Equilibrium of one slot's static welfare problem for fixed consumption
/// bounds and a fixed battery net load. Returns the price; fills q and the
/// generation.
double slot_equilibrium(const Scenario& s, int t, const std::vector<double>& lo, const std::vector<double>& hi,
                        double battery_net, std::vector<double>& q, double& generation);

}  // namespace gridnum
