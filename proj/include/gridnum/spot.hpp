#pragma once

// Provider with access to a spot market: own generation plus purchases at the
// effective price pi0 + kappa * g.

#include <vector>

#include "gridnum/dual_market.hpp"
#include "gridnum/solver_core.hpp"

namespace gridnum {

struct ProviderSpotResponse {
  std::vector<double> supply;
  std::vector<double> spot_g;
};

/// Per slot maximizer of p (S + g) - c(S) - (pi0 + kappa g / 2) g.
/// kappa > 0: g = clamp((p - pi0) / kappa, 0, g_max); kappa = 0: g = g_max if p > pi0.
ProviderSpotResponse provider_spot_response(const ProviderCost& c, const SpotMarket& m, const PriceSignal& p);

/// Dual price iteration with the spot-buying provider.
MarketResult solve_sys_spot(const Scenario& s, const DualConfig& cfg, MessageBus& bus);
MarketResult solve_sys_spot(const Scenario& s, const DualConfig& cfg);

struct FixedPointConfig {
  /// Stop when max_t |g change| falls below this.
  double tol = 1e-8;
  int max_iters = 500;
  /// Initial relaxation weight; halved whenever the change fails to shrink.
  double relaxation = 1.0;
  SolverConfig inner;
};

struct SpotFixedPoint {
  std::vector<double> g;           // equilibrium purchases
  std::vector<double> spot_price;  // pi0 + kappa g
  PriceSignal prices;              // retail prices of the last re-solve
  Allocation allocation;
  int iterations = 0;
  bool converged = false;
  bool oscillation = false;
  double final_change = 0.0;
  /// max_t |g - g_internalized| against solve_system with the integrated outlay.
  double consistency = 0.0;
};

/// Purchase/price interaction: the provider takes the current effective spot
/// price as given, the problem is re-solved, and purchases feed back into the
/// price until they stop moving.
SpotFixedPoint spot_interaction_fixed_point(const Scenario& s, const FixedPointConfig& cfg = {});

}  // namespace gridnum
