#pragma once

// Dual decomposition of the welfare problem. Prices relax the per-slot
// supply/demand balance; each user and the provider then solve independent
// subproblems, and a coordinator moves prices along the mismatch.

#include <memory>
#include <vector>

#include "gridnum/bus.hpp"
#include "gridnum/model.hpp"
#include "gridnum/report.hpp"
#include "gridnum/solver_core.hpp"

namespace gridnum {

struct DualConfig {
  double gamma0 = 1.0;
  StepRule step_rule = StepRule::diminishing;
  int max_rounds = 200000;
  double tol_gap = 1e-6;
  double tol_balance = 1e-6;
  /// Keep every broadcast price vector in the report.
  bool record_prices = false;

  /// Default configuration with gamma0 = 1 / (bound on the dual curvature).
  static DualConfig for_scenario(const Scenario& s, bool include_spot = false);
};

void validate(const DualConfig& cfg);

struct UserResponse {
  std::vector<double> q, r, d;
  /// sum_t dt * (u_t(q_t) - p_t * (q_t + r_t - d_t))
  double surplus = 0.0;
};

/// Constrained maximizer of a user's surplus at prices p.
UserResponse user_best_response(const UserModel& u, const PriceSignal& p, double dt);

/// Right derivative of the user's net load q_t + r_t - d_t with respect to
/// p_t. Empty for users with a battery, whose response is not smooth.
std::vector<double> user_response_slope(const UserModel& u, const PriceSignal& p, const UserResponse& resp);

/// Charge/discharge schedule maximizing sum_t dt * p_t * (d_t - r_t) under the
/// battery's rate, level and terminal constraints (an exact LP solution by
/// dynamic programming over concave piecewise-linear value functions).
struct BatteryResponse {
  std::vector<double> r, d;
  double value = 0.0;
};
BatteryResponse battery_best_response(const Battery& b, const PriceSignal& p, double dt);

/// supply_t = clamp((p_t - c1_t) / c2_t, 0, capacity_t).
std::vector<double> provider_supply_response(const ProviderCost& c, const PriceSignal& p);

/// p'_t = max(0, p_t + gamma * (demand_t - supply_t)).
PriceSignal price_update(const PriceSignal& p, const std::vector<double>& demand, const std::vector<double>& supply,
                         double gamma);

/// Sum of optimal user surpluses and optimal provider profit at prices p
/// (with spot purchases when include_spot and the scenario has a market).
double dual_value(const Scenario& s, const PriceSignal& p, bool include_spot = false);

/// A user as a market agent answering price broadcasts.
class UserAgent : public Agent {
 public:
  UserAgent(UserModel u, double dt, bool report_slope) : u_(std::move(u)), dt_(dt), report_slope_(report_slope) {}
  RoundMessage respond(const RoundMessage& broadcast) override;

 private:
  UserModel u_;
  double dt_;
  bool report_slope_;
};

/// The provider, optionally buying from the spot market.
class ProviderAgent : public Agent {
 public:
  ProviderAgent(ProviderCost c, std::optional<SpotMarket> m, double dt, bool report_slope)
      : c_(std::move(c)), m_(std::move(m)), dt_(dt), report_slope_(report_slope) {}
  RoundMessage respond(const RoundMessage& broadcast) override;

 private:
  ProviderCost c_;
  std::optional<SpotMarket> m_;
  double dt_;
  bool report_slope_;
};

/// Users 0..n-1 followed by the provider at index n.
std::vector<std::unique_ptr<Agent>> make_agents(const Scenario& s, bool include_spot, bool report_slope);

/// Coordinator price rule, called once per round.
class PricePolicy {
 public:
  virtual ~PricePolicy() = default;
  /// mismatch_t = demand_t - supply_t at prices p (round k, 1-based).
  virtual PriceSignal next(const PriceSignal& p, const std::vector<double>& mismatch,
                           const std::vector<RoundMessage>& replies, int k) = 0;
};

class SubgradientPolicy : public PricePolicy {
 public:
  explicit SubgradientPolicy(const DualConfig& cfg) : gamma0_(cfg.gamma0), rule_(cfg.step_rule) {}
  PriceSignal next(const PriceSignal& p, const std::vector<double>& mismatch, const std::vector<RoundMessage>& replies,
                   int k) override;

 private:
  double gamma0_;
  StepRule rule_;
};

struct MarketResult {
  PriceSignal prices;
  Allocation allocation;
  ConvergenceReport report;
  double dual_value = 0.0;  // best (smallest) dual value seen
  double primal_value = 0.0;
  int rounds = 0;
};

/// Largest per-slot balance violation that is not explained by a zero price.
double projected_mismatch(const PriceSignal& p, const std::vector<double>& mismatch);

/// Synchronous price iteration over the bus with the given policy. The
/// returned allocation is the best feasible primal candidate seen (last
/// iterate or running average of the replies, completed by dispatch).
MarketResult run_market(const Scenario& s, const DualConfig& cfg, MessageBus& bus, PricePolicy& policy,
                        bool include_spot);

MarketResult run_dual(const Scenario& s, const DualConfig& cfg, MessageBus& bus);
/// Convenience overload on an in-process bus.
MarketResult run_dual(const Scenario& s, const DualConfig& cfg);

}  // namespace gridnum
