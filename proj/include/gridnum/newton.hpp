#pragma once

// Newton acceleration of the price iteration. The dual Hessian is diagonal
// across slots under this model, so agents report one local slope per slot
// and the coordinator divides the mismatch by their sum.

#include <vector>

#include "gridnum/dual_market.hpp"

namespace gridnum {

struct NewtonConfig {
  /// Rounds, tolerances and the subgradient fallback step.
  DualConfig base;
  /// |h_t| below this falls back to a subgradient step.
  double h_floor = 1e-12;
  /// Per-slot damping after the mismatch changes sign without converging.
  double overshoot_damping = 0.8;
  /// Maximum number of global damping halvings.
  int retry_cap = 30;

  static NewtonConfig for_scenario(const Scenario& s);
};

struct DualDerivatives {
  std::vector<double> g;  // demand - supply
  std::vector<double> h;  // right derivative of g_t with respect to p_t
};

/// Mismatch and its per-slot slope from agent-local information. Scenarios
/// with batteries are rejected (their response is piecewise constant).
DualDerivatives dual_gradient_and_curvature(const Scenario& s, const PriceSignal& p);

/// p'_t = max(0, p_t - alpha_t g_t / h_t), or max(0, p_t + gamma g_t) where
/// |h_t| < h_floor.
PriceSignal newton_price_step(const PriceSignal& p, const std::vector<double>& g, const std::vector<double>& h,
                              const std::vector<double>& alpha, double gamma, double h_floor = 1e-12);
PriceSignal newton_price_step(const PriceSignal& p, const std::vector<double>& g, const std::vector<double>& h,
                              double alpha, double gamma, double h_floor = 1e-12);

class NewtonPolicy : public PricePolicy {
 public:
  NewtonPolicy(const NewtonConfig& cfg, int slots);
  PriceSignal next(const PriceSignal& p, const std::vector<double>& mismatch, const std::vector<RoundMessage>& replies,
                   int k) override;

 private:
  NewtonConfig cfg_;
  std::vector<double> cap_;  // per-slot damping ceiling
  double scale_ = 1.0;       // global damping factor
  int halvings_ = 0;
  std::vector<double> prev_g_;
  double prev_norm_ = -1.0;
};

MarketResult run_newton(const Scenario& s, const NewtonConfig& cfg, MessageBus& bus);
MarketResult run_newton(const Scenario& s, const NewtonConfig& cfg);

}  // namespace gridnum
