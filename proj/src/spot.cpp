#include "gridnum/spot.hpp"

#include <algorithm>
#include <cmath>

namespace gridnum {

ProviderSpotResponse provider_spot_response(const ProviderCost& c, const SpotMarket& m, const PriceSignal& p) {
  ProviderSpotResponse out;
  out.supply = provider_supply_response(c, p);
  out.spot_g.resize(p.size());
  for (std::size_t t = 0; t < p.size(); ++t) {
    if (m.kappa[t] > 0.0)
      out.spot_g[t] = std::clamp((p[t] - m.pi0[t]) / m.kappa[t], 0.0, m.g_max[t]);
    else
      out.spot_g[t] = p[t] > m.pi0[t] ? m.g_max[t] : 0.0;
  }
  return out;
}

MarketResult solve_sys_spot(const Scenario& s, const DualConfig& cfg, MessageBus& bus) {
  if (!s.spot) throw SolverError("scenario has no spot market");
  SubgradientPolicy policy(cfg);
  return run_market(s, cfg, bus, policy, true);
}

MarketResult solve_sys_spot(const Scenario& s, const DualConfig& cfg) {
  InProcessBus bus(make_agents(s, true, false));
  return solve_sys_spot(s, cfg, bus);
}

SpotFixedPoint spot_interaction_fixed_point(const Scenario& s, const FixedPointConfig& cfg) {
  if (!s.spot) throw SolverError("scenario has no spot market");
  const int T = s.slots();
  const auto& m = *s.spot;
  SolverConfig inner = cfg.inner;
  inner.include_spot = true;

  // Price-taking re-solve at fixed effective spot prices.
  Scenario taker = s;
  std::fill(taker.spot->kappa.begin(), taker.spot->kappa.end(), 0.0);
  auto respond = [&](const std::vector<double>& g, SystemSolution& sol) {
    for (int t = 0; t < T; ++t) taker.spot->pi0[t] = m.price(t, g[t]);
    sol = solve_system(taker, inner);
    return sol.allocation.spot_g;
  };

  SpotFixedPoint out;
  SystemSolution sol;
  std::vector<double> g = respond(std::vector<double>(T, 0.0), sol);
  double omega = cfg.relaxation;
  double prev_change = INFINITY;
  int growth = 0;
  for (int j = 1; j <= cfg.max_iters; ++j) {
    const auto target = respond(g, sol);
    double change = 0.0;
    for (int t = 0; t < T; ++t) change = std::max(change, std::abs(target[t] - g[t]));
    out.iterations = j;
    out.final_change = change;
    if (change <= cfg.tol) {
      g = target;
      out.converged = true;
      break;
    }
    if (change >= prev_change) {
      omega *= 0.5;
      if (++growth > 60) {
        out.oscillation = true;
        break;
      }
    }
    prev_change = change;
    for (int t = 0; t < T; ++t) g[t] += omega * (target[t] - g[t]);
  }

  out.g = g;
  out.spot_price.resize(T);
  for (int t = 0; t < T; ++t) out.spot_price[t] = m.price(t, g[t]);
  out.prices = sol.prices;
  out.allocation = sol.allocation;
  // The re-solve already returns purchases consistent with the equilibrium
  // prices; keep the iterate itself as the reported purchase vector.
  out.allocation.spot_g = g;
  out.allocation.supply = required_generation(s, out.allocation);

  SolverConfig internal = cfg.inner;
  internal.include_spot = true;
  const auto ref = solve_system(s, internal);
  for (int t = 0; t < T; ++t) out.consistency = std::max(out.consistency, std::abs(g[t] - ref.allocation.spot_g[t]));
  return out;
}

}  // namespace gridnum
