#include "gridnum/greedy.hpp"

#include <algorithm>
#include <cmath>

#include "gridnum/dual_market.hpp"

namespace gridnum {

double slot_equilibrium(const Scenario& s, int t, const std::vector<double>& lo, const std::vector<double>& hi,
                        double battery_net, std::vector<double>& q, double& generation) {
  const std::size_t n = s.users.size();
  q.resize(n);
  const auto& c = s.provider;
  auto demand = [&](double price) {
    double sum = battery_net;
    for (std::size_t i = 0; i < n; ++i) {
      q[i] = std::clamp(s.users[i].utility.demand_at(t, price), lo[i], hi[i]);
      sum += q[i];
    }
    return sum;
  };
  auto supply = [&](double price) { return std::clamp((price - c.c1[t]) / c.c2[t], 0.0, c.capacity[t]); };

  double price = 0.0;
  if (demand(0.0) - supply(0.0) > 0.0) {
    double p_lo = 0.0;
    double p_hi = c.marginal(t, c.capacity[t]) + 1.0;
    for (std::size_t i = 0; i < n; ++i) p_hi = std::max(p_hi, s.users[i].utility.marginal(t, lo[i]) + 1.0);
    if (demand(p_hi) - supply(p_hi) > 1e-12 * std::max(1.0, c.capacity[t]))
      throw SolverError("forced load exceeds generation capacity in slot " + std::to_string(t));
    for (int it = 0; it < 300; ++it) {
      const double mid = 0.5 * (p_lo + p_hi);
      if (mid <= p_lo || mid >= p_hi) break;
      if (demand(mid) - supply(mid) > 0.0)
        p_lo = mid;
      else
        p_hi = mid;
    }
    price = p_hi;
  }
  const double load = demand(price);
  generation = std::clamp(load, 0.0, c.capacity[t]);
  return price;
}

GreedyResult greedy_solve(const Scenario& s) {
  const int T = s.slots();
  const double dt = s.dt();
  const std::size_t n = s.users.size();
  GreedyResult out;
  out.allocation = make_allocation(s);
  out.multipliers.p.assign(T, 0.0);
  auto& x = out.allocation;

  std::vector<double> remaining(n, 0.0);  // energy still owed to the active window
  std::vector<double> level(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    if (s.users[i].battery) level[i] = s.users[i].battery->initial_level;
  double price_sum = 0.0;
  std::vector<double> lo(n), hi(n), q;

  for (int t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto& u = s.users[i];
      const auto* dl = u.deferrable_at(t);
      if (!dl) {
        lo[i] = u.q_min[t];
        hi[i] = u.q_max[t];
        continue;
      }
      if (t == dl->window_start) remaining[i] = dl->energy_required;
      double later_hi = 0.0;
      double later_lo = 0.0;
      for (int tau = t + 1; tau <= dl->window_end; ++tau) {
        later_hi += u.upper(tau) * dt;
        later_lo += u.lower(tau) * dt;
      }
      lo[i] = std::max(u.lower(t), (remaining[i] - later_hi) / dt);
      hi[i] = std::min(u.upper(t), (remaining[i] - later_lo) / dt);
      if (t == dl->window_end) lo[i] = hi[i] = std::clamp(remaining[i] / dt, u.lower(t), u.upper(t));
      if (lo[i] > hi[i]) lo[i] = hi[i];
    }

    // Battery decisions against the slot price without storage.
    double gen = 0.0;
    const double base_price = slot_equilibrium(s, t, lo, hi, 0.0, q, gen);
    double net = 0.0;
    const int left = T - 1 - t;  // slots after this one
    for (std::size_t i = 0; i < n; ++i) {
      const auto& bo = s.users[i].battery;
      if (!bo) continue;
      const auto& b = *bo;
      const double eta = b.efficiency;
      const double refill = eta * b.charge_rate_max * dt * left;
      double r = 0.0;
      double d = 0.0;
      const double r_min = eta > 0.0 && dt > 0.0 ? std::max(0.0, (b.initial_level - level[i] - refill) / (eta * dt)) : 0.0;
      const double r_max = std::min(b.charge_rate_max, std::max(0.0, (b.capacity - level[i]) / (eta * dt)));
      const double d_max =
          std::max(0.0, std::min({b.discharge_rate_max, level[i] / dt, (level[i] + refill - b.initial_level) / dt}));
      if (t > 0) {
        const double avg = price_sum / t;
        const double tol = 1e-9 * std::max(1.0, avg);
        if (base_price > avg + tol && r_min == 0.0)
          d = d_max;
        else if (base_price < avg - tol)
          r = r_max;
      }
      r = std::clamp(std::max(r, r_min), 0.0, r_max);
      x.r(i, t) = r;
      x.d(i, t) = d;
      level[i] = std::clamp(level[i] + dt * (eta * r - d), 0.0, b.capacity);
      net += r - d;
    }

    const double price = slot_equilibrium(s, t, lo, hi, net, q, gen);
    out.multipliers[t] = price;
    price_sum += price;
    for (std::size_t i = 0; i < n; ++i) {
      x.q(i, t) = q[i];
      if (s.users[i].deferrable_at(t)) remaining[i] = std::max(0.0, remaining[i] - q[i] * dt);
    }
    x.supply[t] = gen;
  }
  out.welfare = welfare(s, x);
  return out;
}

double gap_upper_bound(const Scenario& s, const Allocation& x, const PriceSignal& multipliers) {
  for (double v : multipliers.p)
    if (!(v >= 0.0)) throw SolverError("gap bound needs nonnegative multipliers");
  // Nonnegative by weak duality; the clamp only removes round-off.
  return std::max(0.0, dual_value(s, multipliers) - welfare(s, x));
}

double gap_upper_bound(const Scenario& s, const GreedyResult& greedy) {
  return gap_upper_bound(s, greedy.allocation, greedy.multipliers);
}

}  // namespace gridnum
