#include "gridnum/control.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "gridnum/format.hpp"

namespace gridnum {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

std::string to_string(SlotMode m) {
  switch (m) {
    case SlotMode::charge:
      return "charge";
    case SlotMode::idle:
      return "idle";
    case SlotMode::discharge:
      return "discharge";
  }
  return "unknown";
}

SingleUserSolution solve_single_user(const UserModel& u, const ProviderCost& c, const Horizon& h,
                                     const SolverConfig& cfg) {
  SingleUserSolution out;
  out.scenario.horizon = h;
  out.scenario.users = {u};
  out.scenario.provider = c;
  validate(out.scenario);
  SolverConfig inner = cfg;
  inner.include_spot = false;
  auto sol = solve_system(out.scenario, inner);
  out.allocation = sol.allocation;
  out.marginal_prices = sol.prices;
  out.report = sol.report;
  if (!u.battery) return out;

  const auto& b = *u.battery;
  const int T = h.slots;
  const double dt = h.slot_duration;
  const auto& nu = sol.storage_values[0];
  const auto& lam = sol.prices.p;
  const auto& x = out.allocation;
  const auto level = battery_levels(b, x.r.row(0), x.d.row(0), dt);
  auto& m = out.multipliers;
  m.storage_value = nu;
  m.level_lower.assign(T, 0.0);
  m.level_upper.assign(T, 0.0);
  m.charge_lower.assign(T, 0.0);
  m.charge_upper.assign(T, 0.0);
  m.discharge_lower.assign(T, 0.0);
  m.discharge_upper.assign(T, 0.0);
  double cs = 0.0;
  for (int k = 0; k < T; ++k) {
    // Stationarity in the level after slot k: nu_{k+1} - nu_k + lower - upper = 0.
    const double next = k + 1 < T ? nu[k + 1] : 0.0;
    const double diff = next - nu[k];
    m.level_upper[k] = std::max(0.0, diff);
    m.level_lower[k] = std::max(0.0, -diff);
    const double floor = k + 1 == T ? b.initial_level : 0.0;
    cs = std::max({cs, std::abs(m.level_upper[k] * (b.capacity - level[k + 1])),
                   std::abs(m.level_lower[k] * (level[k + 1] - floor))});

    const double g_r = dt * (b.efficiency * nu[k] - lam[k]);
    const double g_d = dt * (lam[k] - nu[k]);
    m.charge_upper[k] = std::max(0.0, g_r);
    m.charge_lower[k] = std::max(0.0, -g_r);
    m.discharge_upper[k] = std::max(0.0, g_d);
    m.discharge_lower[k] = std::max(0.0, -g_d);
    cs = std::max({cs, std::abs(m.charge_upper[k] * (b.charge_rate_max - x.r(0, k))),
                   std::abs(m.charge_lower[k] * x.r(0, k)),
                   std::abs(m.discharge_upper[k] * (b.discharge_rate_max - x.d(0, k))),
                   std::abs(m.discharge_lower[k] * x.d(0, k))});
  }
  out.complementary_slackness = cs;
  return out;
}

StructureReport verify_threshold_structure(const SingleUserSolution& sol, double tol) {
  const auto& s = sol.scenario;
  const auto& u = s.users.at(0);
  const auto& x = sol.allocation;
  const int T = s.slots();
  const double dt = s.dt();
  StructureReport rep;
  rep.complementary_slackness = sol.complementary_slackness;

  std::vector<double> level(T + 1, 0.0);
  double eps_level = 0.0;
  double eps_r = 0.0;
  double eps_d = 0.0;
  if (u.battery) {
    level = battery_levels(*u.battery, x.r.row(0), x.d.row(0), dt);
    eps_level = 1e-7 * std::max(1.0, u.battery->capacity);
    eps_r = 1e-7 * std::max(1.0, u.battery->charge_rate_max);
    eps_d = 1e-7 * std::max(1.0, u.battery->discharge_rate_max);
  }

  int segment = 0;
  for (int t = 0; t < T; ++t) {
    SlotStructure sl;
    sl.slot = t;
    sl.q = x.q(0, t);
    sl.r = x.r(0, t);
    sl.d = x.d(0, t);
    sl.level = level[t + 1];
    // The balance multiplier is the element of the cost subdifferential the
    // optimum selects; it differs from c'(S) only where generation is zero.
    sl.marginal_cost = sol.marginal_prices.size() == static_cast<std::size_t>(T) ? sol.marginal_prices[t]
                                                                                 : s.provider.marginal(t, x.supply[t]);
    sl.segment = segment;
    if (u.battery) {
      const auto& b = *u.battery;
      if (sl.r > eps_r) {
        sl.mode = SlotMode::charge;
        sl.rate_interior = sl.r < b.charge_rate_max - eps_r;
      } else if (sl.d > eps_d) {
        sl.mode = SlotMode::discharge;
        sl.rate_interior = sl.d < b.discharge_rate_max - eps_d;
      }
      const bool at_bound = level[t + 1] <= eps_level || level[t + 1] >= b.capacity - eps_level;
      if (t + 1 < T && at_bound) {
        rep.breaks.push_back(t);
        ++segment;
      }
    }
    rep.slots.push_back(sl);
  }

  double global_charge = -kInf;
  double global_discharge = kInf;
  const double eta = u.battery ? u.battery->efficiency : 1.0;
  for (int seg = 0; seg <= segment; ++seg) {
    SegmentStructure ss;
    ss.first = T;
    ss.last = -1;
    double vmin = kInf;
    double vmax = -kInf;
    double charge_thr = -kInf;
    double discharge_thr = kInf;
    for (const auto& sl : rep.slots) {
      if (sl.segment != seg) continue;
      ss.first = std::min(ss.first, sl.slot);
      ss.last = std::max(ss.last, sl.slot);
      if (sl.mode == SlotMode::charge) charge_thr = std::max(charge_thr, sl.marginal_cost);
      if (sl.mode == SlotMode::discharge) discharge_thr = std::min(discharge_thr, sl.marginal_cost);
      if (!sl.rate_interior) continue;
      const double implied = sl.mode == SlotMode::charge ? sl.marginal_cost / eta : sl.marginal_cost;
      vmin = std::min(vmin, implied);
      vmax = std::max(vmax, implied);
      ++ss.interior_slots;
    }
    if (ss.last < 0) continue;
    ss.spread = ss.interior_slots > 0 ? vmax - vmin : 0.0;
    ss.equalized = ss.spread <= tol;
    ss.charge_threshold = std::isfinite(charge_thr) ? charge_thr : NAN;
    ss.discharge_threshold = std::isfinite(discharge_thr) ? discharge_thr : NAN;
    const double disorder =
        std::isfinite(charge_thr) && std::isfinite(discharge_thr) ? std::max(0.0, charge_thr - discharge_thr) : 0.0;
    ss.ordered = disorder <= tol;
    rep.equalization_residual = std::max(rep.equalization_residual, ss.spread);
    rep.ordering_residual = std::max(rep.ordering_residual, disorder);
    rep.equalization_pass = rep.equalization_pass && ss.equalized;
    rep.threshold_pass = rep.threshold_pass && ss.ordered;
    global_charge = std::max(global_charge, charge_thr);
    global_discharge = std::min(global_discharge, discharge_thr);
    rep.segments.push_back(ss);
  }
  rep.charge_threshold = std::isfinite(global_charge) ? global_charge : NAN;
  rep.discharge_threshold = std::isfinite(global_discharge) ? global_discharge : NAN;
  return rep;
}

void write_structure_csv(std::ostream& out, const StructureReport& rep) {
  out << "slot,q,r,d,level,marginal_cost,segment\n";
  for (const auto& sl : rep.slots)
    out << sl.slot << ',' << fmt_num(sl.q) << ',' << fmt_num(sl.r) << ',' << fmt_num(sl.d) << ',' << fmt_num(sl.level)
        << ',' << fmt_num(sl.marginal_cost) << ',' << sl.segment << '\n';
}

void print_structure(std::ostream& out, const StructureReport& rep) {
  out << "marginal-cost equalization: " << (rep.equalization_pass ? "pass" : "fail")
      << " (residual " << fmt_sci(rep.equalization_residual) << ")\n";
  out << "threshold partition: " << (rep.threshold_pass ? "pass" : "fail") << " (charge <= "
      << fmt_num(rep.charge_threshold) << ", discharge >= " << fmt_num(rep.discharge_threshold) << ")\n";
  out << "complementary slackness: " << fmt_sci(rep.complementary_slackness) << '\n';
  for (const auto& seg : rep.segments)
    out << "segment slots " << seg.first << ".." << seg.last << ": interior " << seg.interior_slots << ", spread "
        << fmt_sci(seg.spread) << (seg.equalized ? "" : " (not equalized)") << '\n';
  for (const auto& sl : rep.slots)
    out << "slot " << sl.slot << ' ' << to_string(sl.mode) << " mc=" << fmt_num(sl.marginal_cost)
        << " level=" << fmt_num(sl.level) << '\n';
}

}  // namespace gridnum
