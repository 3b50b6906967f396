#include "gridnum/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace gridnum {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

void require_length(const std::vector<double>& v, int T, const std::string& name) {
  require(static_cast<int>(v.size()) == T, name + " must have one entry per slot");
}

bool finite_all(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

double UtilityParams::value(int t, double q) const {
  if (kind == UtilityKind::quadratic) return b[t] * q - q * q / (2.0 * a[t]);
  return b[t] * std::log1p(q / a[t]);
}

double UtilityParams::marginal(int t, double q) const {
  if (kind == UtilityKind::quadratic) return b[t] - q / a[t];
  return b[t] / (a[t] + q);
}

double UtilityParams::curvature(int t, double q) const {
  if (kind == UtilityKind::quadratic) return -1.0 / a[t];
  const double z = a[t] + q;
  return -b[t] / (z * z);
}

double UtilityParams::demand_at(int t, double price) const {
  if (kind == UtilityKind::quadratic) return a[t] * (b[t] - price);
  if (price <= 0.0) return b[t] > 0.0 ? kInf : -a[t];
  return b[t] / price - a[t];
}

double UtilityParams::demand_slope(int t, double price) const {
  if (kind == UtilityKind::quadratic) return -a[t];
  if (price <= 0.0) return b[t] > 0.0 ? -kInf : 0.0;
  return -b[t] / (price * price);
}

const DeferrableLoad* UserModel::deferrable_at(int t) const {
  for (const auto& dl : deferrables)
    if (dl.covers(t)) return &dl;
  return nullptr;
}

double UserModel::upper(int t) const {
  const auto* dl = deferrable_at(t);
  return dl ? std::min(q_max[t], dl->per_slot_max) : q_max[t];
}

bool Scenario::has_batteries() const {
  return std::any_of(users.begin(), users.end(), [](const UserModel& u) { return u.battery.has_value(); });
}

bool Scenario::has_deferrables() const {
  return std::any_of(users.begin(), users.end(), [](const UserModel& u) { return !u.deferrables.empty(); });
}

double FeasibilityReport::max() const {
  return std::max({box, deferrable, battery_rate, battery_level, capacity, spot});
}

void validate(const Scenario& s) {
  const int T = s.horizon.slots;
  require(T >= 1, "horizon must have at least one slot");
  require(std::isfinite(s.horizon.slot_duration) && s.horizon.slot_duration > 0.0,
          "slot duration must be positive");
  require(!s.users.empty(), "scenario needs at least one user");
  const double dt = s.horizon.slot_duration;

  const auto& c = s.provider;
  require_length(c.c1, T, "provider c1");
  require_length(c.c2, T, "provider c2");
  require_length(c.capacity, T, "provider capacity");
  require(finite_all(c.c1) && finite_all(c.c2) && finite_all(c.capacity), "provider parameters must be finite");
  for (int t = 0; t < T; ++t) {
    require(c.c1[t] >= 0.0, "provider c1 must be nonnegative");
    require(c.c2[t] > 0.0, "provider c2 must be positive");
    require(c.capacity[t] >= 0.0, "provider capacity must be nonnegative");
  }

  if (s.spot) {
    const auto& m = *s.spot;
    require_length(m.pi0, T, "spot pi0");
    require_length(m.kappa, T, "spot kappa");
    require_length(m.g_max, T, "spot g_max");
    require(finite_all(m.pi0) && finite_all(m.kappa) && finite_all(m.g_max), "spot parameters must be finite");
    for (int t = 0; t < T; ++t) {
      require(m.pi0[t] >= 0.0, "spot pi0 must be nonnegative");
      require(m.kappa[t] >= 0.0, "spot kappa must be nonnegative");
      require(m.g_max[t] >= 0.0, "spot g_max must be nonnegative");
    }
  }

  for (const auto& u : s.users) {
    const std::string who = "user '" + u.id + "': ";
    require_length(u.utility.a, T, who + "utility a");
    require_length(u.utility.b, T, who + "utility b");
    require_length(u.q_min, T, who + "q_min");
    require_length(u.q_max, T, who + "q_max");
    require(finite_all(u.utility.a) && finite_all(u.utility.b) && finite_all(u.q_min) && finite_all(u.q_max),
            who + "parameters must be finite");
    for (int t = 0; t < T; ++t) {
      require(u.utility.a[t] > 0.0, who + "utility a must be positive");
      require(u.utility.b[t] >= 0.0, who + "utility b must be nonnegative");
      require(u.q_min[t] >= 0.0 && u.q_min[t] <= u.q_max[t], who + "consumption bounds must satisfy 0 <= q_min <= q_max");
    }
    for (std::size_t k = 0; k < u.deferrables.size(); ++k) {
      const auto& dl = u.deferrables[k];
      require(dl.window_start >= 0 && dl.window_start <= dl.window_end, who + "deferrable window is empty");
      require(dl.window_end < T, who + "deferrable window exceeds horizon");
      require(std::isfinite(dl.energy_required) && dl.energy_required >= 0.0,
              who + "deferrable energy must be nonnegative");
      require(std::isfinite(dl.per_slot_max) && dl.per_slot_max > 0.0, who + "deferrable per_slot_max must be positive");
      for (std::size_t j = 0; j < k; ++j) {
        const auto& o = u.deferrables[j];
        require(dl.window_end < o.window_start || o.window_end < dl.window_start,
                who + "overlapping deferrable windows");
      }
      double lo = 0.0;
      double hi = 0.0;
      for (int t = dl.window_start; t <= dl.window_end; ++t) {
        require(u.q_min[t] <= std::min(u.q_max[t], dl.per_slot_max), who + "infeasible deferrable load");
        lo += u.q_min[t] * dt;
        hi += std::min(u.q_max[t], dl.per_slot_max) * dt;
      }
      const double slack = 1e-12 * std::max(1.0, dl.energy_required);
      require(dl.energy_required <= dl.length() * dl.per_slot_max * dt + slack, who + "infeasible deferrable load");
      require(dl.energy_required <= hi + slack && dl.energy_required >= lo - slack, who + "infeasible deferrable load");
    }
    if (u.battery) {
      const auto& b = *u.battery;
      require(std::isfinite(b.capacity) && b.capacity >= 0.0, who + "battery capacity must be nonnegative");
      require(std::isfinite(b.charge_rate_max) && b.charge_rate_max >= 0.0, who + "battery charge rate must be nonnegative");
      require(std::isfinite(b.discharge_rate_max) && b.discharge_rate_max >= 0.0,
              who + "battery discharge rate must be nonnegative");
      require(b.efficiency > 0.0 && b.efficiency <= 1.0, who + "battery efficiency must lie in (0, 1]");
      require(b.initial_level >= 0.0 && b.initial_level <= b.capacity, who + "battery initial level outside [0, capacity]");
    }
  }

  // Worst-case load that a schedule may be forced to draw in a slot: full
  // deferrable rate inside windows, minimum elsewhere, plus full battery charge.
  for (int t = 0; t < T; ++t) {
    double forced = 0.0;
    for (const auto& u : s.users) {
      forced += u.deferrable_at(t) ? u.upper(t) : u.q_min[t];
      if (u.battery) forced += u.battery->charge_rate_max;
    }
    const double avail = c.capacity[t] + (s.spot ? s.spot->g_max[t] : 0.0);
    require(forced <= avail * (1.0 + 1e-12), "capacity cannot cover forced load in slot " + std::to_string(t));
  }
}

Allocation make_allocation(const Scenario& s) {
  const auto n = s.users.size();
  const auto T = static_cast<std::size_t>(s.slots());
  return Allocation{Matrix(n, T), Matrix(n, T), Matrix(n, T), std::vector<double>(T, 0.0), std::vector<double>(T, 0.0)};
}

void check_shape(const Scenario& s, const Allocation& x) {
  const auto n = s.users.size();
  const auto T = static_cast<std::size_t>(s.slots());
  auto ok = [&](const Matrix& m) { return m.rows() == n && m.cols() == T; };
  if (!ok(x.q) || !ok(x.r) || !ok(x.d) || x.supply.size() != T || x.spot_g.size() != T)
    throw DimensionError("allocation shape does not match scenario (" + std::to_string(n) + " users x " +
                         std::to_string(T) + " slots)");
}

std::vector<double> aggregate_load(const Scenario& s, const Allocation& x) {
  const int T = s.slots();
  std::vector<double> load(T, 0.0);
  for (std::size_t i = 0; i < s.users.size(); ++i)
    for (int t = 0; t < T; ++t) load[t] += x.q(i, t) + x.r(i, t) - x.d(i, t);
  return load;
}

std::vector<double> required_generation(const Scenario& s, const Allocation& x) {
  auto load = aggregate_load(s, x);
  for (std::size_t t = 0; t < load.size(); ++t) load[t] = std::max(0.0, load[t] - x.spot_g[t]);
  return load;
}

std::vector<double> battery_levels(const Battery& b, std::span<const double> charge, std::span<const double> discharge,
                                   double dt) {
  std::vector<double> level(charge.size() + 1);
  level[0] = b.initial_level;
  for (std::size_t t = 0; t < charge.size(); ++t)
    level[t + 1] = level[t] + dt * (b.efficiency * charge[t] - discharge[t]);
  return level;
}

double welfare(const Scenario& s, const Allocation& x) {
  check_shape(s, x);
  const int T = s.slots();
  const auto gen = required_generation(s, x);
  double total = 0.0;
  for (int t = 0; t < T; ++t) {
    double slot = 0.0;
    for (std::size_t i = 0; i < s.users.size(); ++i) slot += s.users[i].utility.value(t, x.q(i, t));
    slot -= s.provider.cost(t, gen[t]);
    if (s.spot) slot -= s.spot->outlay(t, x.spot_g[t]);
    total += s.dt() * slot;
  }
  return total;
}

Allocation welfare_gradient(const Scenario& s, const Allocation& x) {
  check_shape(s, x);
  const int T = s.slots();
  const double dt = s.dt();
  const auto load = aggregate_load(s, x);
  Allocation g = make_allocation(s);
  for (int t = 0; t < T; ++t) {
    const double own = load[t] - x.spot_g[t];
    const double mc = own > 0.0 ? s.provider.marginal(t, own) : 0.0;
    for (std::size_t i = 0; i < s.users.size(); ++i) {
      g.q(i, t) = dt * (s.users[i].utility.marginal(t, x.q(i, t)) - mc);
      g.r(i, t) = -dt * mc;
      g.d(i, t) = dt * mc;
    }
    g.spot_g[t] = dt * (mc - (s.spot ? s.spot->price(t, x.spot_g[t]) : 0.0));
  }
  return g;
}

FeasibilityReport feasibility_residuals(const Scenario& s, const Allocation& x) {
  check_shape(s, x);
  const int T = s.slots();
  const double dt = s.dt();
  FeasibilityReport rep;
  for (std::size_t i = 0; i < s.users.size(); ++i) {
    const auto& u = s.users[i];
    for (int t = 0; t < T; ++t) {
      const double q = x.q(i, t);
      rep.box = std::max({rep.box, u.lower(t) - q, q - u.upper(t)});
    }
    for (const auto& dl : u.deferrables) {
      double energy = 0.0;
      for (int t = dl.window_start; t <= dl.window_end; ++t) energy += x.q(i, t) * dt;
      rep.deferrable = std::max(rep.deferrable, std::abs(energy - dl.energy_required));
    }
    if (u.battery) {
      const auto& b = *u.battery;
      for (int t = 0; t < T; ++t) {
        rep.battery_rate = std::max({rep.battery_rate, -x.r(i, t), x.r(i, t) - b.charge_rate_max, -x.d(i, t),
                                     x.d(i, t) - b.discharge_rate_max});
      }
      const auto level = battery_levels(b, x.r.row(i), x.d.row(i), dt);
      for (double lv : level) rep.battery_level = std::max({rep.battery_level, -lv, lv - b.capacity});
      rep.battery_level = std::max(rep.battery_level, b.initial_level - level.back());
    } else {
      for (int t = 0; t < T; ++t)
        rep.battery_rate = std::max({rep.battery_rate, std::abs(x.r(i, t)), std::abs(x.d(i, t))});
    }
  }
  const auto gen = required_generation(s, x);
  for (int t = 0; t < T; ++t) {
    rep.capacity = std::max(rep.capacity, gen[t] - s.provider.capacity[t]);
    const double gmax = s.spot ? s.spot->g_max[t] : 0.0;
    rep.spot = std::max({rep.spot, -x.spot_g[t], x.spot_g[t] - gmax});
  }
  return rep;
}

namespace {

double supply_at(const ProviderCost& c, int t, double price) {
  return std::clamp((price - c.c1[t]) / c.c2[t], 0.0, c.capacity[t]);
}

// Right-continuous spot purchase response to a marginal price.
double spot_at(const SpotMarket& m, int t, double price) {
  if (m.kappa[t] > 0.0) return std::clamp((price - m.pi0[t]) / m.kappa[t], 0.0, m.g_max[t]);
  return price >= m.pi0[t] ? m.g_max[t] : 0.0;
}

}  // namespace

Dispatch dispatch(const ProviderCost& c, const SpotMarket* m, int t, double load) {
  Dispatch out;
  if (load <= 0.0) return out;
  const double gmax = m ? m->g_max[t] : 0.0;
  if (load > c.capacity[t] + gmax) {
    out.feasible = false;
    out.supply = c.capacity[t];
    out.spot_g = gmax;
    out.marginal_price = std::max(c.marginal(t, c.capacity[t]), m ? m->price(t, gmax) : 0.0);
    return out;
  }
  if (!m || gmax == 0.0) {
    out.supply = load;
    out.marginal_price = c.marginal(t, load);
    return out;
  }
  // Smallest marginal price at which both sources together cover the load.
  double lo = 0.0;
  double hi = std::max(c.marginal(t, c.capacity[t]), m->price(t, gmax)) + 1.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (supply_at(c, t, mid) + spot_at(*m, t, mid) >= load)
      hi = mid;
    else
      lo = mid;
  }
  const double own = supply_at(c, t, hi);
  out.spot_g = std::clamp(load - own, 0.0, gmax);
  out.supply = std::clamp(load - out.spot_g, 0.0, c.capacity[t]);
  out.marginal_price = hi;
  return out;
}

bool complete_provider_side(const Scenario& s, Allocation& x, bool include_spot) {
  const auto load = aggregate_load(s, x);
  const SpotMarket* m = include_spot && s.spot ? &*s.spot : nullptr;
  bool ok = true;
  for (int t = 0; t < s.slots(); ++t) {
    const auto dsp = dispatch(s.provider, m, t, load[t]);
    x.supply[t] = dsp.supply;
    x.spot_g[t] = dsp.spot_g;
    ok = ok && dsp.feasible;
  }
  return ok;
}

}  // namespace gridnum
