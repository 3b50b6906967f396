#pragma once

// Test-only helpers. The welfare evaluator here is written straight from the
// objective's definition and shares no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "gridnum/model.hpp"

namespace gridnum::testing {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(GRIDNUM_FIXTURE_DIR) / name;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform(double lo, double hi) { return lo + (hi - lo) * ((gen_() >> 11) * 0x1p-53); }
  int integer(int lo, int hi) { return lo + static_cast<int>((gen_() >> 11) % static_cast<std::uint64_t>(hi - lo + 1)); }
  bool coin(double p = 0.5) { return uniform(0.0, 1.0) < p; }

 private:
  std::mt19937_64 gen_;
};

inline double reference_welfare(const Scenario& s, const Allocation& x) {
  double total = 0.0;
  for (int t = 0; t < s.horizon.slots; ++t) {
    double load = 0.0;
    double util = 0.0;
    for (std::size_t i = 0; i < s.users.size(); ++i) {
      const auto& par = s.users[i].utility;
      const double q = x.q(i, t);
      if (par.kind == UtilityKind::quadratic)
        util += par.b[t] * q - q * q / (2.0 * par.a[t]);
      else
        util += par.b[t] * std::log(1.0 + q / par.a[t]);
      load += q + x.r(i, t) - x.d(i, t);
    }
    double g = 0.0;
    double outlay = 0.0;
    if (s.spot && !x.spot_g.empty()) {
      g = x.spot_g[t];
      outlay = s.spot->pi0[t] * g + s.spot->kappa[t] * g * g / 2.0;
    }
    const double gen = std::max(0.0, load - g);
    const double cost = s.provider.c1[t] * gen + s.provider.c2[t] * gen * gen / 2.0;
    total += s.horizon.slot_duration * (util - cost - outlay);
  }
  return total;
}

struct RandomOptions {
  int T = 3;
  int users = 2;
  double deferrable_prob = 0.0;
  double battery_prob = 0.0;
  bool spot = false;
  bool log_utility = false;
};

/// Small valid scenario with quadratic costs. Deferrable windows never overlap.
inline Scenario random_scenario(Rng& rng, const RandomOptions& o) {
  Scenario s;
  s.horizon = {o.T, rng.coin() ? 1.0 : 0.5};
  for (int i = 0; i < o.users; ++i) {
    UserModel u;
    u.id = "r" + std::to_string(i);
    u.utility.kind = o.log_utility && rng.coin() ? UtilityKind::logarithmic : UtilityKind::quadratic;
    for (int t = 0; t < o.T; ++t) {
      u.utility.a.push_back(rng.uniform(0.5, 2.0));
      u.utility.b.push_back(rng.uniform(1.0, 5.0));
    }
    const double cap = rng.uniform(3.0, 8.0);
    u.q_min.assign(o.T, 0.0);
    u.q_max.assign(o.T, cap);
    if (o.T >= 2 && rng.coin(o.deferrable_prob)) {
      const int start = rng.integer(0, o.T - 2);
      const int end = rng.integer(start + 1, o.T - 1);
      const double per_slot = rng.uniform(0.5, 0.9) * cap;
      const double E = rng.uniform(0.2, 0.8) * per_slot * (end - start + 1) * s.horizon.slot_duration;
      u.deferrables.push_back({start, end, E, per_slot});
    }
    if (rng.coin(o.battery_prob)) {
      Battery b;
      b.capacity = rng.uniform(1.0, 4.0);
      b.charge_rate_max = rng.uniform(0.5, 2.0);
      b.discharge_rate_max = rng.uniform(0.5, 2.0);
      b.efficiency = rng.uniform(0.8, 1.0);
      b.initial_level = rng.coin() ? 0.0 : rng.uniform(0.0, 0.5) * b.capacity;
      u.battery = b;
    }
    s.users.push_back(std::move(u));
  }
  double peak = 0.0;
  for (const auto& u : s.users) peak += u.q_max[0] + (u.battery ? u.battery->charge_rate_max : 0.0);
  for (int t = 0; t < o.T; ++t) {
    s.provider.c1.push_back(rng.uniform(0.0, 1.0));
    s.provider.c2.push_back(rng.uniform(0.2, 1.0));
    s.provider.capacity.push_back(peak + 2.0);
  }
  if (o.spot) {
    SpotMarket m;
    for (int t = 0; t < o.T; ++t) {
      m.pi0.push_back(rng.uniform(0.5, 2.5));
      m.kappa.push_back(rng.uniform(0.1, 1.0));
      m.g_max.push_back(rng.uniform(1.0, 4.0));
    }
    s.spot = m;
  }
  validate(s);
  return s;
}

/// Single-user scenario with a battery and slot costs alternating cheap/dear.
inline Scenario battery_scenario(Rng& rng, int T) {
  Scenario s;
  s.horizon = {T, 1.0};
  UserModel u;
  u.id = "home";
  u.utility.a.assign(T, rng.uniform(0.5, 1.5));
  u.utility.b.assign(T, rng.uniform(3.0, 5.0));
  u.q_min.assign(T, 0.0);
  u.q_max.assign(T, 10.0);
  Battery b;
  b.capacity = rng.uniform(2.0, 20.0);
  b.charge_rate_max = rng.uniform(1.0, 5.0);
  b.discharge_rate_max = rng.uniform(1.0, 5.0);
  b.efficiency = rng.uniform(0.85, 1.0);
  u.battery = b;
  s.users.push_back(u);
  for (int t = 0; t < T; ++t) {
    s.provider.c1.push_back(rng.coin() ? rng.uniform(0.1, 0.5) : rng.uniform(1.2, 2.0));
    s.provider.c2.push_back(rng.uniform(0.3, 0.8));
    s.provider.capacity.push_back(30.0);
  }
  validate(s);
  return s;
}

/// Bare-bones helper for T-slot scenarios in tests.
inline UserModel quad_user(int T, double a, double b, double q_max, const std::string& id = "u") {
  UserModel u;
  u.id = id;
  u.utility.a.assign(T, a);
  u.utility.b.assign(T, b);
  u.q_min.assign(T, 0.0);
  u.q_max.assign(T, q_max);
  return u;
}

inline ProviderCost provider(int T, double c1, double c2, double capacity) {
  return {std::vector<double>(T, c1), std::vector<double>(T, c2), std::vector<double>(T, capacity)};
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < std::min(a.size(), b.size()); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return a.size() == b.size() ? m : INFINITY;
}

}  // namespace gridnum::testing
