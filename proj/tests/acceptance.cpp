// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number
// of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>

#include "gridnum/control.hpp"
#include "gridnum/dual_market.hpp"
#include "gridnum/generate.hpp"
#include "gridnum/greedy.hpp"
#include "gridnum/newton.hpp"
#include "gridnum/scenario_io.hpp"
#include "gridnum/spot.hpp"
#include "support.hpp"

using namespace gridnum;
using namespace gridnum::testing;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int lattice_dimension(const Scenario& s, bool include_spot) {
  int d = 0;
  for (const auto& u : s.users) {
    d += s.slots() - static_cast<int>(u.deferrables.size());
    if (u.battery) d += s.slots();
  }
  if (include_spot && s.spot) d += s.slots();
  return d;
}

Scenario t1() {
  Scenario s;
  s.horizon = {1, 1.0};
  s.users = {quad_user(1, 1.0, 4.0, 10.0)};
  s.provider = provider(1, 0.0, 1.0, 10.0);
  return s;
}

void add_batteries(Scenario& s, Rng& rng, int every) {
  for (std::size_t i = 0; i < s.users.size(); i += every) {
    Battery b;
    b.capacity = rng.uniform(2.0, 8.0);
    b.charge_rate_max = rng.uniform(0.5, 2.0);
    b.discharge_rate_max = rng.uniform(0.5, 2.0);
    b.efficiency = rng.uniform(0.85, 0.95);
    s.users[i].battery = b;
    for (auto& cap : s.provider.capacity) cap += b.charge_rate_max;
  }
  validate(s);
}

// Up to 20 random instances with lattice dimension <= 3 (mostly <= 2, so the
// 401-point lattice stays cheap), covering deferrables, batteries and spot.
Verdict oracle_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  int done = 0, big = 0, failures = 0;
  double worst_ratio = 0.0, worst_below = 0.0;
  while (done < 20) {
    RandomOptions o{.T = rng.integer(1, 3), .users = rng.integer(1, 2), .deferrable_prob = 0.6,
                    .battery_prob = 0.3, .spot = rng.coin(0.3), .log_utility = true};
    const auto s = random_scenario(rng, o);
    const bool spot = s.spot.has_value();
    const int d = lattice_dimension(s, spot);
    if (d > 3 || (d == 3 && big >= 4)) continue;
    big += d == 3;
    SolverConfig cfg;
    cfg.include_spot = spot;
    const auto sol = solve_system(s, cfg);
    const auto orc = oracle_solve(s, 401, 0, spot);
    const double diff = sol.report.final_objective - orc.base_objective;
    // The optimum is at least every lattice value and within the bound of the best one.
    const bool ok = diff >= -1e-9 && diff <= orc.error_bound;
    failures += !ok;
    worst_below = std::min(worst_below, diff);
    if (orc.error_bound > 0) worst_ratio = std::max(worst_ratio, std::abs(diff) / orc.error_bound);
    ++done;
  }
  const double secs = seconds_since(t0);
  Verdict v;
  v.pass = failures == 0 && secs < 60.0;
  v.detail = std::to_string(done) + " scenarios (" + std::to_string(big) + " of dimension 3), " +
             std::to_string(failures) + " outside bound, max |diff|/bound " + fmt("%.2e", worst_ratio) +
             ", min diff " + fmt("%.2e", worst_below) + ", " + fmt("%.1f", secs) + " s";
  return v;
}

Verdict hand_solved() {
  const auto s = t1();
  const auto sys = solve_system(s);
  const auto dual = run_dual(s, DualConfig::for_scenario(s));
  const auto newton = run_newton(s, NewtonConfig::for_scenario(s));
  double err = 0.0;
  auto track = [&](const Allocation& x, const PriceSignal& p, double w) {
    err = std::max({err, std::abs(x.q(0, 0) - 2.0), std::abs(p[0] - 2.0), std::abs(w - 4.0)});
  };
  track(sys.allocation, sys.prices, sys.report.final_objective);
  track(dual.allocation, dual.prices, dual.report.final_objective);
  track(newton.allocation, newton.prices, newton.report.final_objective);
  return {err <= 1e-3, "max error over q*, p*, welfare and three methods " + fmt("%.2e", err) + ", newton rounds " +
                           std::to_string(newton.rounds)};
}

std::vector<Scenario> market_fixtures() {
  Rng rng(77);
  std::vector<Scenario> out;
  out.push_back(generate_scenario("uniform", 24, 5, 1));
  out.push_back(generate_scenario("uniform", 24, 10, 2));
  out.push_back(generate_scenario("peak", 24, 5, 3));
  out.push_back(generate_scenario("peak", 24, 10, 4));
  out.push_back(generate_scenario("myopia-trap", 24, 3, 5));
  out.push_back(generate_scenario("myopia-trap", 24, 10, 6));
  out.push_back(generate_scenario("uniform", 24, 8, 7));
  auto b1 = generate_scenario("uniform", 24, 4, 8);
  add_batteries(b1, rng, 2);
  out.push_back(b1);
  auto b2 = generate_scenario("peak", 24, 6, 9);
  add_batteries(b2, rng, 3);
  out.push_back(b2);
  auto b3 = generate_scenario("myopia-trap", 24, 4, 10);
  add_batteries(b3, rng, 2);
  out.push_back(b3);
  return out;
}

Verdict decentralization() {
  double worst_gap = 0.0, worst_slack = INFINITY;
  int logged = 0, n = 0, converged = 0;
  for (const auto& s : market_fixtures()) {
    const auto sys = solve_system(s);
    const auto dual = run_dual(s, DualConfig::for_scenario(s));
    worst_gap = std::max(worst_gap, std::abs(dual.report.final_objective - sys.report.final_objective));
    converged += dual.report.converged();
    for (const auto& rec : dual.report.iterates) {
      // Against the best feasible primal so far and against the central optimum.
      worst_slack = std::min({worst_slack, rec.dual - rec.objective, rec.dual - sys.report.final_objective});
      ++logged;
    }
    ++n;
  }
  return {worst_gap <= 1e-3 && worst_slack >= -1e-9,
          std::to_string(n) + " fixtures (" + std::to_string(converged) + " converged), max |dual - system| " +
              fmt("%.2e", worst_gap) + ", min weak-duality slack " + fmt("%.2e", worst_slack) + " over " +
              std::to_string(logged) + " logged rounds"};
}

Verdict gradient_checks() {
  Rng rng(4242);
  double worst_w = 0.0, worst_h = 0.0;
  int wpoints = 0, hpoints = 0;
  while (wpoints < 100) {
    const auto s = random_scenario(rng, {.T = 3, .users = 2, .battery_prob = 0.5, .spot = rng.coin(),
                                         .log_utility = true});
    auto x = make_allocation(s);
    for (std::size_t i = 0; i < s.users.size(); ++i)
      for (int t = 0; t < s.slots(); ++t) {
        x.q(i, t) = rng.uniform(0.1, 0.9) * s.users[i].q_max[t];
        if (s.users[i].battery) {
          x.r(i, t) = rng.uniform(0.1, 0.9) * s.users[i].battery->charge_rate_max;
          x.d(i, t) = rng.uniform(0.1, 0.9) * s.users[i].battery->discharge_rate_max;
        }
        if (s.spot) x.spot_g[t] = rng.uniform(0.1, 0.5) * s.spot->g_max[t];
      }
    bool interior = true;
    for (double g : required_generation(s, x)) interior = interior && g > 1e-2;
    if (!interior) continue;
    const auto g = welfare_gradient(s, x);
    double num = 0.0, den = 0.0;
    const double h = 1e-6;
    auto probe = [&](double& v, double analytic) {
      const double keep = v;
      v = keep + h;
      const double up = welfare(s, x);
      v = keep - h;
      const double down = welfare(s, x);
      v = keep;
      const double fd = (up - down) / (2 * h);
      num += (fd - analytic) * (fd - analytic);
      den += analytic * analytic;
    };
    for (std::size_t e = 0; e < x.q.data().size(); ++e) probe(x.q.data()[e], g.q.data()[e]);
    for (std::size_t e = 0; e < x.r.data().size(); ++e) probe(x.r.data()[e], g.r.data()[e]);
    for (std::size_t e = 0; e < x.d.data().size(); ++e) probe(x.d.data()[e], g.d.data()[e]);
    if (s.spot)
      for (std::size_t t = 0; t < x.spot_g.size(); ++t) probe(x.spot_g[t], g.spot_g[t]);
    worst_w = std::max(worst_w, std::sqrt(num / den));
    ++wpoints;
  }
  while (hpoints < 100) {
    const auto s = random_scenario(rng, {.T = 3, .users = 3, .log_utility = true});
    PriceSignal p;
    for (int t = 0; t < 3; ++t) p.p.push_back(rng.uniform(0.5, 4.0));
    const auto d = dual_gradient_and_curvature(s, p);
    const double h = 1e-6;
    bool interior = true;
    double worst_here = 0.0;
    for (int t = 0; t < 3 && interior; ++t) {
      auto up = p, down = p;
      up[t] += h;
      down[t] -= h;
      const auto du = dual_gradient_and_curvature(s, up);
      const auto dd = dual_gradient_and_curvature(s, down);
      // A response clamp within the stencil makes the point non-interior.
      interior = std::abs(du.h[t] - dd.h[t]) <= 1e-3 * std::abs(d.h[t]);
      const double fd = (du.g[t] - dd.g[t]) / (2 * h);
      worst_here = std::max(worst_here, std::abs(fd - d.h[t]) / std::abs(d.h[t]));
    }
    if (!interior) continue;
    worst_h = std::max(worst_h, worst_here);
    ++hpoints;
  }
  return {worst_w <= 1e-4 && worst_h <= 1e-4,
          "100 + 100 interior points, max relative error: welfare gradient " + fmt("%.2e", worst_w) +
              ", dual curvature " + fmt("%.2e", worst_h)};
}

Verdict greedy_bound() {
  std::vector<Scenario> coupled, separable;
  Rng rng(555);
  for (int k = 0; k < 12; ++k)
    coupled.push_back(random_scenario(rng, {.T = rng.integer(2, 8), .users = rng.integer(1, 4), .deferrable_prob = 0.8,
                                            .battery_prob = 0.4, .log_utility = true}));
  for (std::uint64_t seed = 1; seed <= 6; ++seed) coupled.push_back(generate_scenario("myopia-trap", 6 + 2 * seed, 2, seed));
  coupled.push_back(load_scenario(fixture("myopia.json")));
  coupled.push_back(load_scenario(fixture("battery.json")));
  for (int k = 0; k < 4; ++k)
    separable.push_back(random_scenario(rng, {.T = rng.integer(1, 8), .users = rng.integer(1, 5), .log_utility = true}));
  separable.push_back(load_scenario(fixture("uncoupled.json")));
  separable.push_back(load_scenario(fixture("quad_uniform.json")));

  double worst_slack = INFINITY, min_bound = INFINITY, sep_worst = 0.0, max_gap = 0.0;
  for (const auto& s : coupled) {
    const auto g = greedy_solve(s);
    const double gap = solve_system(s).report.final_objective - g.welfare;
    const double bound = gap_upper_bound(s, g);
    worst_slack = std::min(worst_slack, bound - gap);
    min_bound = std::min(min_bound, bound);
    max_gap = std::max(max_gap, gap);
  }
  for (const auto& s : separable) {
    const auto g = greedy_solve(s);
    const double gap = solve_system(s).report.final_objective - g.welfare;
    sep_worst = std::max({sep_worst, std::abs(gap), gap_upper_bound(s, g)});
    min_bound = std::min(min_bound, gap_upper_bound(s, g));
  }
  const std::size_t n = coupled.size() + separable.size();
  return {worst_slack >= -1e-6 && min_bound >= 0.0 && sep_worst <= 1e-4,
          std::to_string(n) + " fixtures, min (bound - gap) " + fmt("%.2e", worst_slack) + ", largest gap " +
              fmt("%.3g", max_gap) + ", min bound " + fmt("%.2e", min_bound) + ", separable max(gap, bound) " +
              fmt("%.2e", sep_worst)};
}

Verdict spot_properties() {
  Rng rng(66);
  double reduction = 0.0;
  for (int k = 0; k < 5; ++k) {
    auto s = random_scenario(rng, {.T = 6, .users = 3, .deferrable_prob = 0.5, .battery_prob = 0.3, .log_utility = true});
    const auto base = solve_system(s);
    double bmax = 0.0;
    for (const auto& u : s.users)
      for (double b : u.utility.b) bmax = std::max(bmax, b);
    s.spot = SpotMarket{std::vector<double>(6, 100.0 * bmax), std::vector<double>(6, 0.5), std::vector<double>(6, 5.0)};
    SolverConfig cfg;
    cfg.include_spot = true;
    const auto with = solve_system(s, cfg);
    reduction = std::max({reduction, max_abs_diff(with.allocation.q.data(), base.allocation.q.data()),
                          max_abs_diff(with.allocation.r.data(), base.allocation.r.data()),
                          max_abs_diff(with.allocation.d.data(), base.allocation.d.data()),
                          max_abs_diff(with.allocation.supply, base.allocation.supply),
                          max_abs_diff(with.allocation.spot_g, std::vector<double>(6, 0.0))});
  }

  double rise = -INFINITY;
  for (int k = 0; k < 3; ++k) {
    auto s = random_scenario(rng, {.T = 5, .users = 3, .deferrable_prob = 0.5, .spot = true});
    SolverConfig cfg;
    cfg.include_spot = true;
    double prev = INFINITY;
    for (double pi0 : {0.25, 0.75, 1.25, 2.0, 4.0}) {
      s.spot->pi0.assign(5, pi0);
      const double w = solve_system(s, cfg).report.final_objective;
      if (std::isfinite(prev)) rise = std::max(rise, w - prev);
      prev = w;
    }
  }

  double consistency = 0.0;
  int oscillating = 0;
  auto fixed_points = std::vector<Scenario>{load_scenario(fixture("spot.json"))};
  for (int k = 0; k < 3; ++k) {
    auto s = random_scenario(rng, {.T = 4, .users = 2, .deferrable_prob = 0.5, .spot = true});
    s.spot->kappa.assign(4, 0.5);
    fixed_points.push_back(s);
  }
  for (const auto& s : fixed_points) {
    const auto fp = spot_interaction_fixed_point(s);
    consistency = std::max(consistency, fp.consistency);
    oscillating += fp.oscillation || !fp.converged;
  }
  return {reduction <= 1e-6 && rise <= 1e-9 && consistency <= 1e-4 && oscillating == 0,
          "priced-out max coordinate difference " + fmt("%.2e", reduction) + ", largest welfare rise along pi0 " +
              fmt("%.2e", rise) + ", fixed point vs internalized " + fmt("%.2e", consistency) + " on " +
              std::to_string(fixed_points.size()) + " instances"};
}

Verdict newton_acceleration() {
  bool ok = true;
  std::string detail;
  double price_diff = 0.0;
  for (const char* name : {"quad_uniform.json", "quad_peak.json", "quad_wide.json"}) {
    const auto s = load_scenario(fixture(name));
    const auto d = run_dual(s, DualConfig::for_scenario(s));
    const auto n = run_newton(s, NewtonConfig::for_scenario(s));
    ok = ok && d.report.converged() && n.report.converged() && 2 * n.rounds <= d.rounds;
    price_diff = std::max(price_diff, max_abs_diff(n.prices.p, d.prices.p));
    detail += std::string(detail.empty() ? "" : ", ") + name + " newton " + std::to_string(n.rounds) + " vs dual " +
              std::to_string(d.rounds);
  }
  return {ok && price_diff <= 1e-4, detail + ", max price difference " + fmt("%.2e", price_diff)};
}

Verdict control_structure() {
  double eq = 0.0, cs = 0.0, min_nu = INFINITY, min_gain = INFINITY;
  bool pass = true;
  int segments = 0;
  for (const char* name : {"battery.json", "battery_pinned.json"}) {
    const auto s = load_scenario(fixture(name));
    const auto sol = solve_single_user(s.users[0], s.provider, s.horizon);
    const auto rep = verify_threshold_structure(sol);
    eq = std::max(eq, rep.equalization_residual);
    cs = std::max(cs, sol.complementary_slackness);
    pass = pass && rep.pass();
    segments += static_cast<int>(rep.segments.size());
  }
  Rng rng(808);
  for (int k = 0; k < 10; ++k) {
    const auto s = battery_scenario(rng, 12);
    const auto sol = solve_single_user(s.users[0], s.provider, s.horizon);
    const auto rep = verify_threshold_structure(sol);
    eq = std::max(eq, rep.equalization_residual);
    cs = std::max(cs, sol.complementary_slackness);
    pass = pass && rep.pass();
    for (double v : sol.multipliers.storage_value) min_nu = std::min(min_nu, v);
    auto plain = s.users[0];
    plain.battery.reset();
    const auto base = solve_single_user(plain, s.provider, s.horizon);
    min_gain = std::min(min_gain, sol.report.final_objective - base.report.final_objective);
  }
  return {pass && eq <= 1e-4 && cs <= 1e-6 && min_nu >= 0.0 && min_gain >= -1e-9,
          "equalization residual " + fmt("%.2e", eq) + ", complementary slackness " + fmt("%.2e", cs) +
              ", min storage value " + fmt("%.3g", min_nu) + ", min storage welfare gain " + fmt("%.3g", min_gain) +
              " (2 fixtures, " + std::to_string(segments) + " segments, 10 random)"};
}

Verdict bus_transparency() {
  auto round12 = [](double v) { return std::round(v * 1e12) / 1e12; };
  bool same = true;
  int rounds = 0;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    for (const char* name : {"t1.json", "myopia.json", "quad_peak.json"}) {
      const auto s = load_scenario(fixture(name));
      auto cfg = DualConfig::for_scenario(s);
      cfg.record_prices = true;
      InProcessBus local(make_agents(s, false, false));
      TcpBus tcp(make_agents(s, false, false));
      const auto a = run_dual(s, cfg, local);
      const auto b = run_dual(s, cfg, tcp);
      same = same && a.rounds == b.rounds && a.report.price_history.size() == b.report.price_history.size() &&
             a.report.iterates.size() == b.report.iterates.size();
      for (std::size_t k = 0; same && k < a.report.price_history.size(); ++k)
        for (std::size_t t = 0; t < a.report.price_history[k].size(); ++t)
          same = same && round12(a.report.price_history[k][t]) == round12(b.report.price_history[k][t]);
      for (std::size_t k = 0; same && k < a.report.iterates.size(); ++k)
        same = same && round12(a.report.iterates[k].objective) == round12(b.report.iterates[k].objective) &&
               round12(a.report.iterates[k].kkt) == round12(b.report.iterates[k].kkt);
      rounds += b.rounds;
    }
  } catch (const BusError& e) {
    return {false, std::string("bus error: ") + e.what()};
  }
  return {same, std::string(same ? "identical" : "different") + " price and iterate sequences on 3 fixtures, " +
                    std::to_string(rounds) + " TCP rounds in " + fmt("%.2f", seconds_since(t0)) +
                    " s, no round timeout"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"oracle equivalence", oracle_equivalence},
      {"hand-solved fixture", hand_solved},
      {"decentralization fidelity", decentralization},
      {"gradient checks", gradient_checks},
      {"greedy gap-bound soundness", greedy_bound},
      {"spot reduction and monotonicity", spot_properties},
      {"newton acceleration", newton_acceleration},
      {"control structure", control_structure},
      {"bus transparency", bus_transparency},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Verdict v;
    try {
      v = criteria[k].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("criterion %zu %s: %s | %s\n", k + 1, v.pass ? "PASS" : "FAIL", criteria[k].first.c_str(),
                v.detail.c_str());
    std::fflush(stdout);
  }
  return failed;
}
