#include <doctest.h>

#include <sstream>

#include "gridnum/control.hpp"
#include "gridnum/scenario_io.hpp"
#include "support.hpp"

using namespace gridnum;
using namespace gridnum::testing;

namespace {

SingleUserSolution solve(const Scenario& s) { return solve_single_user(s.users.at(0), s.provider, s.horizon); }

}  // namespace

TEST_CASE("without storage each slot balances on its own") {
  Scenario s;
  s.horizon = {2, 1.0};
  s.users = {quad_user(2, 1.0, 4.0, 10.0)};
  s.provider = provider(2, 0.0, 1.0, 10.0);
  s.provider.c1 = {0.0, 2.0};
  const auto sol = solve(s);
  CHECK(sol.allocation.q(0, 0) == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(sol.allocation.q(0, 1) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(sol.multipliers.storage_value.empty());
  const auto rep = verify_threshold_structure(sol);
  CHECK(rep.pass());
  CHECK(rep.segments.size() == 1);
  CHECK(rep.segments[0].interior_slots == 0);
}

TEST_CASE("storage charges in the cheap slot and discharges in the dear one") {
  Scenario s;
  s.horizon = {2, 1.0};
  auto u = quad_user(2, 1.0, 4.0, 10.0);
  u.battery = Battery{50.0, 3.0, 3.0, 1.0, 0.0};
  s.users = {u};
  s.provider = provider(2, 0.2, 1.0, 20.0);
  s.provider.c1 = {0.2, 2.0};
  validate(s);
  const auto sol = solve(s);
  // Lossless storage: only the net flow is determined.
  CHECK(sol.allocation.r(0, 0) - sol.allocation.d(0, 0) > 0.1);
  CHECK(sol.allocation.d(0, 1) - sol.allocation.r(0, 1) > 0.1);
  const auto oracle = oracle_solve(s, 41, 6);
  CHECK(oracle.dimension == 4);
  CHECK(sol.report.final_objective == doctest::Approx(oracle.objective).epsilon(1e-4));
  CHECK(sol.report.final_objective >= oracle.objective - 1e-9);
}

TEST_CASE("a battery without capacity changes nothing") {
  Scenario s;
  s.horizon = {3, 1.0};
  auto u = quad_user(3, 1.0, 4.0, 10.0);
  s.users = {u};
  s.provider = provider(3, 0.2, 0.7, 20.0);
  s.provider.c1 = {0.2, 1.5, 0.4};
  const auto base = solve(s);
  s.users[0].battery = Battery{0.0, 2.0, 2.0, 0.9, 0.0};
  const auto with = solve(s);
  CHECK(max_abs_diff(with.allocation.q.data(), base.allocation.q.data()) <= 1e-6);
  for (double v : with.allocation.r.data()) CHECK(v <= 1e-9);
  for (double v : with.allocation.d.data()) CHECK(v <= 1e-9);
}

TEST_CASE("interior storage equalizes marginal cost") {
  const auto s = load_scenario(fixture("battery.json"));
  const auto sol = solve(s);
  const auto rep = verify_threshold_structure(sol);
  CHECK(rep.pass());
  CHECK(rep.equalization_residual <= 1e-4);
  CHECK(rep.segments.size() == 1);
  CHECK(rep.segments[0].interior_slots >= 2);
  CHECK(sol.complementary_slackness <= 1e-6);
  for (const auto& sl : rep.slots)
    if (sl.mode == SlotMode::charge) CHECK(sl.marginal_cost <= rep.discharge_threshold + 1e-4);
}

TEST_CASE("a capacity-pinned battery splits into segments") {
  const auto s = load_scenario(fixture("battery_pinned.json"));
  const auto sol = solve(s);
  const auto rep = verify_threshold_structure(sol);
  CHECK(rep.pass());
  CHECK_FALSE(rep.breaks.empty());
  CHECK(rep.segments.size() == rep.breaks.size() + 1);
  // Across segments the storage values differ, so a single global level would fail.
  double lo = INFINITY, hi = -INFINITY;
  for (double v : sol.multipliers.storage_value) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(hi - lo > 1e-2);
  for (std::size_t k = 1; k < rep.segments.size(); ++k) CHECK(rep.segments[k].first == rep.segments[k - 1].last + 1);
}

TEST_CASE("multiplier properties on random storage problems") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = battery_scenario(rng, 8);
    const auto sol = solve(s);
    REQUIRE(sol.report.converged());
    const auto rep = verify_threshold_structure(sol);
    CHECK(rep.pass());
    CHECK(sol.complementary_slackness <= 1e-6);
    for (double v : sol.multipliers.storage_value) CHECK(v >= -1e-9);
    auto plain = s.users[0];
    plain.battery.reset();
    const auto base = solve_single_user(plain, s.provider, s.horizon);
    CHECK(sol.report.final_objective >= base.report.final_objective - 1e-9);
  }
}

TEST_CASE("structure output") {
  const auto s = load_scenario(fixture("battery.json"));
  const auto rep = verify_threshold_structure(solve(s));
  std::ostringstream csv;
  write_structure_csv(csv, rep);
  const auto text = csv.str();
  CHECK(text.rfind("slot,q,r,d,level,marginal_cost,segment\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == s.slots() + 1);
  std::ostringstream out;
  print_structure(out, rep);
  CHECK(out.str().find("marginal-cost equalization: pass") != std::string::npos);
}
