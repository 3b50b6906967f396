#include <doctest.h>

#include "gridnum/generate.hpp"
#include "gridnum/greedy.hpp"
#include "gridnum/scenario_io.hpp"
#include "gridnum/solver_core.hpp"
#include "support.hpp"

using namespace gridnum;
using namespace gridnum::testing;

TEST_CASE("greedy is exact without intertemporal coupling") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = random_scenario(rng, {.T = 5, .users = 3, .log_utility = true});
    const auto g = greedy_solve(s);
    const auto sol = solve_system(s);
    CHECK(max_abs_diff(g.allocation.q.data(), sol.allocation.q.data()) <= 1e-6);
    CHECK(std::abs(g.welfare - sol.report.final_objective) <= 1e-6);
    const double bound = gap_upper_bound(s, g);
    CHECK(bound >= 0.0);
    CHECK(bound <= 1e-4);
  }
}

TEST_CASE("a one-slot window leaves no choice") {
  Scenario s;
  s.horizon = {3, 1.0};
  auto u = quad_user(3, 1.0, 3.0, 5.0);
  u.deferrables.push_back({1, 1, 2.0, 4.0});
  s.users = {u, quad_user(3, 2.0, 2.5, 5.0, "v")};
  s.provider = provider(3, 0.3, 0.6, 20.0);
  validate(s);
  const auto g = greedy_solve(s);
  const auto sol = solve_system(s);
  CHECK(g.allocation.q(0, 1) == doctest::Approx(2.0));
  CHECK(std::abs(g.welfare - sol.report.final_objective) <= 1e-6);
}

TEST_CASE("myopic scheduling loses welfare on the trap fixture") {
  const auto s = load_scenario(fixture("myopia.json"));
  const auto g = greedy_solve(s);
  const auto sol = solve_system(s);
  const double gap = sol.report.final_objective - g.welfare;
  CHECK(gap > 1e-3);
  const double bound = gap_upper_bound(s, g);
  CHECK(bound >= gap - 1e-6);
}

TEST_CASE("greedy schedules are feasible") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    RandomOptions o{.T = rng.integer(1, 8), .users = rng.integer(1, 4), .deferrable_prob = 0.6,
                    .battery_prob = 0.6, .log_utility = true};
    const auto s = random_scenario(rng, o);
    const auto g = greedy_solve(s);
    CHECK(feasibility_residuals(s, g.allocation).max() <= 1e-8);
    CHECK(g.welfare == doctest::Approx(welfare(s, g.allocation)));
    for (double p : g.multipliers.p) CHECK(p >= 0.0);
  }
}

TEST_CASE("gap bound is sound") {
  Rng rng(8);
  for (int trial = 0; trial < 40; ++trial) {
    RandomOptions o{.T = rng.integer(2, 6), .users = rng.integer(1, 3), .deferrable_prob = 0.7,
                    .battery_prob = 0.5, .log_utility = true};
    const auto s = random_scenario(rng, o);
    const auto g = greedy_solve(s);
    const auto sol = solve_system(s);
    const double bound = gap_upper_bound(s, g);
    CHECK(bound >= 0.0);
    CHECK(bound >= sol.report.final_objective - g.welfare - 1e-6);
  }
}

TEST_CASE("bound holds for any feasible point and nonnegative multipliers") {
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = random_scenario(rng, {.T = 3, .users = 2, .deferrable_prob = 0.5, .battery_prob = 0.5});
    auto x = make_allocation(s);
    for (double& v : x.q.data()) v = rng.uniform(0.0, 5.0);
    x = projection(s, x);
    REQUIRE(complete_provider_side(s, x, false));
    PriceSignal lam;
    for (int t = 0; t < 3; ++t) lam.p.push_back(rng.uniform(0.0, 5.0));
    const double opt = solve_system(s).report.final_objective;
    CHECK(gap_upper_bound(s, x, lam) >= opt - welfare(s, x) - 1e-6);
  }
}

TEST_CASE("generated trap instances have a positive gap") {
  for (std::uint64_t seed : {1, 2, 3, 4}) {
    const auto s = generate_scenario("myopia-trap", 6, 2, seed);
    const auto g = greedy_solve(s);
    const double opt = solve_system(s).report.final_objective;
    CHECK(opt - g.welfare > 1e-3);
    CHECK(gap_upper_bound(s, g) >= opt - g.welfare - 1e-6);
  }
}
