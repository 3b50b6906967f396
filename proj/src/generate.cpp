#include "gridnum/generate.hpp"

#include <algorithm>
#include <random>

namespace gridnum {

namespace {

// Platform-independent uniform draw on [lo, hi).
class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}
  double operator()(double lo, double hi) { return lo + (hi - lo) * ((rng_() >> 11) * 0x1p-53); }
  int index(int n) { return static_cast<int>((rng_() >> 11) % static_cast<std::uint64_t>(n)); }

 private:
  std::mt19937_64 rng_;
};

UserModel quadratic_user(Draw& draw, int T, int index) {
  UserModel u;
  u.id = "u" + std::to_string(index);
  u.utility.kind = UtilityKind::quadratic;
  for (int t = 0; t < T; ++t) {
    u.utility.a.push_back(draw(0.5, 2.0));
    u.utility.b.push_back(draw(1.0, 5.0));
  }
  const double cap = draw(4.0, 10.0);
  u.q_min.assign(T, 0.0);
  u.q_max.assign(T, cap);
  return u;
}

void fit_provider(Scenario& s, Draw& draw, double c1_lo, double c1_hi) {
  const int T = s.slots();
  double peak = 0.0;
  for (const auto& u : s.users) peak += *std::max_element(u.q_max.begin(), u.q_max.end());
  for (int t = 0; t < T; ++t) {
    s.provider.c1.push_back(draw(c1_lo, c1_hi));
    s.provider.c2.push_back(draw(0.1, 0.5));
    s.provider.capacity.push_back(peak + 1.0);
  }
}

}  // namespace

std::vector<std::string> scenario_templates() { return {"uniform", "peak", "myopia-trap"}; }

Scenario generate_scenario(const std::string& name, int T, int n_users, std::uint64_t seed) {
  if (T < 1 || n_users < 1) throw ValidationError("generator needs T >= 1 and at least one user");
  Draw draw(seed);
  Scenario s;
  s.horizon = {T, 1.0};
  s.seed = seed;

  if (name == "uniform" || name == "peak") {
    for (int i = 0; i < n_users; ++i) s.users.push_back(quadratic_user(draw, T, i));
    if (name == "peak") {
      const int len = std::max(1, T / 6);
      const int start = draw.index(T - len + 1);
      for (auto& u : s.users)
        for (int t = start; t < start + len; ++t) u.utility.b[t] *= draw(3.0, 5.0);
    }
    fit_provider(s, draw, 0.0, 0.5);
  } else if (name == "myopia-trap") {
    std::vector<double> c1(T);
    for (int t = 0; t < T; ++t) c1[t] = t < (T + 1) / 2 ? draw(2.0, 2.5) : draw(0.1, 0.3);
    for (int i = 0; i < n_users; ++i) {
      UserModel u;
      u.id = "u" + std::to_string(i);
      const double a = draw(1.0, 2.0);
      const double b = draw(3.0, 4.0);
      u.utility.a.assign(T, a);
      u.utility.b.assign(T, b);
      u.q_min.assign(T, 0.0);
      u.q_max.assign(T, a * b);
      // Half of what the user would draw at the bare marginal costs.
      double myopic = 0.0;
      for (int t = 0; t < T; ++t) myopic += std::clamp(a * (b - c1[t]), 0.0, a * b);
      u.deferrables.push_back({0, T - 1, 0.5 * myopic * s.horizon.slot_duration, a * b});
      s.users.push_back(std::move(u));
    }
    double peak = 0.0;
    for (const auto& u : s.users) peak += u.q_max[0];
    s.provider.c1 = c1;
    s.provider.c2.assign(T, 0.1);
    s.provider.capacity.assign(T, peak + 1.0);
  } else {
    throw ValidationError("unknown scenario template: " + name);
  }
  validate(s);
  return s;
}

}  // namespace gridnum
