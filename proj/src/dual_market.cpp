#include "gridnum/dual_market.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gridnum/spot.hpp"

namespace gridnum {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Consumption part of the user response: slot-wise demand outside windows,
// and for each deferrable window the multiplier mu of its energy equation
// found by bisection, q_t = clamp(demand(p_t + mu)).
std::vector<double> consumption_response(const UserModel& u, const PriceSignal& p, double dt) {
  const int T = static_cast<int>(p.size());
  std::vector<double> q(T);
  for (int t = 0; t < T; ++t) q[t] = std::clamp(u.utility.demand_at(t, p[t]), u.lower(t), u.upper(t));

  for (const auto& dl : u.deferrables) {
    const double total = dl.energy_required / dt;
    auto respond = [&](double mu, std::vector<double>& out) {
      double sum = 0.0;
      for (int t = dl.window_start; t <= dl.window_end; ++t) {
        const double v = std::clamp(u.utility.demand_at(t, p[t] + mu), u.lower(t), u.upper(t));
        out[t - dl.window_start] = v;
        sum += v;
      }
      return sum;
    };
    double mu_lo = kInf;
    double mu_hi = -kInf;
    for (int t = dl.window_start; t <= dl.window_end; ++t) {
      mu_lo = std::min(mu_lo, u.utility.marginal(t, u.upper(t)) - p[t]);
      mu_hi = std::max(mu_hi, u.utility.marginal(t, u.lower(t)) - p[t]);
    }
    mu_lo -= 1.0;
    mu_hi += 1.0;
    std::vector<double> buf(dl.length());
    for (int it = 0; it < 300; ++it) {
      const double mid = 0.5 * (mu_lo + mu_hi);
      if (mid <= mu_lo || mid >= mu_hi) break;
      if (respond(mid, buf) >= total)
        mu_lo = mid;
      else
        mu_hi = mid;
    }
    // Interpolate between the two bracket responses; they differ only on
    // slots that are indifferent at the multiplier.
    std::vector<double> below(dl.length());
    std::vector<double> above(dl.length());
    const double s_below = respond(mu_hi, below);
    const double s_above = respond(mu_lo, above);
    const double theta = s_above > s_below ? std::clamp((total - s_below) / (s_above - s_below), 0.0, 1.0) : 0.0;
    for (int k = 0; k < dl.length(); ++k) q[dl.window_start + k] = below[k] + theta * (above[k] - below[k]);
  }
  return q;
}

// Concave piecewise-linear function on [lo, lo + sum of lengths], given by
// its value at lo and segments of decreasing slope.
struct ConcavePL {
  double lo = 0.0;
  double v_lo = 0.0;
  std::vector<std::pair<double, double>> seg;  // (length, slope)

  double hi() const {
    double h = lo;
    for (const auto& [len, slope] : seg) h += len;
    return h;
  }

  double value(double x) const {
    double v = v_lo;
    double at = lo;
    for (const auto& [len, slope] : seg) {
      if (x <= at + len) return v + slope * (x - at);
      v += slope * len;
      at += len;
    }
    return v;
  }

  std::vector<double> breakpoints() const {
    std::vector<double> out{lo};
    double at = lo;
    for (const auto& [len, slope] : seg) {
      at += len;
      out.push_back(at);
    }
    return out;
  }

  /// Restriction to [a, b] (assumed to overlap the domain).
  ConcavePL restrict(double a, double b) const {
    ConcavePL out;
    out.lo = std::max(lo, a);
    out.v_lo = value(out.lo);
    const double top = std::min(hi(), b);
    double at = lo;
    for (const auto& [len, slope] : seg) {
      const double s0 = std::max(at, out.lo);
      const double s1 = std::min(at + len, top);
      if (s1 > s0) out.seg.emplace_back(s1 - s0, slope);
      at += len;
    }
    return out;
  }
};

// max_y V(y) + phi(s - y) for concave PL V and phi: domains add and slope
// sequences merge.
ConcavePL sup_convolution(const ConcavePL& v, const ConcavePL& phi) {
  ConcavePL out;
  out.lo = v.lo + phi.lo;
  out.v_lo = v.v_lo + phi.v_lo;
  std::merge(v.seg.begin(), v.seg.end(), phi.seg.begin(), phi.seg.end(), std::back_inserter(out.seg),
             [](const auto& x, const auto& y) { return x.second > y.second; });
  std::erase_if(out.seg, [](const auto& sg) { return sg.first <= 0.0; });
  return out;
}

double supply_right_slope(const ProviderCost& c, int t, double price) {
  return price >= c.c1[t] && price < c.c1[t] + c.c2[t] * c.capacity[t] ? 1.0 / c.c2[t] : 0.0;
}

double spot_right_slope(const SpotMarket& m, int t, double price) {
  if (m.kappa[t] <= 0.0) return 0.0;
  return price >= m.pi0[t] && price < m.pi0[t] + m.kappa[t] * m.g_max[t] ? 1.0 / m.kappa[t] : 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------

DualConfig DualConfig::for_scenario(const Scenario& s, bool include_spot) {
  DualConfig cfg;
  double ld = 0.0;
  for (int t = 0; t < s.slots(); ++t) {
    double acc = 1.0 / s.provider.c2[t];
    if (include_spot && s.spot && s.spot->kappa[t] > 0.0) acc += 1.0 / s.spot->kappa[t];
    for (const auto& u : s.users) {
      const auto& ut = u.utility;
      if (ut.kind == UtilityKind::quadratic) {
        acc += ut.a[t];
      } else if (ut.b[t] > 0.0) {
        const double z = ut.a[t] + u.upper(t);
        acc += z * z / ut.b[t];
      }
    }
    ld = std::max(ld, acc);
  }
  cfg.gamma0 = 1.0 / ld;
  return cfg;
}

void validate(const DualConfig& cfg) {
  if (!(cfg.gamma0 > 0.0)) throw SolverError("gamma0 must be positive");
  if (!(cfg.tol_gap > 0.0) || !(cfg.tol_balance > 0.0)) throw SolverError("tolerances must be positive");
  if (cfg.max_rounds < 1) throw SolverError("max_rounds must be at least 1");
}

BatteryResponse battery_best_response(const Battery& b, const PriceSignal& p, double dt) {
  const int T = static_cast<int>(p.size());
  const double eta = b.efficiency;
  const double up = eta * b.charge_rate_max * dt;  // largest level increase per slot
  const double down = b.discharge_rate_max * dt;   // largest level decrease per slot

  // Backward pass: V[t](s) = best value from slot t on with level s.
  std::vector<ConcavePL> V(T + 1);
  V[T].lo = b.initial_level;
  if (b.capacity > b.initial_level) V[T].seg.emplace_back(b.capacity - b.initial_level, 0.0);
  for (int t = T - 1; t >= 0; --t) {
    const double price = std::max(0.0, p[t]);
    ConcavePL phi;
    phi.lo = -up;
    phi.v_lo = -price * up / eta;
    if (up > 0.0) phi.seg.emplace_back(up, price / eta);
    if (down > 0.0) phi.seg.emplace_back(down, price);
    V[t] = sup_convolution(V[t + 1], phi).restrict(0.0, b.capacity);
  }

  // Forward recovery: best next level among the breakpoints of the
  // piecewise-linear one-step objective, preferring the smallest move.
  BatteryResponse out;
  out.r.assign(T, 0.0);
  out.d.assign(T, 0.0);
  double level = b.initial_level;
  for (int t = 0; t < T; ++t) {
    const double price = std::max(0.0, p[t]);
    const auto& next = V[t + 1];
    const double a = std::max(level - down, next.lo);
    const double z = std::min(level + up, next.hi());
    auto score = [&](double y) {
      const double move = y - level;
      return next.value(y) - (move > 0.0 ? price * move / eta : price * move);
    };
    std::vector<double> cand{a, z};
    if (level > a && level < z) cand.push_back(level);
    for (double x : next.breakpoints())
      if (x > a && x < z) cand.push_back(x);
    double best_y = a;
    double best = score(a);
    for (double y : cand) {
      const double v = score(y);
      const double tol = 1e-13 * std::max(1.0, std::abs(best));
      if (v > best + tol || (v >= best - tol && std::abs(y - level) < std::abs(best_y - level))) {
        best = std::max(best, v);
        best_y = y;
      }
    }
    const double move = best_y - level;
    if (move > 0.0) {
      out.r[t] = std::min(b.charge_rate_max, move / (eta * dt));
    } else if (move < 0.0) {
      out.d[t] = std::min(b.discharge_rate_max, -move / dt);
    }
    level = std::clamp(level + dt * (eta * out.r[t] - out.d[t]), 0.0, b.capacity);
  }
  for (int t = 0; t < T; ++t) out.value += dt * p[t] * (out.d[t] - out.r[t]);
  return out;
}

UserResponse user_best_response(const UserModel& u, const PriceSignal& p, double dt) {
  const int T = static_cast<int>(p.size());
  UserResponse out;
  out.q = consumption_response(u, p, dt);
  out.r.assign(T, 0.0);
  out.d.assign(T, 0.0);
  for (int t = 0; t < T; ++t) out.surplus += dt * (u.utility.value(t, out.q[t]) - p[t] * out.q[t]);
  if (u.battery) {
    auto br = battery_best_response(*u.battery, p, dt);
    out.r = std::move(br.r);
    out.d = std::move(br.d);
    out.surplus += br.value;
  }
  return out;
}

std::vector<double> user_response_slope(const UserModel& u, const PriceSignal& p, const UserResponse& resp) {
  if (u.battery) return {};
  const int T = static_cast<int>(p.size());
  std::vector<double> slope(T, 0.0);
  for (int t = 0; t < T; ++t) {
    if (u.deferrable_at(t)) continue;
    const double x = u.utility.demand_at(t, p[t]);
    if (x > u.lower(t) && x <= u.upper(t)) slope[t] = u.utility.demand_slope(t, p[t]);
  }
  // Inside a window the energy equation couples the slots: with interior set
  // J and local slopes s_j, dq_t/dp_t = s_t (1 - s_t / sum_J s_j).
  for (const auto& dl : u.deferrables) {
    double sum = 0.0;
    std::vector<double> local(dl.length(), 0.0);
    for (int t = dl.window_start; t <= dl.window_end; ++t) {
      const double q = resp.q[t];
      if (q > u.lower(t) && q < u.upper(t)) {
        local[t - dl.window_start] = 1.0 / u.utility.curvature(t, q);
        sum += local[t - dl.window_start];
      }
    }
    for (int t = dl.window_start; t <= dl.window_end; ++t) {
      const double sl = local[t - dl.window_start];
      slope[t] = sum != 0.0 ? sl * (1.0 - sl / sum) : 0.0;
    }
  }
  return slope;
}

std::vector<double> provider_supply_response(const ProviderCost& c, const PriceSignal& p) {
  std::vector<double> s(p.size());
  for (std::size_t t = 0; t < p.size(); ++t)
    s[t] = std::clamp((p[t] - c.c1[t]) / c.c2[t], 0.0, c.capacity[t]);
  return s;
}

PriceSignal price_update(const PriceSignal& p, const std::vector<double>& demand, const std::vector<double>& supply,
                         double gamma) {
  if (demand.size() != p.size() || supply.size() != p.size()) throw DimensionError("price_update: length mismatch");
  PriceSignal out = p;
  for (std::size_t t = 0; t < p.size(); ++t) out[t] = std::max(0.0, p[t] + gamma * (demand[t] - supply[t]));
  return out;
}

double dual_value(const Scenario& s, const PriceSignal& p, bool include_spot) {
  if (static_cast<int>(p.size()) != s.slots()) throw DimensionError("price vector length does not match horizon");
  const double dt = s.dt();
  double total = 0.0;
  for (const auto& u : s.users) total += user_best_response(u, p, dt).surplus;
  const bool spot = include_spot && s.spot;
  const auto resp = spot ? provider_spot_response(s.provider, *s.spot, p)
                         : ProviderSpotResponse{provider_supply_response(s.provider, p), std::vector<double>(p.size())};
  for (int t = 0; t < s.slots(); ++t) {
    double profit = p[t] * (resp.supply[t] + resp.spot_g[t]) - s.provider.cost(t, resp.supply[t]);
    if (spot) profit -= s.spot->outlay(t, resp.spot_g[t]);
    total += dt * profit;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Agents

RoundMessage UserAgent::respond(const RoundMessage& broadcast) {
  const PriceSignal p{broadcast.payload};
  if (static_cast<int>(p.size()) != static_cast<int>(u_.q_max.size()))
    throw DimensionError("broadcast length does not match horizon");
  auto resp = user_best_response(u_, p, dt_);
  RoundMessage m;
  m.direction = Direction::demand_reply;
  m.round = broadcast.round;
  m.payload.resize(p.size());
  for (std::size_t t = 0; t < p.size(); ++t) m.payload[t] = resp.q[t] + resp.r[t] - resp.d[t];
  m.value = resp.surplus;
  if (report_slope_) {
    auto sl = user_response_slope(u_, p, resp);
    if (!sl.empty()) m.slope = std::move(sl);
  }
  m.q = std::move(resp.q);
  m.r = std::move(resp.r);
  m.d = std::move(resp.d);
  return m;
}

RoundMessage ProviderAgent::respond(const RoundMessage& broadcast) {
  const PriceSignal p{broadcast.payload};
  const std::size_t T = p.size();
  if (T != c_.c1.size()) throw DimensionError("broadcast length does not match horizon");
  const auto resp = m_ ? provider_spot_response(c_, *m_, p)
                       : ProviderSpotResponse{provider_supply_response(c_, p), std::vector<double>(T, 0.0)};
  RoundMessage m;
  m.direction = Direction::supply_reply;
  m.round = broadcast.round;
  m.payload.resize(T);
  m.supply = resp.supply;
  m.spot_g = resp.spot_g;
  for (std::size_t t = 0; t < T; ++t) {
    const int ti = static_cast<int>(t);
    m.payload[t] = resp.supply[t] + resp.spot_g[t];
    double profit = p[t] * m.payload[t] - c_.cost(ti, resp.supply[t]);
    if (m_) profit -= m_->outlay(ti, resp.spot_g[t]);
    m.value += dt_ * profit;
  }
  if (report_slope_) {
    std::vector<double> sl(T);
    for (std::size_t t = 0; t < T; ++t) {
      const int ti = static_cast<int>(t);
      sl[t] = supply_right_slope(c_, ti, p[t]) + (m_ ? spot_right_slope(*m_, ti, p[t]) : 0.0);
    }
    m.slope = std::move(sl);
  }
  return m;
}

std::vector<std::unique_ptr<Agent>> make_agents(const Scenario& s, bool include_spot, bool report_slope) {
  if (include_spot && !s.spot) throw SolverError("scenario has no spot market");
  std::vector<std::unique_ptr<Agent>> agents;
  for (const auto& u : s.users) agents.push_back(std::make_unique<UserAgent>(u, s.dt(), report_slope));
  agents.push_back(std::make_unique<ProviderAgent>(s.provider, include_spot ? s.spot : std::nullopt, s.dt(),
                                                   report_slope));
  return agents;
}

// ---------------------------------------------------------------------------
// Coordinator

PriceSignal SubgradientPolicy::next(const PriceSignal& p, const std::vector<double>& mismatch,
                                    const std::vector<RoundMessage>&, int k) {
  const double gamma = rule_ == StepRule::constant ? gamma0_ : gamma0_ / std::sqrt(static_cast<double>(k));
  PriceSignal out = p;
  for (std::size_t t = 0; t < p.size(); ++t) out[t] = std::max(0.0, p[t] + gamma * mismatch[t]);
  return out;
}

double projected_mismatch(const PriceSignal& p, const std::vector<double>& mismatch) {
  double m = 0.0;
  for (std::size_t t = 0; t < p.size(); ++t)
    m = std::max(m, p[t] > 0.0 ? std::abs(mismatch[t]) : std::max(0.0, mismatch[t]));
  return m;
}

MarketResult run_market(const Scenario& s, const DualConfig& cfg, MessageBus& bus, PricePolicy& policy,
                        bool include_spot) {
  validate(cfg);
  if (include_spot && !s.spot) throw SolverError("scenario has no spot market");
  const std::size_t n = s.users.size();
  const int T = s.slots();
  if (bus.agent_count() != n + 1) throw SolverError("bus must carry one agent per user plus the provider");

  PriceSignal p{s.provider.c1};
  Allocation avg_sum = make_allocation(s);
  std::vector<double> mismatch_sum(T, 0.0);
  int avg_count = 0;
  double best_dual = kInf;
  double best_primal = -kInf;
  Allocation best_alloc;
  Allocation last_alloc;
  TrajectoryLog log;
  MarketResult res;
  StopReason reason = StopReason::max_iters;
  double pm = kInf;
  int k = 1;

  auto consider = [&](Allocation cand) {
    if (!complete_provider_side(s, cand, include_spot)) return;
    if (!feasibility_residuals(s, cand).feasible(1e-9)) return;
    const double w = welfare(s, cand);
    if (w > best_primal) {
      best_primal = w;
      best_alloc = std::move(cand);
    }
  };

  for (;; ++k) {
    RoundMessage msg;
    msg.direction = Direction::price_broadcast;
    msg.round = k;
    msg.payload = p.p;
    if (cfg.record_prices) res.report.price_history.push_back(p.p);
    const auto replies = bus.exchange(msg);
    if (replies.size() != n + 1) throw BusError("wrong number of replies");

    std::vector<double> mismatch(T, 0.0);
    double dual = 0.0;
    Allocation x = make_allocation(s);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& r = replies[i];
      if (r.direction != Direction::demand_reply || static_cast<int>(r.payload.size()) != T)
        throw BusError("malformed demand reply");
      for (int t = 0; t < T; ++t) {
        mismatch[t] += r.payload[t];
        x.q(i, t) = r.q[t];
        x.r(i, t) = r.r[t];
        x.d(i, t) = r.d[t];
      }
      dual += r.value;
    }
    const auto& prov = replies[n];
    if (prov.direction != Direction::supply_reply || static_cast<int>(prov.payload.size()) != T)
      throw BusError("malformed supply reply");
    for (int t = 0; t < T; ++t) mismatch[t] -= prov.payload[t];
    dual += prov.value;
    best_dual = std::min(best_dual, dual);

    // Ergodic average restarted at powers of two.
    if ((k & (k - 1)) == 0) {
      avg_sum = make_allocation(s);
      mismatch_sum.assign(T, 0.0);
      avg_count = 0;
    }
    for (int t = 0; t < T; ++t) mismatch_sum[t] += mismatch[t];
    for (std::size_t e = 0; e < x.q.data().size(); ++e) {
      avg_sum.q.data()[e] += x.q.data()[e];
      avg_sum.r.data()[e] += x.r.data()[e];
      avg_sum.d.data()[e] += x.d.data()[e];
    }
    ++avg_count;
    Allocation avg = avg_sum;
    for (auto* m : {&avg.q, &avg.r, &avg.d})
      for (double& v : m->data()) v /= avg_count;

    last_alloc = x;
    consider(x);
    consider(std::move(avg));

    // Bang-bang storage responses never balance on their own; their average does.
    std::vector<double> mismatch_avg(T);
    for (int t = 0; t < T; ++t) mismatch_avg[t] = mismatch_sum[t] / avg_count;
    pm = std::min(projected_mismatch(p, mismatch), projected_mismatch(p, mismatch_avg));
    const double gap = best_dual - best_primal;
    IterateRecord rec{k, std::isfinite(best_primal) ? best_primal : kNaN, pm};
    rec.dual = dual;
    if (include_spot) {
      double g = 0.0;
      double price = 0.0;
      for (int t = 0; t < T; ++t) {
        g += prov.spot_g[t];
        price += s.spot->price(t, prov.spot_g[t]);
      }
      rec.spot_g = g;
      rec.spot_price = price / T;
    }
    log.push(rec);
    if (pm <= cfg.tol_balance && gap <= cfg.tol_gap) {
      reason = StopReason::kkt;
      break;
    }
    if (k >= cfg.max_rounds) break;
    p = policy.next(p, mismatch, replies, k);
    if (p.size() != static_cast<std::size_t>(T)) throw DimensionError("policy returned wrong price length");
  }

  if (!std::isfinite(best_primal)) {
    best_alloc = last_alloc;
    complete_provider_side(s, best_alloc, include_spot);
    best_primal = welfare(s, best_alloc);
  }
  IterateRecord fin{k, best_primal, pm};
  fin.dual = best_dual;
  if (include_spot && best_alloc.spot_g.size() == static_cast<std::size_t>(T)) {
    fin.spot_g = 0.0;
    fin.spot_price = 0.0;
    for (int t = 0; t < T; ++t) {
      fin.spot_g += best_alloc.spot_g[t];
      fin.spot_price += s.spot->price(t, best_alloc.spot_g[t]) / T;
    }
  }
  log.push_final(fin);
  res.prices = p;
  res.allocation = std::move(best_alloc);
  res.report.iterates = log.take();
  res.report.final_objective = best_primal;
  res.report.kkt_residual = pm;
  res.report.iterations = k;
  res.report.stop_reason = reason;
  res.dual_value = best_dual;
  res.primal_value = best_primal;
  res.rounds = k;
  return res;
}

MarketResult run_dual(const Scenario& s, const DualConfig& cfg, MessageBus& bus) {
  SubgradientPolicy policy(cfg);
  return run_market(s, cfg, bus, policy, false);
}

MarketResult run_dual(const Scenario& s, const DualConfig& cfg) {
  InProcessBus bus(make_agents(s, false, false));
  return run_dual(s, cfg, bus);
}

}  // namespace gridnum
