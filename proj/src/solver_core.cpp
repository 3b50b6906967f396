#include "gridnum/solver_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

namespace gridnum {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double feas_tol(double scale) { return 1e-12 * std::max(1.0, std::abs(scale)); }

}  // namespace

void validate(const SolverConfig& cfg) {
  if (!(cfg.gamma0 > 0.0)) throw SolverError("gamma0 must be positive");
  if (!(cfg.tol_kkt > 0.0) || !(cfg.tol_step > 0.0)) throw SolverError("tolerances must be positive");
  if (cfg.max_iters < 1) throw SolverError("max_iters must be at least 1");
}

// ---------------------------------------------------------------------------
// Projections

void project_box_sum(std::span<double> x, std::span<const double> lo, std::span<const double> hi, double total) {
  const std::size_t n = x.size();
  double sum_lo = 0.0;
  double sum_hi = 0.0;
  double sum_x = 0.0;
  bool inside = true;
  for (std::size_t i = 0; i < n; ++i) {
    if (lo[i] > hi[i]) throw SolverError("infeasible constraint set: empty box");
    sum_lo += lo[i];
    sum_hi += hi[i];
    sum_x += x[i];
    inside = inside && x[i] >= lo[i] && x[i] <= hi[i];
  }
  const double tol = feas_tol(total) + 1e-12 * n * std::max(std::abs(sum_lo), std::abs(sum_hi));
  if (total < sum_lo - tol || total > sum_hi + tol) throw SolverError("infeasible constraint set: energy total out of reach");
  if (inside && std::abs(sum_x - total) <= tol) return;
  if (total >= sum_hi) {
    std::copy(hi.begin(), hi.end(), x.begin());
    return;
  }
  if (total <= sum_lo) {
    std::copy(lo.begin(), lo.end(), x.begin());
    return;
  }

  // F(tau) = sum clamp(x_i - tau, lo_i, hi_i) is nonincreasing and piecewise
  // linear with breakpoints x_i - hi_i (coordinate leaves hi) and x_i - lo_i
  // (coordinate reaches lo).
  struct Event {
    double tau;
    std::size_t index;
    int delta;  // change of slope
  };
  std::vector<Event> events;
  events.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    events.push_back({x[i] - hi[i], i, -1});
    events.push_back({x[i] - lo[i], i, +1});
  }
  std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    if (a.tau != b.tau) return a.tau < b.tau;
    if (a.index != b.index) return a.index < b.index;
    return a.delta < b.delta;
  });

  double value = sum_hi;
  double slope = 0.0;
  double tau = events.front().tau;
  double tau_star = events.back().tau;
  for (const auto& ev : events) {
    const double at_event = value + slope * (ev.tau - tau);
    if (at_event <= total) {
      tau_star = slope < 0.0 ? tau + (total - value) / slope : tau;
      break;
    }
    value = at_event;
    tau = ev.tau;
    slope += ev.delta;
  }
  for (std::size_t i = 0; i < n; ++i) x[i] = std::clamp(x[i] - tau_star, lo[i], hi[i]);
}

void restore_battery(const Battery& b, std::span<double> charge, std::span<double> discharge, double dt) {
  const std::size_t T = charge.size();
  const double tol = feas_tol(b.capacity);
  const double eta = b.efficiency;
  for (std::size_t t = 0; t < T; ++t) {
    charge[t] = std::clamp(charge[t], 0.0, b.charge_rate_max);
    discharge[t] = std::clamp(discharge[t], 0.0, b.discharge_rate_max);
  }

  double level = b.initial_level;
  for (std::size_t t = 0; t < T; ++t) {
    double next = level + dt * (eta * charge[t] - discharge[t]);
    if (next > b.capacity + tol) {
      charge[t] = std::max(0.0, (b.capacity - level + dt * discharge[t]) / (eta * dt));
      next = level + dt * (eta * charge[t] - discharge[t]);
      if (next > b.capacity + tol) {
        discharge[t] = std::min(b.discharge_rate_max, std::max(discharge[t], (level - b.capacity) / dt));
        next = level + dt * (eta * charge[t] - discharge[t]);
      }
    } else if (next < -tol) {
      discharge[t] = std::max(0.0, (level + dt * eta * charge[t]) / dt);
      next = level + dt * (eta * charge[t] - discharge[t]);
    }
    level = next;
  }
  if (level >= b.initial_level - tol) return;

  auto levels = battery_levels(b, charge, discharge, dt);
  double deficit = b.initial_level - levels.back();
  for (std::size_t tt = T; tt-- > 0 && deficit > tol;) {
    double headroom = kInf;
    for (std::size_t k = tt + 1; k <= T; ++k) headroom = std::min(headroom, b.capacity - levels[k]);
    double room = std::min(deficit, std::max(0.0, headroom));
    if (room <= 0.0) continue;
    const double less_out = std::min(discharge[tt] * dt, room);
    discharge[tt] -= less_out / dt;
    room -= less_out;
    const double more_in = std::min((b.charge_rate_max - charge[tt]) * eta * dt, room);
    charge[tt] += more_in / (eta * dt);
    for (std::size_t k = tt + 1; k <= T; ++k) levels[k] += less_out + more_in;
    deficit -= less_out + more_in;
  }
  if (deficit > tol) {
    // Idling is always feasible.
    std::fill(charge.begin(), charge.end(), 0.0);
    std::fill(discharge.begin(), discharge.end(), 0.0);
  }
}

Allocation projection(const Scenario& s, const Allocation& raw) {
  check_shape(s, raw);
  Allocation x = raw;
  const int T = s.slots();
  const double dt = s.dt();
  for (std::size_t i = 0; i < s.users.size(); ++i) {
    const auto& u = s.users[i];
    for (int t = 0; t < T; ++t) x.q(i, t) = std::clamp(x.q(i, t), u.lower(t), u.upper(t));
    for (const auto& dl : u.deferrables) {
      const auto len = static_cast<std::size_t>(dl.length());
      std::vector<double> lo(len);
      std::vector<double> hi(len);
      for (std::size_t k = 0; k < len; ++k) {
        lo[k] = u.lower(dl.window_start + static_cast<int>(k));
        hi[k] = u.upper(dl.window_start + static_cast<int>(k));
      }
      project_box_sum(x.q.row(i).subspan(dl.window_start, len), lo, hi, dl.energy_required / dt);
    }
    if (u.battery) {
      restore_battery(*u.battery, x.r.row(i), x.d.row(i), dt);
    } else {
      for (int t = 0; t < T; ++t) x.r(i, t) = x.d(i, t) = 0.0;
    }
  }
  for (int t = 0; t < T; ++t) {
    x.supply[t] = std::clamp(x.supply[t], 0.0, s.provider.capacity[t]);
    x.spot_g[t] = s.spot ? std::clamp(x.spot_g[t], 0.0, s.spot->g_max[t]) : 0.0;
  }
  return x;
}

// ---------------------------------------------------------------------------
// Flattened problem for the augmented-Lagrangian solver

namespace {

enum class VarKind { q, r, d, level, supply, spot };

struct Var {
  VarKind kind;
  int user;
  int t;
  double lo;
  double hi;
};

class FlatProblem {
 public:
  FlatProblem(const Scenario& s, bool include_spot) : s_(s), spot_(include_spot && s.spot.has_value()) {
    const int T = s.slots();
    const double dt = s.dt();
    const auto n_users = s.users.size();
    q_off_.assign(n_users, -1);
    r_off_.assign(n_users, -1);
    d_off_.assign(n_users, -1);
    lv_off_.assign(n_users, -1);
    dyn_row_.assign(n_users, -1);

    for (std::size_t i = 0; i < n_users; ++i) {
      const auto& u = s.users[i];
      q_off_[i] = static_cast<int>(vars_.size());
      for (int t = 0; t < T; ++t) vars_.push_back({VarKind::q, int(i), t, u.lower(t), u.upper(t)});
      for (const auto& dl : u.deferrables) {
        Group g;
        for (int t = dl.window_start; t <= dl.window_end; ++t) g.idx.push_back(q_off_[i] + t);
        g.total = dl.energy_required / dt;
        groups_.push_back(std::move(g));
      }
      if (u.battery) {
        const auto& b = *u.battery;
        r_off_[i] = static_cast<int>(vars_.size());
        for (int t = 0; t < T; ++t) vars_.push_back({VarKind::r, int(i), t, 0.0, b.charge_rate_max});
        d_off_[i] = static_cast<int>(vars_.size());
        for (int t = 0; t < T; ++t) vars_.push_back({VarKind::d, int(i), t, 0.0, b.discharge_rate_max});
        lv_off_[i] = static_cast<int>(vars_.size());
        for (int t = 0; t < T; ++t)
          vars_.push_back({VarKind::level, int(i), t, t == T - 1 ? b.initial_level : 0.0, b.capacity});
      }
    }
    supply_off_ = static_cast<int>(vars_.size());
    for (int t = 0; t < T; ++t) vars_.push_back({VarKind::supply, -1, t, 0.0, s.provider.capacity[t]});
    if (spot_) {
      spot_off_ = static_cast<int>(vars_.size());
      for (int t = 0; t < T; ++t) vars_.push_back({VarKind::spot, -1, t, 0.0, s.spot->g_max[t]});
    }

    // Balance rows: dt * (sum_i (q + r - d) - S - g) <= 0.
    for (int t = 0; t < T; ++t) {
      begin_row(0.0, false);
      for (std::size_t i = 0; i < n_users; ++i) {
        add(q_off_[i] + t, dt);
        if (r_off_[i] >= 0) {
          add(r_off_[i] + t, dt);
          add(d_off_[i] + t, -dt);
        }
      }
      add(supply_off_ + t, -dt);
      if (spot_) add(spot_off_ + t, -dt);
    }
    // Level dynamics: s_{k+1} - s_k - dt*eta*r_k + dt*d_k = (k == 0 ? s_0 : 0).
    for (std::size_t i = 0; i < n_users; ++i) {
      if (!s.users[i].battery) continue;
      const auto& b = *s.users[i].battery;
      dyn_row_[i] = rows();
      for (int k = 0; k < T; ++k) {
        begin_row(k == 0 ? b.initial_level : 0.0, true);
        add(lv_off_[i] + k, 1.0);
        if (k > 0) add(lv_off_[i] + k - 1, -1.0);
        add(r_off_[i] + k, -dt * b.efficiency);
        add(d_off_[i] + k, dt);
      }
    }
    row_start_.push_back(static_cast<int>(col_.size()));

    // Curvature bound of the (separable) objective.
    lf_ = 0.0;
    for (const auto& v : vars_) {
      switch (v.kind) {
        case VarKind::q: {
          const auto& ut = s.users[v.user].utility;
          const double curv = ut.kind == UtilityKind::quadratic
                                  ? 1.0 / ut.a[v.t]
                                  : ut.b[v.t] / ((ut.a[v.t] + v.lo) * (ut.a[v.t] + v.lo));
          lf_ = std::max(lf_, dt * curv);
          break;
        }
        case VarKind::supply:
          lf_ = std::max(lf_, dt * s.provider.c2[v.t]);
          break;
        case VarKind::spot:
          lf_ = std::max(lf_, dt * s.spot->kappa[v.t]);
          break;
        default:
          break;
      }
    }
    // ||A||^2 <= max_row sum_v |A_rv| * colsum_v.
    std::vector<double> colsum(vars_.size(), 0.0);
    for (std::size_t k = 0; k < col_.size(); ++k) colsum[col_[k]] += std::abs(val_[k]);
    a2_ = 0.0;
    for (int r = 0; r < rows(); ++r) {
      double acc = 0.0;
      for (int k = row_start_[r]; k < row_start_[r + 1]; ++k) acc += std::abs(val_[k]) * colsum[col_[k]];
      a2_ = std::max(a2_, acc);
    }
  }

  int size() const { return static_cast<int>(vars_.size()); }
  int rows() const { return static_cast<int>(rhs_.size()); }
  double lf() const { return lf_; }
  double a2() const { return a2_; }
  bool equality(int r) const { return eq_[r] != 0; }

  double objective(const std::vector<double>& x) const {
    const double dt = s_.dt();
    double f = 0.0;
    for (std::size_t k = 0; k < vars_.size(); ++k) {
      const auto& v = vars_[k];
      switch (v.kind) {
        case VarKind::q:
          f += dt * s_.users[v.user].utility.value(v.t, x[k]);
          break;
        case VarKind::supply:
          f -= dt * s_.provider.cost(v.t, x[k]);
          break;
        case VarKind::spot:
          f -= dt * s_.spot->outlay(v.t, x[k]);
          break;
        default:
          break;
      }
    }
    return f;
  }

  void gradient(const std::vector<double>& x, std::vector<double>& g) const {
    const double dt = s_.dt();
    for (std::size_t k = 0; k < vars_.size(); ++k) {
      const auto& v = vars_[k];
      switch (v.kind) {
        case VarKind::q:
          g[k] = dt * s_.users[v.user].utility.marginal(v.t, x[k]);
          break;
        case VarKind::supply:
          g[k] = -dt * s_.provider.marginal(v.t, x[k]);
          break;
        case VarKind::spot:
          g[k] = -dt * s_.spot->price(v.t, x[k]);
          break;
        default:
          g[k] = 0.0;
      }
    }
  }

  /// Constraint values h = A x - b.
  void residuals(const std::vector<double>& x, std::vector<double>& h) const {
    for (int r = 0; r < rows(); ++r) {
      double acc = -rhs_[r];
      for (int k = row_start_[r]; k < row_start_[r + 1]; ++k) acc += val_[k] * x[col_[k]];
      h[r] = acc;
    }
  }

  /// g -= A^T w.
  void subtract_transpose(const std::vector<double>& w, std::vector<double>& g) const {
    for (int r = 0; r < rows(); ++r) {
      if (w[r] == 0.0) continue;
      for (int k = row_start_[r]; k < row_start_[r + 1]; ++k) g[col_[k]] -= val_[k] * w[r];
    }
  }

  void project(std::vector<double>& x) const {
    for (std::size_t k = 0; k < vars_.size(); ++k) x[k] = std::clamp(x[k], vars_[k].lo, vars_[k].hi);
    for (const auto& g : groups_) {
      std::vector<double> buf(g.idx.size());
      std::vector<double> lo(g.idx.size());
      std::vector<double> hi(g.idx.size());
      for (std::size_t k = 0; k < g.idx.size(); ++k) {
        buf[k] = x[g.idx[k]];
        lo[k] = vars_[g.idx[k]].lo;
        hi[k] = vars_[g.idx[k]].hi;
      }
      project_box_sum(buf, lo, hi, g.total);
      for (std::size_t k = 0; k < g.idx.size(); ++k) x[g.idx[k]] = buf[k];
    }
  }

  Allocation to_allocation(const std::vector<double>& x) const {
    Allocation a = make_allocation(s_);
    const int T = s_.slots();
    for (std::size_t i = 0; i < s_.users.size(); ++i) {
      for (int t = 0; t < T; ++t) a.q(i, t) = x[q_off_[i] + t];
      if (r_off_[i] >= 0)
        for (int t = 0; t < T; ++t) {
          a.r(i, t) = x[r_off_[i] + t];
          a.d(i, t) = x[d_off_[i] + t];
        }
    }
    for (int t = 0; t < T; ++t) {
      a.supply[t] = x[supply_off_ + t];
      if (spot_) a.spot_g[t] = x[spot_off_ + t];
    }
    return a;
  }

  int dynamics_row(std::size_t user) const { return dyn_row_[user]; }

 private:
  struct Group {
    std::vector<int> idx;
    double total = 0.0;
  };

  void begin_row(double rhs, bool equality) {
    row_start_.push_back(static_cast<int>(col_.size()));
    rhs_.push_back(rhs);
    eq_.push_back(equality ? 1 : 0);
  }
  void add(int col, double v) {
    col_.push_back(col);
    val_.push_back(v);
  }

  const Scenario& s_;
  bool spot_;
  std::vector<Var> vars_;
  std::vector<int> q_off_, r_off_, d_off_, lv_off_, dyn_row_;
  int supply_off_ = -1;
  int spot_off_ = -1;
  std::vector<Group> groups_;
  std::vector<int> row_start_;
  std::vector<int> col_;
  std::vector<double> val_;
  std::vector<double> rhs_;
  std::vector<char> eq_;
  double lf_ = 0.0;
  double a2_ = 0.0;
};

double inf_norm_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

void check_solvable(const Scenario& s, bool include_spot) {
  for (int t = 0; t < s.slots(); ++t) {
    double least = 0.0;
    for (const auto& u : s.users) {
      least += u.q_min[t];
      if (u.battery) least -= u.battery->discharge_rate_max;
    }
    const double avail = s.provider.capacity[t] + (include_spot && s.spot ? s.spot->g_max[t] : 0.0);
    if (least > avail * (1.0 + 1e-12))
      throw SolverError("infeasible scenario: minimum load exceeds available supply in slot " + std::to_string(t));
  }
}

}  // namespace

SystemSolution solve_system(const Scenario& s, const SolverConfig& cfg) {
  validate(cfg);
  check_solvable(s, cfg.include_spot);
  const FlatProblem P(s, cfg.include_spot);
  const int n = P.size();
  const int m = P.rows();

  std::vector<double> x(n, 0.0);
  P.project(x);
  std::vector<double> lambda(m, 0.0);
  std::vector<double> h(m), w(m), g(n), y(n), xn(n), trial(n);

  const double rho0 = std::max(P.lf(), 1e-6) / std::max(P.a2(), 1e-12);
  const double rho_max = rho0 * 1e6;
  double rho = rho0;
  double eps_inner = 1e-3;
  double feas_prev = kInf;

  // Gradient of the augmented Lagrangian at z.
  auto aug_gradient = [&](const std::vector<double>& z, std::vector<double>& grad) {
    P.gradient(z, grad);
    P.residuals(z, h);
    for (int r = 0; r < m; ++r) {
      const double v = lambda[r] + rho * h[r];
      w[r] = P.equality(r) ? v : std::max(0.0, v);
    }
    P.subtract_transpose(w, grad);
  };

  // Projected-gradient stationarity measure of the Lagrangian at z for the
  // current multipliers.
  auto stationarity = [&](const std::vector<double>& z, double step) {
    P.gradient(z, g);
    P.subtract_transpose(lambda, g);
    for (int k = 0; k < n; ++k) trial[k] = z[k] + step * g[k];
    P.project(trial);
    return inf_norm_diff(trial, z) / step;
  };

  TrajectoryLog log;
  int total = 0;
  StopReason reason = StopReason::max_iters;
  double kkt = kInf;
  std::vector<double> x_outer = x;
  std::vector<double> lambda_outer = lambda;

  while (true) {
    const double L = P.lf() + rho * P.a2();
    const double base_step = cfg.gamma0 / L;
    // Inner projected-gradient loop.
    y = x;
    double tk = 1.0;
    int inner = 0;
    while (total < cfg.max_iters) {
      ++inner;
      ++total;
      const double step =
          cfg.step_rule == StepRule::constant ? base_step : base_step / std::sqrt(static_cast<double>(inner));
      aug_gradient(y, g);
      for (int k = 0; k < n; ++k) xn[k] = y[k] + step * g[k];
      P.project(xn);
      const double gm = inf_norm_diff(xn, y) / step;
      if (cfg.accelerate && cfg.step_rule == StepRule::constant) {
        double dir = 0.0;
        for (int k = 0; k < n; ++k) dir += (xn[k] - y[k]) * (xn[k] - x[k]);
        if (dir < 0.0) {
          tk = 1.0;
          y = xn;
        } else {
          const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
          const double beta = (tk - 1.0) / tn;
          for (int k = 0; k < n; ++k) y[k] = xn[k] + beta * (xn[k] - x[k]);
          tk = tn;
        }
      } else {
        y = xn;
      }
      x.swap(xn);
      log.push({total, P.objective(x), gm});
      if (gm <= eps_inner) break;
    }

    // Multiplier update.
    P.residuals(x, h);
    double feas = 0.0;
    for (int r = 0; r < m; ++r) {
      const double v = lambda[r] + rho * h[r];
      if (P.equality(r)) {
        lambda[r] = v;
        feas = std::max(feas, std::abs(h[r]));
      } else {
        lambda[r] = std::max(0.0, v);
        feas = std::max(feas, std::max(0.0, h[r]));
      }
    }
    const double gm = stationarity(x, 1.0 / L);
    kkt = std::max(feas, gm);
    if (kkt <= cfg.tol_kkt) {
      reason = StopReason::kkt;
      break;
    }
    if (total >= cfg.max_iters) {
      reason = StopReason::max_iters;
      break;
    }
    if (inf_norm_diff(x, x_outer) <= cfg.tol_step && inf_norm_diff(lambda, lambda_outer) <= cfg.tol_step) {
      reason = StopReason::step;
      break;
    }
    x_outer = x;
    lambda_outer = lambda;
    if (feas > 0.25 * feas_prev) rho = std::min(rho * 10.0, rho_max);
    feas_prev = feas;
    eps_inner = std::max(0.1 * cfg.tol_kkt, 0.1 * eps_inner);
  }

  SystemSolution sol;
  Allocation alloc = projection(s, P.to_allocation(x));
  const auto gen = required_generation(s, alloc);
  alloc.supply = gen;
  sol.allocation = alloc;
  sol.prices.p.assign(lambda.begin(), lambda.begin() + s.slots());
  sol.storage_values.resize(s.users.size());
  for (std::size_t i = 0; i < s.users.size(); ++i) {
    const int r0 = P.dynamics_row(i);
    if (r0 < 0) continue;
    sol.storage_values[i].assign(lambda.begin() + r0, lambda.begin() + r0 + s.slots());
  }
  const double final_obj = welfare(s, alloc);
  const double final_kkt = std::max(kkt, feasibility_residuals(s, alloc).max());
  log.push_final({total, final_obj, final_kkt});
  sol.report.iterates = log.take();
  sol.report.final_objective = final_obj;
  sol.report.kkt_residual = final_kkt;
  sol.report.iterations = total;
  sol.report.stop_reason = reason;
  return sol;
}

// ---------------------------------------------------------------------------
// Lattice oracle

namespace {

enum class AxisKind { q, net, spot };

struct Axis {
  AxisKind kind;
  int user;
  int t;
  double lo;
  double hi;
  double lipschitz;
};

struct Eliminated {
  int user;
  int t;
  int first;
  int last;
  double total;  // sum of q over the window
};

class LatticeEvaluator {
 public:
  LatticeEvaluator(const Scenario& s, bool include_spot, std::vector<Axis> axes, std::vector<Eliminated> elim,
                   Matrix fixed_q)
      : s_(s),
        spot_(include_spot && s.spot.has_value()),
        axes_(std::move(axes)),
        elim_(std::move(elim)),
        fixed_q_(std::move(fixed_q)) {}

  const std::vector<Axis>& axes() const { return axes_; }

  /// Welfare at the point, or -inf when infeasible. `scratch` holds q, r, d, g.
  double evaluate(std::span<const double> point, Allocation& a) const {
    const int T = s_.slots();
    const double dt = s_.dt();
    a.q = fixed_q_;
    std::fill(a.r.data().begin(), a.r.data().end(), 0.0);
    std::fill(a.d.data().begin(), a.d.data().end(), 0.0);
    std::fill(a.spot_g.begin(), a.spot_g.end(), 0.0);
    for (std::size_t k = 0; k < axes_.size(); ++k) {
      const auto& ax = axes_[k];
      const double v = point[k];
      switch (ax.kind) {
        case AxisKind::q:
          a.q(ax.user, ax.t) = v;
          break;
        case AxisKind::net:
          a.r(ax.user, ax.t) = std::max(v, 0.0);
          a.d(ax.user, ax.t) = std::max(-v, 0.0);
          break;
        case AxisKind::spot:
          a.spot_g[ax.t] = v;
          break;
      }
    }
    for (const auto& e : elim_) {
      double rest = e.total;
      for (int t = e.first; t <= e.last; ++t)
        if (t != e.t) rest -= a.q(e.user, t);
      const auto& u = s_.users[e.user];
      const double tol = 1e-12 * std::max(1.0, e.total);
      if (rest < u.lower(e.t) - tol || rest > u.upper(e.t) + tol) return -kInf;
      a.q(e.user, e.t) = std::clamp(rest, u.lower(e.t), u.upper(e.t));
    }
    for (std::size_t i = 0; i < s_.users.size(); ++i) {
      const auto& b = s_.users[i].battery;
      if (!b) continue;
      double level = b->initial_level;
      const double tol = 1e-12 * std::max(1.0, b->capacity);
      for (int t = 0; t < T; ++t) {
        level += dt * (b->efficiency * a.r(i, t) - a.d(i, t));
        if (level < -tol || level > b->capacity + tol) return -kInf;
      }
      if (level < b->initial_level - tol) return -kInf;
    }
    double total = 0.0;
    for (int t = 0; t < T; ++t) {
      double load = 0.0;
      double util = 0.0;
      for (std::size_t i = 0; i < s_.users.size(); ++i) {
        load += a.q(i, t) + a.r(i, t) - a.d(i, t);
        util += s_.users[i].utility.value(t, a.q(i, t));
      }
      const double own = std::max(0.0, load - a.spot_g[t]);
      if (own > s_.provider.capacity[t] * (1.0 + 1e-12) + 1e-12) return -kInf;
      double slot = util - s_.provider.cost(t, own);
      if (spot_) slot -= s_.spot->outlay(t, a.spot_g[t]);
      total += dt * slot;
    }
    return total;
  }

 private:
  const Scenario& s_;
  bool spot_;
  std::vector<Axis> axes_;
  std::vector<Eliminated> elim_;
  Matrix fixed_q_;
};

struct AxisGrid {
  double lo;
  double step;
  int count;
  double at(int k) const { return lo + step * k; }
};

struct SearchResult {
  double value = -kInf;
  std::vector<double> point;
  long long evaluated = 0;
};

SearchResult search_lattice(const Scenario& s, const LatticeEvaluator& ev, const std::vector<AxisGrid>& grid) {
  const std::size_t dim = grid.size();
  long long total = 1;
  for (const auto& g : grid) total *= g.count;

  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned workers = static_cast<unsigned>(std::min<long long>(hw, std::max<long long>(1, total / 4096)));
  std::vector<SearchResult> partial(workers);
  std::vector<long long> best_index(workers, -1);

  auto run = [&](unsigned w) {
    const long long begin = total * w / workers;
    const long long end = total * (w + 1) / workers;
    Allocation scratch = make_allocation(s);
    std::vector<int> idx(dim, 0);
    std::vector<double> point(dim, 0.0);
    long long rem = begin;
    for (std::size_t k = dim; k-- > 0;) {
      idx[k] = static_cast<int>(rem % grid[k].count);
      rem /= grid[k].count;
    }
    for (long long lin = begin; lin < end; ++lin) {
      for (std::size_t k = 0; k < dim; ++k) point[k] = grid[k].at(idx[k]);
      const double v = ev.evaluate(point, scratch);
      if (v > partial[w].value) {
        partial[w].value = v;
        partial[w].point = point;
        best_index[w] = lin;
      }
      for (std::size_t k = dim; k-- > 0;) {
        if (++idx[k] < grid[k].count) break;
        idx[k] = 0;
      }
    }
    partial[w].evaluated = end - begin;
  };

  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (auto& th : pool) th.join();
  }
  SearchResult out;
  long long out_index = -1;
  for (unsigned w = 0; w < workers; ++w) {
    out.evaluated += partial[w].evaluated;
    if (partial[w].value > out.value || (partial[w].value == out.value && best_index[w] >= 0 &&
                                         (out_index < 0 || best_index[w] < out_index))) {
      if (best_index[w] < 0) continue;
      out.value = partial[w].value;
      out.point = partial[w].point;
      out_index = best_index[w];
    }
  }
  return out;
}

std::vector<AxisGrid> full_grid(const std::vector<Axis>& axes, int n) {
  std::vector<AxisGrid> g;
  for (const auto& ax : axes) {
    const int count = ax.hi > ax.lo ? n : 1;
    g.push_back({ax.lo, count > 1 ? (ax.hi - ax.lo) / (count - 1) : 0.0, count});
  }
  return g;
}

}  // namespace

OracleResult oracle_solve(const Scenario& s, int grid_n, int zoom_levels, bool include_spot) {
  if (grid_n < 2) throw SolverError("grid_n must be at least 2");
  const int T = s.slots();
  const double dt = s.dt();
  const bool spot = include_spot && s.spot.has_value();

  // Upper bound on every marginal generation cost that can occur.
  std::vector<double> mc_max(T);
  for (int t = 0; t < T; ++t) {
    double qmax = 0.0;
    for (const auto& u : s.users) qmax += u.upper(t) + (u.battery ? u.battery->charge_rate_max : 0.0);
    mc_max[t] = s.provider.marginal(t, std::min(qmax, s.provider.capacity[t]));
  }
  auto util_lip = [&](const UserModel& u, int t) {
    return std::max(std::abs(u.utility.marginal(t, u.lower(t))), std::abs(u.utility.marginal(t, u.upper(t))));
  };

  std::vector<Axis> axes;
  std::vector<Eliminated> elim;
  Matrix fixed_q(s.users.size(), T);
  for (std::size_t i = 0; i < s.users.size(); ++i) {
    const auto& u = s.users[i];
    for (int t = 0; t < T; ++t) {
      const auto* dl = u.deferrable_at(t);
      fixed_q(i, t) = u.lower(t);
      if (dl && t == dl->window_end) {
        if (dl->length() == 1) {
          fixed_q(i, t) = dl->energy_required / dt;
        } else {
          elim.push_back({int(i), t, dl->window_start, dl->window_end, dl->energy_required / dt});
        }
        continue;
      }
      if (u.upper(t) <= u.lower(t)) continue;
      double lip = dt * (util_lip(u, t) + mc_max[t]);
      if (dl && dl->length() > 1) lip += dt * (util_lip(u, dl->window_end) + mc_max[dl->window_end]);
      axes.push_back({AxisKind::q, int(i), t, u.lower(t), u.upper(t), lip});
    }
    if (u.battery) {
      const auto& b = *u.battery;
      for (int t = 0; t < T; ++t) {
        if (b.charge_rate_max == 0.0 && b.discharge_rate_max == 0.0) continue;
        axes.push_back({AxisKind::net, int(i), t, -b.discharge_rate_max, b.charge_rate_max, dt * mc_max[t]});
      }
    }
  }
  if (spot) {
    for (int t = 0; t < T; ++t) {
      if (s.spot->g_max[t] <= 0.0) continue;
      axes.push_back({AxisKind::spot, -1, t, 0.0, s.spot->g_max[t],
                      dt * (mc_max[t] + s.spot->price(t, s.spot->g_max[t]))});
    }
  }
  if (static_cast<int>(axes.size()) > kOracleMaxDimension)
    throw DimensionError("oracle dimension " + std::to_string(axes.size()) + " exceeds the limit of " +
                         std::to_string(kOracleMaxDimension));

  const LatticeEvaluator ev(s, include_spot, axes, elim, fixed_q);
  auto grid = full_grid(axes, grid_n);
  SearchResult best = search_lattice(s, ev, grid);
  if (!std::isfinite(best.value)) throw SolverError("oracle found no feasible lattice point");

  OracleResult out;
  out.dimension = static_cast<int>(axes.size());
  out.base_objective = best.value;
  out.evaluated = best.evaluated;
  for (std::size_t k = 0; k < axes.size(); ++k) out.error_bound += axes[k].lipschitz * grid[k].step;

  // Pattern-search refinement: shrink when the best point is interior to the
  // sub-lattice, otherwise recenter at the same resolution.
  std::vector<double> half(axes.size());
  for (std::size_t k = 0; k < axes.size(); ++k) half[k] = 2.0 * grid[k].step;
  int shrinks = 0;
  for (int pass = 0; shrinks < zoom_levels && pass < 20 * std::max(1, zoom_levels); ++pass) {
    std::vector<AxisGrid> sub;
    bool any = false;
    for (std::size_t k = 0; k < axes.size(); ++k) {
      const double lo = std::max(axes[k].lo, best.point[k] - half[k]);
      const double hi = std::min(axes[k].hi, best.point[k] + half[k]);
      const int count = hi > lo ? 11 : 1;
      sub.push_back({lo, count > 1 ? (hi - lo) / (count - 1) : 0.0, count});
      any = any || count > 1;
    }
    if (!any) break;
    SearchResult cand = search_lattice(s, ev, sub);
    out.evaluated += cand.evaluated;
    bool on_edge = false;
    if (cand.value > best.value) {
      for (std::size_t k = 0; k < axes.size(); ++k) {
        const double lo = sub[k].lo;
        const double hi = sub[k].at(sub[k].count - 1);
        const bool at_lo = cand.point[k] <= lo && lo > axes[k].lo;
        const bool at_hi = cand.point[k] >= hi && hi < axes[k].hi;
        on_edge = on_edge || ((at_lo || at_hi) && sub[k].count > 1);
      }
      best = cand;
    }
    if (!on_edge) {
      for (auto& hv : half) hv *= 0.4;
      ++shrinks;
    }
  }

  Allocation a = make_allocation(s);
  out.objective = ev.evaluate(best.point, a);
  complete_provider_side(s, a, include_spot);
  // Keep the evaluated spot purchases; supply is what remains of the load.
  if (spot) {
    Allocation tmp = a;
    ev.evaluate(best.point, tmp);
    a.spot_g = tmp.spot_g;
  }
  a.supply = required_generation(s, a);
  out.allocation = a;
  return out;
}

}  // namespace gridnum
