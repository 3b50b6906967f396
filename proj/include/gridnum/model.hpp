#pragma once

// Domain types for the dynamic-pricing problem family: users with concave
// utilities, a convex-cost provider, optional spot market, and the welfare
// and feasibility bookkeeping shared by every solver.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridnum {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A scenario invariant does not hold.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Shapes of two objects disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Solver could not run (infeasible instance, unsupported scenario kind).
class SolverError : public Error {
 public:
  using Error::Error;
};

/// Row-major users x slots matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t i, std::size_t t) { return data_[i * cols_ + t]; }
  double operator()(std::size_t i, std::size_t t) const { return data_[i * cols_ + t]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct Horizon {
  int slots = 1;               // T
  double slot_duration = 1.0;  // hours per slot

  friend bool operator==(const Horizon&, const Horizon&) = default;
};

enum class UtilityKind { quadratic, logarithmic };

/// Per-slot utility u_t(q).
///   quadratic:   b q - q^2 / (2a)
///   logarithmic: b ln(1 + q/a)
struct UtilityParams {
  UtilityKind kind = UtilityKind::quadratic;
  std::vector<double> a;
  std::vector<double> b;

  double value(int t, double q) const;
  double marginal(int t, double q) const;
  /// Second derivative; always < 0 for a > 0, b > 0.
  double curvature(int t, double q) const;
  /// Unconstrained maximizer of u_t(q) - price * q. May be negative or +inf.
  double demand_at(int t, double price) const;
  /// d(demand_at)/d(price) at the given price.
  double demand_slope(int t, double price) const;

  friend bool operator==(const UtilityParams&, const UtilityParams&) = default;
};

struct DeferrableLoad {
  int window_start = 0;
  int window_end = 0;
  double energy_required = 0.0;  // kWh
  double per_slot_max = 0.0;     // kW

  bool covers(int t) const { return t >= window_start && t <= window_end; }
  int length() const { return window_end - window_start + 1; }

  friend bool operator==(const DeferrableLoad&, const DeferrableLoad&) = default;
};

struct Battery {
  double capacity = 0.0;            // kWh
  double charge_rate_max = 0.0;     // kW
  double discharge_rate_max = 0.0;  // kW
  double efficiency = 1.0;          // applied on charge
  double initial_level = 0.0;       // kWh; also the minimum terminal level

  friend bool operator==(const Battery&, const Battery&) = default;
};

struct UserModel {
  std::string id;
  UtilityParams utility;
  std::vector<double> q_min;
  std::vector<double> q_max;
  std::vector<DeferrableLoad> deferrables;
  std::optional<Battery> battery;

  /// Deferrable load whose window contains slot t, if any.
  const DeferrableLoad* deferrable_at(int t) const;
  /// Consumption bounds of slot t after applying any deferrable per-slot cap.
  double lower(int t) const { return q_min[t]; }
  double upper(int t) const;

  friend bool operator==(const UserModel&, const UserModel&) = default;
};

/// c_t(S) = c1_t S + c2_t S^2 / 2 on [0, capacity_t].
struct ProviderCost {
  std::vector<double> c1;
  std::vector<double> c2;
  std::vector<double> capacity;

  double cost(int t, double supply) const { return c1[t] * supply + 0.5 * c2[t] * supply * supply; }
  double marginal(int t, double supply) const { return c1[t] + c2[t] * supply; }

  friend bool operator==(const ProviderCost&, const ProviderCost&) = default;
};

/// Effective spot price pi0 + kappa g; integrated outlay pi0 g + kappa g^2 / 2.
struct SpotMarket {
  std::vector<double> pi0;
  std::vector<double> kappa;
  std::vector<double> g_max;

  double price(int t, double g) const { return pi0[t] + kappa[t] * g; }
  double outlay(int t, double g) const { return pi0[t] * g + 0.5 * kappa[t] * g * g; }

  friend bool operator==(const SpotMarket&, const SpotMarket&) = default;
};

struct Scenario {
  Horizon horizon;
  std::vector<UserModel> users;
  ProviderCost provider;
  std::optional<SpotMarket> spot;
  std::uint64_t seed = 0;

  int slots() const { return horizon.slots; }
  double dt() const { return horizon.slot_duration; }
  std::size_t user_count() const { return users.size(); }
  bool has_batteries() const;
  bool has_deferrables() const;

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

/// Primal variables. Rates in kW, one column per slot.
struct Allocation {
  Matrix q;
  Matrix r;
  Matrix d;
  std::vector<double> supply;
  std::vector<double> spot_g;

  friend bool operator==(const Allocation&, const Allocation&) = default;
};

struct PriceSignal {
  std::vector<double> p;

  std::size_t size() const { return p.size(); }
  double operator[](std::size_t t) const { return p[t]; }
  double& operator[](std::size_t t) { return p[t]; }

  friend bool operator==(const PriceSignal&, const PriceSignal&) = default;
};

struct FeasibilityReport {
  double box = 0.0;         // consumption outside [q_min, upper]
  double deferrable = 0.0;  // |delivered - required| energy per load
  double battery_rate = 0.0;
  double battery_level = 0.0;  // level outside [0, capacity] or terminal shortfall
  double capacity = 0.0;       // own generation above capacity
  double spot = 0.0;           // purchases outside [0, g_max]

  double max() const;
  bool feasible(double tol) const { return max() <= tol; }
};

/// Checks every scenario invariant; throws ValidationError naming the first violation.
void validate(const Scenario& s);

/// Zero allocation of the right shape.
Allocation make_allocation(const Scenario& s);

/// Throws DimensionError when the allocation shape does not match.
void check_shape(const Scenario& s, const Allocation& x);

/// Net grid load of every user (q + r - d) summed per slot.
std::vector<double> aggregate_load(const Scenario& s, const Allocation& x);

/// Own generation actually required per slot: max(0, load - spot purchase).
std::vector<double> required_generation(const Scenario& s, const Allocation& x);

/// Battery level at slot boundaries 0..T.
std::vector<double> battery_levels(const Battery& b, std::span<const double> charge,
                                   std::span<const double> discharge, double dt);

/// Sum of utilities minus generation cost minus spot outlay, all weighted by
/// the slot duration. Generation is taken as required_generation().
double welfare(const Scenario& s, const Allocation& x);

/// Gradient of welfare() with respect to q, r, d and spot_g. The supply field
/// of the result is zero since welfare does not depend on it.
Allocation welfare_gradient(const Scenario& s, const Allocation& x);

FeasibilityReport feasibility_residuals(const Scenario& s, const Allocation& x);

/// Economic dispatch of one slot: cheapest split of a load between own
/// generation and spot purchases. Returns false when the load exceeds what
/// both sources can cover (then the split is capped).
struct Dispatch {
  double supply = 0.0;
  double spot_g = 0.0;
  double marginal_price = 0.0;
  bool feasible = true;
};
Dispatch dispatch(const ProviderCost& c, const SpotMarket* m, int t, double load);

/// Fills supply and spot_g of x from its consumption via dispatch().
/// Returns false if some slot cannot be covered.
bool complete_provider_side(const Scenario& s, Allocation& x, bool include_spot);

}  // namespace gridnum
