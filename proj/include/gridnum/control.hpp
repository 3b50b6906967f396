#pragma once

// Single user facing the production cost directly: optimal consumption and
// storage schedule, its battery multipliers, and a numerical check of the
// marginal-cost smoothing and threshold structure.

#include <iosfwd>
#include <string>
#include <vector>

#include "gridnum/solver_core.hpp"

namespace gridnum {

struct BatteryMultipliers {
  /// Multiplier of the level equation of each slot (value of stored energy).
  std::vector<double> storage_value;
  /// Level bounds after each slot: lower (0, or the initial level at the end) and capacity.
  std::vector<double> level_lower, level_upper;
  /// Rate bounds: charge at 0 / at max, discharge at 0 / at max.
  std::vector<double> charge_lower, charge_upper, discharge_lower, discharge_upper;
};

struct SingleUserSolution {
  Scenario scenario;  // the one-user problem that was solved
  Allocation allocation;
  PriceSignal marginal_prices;
  BatteryMultipliers multipliers;  // empty without battery
  /// max over battery bounds of |multiplier * slack|
  double complementary_slackness = 0.0;
  ConvergenceReport report;
};

SingleUserSolution solve_single_user(const UserModel& u, const ProviderCost& c, const Horizon& h,
                                     const SolverConfig& cfg = {});

enum class SlotMode { charge, idle, discharge };
std::string to_string(SlotMode m);

struct SlotStructure {
  int slot = 0;
  double q = 0.0, r = 0.0, d = 0.0;
  double level = 0.0;  // after the slot
  /// Marginal production cost; at zero generation, the selected subgradient.
  double marginal_cost = 0.0;
  int segment = 0;
  SlotMode mode = SlotMode::idle;
  bool rate_interior = false;
};

struct SegmentStructure {
  int first = 0, last = 0;  // slots
  /// Spread of the implied storage value over interior-rate slots.
  double spread = 0.0;
  int interior_slots = 0;
  /// Highest marginal cost among charging slots, lowest among discharging.
  double charge_threshold = 0.0, discharge_threshold = 0.0;
  bool equalized = true;
  bool ordered = true;
};

struct StructureReport {
  std::vector<SlotStructure> slots;
  std::vector<SegmentStructure> segments;
  /// Slots after which the level touches 0 or capacity.
  std::vector<int> breaks;
  double equalization_residual = 0.0;
  double ordering_residual = 0.0;
  double charge_threshold = 0.0, discharge_threshold = 0.0;
  bool equalization_pass = true;
  bool threshold_pass = true;
  double complementary_slackness = 0.0;

  bool pass() const { return equalization_pass && threshold_pass; }
};

StructureReport verify_threshold_structure(const SingleUserSolution& sol, double tol = 1e-4);

void write_structure_csv(std::ostream& out, const StructureReport& rep);
void print_structure(std::ostream& out, const StructureReport& rep);

}  // namespace gridnum
