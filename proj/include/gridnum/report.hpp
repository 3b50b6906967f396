#pragma once

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace gridnum {

enum class StopReason { kkt, step, max_iters };

std::string to_string(StopReason r);

struct IterateRecord {
  int iter = 0;
  double objective = 0.0;
  double kkt = 0.0;
  double best_objective = 0.0;
  double dual = std::numeric_limits<double>::quiet_NaN();
  double spot_g = std::numeric_limits<double>::quiet_NaN();
  double spot_price = std::numeric_limits<double>::quiet_NaN();
};

struct ConvergenceReport {
  std::vector<IterateRecord> iterates;  // downsampled
  double final_objective = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;
  StopReason stop_reason = StopReason::max_iters;
  /// Full price trajectory of price-iteration methods (when requested).
  std::vector<std::vector<double>> price_history;

  bool converged() const { return stop_reason != StopReason::max_iters; }
};

/// Keeps a bounded, evenly thinned trajectory: every `stride`-th record is
/// kept and the stride doubles whenever the buffer fills up.
class TrajectoryLog {
 public:
  explicit TrajectoryLog(std::size_t capacity = 4096) : capacity_(capacity) {}

  void push(const IterateRecord& rec);
  /// Always stored, regardless of stride.
  void push_final(const IterateRecord& rec);
  std::vector<IterateRecord> take() { return std::move(records_); }

 private:
  std::size_t capacity_;
  std::size_t stride_ = 1;
  std::size_t seen_ = 0;
  double best_ = -std::numeric_limits<double>::infinity();
  std::vector<IterateRecord> records_;
};

/// `iter,objective,kkt` (+ `spot_g,spot_price` when with_spot). Objective is
/// printed with 4 decimals, matching the CLI summary line.
void write_report_csv(std::ostream& out, const ConvergenceReport& rep, bool with_spot);

/// Self-contained SVG with one polyline for the objective and one for log10(kkt).
void write_convergence_svg(std::ostream& out, const ConvergenceReport& rep, const std::string& title);

}  // namespace gridnum
