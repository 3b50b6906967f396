#include "gridnum/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "gridnum/control.hpp"
#include "gridnum/dual_market.hpp"
#include "gridnum/format.hpp"
#include "gridnum/generate.hpp"
#include "gridnum/greedy.hpp"
#include "gridnum/newton.hpp"
#include "gridnum/scenario_io.hpp"
#include "gridnum/spot.hpp"

namespace gridnum {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kMethods{"system", "dual", "spot", "greedy", "newton", "control"};

struct Options {
  std::string scenario;
  std::string method = "system";
  std::string out;
  std::optional<double> gamma;
  std::optional<int> max_iters;
  std::optional<double> tol;
  std::string bus = "inproc";
  int port = 0;
  std::optional<std::uint64_t> seed;
};

struct MethodRun {
  std::string method;
  Allocation allocation;
  ConvergenceReport report;
  bool with_spot = false;
  double welfare = 0.0;
  int iters = 0;
  double kkt = 0.0;
  bool converged = true;
  double wall_ms = 0.0;
  std::optional<double> gap_bound;
  std::string extra;  // printed after the summary line
  std::optional<StructureReport> structure;
};

fs::path output_root(const Options& o) {
  if (!o.out.empty()) return o.out;
  if (const char* env = std::getenv("GRIDNUM_OUT"); env && *env) return env;
  return "out";
}

std::unique_ptr<MessageBus> make_bus(const Options& o, const Scenario& s, bool include_spot, bool slopes) {
  auto agents = make_agents(s, include_spot, slopes);
  if (o.bus == "tcp") return std::make_unique<TcpBus>(std::move(agents), o.port);
  return std::make_unique<InProcessBus>(std::move(agents));
}

DualConfig dual_config(const Options& o, const Scenario& s, bool include_spot) {
  auto cfg = DualConfig::for_scenario(s, include_spot);
  if (o.gamma) cfg.gamma0 = *o.gamma;
  if (o.max_iters) cfg.max_rounds = *o.max_iters;
  if (o.tol) cfg.tol_balance = cfg.tol_gap = *o.tol;
  return cfg;
}

SolverConfig solver_config(const Options& o) {
  SolverConfig cfg;
  if (o.gamma) cfg.gamma0 = *o.gamma;
  if (o.max_iters) cfg.max_iters = *o.max_iters;
  if (o.tol) cfg.tol_kkt = *o.tol;
  return cfg;
}

void from_market(MethodRun& run, MarketResult res) {
  run.allocation = std::move(res.allocation);
  run.report = std::move(res.report);
  run.welfare = run.report.final_objective;
  run.iters = res.rounds;
  run.kkt = run.report.kkt_residual;
  run.converged = run.report.converged();
}

MethodRun execute(const Scenario& s, const std::string& method, const Options& o) {
  MethodRun run;
  run.method = method;
  const auto start = std::chrono::steady_clock::now();
  if (method == "system") {
    auto sol = solve_system(s, solver_config(o));
    run.allocation = sol.allocation;
    run.report = sol.report;
    run.welfare = sol.report.final_objective;
    run.iters = sol.report.iterations;
    run.kkt = sol.report.kkt_residual;
    run.converged = sol.report.converged();
  } else if (method == "dual") {
    auto bus = make_bus(o, s, false, false);
    from_market(run, run_dual(s, dual_config(o, s, false), *bus));
  } else if (method == "spot") {
    if (!s.spot) throw ValidationError("method spot needs a scenario with a spot block");
    auto bus = make_bus(o, s, true, false);
    from_market(run, solve_sys_spot(s, dual_config(o, s, true), *bus));
    run.with_spot = true;
  } else if (method == "newton") {
    NewtonConfig cfg;
    cfg.base = dual_config(o, s, false);
    auto bus = make_bus(o, s, false, true);
    from_market(run, run_newton(s, cfg, *bus));
  } else if (method == "greedy") {
    const auto g = greedy_solve(s);
    run.allocation = g.allocation;
    run.welfare = g.welfare;
    run.iters = s.slots();
    run.kkt = feasibility_residuals(s, g.allocation).max();
    const double bound = gap_upper_bound(s, g);
    run.gap_bound = bound;
    const auto opt = solve_system(s, solver_config(o));
    const double true_gap = opt.report.final_objective - g.welfare;
    const double tightness = bound > 1e-12 ? true_gap / bound : 1.0;
    run.extra = "greedy_welfare,optimal_welfare,true_gap,gap_bound,bound_tightness\n" + fmt_num(g.welfare) + ',' +
                fmt_num(opt.report.final_objective) + ',' + fmt_num(true_gap) + ',' + fmt_num(bound) + ',' +
                fmt_num(tightness) + '\n';
    run.report.iterates.push_back({s.slots(), g.welfare, run.kkt, g.welfare});
    run.report.final_objective = g.welfare;
    run.report.kkt_residual = run.kkt;
    run.report.iterations = s.slots();
    run.report.stop_reason = StopReason::kkt;
  } else if (method == "control") {
    if (s.users.size() != 1) throw ValidationError("method control needs a single-user scenario");
    auto sol = solve_single_user(s.users[0], s.provider, s.horizon, solver_config(o));
    auto rep = verify_threshold_structure(sol);
    run.allocation = sol.allocation;
    run.report = sol.report;
    run.welfare = sol.report.final_objective;
    run.iters = sol.report.iterations;
    run.kkt = sol.report.kkt_residual;
    run.converged = sol.report.converged();
    std::ostringstream text;
    print_structure(text, rep);
    run.extra = text.str();
    run.structure = std::move(rep);
  } else {
    throw CLI::ValidationError("--method", "unknown method " + method);
  }
  run.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return run;
}

void write_artifacts(const fs::path& dir, const Scenario& s, const MethodRun& run, const std::string& title) {
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "allocation.csv", std::ios::binary);
    write_allocation_csv(f, s, run.allocation);
  }
  {
    std::ofstream f(dir / "report.csv", std::ios::binary);
    write_report_csv(f, run.report, run.with_spot);
  }
  {
    std::ofstream f(dir / "convergence.svg", std::ios::binary);
    write_convergence_svg(f, run.report, title);
  }
  if (run.structure) {
    std::ofstream f(dir / "structure.csv", std::ios::binary);
    write_structure_csv(f, *run.structure);
  }
}

std::string summary_line(const MethodRun& run) {
  return run.method + ' ' + fmt_fixed(run.welfare) + ' ' + std::to_string(run.iters) + ' ' + fmt_sci(run.kkt);
}

Scenario load_or_usage(const Options& o) {
  if (!fs::is_regular_file(o.scenario)) throw CLI::ValidationError("scenario", "file not found: " + o.scenario);
  auto s = load_scenario(o.scenario);
  if (o.seed) s.seed = *o.seed;
  return s;
}

int cmd_run(const Options& o, std::ostream& out) {
  const auto s = load_or_usage(o);
  const auto run = execute(s, o.method, o);
  const auto stem = fs::path(o.scenario).stem().string();
  write_artifacts(output_root(o) / stem / o.method, s, run, stem + " / " + o.method);
  out << summary_line(run) << '\n' << run.extra;
  return run.converged ? kExitOk : kExitNotConverged;
}

int cmd_compare(const Options& o, std::ostream& out) {
  const auto s = load_or_usage(o);
  std::vector<std::string> methods{"system", "dual"};
  if (!s.has_batteries()) methods.push_back("newton");
  methods.push_back("greedy");
  if (s.spot) methods.push_back("spot");
  std::vector<MethodRun> runs;
  for (const auto& m : methods) runs.push_back(execute(s, m, o));

  // Spot runs solve a larger problem; the best is taken over the rest.
  double best = -INFINITY;
  for (const auto& r : runs)
    if (r.method != "spot") best = std::max(best, r.welfare);
  std::ostringstream csv;
  csv << "method,welfare,rounds,wall_time_ms,gap_to_best,gap_bound\n";
  bool all_converged = true;
  for (const auto& r : runs) {
    csv << r.method << ',' << fmt_num(r.welfare) << ',' << r.iters << ',' << fmt_fixed(r.wall_ms, 3) << ','
        << (r.method == "spot" ? std::string() : fmt_num(best - r.welfare)) << ','
        << (r.gap_bound ? fmt_num(*r.gap_bound) : std::string()) << '\n';
    all_converged = all_converged && r.converged;
  }
  const auto dir = output_root(o) / fs::path(o.scenario).stem();
  fs::create_directories(dir);
  std::ofstream(dir / "compare.csv", std::ios::binary) << csv.str();
  out << csv.str();
  return all_converged ? kExitOk : kExitNotConverged;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"gridnum: dynamic-pricing and demand-response experiments"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", o.out, "Output root (default $GRIDNUM_OUT or ./out)");
    sub->add_option("--gamma", o.gamma, "Step size gamma0")->check(CLI::PositiveNumber);
    sub->add_option("--max-iters", o.max_iters, "Iteration / round limit")->check(CLI::PositiveNumber);
    sub->add_option("--tol", o.tol, "Stopping tolerance")->check(CLI::PositiveNumber);
    sub->add_option("--bus", o.bus, "Message bus for price iterations")->check(CLI::IsMember({"inproc", "tcp"}));
    sub->add_option("--port", o.port, "TCP port (0 picks a free one)")->check(CLI::Range(0, 65535));
    sub->add_option("--seed", o.seed, "Override the scenario seed");
  };

  auto* run = app.add_subcommand("run", "Solve a scenario with one method");
  run->add_option("scenario", o.scenario, "Scenario JSON file")->required();
  run->add_option("--method", o.method, "Solver")->check(CLI::IsMember(kMethods));
  add_common(run);

  auto* compare = app.add_subcommand("compare", "Run every applicable method and tabulate");
  compare->add_option("scenario", o.scenario, "Scenario JSON file")->required();
  add_common(compare);

  std::string tmpl;
  int T = 0;
  int n_users = 0;
  std::uint64_t seed = 0;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "Generate a scenario from a template");
  gen->add_option("template", tmpl, "Template")->required()->check(CLI::IsMember(scenario_templates()));
  gen->add_option("T", T, "Number of slots")->required()->check(CLI::PositiveNumber);
  gen->add_option("n_users", n_users, "Number of users")->required()->check(CLI::PositiveNumber);
  gen->add_option("seed", seed, "Random seed")->required();
  gen->add_option("-o,--output", gen_out, "Write to this file instead of stdout");

  std::vector<std::string> args;
  for (int k = argc - 1; k > 0; --k) args.emplace_back(argv[k]);
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n' << app.help();
    return kExitUsage;
  }

  try {
    if (*run) return cmd_run(o, out);
    if (*compare) return cmd_compare(o, out);
    if (*gen) {
      const auto s = generate_scenario(tmpl, T, n_users, seed);
      if (gen_out.empty()) {
        out << dump_scenario(s);
      } else {
        save_scenario(s, gen_out);
      }
      return kExitOk;
    }
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << '\n' << app.help();
    return kExitUsage;
  } catch (const BusError& e) {
    err << "bus error: " << e.what() << '\n';
    return kExitNotConverged;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace gridnum
