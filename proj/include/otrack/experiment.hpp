#pragma once

#include <filesystem>
#include <future>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "otrack/composite.hpp"
#include "otrack/config.hpp"
#include "otrack/io.hpp"
#include "otrack/oracle.hpp"
#include "otrack/outer.hpp"
#include "otrack/projectors.hpp"

namespace otrack {

struct ExperimentResult {
  LinearizingReport report;
  std::vector<std::pair<std::string, TrajectorySolution>> solutions;
  std::optional<CompareMetrics> metrics;
  std::map<std::string, double> scalar_metrics;
};

namespace detail {

inline std::vector<Vec> linearizing_samples(const ExperimentConfig& cfg,
                                            const TrackingProblem& problem) {
  if (cfg.linearizing && !cfg.linearizing->box_lo.empty()) {
    const int n = problem.system.n;
    Vec lo(n), hi(n);
    for (int i = 0; i < n; ++i) {
      lo[i] = cfg.linearizing->box_lo[i];
      hi[i] = cfg.linearizing->box_hi[i];
    }
    return latin_hypercube_box(lo, hi, cfg.linearizing ? cfg.linearizing->samples : 64);
  }
  return default_linearizing_samples(problem);
}

inline LinearizingReport run_linearizing_gate(const ExperimentConfig& cfg,
                                              const TrackingProblem& problem) {
  const double tol = cfg.linearizing ? cfg.linearizing->tol : 1e-8;
  const auto report =
      verify_linearizing(problem.system, problem.S, linearizing_samples(cfg, problem), tol);
  if (!report.ok())
    throw Error(ErrorCode::NotLinearizable,
                "model fails the linearizing assumption (omega deviation " +
                    std::to_string(report.omega_max_deviation) + ", affine residual " +
                    std::to_string(report.qr_max_residual) + ")");
  return report;
}

inline TrajectorySolution outer_as_trajectory(const OuterSolution& outer,
                                              const TrackingProblem& problem) {
  TrajectorySolution traj;
  traj.flavor = SolutionFlavor::Outer;
  traj.grid = outer.grid;
  traj.x = outer.X;
  traj.lambda = outer.QLambda;
  traj.xdot = outer.Xdot;
  traj.u.resize(outer.grid.size());
  for (std::size_t k = 0; k < outer.grid.size(); ++k)
    traj.u[k] = detail::bg_at(problem.system, problem.S, outer.X[k]) *
                (outer.Xdot[k] - problem.system.R(outer.X[k]));
  return traj;
}

/// First time from the left where the layer deviation from the outer solution
/// has shrunk by a factor e; scans the stretched-time grid and interpolates.
inline double measure_layer_width(const CompositeSolution& comp) {
  const double eps = comp.epsilon;
  const double g0 =
      (comp.state(comp.t0) - comp.outer.X_at(comp.t0)).cwiseAbs().maxCoeff();
  if (g0 <= 0.0) return 0.0;
  const double target = g0 / std::numbers::e;
  const double tau_hi = comp.left.tau_max();
  const int steps = 8192;
  double prev_tau = 0.0, prev_g = g0;
  for (int k = 1; k <= steps; ++k) {
    const double tau = tau_hi * k / steps;
    const double t = comp.t0 + eps * tau;
    if (t > comp.t1) break;
    const double g = (comp.state(t) - comp.outer.X_at(t)).cwiseAbs().maxCoeff();
    if (g <= target) {
      const double frac = (prev_g - target) / std::max(prev_g - g, 1e-300);
      return eps * (prev_tau + frac * (tau - prev_tau));
    }
    prev_tau = tau;
    prev_g = g;
  }
  return eps * tau_hi;
}

/// Max control magnitude over the grid refined by the layer stretched-time
/// sample points (the peak sits at the boundary and is 1/eps-narrow).
inline double measure_u_peak(const CompositeSolution& comp) {
  double peak = 0.0;
  for (std::size_t k = 0; k < comp.traj.grid.size(); ++k)
    peak = std::max(peak, comp.traj.u[k].cwiseAbs().maxCoeff());
  for (const double tau : comp.left.tau_grid) {
    const double t = comp.t0 + comp.epsilon * tau;
    if (t > comp.t1) break;
    peak = std::max(peak, comp.control(t).cwiseAbs().maxCoeff());
  }
  for (const double tau : comp.right.tau_grid) {
    const double t = comp.t1 - comp.epsilon * tau;
    if (t < comp.t0) break;
    peak = std::max(peak, comp.control(t).cwiseAbs().maxCoeff());
  }
  return peak;
}

}  // namespace detail

/// Runs the configured experiment: linearizing gate first, then dispatch on
/// method. `compare` runs composite and oracle (composite warm start) and
/// reports interior/full difference metrics with exclude width 10 eps.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  const TrackingProblem problem = cfg.to_problem();
  ExperimentResult result;
  result.report = detail::run_linearizing_gate(cfg, problem);

  const auto grid = uniform_grid(cfg.t0, cfg.t1, cfg.dt);
  const OuterSystem outer_sys = build_outer_system(problem, result.report);

  if (cfg.method == "outer") {
    const OuterSolution outer = solve_outer_bvp(outer_sys, problem, grid);
    auto traj = detail::outer_as_trajectory(outer, problem);
    result.scalar_metrics["tracking_cost"] = evaluate_cost(traj, problem).tracking;
    result.solutions.emplace_back("outer", std::move(traj));
    return result;
  }

  if (cfg.method == "exact0") {
    auto traj = exact_eps0(problem, grid, &result.report);
    result.scalar_metrics["tracking_cost"] = evaluate_cost(traj, problem).tracking;
    result.scalar_metrics["kick_count"] = static_cast<double>(traj.kicks.size());
    result.solutions.emplace_back("exact0", std::move(traj));
    return result;
  }

  if (cfg.method == "composite") {
    const CompositeSolution comp = solve_composite(problem, grid, &result.report);
    const auto cost = evaluate_cost(comp.traj, problem);
    result.scalar_metrics["cost_total"] = cost.total;
    result.scalar_metrics["cost_tracking"] = cost.tracking;
    result.scalar_metrics["layer_width_left"] = detail::measure_layer_width(comp);
    result.scalar_metrics["u_peak"] = detail::measure_u_peak(comp);
    result.solutions.emplace_back("composite", comp.traj);
    return result;
  }

  if (cfg.method == "oracle" || cfg.method == "compare") {
    ShootingConfig sc = cfg.shooting_config();
    std::optional<CompositeSolution> comp;
    if (cfg.oracle.warm_start == "composite") {
      comp = solve_composite(problem, grid, &result.report);
      sc.initial_guess = comp->traj;
    }
    const OracleResult oracle = solve_tpbvp(problem, sc, grid);
    result.scalar_metrics["newton_iterations"] = oracle.newton_iterations;
    result.scalar_metrics["final_defect"] = oracle.final_defect;
    const auto cost = evaluate_cost(oracle.traj, problem);
    result.scalar_metrics["cost_total_oracle"] = cost.total;

    if (cfg.method == "compare") {
      if (!comp) {
        comp = solve_composite(problem, grid, &result.report);
      }
      const double exclude = 10.0 * problem.epsilon;
      result.metrics = compare_solutions(comp->traj, oracle.traj, exclude);
      result.scalar_metrics["interior_max_diff"] = result.metrics->interior_max_all;
      result.scalar_metrics["full_max_diff"] = result.metrics->full_max_all;
      result.scalar_metrics["argmax_time_full"] = result.metrics->argmax_time_full;
      const auto ccost = evaluate_cost(comp->traj, problem);
      result.scalar_metrics["cost_total_composite"] = ccost.total;
      result.solutions.emplace_back("composite", comp->traj);
    }
    result.solutions.emplace_back("oracle", oracle.traj);
    return result;
  }

  throw Error(ErrorCode::ParseError, "unknown method: " + cfg.method);
}

struct SweepRow {
  double eps = 0.0;
  double layer_width = 0.0;
  double u_peak = 0.0;
  double interior_deviation = 0.0;
  double cost = 0.0;
};

/// Composite solves across epsilons; rows run concurrently and are collected
/// in input order. interior_deviation is measured against the exact eps = 0
/// solution over a window fixed by the largest epsilon in the list.
inline std::vector<SweepRow> epsilon_sweep(const ExperimentConfig& cfg,
                                           std::span<const double> eps_list) {
  if (eps_list.size() < 2)
    throw Error(ErrorCode::ParseError, "epsilon sweep needs at least two values");
  const TrackingProblem base = cfg.to_problem();
  const auto report = detail::run_linearizing_gate(cfg, base);
  const auto grid = uniform_grid(cfg.t0, cfg.t1, cfg.dt);
  const auto exact = exact_eps0(base, grid, &report);

  double eps_max = 0.0;
  for (const double e : eps_list) eps_max = std::max(eps_max, e);
  const double lo = cfg.t0 + 10.0 * eps_max;
  const double hi = cfg.t1 - 10.0 * eps_max;

  auto solve_row = [&](double eps) {
    TrackingProblem p = base;
    p.epsilon = eps;
    const CompositeSolution comp = solve_composite(p, grid, &report);
    SweepRow row;
    row.eps = eps;
    row.layer_width = detail::measure_layer_width(comp);
    row.u_peak = detail::measure_u_peak(comp);
    for (std::size_t k = 0; k < grid.size(); ++k)
      if (grid[k] >= lo && grid[k] <= hi)
        row.interior_deviation = std::max(
            row.interior_deviation, (comp.traj.x[k] - exact.x[k]).cwiseAbs().maxCoeff());
    row.cost = evaluate_cost(comp.traj, p).total;
    return row;
  };

  std::vector<std::future<SweepRow>> futures;
  futures.reserve(eps_list.size());
  for (const double eps : eps_list)
    futures.push_back(std::async(std::launch::async, solve_row, eps));
  std::vector<SweepRow> rows;
  rows.reserve(eps_list.size());
  for (auto& f : futures) rows.push_back(f.get());
  return rows;
}

/// Sampled-data feedback: measure, rebuild the problem from the measured
/// state with the shrunken horizon, recompute the composite control, apply
/// until the next sample; the plant integrates the true nonlinear dynamics
/// plus an optional deterministic disturbance.
inline TrajectorySolution sampled_feedback(const ExperimentConfig& cfg, double sample_dt) {
  if (sample_dt < cfg.dt)
    throw Error(ErrorCode::DimensionMismatch, "sample_dt must be >= dt");
  const TrackingProblem base = cfg.to_problem();
  if (!(base.epsilon > 0.0))
    throw Error(ErrorCode::ParseError, "feedback requires epsilon > 0");
  const auto report = detail::run_linearizing_gate(cfg, base);

  const auto grid = uniform_grid(cfg.t0, cfg.t1, cfg.dt);
  const std::size_t cells_per_window =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(sample_dt / cfg.dt)));

  Vec disturbance_dir = Vec::Zero(base.system.n);
  std::vector<TrajectoryTerm> disturbance_terms;
  if (cfg.disturbance) {
    if (cfg.disturbance->component < 0 || cfg.disturbance->component >= base.system.n)
      throw Error(ErrorCode::DimensionMismatch, "disturbance component out of range");
    disturbance_dir[cfg.disturbance->component] = 1.0;
    disturbance_terms = cfg.disturbance->terms;
  }
  const auto disturbance_at = [&](double t) {
    double v = 0.0;
    for (const auto& term : disturbance_terms) v += term.value(t);
    return v;
  };

  TrajectorySolution traj;
  traj.flavor = SolutionFlavor::ClosedLoop;
  traj.grid = grid;
  traj.x.resize(grid.size());
  traj.u.resize(grid.size());

  Vec state = base.x0;
  std::size_t k = 0;
  traj.x[0] = state;
  while (k + 1 < grid.size()) {
    const double t_s = grid[k];
    if (base.t1 - t_s < 10.0 * base.epsilon)
      throw Error(ErrorCode::HorizonTooShort,
                  "remaining horizon is shorter than 10 epsilon; no layer separation left");

    TrackingProblem p = base;
    p.t0 = t_s;
    p.x0 = state;
    std::vector<double> sub_grid(grid.begin() + static_cast<std::ptrdiff_t>(k), grid.end());
    const CompositeSolution comp = solve_composite(p, sub_grid, &report);

    const std::size_t k_end = std::min(k + cells_per_window, grid.size() - 1);
    const OdeRhs plant = [&](double t, const Vec& x, Vec& dx) {
      const Vec u = comp.control(t);
      dx = base.system.R(x) + base.system.B(x) * u + disturbance_at(t) * disturbance_dir;
    };
    std::vector<double> stops(grid.begin() + static_cast<std::ptrdiff_t>(k),
                              grid.begin() + static_cast<std::ptrdiff_t>(k_end) + 1);
    OdeOptions opt;
    opt.rel_tol = 1e-10;
    opt.abs_tol = 1e-12;
    std::size_t idx = k;
    integrate_with_stops(plant, grid[k], grid[k_end], state, stops,
                         [&](double t, const Vec& x) {
                           traj.x[idx] = x;
                           traj.u[idx] = comp.control(t);
                           ++idx;
                         },
                         opt);
    state = traj.x[k_end];
    k = k_end;
  }
  return traj;
}

/// Writes the result files: one trajectory.csv for a single solution or
/// trajectory_<name>.csv each for several, kicks.json when delta kicks exist,
/// metrics.json, and report.json. Content is deterministic for identical
/// inputs.
inline void emit_outputs(const ExperimentResult& result, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create output directory " + dir.string());

  if (result.solutions.size() == 1) {
    write_trajectory_csv(dir / "trajectory.csv", result.solutions.front().second);
  } else {
    for (const auto& [name, traj] : result.solutions)
      write_trajectory_csv(dir / ("trajectory_" + name + ".csv"), traj);
  }
  for (const auto& [name, traj] : result.solutions)
    if (!traj.kicks.empty()) write_json_file(dir / "kicks.json", kicks_to_json(traj.kicks));

  nlohmann::json metrics;
  for (const auto& [key, value] : result.scalar_metrics) metrics[key] = value;
  write_json_file(dir / "metrics.json", metrics);
  write_json_file(dir / "report.json", report_to_json(result.report));
}

inline void emit_sweep(const std::vector<SweepRow>& rows, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create output directory " + dir.string());
  std::ofstream out(dir / "sweep.csv", std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write sweep.csv");
  out << "eps,layer_width,u_peak,interior_deviation,J\n";
  for (const auto& r : rows)
    out << detail::fmt_double(r.eps) << "," << detail::fmt_double(r.layer_width) << ","
        << detail::fmt_double(r.u_peak) << "," << detail::fmt_double(r.interior_deviation) << ","
        << detail::fmt_double(r.cost) << "\n";
}

}  // namespace otrack
