#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "otrack/inner.hpp"
#include "otrack/ode.hpp"
#include "otrack/outer.hpp"
#include "otrack/projectors.hpp"
#include "otrack/types.hpp"

namespace otrack {

namespace detail {

inline Mat bg_at(const ControlAffineSystem& system, const Mat& S, const Vec& x) {
  try {
    return projector_set(system, S, x).bg;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::SingularGram)
      throw Error(ErrorCode::VanishingB, "control authority lost: " + std::string(e.what()));
    throw;
  }
}

}  // namespace detail

/// Uniformly valid composite solution: outer plus boundary layers minus the
/// matched overlaps. Carries pointwise evaluators so that controls, costs and
/// impulses can be computed off-grid; all members are value-owning.
struct CompositeSolution {
  TrajectorySolution traj;
  OuterSolution outer;
  InnerSolution left;
  InnerSolution right;
  Vec overlap_left;   // P X(t0)
  Vec overlap_right;  // P X(t1)

  ControlAffineSystem system;
  Mat S;
  double epsilon = 0.0;
  double t0 = 0.0;
  double t1 = 0.0;

  Vec state(double t) const {
    return outer.X_at(t) + left.eval((t - t0) / epsilon) - overlap_left +
           right.eval((t1 - t) / epsilon) - overlap_right;
  }

  /// Analytic derivative: outer derivative plus 1/eps-scaled layer slopes.
  Vec state_deriv(double t) const {
    return outer.Xdot_at(t) + left.eval_deriv((t - t0) / epsilon) / epsilon -
           right.eval_deriv((t1 - t) / epsilon) / epsilon;
  }

  Vec control(double t) const {
    const Vec x = state(t);
    return detail::bg_at(system, S, x) * (state_deriv(t) - system.R(x));
  }

  /// Leading-order co-state with the P^T lambda reconstruction
  /// lambda = Q^T Lambda - eps^2 Gamma(x) (xdot - R(x)).
  Vec costate(double t) const {
    const Vec x = state(t);
    const Vec ql = outer.QLambda_at(t);
    const Mat gamma = projector_set(system, S, x).gamma;
    return ql - epsilon * epsilon * gamma * (state_deriv(t) - system.R(x));
  }
};

/// Assembles the composite solution from matched outer and inner parts and
/// samples it on the outer grid.
inline CompositeSolution compose(const OuterSolution& outer, const InnerSolution& left,
                                 const InnerSolution& right, const TrackingProblem& problem) {
  if (!(problem.epsilon > 0.0))
    throw Error(ErrorCode::NotSupported, "composite requires epsilon > 0; use exact_eps0");

  CompositeSolution c;
  c.outer = outer;
  c.left = left;
  c.right = right;
  c.system = problem.system;
  c.S = problem.S;
  c.epsilon = problem.epsilon;
  c.t0 = problem.t0;
  c.t1 = problem.t1;

  const Mat& P = outer.sys.proj.P;
  c.overlap_left = P * outer.X.front();
  c.overlap_right = P * outer.X.back();

  const double scale = 1.0 + outer.X.front().cwiseAbs().maxCoeff();
  if ((left.limit_value - c.overlap_left).cwiseAbs().maxCoeff() > 1e-8 * scale ||
      (right.limit_value - c.overlap_right).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw Error(ErrorCode::MatchingFailure,
                "inner limits do not match the outer endpoint values");

  c.traj.flavor = SolutionFlavor::Composite;
  c.traj.grid = outer.grid;
  const std::size_t m = outer.grid.size();
  c.traj.x.resize(m);
  c.traj.xdot.resize(m);
  c.traj.u.resize(m);
  c.traj.lambda.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    const double t = outer.grid[k];
    c.traj.x[k] = c.state(t);
    c.traj.xdot[k] = c.state_deriv(t);
    c.traj.u[k] = c.control(t);
    c.traj.lambda[k] = c.costate(t);
  }
  return c;
}

/// u = Bg(x) (xdot - R(x)) per sample; uses the stored analytic derivative
/// when present and central grid differences otherwise.
inline std::vector<Vec> control_signal(const TrajectorySolution& traj,
                                       const ControlAffineSystem& system, const Mat& S) {
  const std::size_t m = traj.grid.size();
  std::vector<Vec> u(m);
  auto xdot_at = [&](std::size_t k) -> Vec {
    if (!traj.xdot.empty()) return traj.xdot[k];
    if (k == 0)
      return (traj.x[1] - traj.x[0]) / (traj.grid[1] - traj.grid[0]);
    if (k == m - 1)
      return (traj.x[m - 1] - traj.x[m - 2]) / (traj.grid[m - 1] - traj.grid[m - 2]);
    return (traj.x[k + 1] - traj.x[k - 1]) / (traj.grid[k + 1] - traj.grid[k - 1]);
  };
  for (std::size_t k = 0; k < m; ++k)
    u[k] = detail::bg_at(system, S, traj.x[k]) * (xdot_at(k) - system.R(traj.x[k]));
  return u;
}

/// Exact eps = 0 solution: interior state from the outer equations alone,
/// state jumps at the boundaries recorded as delta kicks of strength
/// +-2 Bg(x_b) (X(t_b) - x_b). Grid samples carry only the regular control;
/// the singular part lives in `kicks`.
inline TrajectorySolution exact_eps0(const TrackingProblem& problem,
                                     std::optional<std::vector<double>> output_grid = {},
                                     const LinearizingReport* report = nullptr) {
  LinearizingReport local;
  if (report == nullptr) {
    local = verify_linearizing(problem.system, problem.S,
                               default_linearizing_samples(problem));
    report = &local;
  }
  const OuterSystem sys = build_outer_system(problem, *report);
  const OuterSolution outer = solve_outer_bvp(sys, problem, std::move(output_grid));

  TrajectorySolution traj;
  traj.flavor = SolutionFlavor::ExactEps0;
  traj.grid = outer.grid;
  const std::size_t m = outer.grid.size();
  traj.x.resize(m);
  traj.lambda.resize(m);
  traj.u.resize(m);
  traj.xdot = outer.Xdot;

  for (std::size_t k = 0; k < m; ++k) {
    traj.x[k] = outer.X[k];
    traj.lambda[k] = outer.QLambda[k];  // P^T lambda = 0 identically
    traj.u[k] = detail::bg_at(problem.system, problem.S, outer.X[k]) *
                (outer.Xdot[k] - problem.system.R(outer.X[k]));
  }
  // boundary samples take the prescribed states and the regular control part
  traj.x.front() = problem.x0;
  traj.x.back() = problem.x1;
  traj.u.front() = detail::bg_at(problem.system, problem.S, problem.x0) *
                   (outer.Xdot.front() - problem.system.R(problem.x0));
  traj.u.back() = detail::bg_at(problem.system, problem.S, problem.x1) *
                  (outer.Xdot.back() - problem.system.R(problem.x1));

  const Mat& P = sys.proj.P;
  const double scale = 1.0 + problem.x0.cwiseAbs().maxCoeff() + problem.x1.cwiseAbs().maxCoeff();
  const Vec jump0 = P * (outer.X.front() - problem.x0);
  const Vec jump1 = P * (outer.X.back() - problem.x1);
  if (jump0.cwiseAbs().maxCoeff() > 1e-10 * scale) {
    DeltaKick kick;
    kick.time = problem.t0;
    kick.jump = jump0;
    kick.strength = 2.0 * detail::bg_at(problem.system, problem.S, problem.x0) *
                    (outer.X.front() - problem.x0);
    traj.kicks.push_back(std::move(kick));
  }
  if (jump1.cwiseAbs().maxCoeff() > 1e-10 * scale) {
    DeltaKick kick;
    kick.time = problem.t1;
    kick.jump = jump1;
    kick.strength = -2.0 * detail::bg_at(problem.system, problem.S, problem.x1) *
                    (outer.X.back() - problem.x1);
    traj.kicks.push_back(std::move(kick));
  }
  return traj;
}

/// Full composite pipeline: verify, outer BVP, boundary layers, assembly.
/// Layer path: first-order 2D reduction when available, constant-B linear
/// solver otherwise; state-dependent B outside the 2D class has no closed
/// reduction and is rejected with guidance towards the eps = 0 exact path.
inline CompositeSolution solve_composite(const TrackingProblem& problem,
                                         std::optional<std::vector<double>> output_grid = {},
                                         const LinearizingReport* report = nullptr) {
  if (!(problem.epsilon > 0.0))
    throw Error(ErrorCode::NotSupported, "composite requires epsilon > 0; use exact_eps0");
  LinearizingReport local;
  if (report == nullptr) {
    local = verify_linearizing(problem.system, problem.S,
                               default_linearizing_samples(problem));
    report = &local;
  }
  const OuterSystem sys = build_outer_system(problem, *report);
  const OuterSolution outer = solve_outer_bvp(sys, problem, std::move(output_grid));

  InnerSolution left, right;
  if (detect_2d_class(problem)) {
    left = inner_left_2d(problem, outer.X.front()[1]);
    right = inner_right_2d(problem, outer.X.back()[1]);
  } else {
    const Mat B0 = problem.system.B(problem.x0);
    bool const_b = (B0 - problem.system.B(problem.x1)).cwiseAbs().maxCoeff() <=
                   1e-12 * (1.0 + B0.cwiseAbs().maxCoeff());
    for (const auto& g : problem.system.grad_B(problem.x0))
      const_b = const_b && g.cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + B0.cwiseAbs().maxCoeff());
    if (!const_b)
      throw Error(ErrorCode::NotSupported,
                  "no boundary-layer reduction for state-dependent B outside the 2D class; "
                  "the eps = 0 exact path (exact_eps0) does not need layers");
    left = inner_linear_constB(problem, InnerSolution::Side::Left, outer.X.front());
    right = inner_linear_constB(problem, InnerSolution::Side::Right, outer.X.back());
  }
  return compose(outer, left, right, problem);
}

/// Per-epsilon control impulse over the left layer window [t0, t0 + C eps].
/// `impulse_layer` subtracts the smooth outer feedforward impulse over the
/// same window, isolating the singular contribution. A boundary delta kick
/// contributes half its mass inside the domain, so impulse_layer converges to
/// half the recorded kick strength as eps -> 0.
struct ImpulseCheck {
  double eps = 0.0;
  Vec impulse_raw;
  Vec impulse_layer;
  Vec kick_strength;  // from the exact eps = 0 solution
};

inline std::vector<ImpulseCheck> kick_impulse_check(const TrackingProblem& problem,
                                                    std::span<const double> eps_list,
                                                    double window_efolds = 40.0) {
  const auto exact = exact_eps0(problem);
  Vec strength = Vec::Zero(problem.system.p);
  for (const auto& kick : exact.kicks)
    if (kick.time == problem.t0) strength = kick.strength;

  std::vector<ImpulseCheck> out;
  out.reserve(eps_list.size());
  for (const double eps : eps_list) {
    TrackingProblem p = problem;
    p.epsilon = eps;
    const CompositeSolution comp = solve_composite(p);
    const double tau_hi =
        std::min(window_efolds / comp.left.decay_rate, (p.t1 - p.t0) / eps);

    ImpulseCheck row;
    row.eps = eps;
    row.kick_strength = strength;
    // integrate in stretched time: integral u dt = eps * integral u(t0+eps tau) dtau
    QuadOptions quad;
    quad.abs_tol = 1e-9;
    quad.rel_tol = 1e-9;
    row.impulse_raw = eps * integrate_gk_vec(
                                [&](double tau) { return comp.control(p.t0 + eps * tau); }, 0.0,
                                tau_hi, problem.system.p, quad);
    const Vec outer_part =
        eps * integrate_gk_vec(
                  [&](double tau) {
                    const double t = p.t0 + eps * tau;
                    const Vec x = comp.outer.X_at(t);
                    return Vec(detail::bg_at(p.system, p.S, x) *
                               (comp.outer.Xdot_at(t) - p.system.R(x)));
                  },
                  0.0, tau_hi, problem.system.p, quad);
    row.impulse_layer = row.impulse_raw - outer_part;
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace otrack
