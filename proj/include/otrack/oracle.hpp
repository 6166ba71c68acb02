#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "otrack/ode.hpp"
#include "otrack/projectors.hpp"
#include "otrack/types.hpp"

namespace otrack {

struct ShootingConfig {
  enum class Jacobian { Analytic, FiniteDifference };

  int segments = 20;
  double integrator_tol = 1e-10;
  double newton_tol = 1e-9;
  int max_newton_iters = 50;
  Jacobian jacobian = Jacobian::Analytic;
  std::optional<TrajectorySolution> initial_guess;  // zeros when absent

  void validate() const {
    if (segments < 1) throw Error(ErrorCode::DimensionMismatch, "segments must be >= 1");
    if (!(integrator_tol > 0.0) || !(newton_tol > 0.0))
      throw Error(ErrorCode::DimensionMismatch, "tolerances must be > 0");
  }
};

/// Combined state z = (x; lambda) dynamics of the necessary optimality
/// conditions with the control eliminated, u = -B^T lambda / eps^2.
inline Vec hamiltonian_rhs(const TrackingProblem& problem, double t, const Vec& z) {
  const int n = problem.system.n;
  const Vec x = z.head(n);
  const Vec lambda = z.tail(n);
  const double e2 = problem.epsilon * problem.epsilon;
  const Mat B = problem.system.B(x);
  const Vec u = -(B.transpose() * lambda) / e2;
  Vec dz(2 * n);
  dz.head(n) = problem.system.R(x) + B * u;
  const Mat gradBu = problem.system.grad_B_contract(x, u);
  dz.tail(n) = -(problem.system.grad_R(x).transpose() + gradBu.transpose()) * lambda -
               problem.S * (x - problem.xd.value(t));
  return dz;
}

/// Jacobian of the combined vector field. Three blocks are assembled from the
/// model's first derivatives; the co-state/state block needs second
/// derivatives of R and B, which the system interface does not carry, so that
/// block uses central differences of the co-state equation.
inline Mat hamiltonian_jacobian(const TrackingProblem& problem, double t, const Vec& z) {
  const int n = problem.system.n;
  const Vec x = z.head(n);
  const Vec lambda = z.tail(n);
  const double e2 = problem.epsilon * problem.epsilon;
  const Mat B = problem.system.B(x);
  const auto gradB = problem.system.grad_B(x);
  const Vec u = -(B.transpose() * lambda) / e2;

  Mat jac(2 * n, 2 * n);

  // d xdot / dx = gradR + sum_j e_j ( gradB[j] u - B gradB[j]^T lambda / e2 )
  Mat a11 = problem.system.grad_R(x);
  for (int j = 0; j < n; ++j)
    a11.col(j) += gradB[j] * u - B * (gradB[j].transpose() * lambda) / e2;
  jac.topLeftCorner(n, n) = a11;
  jac.topRightCorner(n, n) = -(B * B.transpose()) / e2;

  // d lambdadot / dlambda: direct coefficient plus the u(lambda) chain term
  const Mat gradBu = problem.system.grad_B_contract(x, u);
  Mat m(n, static_cast<int>(B.cols()));
  for (int i = 0; i < n; ++i) m.row(i) = (gradB[i].transpose() * lambda).transpose();
  jac.bottomRightCorner(n, n) =
      -(problem.system.grad_R(x).transpose() + gradBu.transpose()) + (m * B.transpose()) / e2;

  // d lambdadot / dx by central differences (holds lambda fixed)
  const auto costate_rhs = [&](const Vec& xs) -> Vec {
    const Mat Bs = problem.system.B(xs);
    const Vec us = -(Bs.transpose() * lambda) / e2;
    return -(problem.system.grad_R(xs).transpose() +
             problem.system.grad_B_contract(xs, us).transpose()) *
               lambda -
           problem.S * (xs - problem.xd.value(t));
  };
  Mat a21(n, n);
  for (int j = 0; j < n; ++j) {
    const double h = 1e-6 * (1.0 + std::abs(x[j]));
    Vec xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    a21.col(j) = (costate_rhs(xp) - costate_rhs(xm)) / (2.0 * h);
  }
  jac.bottomLeftCorner(n, n) = a21;
  return jac;
}

struct FlowResult {
  Vec endpoint;
  Mat jacobian;  // d endpoint / d initial state (empty when not requested)
};

/// Propagates z over [ta, tb]; the sensitivity is either integrated jointly
/// via the variational equation or obtained from central differences of the
/// endpoint map (two independent routes, used to cross-check each other).
inline FlowResult segment_flow(const TrackingProblem& problem, double ta, double tb, const Vec& s,
                               double tol, std::optional<ShootingConfig::Jacobian> jac_mode) {
  const int dim = static_cast<int>(s.size());
  OdeOptions opt;
  opt.rel_tol = tol;
  opt.abs_tol = tol * 1e-2;

  FlowResult out;
  if (!jac_mode) {
    const OdeRhs rhs = [&](double t, const Vec& z, Vec& dz) {
      dz = hamiltonian_rhs(problem, t, z);
    };
    out.endpoint = integrate_to(rhs, ta, tb, s, opt);
    return out;
  }

  if (*jac_mode == ShootingConfig::Jacobian::Analytic) {
    // joint propagation of z and the variational matrix Psi (column-major)
    const OdeRhs rhs = [&](double t, const Vec& zz, Vec& dz) {
      const Vec z = zz.head(dim);
      dz.resize(dim + dim * dim);
      dz.head(dim) = hamiltonian_rhs(problem, t, z);
      const Mat jac = hamiltonian_jacobian(problem, t, z);
      const Eigen::Map<const Mat> psi(zz.data() + dim, dim, dim);
      Eigen::Map<Mat>(dz.data() + dim, dim, dim) = jac * psi;
    };
    Vec z0(dim + dim * dim);
    z0.head(dim) = s;
    Eigen::Map<Mat>(z0.data() + dim, dim, dim) = Mat::Identity(dim, dim);
    const Vec zf = integrate_to(rhs, ta, tb, z0, opt);
    out.endpoint = zf.head(dim);
    out.jacobian = Eigen::Map<const Mat>(zf.data() + dim, dim, dim);
    return out;
  }

  const OdeRhs rhs = [&](double t, const Vec& z, Vec& dz) {
    dz = hamiltonian_rhs(problem, t, z);
  };
  out.endpoint = integrate_to(rhs, ta, tb, s, opt);
  out.jacobian.resize(dim, dim);
  for (int j = 0; j < dim; ++j) {
    const double h = std::sqrt(1e-12) * (1.0 + std::abs(s[j]));
    Vec sp = s, sm = s;
    sp[j] += h;
    sm[j] -= h;
    out.jacobian.col(j) =
        (integrate_to(rhs, ta, tb, sp, opt) - integrate_to(rhs, ta, tb, sm, opt)) / (2.0 * h);
  }
  return out;
}

struct OracleResult {
  TrajectorySolution traj;
  int newton_iterations = 0;
  double final_defect = 0.0;
};

/// Direct numerical solution of the necessary optimality conditions as a
/// two-point BVP: multiple shooting on the combined (x, lambda) system with a
/// damped Newton iteration on the matching and boundary conditions.
inline OracleResult solve_tpbvp(const TrackingProblem& problem, const ShootingConfig& cfg,
                                std::optional<std::vector<double>> output_grid = {}) {
  cfg.validate();
  if (!(problem.epsilon > 0.0))
    throw Error(ErrorCode::NotSupported,
                "the eps = 0 problem is singular; use exact_eps0 instead of the oracle");
  const int n = problem.system.n;
  const int dim = 2 * n;
  const int m = cfg.segments;
  const int N = (m + 1) * dim;

  std::vector<double> nodes(m + 1);
  for (int i = 0; i <= m; ++i)
    nodes[i] = problem.t0 + (problem.t1 - problem.t0) * i / static_cast<double>(m);

  // initial iterate: warm start interpolated from a guess trajectory, zeros otherwise
  Vec Z = Vec::Zero(N);
  if (cfg.initial_guess) {
    const auto& g = *cfg.initial_guess;
    auto interp = [&](double t, const std::vector<Vec>& arr) -> Vec {
      if (arr.empty()) return Vec::Zero(n);
      const auto it = std::upper_bound(g.grid.begin(), g.grid.end(), t);
      if (it == g.grid.begin()) return arr.front();
      if (it == g.grid.end()) return arr.back();
      const std::size_t hi = static_cast<std::size_t>(it - g.grid.begin());
      const double w = (t - g.grid[hi - 1]) / (g.grid[hi] - g.grid[hi - 1]);
      return (1.0 - w) * arr[hi - 1] + w * arr[hi];
    };
    for (int i = 0; i <= m; ++i) {
      Z.segment(i * dim, n) = interp(nodes[i], g.x);
      Z.segment(i * dim + n, n) = interp(nodes[i], g.lambda);
    }
  }

  const auto residual_of = [&](const Vec& ZZ, std::vector<FlowResult>* flows) -> Vec {
    Vec F(N);
    for (int i = 0; i < m; ++i) {
      FlowResult fr = segment_flow(problem, nodes[i], nodes[i + 1], ZZ.segment(i * dim, dim),
                                   cfg.integrator_tol,
                                   flows ? std::optional(cfg.jacobian) : std::nullopt);
      F.segment(i * dim, dim) = fr.endpoint - ZZ.segment((i + 1) * dim, dim);
      if (flows) (*flows)[i] = std::move(fr);
    }
    F.segment(m * dim, n) = ZZ.head(n) - problem.x0;
    F.segment(m * dim + n, n) = ZZ.segment(m * dim, n) - problem.x1;
    return F;
  };

  int iterations = 0;
  Vec F = residual_of(Z, nullptr);
  double fnorm = F.cwiseAbs().maxCoeff();

  while (fnorm > cfg.newton_tol) {
    if (iterations >= cfg.max_newton_iters)
      throw Error(ErrorCode::NewtonDiverged,
                  "Newton did not converge; consider more segments or a composite warm start");
    ++iterations;

    std::vector<FlowResult> flows(m);
    F = residual_of(Z, &flows);
    Mat J = Mat::Zero(N, N);
    for (int i = 0; i < m; ++i) {
      J.block(i * dim, i * dim, dim, dim) = flows[i].jacobian;
      J.block(i * dim, (i + 1) * dim, dim, dim) = -Mat::Identity(dim, dim);
    }
    J.block(m * dim, 0, n, n) = Mat::Identity(n, n);
    J.block(m * dim + n, m * dim, n, n) = Mat::Identity(n, n);

    Eigen::PartialPivLU<Mat> lu(J);
    const Vec step = lu.solve(-F);
    if (!step.allFinite())
      throw Error(ErrorCode::NewtonDiverged, "Newton step is not finite");

    double alpha = 1.0;
    bool accepted = false;
    for (int back = 0; back < 30; ++back) {
      const Vec Zt = Z + alpha * step;
      Vec Ft;
      try {
        Ft = residual_of(Zt, nullptr);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::IntegratorFailure) throw;
        alpha *= 0.5;
        continue;
      }
      const double fn = Ft.cwiseAbs().maxCoeff();
      if (std::isfinite(fn) && fn < (1.0 - 1e-4 * alpha) * fnorm) {
        Z = Zt;
        F = Ft;
        fnorm = fn;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted)
      throw Error(ErrorCode::NewtonDiverged, "line search failed to reduce the defect");
  }

  // sample the converged trajectory on the output grid
  OracleResult result;
  result.newton_iterations = iterations;
  result.final_defect = fnorm;
  auto& traj = result.traj;
  traj.flavor = SolutionFlavor::Oracle;
  traj.grid = output_grid ? std::move(*output_grid)
                          : uniform_grid(problem.t0, problem.t1,
                                         (problem.t1 - problem.t0) / 1000.0);

  OdeOptions opt;
  opt.rel_tol = cfg.integrator_tol;
  opt.abs_tol = cfg.integrator_tol * 1e-2;
  const OdeRhs rhs = [&](double t, const Vec& z, Vec& dz) {
    dz = hamiltonian_rhs(problem, t, z);
  };
  const double e2 = problem.epsilon * problem.epsilon;

  traj.x.reserve(traj.grid.size());
  std::size_t cursor = 0;
  for (int i = 0; i < m; ++i) {
    std::vector<double> stops;
    stops.push_back(nodes[i]);
    while (cursor < traj.grid.size() && traj.grid[cursor] <= nodes[i + 1] + 1e-13) {
      if (traj.grid[cursor] >= nodes[i] - 1e-13) stops.push_back(traj.grid[cursor]);
      ++cursor;
    }
    std::vector<Vec> zs;
    integrate_with_stops(rhs, nodes[i], nodes[i + 1], Z.segment(i * dim, dim), stops,
                         [&](double, const Vec& z) { zs.push_back(z); }, opt);
    for (std::size_t k = 1; k < zs.size(); ++k) {  // skip the node itself
      const double t = stops[k];
      const Vec x = zs[k].head(n);
      const Vec lambda = zs[k].tail(n);
      const Mat B = problem.system.B(x);
      const Vec u = -(B.transpose() * lambda) / e2;
      traj.x.push_back(x);
      traj.lambda.push_back(lambda);
      traj.u.push_back(u);
      traj.xdot.push_back(problem.system.R(x) + B * u);
    }
  }
  if (traj.x.size() != traj.grid.size())
    throw Error(ErrorCode::GridMismatch, "oracle resampling mismatch");
  return result;
}

struct CostBreakdown {
  double tracking = 0.0;
  double control_energy = 0.0;  // (eps^2 / 2) integral of |u|^2
  double total = 0.0;
  bool control_unbounded = false;  // delta kicks at eps > 0
};

/// Quadratic tracking cost of a sampled trajectory: Simpson on uniform grids
/// with an even cell count, trapezoid otherwise. Delta kicks make the control
/// energy infinite for eps > 0 and are ignored in the eps = 0 tracking term.
inline CostBreakdown evaluate_cost(const TrajectorySolution& traj,
                                   const TrackingProblem& problem) {
  const double span = problem.t1 - problem.t0;
  if (traj.grid.size() < 2 || std::abs(traj.grid.front() - problem.t0) > 1e-9 * span ||
      std::abs(traj.grid.back() - problem.t1) > 1e-9 * span)
    throw Error(ErrorCode::GridMismatch, "trajectory does not cover [t0, t1]");

  const std::size_t m = traj.grid.size();
  std::vector<double> track(m), energy(m, 0.0);
  for (std::size_t k = 0; k < m; ++k) {
    const Vec d = traj.x[k] - problem.xd.value(traj.grid[k]);
    track[k] = 0.5 * d.dot(problem.S * d);
    if (!traj.u.empty()) energy[k] = 0.5 * traj.u[k].squaredNorm();
  }

  bool uniform = true;
  const double dt0 = traj.grid[1] - traj.grid[0];
  for (std::size_t k = 1; k + 1 < m; ++k)
    if (std::abs((traj.grid[k + 1] - traj.grid[k]) - dt0) > 1e-9 * dt0) uniform = false;

  const auto quadrature = [&](const std::vector<double>& f) {
    if (uniform && m % 2 == 1) {
      double s = f.front() + f.back();
      for (std::size_t k = 1; k + 1 < m; ++k) s += (k % 2 == 1 ? 4.0 : 2.0) * f[k];
      return s * dt0 / 3.0;
    }
    double s = 0.0;
    for (std::size_t k = 0; k + 1 < m; ++k)
      s += 0.5 * (f[k] + f[k + 1]) * (traj.grid[k + 1] - traj.grid[k]);
    return s;
  };

  CostBreakdown out;
  out.tracking = quadrature(track);
  const double e2 = problem.epsilon * problem.epsilon;
  if (e2 > 0.0) {
    if (traj.flavor == SolutionFlavor::ExactEps0 && !traj.kicks.empty()) {
      out.control_unbounded = true;
      out.control_energy = std::numeric_limits<double>::infinity();
      out.total = std::numeric_limits<double>::infinity();
      return out;
    }
    out.control_energy = e2 * quadrature(energy);
  }
  out.total = out.tracking + out.control_energy;
  return out;
}

struct ResidualReport {
  double stationarity_max = 0.0;    // eps^2 u + B^T lambda
  double state_defect_max = 0.0;    // xdot - R - B u
  double costate_defect_max = 0.0;  // lambdadot + (gradR^T + (gradB u)^T) lambda + S (x - x_d)
  double rearranged1_max = 0.0;     // Q-row co-state equation
  double rearranged2_max = 0.0;     // eps^2 Gamma xddot equation
  double rearranged3_max = 0.0;     // Q xdot = Q R
};

/// Pointwise audit of the raw and rearranged optimality systems on a sampled
/// trajectory; time derivatives are central differences (one-sided at the
/// ends), so the report carries an O(dt^2) discretization floor.
inline ResidualReport optimality_residuals(const TrajectorySolution& traj,
                                           const TrackingProblem& problem) {
  const int n = problem.system.n;
  const std::size_t m = traj.grid.size();
  if (traj.lambda.empty() || traj.u.empty())
    throw Error(ErrorCode::GridMismatch, "residual audit needs x, lambda, and u samples");
  const double e2 = problem.epsilon * problem.epsilon;

  const auto fd = [&](const std::vector<Vec>& arr, std::size_t k) -> Vec {
    if (k == 0) return (arr[1] - arr[0]) / (traj.grid[1] - traj.grid[0]);
    if (k == m - 1) return (arr[m - 1] - arr[m - 2]) / (traj.grid[m - 1] - traj.grid[m - 2]);
    return (arr[k + 1] - arr[k - 1]) / (traj.grid[k + 1] - traj.grid[k - 1]);
  };
  const auto fd2 = [&](const std::vector<Vec>& arr, std::size_t k) -> Vec {
    const std::size_t i = std::clamp<std::size_t>(k, 1, m - 2);
    const double hl = traj.grid[i] - traj.grid[i - 1], hr = traj.grid[i + 1] - traj.grid[i];
    return 2.0 * (hl * arr[i + 1] - (hl + hr) * arr[i] + hr * arr[i - 1]) /
           (hl * hr * (hl + hr));
  };

  ResidualReport rep;
  for (std::size_t k = 0; k < m; ++k) {
    const double t = traj.grid[k];
    const Vec& x = traj.x[k];
    const Vec& lambda = traj.lambda[k];
    const Vec& u = traj.u[k];
    const Vec xd = problem.xd.value(t);
    const Mat B = problem.system.B(x);
    const Vec R = problem.system.R(x);
    const Mat gradR = problem.system.grad_R(x);
    const Vec xdot = fd(traj.x, k);
    const Vec lambdadot = fd(traj.lambda, k);

    const Vec stat = e2 * u + B.transpose() * lambda;
    const Vec state = xdot - R - B * u;
    const Vec costate =
        lambdadot + (gradR.transpose() + problem.system.grad_B_contract(x, u).transpose()) * lambda +
        problem.S * (x - xd);
    rep.stationarity_max = std::max(rep.stationarity_max, stat.cwiseAbs().maxCoeff());
    rep.state_defect_max = std::max(rep.state_defect_max, state.cwiseAbs().maxCoeff());
    rep.costate_defect_max = std::max(rep.costate_defect_max, costate.cwiseAbs().maxCoeff());

    // rearranged system: W, w_eps, and the projected equations
    const ProjectorSet ps = projector_set(problem.system, problem.S, x);
    const Mat W = problem.system.grad_B_contract(x, ps.bg * (xdot - R));
    const Vec w_eps = (gradR.transpose() + W.transpose()) *
                      (ps.Q.transpose() * lambda - e2 * ps.gamma * (xdot - R));

    const Vec r1 = ps.Q.transpose() * lambdadot + ps.Q.transpose() * w_eps +
                   ps.Q.transpose() * problem.S * ps.Q * (x - xd);
    rep.rearranged1_max = std::max(rep.rearranged1_max, r1.cwiseAbs().maxCoeff());

    const Vec r3 = ps.Q * (xdot - R);
    rep.rearranged3_max = std::max(rep.rearranged3_max, r3.cwiseAbs().maxCoeff());

    if (k > 0 && k + 1 < m) {
      // matrix time derivatives along the trajectory by central differences
      const ProjectorSet ps_prev = projector_set(problem.system, problem.S, traj.x[k - 1]);
      const ProjectorSet ps_next = projector_set(problem.system, problem.S, traj.x[k + 1]);
      const double h2 = traj.grid[k + 1] - traj.grid[k - 1];
      const Mat gamma_dot = (ps_next.gamma - ps_prev.gamma) / h2;
      const Mat qt_dot = (ps_next.Q.transpose() - ps_prev.Q.transpose()) / h2;
      const Vec xddot = fd2(traj.x, k);

      const Vec r2 = e2 * ps.gamma * xddot -
                     e2 * ps.P.transpose() *
                         (ps.gamma * gradR * xdot - gamma_dot * (xdot - R)) -
                     ps.P.transpose() * w_eps -
                     ps.P.transpose() * qt_dot * ps.Q.transpose() * lambda -
                     ps.P.transpose() * problem.S * ps.P * (x - xd);
      rep.rearranged2_max = std::max(rep.rearranged2_max, r2.cwiseAbs().maxCoeff());
    }
  }
  return rep;
}

struct CompareMetrics {
  Vec interior_max;  // per state component
  Vec full_max;
  Vec interior_l2;
  Vec full_l2;
  double interior_max_all = 0.0;
  double full_max_all = 0.0;
  double argmax_time_full = 0.0;  // where the full-interval max is attained
};

/// Per-component max and L2 differences between two solutions, over the full
/// interval and with `exclude_width` trimmed from both ends.
inline CompareMetrics compare_solutions(const TrajectorySolution& a, const TrajectorySolution& b,
                                        double exclude_width) {
  const double span = a.grid.back() - a.grid.front();
  if (std::abs(a.grid.front() - b.grid.front()) > 1e-9 * span ||
      std::abs(a.grid.back() - b.grid.back()) > 1e-9 * span)
    throw Error(ErrorCode::GridMismatch, "solutions cover different intervals");

  const int n = static_cast<int>(a.x.front().size());
  const auto resample = [&](double t) -> Vec {
    const auto it = std::upper_bound(b.grid.begin(), b.grid.end(), t);
    if (it == b.grid.begin()) return b.x.front();
    if (it == b.grid.end()) return b.x.back();
    const std::size_t hi = static_cast<std::size_t>(it - b.grid.begin());
    const double w = (t - b.grid[hi - 1]) / (b.grid[hi] - b.grid[hi - 1]);
    return (1.0 - w) * b.x[hi - 1] + w * b.x[hi];
  };

  CompareMetrics mtr;
  mtr.interior_max = Vec::Zero(n);
  mtr.full_max = Vec::Zero(n);
  mtr.interior_l2 = Vec::Zero(n);
  mtr.full_l2 = Vec::Zero(n);
  const double lo = a.grid.front() + exclude_width;
  const double hi = a.grid.back() - exclude_width;

  for (std::size_t k = 0; k < a.grid.size(); ++k) {
    const double t = a.grid[k];
    const Vec d = (a.x[k] - resample(t)).cwiseAbs();
    const double dt =
        (k == 0 ? a.grid[1] - a.grid[0]
                : (k + 1 == a.grid.size() ? a.grid[k] - a.grid[k - 1]
                                          : 0.5 * (a.grid[k + 1] - a.grid[k - 1])));
    mtr.full_max = mtr.full_max.cwiseMax(d);
    mtr.full_l2 += dt * d.cwiseProduct(d);
    if (d.maxCoeff() >= mtr.full_max_all) {
      mtr.full_max_all = d.maxCoeff();
      mtr.argmax_time_full = t;
    }
    if (t >= lo && t <= hi) {
      mtr.interior_max = mtr.interior_max.cwiseMax(d);
      mtr.interior_l2 += dt * d.cwiseProduct(d);
    }
  }
  mtr.full_l2 = mtr.full_l2.cwiseSqrt();
  mtr.interior_l2 = mtr.interior_l2.cwiseSqrt();
  mtr.interior_max_all = mtr.interior_max.maxCoeff();
  return mtr;
}

}  // namespace otrack
