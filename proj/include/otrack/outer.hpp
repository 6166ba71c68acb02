#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "otrack/ode.hpp"
#include "otrack/projectors.hpp"
#include "otrack/types.hpp"

namespace otrack {

/// Linear outer system for the stacked unknown v = (Q^T Lambda; Q X):
/// vdot = M v + forcing(t), with M assembled from the certified constant
/// projectors and the effective Q-row affine data QA, Qb.
struct OuterSystem {
  int n = 0;
  int p = 0;
  ProjectorSet proj;  // state-independent, certified by the linearizing report
  Mat QA;             // Q-row content of A (rows in range(Q))
  Vec Qb;
  Mat S;
  Mat M;  // 2n x 2n
  DesiredTrajectory xd;

  Vec forcing(double t) const {
    const Vec xdt = xd.value(t);
    Vec g(2 * n);
    g.head(n) = proj.Q.transpose() * S * proj.Q * xdt;
    g.tail(n) = QA * proj.P * xdt + Qb;
    return g;
  }
};

inline OuterSystem build_outer_system(const TrackingProblem& problem,
                                      const LinearizingReport& report) {
  if (!report.ok())
    throw Error(ErrorCode::NotLinearizable,
                "linearizing assumption not certified (omega_constant=" +
                    std::to_string(report.omega_constant) +
                    ", qr_affine=" + std::to_string(report.qr_affine) + ")");
  OuterSystem sys;
  sys.n = problem.system.n;
  sys.p = problem.system.p;
  sys.proj = projector_set(problem.system, problem.S, problem.x0);
  sys.QA = report.fitted_A;
  sys.Qb = report.fitted_b;
  sys.S = problem.S;
  sys.xd = problem.xd;

  const int n = sys.n;
  const Mat& Q = sys.proj.Q;
  const Mat QtSQ = Q.transpose() * problem.S * Q;
  sys.M = Mat::Zero(2 * n, 2 * n);
  sys.M.topLeftCorner(n, n) = -(sys.QA * Q).transpose();          // -Q^T A^T Q^T
  sys.M.topRightCorner(n, n) = -QtSQ;                             // -Q^T S Q
  sys.M.bottomLeftCorner(n, n) = -sys.QA * sys.proj.omega * sys.QA.transpose();
  sys.M.bottomRightCorner(n, n) = sys.QA * Q;                     // Q A Q
  return sys;
}

/// Outer solution on a grid. Q^T Lambda and Q X come from the linear BVP,
/// P X from the algebraic relation P X = P x_d - Omega A^T Q^T Lambda, and
/// P^T Lambda = 0 identically. Derivatives are analytic (ODE right-hand
/// sides), so downstream consumers never finite-difference the outer part.
struct OuterSolution {
  OuterSystem sys;
  std::vector<double> grid;
  std::vector<Vec> QLambda;
  std::vector<Vec> QLambdaDot;
  std::vector<Vec> QX;
  std::vector<Vec> PX;
  std::vector<Vec> X;
  std::vector<Vec> Xdot;
  Vec lambda_init;  // Q^T Lambda(t0)

  Vec X_at(double t) const { return hermite_eval(grid, X, Xdot, t); }
  Vec Xdot_at(double t) const {
    const Vec x = X_at(t);
    const Vec ql = QLambda_at(t);
    return derivative_from(t, x, ql);
  }
  Vec QLambda_at(double t) const { return hermite_eval(grid, QLambda, QLambdaDot, t); }

  /// xdot of the outer solution from state and co-state (exact relations).
  Vec derivative_from(double t, const Vec& x, const Vec& qlambda) const {
    const Vec xdt = sys.xd.value(t);
    const Vec xddt = sys.xd.derivative(t);
    const Vec qldot = -(sys.QA * sys.proj.Q).transpose() * qlambda -
                      sys.proj.Q.transpose() * sys.S * sys.proj.Q * (x - xdt);
    const Vec qxdot = sys.QA * x + sys.Qb;
    const Vec pxdot = sys.proj.P * xddt - sys.proj.omega * sys.QA.transpose() * qldot;
    return qxdot + pxdot;
  }
};

inline double default_output_dt(const TrackingProblem& problem) {
  return (problem.t1 - problem.t0) / 1000.0;
}

namespace detail {

/// Orthonormal basis of the range of a (possibly non-symmetric) projector-like
/// matrix, as the left singular vectors with non-negligible singular values.
inline Mat range_basis(const Mat& A, int expected_rank) {
  Eigen::JacobiSVD<Mat> svd(A, Eigen::ComputeThinU);
  const auto& sv = svd.singularValues();
  const double thresh = 1e-10 * std::max(1.0, sv.size() > 0 ? sv(0) : 1.0);
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > thresh) ++rank;
  if (rank != expected_rank)
    throw Error(ErrorCode::ShootingSingular, "projector range has unexpected rank");
  return svd.matrixU().leftCols(rank);
}

}  // namespace detail

/// Solves the outer linear two-point BVP by linear shooting: one particular
/// trajectory plus (n - p) fundamental solutions spanning the admissible
/// initial co-states, then a dense linear solve for Q^T Lambda(t0) from the
/// terminal condition Q X(t1) = Q x_1.
inline OuterSolution solve_outer_bvp(const OuterSystem& sys, const TrackingProblem& problem,
                                     std::optional<std::vector<double>> output_grid = {}) {
  const int n = sys.n;
  const int q_dim = n - sys.p;
  OuterSolution sol;
  sol.sys = sys;
  sol.grid = output_grid ? std::move(*output_grid)
                         : uniform_grid(problem.t0, problem.t1, default_output_dt(problem));

  const Mat& Q = sys.proj.Q;
  const Vec qx0 = Q * problem.x0;
  const Vec qx1 = Q * problem.x1;

  OdeOptions opt;
  opt.rel_tol = 1e-10;
  opt.abs_tol = 1e-12;

  const OdeRhs forced = [&](double t, const Vec& v, Vec& dv) { dv = sys.M * v + sys.forcing(t); };
  const OdeRhs homogeneous = [&](double, const Vec& v, Vec& dv) { dv = sys.M * v; };

  Vec v0 = Vec::Zero(2 * n);
  v0.tail(n) = qx0;
  const auto particular = integrate_on_grid(forced, sol.grid, v0, opt);

  std::vector<std::vector<Vec>> fundamentals;
  Mat U;  // basis of range(Q^T): admissible co-state directions
  if (q_dim > 0) {
    U = detail::range_basis(Q.transpose(), q_dim);
    fundamentals.reserve(q_dim);
    for (int j = 0; j < q_dim; ++j) {
      Vec h0 = Vec::Zero(2 * n);
      h0.head(n) = U.col(j);
      fundamentals.push_back(integrate_on_grid(homogeneous, sol.grid, h0, opt));
    }
  }

  Vec coeff = Vec::Zero(q_dim);
  if (q_dim > 0) {
    const Mat V = detail::range_basis(Q, q_dim);
    Mat K(q_dim, q_dim);
    for (int j = 0; j < q_dim; ++j)
      K.col(j) = V.transpose() * fundamentals[j].back().tail(n);
    const Vec rhs = V.transpose() * (qx1 - particular.back().tail(n));
    Eigen::FullPivLU<Mat> lu(K);
    lu.setThreshold(1e-12);
    if (lu.rank() < q_dim)
      throw Error(ErrorCode::ShootingSingular,
                  "fundamental-solution matrix is singular (conjugate-point-like degeneracy)");
    coeff = lu.solve(rhs);
    // consistency of the full n-dimensional terminal condition
    Vec defect = particular.back().tail(n) - qx1;
    for (int j = 0; j < q_dim; ++j) defect += coeff[j] * fundamentals[j].back().tail(n);
    const double scale = 1.0 + qx1.cwiseAbs().maxCoeff();
    if (defect.cwiseAbs().maxCoeff() > 1e-7 * scale)
      throw Error(ErrorCode::ShootingSingular, "terminal condition unreachable in range(Q)");
  }

  const std::size_t m = sol.grid.size();
  sol.QLambda.resize(m);
  sol.QLambdaDot.resize(m);
  sol.QX.resize(m);
  sol.PX.resize(m);
  sol.X.resize(m);
  sol.Xdot.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    Vec v = particular[k];
    for (int j = 0; j < q_dim; ++j) v += coeff[j] * fundamentals[j][k];
    const double t = sol.grid[k];
    const Vec xdt = sys.xd.value(t);
    sol.QLambda[k] = v.head(n);
    sol.QX[k] = v.tail(n);
    sol.PX[k] = sys.proj.P * xdt - sys.proj.omega * sys.QA.transpose() * sol.QLambda[k];
    sol.X[k] = sol.PX[k] + sol.QX[k];
    const Vec rhs_full = sys.M * v + sys.forcing(t);
    sol.QLambdaDot[k] = rhs_full.head(n);
    sol.Xdot[k] = sol.derivative_from(t, sol.X[k], sol.QLambda[k]);
  }
  sol.lambda_init = sol.QLambda.front();
  return sol;
}

/// Parameters of the two-dimensional closed-form class: xdot = a0 + a1 x +
/// a2 y, ydot = R + b u, with diagonal weights diag(s1, s2).
struct TwoDimClass {
  double a0, a1, a2, s1, s2;
};

inline std::optional<TwoDimClass> detect_2d_class(const TrackingProblem& problem) {
  const auto& sys = problem.system;
  if (sys.n != 2 || sys.p != 1) return std::nullopt;
  const double s_off = std::abs(problem.S(0, 1)) + std::abs(problem.S(1, 0));
  if (s_off > 1e-12 * (1.0 + problem.S.cwiseAbs().maxCoeff())) return std::nullopt;

  TwoDimClass cls;
  cls.s1 = problem.S(0, 0);
  cls.s2 = problem.S(1, 1);
  if (sys.affine_part) {
    cls.a0 = sys.affine_part->b[0];
    cls.a1 = sys.affine_part->A(0, 0);
    cls.a2 = sys.affine_part->A(0, 1);
  } else {
    const Vec r0 = sys.R(Vec::Zero(2));
    const Mat g0 = sys.grad_R(Vec::Zero(2));
    cls.a0 = r0[0];
    cls.a1 = g0(0, 0);
    cls.a2 = g0(0, 1);
  }
  if (cls.a2 == 0.0) return std::nullopt;

  // probe: first state equation affine and uncontrolled
  const Vec probes[] = {problem.x0, problem.x1, 0.5 * (problem.x0 + problem.x1) + Vec::Ones(2)};
  for (const Vec& s : probes) {
    if (std::abs(sys.B(s)(0, 0)) > 1e-12) return std::nullopt;
    const double want = cls.a0 + cls.a1 * s[0] + cls.a2 * s[1];
    if (std::abs(sys.R(s)[0] - want) > 1e-9 * (1.0 + std::abs(want))) return std::nullopt;
  }
  return cls;
}

/// Closed-form outer solution for the two-dimensional class, built from the
/// hyperbolic state-transition matrix and quadratures; independent of the
/// generic BVP path, which makes the two mutual cross-checks.
inline OuterSolution solve_outer_2d(const TrackingProblem& problem,
                                    std::optional<std::vector<double>> output_grid = {}) {
  const auto cls = detect_2d_class(problem);
  if (!cls)
    throw Error(ErrorCode::NotTwoDimClass,
                "system is not of the closed-form 2D class (or S is not diagonal)");
  const double a0 = cls->a0, a1 = cls->a1, a2 = cls->a2, s1 = cls->s1, s2 = cls->s2;
  const double t0 = problem.t0, t1 = problem.t1, T = t1 - t0;
  const double phi1 = std::sqrt(a1 * a1 * s2 + a2 * a2 * s1) / std::sqrt(s2);

  const auto xd1 = [&](double t) { return problem.xd.components[0].value(t); };
  const auto yd = [&](double t) { return problem.xd.components[1].value(t); };
  const auto yd_dot = [&](double t) { return problem.xd.components[1].deriv(t); };

  const auto Phi = [&](double dt) {
    const double ch = std::cosh(phi1 * dt), sh = std::sinh(phi1 * dt);
    Eigen::Matrix2d m;
    m << ch + a1 / phi1 * sh, a2 / phi1 * sh, a2 * s1 / (s2 * phi1) * sh, ch - a1 / phi1 * sh;
    return m;
  };
  const auto f = [&](double t) {
    Eigen::Vector2d v;
    v << a0, yd_dot(t) + a1 * yd(t) - a2 * s1 / s2 * xd1(t);
    return v;
  };

  QuadOptions quad;
  quad.abs_tol = 1e-10;
  quad.rel_tol = 1e-12;

  // matching constant y_init from the terminal condition X(t1) = x1
  const double csch = 1.0 / std::sinh(phi1 * T);
  const double I1 = integrate_gk(
      [&](double tau) {
        return (a2 * s1 / s2 * xd1(tau) - a1 * yd(tau)) * std::sinh(phi1 * (t1 - tau));
      },
      t0, t1, quad);
  const double I2 = integrate_gk(
      [&](double tau) { return yd(tau) * std::cosh(phi1 * (t1 - tau)); }, t0, t1, quad);
  const double x0v = problem.x0[0], x1v = problem.x1[0];
  const double y_init =
      csch * (I1 - phi1 * I2) + (a2 * yd(t0) - a1 * x0v - a0) / a2 -
      csch / (a2 * phi1) *
          (std::cosh(phi1 * T) * (a0 * a1 + phi1 * phi1 * x0v) - a0 * a1 - phi1 * phi1 * x1v);

  OuterSolution sol;
  sol.grid = output_grid ? std::move(*output_grid)
                         : uniform_grid(t0, t1, default_output_dt(problem));

  // build the matching outer system so downstream ops are path-agnostic
  LinearizingReport rep;
  rep.omega_constant = true;
  rep.qr_affine = true;
  rep.fitted_A = Mat::Zero(2, 2);
  rep.fitted_A(0, 0) = a1;
  rep.fitted_A(0, 1) = a2;
  rep.fitted_b = Vec::Zero(2);
  rep.fitted_b[0] = a0;
  sol.sys = build_outer_system(problem, rep);

  // semigroup recursion: state(t_k) = Phi(dt_k) state(t_{k-1}) + local forcing
  // integral, which keeps every hyperbolic argument cell-local
  const std::size_t m = sol.grid.size();
  std::vector<Eigen::Vector2d> xy(m);
  xy[0] << x0v, y_init;
  QuadOptions cell_quad;
  cell_quad.abs_tol = 1e-12;
  cell_quad.rel_tol = 1e-12;
  for (std::size_t k = 1; k < m; ++k) {
    const double ta = sol.grid[k - 1], tb = sol.grid[k];
    Eigen::Vector2d local = Eigen::Vector2d::Zero();
    for (int c = 0; c < 2; ++c)
      local[c] = integrate_gk([&](double tau) { return (Phi(tb - tau) * f(tau))[c]; }, ta, tb,
                              cell_quad);
    xy[k] = Phi(tb - ta) * xy[k - 1] + local;
  }

  sol.QLambda.resize(m);
  sol.QLambdaDot.resize(m);
  sol.QX.resize(m);
  sol.PX.resize(m);
  sol.X.resize(m);
  sol.Xdot.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    const double t = sol.grid[k];
    const double X = xy[k][0], Y = xy[k][1];
    const double lambda_x = s2 / a2 * (yd(t) - Y);
    sol.X[k] = Vec(2);
    sol.X[k] << X, Y;
    sol.QX[k] = Vec(2);
    sol.QX[k] << X, 0.0;
    sol.PX[k] = Vec(2);
    sol.PX[k] << 0.0, Y;
    sol.QLambda[k] = Vec(2);
    sol.QLambda[k] << lambda_x, 0.0;
    const double lambda_x_dot = -a1 * lambda_x + s1 * (xd1(t) - X);
    sol.QLambdaDot[k] = Vec(2);
    sol.QLambdaDot[k] << lambda_x_dot, 0.0;
    Vec xdot(2);
    xdot << a0 + a1 * X + a2 * Y,
        yd_dot(t) + a1 * yd(t) - a2 * s1 / s2 * xd1(t) + a2 * s1 / s2 * X - a1 * Y;
    sol.Xdot[k] = xdot;
  }
  sol.lambda_init = sol.QLambda.front();
  return sol;
}

}  // namespace otrack
