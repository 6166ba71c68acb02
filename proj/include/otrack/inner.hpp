#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "otrack/ode.hpp"
#include "otrack/outer.hpp"
#include "otrack/projectors.hpp"
#include "otrack/types.hpp"

namespace otrack {

/// Boundary-layer solution on stretched time tau >= 0. Only the P-components
/// vary; evaluation beyond tau_max clamps to the matching limit, which makes
/// composite overlaps cancel exactly at the far boundary. The evaluators own
/// all state they need and stay valid after the problem goes out of scope.
struct InnerSolution {
  enum class Side { Left, Right };

  Side side = Side::Left;
  std::vector<double> tau_grid;
  std::vector<Vec> PX_layer;
  Vec limit_value;          // matching target P X(t_b)
  Vec boundary_value;       // P x_b
  double decay_rate = 0.0;  // e-folding rate in tau

  std::function<Vec(double)> eval;        // PX_layer(tau)
  std::function<Vec(double)> eval_deriv;  // d(PX_layer)/dtau

  double tau_max() const { return tau_grid.empty() ? 0.0 : tau_grid.back(); }
};

namespace detail {

/// Default stretched-time horizon: 40 e-foldings, capped so the layer never
/// overlaps more than a quarter of the physical interval.
inline double select_tau_max(double rate, double eps, double horizon) {
  double tau = 40.0 / rate;
  if (eps > 0.0) tau = std::min(tau, horizon / (4.0 * eps));
  return tau;
}

inline Vec y_component(double y) {
  Vec v = Vec::Zero(2);
  v[1] = y;
  return v;
}

}  // namespace detail

/// First-order reduced layer equation of the 2D class:
/// Y' = sqrt(s2) (y_limit - Y) |b(x_b, Y)|, Y(0) = y_b.
/// Uses the exact exponential when b does not depend on y.
inline InnerSolution solve_layer_2d(const TrackingProblem& problem, InnerSolution::Side side,
                                    double y_limit) {
  const auto cls = detect_2d_class(problem);
  if (!cls) throw Error(ErrorCode::NotTwoDimClass, "layer reduction needs the 2D class");
  const double s2 = cls->s2;
  const bool left = side == InnerSolution::Side::Left;
  const Vec xb = left ? problem.x0 : problem.x1;
  const double yb = xb[1];
  const double horizon = problem.t1 - problem.t0;

  // value-owning gain along the layer line x = x_b
  const auto B_fun = problem.system.B;
  const double xb0 = xb[0];
  const auto b_of = [B_fun, xb0](double y) {
    Vec s(2);
    s << xb0, y;
    return B_fun(s)(1, 0);
  };

  const double b_scale = 1.0 + std::abs(b_of(yb));
  if (std::abs(b_of(yb)) < 1e-10 * b_scale || std::abs(b_of(y_limit)) < 1e-10 * b_scale)
    throw Error(ErrorCode::VanishingB, "gain vanishes along the boundary layer");

  // y-independence probe across the traversed range
  bool b_const_in_y = true;
  {
    const double ylo = std::min(yb, y_limit), yhi = std::max(yb, y_limit);
    for (int k = 0; k <= 8; ++k) {
      const double y = ylo + (yhi - ylo) * k / 8.0;
      Vec s(2);
      s << xb0, y;
      if (std::abs(problem.system.grad_B(s)[1](1, 0)) > 1e-12 * (1.0 + std::abs(b_of(y)))) {
        b_const_in_y = false;
        break;
      }
    }
  }

  InnerSolution sol;
  sol.side = side;
  sol.limit_value = detail::y_component(y_limit);
  sol.boundary_value = detail::y_component(yb);

  if (b_const_in_y) {
    const double rate = std::sqrt(s2) * std::abs(b_of(yb));
    sol.decay_rate = rate;
    const double tau_max = detail::select_tau_max(rate, problem.epsilon, horizon);
    const double gap = yb - y_limit;
    sol.eval = [=](double tau) {
      if (tau >= tau_max) return detail::y_component(y_limit);
      return detail::y_component(y_limit + std::exp(-rate * tau) * gap);
    };
    sol.eval_deriv = [=](double tau) {
      if (tau >= tau_max) return detail::y_component(0.0);
      return detail::y_component(-rate * std::exp(-rate * tau) * gap);
    };
    const int count = 1025;
    sol.tau_grid.resize(count);
    sol.PX_layer.resize(count);
    for (int k = 0; k < count; ++k) {
      sol.tau_grid[k] = tau_max * k / (count - 1);
      sol.PX_layer[k] = sol.eval(sol.tau_grid[k]);
    }
    return sol;
  }

  // nonlinear gain: integrate the reduced ODE on a stored tau grid
  const double rate_guess = std::sqrt(s2) * std::abs(b_of(y_limit));
  const double tau_max = detail::select_tau_max(rate_guess, problem.epsilon, horizon);
  const double sqrt_s2 = std::sqrt(s2);
  const OdeRhs rhs = [&](double, const Vec& y, Vec& dy) {
    const double b = b_of(y[0]);
    if (std::abs(b) < 1e-10 * b_scale)
      throw Error(ErrorCode::VanishingB, "gain crosses zero inside the boundary layer");
    dy.resize(1);
    dy[0] = sqrt_s2 * (y_limit - y[0]) * std::abs(b);
  };

  const int count = 4097;
  std::vector<double> taus(count);
  for (int k = 0; k < count; ++k) taus[k] = tau_max * k / (count - 1);
  Vec y0(1);
  y0[0] = yb;
  OdeOptions opt;
  opt.rel_tol = 1e-12;
  opt.abs_tol = 1e-13;
  const auto ys = integrate_on_grid(rhs, taus, y0, opt);

  const double gap0 = std::abs(yb - y_limit);
  if (gap0 > 0.0 && std::abs(ys.back()[0] - y_limit) > gap0 / std::numbers::e)
    throw Error(ErrorCode::NoDecay, "layer failed to approach its matching limit");

  sol.tau_grid = taus;
  sol.PX_layer.resize(count);
  std::vector<Vec> derivs(count);
  for (int k = 0; k < count; ++k) {
    const double y = ys[k][0];
    sol.PX_layer[k] = detail::y_component(y);
    derivs[k] = detail::y_component(sqrt_s2 * (y_limit - y) * std::abs(b_of(y)));
  }

  // measured e-folding rate
  sol.decay_rate = rate_guess;
  if (gap0 > 0.0) {
    const double target = gap0 / std::numbers::e;
    for (int k = 1; k < count; ++k) {
      const double g_prev = std::abs(ys[k - 1][0] - y_limit);
      const double g = std::abs(ys[k][0] - y_limit);
      if (g <= target) {
        const double frac = (g_prev - target) / std::max(g_prev - g, 1e-300);
        const double tau_e = taus[k - 1] + frac * (taus[k] - taus[k - 1]);
        sol.decay_rate = 1.0 / tau_e;
        break;
      }
    }
  }

  const auto grid = sol.tau_grid;
  const auto vals = sol.PX_layer;
  const Vec limit_px = sol.limit_value;
  sol.eval = [grid, vals, derivs, limit_px, tau_max](double tau) {
    if (tau >= tau_max) return limit_px;
    return hermite_eval(grid, vals, derivs, tau);
  };
  sol.eval_deriv = [grid, vals, derivs, y_limit, sqrt_s2, b_of, tau_max](double tau) -> Vec {
    if (tau >= tau_max) return detail::y_component(0.0);
    const Vec px = hermite_eval(grid, vals, derivs, tau);
    return detail::y_component(sqrt_s2 * (y_limit - px[1]) * std::abs(b_of(px[1])));
  };
  return sol;
}

/// Left boundary layer of the 2D class; y_init is the matching target Y(t0).
inline InnerSolution inner_left_2d(const TrackingProblem& problem, double y_init) {
  return solve_layer_2d(problem, InnerSolution::Side::Left, y_init);
}

/// Right boundary layer of the 2D class; y_end is the matching target Y(t1).
inline InnerSolution inner_right_2d(const TrackingProblem& problem, double y_end) {
  return solve_layer_2d(problem, InnerSolution::Side::Right, y_end);
}

/// Constant-B layer solver for any n, p: with a state-independent input matrix
/// the layer equation reduces on range(P) to z'' = (B^T S B) z in deviation
/// coordinates, solved exactly by the decaying matrix exponential.
inline InnerSolution inner_linear_constB(const TrackingProblem& problem, InnerSolution::Side side,
                                         const Vec& limit_value) {
  const auto& system = problem.system;
  const bool left = side == InnerSolution::Side::Left;
  const Vec xb = left ? problem.x0 : problem.x1;

  const Mat B0 = system.B(problem.x0);
  const Mat B1 = system.B(problem.x1);
  if ((B0 - B1).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + B0.cwiseAbs().maxCoeff()))
    throw Error(ErrorCode::NotSupported, "inner_linear_constB requires a constant input matrix");
  for (const auto& g : system.grad_B(xb))
    if (g.cwiseAbs().maxCoeff() > 1e-12 * (1.0 + B0.cwiseAbs().maxCoeff()))
      throw Error(ErrorCode::NotSupported, "inner_linear_constB requires a constant input matrix");

  const ProjectorSet proj = projector_set(system, problem.S, xb);
  const Mat K = B0.transpose() * problem.S * B0;  // p x p symmetric
  Eigen::SelfAdjointEigenSolver<Mat> es(K);
  if (es.eigenvalues().minCoeff() <= 0.0)
    throw Error(ErrorCode::NonHyperbolic, "no decaying layer modes; matching impossible");
  const Vec rates = es.eigenvalues().cwiseSqrt();
  const Mat V = es.eigenvectors();

  InnerSolution sol;
  sol.side = side;
  sol.limit_value = proj.P * limit_value;
  sol.boundary_value = proj.P * xb;
  sol.decay_rate = rates.minCoeff();

  const Vec z0 = proj.bg * (sol.boundary_value - sol.limit_value);
  const double tau_max =
      detail::select_tau_max(sol.decay_rate, problem.epsilon, problem.t1 - problem.t0);

  const Vec limit = sol.limit_value;
  const Eigen::Index nn = limit.size();
  sol.eval = [=](double tau) -> Vec {
    if (tau >= tau_max) return limit;
    const Vec decay = (-tau * rates.array()).exp().matrix();
    return limit + B0 * (V * decay.asDiagonal() * V.transpose() * z0);
  };
  sol.eval_deriv = [=](double tau) -> Vec {
    if (tau >= tau_max) return Vec::Zero(nn);
    const Vec decay = (rates.array() * (-tau * rates.array()).exp()).matrix();
    return -B0 * (V * decay.asDiagonal() * V.transpose() * z0);
  };

  const int count = 1025;
  sol.tau_grid.resize(count);
  sol.PX_layer.resize(count);
  for (int k = 0; k < count; ++k) {
    sol.tau_grid[k] = tau_max * k / (count - 1);
    sol.PX_layer[k] = sol.eval(sol.tau_grid[k]);
  }
  return sol;
}

}  // namespace otrack
