#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "otrack/errors.hpp"

namespace otrack {

using OdeRhs = std::function<void(double, const Eigen::VectorXd&, Eigen::VectorXd&)>;

struct OdeOptions {
  double rel_tol = 1e-10;
  double abs_tol = 1e-12;
  double init_step = 0.0;   // 0 = auto
  double max_step = std::numeric_limits<double>::infinity();
  long max_steps = 50'000'000;
};

namespace detail {

/// Dormand-Prince 5(4) embedded pair.
struct Dopri5 {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                          b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                          e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
};

}  // namespace detail

/// Adaptive Dormand-Prince 5(4) stepper with PI-free step control. Integrates
/// from t0 to t1 (forward or backward) and reports the state at every time in
/// `stops` (which must be monotone from t0 towards t1) via `on_stop`.
inline void integrate_with_stops(const OdeRhs& f, double t0, double t1,
                                 const Eigen::VectorXd& y0, std::span<const double> stops,
                                 const std::function<void(double, const Eigen::VectorXd&)>& on_stop,
                                 const OdeOptions& opt = {}) {
  using Eigen::VectorXd;
  const double dir = (t1 >= t0) ? 1.0 : -1.0;
  const double span = std::abs(t1 - t0);
  if (span == 0.0) {
    for (double s : stops) on_stop(s, y0);
    return;
  }

  VectorXd y = y0, ynew(y0.size()), yerr(y0.size());
  VectorXd k1(y0.size()), k2(y0.size()), k3(y0.size()), k4(y0.size()), k5(y0.size()),
      k6(y0.size()), k7(y0.size());
  double t = t0;
  std::size_t next_stop = 0;
  while (next_stop < stops.size() && stops[next_stop] * dir <= t * dir) {
    on_stop(stops[next_stop], y);
    ++next_stop;
  }

  f(t, y, k1);
  double h = opt.init_step > 0 ? opt.init_step : std::min(span / 100.0, opt.max_step);
  h = std::min(h, opt.max_step);
  long steps = 0;
  using D = detail::Dopri5;

  while (dir * (t1 - t) > 0.0) {
    if (++steps > opt.max_steps)
      throw Error(ErrorCode::IntegratorFailure, "step budget exhausted");
    h = std::min(h, std::abs(t1 - t));
    // land exactly on the next requested output time
    if (next_stop < stops.size()) {
      const double to_stop = std::abs(stops[next_stop] - t);
      if (to_stop > 0.0) h = std::min(h, to_stop);
    }
    const double hs = dir * h;

    f(t + D::c2 * hs, y + hs * (D::a21 * k1), k2);
    f(t + D::c3 * hs, y + hs * (D::a31 * k1 + D::a32 * k2), k3);
    f(t + D::c4 * hs, y + hs * (D::a41 * k1 + D::a42 * k2 + D::a43 * k3), k4);
    f(t + D::c5 * hs, y + hs * (D::a51 * k1 + D::a52 * k2 + D::a53 * k3 + D::a54 * k4), k5);
    f(t + hs, y + hs * (D::a61 * k1 + D::a62 * k2 + D::a63 * k3 + D::a64 * k4 + D::a65 * k5), k6);
    ynew = y + hs * (D::b1 * k1 + D::b3 * k3 + D::b4 * k4 + D::b5 * k5 + D::b6 * k6);
    f(t + hs, ynew, k7);
    yerr = hs * (D::e1 * k1 + D::e3 * k3 + D::e4 * k4 + D::e5 * k5 + D::e6 * k6 + D::e7 * k7);

    double err = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double sc = opt.abs_tol + opt.rel_tol * std::max(std::abs(y[i]), std::abs(ynew[i]));
      const double e = yerr[i] / sc;
      err += e * e;
    }
    err = std::sqrt(err / static_cast<double>(y.size()));
    if (!std::isfinite(err)) err = 1e10;

    if (err <= 1.0) {
      t += hs;
      y.swap(ynew);
      k1.swap(k7);  // FSAL
      while (next_stop < stops.size() && dir * (stops[next_stop] - t) <= 1e-14 * span) {
        on_stop(stops[next_stop], y);
        ++next_stop;
      }
    }
    const double fac = (err == 0.0) ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
    h = std::min(h * fac, opt.max_step);
    if (h < 1e-14 * span)
      throw Error(ErrorCode::IntegratorFailure, "step size underflow");
  }
  while (next_stop < stops.size()) {
    on_stop(stops[next_stop], y);
    ++next_stop;
  }
}

/// Integrates from t0 to t1 and returns the final state.
inline Eigen::VectorXd integrate_to(const OdeRhs& f, double t0, double t1,
                                    const Eigen::VectorXd& y0, const OdeOptions& opt = {}) {
  Eigen::VectorXd out = y0;
  const double stop[] = {t1};
  integrate_with_stops(f, t0, t1, y0, stop, [&](double, const Eigen::VectorXd& y) { out = y; },
                       opt);
  return out;
}

/// Integrates along a monotone grid (grid.front() is the initial time) and
/// returns the state at every grid point.
inline std::vector<Eigen::VectorXd> integrate_on_grid(const OdeRhs& f,
                                                      std::span<const double> grid,
                                                      const Eigen::VectorXd& y0,
                                                      const OdeOptions& opt = {}) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(grid.size());
  integrate_with_stops(f, grid.front(), grid.back(), y0, grid,
                       [&](double, const Eigen::VectorXd& y) { out.push_back(y); }, opt);
  if (out.size() != grid.size())
    throw Error(ErrorCode::IntegratorFailure, "grid output count mismatch");
  return out;
}

struct QuadOptions {
  double abs_tol = 1e-10;
  double rel_tol = 1e-10;
  int max_depth = 48;
};

namespace detail {

// 15-point Kronrod / 7-point Gauss nodes and weights on [-1, 1].
inline constexpr double kGK15Nodes[8] = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144838258730, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr double kGK15WeightsK[8] = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr double kGK15WeightsG[4] = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct GkEstimate {
  double integral;
  double error;
};

template <typename F>
GkEstimate gk15(const F& f, double a, double b) {
  const double hl = 0.5 * (b - a);
  const double c = 0.5 * (a + b);
  double resk = 0.0, resg = 0.0;
  for (int i = 0; i < 8; ++i) {
    const double x = hl * kGK15Nodes[i];
    double fv;
    if (i == 7) {
      fv = f(c);
      resk += kGK15WeightsK[7] * fv;
      resg += kGK15WeightsG[3] * fv;
    } else {
      const double f1 = f(c - x), f2 = f(c + x);
      fv = f1 + f2;
      resk += kGK15WeightsK[i] * fv;
      if (i % 2 == 1) resg += kGK15WeightsG[i / 2] * fv;
    }
  }
  resk *= hl;
  resg *= hl;
  return {resk, std::abs(resk - resg)};
}

template <typename F>
double gk_adaptive(const F& f, double a, double b, double tol, int depth, const QuadOptions& opt) {
  const auto est = gk15(f, a, b);
  if (est.error <= tol || depth >= opt.max_depth) return est.integral;
  const double m = 0.5 * (a + b);
  return gk_adaptive(f, a, m, 0.5 * tol, depth + 1, opt) +
         gk_adaptive(f, m, b, 0.5 * tol, depth + 1, opt);
}

}  // namespace detail

/// Adaptive Gauss-Kronrod (G7,K15) quadrature of f over [a, b].
inline double integrate_gk(const std::function<double(double)>& f, double a, double b,
                           const QuadOptions& opt = {}) {
  if (a == b) return 0.0;
  const auto first = detail::gk15(f, a, b);
  const double tol = std::max(opt.abs_tol, opt.rel_tol * std::abs(first.integral));
  if (first.error <= tol) return first.integral;
  const double m = 0.5 * (a + b);
  return detail::gk_adaptive(f, a, m, 0.5 * tol, 1, opt) +
         detail::gk_adaptive(f, m, b, 0.5 * tol, 1, opt);
}

/// Component-wise adaptive quadrature of a vector-valued integrand.
inline Eigen::VectorXd integrate_gk_vec(const std::function<Eigen::VectorXd(double)>& f, double a,
                                        double b, int dim, const QuadOptions& opt = {}) {
  Eigen::VectorXd out(dim);
  for (int i = 0; i < dim; ++i)
    out[i] = integrate_gk([&](double t) { return f(t)[i]; }, a, b, opt);
  return out;
}

/// Cubic Hermite interpolation on a sorted sample grid with known derivatives.
/// Used to evaluate stored trajectories between samples.
inline Eigen::VectorXd hermite_eval(std::span<const double> grid,
                                    std::span<const Eigen::VectorXd> values,
                                    std::span<const Eigen::VectorXd> derivs, double t) {
  if (grid.empty()) throw Error(ErrorCode::GridMismatch, "empty grid");
  if (t <= grid.front()) return values.front();
  if (t >= grid.back()) return values.back();
  const auto it = std::upper_bound(grid.begin(), grid.end(), t);
  const std::size_t hi = static_cast<std::size_t>(it - grid.begin());
  const std::size_t lo = hi - 1;
  const double h = grid[hi] - grid[lo];
  const double s = (t - grid[lo]) / h;
  const double s2 = s * s, s3 = s2 * s;
  const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s;
  const double h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
  return h00 * values[lo] + h10 * h * derivs[lo] + h01 * values[hi] + h11 * h * derivs[hi];
}

}  // namespace otrack
