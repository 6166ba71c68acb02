#pragma once

#include <map>
#include <string>
#include <vector>

#include "otrack/desired.hpp"
#include "otrack/errors.hpp"
#include "otrack/expr.hpp"
#include "otrack/types.hpp"

namespace otrack {

/// Registry key plus named parameters; generic2d additionally carries the
/// drift and gain expressions.
struct ModelSpec {
  std::string name;
  std::map<std::string, double> params;
  std::map<std::string, std::string> exprs;

  double param_or(const std::string& key, double fallback) const {
    const auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
  }
};

/// Damped mathematical pendulum with state-dependent gain:
/// xdot = y, ydot = -y/2 - sin(x) + (1 + x^2/4) u.
inline ControlAffineSystem make_pendulum() {
  ControlAffineSystem sys;
  sys.n = 2;
  sys.p = 1;
  sys.R = [](const Vec& s) {
    Vec r(2);
    r << s[1], -0.5 * s[1] - std::sin(s[0]);
    return r;
  };
  sys.grad_R = [](const Vec& s) {
    Mat g(2, 2);
    g << 0.0, 1.0, -std::cos(s[0]), -0.5;
    return g;
  };
  sys.B = [](const Vec& s) {
    Mat b(2, 1);
    b << 0.0, 1.0 + 0.25 * s[0] * s[0];
    return b;
  };
  sys.grad_B = [](const Vec& s) {
    std::vector<Mat> g(2, Mat::Zero(2, 1));
    g[0](1, 0) = 0.5 * s[0];
    return g;
  };
  AffinePart ap;
  ap.A = Mat::Zero(2, 2);
  ap.A(0, 1) = 1.0;
  ap.b = Vec::Zero(2);
  sys.affine_part = ap;
  return sys;
}

/// FitzHugh-Nagumo with the control acting on the activator. State (x, y) =
/// (inhibitor, activator): xdot = phi (y + a - b_fhn x), ydot = y - y^3/3 - x
/// + I + u. The parameter values are a fixture choice.
inline ControlAffineSystem make_fitzhugh_nagumo(const ModelSpec& spec) {
  const double a = spec.param_or("a", 0.7);
  const double b_fhn = spec.param_or("b_fhn", 0.8);
  const double phi = spec.param_or("phi", 0.08);
  const double drive = spec.param_or("I", 0.5);
  if (phi == 0.0)
    throw Error(ErrorCode::ParseError, "fhn: phi must be nonzero (inhibitor must couple)");

  ControlAffineSystem sys;
  sys.n = 2;
  sys.p = 1;
  sys.R = [=](const Vec& s) {
    Vec r(2);
    r << phi * (s[1] + a - b_fhn * s[0]), s[1] - s[1] * s[1] * s[1] / 3.0 - s[0] + drive;
    return r;
  };
  sys.grad_R = [=](const Vec& s) {
    Mat g(2, 2);
    g << -phi * b_fhn, phi, -1.0, 1.0 - s[1] * s[1];
    return g;
  };
  sys.B = [](const Vec&) {
    Mat b(2, 1);
    b << 0.0, 1.0;
    return b;
  };
  sys.grad_B = [](const Vec&) { return std::vector<Mat>(2, Mat::Zero(2, 1)); };
  AffinePart ap;
  ap.A = Mat::Zero(2, 2);
  ap.A(0, 0) = -phi * b_fhn;
  ap.A(0, 1) = phi;
  ap.b = Vec::Zero(2);
  ap.b[0] = phi * a;
  sys.affine_part = ap;
  return sys;
}

/// SIR transmission-control model: state (s, i), R = (0, -gamma i),
/// B(s, i) = s i (-1, 1)^T. The scalar factor of B cancels inside Omega, so
/// the projectors are state-independent away from s i = 0.
inline ControlAffineSystem make_sir(const ModelSpec& spec) {
  const double gamma = spec.param_or("gamma", 0.1);
  if (gamma < 0.0) throw Error(ErrorCode::ParseError, "sir: gamma must be >= 0");

  ControlAffineSystem sys;
  sys.n = 2;
  sys.p = 1;
  sys.R = [=](const Vec& s) {
    Vec r(2);
    r << 0.0, -gamma * s[1];
    return r;
  };
  sys.grad_R = [=](const Vec&) {
    Mat g(2, 2);
    g << 0.0, 0.0, 0.0, -gamma;
    return g;
  };
  sys.B = [](const Vec& s) {
    Mat b(2, 1);
    b << -s[0] * s[1], s[0] * s[1];
    return b;
  };
  sys.grad_B = [](const Vec& s) {
    std::vector<Mat> g(2, Mat::Zero(2, 1));
    g[0](0, 0) = -s[1];
    g[0](1, 0) = s[1];
    g[1](0, 0) = -s[0];
    g[1](1, 0) = s[0];
    return g;
  };
  AffinePart ap;
  ap.A = Mat::Zero(2, 2);
  ap.A(1, 1) = -gamma;
  ap.b = Vec::Zero(2);
  sys.affine_part = ap;
  return sys;
}

/// Two-dimensional class xdot = a0 + a1 x + a2 y, ydot = R(x, y) + b(x, y) u
/// with R and b given as expressions over {x, y}.
inline ControlAffineSystem make_generic2d(const ModelSpec& spec) {
  const double a0 = spec.param_or("a0", 0.0);
  const double a1 = spec.param_or("a1", 0.0);
  const double a2 = spec.param_or("a2", 1.0);
  if (a2 == 0.0) throw Error(ErrorCode::ParseError, "generic2d: a2 must be nonzero");
  const auto r_it = spec.exprs.find("R");
  const auto b_it = spec.exprs.find("b");
  const auto r_ast = parse_expression(r_it == spec.exprs.end() ? "0" : r_it->second);
  const auto b_ast = parse_expression(b_it == spec.exprs.end() ? "1" : b_it->second);
  const auto r_x = r_ast->diff(0), r_y = r_ast->diff(1);
  const auto b_x = b_ast->diff(0), b_y = b_ast->diff(1);

  ControlAffineSystem sys;
  sys.n = 2;
  sys.p = 1;
  sys.R = [=](const Vec& s) {
    Vec r(2);
    r << a0 + a1 * s[0] + a2 * s[1], r_ast->eval(s[0], s[1]);
    return r;
  };
  sys.grad_R = [=](const Vec& s) {
    Mat g(2, 2);
    g << a1, a2, r_x->eval(s[0], s[1]), r_y->eval(s[0], s[1]);
    return g;
  };
  sys.B = [=](const Vec& s) {
    Mat b(2, 1);
    b << 0.0, b_ast->eval(s[0], s[1]);
    return b;
  };
  sys.grad_B = [=](const Vec& s) {
    std::vector<Mat> g(2, Mat::Zero(2, 1));
    g[0](1, 0) = b_x->eval(s[0], s[1]);
    g[1](1, 0) = b_y->eval(s[0], s[1]);
    return g;
  };
  AffinePart ap;
  ap.A = Mat::Zero(2, 2);
  ap.A(0, 0) = a1;
  ap.A(0, 1) = a2;
  ap.b = Vec::Zero(2);
  ap.b[0] = a0;
  sys.affine_part = ap;
  return sys;
}

inline ControlAffineSystem make_model(const ModelSpec& spec) {
  if (spec.name == "pendulum") return make_pendulum();
  if (spec.name == "fhn") return make_fitzhugh_nagumo(spec);
  if (spec.name == "sir") return make_sir(spec);
  if (spec.name == "generic2d") return make_generic2d(spec);
  throw Error(ErrorCode::ParseError, "unknown model: " + spec.name);
}

inline const std::vector<std::string>& model_registry() {
  static const std::vector<std::string> names = {"pendulum", "fhn", "sir", "generic2d"};
  return names;
}

/// For mechanical-form systems (a0 = 0, a1 = 0, a2 = 1), turns a scalar
/// position profile into the exactly realizable phase-space target
/// (x_d, y_d = x_d').
inline DesiredTrajectory make_realizable_target(const ControlAffineSystem& system,
                                                const std::vector<TrajectoryTerm>& profile) {
  if (system.n != 2 || system.p != 1 || !system.affine_part)
    throw Error(ErrorCode::NotMechanicalForm, "need a declared 2D single-input system");
  const Mat& A = system.affine_part->A;
  const Vec& b = system.affine_part->b;
  const bool mechanical = std::abs(A(0, 0)) < 1e-14 && std::abs(A(0, 1) - 1.0) < 1e-14 &&
                          std::abs(b[0]) < 1e-14;
  if (!mechanical)
    throw Error(ErrorCode::NotMechanicalForm,
                "realizable targets require xdot = y (a0 = 0, a1 = 0, a2 = 1)");
  DesiredTrajectory d;
  d.components.resize(2);
  d.components[0].terms = profile;
  for (const auto& term : profile) d.components[1].terms.push_back(term.differentiated());
  return d;
}

}  // namespace otrack
