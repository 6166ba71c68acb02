#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "otrack/errors.hpp"

namespace otrack {

/// One additive term of a desired-trajectory component. The family
/// {c*t^k, A*cos(w t + phi), A*sin(w t + phi)} is closed under
/// differentiation, which keeps derivatives analytic.
struct TrajectoryTerm {
  enum class Kind { Poly, Cos, Sin };

  Kind kind = Kind::Poly;
  double coef = 0.0;
  int power = 0;     // Poly only, >= 0
  double omega = 0.0;  // Cos/Sin only
  double phase = 0.0;  // Cos/Sin only

  double value(double t) const {
    switch (kind) {
      case Kind::Poly: return coef * std::pow(t, power);
      case Kind::Cos: return coef * std::cos(omega * t + phase);
      case Kind::Sin: return coef * std::sin(omega * t + phase);
    }
    return 0.0;
  }

  double deriv(double t) const {
    switch (kind) {
      case Kind::Poly:
        return power == 0 ? 0.0 : coef * power * std::pow(t, power - 1);
      case Kind::Cos: return -coef * omega * std::sin(omega * t + phase);
      case Kind::Sin: return coef * omega * std::cos(omega * t + phase);
    }
    return 0.0;
  }

  TrajectoryTerm differentiated() const {
    TrajectoryTerm d = *this;
    switch (kind) {
      case Kind::Poly:
        d.coef = coef * power;
        d.power = power > 0 ? power - 1 : 0;
        if (power == 0) d.coef = 0.0;
        break;
      case Kind::Cos:
        d.kind = Kind::Sin;
        d.coef = -coef * omega;
        break;
      case Kind::Sin:
        d.kind = Kind::Cos;
        d.coef = coef * omega;
        break;
    }
    return d;
  }

  static TrajectoryTerm constant(double c) { return {Kind::Poly, c, 0, 0.0, 0.0}; }
  static TrajectoryTerm poly(double c, int k) { return {Kind::Poly, c, k, 0.0, 0.0}; }
  static TrajectoryTerm cosine(double a, double w, double ph = 0.0) {
    return {Kind::Cos, a, 0, w, ph};
  }
  static TrajectoryTerm sine(double a, double w, double ph = 0.0) {
    return {Kind::Sin, a, 0, w, ph};
  }
};

/// Desired trajectory x_d(t) with analytic first derivative. Components are
/// finite term sums; a raw callable may be attached at the API level but is
/// not expressible in config files.
struct DesiredTrajectory {
  struct Component {
    std::vector<TrajectoryTerm> terms;
    // optional callable override (value, derivative); both must be set
    std::function<double(double)> custom_value;
    std::function<double(double)> custom_deriv;

    bool is_custom() const { return static_cast<bool>(custom_value); }

    double value(double t) const {
      if (is_custom()) return custom_value(t);
      double v = 0.0;
      for (const auto& term : terms) v += term.value(t);
      return v;
    }

    double deriv(double t) const {
      if (is_custom()) return custom_deriv(t);
      double v = 0.0;
      for (const auto& term : terms) v += term.deriv(t);
      return v;
    }
  };

  std::vector<Component> components;

  int dim() const { return static_cast<int>(components.size()); }

  Eigen::VectorXd value(double t) const {
    Eigen::VectorXd v(dim());
    for (int i = 0; i < dim(); ++i) v[i] = components[i].value(t);
    return v;
  }

  Eigen::VectorXd derivative(double t) const {
    Eigen::VectorXd v(dim());
    for (int i = 0; i < dim(); ++i) v[i] = components[i].deriv(t);
    return v;
  }

  /// Term-wise derivative trajectory; requires all components to be term sums.
  DesiredTrajectory differentiated() const {
    DesiredTrajectory d;
    d.components.reserve(components.size());
    for (const auto& c : components) {
      if (c.is_custom())
        throw Error(ErrorCode::NotSupported,
                    "cannot differentiate a callable-backed desired component");
      Component dc;
      dc.terms.reserve(c.terms.size());
      for (const auto& term : c.terms) dc.terms.push_back(term.differentiated());
      d.components.push_back(std::move(dc));
    }
    return d;
  }
};

/// Returns (x_d(t), dx_d/dt(t)) evaluated analytically.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> eval_desired(const DesiredTrajectory& xd,
                                                                double t) {
  return {xd.value(t), xd.derivative(t)};
}

/// Named presets. "pendulum_fig1" uses y_d(t) = x_d(t) + sin(4 pi t) with
/// x_d(t) = cos(2 pi t) - 2 t; "pendulum_fig1_ydot" replaces the x_d term by
/// its derivative, y_d(t) = x_d'(t) + sin(4 pi t). Both variants are exposed
/// on purpose; they are distinct targets.
inline DesiredTrajectory preset_desired(const std::string& name) {
  using std::numbers::pi;
  DesiredTrajectory d;
  if (name == "pendulum_fig1") {
    d.components.resize(2);
    d.components[0].terms = {TrajectoryTerm::cosine(1.0, 2 * pi), TrajectoryTerm::poly(-2.0, 1)};
    d.components[1].terms = {TrajectoryTerm::cosine(1.0, 2 * pi), TrajectoryTerm::poly(-2.0, 1),
                             TrajectoryTerm::sine(1.0, 4 * pi)};
    return d;
  }
  if (name == "pendulum_fig1_ydot") {
    d.components.resize(2);
    d.components[0].terms = {TrajectoryTerm::cosine(1.0, 2 * pi), TrajectoryTerm::poly(-2.0, 1)};
    d.components[1].terms = {TrajectoryTerm::sine(-2 * pi, 2 * pi), TrajectoryTerm::constant(-2.0),
                             TrajectoryTerm::sine(1.0, 4 * pi)};
    return d;
  }
  throw Error(ErrorCode::ParseError, "unknown desired-trajectory preset: " + name);
}

}  // namespace otrack
