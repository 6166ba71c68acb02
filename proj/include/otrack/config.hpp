#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "otrack/desired.hpp"
#include "otrack/errors.hpp"
#include "otrack/models.hpp"
#include "otrack/oracle.hpp"
#include "otrack/types.hpp"

namespace otrack {

using Json = nlohmann::json;

/// How the desired trajectory is specified in a config file.
struct DesiredSpec {
  std::string preset;                                    // one of the named presets, or
  std::vector<std::vector<TrajectoryTerm>> components;   // explicit per-component terms, or
  std::vector<TrajectoryTerm> realizable_from;           // position profile, y_d = x_d'

  bool is_preset() const { return !preset.empty(); }
  bool is_realizable() const { return !realizable_from.empty(); }
};

struct OracleOverrides {
  int segments = 20;
  double integrator_tol = 1e-10;
  double newton_tol = 1e-9;
  int max_newton_iters = 50;
  std::string jacobian = "analytic";  // or "finite-difference"
  std::string warm_start = "composite";  // or "zeros"
};

struct DisturbanceSpec {
  int component = 0;
  std::vector<TrajectoryTerm> terms;
};

struct LinearizingSpec {
  std::vector<double> box_lo;
  std::vector<double> box_hi;
  double tol = 1e-8;
  int samples = 64;
};

/// Validated experiment description (schema version 1).
struct ExperimentConfig {
  int schema = 1;
  ModelSpec model;
  Mat S;
  double epsilon = 0.0;
  DesiredSpec desired;
  double t0 = 0.0, t1 = 1.0, dt = 1e-3;
  std::optional<Vec> x0, x1;
  bool x0_from_desired = false, x1_from_desired = false;
  std::string method = "composite";
  std::string output = "out";
  std::optional<LinearizingSpec> linearizing;
  OracleOverrides oracle;
  std::optional<DisturbanceSpec> disturbance;

  DesiredTrajectory build_desired(const ControlAffineSystem& system) const {
    if (desired.is_preset()) return preset_desired(desired.preset);
    if (desired.is_realizable()) return make_realizable_target(system, desired.realizable_from);
    DesiredTrajectory d;
    d.components.resize(desired.components.size());
    for (std::size_t i = 0; i < desired.components.size(); ++i)
      d.components[i].terms = desired.components[i];
    return d;
  }

  TrackingProblem to_problem() const {
    TrackingProblem p;
    p.system = make_model(model);
    p.S = S;
    p.epsilon = epsilon;
    p.xd = build_desired(p.system);
    p.t0 = t0;
    p.t1 = t1;
    if (p.xd.dim() != p.system.n)
      throw Error(ErrorCode::DimensionMismatch, "desired trajectory dimension != model n");
    p.x0 = x0 ? *x0 : Vec(p.xd.value(t0));
    p.x1 = x1 ? *x1 : Vec(p.xd.value(t1));
    p.validate();
    return p;
  }

  ShootingConfig shooting_config() const {
    ShootingConfig sc;
    sc.segments = oracle.segments;
    sc.integrator_tol = oracle.integrator_tol;
    sc.newton_tol = oracle.newton_tol;
    sc.max_newton_iters = oracle.max_newton_iters;
    sc.jacobian = oracle.jacobian == "finite-difference"
                      ? ShootingConfig::Jacobian::FiniteDifference
                      : ShootingConfig::Jacobian::Analytic;
    return sc;
  }
};

namespace detail {

inline TrajectoryTerm term_from_json(const Json& j) {
  TrajectoryTerm t;
  const std::string type = j.value("type", "poly");
  if (type == "poly")
    t.kind = TrajectoryTerm::Kind::Poly;
  else if (type == "cos")
    t.kind = TrajectoryTerm::Kind::Cos;
  else if (type == "sin")
    t.kind = TrajectoryTerm::Kind::Sin;
  else
    throw Error(ErrorCode::ParseError, "desired term type must be poly|cos|sin, got " + type);
  t.coef = j.value("coef", 0.0);
  t.power = j.value("power", 0);
  t.omega = j.value("omega", 0.0);
  t.phase = j.value("phase", 0.0);
  if (t.power < 0) throw Error(ErrorCode::ParseError, "poly power must be >= 0");
  return t;
}

inline Json term_to_json(const TrajectoryTerm& t) {
  Json j;
  switch (t.kind) {
    case TrajectoryTerm::Kind::Poly:
      j["type"] = "poly";
      j["coef"] = t.coef;
      j["power"] = t.power;
      break;
    case TrajectoryTerm::Kind::Cos:
      j["type"] = "cos";
      j["coef"] = t.coef;
      j["omega"] = t.omega;
      j["phase"] = t.phase;
      break;
    case TrajectoryTerm::Kind::Sin:
      j["type"] = "sin";
      j["coef"] = t.coef;
      j["omega"] = t.omega;
      j["phase"] = t.phase;
      break;
  }
  return j;
}

inline Vec vec_from_json(const Json& j, const char* field) {
  if (!j.is_array()) throw Error(ErrorCode::ParseError, std::string(field) + " must be an array");
  Vec v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

inline Mat weight_matrix_from_json(const Json& j) {
  if (!j.is_array() || j.empty()) throw Error(ErrorCode::ParseError, "cost.S must be an array");
  if (j[0].is_array()) {
    const int n = static_cast<int>(j.size());
    Mat S(n, n);
    for (int r = 0; r < n; ++r) {
      if (static_cast<int>(j[r].size()) != n)
        throw Error(ErrorCode::ParseError, "cost.S rows must all have length n");
      for (int c = 0; c < n; ++c) S(r, c) = j[r][c].get<double>();
    }
    return S;
  }
  const int n = static_cast<int>(j.size());
  Mat S = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) S(i, i) = j[i].get<double>();
  return S;
}

}  // namespace detail

inline ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig cfg;
  try {
    cfg.schema = j.at("schema").get<int>();
    if (cfg.schema != 1)
      throw Error(ErrorCode::ParseError, "unsupported schema version " + std::to_string(cfg.schema));

    const auto& jm = j.at("model");
    cfg.model.name = jm.at("name").get<std::string>();
    if (jm.contains("params"))
      for (const auto& [k, v] : jm["params"].items()) cfg.model.params[k] = v.get<double>();
    if (jm.contains("exprs"))
      for (const auto& [k, v] : jm["exprs"].items()) cfg.model.exprs[k] = v.get<std::string>();

    const auto& jc = j.at("cost");
    cfg.S = detail::weight_matrix_from_json(jc.at("S"));
    cfg.epsilon = jc.at("epsilon").get<double>();

    const auto& jd = j.at("desired");
    if (jd.contains("preset")) {
      cfg.desired.preset = jd["preset"].get<std::string>();
    } else if (jd.contains("realizable_from")) {
      for (const auto& jt : jd["realizable_from"])
        cfg.desired.realizable_from.push_back(detail::term_from_json(jt));
    } else if (jd.contains("components")) {
      for (const auto& jcomp : jd["components"]) {
        std::vector<TrajectoryTerm> terms;
        for (const auto& jt : jcomp) terms.push_back(detail::term_from_json(jt));
        cfg.desired.components.push_back(std::move(terms));
      }
    } else {
      throw Error(ErrorCode::ParseError,
                  "desired must contain preset, components, or realizable_from");
    }

    const auto& jt = j.at("time");
    cfg.t0 = jt.at("t0").get<double>();
    cfg.t1 = jt.at("t1").get<double>();
    cfg.dt = jt.at("dt").get<double>();

    if (j.contains("boundary")) {
      const auto& jb = j["boundary"];
      if (jb.contains("x0")) cfg.x0 = detail::vec_from_json(jb["x0"], "boundary.x0");
      if (jb.contains("x1")) cfg.x1 = detail::vec_from_json(jb["x1"], "boundary.x1");
      cfg.x0_from_desired = jb.value("x0_from_desired", false);
      cfg.x1_from_desired = jb.value("x1_from_desired", false);
      if (cfg.x0_from_desired) cfg.x0.reset();
      if (cfg.x1_from_desired) cfg.x1.reset();
    }

    cfg.method = j.value("method", "composite");
    cfg.output = j.value("output", "out");

    if (j.contains("linearizing")) {
      LinearizingSpec ls;
      const auto& jl = j["linearizing"];
      if (jl.contains("box_lo"))
        for (const auto& v : jl["box_lo"]) ls.box_lo.push_back(v.get<double>());
      if (jl.contains("box_hi"))
        for (const auto& v : jl["box_hi"]) ls.box_hi.push_back(v.get<double>());
      ls.tol = jl.value("tol", 1e-8);
      ls.samples = jl.value("samples", 64);
      cfg.linearizing = ls;
    }
    if (j.contains("oracle")) {
      const auto& jo = j["oracle"];
      cfg.oracle.segments = jo.value("segments", 20);
      cfg.oracle.integrator_tol = jo.value("integrator_tol", 1e-10);
      cfg.oracle.newton_tol = jo.value("newton_tol", 1e-9);
      cfg.oracle.max_newton_iters = jo.value("max_newton_iters", 50);
      cfg.oracle.jacobian = jo.value("jacobian", "analytic");
      cfg.oracle.warm_start = jo.value("warm_start", "composite");
    }
    if (j.contains("disturbance")) {
      DisturbanceSpec ds;
      ds.component = j["disturbance"].value("component", 0);
      if (j["disturbance"].contains("terms"))
        for (const auto& jterm : j["disturbance"]["terms"])
          ds.terms.push_back(detail::term_from_json(jterm));
      cfg.disturbance = ds;
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }

  // eager validation
  bool known = false;
  for (const auto& name : model_registry()) known = known || name == cfg.model.name;
  if (!known) throw Error(ErrorCode::ParseError, "unknown model: " + cfg.model.name);
  if (!(cfg.dt > 0.0)) throw Error(ErrorCode::ParseError, "time.dt must be > 0");
  if (!(cfg.t1 > cfg.t0)) throw Error(ErrorCode::ParseError, "time.t1 must exceed time.t0");
  if (cfg.epsilon < 0.0) throw Error(ErrorCode::ParseError, "cost.epsilon must be >= 0");
  if (cfg.epsilon == 0.0 &&
      (cfg.method == "composite" || cfg.method == "compare" || cfg.method == "oracle"))
    throw Error(ErrorCode::ParseError,
                "epsilon = 0 has no boundary layers and no regular oracle; use method exact0");
  static const char* kMethods[] = {"outer", "composite", "exact0", "oracle", "compare"};
  bool method_ok = false;
  for (const char* mth : kMethods) method_ok = method_ok || cfg.method == mth;
  if (!method_ok) throw Error(ErrorCode::ParseError, "unknown method: " + cfg.method);
  if (cfg.oracle.jacobian != "analytic" && cfg.oracle.jacobian != "finite-difference")
    throw Error(ErrorCode::ParseError, "oracle.jacobian must be analytic|finite-difference");
  if (cfg.oracle.warm_start != "composite" && cfg.oracle.warm_start != "zeros")
    throw Error(ErrorCode::ParseError, "oracle.warm_start must be composite|zeros");

  // dimension checks against the model (constructing it also validates params)
  const ControlAffineSystem sys = make_model(cfg.model);
  const int n = sys.n;
  if (cfg.S.rows() != n)
    throw Error(ErrorCode::DimensionMismatch, "cost.S dimension does not match the model");
  const DesiredTrajectory xd = cfg.build_desired(sys);
  if (xd.dim() != n)
    throw Error(ErrorCode::DimensionMismatch, "desired trajectory dimension does not match");
  if (cfg.x0 && cfg.x0->size() != n)
    throw Error(ErrorCode::DimensionMismatch, "boundary.x0 dimension does not match");
  if (cfg.x1 && cfg.x1->size() != n)
    throw Error(ErrorCode::DimensionMismatch, "boundary.x1 dimension does not match");
  if (cfg.linearizing && !cfg.linearizing->box_lo.empty() &&
      (static_cast<int>(cfg.linearizing->box_lo.size()) != n ||
       static_cast<int>(cfg.linearizing->box_hi.size()) != n))
    throw Error(ErrorCode::DimensionMismatch, "linearizing box dimension does not match");
  return cfg;
}

inline Json config_to_json(const ExperimentConfig& cfg) {
  Json j;
  j["schema"] = cfg.schema;
  j["model"]["name"] = cfg.model.name;
  for (const auto& [k, v] : cfg.model.params) j["model"]["params"][k] = v;
  for (const auto& [k, v] : cfg.model.exprs) j["model"]["exprs"][k] = v;
  j["cost"]["epsilon"] = cfg.epsilon;
  {
    Json s = Json::array();
    for (Eigen::Index r = 0; r < cfg.S.rows(); ++r) {
      Json row = Json::array();
      for (Eigen::Index c = 0; c < cfg.S.cols(); ++c) row.push_back(cfg.S(r, c));
      s.push_back(row);
    }
    j["cost"]["S"] = s;
  }
  if (cfg.desired.is_preset()) {
    j["desired"]["preset"] = cfg.desired.preset;
  } else if (cfg.desired.is_realizable()) {
    Json terms = Json::array();
    for (const auto& t : cfg.desired.realizable_from) terms.push_back(detail::term_to_json(t));
    j["desired"]["realizable_from"] = terms;
  } else {
    Json comps = Json::array();
    for (const auto& comp : cfg.desired.components) {
      Json terms = Json::array();
      for (const auto& t : comp) terms.push_back(detail::term_to_json(t));
      comps.push_back(terms);
    }
    j["desired"]["components"] = comps;
  }
  j["time"]["t0"] = cfg.t0;
  j["time"]["t1"] = cfg.t1;
  j["time"]["dt"] = cfg.dt;
  if (cfg.x0) {
    Json v = Json::array();
    for (Eigen::Index i = 0; i < cfg.x0->size(); ++i) v.push_back((*cfg.x0)[i]);
    j["boundary"]["x0"] = v;
  }
  if (cfg.x1) {
    Json v = Json::array();
    for (Eigen::Index i = 0; i < cfg.x1->size(); ++i) v.push_back((*cfg.x1)[i]);
    j["boundary"]["x1"] = v;
  }
  j["boundary"]["x0_from_desired"] = cfg.x0_from_desired;
  j["boundary"]["x1_from_desired"] = cfg.x1_from_desired;
  j["method"] = cfg.method;
  j["output"] = cfg.output;
  if (cfg.linearizing) {
    j["linearizing"]["box_lo"] = cfg.linearizing->box_lo;
    j["linearizing"]["box_hi"] = cfg.linearizing->box_hi;
    j["linearizing"]["tol"] = cfg.linearizing->tol;
    j["linearizing"]["samples"] = cfg.linearizing->samples;
  }
  j["oracle"]["segments"] = cfg.oracle.segments;
  j["oracle"]["integrator_tol"] = cfg.oracle.integrator_tol;
  j["oracle"]["newton_tol"] = cfg.oracle.newton_tol;
  j["oracle"]["max_newton_iters"] = cfg.oracle.max_newton_iters;
  j["oracle"]["jacobian"] = cfg.oracle.jacobian;
  j["oracle"]["warm_start"] = cfg.oracle.warm_start;
  if (cfg.disturbance) {
    j["disturbance"]["component"] = cfg.disturbance->component;
    Json terms = Json::array();
    for (const auto& t : cfg.disturbance->terms) terms.push_back(detail::term_to_json(t));
    j["disturbance"]["terms"] = terms;
  }
  return j;
}

inline ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open config file " + path.string());
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace otrack
