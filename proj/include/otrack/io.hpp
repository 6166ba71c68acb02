#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "otrack/errors.hpp"
#include "otrack/projectors.hpp"
#include "otrack/types.hpp"

namespace otrack {

namespace detail {

/// 17 significant digits round-trip doubles exactly.
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// CSV schema: t,x1..xn,lam1..lamn,u1..up with LF line endings. Missing
/// co-states or controls are written as zeros to keep the column layout fixed.
inline void write_trajectory_csv(const std::filesystem::path& path,
                                 const TrajectorySolution& traj) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  const int n = static_cast<int>(traj.x.front().size());
  const int p = traj.u.empty() ? 1 : static_cast<int>(traj.u.front().size());

  out << "t";
  for (int i = 1; i <= n; ++i) out << ",x" << i;
  for (int i = 1; i <= n; ++i) out << ",lam" << i;
  for (int i = 1; i <= p; ++i) out << ",u" << i;
  out << "\n";
  for (std::size_t k = 0; k < traj.grid.size(); ++k) {
    out << detail::fmt_double(traj.grid[k]);
    for (int i = 0; i < n; ++i) out << "," << detail::fmt_double(traj.x[k][i]);
    for (int i = 0; i < n; ++i)
      out << "," << detail::fmt_double(traj.lambda.empty() ? 0.0 : traj.lambda[k][i]);
    for (int i = 0; i < p; ++i)
      out << "," << detail::fmt_double(traj.u.empty() ? 0.0 : traj.u[k][i]);
    out << "\n";
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

inline nlohmann::json kicks_to_json(const std::vector<DeltaKick>& kicks) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& k : kicks) {
    nlohmann::json jk;
    jk["time"] = k.time;
    jk["strength"] = std::vector<double>(k.strength.data(), k.strength.data() + k.strength.size());
    jk["jump"] = std::vector<double>(k.jump.data(), k.jump.data() + k.jump.size());
    arr.push_back(jk);
  }
  return arr;
}

inline nlohmann::json report_to_json(const LinearizingReport& rep) {
  nlohmann::json j;
  j["omega_constant"] = rep.omega_constant;
  j["omega_max_deviation"] = rep.omega_max_deviation;
  j["qr_affine"] = rep.qr_affine;
  j["qr_max_residual"] = rep.qr_max_residual;
  j["samples_used"] = rep.samples_used;
  j["tol"] = rep.tol;
  nlohmann::json A = nlohmann::json::array();
  for (Eigen::Index r = 0; r < rep.fitted_A.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < rep.fitted_A.cols(); ++c) row.push_back(rep.fitted_A(r, c));
    A.push_back(row);
  }
  j["fitted_A"] = A;
  j["fitted_b"] =
      std::vector<double>(rep.fitted_b.data(), rep.fitted_b.data() + rep.fitted_b.size());
  return j;
}

}  // namespace otrack
