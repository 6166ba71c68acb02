#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "otrack/desired.hpp"
#include "otrack/errors.hpp"

namespace otrack {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Optional declared affine structure: R has Q-rows Q R(x) = Q A x + Q b.
struct AffinePart {
  Mat A;
  Vec b;
};

/// Control-affine dynamics xdot = R(x) + B(x) u with user-supplied analytic
/// gradients. grad_B[j] holds d B / d x_j (an n x p matrix per direction j).
struct ControlAffineSystem {
  int n = 0;
  int p = 0;
  std::function<Vec(const Vec&)> R;
  std::function<Mat(const Vec&)> grad_R;                // (i,j) = dR_i/dx_j
  std::function<Mat(const Vec&)> B;                     // n x p
  std::function<std::vector<Mat>(const Vec&)> grad_B;   // [j](i,k) = dB_ik/dx_j
  std::optional<AffinePart> affine_part;

  /// rank(B(x)) == p via singular values; used as a precondition probe.
  bool has_full_input_rank(const Vec& x, double tol = 1e-10) const {
    Eigen::JacobiSVD<Mat> svd(B(x));
    const auto& sv = svd.singularValues();
    if (sv.size() < p) return false;
    return sv(p - 1) > tol * std::max(1.0, sv(0));
  }

  /// (grad_B(x) u) as the n x n matrix with entries sum_k dB_ik/dx_j u_k.
  Mat grad_B_contract(const Vec& x, const Vec& u) const {
    const auto gb = grad_B(x);
    Mat out = Mat::Zero(n, n);
    for (int j = 0; j < n; ++j) out.col(j) = gb[j] * u;
    return out;
  }
};

/// Optimal trajectory-tracking problem data.
struct TrackingProblem {
  ControlAffineSystem system;
  Mat S;            // n x n symmetric positive definite weights
  double epsilon = 0.0;
  DesiredTrajectory xd;
  double t0 = 0.0;
  double t1 = 1.0;
  Vec x0;
  Vec x1;

  void validate() const {
    const int n = system.n;
    if (S.rows() != n || S.cols() != n)
      throw Error(ErrorCode::DimensionMismatch, "S must be n x n");
    if ((S - S.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + S.cwiseAbs().maxCoeff()))
      throw Error(ErrorCode::DimensionMismatch, "S must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(S);
    if (es.eigenvalues().minCoeff() <= 0.0)
      throw Error(ErrorCode::DimensionMismatch, "S must be positive definite");
    if (!(t1 > t0)) throw Error(ErrorCode::DimensionMismatch, "t1 must exceed t0");
    if (epsilon < 0.0) throw Error(ErrorCode::DimensionMismatch, "epsilon must be >= 0");
    if (xd.dim() != n) throw Error(ErrorCode::DimensionMismatch, "desired trajectory dim != n");
    if (x0.size() != n || x1.size() != n)
      throw Error(ErrorCode::DimensionMismatch, "boundary states must have dim n");
  }
};

enum class SolutionFlavor {
  Outer,
  InnerLeft,
  InnerRight,
  Composite,
  ExactEps0,
  Oracle,
  ClosedLoop,
};

inline const char* to_string(SolutionFlavor f) {
  switch (f) {
    case SolutionFlavor::Outer: return "outer";
    case SolutionFlavor::InnerLeft: return "inner-left";
    case SolutionFlavor::InnerRight: return "inner-right";
    case SolutionFlavor::Composite: return "composite";
    case SolutionFlavor::ExactEps0: return "exact-eps0";
    case SolutionFlavor::Oracle: return "oracle";
    case SolutionFlavor::ClosedLoop: return "closed-loop";
  }
  return "unknown";
}

/// Dirac impulse record of the eps = 0 control at a time-domain boundary.
/// strength = sign * 2 * Bg(x_b) (X(t_b) - x_b), sign +1 at t0 and -1 at t1;
/// jump stores the P-projected state discontinuity X(t_b) - x_b.
struct DeltaKick {
  double time = 0.0;
  Vec strength;  // p-vector, integral of u across the kick
  Vec jump;      // n-vector state discontinuity
};

/// Sampled trajectory with optional co-state, control, and analytic state
/// derivative. `kicks` is populated only for the exact eps = 0 flavor.
struct TrajectorySolution {
  std::vector<double> grid;
  std::vector<Vec> x;
  std::vector<Vec> lambda;  // may be empty (plant-only simulations)
  std::vector<Vec> u;       // may be empty
  std::vector<Vec> xdot;    // optional analytic derivative per sample
  SolutionFlavor flavor = SolutionFlavor::Outer;
  std::vector<DeltaKick> kicks;

  std::size_t size() const { return grid.size(); }

  void validate() const {
    if (grid.size() < 2) throw Error(ErrorCode::GridMismatch, "grid needs >= 2 samples");
    for (std::size_t k = 1; k < grid.size(); ++k)
      if (!(grid[k] > grid[k - 1]))
        throw Error(ErrorCode::GridMismatch, "grid must be strictly increasing");
    auto check = [&](const std::vector<Vec>& arr, const char* name) {
      if (arr.empty()) return;
      if (arr.size() != grid.size())
        throw Error(ErrorCode::GridMismatch, std::string(name) + " length != grid length");
      for (const auto& v : arr)
        if (!v.allFinite())
          throw Error(ErrorCode::GridMismatch, std::string(name) + " has non-finite entries");
    };
    check(x, "x");
    check(lambda, "lambda");
    check(u, "u");
    check(xdot, "xdot");
    if (x.size() != grid.size()) throw Error(ErrorCode::GridMismatch, "x missing samples");
  }
};

/// Uniform grid from t0 to t1 with step dt; the last point is pinned to t1.
inline std::vector<double> uniform_grid(double t0, double t1, double dt) {
  if (!(dt > 0.0)) throw Error(ErrorCode::DimensionMismatch, "dt must be > 0");
  const auto count = static_cast<std::size_t>(std::llround((t1 - t0) / dt));
  std::vector<double> g(std::max<std::size_t>(count, 1) + 1);
  for (std::size_t k = 0; k < g.size(); ++k) g[k] = t0 + static_cast<double>(k) * dt;
  g.back() = t1;
  return g;
}

}  // namespace otrack
