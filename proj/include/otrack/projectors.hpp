#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "otrack/errors.hpp"
#include "otrack/types.hpp"

namespace otrack {

/// Projection data at a state: Omega = B (B^T S B)^-1 B^T, P = Omega S,
/// Q = 1 - P, Bg = (B^T S B)^-1 B^T S, Gamma = Bg^T Bg.
struct ProjectorSet {
  Mat omega;   // n x n symmetric
  Mat P;       // n x n, rank p
  Mat Q;       // n x n, rank n - p
  Mat gamma;   // n x n symmetric, rank p
  Mat bg;      // p x n
  Vec at_state;
};

/// Condition-number ceiling for the Gram matrix B^T S B before declaring it
/// numerically singular.
inline constexpr double kGramConditionLimit = 1e12;

inline ProjectorSet projector_set(const ControlAffineSystem& system, const Mat& S, const Vec& x) {
  const Mat Bx = system.B(x);
  const int n = system.n, p = system.p;
  if (Bx.rows() != n || Bx.cols() != p)
    throw Error(ErrorCode::DimensionMismatch, "B(x) has wrong shape");

  const Mat gram = Bx.transpose() * S * Bx;  // p x p symmetric
  Eigen::SelfAdjointEigenSolver<Mat> es(gram);
  const double ev_min = es.eigenvalues().minCoeff();
  const double ev_max = es.eigenvalues().maxCoeff();
  if (!(ev_min > 0.0) || ev_max / ev_min > kGramConditionLimit)
    throw Error(ErrorCode::SingularGram, "B^T S B is singular or ill-conditioned at this state");

  const Mat gram_inv = es.eigenvectors() *
                       es.eigenvalues().cwiseInverse().asDiagonal() *
                       es.eigenvectors().transpose();

  ProjectorSet ps;
  ps.at_state = x;
  ps.omega = Bx * gram_inv * Bx.transpose();
  ps.P = ps.omega * S;
  ps.Q = Mat::Identity(n, n) - ps.P;
  ps.bg = gram_inv * Bx.transpose() * S;
  ps.gamma = ps.bg.transpose() * ps.bg;
  return ps;
}

/// Outcome of checking the two linearizing conditions: Omega constant over the
/// samples, and Q R(x) affine in x. fitted_A carries the Q-row content of A
/// (the least-squares fit regresses Q R against (x, 1), so fitted_A == Q A).
struct LinearizingReport {
  bool omega_constant = false;
  double omega_max_deviation = 0.0;
  bool qr_affine = false;
  double qr_max_residual = 0.0;
  Mat fitted_A;   // n x n, rows live in range(Q)
  Vec fitted_b;   // n-vector, in range(Q)
  int samples_used = 0;
  double tol = 0.0;

  bool ok() const { return omega_constant && qr_affine; }
};

inline LinearizingReport verify_linearizing(const ControlAffineSystem& system, const Mat& S,
                                            const std::vector<Vec>& samples, double tol = 1e-8) {
  const int n = system.n;
  if (static_cast<int>(samples.size()) < n + 2)
    throw Error(ErrorCode::InsufficientSamples, "need at least n + 2 sample states");

  LinearizingReport rep;
  rep.tol = tol;
  rep.samples_used = static_cast<int>(samples.size());

  std::vector<ProjectorSet> sets;
  sets.reserve(samples.size());
  for (const auto& x : samples) sets.push_back(projector_set(system, S, x));

  rep.omega_max_deviation = 0.0;
  for (std::size_t i = 1; i < sets.size(); ++i)
    rep.omega_max_deviation =
        std::max(rep.omega_max_deviation, (sets[i].omega - sets[0].omega).cwiseAbs().maxCoeff());
  rep.omega_constant = rep.omega_max_deviation <= tol;

  // Least-squares affine fit of Q R(x) against (x, 1).
  const auto m = static_cast<Eigen::Index>(samples.size());
  Mat design(m, n + 1);
  Mat target(m, n);
  for (Eigen::Index i = 0; i < m; ++i) {
    design.row(i).head(n) = samples[i].transpose();
    design(i, n) = 1.0;
    target.row(i) = (sets[i].Q * system.R(samples[i])).transpose();
  }
  Eigen::ColPivHouseholderQR<Mat> qr(design);
  if (qr.rank() < n + 1)
    throw Error(ErrorCode::InsufficientSamples, "sample states are not affinely independent");
  const Mat coeffs = qr.solve(target);  // (n+1) x n
  rep.fitted_A = coeffs.topRows(n).transpose();
  rep.fitted_b = coeffs.row(n).transpose();

  auto fit_residual = [&](const Mat& A, const Vec& b) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const Vec r = sets[i].Q * system.R(samples[i]) - (A * samples[i] + b);
      worst = std::max(worst, r.cwiseAbs().maxCoeff());
    }
    return worst;
  };

  // A declared affine part takes precedence when it reproduces Q R within tol.
  if (system.affine_part) {
    const Mat QA = sets[0].Q * system.affine_part->A;
    const Vec Qb = sets[0].Q * system.affine_part->b;
    const double declared_res = fit_residual(QA, Qb);
    if (declared_res <= tol) {
      rep.fitted_A = QA;
      rep.fitted_b = Qb;
      rep.qr_max_residual = declared_res;
      rep.qr_affine = true;
      return rep;
    }
  }

  rep.qr_max_residual = fit_residual(rep.fitted_A, rep.fitted_b);
  rep.qr_affine = rep.qr_max_residual <= tol;
  return rep;
}

/// Deterministic Latin-hypercube sample of `count` states in [lo, hi].
inline std::vector<Vec> latin_hypercube_box(const Vec& lo, const Vec& hi, int count,
                                            std::uint64_t seed = 0x5eed5eed) {
  const int n = static_cast<int>(lo.size());
  std::vector<Vec> out(count, Vec::Zero(n));
  std::uint64_t state = seed;
  auto next = [&]() {
    state ^= state << 13;
    state ^= state >> 7;
    state ^= state << 17;
    return static_cast<double>(state >> 11) / static_cast<double>(1ull << 53);
  };
  for (int j = 0; j < n; ++j) {
    std::vector<int> perm(count);
    for (int i = 0; i < count; ++i) perm[i] = i;
    for (int i = count - 1; i > 0; --i)
      std::swap(perm[i], perm[static_cast<int>(next() * (i + 1)) % (i + 1)]);
    for (int i = 0; i < count; ++i) {
      const double cell = (perm[i] + next()) / count;
      out[i][j] = lo[j] + cell * (hi[j] - lo[j]);
    }
  }
  return out;
}

/// Default sample box for linearizing checks: bounding box of the boundary
/// states and the desired trajectory, padded half a width plus a unit margin.
inline std::vector<Vec> default_linearizing_samples(const TrackingProblem& problem,
                                                    int count = 64) {
  const int n = problem.system.n;
  Vec lo = problem.x0.cwiseMin(problem.x1);
  Vec hi = problem.x0.cwiseMax(problem.x1);
  for (int k = 0; k <= 32; ++k) {
    const double t = problem.t0 + (problem.t1 - problem.t0) * k / 32.0;
    const Vec v = problem.xd.value(t);
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const Vec pad = 0.5 * (hi - lo) + Vec::Ones(n);
  return latin_hypercube_box(lo - pad, hi + pad, count);
}

}  // namespace otrack
