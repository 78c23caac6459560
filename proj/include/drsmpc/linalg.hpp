#pragma once

/**
 * @file
 * @brief Dense linear algebra and scalar special functions shared by all modules.
 */

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "drsmpc/error.hpp"

namespace drsmpc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

/// Max-row-sum norm; zero for empty matrices.
template <typename Derived>
double inf_norm(const Eigen::MatrixBase<Derived>& m) {
  if (m.size() == 0) return 0.0;
  return m.cwiseAbs().rowwise().sum().maxCoeff();
}

template <typename Derived>
double max_abs(const Eigen::MatrixBase<Derived>& m) {
  if (m.size() == 0) return 0.0;
  return m.cwiseAbs().maxCoeff();
}

inline double spectral_radius(const Matrix& A) {
  require(A.rows() == A.cols(), Errc::DimensionMismatch, "spectral_radius needs a square matrix");
  if (A.size() == 0) return 0.0;
  Eigen::EigenSolver<Matrix> es(A, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/**
 * @brief Solves Sigma = A Sigma A^T + W for Schur-stable A.
 *
 * Uses the doubling form of the fixed-point iteration: after k sweeps Sigma holds
 * the first 2^k terms of sum_j A^j W (A^j)^T. The iteration is declared divergent
 * (NonContractive) when A^(2^k) does not vanish within 64 sweeps.
 */
inline Matrix solve_discrete_lyapunov(const Matrix& A, const Matrix& W) {
  require(A.rows() == A.cols() && W.rows() == W.cols() && A.rows() == W.rows(),
          Errc::DimensionMismatch, "Lyapunov: A and W must be square and of equal size");
  require(all_finite(A) && all_finite(W), Errc::DomainError, "Lyapunov: non-finite input");
  require(max_abs(W - W.transpose()) <= 1e-12 * (1.0 + max_abs(W)), Errc::DomainError,
          "Lyapunov: W is not symmetric");

  const Eigen::Index n = A.rows();
  if (n == 0) return Matrix(0, 0);

  Matrix sigma = 0.5 * (W + W.transpose());
  Matrix power = A;
  bool converged = false;
  for (int sweep = 0; sweep < 64; ++sweep) {
    if (inf_norm(power) <= 1e-9) {
      converged = true;
      break;
    }
    sigma += power * sigma * power.transpose();
    sigma = (0.5 * (sigma + sigma.transpose())).eval();
    power = power * power;
    if (!all_finite(power) || !all_finite(sigma) || inf_norm(power) > 1e150) break;
  }
  if (!converged) {
    throw Error(Errc::NonContractive, "Lyapunov iteration did not converge; spectral radius >= 1");
  }
  // Two plain sweeps remove the last doubling round-off.
  for (int i = 0; i < 2; ++i) {
    sigma = A * sigma * A.transpose() + W;
    sigma = (0.5 * (sigma + sigma.transpose())).eval();
  }
  return sigma;
}

inline double lyapunov_residual(const Matrix& A, const Matrix& W, const Matrix& sigma) {
  return max_abs(sigma - A * sigma * A.transpose() - W);
}

/**
 * @brief Returns G (n x r) with G G^T = S for a symmetric PSD S.
 *
 * r is the numerical rank; singular S (e.g. a rank-one noise covariance) is fine.
 * Columns are ordered by decreasing eigenvalue, each with a positive
 * largest-magnitude entry, so the factor is deterministic.
 */
inline Matrix psd_factor(const Matrix& S) {
  require(S.rows() == S.cols(), Errc::DimensionMismatch, "psd_factor: S must be square");
  require(all_finite(S), Errc::DomainError, "psd_factor: non-finite input");
  const double scale = std::max(1.0, max_abs(S));
  require(max_abs(S - S.transpose()) <= 1e-12 * scale, Errc::DomainError,
          "psd_factor: S is not symmetric");
  const Eigen::Index n = S.rows();
  if (n == 0) return Matrix(0, 0);

  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (S + S.transpose()));
  const Vector& lambda = es.eigenvalues();  // ascending
  if (lambda.minCoeff() < -1e-10 * scale) {
    throw Error(Errc::NotPsd, "psd_factor: negative eigenvalue " + std::to_string(lambda.minCoeff()));
  }
  const double rank_tol = static_cast<double>(n) * 1e-15 * std::max(lambda.maxCoeff(), 0.0);

  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (lambda(i) > rank_tol && lambda(i) > 0.0) ++rank;

  Matrix G(n, rank);
  Eigen::Index col = 0;
  for (Eigen::Index i = n - 1; i >= 0 && col < rank; --i) {
    if (!(lambda(i) > rank_tol && lambda(i) > 0.0)) continue;
    Vector v = es.eigenvectors().col(i);
    Eigen::Index pivot = 0;
    v.cwiseAbs().maxCoeff(&pivot);
    if (v(pivot) < 0.0) v = -v;
    G.col(col++) = std::sqrt(lambda(i)) * v;
  }
  return G;
}

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

namespace detail {

// Lower-tail inverse for 0 < p <= 0.5: rational approximation, then one Halley step on Phi.
inline double lower_normal_quantile(double p) {
  static constexpr std::array<double, 6> a{-3.969683028665376e+01, 2.209460984245205e+02,
                                           -2.759285104469687e+02, 1.383577518672690e+02,
                                           -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr std::array<double, 5> b{-5.447609879822406e+01, 1.615858368580409e+02,
                                           -1.556989798598866e+02, 6.680131188771972e+01,
                                           -1.328068155288572e+01};
  static constexpr std::array<double, 6> c{-7.784894002430293e-03, -3.223964580411365e-01,
                                           -2.400758277161838e+00, -2.549732539343734e+00,
                                           4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr std::array<double, 4> d{7.784695709041462e-03, 3.224671290700398e-01,
                                           2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x = 0.0;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  const double e = std_normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

}  // namespace detail

/// Inverse of the standard normal CDF; exactly antisymmetric about p = 0.5.
inline double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw Error(Errc::DomainError, "std_normal_quantile: p must lie in (0,1)");
  }
  if (p == 0.5) return 0.0;
  if (p > 0.5) return -detail::lower_normal_quantile(1.0 - p);
  return detail::lower_normal_quantile(p);
}

inline Matrix riccati_step(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                           const Matrix& P) {
  const Matrix BtPA = B.transpose() * P * A;
  const Matrix S = R + B.transpose() * P * B;
  Matrix next = Q + A.transpose() * P * A - BtPA.transpose() * S.ldlt().solve(BtPA);
  return (0.5 * (next + next.transpose())).eval();
}

/**
 * @brief Infinite-horizon LQR gain K (u = K x) from the Riccati value iteration.
 *
 * Returns K = -(R + B^T P B)^{-1} B^T P A at the fixed point P.
 */
inline Matrix lqr_gain(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R) {
  require(A.rows() == A.cols() && B.rows() == A.rows() && Q.rows() == A.rows() &&
              Q.cols() == A.cols() && R.rows() == B.cols() && R.cols() == B.cols(),
          Errc::DimensionMismatch, "lqr_gain: inconsistent dimensions");
  require(all_finite(A) && all_finite(B) && all_finite(Q) && all_finite(R), Errc::DomainError,
          "lqr_gain: non-finite input");

  Matrix P = Q;
  bool converged = false;
  for (int it = 0; it < 100000; ++it) {
    Matrix next = riccati_step(A, B, Q, R, P);
    if (!all_finite(next)) break;
    const double change = max_abs(next - P);
    P = std::move(next);
    if (change <= 1e-13 * (1.0 + max_abs(P))) {
      converged = true;
      break;
    }
  }
  if (!converged) throw Error(Errc::NoConvergence, "lqr_gain: Riccati iteration stalled");

  const Matrix S = R + B.transpose() * P * B;
  Matrix K = -S.ldlt().solve(B.transpose() * P * A);
  if (spectral_radius(A + B * K) >= 1.0) {
    throw Error(Errc::NoConvergence, "lqr_gain: Riccati fixed point does not stabilize (A, B)");
  }
  return K;
}

}  // namespace drsmpc
