#pragma once

/**
 * @file
 * @brief LTI plant, tube decomposition x = z + e, and the Gaussian reference PRS.
 */

#include <cmath>
#include <utility>

#include "drsmpc/error.hpp"
#include "drsmpc/linalg.hpp"

namespace drsmpc {

/// x(k+1) = A x(k) + B u(k) + w(k)
class LtiSystem {
 public:
  LtiSystem(Matrix A, Matrix B) : A_(std::move(A)), B_(std::move(B)) {
    require(A_.rows() == A_.cols() && A_.rows() > 0, Errc::DimensionMismatch,
            "LtiSystem: A must be square and non-empty");
    require(B_.rows() == A_.rows() && B_.cols() > 0, Errc::DimensionMismatch,
            "LtiSystem: B must have n_x rows");
    require(all_finite(A_) && all_finite(B_), Errc::DomainError, "LtiSystem: non-finite entries");
  }

  const Matrix& A() const { return A_; }
  const Matrix& B() const { return B_; }
  Eigen::Index nx() const { return A_.rows(); }
  Eigen::Index nu() const { return B_.cols(); }

 private:
  Matrix A_;
  Matrix B_;
};

/**
 * @brief Error feedback u = v + K e with Schur-stable A_K = A + B K.
 *
 * Stability is checked at construction by solving A_K S A_K^T + I = S.
 */
class TubeGain {
 public:
  TubeGain(const LtiSystem& sys, Matrix K) : K_(std::move(K)) {
    require(K_.rows() == sys.nu() && K_.cols() == sys.nx(), Errc::DimensionMismatch,
            "TubeGain: K must be n_u x n_x");
    require(all_finite(K_), Errc::DomainError, "TubeGain: non-finite entries");
    AK_ = sys.A() + sys.B() * K_;
    solve_discrete_lyapunov(AK_, Matrix::Identity(sys.nx(), sys.nx()));
  }

  const Matrix& K() const { return K_; }
  const Matrix& AK() const { return AK_; }

  /// e(k+1) = A_K e(k) + w(k)
  Vector error_step(const Vector& e, const Vector& w) const {
    require(e.size() == AK_.rows() && w.size() == AK_.rows(), Errc::DimensionMismatch,
            "error_step: dimension mismatch");
    return AK_ * e + w;
  }

  /// Mean error t steps ahead of a measured error: A_K^t e0.
  Vector predicted_error(const Vector& e0, int t) const {
    require(e0.size() == AK_.rows(), Errc::DimensionMismatch, "predicted_error: dimension mismatch");
    require(t >= 0, Errc::DomainError, "predicted_error: negative step");
    Vector e = e0;
    for (int i = 0; i < t; ++i) e = AK_ * e;
    return e;
  }

 private:
  Matrix K_;
  Matrix AK_;
};

/// Zero-mean noise w = G xi with xi standard normal, so Sigma_w = G G^T.
class NoiseModel {
 public:
  explicit NoiseModel(Matrix factor) : G_(std::move(factor)) {
    require(all_finite(G_), Errc::DomainError, "NoiseModel: non-finite factor");
  }

  static NoiseModel from_covariance(const Matrix& sigma_w) { return NoiseModel(psd_factor(sigma_w)); }

  const Matrix& factor() const { return G_; }
  Matrix covariance() const { return G_ * G_.transpose(); }
  Eigen::Index dim() const { return G_.rows(); }
  Eigen::Index rank() const { return G_.cols(); }

 private:
  Matrix G_;
};

inline Matrix stationary_error_cov(const TubeGain& gain, const NoiseModel& noise) {
  require(noise.dim() == gain.AK().rows(), Errc::DimensionMismatch,
          "stationary_error_cov: noise dimension mismatch");
  return solve_discrete_lyapunov(gain.AK(), noise.covariance());
}

/// Two-sided Gaussian PRS radius along direction `row`: sqrt(row S row^T) * Phi^{-1}((1+p)/2).
inline double true_gaussian_prs_direction(const Matrix& sigma_e, const Vector& row, double p) {
  require(row.size() == sigma_e.rows(), Errc::DimensionMismatch, "true PRS: direction size mismatch");
  require(p > 0.0 && p < 1.0, Errc::DomainError, "true PRS: p must lie in (0,1)");
  const double variance = row.dot(sigma_e * row);
  return std::sqrt(std::max(variance, 0.0)) * std_normal_quantile(0.5 * (1.0 + p));
}

/// eta* = sqrt(Sigma_e[i,i] * chi2_1(p)) for coordinate i (0-based).
inline double true_gaussian_prs(const Matrix& sigma_e, Eigen::Index coord, double p) {
  require(coord >= 0 && coord < sigma_e.rows(), Errc::DimensionMismatch, "true PRS: bad coordinate");
  return true_gaussian_prs_direction(sigma_e, Vector::Unit(sigma_e.rows(), coord), p);
}

}  // namespace drsmpc
