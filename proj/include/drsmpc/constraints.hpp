#pragma once

/**
 * @file
 * @brief Halfspace polytopes {x : H x <= h} and PRS-based constraint tightening.
 */

#include <cmath>
#include <utility>

#include "drsmpc/error.hpp"
#include "drsmpc/linalg.hpp"

namespace drsmpc {

class Halfspaces {
 public:
  Halfspaces() = default;

  Halfspaces(Matrix H, Vector h) : H_(std::move(H)), h_(std::move(h)) {
    require(H_.rows() == h_.size(), Errc::DimensionMismatch, "Halfspaces: H and h row counts differ");
    require(all_finite(H_) && all_finite(h_), Errc::DomainError, "Halfspaces: non-finite entries");
  }

  /// The whole space R^n (no rows).
  static Halfspaces unconstrained(Eigen::Index n) { return Halfspaces(Matrix(0, n), Vector(0)); }

  /// {x : |x_i| <= bound} written as the two rows +e_i, -e_i.
  static Halfspaces symmetric_bound(Eigen::Index n, Eigen::Index coord, double bound) {
    Matrix H = Matrix::Zero(2, n);
    H(0, coord) = 1.0;
    H(1, coord) = -1.0;
    return Halfspaces(std::move(H), Vector::Constant(2, bound));
  }

  const Matrix& H() const { return H_; }
  const Vector& h() const { return h_; }
  Eigen::Index rows() const { return H_.rows(); }
  Eigen::Index dim() const { return H_.cols(); }

  bool origin_interior() const { return rows() == 0 || h_.minCoeff() > 0.0; }

  bool contains(const Vector& x, double tol = 1e-9) const {
    require(x.size() == dim(), Errc::DimensionMismatch, "contains: dimension mismatch");
    if (rows() == 0) return true;
    return ((H_ * x - h_).array() <= tol).all();
  }

 private:
  Matrix H_;
  Vector h_;
};

/// X shifted inward by per-row offsets: rows H_i x <= h_i - offset_i.
class TightenedSet {
 public:
  TightenedSet(Halfspaces base, Vector offsets) : base_(std::move(base)), offsets_(std::move(offsets)) {
    require(offsets_.size() == base_.rows(), Errc::DimensionMismatch,
            "TightenedSet: one offset per row required");
    require(all_finite(offsets_), Errc::DomainError, "TightenedSet: non-finite offsets");
    tightened_ = Halfspaces(base_.H(), base_.h() - offsets_);
    empty_ = base_.rows() > 0 && tightened_.h().minCoeff() <= 0.0;
  }

  /// Untightened set (zero offsets).
  explicit TightenedSet(Halfspaces base)
      : TightenedSet(base, Vector::Zero(base.rows())) {}

  const Halfspaces& base() const { return base_; }
  const Vector& offsets() const { return offsets_; }
  const Halfspaces& set() const { return tightened_; }
  const Vector& h_tightened() const { return tightened_.h(); }

  /// Conservative: set as soon as any row has a non-positive tightened offset.
  bool empty() const { return empty_; }

  bool contains(const Vector& x, double tol = 1e-9) const { return tightened_.contains(x, tol); }

 private:
  Halfspaces base_;
  Vector offsets_;
  Halfspaces tightened_;
  bool empty_ = false;
};

/// Row-wise tightening h'_i = h_i - eta_i.
inline TightenedSet tighten(const Halfspaces& X, const Vector& etas) {
  require(etas.size() == X.rows(), Errc::DimensionMismatch, "tighten: one eta per row required");
  return TightenedSet(X, etas);
}

/**
 * @brief Pontryagin difference with the symmetric box {|e_k| <= eta_k}.
 *
 * Offset of row i is the box support function sum_k |H_ik| eta_k. Coordinates
 * with a zero coefficient are skipped, so an unbounded (infinite) eta on a
 * direction the row ignores does not poison the offset.
 */
inline TightenedSet tighten_with_box(const Halfspaces& X, const Vector& box_etas) {
  require(box_etas.size() == X.dim(), Errc::DimensionMismatch, "tighten_with_box: one eta per coordinate");
  Vector offsets = Vector::Zero(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index k = 0; k < X.dim(); ++k) {
      const double coeff = std::abs(X.H()(i, k));
      if (coeff != 0.0) offsets(i) += coeff * box_etas(k);
    }
  }
  return TightenedSet(X, offsets);
}

}  // namespace drsmpc
