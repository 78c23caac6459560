#pragma once

/**
 * @file
 * @brief Dense convex QP  min 1/2 x'Px + q'x  s.t.  A_in x <= b_in,  A_eq x = b_eq.
 *
 * Solved by a Mehrotra predictor-corrector interior-point method on the reduced
 * KKT system. Every returned optimum is re-checked against scaled KKT residuals;
 * when the interior-point iteration fails, the uniform-slack phase-I problem
 * decides between primal infeasibility (with a Farkas certificate taken from
 * its multipliers) and max_iter.
 */

#include <algorithm>
#include <cmath>
#include <limits>

#include "drsmpc/error.hpp"
#include "drsmpc/linalg.hpp"

namespace drsmpc {

struct QpProblem {
  Matrix P;
  Vector q;
  Matrix A_in;
  Vector b_in;
  Matrix A_eq;
  Vector b_eq;

  Eigen::Index dim() const { return q.size(); }

  void validate() const {
    const Eigen::Index d = q.size();
    require(P.rows() == d && P.cols() == d, Errc::BadProblem, "QP: P must be d x d");
    require(A_in.cols() == d && A_in.rows() == b_in.size(), Errc::BadProblem, "QP: inequality block shape");
    require(A_eq.cols() == d && A_eq.rows() == b_eq.size(), Errc::BadProblem, "QP: equality block shape");
    require(all_finite(P) && all_finite(q) && all_finite(A_in) && all_finite(b_in) && all_finite(A_eq) &&
                all_finite(b_eq),
            Errc::BadProblem, "QP: non-finite data");
    require(max_abs(P - P.transpose()) <= 1e-10 * (1.0 + max_abs(P)), Errc::BadProblem,
            "QP: P is not symmetric");
  }

  double objective(const Vector& x) const { return 0.5 * x.dot(P * x) + q.dot(x); }
};

/// Problem with no constraints of either kind.
inline QpProblem unconstrained_qp(Matrix P, Vector q) {
  const Eigen::Index d = q.size();
  return {std::move(P), std::move(q), Matrix(0, d), Vector(0), Matrix(0, d), Vector(0)};
}

enum class QpStatus { optimal, primal_infeasible, max_iter };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::primal_infeasible: return "primal_infeasible";
    case QpStatus::max_iter: return "max_iter";
  }
  return "unknown";
}

struct KktResiduals {
  double stationarity = 0.0;
  double primal = 0.0;
  double dual = 0.0;
  double complementarity = 0.0;

  double worst() const { return std::max({stationarity, primal, dual, complementarity}); }
};

struct QpSolution {
  Vector x;
  Vector y_in;  ///< inequality multipliers (>= 0); Farkas weights when infeasible
  Vector y_eq;  ///< equality multipliers; Farkas weights when infeasible
  QpStatus status = QpStatus::max_iter;
  double objective = std::numeric_limits<double>::quiet_NaN();
  KktResiduals kkt;
  int iterations = 0;
};

inline constexpr double kKktTolerance = 1e-6;
inline constexpr double kFeasibilityThreshold = 1e-6;

inline KktResiduals kkt_residuals(const QpProblem& prob, const Vector& x, const Vector& y_in,
                                  const Vector& y_eq) {
  KktResiduals r;
  const Vector Px = prob.P * x;
  const Vector Gty = prob.A_in.transpose() * y_in;
  const Vector Aty = prob.A_eq.transpose() * y_eq;
  const double stat_scale = 1.0 + std::max({max_abs(Px), max_abs(prob.q), max_abs(Gty), max_abs(Aty)});
  r.stationarity = max_abs(Px + prob.q + Gty + Aty) / stat_scale;

  const Vector Gx = prob.A_in * x;
  const Vector Ax = prob.A_eq * x;
  const Vector slack = prob.b_in - Gx;
  double violation = 0.0;
  if (slack.size() > 0) violation = std::max(violation, -slack.minCoeff());
  violation = std::max(violation, max_abs(Ax - prob.b_eq));
  const double primal_scale =
      1.0 + std::max({max_abs(prob.b_in), max_abs(prob.b_eq), max_abs(Gx), max_abs(Ax)});
  r.primal = violation / primal_scale;

  if (y_in.size() > 0) r.dual = std::max(0.0, -y_in.minCoeff()) / (1.0 + max_abs(y_in));
  const double obj = prob.objective(x);
  if (y_in.size() > 0) {
    r.complementarity = (y_in.array() * slack.array()).abs().maxCoeff() / (1.0 + std::abs(obj));
  }
  return r;
}

namespace detail {

struct IpmOptions {
  int max_iter = 100;
  double tol = 1e-10;
};

struct IpmResult {
  Vector x, z, y;
  bool converged = false;
  int iterations = 0;
};

// Solves [M A'; A -reg I] [dx; dy] = [r1; r2], refining against reg = 0 while the residual shrinks.
// reg is raised relative to M when the factorization is numerically singular.
class KktSystem {
 public:
  KktSystem(const Matrix& M, const Matrix& A, double reg) : d_(M.rows()), p_(A.rows()) {
    K_.resize(d_ + p_, d_ + p_);
    K_.topLeftCorner(d_, d_) = M;
    K_.topRightCorner(d_, p_) = A.transpose();
    K_.bottomLeftCorner(p_, d_) = A;
    K_.bottomRightCorner(p_, p_).setZero();
    factor(reg);
    // Directions with curvature far below the barrier terms are numerically singular.
    if (!(lu_.rcond() > 1e-15)) factor(std::max(reg, 1e-13 * (1.0 + max_abs(M))));
  }

  Vector solve(const Vector& rhs) const {
    Vector sol = scaled_solve(rhs);
    Vector res = rhs - K_ * sol;
    double norm = max_abs(res);
    for (int i = 0; i < 20 && norm > 0.0; ++i) {
      const Vector next = sol + scaled_solve(res);
      const Vector next_res = rhs - K_ * next;
      const double next_norm = max_abs(next_res);
      if (!(next_norm < norm)) break;
      sol = next;
      res = next_res;
      if (next_norm > 0.5 * norm) break;
      norm = next_norm;
    }
    return sol;
  }

 private:
  // Symmetric Ruiz equilibration: barrier terms can make the x block many orders
  // of magnitude larger than the equality rows.
  void factor(double reg) {
    Matrix Kreg = K_;
    Kreg.topLeftCorner(d_, d_).diagonal().array() += reg;
    Kreg.bottomRightCorner(p_, p_).diagonal().array() -= reg;
    scale_ = Vector::Ones(d_ + p_);
    for (int sweep = 0; sweep < 10; ++sweep) {
      const Vector norms = Kreg.cwiseAbs().rowwise().maxCoeff();
      if ((norms.array() - 1.0).abs().maxCoeff() < 1e-2) break;
      for (Eigen::Index i = 0; i < norms.size(); ++i) {
        if (norms(i) > 0.0) {
          const double f = 1.0 / std::sqrt(norms(i));
          scale_(i) *= f;
          Kreg.row(i) *= f;
          Kreg.col(i) *= f;
        }
      }
    }
    lu_.compute(Kreg);
  }

  Vector scaled_solve(const Vector& rhs) const {
    return scale_.cwiseProduct(lu_.solve(scale_.cwiseProduct(rhs)));
  }

  Eigen::Index d_, p_;
  Matrix K_;
  Vector scale_;
  Eigen::PartialPivLU<Matrix> lu_;
};

inline double max_step(const Vector& v, const Vector& dv) {
  double alpha = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv(i) < 0.0) alpha = std::min(alpha, -v(i) / dv(i));
  return alpha;
}

inline IpmResult interior_point(const QpProblem& prob, const IpmOptions& opt = {}) {
  const Matrix& P = prob.P;
  const Matrix& G = prob.A_in;
  const Matrix& A = prob.A_eq;
  const Vector& q = prob.q;
  const Vector& h = prob.b_in;
  const Vector& b = prob.b_eq;
  const Eigen::Index d = q.size(), m = h.size(), p = b.size();

  const double reg = 1e-10 * (1.0 + max_abs(P));
  IpmResult out;
  out.y = Vector::Zero(p);
  out.z = Vector::Ones(m);

  // Start from the equality-constrained minimizer of the cost plus ||G x - h||^2.
  {
    KktSystem kkt(P + G.transpose() * G, A, reg);
    Vector rhs(d + p);
    rhs << -q + G.transpose() * h, b;
    const Vector sol = kkt.solve(rhs);
    out.x = sol.head(d);
  }
  Vector s = (h - G * out.x).cwiseMax(1.0);
  Vector& x = out.x;
  Vector& z = out.z;
  Vector& y = out.y;

  const Matrix Pa = P.cwiseAbs(), Ga = G.cwiseAbs(), Aa = A.cwiseAbs();
  for (int it = 0; it < opt.max_iter; ++it) {
    out.iterations = it;
    const Vector rd = P * x + q + G.transpose() * z + A.transpose() * y;
    const Vector re = A * x - b;
    const Vector ri = G * x + s - h;
    // Residuals relative to the magnitude of the summed terms: products such as G'z
    // can cancel, leaving roundoff of the size of |G|'|z| rather than |G'z|.
    const Vector xa = x.cwiseAbs();
    const double scale_d = 1.0 + std::max({max_abs(q), max_abs(Pa * xa), max_abs(Ga.transpose() * z.cwiseAbs()),
                                           max_abs(Aa.transpose() * y.cwiseAbs())});
    const double scale_e = 1.0 + std::max(max_abs(b), max_abs(Aa * xa));
    const double scale_i = 1.0 + std::max(max_abs(h), max_abs(Ga * xa));
    const double mu = m > 0 ? s.dot(z) / static_cast<double>(m) : 0.0;
    const double obj = prob.objective(x);
    if (!all_finite(rd) || !all_finite(ri) || !all_finite(re) || !std::isfinite(mu)) return out;
    if (max_abs(rd) <= opt.tol * scale_d && max_abs(re) <= opt.tol * scale_e && max_abs(ri) <= opt.tol * scale_i &&
        mu <= opt.tol * (1.0 + std::abs(obj))) {
      out.converged = true;
      return out;
    }
    if (m > 0 && (max_abs(z) > 1e14 || max_abs(x) > 1e14)) return out;

    const Vector D = z.cwiseQuotient(s);
    KktSystem kkt(P + G.transpose() * D.asDiagonal() * G, A, reg);

    auto direction = [&](const Vector& rc, Vector& dx, Vector& dy, Vector& dz, Vector& ds) {
      Vector rhs(d + p);
      rhs << -rd - G.transpose() * (D.cwiseProduct(ri) - rc.cwiseQuotient(s)), -re;
      const Vector sol = kkt.solve(rhs);
      dx = sol.head(d);
      dy = sol.tail(p);
      dz = D.cwiseProduct(G * dx + ri) - rc.cwiseQuotient(s);
      ds = -(rc + s.cwiseProduct(dz)).cwiseQuotient(z);
    };

    Vector dx, dy, dz, ds;
    if (m == 0) {
      direction(Vector(0), dx, dy, dz, ds);
      x += dx;
      y += dy;
      continue;
    }

    // Predictor.
    direction(s.cwiseProduct(z), dx, dy, dz, ds);
    const double alpha_aff = std::min(max_step(s, ds), max_step(z, dz));
    const double mu_aff = (s + alpha_aff * ds).dot(z + alpha_aff * dz) / static_cast<double>(m);
    const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);

    // Corrector.
    const Vector rc = s.cwiseProduct(z) + ds.cwiseProduct(dz) - Vector::Constant(m, sigma * mu);
    direction(rc, dx, dy, dz, ds);
    const double alpha = std::min(1.0, 0.99 * std::min(max_step(s, ds), max_step(z, dz)));

    x += alpha * dx;
    y += alpha * dy;
    z += alpha * dz;
    s += alpha * ds;
  }
  out.iterations = opt.max_iter;
  return out;
}

}  // namespace detail

struct FeasibilityResult {
  double slack = 0.0;   ///< minimal uniform slack s* >= 0
  Vector x;             ///< minimizer of the slack problem
  Vector y_in, y_eq;    ///< Farkas weights (normalized to unit l1 mass) when slack > 0
  bool converged = false;

  bool feasible() const { return converged && slack <= kFeasibilityThreshold; }
};

/**
 * @brief Minimal s with A_in x <= b_in + s and |A_eq x - b_eq| <= s for some x.
 *
 * Solves  min s + 1e-10/2 ||x||^2  s.t. s >= -1  over (x, s), which is always
 * feasible. When s* > 0 the bound on s is inactive, the multipliers sum to one
 * and give y >= 0, z with y'A_in + z'A_eq ~ 0 and y'b_in + z'b_eq ~ -s* < 0.
 */
inline FeasibilityResult feasibility_slack(const Matrix& A_in, const Vector& b_in, const Matrix& A_eq,
                                           const Vector& b_eq) {
  const Eigen::Index d = A_in.cols();
  require(A_eq.cols() == d && A_in.rows() == b_in.size() && A_eq.rows() == b_eq.size(), Errc::BadProblem,
          "feasibility_slack: inconsistent shapes");
  require(all_finite(A_in) && all_finite(b_in) && all_finite(A_eq) && all_finite(b_eq), Errc::BadProblem,
          "feasibility_slack: non-finite data");
  const Eigen::Index m = A_in.rows(), p = A_eq.rows();
  constexpr double kRegularization = 1e-10;

  FeasibilityResult out;
  out.y_in = Vector::Zero(m);
  out.y_eq = Vector::Zero(p);
  if (m + p == 0) {
    out.x = Vector::Zero(d);
    out.converged = true;
    return out;
  }

  // Linear in s so that s* = 0 exactly on feasible data; s >= -1 keeps the problem bounded.
  QpProblem aux;
  aux.P = Matrix::Zero(d + 1, d + 1);
  aux.P.topLeftCorner(d, d).diagonal().setConstant(kRegularization);
  aux.q = Vector::Zero(d + 1);
  aux.q(d) = 1.0;
  aux.A_in = Matrix::Zero(m + 2 * p + 1, d + 1);
  aux.b_in = Vector(m + 2 * p + 1);
  aux.A_in.topLeftCorner(m, d) = A_in;
  aux.A_in.block(m, 0, p, d) = A_eq;
  aux.A_in.block(m + p, 0, p, d) = -A_eq;
  aux.A_in.col(d).setConstant(-1.0);
  aux.b_in << b_in, b_eq, -b_eq, 1.0;
  aux.A_eq = Matrix(0, d + 1);
  aux.b_eq = Vector(0);

  const detail::IpmResult r = detail::interior_point(aux, {200, 1e-8});
  out.converged = r.converged;
  out.x = r.x.head(d);
  out.slack = std::max(0.0, r.x(d));

  Vector y_in = r.z.head(m);
  Vector y_eq = r.z.segment(m, p) - r.z.segment(m + p, p);
  const double mass = y_in.sum() + y_eq.cwiseAbs().sum();
  if (mass > 0.0) {
    out.y_in = y_in / mass;
    out.y_eq = y_eq / mass;
  }
  return out;
}

/// Checks y >= 0, y'A_in + z'A_eq ~ 0 and y'b_in + z'b_eq < 0 (relative tolerance tol).
inline bool is_farkas_certificate(const QpProblem& prob, const Vector& y_in, const Vector& y_eq,
                                  double tol = 1e-6) {
  if (y_in.size() != prob.b_in.size() || y_eq.size() != prob.b_eq.size()) return false;
  const double mass = y_in.cwiseAbs().sum() + y_eq.cwiseAbs().sum();
  if (!(mass > 0.0)) return false;
  const Vector yi = y_in / mass, ye = y_eq / mass;
  if (yi.size() > 0 && yi.minCoeff() < -tol) return false;
  const Vector combo = prob.A_in.transpose() * yi + prob.A_eq.transpose() * ye;
  const double data_scale = 1.0 + std::max(max_abs(prob.A_in), max_abs(prob.A_eq));
  const double gap = yi.dot(prob.b_in) + ye.dot(prob.b_eq);
  return max_abs(combo) <= tol * data_scale && gap < -tol * (1.0 + std::max(max_abs(prob.b_in), max_abs(prob.b_eq)));
}

/**
 * @brief Solves a convex QP; never returns an uncertified point as optimal.
 *
 * Throws BadProblem on malformed input.
 */
inline QpSolution solve_qp(const QpProblem& prob) {
  prob.validate();
  QpSolution sol;
  const detail::IpmResult r = detail::interior_point(prob);
  sol.iterations = r.iterations;
  if (r.converged) {
    sol.x = r.x;
    sol.y_in = r.z;
    sol.y_eq = r.y;
    sol.objective = prob.objective(sol.x);
    sol.kkt = kkt_residuals(prob, sol.x, sol.y_in, sol.y_eq);
    if (sol.kkt.worst() <= kKktTolerance) {
      sol.status = QpStatus::optimal;
      return sol;
    }
  }

  const FeasibilityResult phase1 = feasibility_slack(prob.A_in, prob.b_in, prob.A_eq, prob.b_eq);
  if (phase1.converged && phase1.slack > kFeasibilityThreshold &&
      is_farkas_certificate(prob, phase1.y_in, phase1.y_eq)) {
    sol.status = QpStatus::primal_infeasible;
    sol.x = phase1.x;
    sol.y_in = phase1.y_in;
    sol.y_eq = phase1.y_eq;
    sol.objective = std::numeric_limits<double>::quiet_NaN();
    return sol;
  }
  sol.status = QpStatus::max_iter;
  if (sol.x.size() == 0) sol.x = r.x;
  if (sol.y_in.size() == 0) sol.y_in = r.z;
  if (sol.y_eq.size() == 0) sol.y_eq = r.y;
  return sol;
}

}  // namespace drsmpc
