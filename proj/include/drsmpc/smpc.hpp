#pragma once

/**
 * @file
 * @brief Indirect-feedback stochastic MPC on the nominal system z(k+1) = A z + B v.
 *
 * The measured error e = x - z enters only the cost through the predicted means
 * mu_x(t) = z(t) + A_K^t e and mu_u(t) = v(t) + K A_K^t e. Constraints bind the
 * nominal trajectory: H z(t) <= h' for t = 1..N-1, L v(t) <= l' for t = 0..N-1,
 * and z(N) = 0. The nominal states are condensed out, leaving v(0..N-1) as the
 * only decision variables.
 */

#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "drsmpc/constraints.hpp"
#include "drsmpc/error.hpp"
#include "drsmpc/linalg.hpp"
#include "drsmpc/model.hpp"
#include "drsmpc/qp.hpp"

namespace drsmpc {

/// Terminal weight P solving A_K' P A_K + Q + K' R K = P.
inline Matrix terminal_weight(const TubeGain& gain, const Matrix& Q, const Matrix& R) {
  const Matrix W = Q + gain.K().transpose() * R * gain.K();
  return solve_discrete_lyapunov(gain.AK().transpose(), 0.5 * (W + W.transpose()));
}

/// Condensed cost c + f'v + 1/2 v'Hv; `constant` makes objective + constant the true MPC cost.
struct MpcQp {
  QpProblem qp;
  double constant = 0.0;
};

class MpcConfig {
 public:
  MpcConfig(LtiSystem sys, TubeGain gain, Matrix Q, Matrix R, int horizon, TightenedSet state_set,
            std::optional<TightenedSet> input_set = std::nullopt)
      : sys_(std::move(sys)),
        gain_(std::move(gain)),
        Q_(std::move(Q)),
        R_(std::move(R)),
        N_(horizon),
        Z_(std::move(state_set)),
        V_(input_set ? std::move(*input_set) : TightenedSet(Halfspaces::unconstrained(sys_.nu()))) {
    const Eigen::Index n = sys_.nx(), m = sys_.nu();
    require(N_ >= 1, Errc::DomainError, "MpcConfig: horizon must be >= 1");
    require(Q_.rows() == n && Q_.cols() == n && R_.rows() == m && R_.cols() == m, Errc::DimensionMismatch,
            "MpcConfig: weight dimensions");
    require(gain_.K().rows() == m && gain_.K().cols() == n, Errc::DimensionMismatch, "MpcConfig: gain dimensions");
    require(Z_.base().dim() == n, Errc::DimensionMismatch, "MpcConfig: state constraint dimension");
    require(V_.base().dim() == m, Errc::DimensionMismatch, "MpcConfig: input constraint dimension");
    P_ = terminal_weight(gain_, Q_, R_);
    condense();
  }

  const LtiSystem& system() const { return sys_; }
  const TubeGain& gain() const { return gain_; }
  const Matrix& Q() const { return Q_; }
  const Matrix& R() const { return R_; }
  const Matrix& P() const { return P_; }
  int horizon() const { return N_; }
  const TightenedSet& state_set() const { return Z_; }
  const TightenedSet& input_set() const { return V_; }
  bool sets_empty() const { return Z_.empty() || V_.empty(); }

  /// Condensed QP for measured state x_k and nominal state z_k.
  MpcQp build_qp(const Vector& x_k, const Vector& z_k) const {
    const Eigen::Index n = sys_.nx();
    require(x_k.size() == n && z_k.size() == n, Errc::DimensionMismatch, "build_mpc_qp: state dimension");
    if (sets_empty()) throw Error(Errc::TightenedSetEmpty, "tightened state or input set is empty");
    const Vector e_k = x_k - z_k;

    MpcQp out;
    out.qp.P = hessian_;
    out.qp.q = grad_z_ * z_k + grad_e_ * e_k;
    out.qp.A_in = A_in_;
    out.qp.b_in = b_in0_ - b_in_z_ * z_k;
    out.qp.A_eq = A_eq_;
    out.qp.b_eq = -state_map_[static_cast<std::size_t>(N_)] * z_k;

    double c = 0.0;
    for (int t = 0; t <= N_; ++t) {
      const auto tt = static_cast<std::size_t>(t);
      const Vector free = state_map_[tt] * z_k + ak_pow_[tt] * e_k;
      c += free.dot((t < N_ ? Q_ : P_) * free);
      if (t < N_) {
        const Vector ue = gain_.K() * ak_pow_[tt] * e_k;
        c += ue.dot(R_ * ue);
      }
    }
    out.constant = c;
    return out;
  }

  /// Nominal state sequence z(0..N) produced by the input sequence v from z_k.
  std::vector<Vector> nominal_trajectory(const Vector& z_k, const Vector& v) const {
    std::vector<Vector> z{z_k};
    const Eigen::Index m = sys_.nu();
    for (int t = 0; t < N_; ++t) z.push_back(sys_.A() * z.back() + sys_.B() * v.segment(t * m, m));
    return z;
  }

 private:
  void condense() {
    const Eigen::Index n = sys_.nx(), m = sys_.nu();
    const Eigen::Index dv = static_cast<Eigen::Index>(N_) * m;
    const auto steps = static_cast<std::size_t>(N_) + 1;

    state_map_.assign(steps, Matrix::Identity(n, n));
    ak_pow_.assign(steps, Matrix::Identity(n, n));
    input_map_.assign(steps, Matrix::Zero(n, dv));
    for (std::size_t t = 1; t < steps; ++t) {
      state_map_[t] = sys_.A() * state_map_[t - 1];
      ak_pow_[t] = gain_.AK() * ak_pow_[t - 1];
      input_map_[t] = sys_.A() * input_map_[t - 1];
      input_map_[t].block(0, static_cast<Eigen::Index>(t - 1) * m, n, m) = sys_.B();
    }

    hessian_ = Matrix::Zero(dv, dv);
    grad_z_ = Matrix::Zero(dv, n);
    grad_e_ = Matrix::Zero(dv, n);
    for (std::size_t t = 0; t < steps; ++t) {
      const Matrix& W = t < static_cast<std::size_t>(N_) ? Q_ : P_;
      const Matrix GtW = input_map_[t].transpose() * W;
      hessian_ += 2.0 * GtW * input_map_[t];
      grad_z_ += 2.0 * GtW * state_map_[t];
      grad_e_ += 2.0 * GtW * ak_pow_[t];
    }
    for (int t = 0; t < N_; ++t) {
      hessian_.block(t * m, t * m, m, m) += 2.0 * R_;
      grad_e_.block(t * m, 0, m, n) += 2.0 * R_ * gain_.K() * ak_pow_[static_cast<std::size_t>(t)];
    }
    hessian_ = (0.5 * (hessian_ + hessian_.transpose())).eval();

    const Halfspaces& Z = Z_.set();
    const Halfspaces& V = V_.set();
    const Eigen::Index state_rows = Z.rows() * (N_ - 1);
    const Eigen::Index input_rows = V.rows() * N_;
    A_in_ = Matrix::Zero(state_rows + input_rows, dv);
    b_in0_ = Vector::Zero(state_rows + input_rows);
    b_in_z_ = Matrix::Zero(state_rows + input_rows, n);
    Eigen::Index row = 0;
    for (int t = 1; t < N_; ++t) {
      const auto tt = static_cast<std::size_t>(t);
      A_in_.middleRows(row, Z.rows()) = Z.H() * input_map_[tt];
      b_in0_.segment(row, Z.rows()) = Z.h();
      b_in_z_.middleRows(row, Z.rows()) = Z.H() * state_map_[tt];
      row += Z.rows();
    }
    for (int t = 0; t < N_; ++t) {
      A_in_.block(row, t * m, V.rows(), m) = V.H();
      b_in0_.segment(row, V.rows()) = V.h();
      row += V.rows();
    }
    A_eq_ = input_map_[static_cast<std::size_t>(N_)];
  }

  LtiSystem sys_;
  TubeGain gain_;
  Matrix Q_, R_, P_;
  int N_;
  TightenedSet Z_, V_;

  std::vector<Matrix> state_map_;  // A^t
  std::vector<Matrix> ak_pow_;     // A_K^t
  std::vector<Matrix> input_map_;  // z(t) = A^t z + input_map_[t] v
  Matrix hessian_, grad_z_, grad_e_;
  Matrix A_in_, b_in_z_, A_eq_;
  Vector b_in0_;
};

inline MpcQp build_mpc_qp(const Vector& x_k, const Vector& z_k, const MpcConfig& cfg) {
  return cfg.build_qp(x_k, z_k);
}

struct ControllerState {
  Vector z;
  Vector shifted;  ///< (v*(1..N-1|k), 0), applied when the next solve fails
  long k = 0;

  static ControllerState initial(const Vector& x0) { return {x0, Vector(), 0}; }
};

struct StepResult {
  Vector u;
  Vector v0;
  QpStatus status = QpStatus::optimal;
  bool used_fallback = false;
  double cost = 0.0;  ///< optimal MPC cost (NaN when the fallback was used)
  int iterations = 0;
};

/**
 * @brief One receding-horizon step: solve, apply u = v*(0) + K(x - z), advance z.
 *
 * A failed solve at k = 0 throws InitialInfeasible; later failures apply the
 * shifted previous optimum, which stays feasible under the zero terminal set.
 */
inline StepResult mpc_step(const Vector& x_k, ControllerState& state, const MpcConfig& cfg) {
  require(all_finite(x_k), Errc::DomainError, "mpc_step: non-finite state");
  const Eigen::Index m = cfg.system().nu();
  const Eigen::Index dv = static_cast<Eigen::Index>(cfg.horizon()) * m;

  StepResult out;
  std::optional<MpcQp> problem;
  try {
    problem = cfg.build_qp(x_k, state.z);
  } catch (const Error& err) {
    if (err.code() == Errc::TightenedSetEmpty && state.k == 0) {
      throw Error(Errc::InitialInfeasible, "tightened constraint set is empty");
    }
    throw;
  }

  const QpSolution sol = solve_qp(problem->qp);
  out.status = sol.status;
  out.iterations = sol.iterations;
  Vector sequence;
  if (sol.status == QpStatus::optimal) {
    sequence = sol.x;
    out.cost = sol.objective + problem->constant;
  } else {
    if (state.k == 0 || state.shifted.size() != dv) {
      throw Error(Errc::InitialInfeasible, std::string("MPC problem at the initial state is ") + to_string(sol.status));
    }
    sequence = state.shifted;
    out.used_fallback = true;
    out.cost = std::numeric_limits<double>::quiet_NaN();
  }

  out.v0 = sequence.head(m);
  out.u = out.v0 + cfg.gain().K() * (x_k - state.z);
  state.shifted = Vector::Zero(dv);
  state.shifted.head(dv - m) = sequence.tail(dv - m);
  state.z = cfg.system().A() * state.z + cfg.system().B() * out.v0;
  ++state.k;
  return out;
}

/// Feasibility of the k = 0 problem (z(0) = x0, e = 0) at each grid point.
inline std::vector<bool> feasible_region_scan(const std::vector<Vector>& grid, const MpcConfig& cfg) {
  std::vector<bool> feasible(grid.size(), false);
  if (cfg.sets_empty()) return feasible;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const MpcQp prob = cfg.build_qp(grid[i], grid[i]);
    feasible[i] = feasibility_slack(prob.qp.A_in, prob.qp.b_in, prob.qp.A_eq, prob.qp.b_eq).feasible();
  }
  return feasible;
}

}  // namespace drsmpc
