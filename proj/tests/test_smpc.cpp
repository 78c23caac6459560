#include <random>

#include <gtest/gtest.h>

#include "drsmpc/sim.hpp"
#include "drsmpc/smpc.hpp"
#include "oracles.hpp"

using namespace drsmpc;

namespace {

MpcConfig ref_mpc(double bound, double eta, int horizon = 30) {
  const LtiSystem sys(oracle::ref_A(), oracle::ref_B());
  return MpcConfig(sys, oracle::ref_gain(), Matrix::Identity(2, 2), Matrix::Identity(1, 1), horizon,
                   tighten(Halfspaces::symmetric_bound(2, 1, bound), Vector::Constant(2, eta)));
}

// Cost sum_{t<N} |mu_x|_Q^2 + |mu_u|_R^2 + |mu_x(N)|_P^2 evaluated along the trajectory.
double direct_cost(const MpcConfig& cfg, const Vector& x, const Vector& z, const Vector& v) {
  const std::vector<Vector> zs = cfg.nominal_trajectory(z, v);
  const Eigen::Index m = cfg.system().nu();
  double c = 0.0;
  for (int t = 0; t <= cfg.horizon(); ++t) {
    const Vector e = cfg.gain().predicted_error(x - z, t);
    const Vector mx = zs[static_cast<std::size_t>(t)] + e;
    if (t == cfg.horizon()) {
      c += mx.dot(cfg.P() * mx);
    } else {
      const Vector mu = v.segment(t * m, m) + cfg.gain().K() * e;
      c += mx.dot(cfg.Q() * mx) + mu.dot(cfg.R() * mu);
    }
  }
  return c;
}

}  // namespace

TEST(TerminalWeight, ScalarValue) {
  const LtiSystem sys(Matrix::Ones(1, 1), Matrix::Ones(1, 1));
  const TubeGain gain(sys, Matrix::Constant(1, 1, -0.5));
  EXPECT_NEAR(terminal_weight(gain, Matrix::Ones(1, 1), Matrix::Ones(1, 1))(0, 0), 5.0 / 3.0, 1e-12);
}

TEST(BuildQp, ScalarTerminalEquality) {
  const LtiSystem sys(Matrix::Ones(1, 1), Matrix::Ones(1, 1));
  const TubeGain gain(sys, Matrix::Constant(1, 1, -0.5));
  const MpcConfig cfg(sys, gain, Matrix::Ones(1, 1), Matrix::Ones(1, 1), 1, TightenedSet(Halfspaces::unconstrained(1)));
  const MpcQp prob = build_mpc_qp(Vector::Ones(1), Vector::Ones(1), cfg);
  const QpSolution s = solve_qp(prob.qp);
  ASSERT_EQ(s.status, QpStatus::optimal);
  EXPECT_NEAR(s.x(0), -1.0, 1e-9);
  EXPECT_NEAR(s.objective + prob.constant, 2.0, 1e-9);
}

TEST(BuildQp, OriginIsOptimalAtOrigin) {
  const MpcConfig cfg = ref_mpc(3.0, 1.53);
  const MpcQp prob = cfg.build_qp(Vector::Zero(2), Vector::Zero(2));
  const QpSolution s = solve_qp(prob.qp);
  ASSERT_EQ(s.status, QpStatus::optimal);
  EXPECT_LE(max_abs(s.x), 1e-8);
  EXPECT_NEAR(s.objective + prob.constant, 0.0, 1e-10);
}

TEST(BuildQp, MeasuredErrorEntersThroughInputMean) {
  // A_K = 0, so only mu_u = v + K e matters; z(1) = v1 + v2 = 0 pins v to the line v1 = -v2.
  const LtiSystem sys(Matrix::Zero(1, 1), Matrix{{1.0, 1.0}});
  const TubeGain gain(sys, Matrix{{0.5}, {-0.5}});
  const MpcConfig cfg(sys, gain, Matrix::Zero(1, 1), Matrix::Identity(2, 2), 1,
                      TightenedSet(Halfspaces::unconstrained(1)));
  const QpSolution s = solve_qp(cfg.build_qp(Vector::Ones(1), Vector::Zero(1)).qp);
  ASSERT_EQ(s.status, QpStatus::optimal);
  EXPECT_LE(max_abs(s.x - (-gain.K() * Vector::Ones(1))), 1e-9);
}

TEST(BuildQp, CondensedCostMatchesDirectEvaluation) {
  const MpcConfig cfg = ref_mpc(3.0, 1.53, 8);
  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 50; ++trial) {
    const Vector x = Vector::NullaryExpr(2, [&] { return 3.0 * nd(gen); });
    const Vector z = Vector::NullaryExpr(2, [&] { return 3.0 * nd(gen); });
    const Vector v = Vector::NullaryExpr(8, [&] { return nd(gen); });
    const MpcQp prob = cfg.build_qp(x, z);
    const double ref = direct_cost(cfg, x, z, v);
    EXPECT_NEAR(prob.qp.objective(v) + prob.constant, ref, 1e-9 * (1.0 + ref));
  }
}

TEST(BuildQp, ConstraintsMatchNominalTrajectory) {
  const MpcConfig cfg = ref_mpc(3.0, 1.53, 10);
  const Vector z0{{4.0, -1.0}};
  const MpcQp prob = cfg.build_qp(z0, z0);
  const QpSolution s = solve_qp(prob.qp);
  ASSERT_EQ(s.status, QpStatus::optimal);
  const std::vector<Vector> zs = cfg.nominal_trajectory(z0, s.x);
  for (int t = 1; t < cfg.horizon(); ++t) EXPECT_TRUE(cfg.state_set().contains(zs[static_cast<std::size_t>(t)], 1e-7));
  EXPECT_LE(max_abs(zs.back()), 1e-8);
}

TEST(BuildQp, EmptySetThrows) {
  const MpcConfig cfg = ref_mpc(1.2, 1.53);
  EXPECT_TRUE(cfg.sets_empty());
  try {
    cfg.build_qp(Vector::Zero(2), Vector::Zero(2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::TightenedSetEmpty);
  }
}

TEST(MpcStep, OriginStaysPut) {
  const MpcConfig cfg = ref_mpc(3.0, 1.53);
  ControllerState state = ControllerState::initial(Vector::Zero(2));
  const StepResult r = mpc_step(Vector::Zero(2), state, cfg);
  EXPECT_LE(max_abs(r.u), 1e-8);
  EXPECT_LE(max_abs(state.z), 1e-8);
  EXPECT_EQ(state.k, 1);
}

TEST(MpcStep, TightBoundIsInitiallyInfeasible) {
  const MpcConfig cfg = ref_mpc(1.2, 2.67);
  ControllerState state = ControllerState::initial(Vector{{10.0, 0.0}});
  try {
    mpc_step(Vector{{10.0, 0.0}}, state, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InitialInfeasible);
  }
}

TEST(MpcStep, UnreachableTerminalSetIsInitiallyInfeasible) {
  // |z2| <= 0.33 over 29 steps moves z1 by at most 9.57 < 10.
  const MpcConfig cfg = ref_mpc(3.0, 2.67);
  EXPECT_FALSE(cfg.sets_empty());
  ControllerState state = ControllerState::initial(Vector{{10.0, 0.0}});
  EXPECT_THROW(mpc_step(Vector{{10.0, 0.0}}, state, cfg), Error);
}

TEST(MpcStep, NoiseFreeTubeCollapses) {
  const MpcConfig cfg = ref_mpc(3.0, 1.53);
  RngStream rng(1, {0});
  const RunResult run = run_closed_loop(cfg, Halfspaces::symmetric_bound(2, 1, 3.0), NoiseModel(Matrix::Zero(2, 1)),
                                        Vector{{10.0, 0.0}}, 40, rng, true);
  ASSERT_FALSE(run.initial_infeasible);
  const ClosedLoopTrace& tr = *run.trace;
  for (std::size_t k = 0; k < tr.x.size(); ++k) EXPECT_LE(max_abs(tr.x[k] - tr.z[k]), 1e-12);
  ControllerState state = ControllerState::initial(Vector{{10.0, 0.0}});
  for (std::size_t k = 0; k < tr.u.size(); ++k) {
    const StepResult step = mpc_step(tr.x[k], state, cfg);
    EXPECT_LE(max_abs(step.u - step.v0), 1e-12);
    EXPECT_LE(max_abs(step.u - tr.u[k]), 1e-12);
  }
  EXPECT_LE(max_abs(tr.x.back()), 1e-3);
}

TEST(MpcStep, RecursivelyFeasibleUnderNoise) {
  const MpcConfig cfg = ref_mpc(3.0, 1.53);
  const Halfspaces X = Halfspaces::symmetric_bound(2, 1, 3.0);
  for (std::uint64_t r = 0; r < 20; ++r) {
    RngStream rng(7, {r});
    const RunResult run = run_closed_loop(cfg, X, oracle::ref_noise(), Vector{{10.0, 0.0}}, 60, rng, true);
    ASSERT_FALSE(run.initial_infeasible);
    EXPECT_EQ(run.infeasible_steps, 0);
    EXPECT_EQ(run.fallback_steps, 0);
    for (std::size_t k = 1; k < run.trace->z.size(); ++k) EXPECT_TRUE(cfg.state_set().contains(run.trace->z[k], 1e-7));
    EXPECT_LE(run.max_identity_error, 1e-12);
  }
}

TEST(MpcStep, ShiftedSequenceIsAppliedOnFailure) {
  // The tail of the last optimum, padded with zero, is what a failed solve would apply.
  const MpcConfig cfg = ref_mpc(3.0, 1.53, 5);
  ControllerState state = ControllerState::initial(Vector{{2.0, 0.5}});
  const MpcQp prob = cfg.build_qp(state.z, state.z);
  const QpSolution s = solve_qp(prob.qp);
  mpc_step(Vector{{2.0, 0.5}}, state, cfg);
  ASSERT_EQ(state.shifted.size(), 5);
  EXPECT_LE(max_abs(state.shifted.head(4) - s.x.tail(4)), 1e-9);
  EXPECT_EQ(state.shifted(4), 0.0);
}

TEST(Region, OriginAndEmptySet) {
  EXPECT_TRUE(feasible_region_scan({Vector::Zero(2)}, ref_mpc(3.0, 1.53)).front());
  const std::vector<bool> none = feasible_region_scan({Vector::Zero(2), Vector{{1.0, 0.0}}}, ref_mpc(1.2, 1.53));
  EXPECT_FALSE(none[0]);
  EXPECT_FALSE(none[1]);
}

TEST(Region, DoubleIntegratorLooseBound) {
  const MpcConfig cfg = ref_mpc(3.0, 1.53);
  const std::vector<bool> f = feasible_region_scan({Vector{{10.0, 0.0}}, Vector{{1e6, 0.0}}}, cfg);
  EXPECT_TRUE(f[0]);
  EXPECT_FALSE(f[1]);
}

TEST(Region, AgreesWithSolver) {
  const MpcConfig cfg = ref_mpc(3.0, 1.8);
  for (double x1 = -20.0; x1 <= 20.0; x1 += 2.5) {
    for (double x2 = -3.0; x2 <= 3.0; x2 += 1.0) {
      const Vector x{{x1, x2}};
      const bool scan = feasible_region_scan({x}, cfg).front();
      const QpSolution s = solve_qp(cfg.build_qp(x, x).qp);
      EXPECT_EQ(scan, s.status == QpStatus::optimal) << x1 << ", " << x2;
    }
  }
}

TEST(Region, ShrinksWithRadius) {
  std::vector<Vector> grid;
  for (double x1 = -15.0; x1 <= 15.0; x1 += 1.0)
    for (double x2 = -3.0; x2 <= 3.0; x2 += 0.5) grid.push_back(Vector{{x1, x2}});
  std::vector<bool> prev(grid.size(), true);
  for (double eta : {1.53, 1.8, 2.14, 2.67}) {
    const std::vector<bool> f = feasible_region_scan(grid, ref_mpc(3.0, eta));
    for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_LE(f[i], prev[i]);
    prev = f;
  }
}
