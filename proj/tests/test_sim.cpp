#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "drsmpc/sim.hpp"
#include "oracles.hpp"

using namespace drsmpc;

namespace {

MpcConfig ref_mpc(double bound, double eta) {
  const LtiSystem sys(oracle::ref_A(), oracle::ref_B());
  return MpcConfig(sys, oracle::ref_gain(), Matrix::Identity(2, 2), Matrix::Identity(1, 1), 30,
                   tighten(Halfspaces::symmetric_bound(2, 1, bound), Vector::Constant(2, eta)));
}

Matrix sample_cov(const Matrix& rows) {
  const Matrix c = rows.rowwise() - rows.colwise().mean();
  return c.transpose() * c / static_cast<double>(rows.rows() - 1);
}

}  // namespace

TEST(Rng, StreamsAreReproducibleAndDistinct) {
  RngStream a(42, {3, 7}), b(42, {3, 7}), c(42, {3, 8}), d(43, {3, 7});
  bool differs_c = false, differs_d = false;
  for (int i = 0; i < 100; ++i) {
    const double va = a.normal();
    EXPECT_EQ(va, b.normal());
    differs_c = differs_c || va != c.normal();
    differs_d = differs_d || va != d.normal();
  }
  EXPECT_TRUE(differs_c);
  EXPECT_TRUE(differs_d);
}

TEST(ParallelFor, SameResultForAnyThreadCount) {
  std::vector<double> one(257), many(257);
  parallel_for(one.size(), [&](std::size_t i) { one[i] = RngStream(1, {i}).normal(); }, 1);
  parallel_for(many.size(), [&](std::size_t i) { many[i] = RngStream(1, {i}).normal(); }, 5);
  EXPECT_EQ(one, many);
}

TEST(ParallelFor, PropagatesExceptions) {
  EXPECT_THROW(parallel_for(10, [](std::size_t i) { if (i == 7) throw Error(Errc::DomainError, "x"); }, 3), Error);
}

TEST(SampleNoise, ZeroFactor) {
  RngStream rng(1, {0});
  const NoiseModel none(Matrix::Zero(2, 1));
  for (int i = 0; i < 10; ++i) EXPECT_EQ(sample_noise(none, rng), Vector::Zero(2));
}

TEST(SampleNoise, CovarianceOfManyDraws) {
  RngStream rng(42, {99});
  const NoiseModel noise = oracle::ref_noise();
  Matrix draws(1000000, 2);
  for (Eigen::Index i = 0; i < draws.rows(); ++i) draws.row(i) = sample_noise(noise, rng).transpose();
  const Matrix S = sample_cov(draws);
  EXPECT_LE((S - oracle::ref_sigma_w()).norm(), 0.02 * oracle::ref_sigma_w().norm());
}

TEST(ErrorSamples, StationaryVariance) {
  RngStream rng(42, {98});
  const SampleSet s = draw_error_samples(SamplingMode::stationary, 100000, oracle::ref_gain(), oracle::ref_noise(), rng);
  EXPECT_NEAR(sample_cov(s.samples())(1, 1), 10.0 / 7.0, 0.03 * 10.0 / 7.0);
}

TEST(ErrorSamples, RecursionVariance) {
  RngStream rng(42, {97});
  const SampleSet s = draw_error_samples(SamplingMode::recursion, 100000, oracle::ref_gain(), oracle::ref_noise(), rng);
  EXPECT_NEAR(sample_cov(s.samples())(1, 1), 10.0 / 7.0, 0.03 * 10.0 / 7.0);
}

TEST(ErrorSamples, RecursionWithoutNoiseIsZero) {
  RngStream rng(1, {0});
  const SampleSet s = draw_error_samples(SamplingMode::recursion, 50, oracle::ref_gain(), NoiseModel(Matrix::Zero(2, 1)), rng);
  EXPECT_EQ(s.samples(), Matrix::Zero(50, 2));
}

TEST(ErrorSamples, CountMustBePositive) {
  RngStream rng(1, {0});
  EXPECT_THROW(draw_error_samples(SamplingMode::stationary, 0, oracle::ref_gain(), oracle::ref_noise(), rng), Error);
}

TEST(ClosedLoop, QuietOrigin) {
  RngStream rng(1, {0});
  const RunResult r = run_closed_loop(ref_mpc(3.0, 1.53), Halfspaces::symmetric_bound(2, 1, 3.0),
                                      NoiseModel(Matrix::Zero(2, 1)), Vector::Zero(2), 20, rng);
  EXPECT_LE(r.avg_cost, 1e-14);
  EXPECT_EQ(r.violations, 0);
}

TEST(ClosedLoop, RegulatesFromFarAway) {
  RngStream rng(42, {kClosedLoopStream, 0});
  const RunResult r = run_closed_loop(ref_mpc(3.0, 1.53), Halfspaces::symmetric_bound(2, 1, 3.0),
                                      oracle::ref_noise(), Vector{{10.0, 0.0}}, 100, rng, true);
  ASSERT_FALSE(r.initial_infeasible);
  EXPECT_TRUE(std::isfinite(r.avg_cost));
  EXPECT_LE(r.max_identity_error, 1e-12);
  double tail = 0.0;
  for (std::size_t k = 80; k < r.trace->x.size(); ++k) tail = std::max(tail, std::abs(r.trace->x[k](0)));
  EXPECT_LT(tail, 5.0);
}

TEST(ClosedLoop, ViolationsCountStatesOutsideX) {
  RngStream rng(3, {1});
  const Halfspaces X = Halfspaces::symmetric_bound(2, 1, 3.0);
  const RunResult r = run_closed_loop(ref_mpc(3.0, 1.53), X, oracle::ref_noise(), Vector{{10.0, 0.0}}, 100, rng, true);
  long count = 0;
  for (std::size_t k = 1; k < r.trace->x.size(); ++k) count += X.contains(r.trace->x[k], 0.0) ? 0 : 1;
  EXPECT_EQ(r.violations, count);
  double cost = 0.0;
  for (std::size_t k = 0; k < r.trace->u.size(); ++k)
    cost += r.trace->x[k].squaredNorm() + r.trace->u[k].squaredNorm();
  EXPECT_NEAR(r.avg_cost, cost / 100.0, 1e-12 * cost);
}

TEST(MonteCarlo, QuietOriginHasZeroCost) {
  const SimMetrics m = monte_carlo(ref_mpc(3.0, 1.53), Halfspaces::symmetric_bound(2, 1, 3.0),
                                   NoiseModel(Matrix::Zero(2, 1)), Vector::Zero(2), 10, 1, 42);
  EXPECT_LE(m.avg_cost, 1e-14);
  EXPECT_EQ(m.violation_count, 0);
  EXPECT_EQ(m.satisfaction(), 1.0);
}

TEST(MonteCarlo, Deterministic) {
  const MpcConfig cfg = ref_mpc(3.0, 1.8);
  const Halfspaces X = Halfspaces::symmetric_bound(2, 1, 3.0);
  const SimMetrics a = monte_carlo(cfg, X, oracle::ref_noise(), Vector{{10.0, 0.0}}, 50, 20, 42);
  const SimMetrics b = monte_carlo(cfg, X, oracle::ref_noise(), Vector{{10.0, 0.0}}, 50, 20, 42);
  EXPECT_EQ(a.avg_cost, b.avg_cost);
  EXPECT_EQ(a.violation_count, b.violation_count);
}

TEST(MonteCarlo, InfeasibleStartIsCounted) {
  const SimMetrics m = monte_carlo(ref_mpc(1.2, 2.67), Halfspaces::symmetric_bound(2, 1, 1.2), oracle::ref_noise(),
                                   Vector{{10.0, 0.0}}, 10, 5, 42);
  EXPECT_EQ(m.infeasible_at_start, 5);
  EXPECT_EQ(m.total_state_samples, 0);
  EXPECT_TRUE(std::isnan(m.avg_cost));
}

TEST(MonteCarlo, TighterSetsCostMoreAndViolateLess) {
  const Halfspaces X = Halfspaces::symmetric_bound(2, 1, 3.0);
  double prev_cost = 0.0;
  long prev_viol = std::numeric_limits<long>::max();
  for (double eta : {1.53, 1.8, 2.14}) {
    const SimMetrics m = monte_carlo(ref_mpc(3.0, eta), X, oracle::ref_noise(), Vector{{10.0, 0.0}}, 100, 100, 42);
    ASSERT_EQ(m.infeasible_at_start, 0);
    EXPECT_GT(m.avg_cost, prev_cost) << eta;
    EXPECT_LE(m.violation_count, prev_viol) << eta;
    EXPECT_GE(m.satisfaction(), 0.8);
    prev_cost = m.avg_cost;
    prev_viol = m.violation_count;
  }
}

TEST(Quantile, TypeSeven) {
  EXPECT_DOUBLE_EQ(sample_quantile({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(sample_quantile({4, 1, 3, 2}, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(sample_quantile({4, 1, 3, 2}, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(sample_quantile({0, 10}, 0.05), 0.5);
  EXPECT_DOUBLE_EQ(sample_quantile({7}, 0.3), 7.0);
  EXPECT_THROW(sample_quantile({}, 0.5), Error);
}

namespace {

ReliabilitySetup small_setup() {
  ReliabilitySetup s;
  s.rows = Halfspaces::symmetric_bound(2, 1, 1.2);
  s.sample_sizes = {30, 100};
  s.thetas = {0.0, 0.05, 0.1, 0.2};
  s.resamples = 200;
  s.validation_size = 20000;
  return s;
}

}  // namespace

TEST(Reliability, CoverageMatchesDirectCount) {
  const ReliabilitySetup setup = small_setup();
  const ReliabilityResult res = reliability_experiment(setup, oracle::ref_gain(), oracle::ref_noise());
  ASSERT_EQ(res.rows.size(), 8u);
  // Recompute r for M = 30, theta = 0 from scratch with the same streams.
  RngStream vrng(setup.seed, {kValidationStream});
  const SampleSet val = draw_error_samples(setup.sampling, setup.validation_size, oracle::ref_gain(),
                                           oracle::ref_noise(), vrng);
  long hits = 0;
  for (long i = 0; i < setup.resamples; ++i) {
    RngStream rng(setup.seed, {kTrainingStream, 30, static_cast<std::uint64_t>(i)});
    const SampleSet tr = draw_error_samples(setup.sampling, 30, oracle::ref_gain(), oracle::ref_noise(), rng);
    std::vector<double> a(30);
    for (int j = 0; j < 30; ++j) a[static_cast<std::size_t>(j)] = std::abs(tr.samples()(j, 1));
    std::sort(a.begin(), a.end());
    const double eta = a[23];  // ceil(0.8 * 30) = 24th smallest
    EXPECT_EQ(res.etas[0](i, 0), eta);
    long inside = 0;
    for (Eigen::Index j = 0; j < val.count(); ++j) inside += std::abs(val.samples()(j, 1)) <= eta;
    hits += static_cast<double>(inside) / static_cast<double>(val.count()) >= 0.8;
  }
  EXPECT_DOUBLE_EQ(res.rows[0].r, static_cast<double>(hits) / static_cast<double>(setup.resamples));
}

TEST(Reliability, MediansAndRadiiNondecreasingInTheta) {
  const ReliabilityResult res = reliability_experiment(small_setup(), oracle::ref_gain(), oracle::ref_noise());
  for (const Matrix& etas : res.etas)
    for (Eigen::Index i = 0; i < etas.rows(); ++i)
      for (Eigen::Index t = 1; t < etas.cols(); ++t) EXPECT_GE(etas(i, t), etas(i, t - 1));
  for (std::size_t k = 1; k < res.rows.size(); ++k) {
    if (res.rows[k].M != res.rows[k - 1].M) continue;
    EXPECT_GE(res.rows[k].eta_q50, res.rows[k - 1].eta_q50);
    EXPECT_GE(res.rows[k].r, res.rows[k - 1].r);
  }
}

TEST(Reliability, MaxRadiusUsesLargestSample) {
  const ReliabilityResult res = reliability_experiment(small_setup(), oracle::ref_gain(), oracle::ref_noise());
  const ReliabilityRow& row = res.rows[3];
  ASSERT_EQ(row.theta, 0.2);
  EXPECT_TRUE(row.feasible);
  EXPECT_GT(row.r, 0.95);
}

TEST(Reliability, InfeasibleRadiusGivesNanRow) {
  ReliabilitySetup s = small_setup();
  s.thetas = {0.25};
  s.sample_sizes = {30};
  const ReliabilityResult res = reliability_experiment(s, oracle::ref_gain(), oracle::ref_noise());
  EXPECT_FALSE(res.rows[0].feasible);
  EXPECT_TRUE(std::isnan(res.rows[0].r));
}
