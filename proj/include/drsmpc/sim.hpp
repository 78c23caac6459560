#pragma once

/**
 * @file
 * @brief Seeded sampling, closed-loop Monte-Carlo and the Wasserstein-radius reliability study.
 *
 * All randomness flows through RngStream, keyed by (master seed, path). Every
 * replicate owns its stream and writes to its own result slot, so results are
 * bit-identical regardless of how many worker threads run.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <initializer_list>
#include <limits>
#include <optional>
#include <random>
#include <thread>
#include <vector>

#include "drsmpc/constraints.hpp"
#include "drsmpc/drprs.hpp"
#include "drsmpc/error.hpp"
#include "drsmpc/linalg.hpp"
#include "drsmpc/model.hpp"
#include "drsmpc/smpc.hpp"

namespace drsmpc {

/// Independent pseudo-random stream identified by a master seed and an index path.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                                     static_cast<std::uint32_t>(path.size())};
    for (std::uint64_t p : path) {
      words.push_back(static_cast<std::uint32_t>(p));
      words.push_back(static_cast<std::uint32_t>(p >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    engine_.seed(seq);
  }

  double normal() { return normal_(engine_); }

  Vector normal_vector(Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = normal();
    return v;
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// Stream path roots, one per purpose.
inline constexpr std::uint64_t kValidationStream = 1;
inline constexpr std::uint64_t kTrainingStream = 2;
inline constexpr std::uint64_t kClosedLoopStream = 3;
inline constexpr std::uint64_t kSampleStream = 4;

/// Runs body(i) for i in [0, count) on up to hardware_concurrency threads.
template <typename Body>
void parallel_for(std::size_t count, Body&& body, unsigned max_threads = 0) {
  unsigned threads = max_threads ? max_threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < count; i += threads) body(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline Vector sample_noise(const NoiseModel& noise, RngStream& rng) {
  return noise.factor() * rng.normal_vector(noise.rank());
}

enum class SamplingMode { stationary, recursion };

/**
 * @brief Error samples for PRS training/validation.
 *
 * stationary: i.i.d. draws from N(0, Sigma_e). recursion: e(k+1) = A_K e(k) + w(k)
 * from e = 0, 100 burn-in steps, then `count` successive states.
 */
inline SampleSet draw_error_samples(SamplingMode mode, Eigen::Index count, const TubeGain& gain,
                                    const NoiseModel& noise, RngStream& rng) {
  require(count >= 1, Errc::EmptySampleSet, "draw_error_samples: count must be >= 1");
  const Eigen::Index n = gain.AK().rows();
  Matrix out(count, n);
  if (mode == SamplingMode::stationary) {
    const Matrix factor = psd_factor(stationary_error_cov(gain, noise));
    for (Eigen::Index j = 0; j < count; ++j) out.row(j) = (factor * rng.normal_vector(factor.cols())).transpose();
  } else {
    Vector e = Vector::Zero(n);
    for (int k = 0; k < 100; ++k) e = gain.error_step(e, sample_noise(noise, rng));
    for (Eigen::Index j = 0; j < count; ++j) {
      e = gain.error_step(e, sample_noise(noise, rng));
      out.row(j) = e.transpose();
    }
  }
  return SampleSet(std::move(out));
}

struct ClosedLoopTrace {
  std::vector<Vector> x, z, u, w;  ///< x, z have T+1 entries; u, w have T
};

struct RunResult {
  bool initial_infeasible = false;
  double avg_cost = 0.0;       ///< T^-1 sum_{k<T} x'Qx + u'Ru
  long violations = 0;         ///< #{k in 1..T : x(k) not in X}
  long fallback_steps = 0;     ///< steps that applied the shifted sequence
  long infeasible_steps = 0;   ///< steps where the QP reported primal infeasibility
  double max_identity_error = 0.0;  ///< max_k ||e(k+1) - A_K e(k) - w(k)||_inf
  std::optional<ClosedLoopTrace> trace;
};

inline RunResult run_closed_loop(const MpcConfig& cfg, const Halfspaces& X, const NoiseModel& noise,
                                 const Vector& x0, int T, RngStream& rng, bool keep_trace = false) {
  require(T >= 1, Errc::DomainError, "run_closed_loop: T must be >= 1");
  require(X.dim() == cfg.system().nx() && x0.size() == cfg.system().nx(), Errc::DimensionMismatch,
          "run_closed_loop: dimension mismatch");
  RunResult res;
  if (keep_trace) res.trace.emplace();

  const LtiSystem& sys = cfg.system();
  const Matrix& AK = cfg.gain().AK();
  ControllerState state = ControllerState::initial(x0);
  Vector x = x0;
  double cost = 0.0;
  if (keep_trace) {
    res.trace->x.push_back(x);
    res.trace->z.push_back(state.z);
  }
  for (int k = 0; k < T; ++k) {
    const Vector e = x - state.z;
    StepResult step;
    try {
      step = mpc_step(x, state, cfg);
    } catch (const Error& err) {
      if (err.code() != Errc::InitialInfeasible) throw;
      res.initial_infeasible = true;
      res.avg_cost = std::numeric_limits<double>::quiet_NaN();
      return res;
    }
    if (step.used_fallback) ++res.fallback_steps;
    if (step.status == QpStatus::primal_infeasible) ++res.infeasible_steps;

    cost += x.dot(cfg.Q() * x) + step.u.dot(cfg.R() * step.u);
    const Vector w = sample_noise(noise, rng);
    x = sys.A() * x + sys.B() * step.u + w;
    const Vector e_next = x - state.z;
    res.max_identity_error = std::max(res.max_identity_error, max_abs(e_next - AK * e - w));
    if (!X.contains(x, 0.0)) ++res.violations;
    if (keep_trace) {
      res.trace->x.push_back(x);
      res.trace->z.push_back(state.z);
      res.trace->u.push_back(step.u);
      res.trace->w.push_back(w);
    }
  }
  res.avg_cost = cost / T;
  return res;
}

struct SimMetrics {
  double avg_cost = 0.0;  ///< Av[J]: mean over feasible runs of the per-run time-averaged cost
  long violation_count = 0;
  long total_state_samples = 0;
  long infeasible_at_start = 0;
  long runs = 0;
  long steps = 0;
  long fallback_steps = 0;
  long infeasible_steps = 0;
  double max_identity_error = 0.0;

  /// Fraction of recorded states inside X; NaN when nothing was recorded.
  double satisfaction() const {
    if (total_state_samples == 0) return std::numeric_limits<double>::quiet_NaN();
    return 1.0 - static_cast<double>(violation_count) / static_cast<double>(total_state_samples);
  }
};

/// N_s closed-loop runs; run r draws its noise from stream (seed, {closed-loop, r}).
inline SimMetrics monte_carlo(const MpcConfig& cfg, const Halfspaces& X, const NoiseModel& noise, const Vector& x0,
                              int T, long runs, std::uint64_t seed) {
  require(runs >= 1, Errc::DomainError, "monte_carlo: need at least one run");
  std::vector<RunResult> results(static_cast<std::size_t>(runs));
  parallel_for(results.size(), [&](std::size_t r) {
    RngStream rng(seed, {kClosedLoopStream, r});
    results[r] = run_closed_loop(cfg, X, noise, x0, T, rng);
  });

  SimMetrics m;
  m.runs = runs;
  m.steps = T;
  long feasible_runs = 0;
  double cost_sum = 0.0;
  for (const RunResult& r : results) {
    if (r.initial_infeasible) {
      ++m.infeasible_at_start;
      continue;
    }
    ++feasible_runs;
    cost_sum += r.avg_cost;
    m.violation_count += r.violations;
    m.total_state_samples += T;
    m.fallback_steps += r.fallback_steps;
    m.infeasible_steps += r.infeasible_steps;
    m.max_identity_error = std::max(m.max_identity_error, r.max_identity_error);
  }
  m.avg_cost = feasible_runs > 0 ? cost_sum / static_cast<double>(feasible_runs)
                                 : std::numeric_limits<double>::quiet_NaN();
  return m;
}

/// Linear-interpolation (type 7) quantile of an unsorted sample.
inline double sample_quantile(std::vector<double> values, double level) {
  require(!values.empty(), Errc::EmptySampleSet, "sample_quantile: empty sample");
  std::sort(values.begin(), values.end());
  const double pos = level * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

struct ReliabilitySetup {
  Halfspaces rows;               ///< constraint rows the PRS is built on (e.g. +/- e_2)
  bool symmetric_pairs = true;
  double p = 0.8;
  double lambda_min = 1.0;
  std::vector<Eigen::Index> sample_sizes{30, 100, 400};
  std::vector<double> thetas{0.0};
  long resamples = 1000;         ///< N_mc
  Eigen::Index validation_size = 100000;  ///< N_v
  SamplingMode sampling = SamplingMode::stationary;
  std::uint64_t seed = 42;
};

struct ReliabilityRow {
  Eigen::Index M = 0;
  double theta = 0.0;
  double r = std::numeric_limits<double>::quiet_NaN();
  double eta_q05 = std::numeric_limits<double>::quiet_NaN();
  double eta_q50 = std::numeric_limits<double>::quiet_NaN();
  double eta_q95 = std::numeric_limits<double>::quiet_NaN();
  bool feasible = true;
};

struct ReliabilityResult {
  std::vector<ReliabilityRow> rows;  ///< ordered by sample size, then theta
  /// etas[m](i, t): radius of the first row group for resample i and theta index t.
  std::vector<Matrix> etas;
};

/**
 * @brief Out-of-sample reliability r(theta) of the DR-PRS for each training size M.
 *
 * One validation set of N_v errors is drawn; for each of N_mc training sets the
 * PRS radii are computed for every theta, the empirical coverage p~ of the PRS
 * on the validation set is evaluated, and r(theta) = mean 1{p~ >= p}.
 */
inline ReliabilityResult reliability_experiment(const ReliabilitySetup& setup, const TubeGain& gain,
                                                const NoiseModel& noise) {
  require(setup.resamples >= 1 && setup.validation_size >= 1, Errc::DomainError,
          "reliability_experiment: N_mc and N_v must be >= 1");
  require(setup.p > 0.0 && setup.p < 1.0, Errc::DomainError, "reliability_experiment: p must lie in (0,1)");
  require(!setup.thetas.empty() && !setup.sample_sizes.empty(), Errc::DomainError,
          "reliability_experiment: empty M or theta list");

  const std::vector<RowGroup> groups = row_groups(setup.rows.H(), setup.symmetric_pairs);
  const Vector eps = detail::resolve_allocation(groups.size(), setup.p, std::nullopt);

  RngStream validation_rng(setup.seed, {kValidationStream});
  const SampleSet validation =
      draw_error_samples(setup.sampling, setup.validation_size, gain, noise, validation_rng);
  std::vector<std::vector<double>> validation_losses;
  for (const RowGroup& g : groups) {
    const Vector l = group_losses(validation, g);
    validation_losses.emplace_back(l.data(), l.data() + l.size());
  }
  std::vector<double> sorted_single;
  if (groups.size() == 1) {
    sorted_single = validation_losses.front();
    std::sort(sorted_single.begin(), sorted_single.end());
  }
  const auto coverage = [&](const std::vector<double>& radii) {
    if (groups.size() == 1) {
      const auto inside = std::upper_bound(sorted_single.begin(), sorted_single.end(), radii.front()) -
                          sorted_single.begin();
      return static_cast<double>(inside) / static_cast<double>(sorted_single.size());
    }
    long inside = 0;
    for (std::size_t j = 0; j < validation_losses.front().size(); ++j) {
      bool ok = true;
      for (std::size_t g = 0; g < groups.size() && ok; ++g) ok = validation_losses[g][j] <= radii[g];
      inside += ok ? 1 : 0;
    }
    return static_cast<double>(inside) / static_cast<double>(validation_losses.front().size());
  };

  const std::size_t n_theta = setup.thetas.size();
  ReliabilityResult out;
  for (Eigen::Index M : setup.sample_sizes) {
    require(M >= 1, Errc::EmptySampleSet, "reliability_experiment: M must be >= 1");
    const auto n_mc = static_cast<std::size_t>(setup.resamples);
    Matrix etas(static_cast<Eigen::Index>(n_mc), static_cast<Eigen::Index>(n_theta));
    std::vector<std::vector<char>> covered(n_mc, std::vector<char>(n_theta, 0));

    parallel_for(n_mc, [&](std::size_t i) {
      RngStream rng(setup.seed, {kTrainingStream, static_cast<std::uint64_t>(M), i});
      const SampleSet training = draw_error_samples(setup.sampling, M, gain, noise, rng);
      std::vector<SortedLosses> losses;
      for (const RowGroup& g : groups) losses.emplace_back(group_losses(training, g));
      std::vector<double> radii(groups.size());
      for (std::size_t t = 0; t < n_theta; ++t) {
        bool feasible = true;
        for (std::size_t g = 0; g < groups.size(); ++g) {
          const RiskResult r = losses[g].worst_case(
              {eps(static_cast<Eigen::Index>(g)), setup.thetas[t], setup.lambda_min, DrMode::var_byproduct});
          feasible = feasible && r.feasible;
          radii[g] = r.eta;
        }
        etas(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) =
            feasible ? radii.front() : std::numeric_limits<double>::quiet_NaN();
        covered[i][t] = feasible && coverage(radii) >= setup.p ? 1 : 0;
      }
    });

    for (std::size_t t = 0; t < n_theta; ++t) {
      ReliabilityRow row;
      row.M = M;
      row.theta = setup.thetas[t];
      const Vector col = etas.col(static_cast<Eigen::Index>(t));
      row.feasible = col.allFinite();
      if (row.feasible) {
        long hits = 0;
        for (std::size_t i = 0; i < n_mc; ++i) hits += covered[i][t];
        row.r = static_cast<double>(hits) / static_cast<double>(n_mc);
        const std::vector<double> values(col.data(), col.data() + col.size());
        row.eta_q05 = sample_quantile(values, 0.05);
        row.eta_q50 = sample_quantile(values, 0.50);
        row.eta_q95 = sample_quantile(values, 0.95);
      }
      out.rows.push_back(row);
    }
    out.etas.push_back(std::move(etas));
  }
  return out;
}

}  // namespace drsmpc
