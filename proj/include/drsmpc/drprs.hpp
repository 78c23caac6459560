#pragma once

/**
 * @file
 * @brief Empirical and Wasserstein-robust VaR/CVaR of scalar losses, and DR-PRS synthesis.
 *
 * The worst-case CVaR program over a 1-Wasserstein ball of radius theta around
 * the empirical distribution of M losses a_j reads, with the dual multiplier
 * held at lambda = lambda_min,
 *
 *     min_tau  tau + (theta*lambda + g(tau)) / eps
 *     s.t.     theta*lambda + g(tau) <= eps,      g(tau) = (1/M) sum_j (a_j - tau)^+.
 *
 * At theta = 0 the program is the plain empirical CVaR (no budget row).
 *
 * g is convex, piecewise linear and nonincreasing, so the program is solved
 * exactly on the sorted losses: the unconstrained left minimizer is the order
 * statistic a_(ceil((1-eps)M)), and the budget constraint is the half-line
 * tau >= tau_c obtained by inverting g on the segment where it crosses the budget.
 */

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "drsmpc/constraints.hpp"
#include "drsmpc/error.hpp"
#include "drsmpc/linalg.hpp"

namespace drsmpc {

enum class DrMode { var_byproduct, cvar };

struct DrConfig {
  double epsilon = 0.2;
  double theta = 0.0;
  double lambda_min = 1.0;
  DrMode mode = DrMode::var_byproduct;

  void validate() const {
    require(epsilon > 0.0 && epsilon < 1.0, Errc::DomainError, "DrConfig: epsilon must lie in (0,1)");
    require(theta >= 0.0 && std::isfinite(theta), Errc::DomainError, "DrConfig: theta must be >= 0");
    require(lambda_min > 0.0 && std::isfinite(lambda_min), Errc::DomainError,
            "DrConfig: lambda_min must be > 0");
  }
};

struct RiskResult {
  double eta = 0.0;     ///< VaR estimate (optimal tau)
  double cvar = 0.0;    ///< optimal value of the CVaR program
  double lambda = 0.0;  ///< multiplier used
  bool feasible = true;

  /// The radius a PRS built in `mode` uses.
  double radius(DrMode mode) const { return mode == DrMode::cvar ? cvar : eta; }
};

/// Index k (1-based) of the order statistic a_(ceil((1-eps) M)).
inline std::size_t var_order_index(double epsilon, std::size_t M) {
  const double raw = std::ceil((1.0 - epsilon) * static_cast<double>(M) - 1e-9);
  return static_cast<std::size_t>(std::clamp(raw, 1.0, static_cast<double>(M)));
}

/// Sorted loss sample with suffix sums; answers VaR/CVaR queries for many (eps, theta).
class SortedLosses {
 public:
  explicit SortedLosses(std::vector<double> losses) : a_(std::move(losses)) {
    require(!a_.empty(), Errc::EmptySampleSet, "loss sample is empty");
    for (double v : a_) require(std::isfinite(v), Errc::DomainError, "loss sample has non-finite entries");
    std::sort(a_.begin(), a_.end());
    suffix_.assign(a_.size() + 1, 0.0);
    for (std::size_t i = a_.size(); i-- > 0;) suffix_[i] = suffix_[i + 1] + a_[i];
  }

  explicit SortedLosses(const Vector& losses)
      : SortedLosses(std::vector<double>(losses.data(), losses.data() + losses.size())) {}

  std::size_t size() const { return a_.size(); }
  const std::vector<double>& sorted() const { return a_; }
  double max() const { return a_.back(); }

  /// Mean excess g(tau) = (1/M) sum_j (a_j - tau)^+.
  double mean_excess(double tau) const {
    const auto first_above = std::upper_bound(a_.begin(), a_.end(), tau) - a_.begin();
    const auto idx = static_cast<std::size_t>(first_above);
    const double count = static_cast<double>(a_.size() - idx);
    return (suffix_[idx] - count * tau) / static_cast<double>(a_.size());
  }

  double empirical_var(double epsilon) const { return a_[var_order_index(epsilon, a_.size()) - 1]; }

  /// Smallest tau with g(tau) <= budget (budget >= 0).
  double budget_threshold(double budget) const {
    const std::size_t M = a_.size();
    if (budget <= 0.0) return a_.back();
    const double m = static_cast<double>(M);
    for (std::size_t i = 0; i < M; ++i) {
      const double g_i = (suffix_[i + 1] - static_cast<double>(M - 1 - i) * a_[i]) / m;
      if (g_i > budget) continue;
      if (g_i == budget) return a_[i];
      // g(tau) = (suffix_[i] - (M - i) tau) / M on [a_(i-1), a_i].
      double tau = (suffix_[i] - m * budget) / static_cast<double>(M - i);
      tau = std::min(tau, a_[i]);
      if (i > 0) tau = std::max(tau, a_[i - 1]);
      return tau;
    }
    return a_.back();
  }

  RiskResult empirical_cvar(double epsilon) const {
    require(epsilon > 0.0 && epsilon < 1.0, Errc::DomainError, "empirical_cvar: epsilon must lie in (0,1)");
    RiskResult r;
    r.eta = empirical_var(epsilon);
    r.cvar = r.eta + (0.0 + mean_excess(r.eta)) / epsilon;
    r.lambda = 0.0;
    return r;
  }

  /// Exact solution of the worst-case CVaR program; feasible == false iff theta*lambda_min > eps.
  RiskResult worst_case(const DrConfig& cfg) const {
    cfg.validate();
    RiskResult r;
    r.lambda = cfg.lambda_min;
    const double penalty = cfg.theta * cfg.lambda_min;
    // theta = eps is the max-sample limit; the slack absorbs rounding in eps = 1 - p.
    if (penalty > cfg.epsilon * (1.0 + 1e-12)) {
      r.feasible = false;
      r.eta = r.cvar = std::numeric_limits<double>::quiet_NaN();
      return r;
    }
    // A zero-radius ball holds only the empirical distribution, whose CVaR needs no
    // budget; the budget row is a restriction of the lambda-dual for theta > 0 only.
    if (cfg.theta == 0.0) {
      r = empirical_cvar(cfg.epsilon);
      r.lambda = cfg.lambda_min;
      return r;
    }
    const double q = empirical_var(cfg.epsilon);
    const double tau_c = budget_threshold(std::max(cfg.epsilon - penalty, 0.0));
    r.eta = std::max(q, tau_c);
    r.cvar = r.eta + (penalty + mean_excess(r.eta)) / cfg.epsilon;
    return r;
  }

 private:
  std::vector<double> a_;
  std::vector<double> suffix_;
};

/// Rockafellar-Uryasev CVaR of the empirical distribution; eta is the left argmin.
inline RiskResult empirical_cvar(const Vector& losses, double epsilon) {
  return SortedLosses(losses).empirical_cvar(epsilon);
}

/// Worst-case CVaR over the Wasserstein ball; throws InfeasibleRadius when theta*lambda_min > eps.
inline RiskResult wc_cvar_program(const Vector& losses, const DrConfig& cfg) {
  RiskResult r = SortedLosses(losses).worst_case(cfg);
  if (!r.feasible) {
    throw Error(Errc::InfeasibleRadius, "theta * lambda_min exceeds epsilon; budget constraint unsatisfiable");
  }
  return r;
}

/// Empirical CVaR + theta/eps (the lambda = 1 dual without the budget constraint).
inline double dr_cvar_closed_form(const Vector& losses, double epsilon, double theta) {
  return empirical_cvar(losses, epsilon).cvar + theta / epsilon;
}

/// M x n_x matrix of error samples, one per row.
class SampleSet {
 public:
  explicit SampleSet(Matrix samples) : e_(std::move(samples)) {
    require(e_.rows() >= 1, Errc::EmptySampleSet, "SampleSet needs at least one sample");
    require(all_finite(e_), Errc::DomainError, "SampleSet: non-finite entries");
  }

  const Matrix& samples() const { return e_; }
  Eigen::Index count() const { return e_.rows(); }
  Eigen::Index dim() const { return e_.cols(); }

 private:
  Matrix e_;
};

enum class PrsKind { box, halfspace };

struct DrPrsResult {
  Vector etas;       ///< one radius per coordinate (box) or per row (halfspace)
  Vector epsilons;   ///< risk allocated to each entry of etas
  double theta = 0.0;
  double p = 0.0;
  PrsKind kind = PrsKind::box;
};

/// Rows that share one loss: a single row (loss H_i e) or a +/- pair (loss |H_i e|).
struct RowGroup {
  std::vector<Eigen::Index> rows;
  Vector direction;
  bool two_sided = false;
};

inline std::vector<RowGroup> row_groups(const Matrix& H, bool symmetric_pairs) {
  std::vector<RowGroup> groups;
  std::vector<bool> used(static_cast<std::size_t>(H.rows()), false);
  for (Eigen::Index i = 0; i < H.rows(); ++i) {
    if (used[static_cast<std::size_t>(i)]) continue;
    used[static_cast<std::size_t>(i)] = true;
    RowGroup g{{i}, H.row(i).transpose(), false};
    if (symmetric_pairs) {
      const double scale = 1e-12 * std::max(1.0, max_abs(H.row(i)));
      for (Eigen::Index j = i + 1; j < H.rows(); ++j) {
        if (!used[static_cast<std::size_t>(j)] && max_abs(H.row(j) + H.row(i)) <= scale) {
          used[static_cast<std::size_t>(j)] = true;
          g.rows.push_back(j);
          g.two_sided = true;
          break;
        }
      }
    }
    groups.push_back(std::move(g));
  }
  return groups;
}

inline Vector group_losses(const SampleSet& samples, const RowGroup& group) {
  require(group.direction.size() == samples.dim(), Errc::DimensionMismatch,
          "group_losses: row dimension does not match samples");
  Vector losses = samples.samples() * group.direction;
  if (group.two_sided) losses = losses.cwiseAbs();
  return losses;
}

namespace detail {

inline Vector resolve_allocation(std::size_t entries, double p, const std::optional<Vector>& allocation) {
  require(p > 0.0 && p < 1.0, Errc::DomainError, "PRS: p must lie in (0,1)");
  require(entries > 0, Errc::AllocationError, "PRS: nothing to allocate risk to");
  Vector eps;
  if (allocation) {
    require(static_cast<std::size_t>(allocation->size()) == entries, Errc::AllocationError,
            "PRS: allocation length does not match the number of directions");
    eps = *allocation;
  } else {
    eps = Vector::Constant(static_cast<Eigen::Index>(entries), (1.0 - p) / static_cast<double>(entries));
  }
  for (Eigen::Index i = 0; i < eps.size(); ++i) {
    require(eps(i) > 0.0 && eps(i) < 1.0, Errc::AllocationError, "PRS: each epsilon must lie in (0,1)");
  }
  require(eps.sum() <= (1.0 - p) + 1e-12, Errc::AllocationError,
          "PRS: allocated risks exceed 1 - p (union bound)");
  return eps;
}

}  // namespace detail

struct PrsOptions {
  double p = 0.8;
  double theta = 0.0;
  double lambda_min = 1.0;
  DrMode mode = DrMode::var_byproduct;
};

/**
 * @brief Box DR-PRS {|e_i| <= eta_i} over the listed coordinates.
 *
 * Coordinates not listed get an infinite radius and zero risk. The default
 * allocation splits 1 - p uniformly over the listed coordinates.
 */
inline DrPrsResult synthesize_box_prs(const SampleSet& samples, const PrsOptions& opt,
                                      std::vector<Eigen::Index> coords = {},
                                      const std::optional<Vector>& allocation = std::nullopt) {
  const Eigen::Index n = samples.dim();
  if (coords.empty()) {
    for (Eigen::Index i = 0; i < n; ++i) coords.push_back(i);
  }
  for (Eigen::Index c : coords) require(c >= 0 && c < n, Errc::DimensionMismatch, "box PRS: bad coordinate");
  const Vector eps = detail::resolve_allocation(coords.size(), opt.p, allocation);

  DrPrsResult out;
  out.kind = PrsKind::box;
  out.theta = opt.theta;
  out.p = opt.p;
  out.etas = Vector::Constant(n, std::numeric_limits<double>::infinity());
  out.epsilons = Vector::Zero(n);
  for (std::size_t k = 0; k < coords.size(); ++k) {
    const Eigen::Index c = coords[k];
    const Vector losses = samples.samples().col(c).cwiseAbs();
    const RiskResult r = wc_cvar_program(losses, {eps(static_cast<Eigen::Index>(k)), opt.theta, opt.lambda_min, opt.mode});
    out.etas(c) = r.radius(opt.mode);
    out.epsilons(c) = eps(static_cast<Eigen::Index>(k));
  }
  return out;
}

/**
 * @brief Halfspace DR-PRS {H e <= eta} built on the constraint rows.
 *
 * Risk is allocated per row group (union bound); with symmetric_pairs a row pair
 * +/-H_i shares the two-sided loss |H_i e| and both rows receive the same radius.
 */
inline DrPrsResult synthesize_halfspace_prs(const SampleSet& samples, const Halfspaces& rows,
                                            const PrsOptions& opt, bool symmetric_pairs = true,
                                            const std::optional<Vector>& allocation = std::nullopt) {
  require(rows.dim() == samples.dim(), Errc::DimensionMismatch, "halfspace PRS: row dimension mismatch");
  const std::vector<RowGroup> groups = row_groups(rows.H(), symmetric_pairs);
  const Vector eps = detail::resolve_allocation(groups.size(), opt.p, allocation);

  DrPrsResult out;
  out.kind = PrsKind::halfspace;
  out.theta = opt.theta;
  out.p = opt.p;
  out.etas = Vector::Zero(rows.rows());
  out.epsilons = Vector::Zero(rows.rows());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double eps_g = eps(static_cast<Eigen::Index>(g));
    const RiskResult r =
        wc_cvar_program(group_losses(samples, groups[g]), {eps_g, opt.theta, opt.lambda_min, opt.mode});
    for (Eigen::Index row : groups[g].rows) {
      out.etas(row) = r.radius(opt.mode);
      out.epsilons(row) = eps_g;
    }
  }
  return out;
}

inline TightenedSet tighten_with_box(const Halfspaces& X, const DrPrsResult& box) {
  require(box.kind == PrsKind::box, Errc::DomainError, "tighten_with_box expects a box PRS");
  return tighten_with_box(X, box.etas);
}

}  // namespace drsmpc
