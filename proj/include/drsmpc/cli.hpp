#pragma once

/**
 * @file
 * @brief The `drsmpc` command line: prs-true, dr-prs, reliability, simulate, region.
 *
 * Exit codes: 0 success, 2 infeasible or empty-set result, 3 configuration error,
 * 1 anything else.
 */

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "drsmpc/config.hpp"
#include "drsmpc/constraints.hpp"
#include "drsmpc/drprs.hpp"
#include "drsmpc/model.hpp"
#include "drsmpc/sim.hpp"
#include "drsmpc/smpc.hpp"

namespace drsmpc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInfeasible = 2;
inline constexpr int kExitConfig = 3;

inline constexpr const char* kPrsHeader = "row,epsilon,eta";
inline constexpr const char* kReliabilityHeader = "M,theta,r,eta_q05,eta_q50,eta_q95";
inline constexpr const char* kSimulateHeader = "eta,runs,steps,avg_cost,violations,total_samples,infeasible_runs";
inline constexpr const char* kRegionHeader = "x1,x2,feasible";

inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

struct Options {
  std::string command;
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<double> theta;
  std::optional<double> eta;
  std::optional<std::string> samples;
  std::optional<std::string> mode;
};

/// Plant, gain and noise assembled from a configuration.
struct Plant {
  LtiSystem sys;
  TubeGain gain;
  NoiseModel noise;
  Halfspaces X;

  static Plant from(const ExperimentConfig& cfg) {
    LtiSystem sys(cfg.A, cfg.B);
    Matrix K = cfg.K ? *cfg.K : lqr_gain(cfg.A, cfg.B, cfg.Q, cfg.R);
    TubeGain gain(sys, std::move(K));
    return {sys, std::move(gain), NoiseModel::from_covariance(cfg.sigma_w), Halfspaces(cfg.H, cfg.h)};
  }
};

namespace detail {

class Output {
 public:
  Output(const std::optional<std::string>& path, std::ostream& stdout_stream, std::ostream& stderr_stream)
      : summary_(path ? stdout_stream : stderr_stream) {
    if (path) {
      file_.open(*path, std::ios::binary);
      if (!file_) throw Error(Errc::ConfigError, "cannot write " + *path);
      csv_ = &file_;
    } else {
      csv_ = &stdout_stream;
    }
  }

  std::ostream& csv() { return *csv_; }
  std::ostream& summary() { return summary_; }

 private:
  std::ofstream file_;
  std::ostream* csv_;
  std::ostream& summary_;
};

inline PrsOptions prs_options(const ExperimentConfig& cfg) {
  return {cfg.p_x, cfg.theta, cfg.lambda_min, cfg.mode};
}

inline SampleSet training_samples(const ExperimentConfig& cfg, const Plant& plant, const Options& opt) {
  if (opt.samples) return load_samples(*opt.samples, cfg.nx());
  RngStream rng(cfg.seed, {kSampleStream});
  return draw_error_samples(cfg.sampling, cfg.M, plant.gain, plant.noise, rng);
}

inline void write_prs(std::ostream& csv, const DrPrsResult& prs) {
  csv << kPrsHeader << '\n';
  for (Eigen::Index i = 0; i < prs.etas.size(); ++i)
    csv << i + 1 << ',' << num(prs.epsilons(i)) << ',' << num(prs.etas(i)) << '\n';
}

/// State-PRS radii per constraint row: --eta, then `eta` in the config, else synthesized.
inline Vector state_radii(const ExperimentConfig& cfg, const Plant& plant, const Options& opt) {
  if (opt.eta) return Vector::Constant(cfg.H.rows(), *opt.eta);
  if (cfg.eta) return Vector::Constant(cfg.H.rows(), *cfg.eta);
  return synthesize_halfspace_prs(training_samples(cfg, plant, opt), plant.X, prs_options(cfg)).etas;
}

inline MpcConfig mpc_config(const ExperimentConfig& cfg, const Plant& plant, const Vector& etas) {
  std::optional<TightenedSet> V;
  if (cfg.L) {
    V = tighten(Halfspaces(*cfg.L, *cfg.l), Vector::Constant(cfg.L->rows(), cfg.eta_u.value_or(0.0)));
  }
  return MpcConfig(plant.sys, plant.gain, cfg.Q, cfg.R, cfg.horizon, tighten(plant.X, etas), V);
}

inline int prs_true(const ExperimentConfig& cfg, const Options& opt, Output& out) {
  const Plant plant = Plant::from(cfg);
  const Matrix sigma_e = stationary_error_cov(plant.gain, plant.noise);
  const std::vector<RowGroup> groups = row_groups(cfg.H, true);
  const double eps = (1.0 - cfg.p_x) / static_cast<double>(groups.size());

  DrPrsResult prs;
  prs.kind = PrsKind::halfspace;
  prs.p = cfg.p_x;
  prs.etas = Vector::Zero(cfg.H.rows());
  prs.epsilons = Vector::Zero(cfg.H.rows());
  std::ostringstream line;
  line << std::setprecision(7);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const Vector& d = groups[g].direction;
    const double sd = std::sqrt(std::max(d.dot(sigma_e * d), 0.0));
    const double level = groups[g].two_sided ? 1.0 - 0.5 * eps : 1.0 - eps;
    const double eta = sd * std_normal_quantile(level);
    for (Eigen::Index r : groups[g].rows) {
      prs.etas(r) = eta;
      prs.epsilons(r) = eps;
    }
    Eigen::Index axis = -1;
    if ((d.array() != 0.0).count() == 1) (d.array() != 0.0).maxCoeff(&axis);
    if (g > 0) line << "; ";
    if (axis >= 0 && std::abs(d(axis)) == 1.0) {
      line << "Sigma_e[" << axis + 1 << ',' << axis + 1 << "] = " << sigma_e(axis, axis);
    } else {
      line << "row " << groups[g].rows.front() + 1 << " variance = " << sd * sd;
    }
    line << ", eta* = " << eta;
  }
  (void)opt;
  write_prs(out.csv(), prs);
  out.summary() << "prs-true: " << line.str() << '\n';
  return kExitOk;
}

inline int dr_prs(const ExperimentConfig& cfg, const Options& opt, Output& out) {
  const Plant plant = Plant::from(cfg);
  const SampleSet samples = training_samples(cfg, plant, opt);
  const DrPrsResult prs = synthesize_halfspace_prs(samples, plant.X, prs_options(cfg));
  write_prs(out.csv(), prs);
  out.summary() << "dr-prs: " << samples.count() << " samples, theta = " << cfg.theta
                << ", max eta = " << num(prs.etas.maxCoeff()) << '\n';
  return kExitOk;
}

inline int reliability(const ExperimentConfig& cfg, const Options& opt, Output& out) {
  (void)opt;
  const Plant plant = Plant::from(cfg);
  ReliabilitySetup setup;
  setup.rows = plant.X;
  setup.p = cfg.p_x;
  setup.lambda_min = cfg.lambda_min;
  setup.sample_sizes.assign(cfg.reliability_M.begin(), cfg.reliability_M.end());
  setup.thetas = cfg.reliability_theta;
  setup.resamples = cfg.N_mc;
  setup.validation_size = cfg.N_v;
  setup.sampling = cfg.sampling;
  setup.seed = cfg.seed;
  const ReliabilityResult result = reliability_experiment(setup, plant.gain, plant.noise);

  out.csv() << kReliabilityHeader << '\n';
  for (const ReliabilityRow& r : result.rows) {
    out.csv() << r.M << ',' << num(r.theta) << ',' << num(r.r) << ',' << num(r.eta_q05) << ','
              << num(r.eta_q50) << ',' << num(r.eta_q95) << '\n';
  }
  out.summary() << "reliability: " << result.rows.size() << " rows";
  for (const ReliabilityRow& r : result.rows)
    if (r.theta == cfg.reliability_theta.front()) out.summary() << ", r(M=" << r.M << ") = " << num(r.r);
  out.summary() << " at theta = " << num(cfg.reliability_theta.front()) << '\n';
  return kExitOk;
}

inline int simulate(const ExperimentConfig& cfg, const Options& opt, Output& out) {
  const Plant plant = Plant::from(cfg);
  const Vector etas = state_radii(cfg, plant, opt);
  const MpcConfig mpc = mpc_config(cfg, plant, etas);
  const SimMetrics m = monte_carlo(mpc, plant.X, plant.noise, cfg.x0, cfg.T, cfg.N_s, cfg.seed);

  out.csv() << kSimulateHeader << '\n';
  out.csv() << num(etas.maxCoeff()) << ',' << m.runs << ',' << m.steps << ',' << num(m.avg_cost) << ','
            << m.violation_count << ',' << m.total_state_samples << ',' << m.infeasible_at_start << '\n';
  if (m.infeasible_at_start > 0) {
    out.summary() << "simulate: eta = " << num(etas.maxCoeff()) << ": SMPC infeasible at the initial state ("
                  << m.infeasible_at_start << " of " << m.runs << " runs)\n";
    return kExitInfeasible;
  }
  out.summary() << "simulate: eta = " << num(etas.maxCoeff()) << ", Av[J] = " << num(m.avg_cost)
                << ", violations = " << m.violation_count << " / " << m.total_state_samples << '\n';
  return kExitOk;
}

inline int region(const ExperimentConfig& cfg, const Options& opt, Output& out) {
  if (cfg.nx() != 2) throw Error(Errc::ConfigError, "region needs a two-dimensional state");
  const Plant plant = Plant::from(cfg);
  const Vector etas = state_radii(cfg, plant, opt);
  const MpcConfig mpc = mpc_config(cfg, plant, etas);

  std::vector<Vector> grid;
  for (int i = 0; i < cfg.region_x1.count; ++i)
    for (int j = 0; j < cfg.region_x2.count; ++j) grid.push_back(Vector{{cfg.region_x1.at(i), cfg.region_x2.at(j)}});
  std::vector<char> feasible(grid.size(), 0);
  if (!mpc.sets_empty()) {
    parallel_for(grid.size(), [&](std::size_t i) {
      feasible[i] = feasible_region_scan({grid[i]}, mpc).front() ? 1 : 0;
    });
  }

  long count = 0;
  out.csv() << kRegionHeader << '\n';
  for (std::size_t i = 0; i < grid.size(); ++i) {
    out.csv() << num(grid[i](0)) << ',' << num(grid[i](1)) << ',' << int(feasible[i]) << '\n';
    count += feasible[i];
  }
  out.summary() << "region: eta = " << num(etas.maxCoeff()) << ", " << count << " of " << grid.size()
                << " grid points feasible" << (mpc.sets_empty() ? " (tightened set empty)" : "") << '\n';
  return mpc.sets_empty() ? kExitInfeasible : kExitOk;
}

inline int exit_code_for(Errc code) {
  switch (code) {
    case Errc::InfeasibleRadius:
    case Errc::TightenedSetEmpty:
    case Errc::InitialInfeasible:
      return kExitInfeasible;
    case Errc::ConfigError:
    case Errc::DimensionMismatch:
    case Errc::DomainError:
    case Errc::NotPsd:
    case Errc::NonContractive:
    case Errc::NoConvergence:
    case Errc::AllocationError:
    case Errc::EmptySampleSet:
      return kExitConfig;
    default:
      return 1;
  }
}

}  // namespace detail

/// Entry point shared by the executable and the tests; args excludes the program name.
inline int run_command(const std::vector<std::string>& args, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  CLI::App app{"Distributionally robust PRS synthesis and indirect-feedback SMPC experiments", "drsmpc"};
  app.require_subcommand(1);
  Options opt;
  std::string mode;
  std::uint64_t seed = 0;
  double theta = 0.0, eta = 0.0;
  std::string out_path, samples;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"prs-true", "Gaussian reference PRS from the stationary error covariance"},
      {"dr-prs", "DR-PRS radii from error samples"},
      {"reliability", "Out-of-sample reliability of the Wasserstein radius"},
      {"simulate", "Closed-loop Monte-Carlo of the SMPC"},
      {"region", "Initial-state feasibility over a grid"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config, "configuration file")->required();
    sub->add_option("--out", out_path, "CSV output path (stdout if omitted)");
    sub->add_option("--seed", seed, "master seed (overrides the config)");
    sub->add_option("--theta", theta, "Wasserstein radius (overrides the config)");
    sub->add_option("--eta", eta, "fixed state-PRS radius for simulate/region");
    sub->add_option("--samples", samples, "CSV of error samples, one per row, no header");
    sub->add_option("--mode", mode, "DR radius mode")->check(CLI::IsMember({"var", "cvar"}));
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "drsmpc: " << e.what() << '\n';
    return kExitConfig;
  }

  const CLI::App* sub = app.get_subcommands().front();
  opt.command = sub->get_name();
  if (sub->count("--out")) opt.out = out_path;
  if (sub->count("--seed")) opt.seed = seed;
  if (sub->count("--theta")) opt.theta = theta;
  if (sub->count("--eta")) opt.eta = eta;
  if (sub->count("--samples")) opt.samples = samples;
  if (sub->count("--mode")) opt.mode = mode;

  try {
    ExperimentConfig cfg = load_config(opt.config);
    if (opt.seed) cfg.seed = *opt.seed;
    if (opt.theta) {
      if (*opt.theta < 0.0) throw Error(Errc::ConfigError, "--theta must be >= 0");
      cfg.theta = *opt.theta;
    }
    if (opt.mode) cfg.mode = *opt.mode == "cvar" ? DrMode::cvar : DrMode::var_byproduct;

    detail::Output output(opt.out, out, err);
    if (opt.command == "prs-true") return detail::prs_true(cfg, opt, output);
    if (opt.command == "dr-prs") return detail::dr_prs(cfg, opt, output);
    if (opt.command == "reliability") return detail::reliability(cfg, opt, output);
    if (opt.command == "simulate") return detail::simulate(cfg, opt, output);
    return detail::region(cfg, opt, output);
  } catch (const Error& e) {
    err << "drsmpc " << opt.command << ": " << e.what() << '\n';
    return detail::exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "drsmpc " << opt.command << ": " << e.what() << '\n';
    return 1;
  }
}

}  // namespace drsmpc::cli
