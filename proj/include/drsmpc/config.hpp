#pragma once

/**
 * @file
 * @brief Experiment configuration: line-oriented `key = value` files.
 *
 * Values are JSON literals (numbers, `[..]` vectors, `[[..],[..]]` matrices) or
 * bare words. `#` starts a comment. Matrices use the `matrix.` prefix and
 * vectors the `vector.` prefix, e.g.
 *
 *     matrix.A = [[1, 1], [0, 1]]
 *     vector.h = [1.2, 1.2]
 *     gain     = auto
 */

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drsmpc/drprs.hpp"
#include "drsmpc/error.hpp"
#include "drsmpc/linalg.hpp"
#include "drsmpc/sim.hpp"

namespace drsmpc {

struct GridAxis {
  double lo = 0.0;
  double hi = 0.0;
  int count = 1;

  double at(int i) const { return count == 1 ? lo : lo + (hi - lo) * i / (count - 1); }
};

struct ExperimentConfig {
  Matrix A, B;
  std::optional<Matrix> K;  ///< empty means "auto" (LQR gain from Q, R)
  Matrix Q, R;
  Matrix sigma_w;
  Matrix H;
  Vector h;
  std::optional<Matrix> L;
  std::optional<Vector> l;
  Vector x0;
  int horizon = 30;
  double p_x = 0.8;
  double p_u = 0.8;
  double theta = 0.0;
  long M = 30;
  long N_s = 1000;
  int T = 100;
  long N_mc = 1000;
  long N_v = 100000;
  std::uint64_t seed = 42;
  DrMode mode = DrMode::var_byproduct;
  double lambda_min = 1.0;
  SamplingMode sampling = SamplingMode::stationary;
  std::optional<double> eta;    ///< fixed state-PRS radius for simulate/region
  std::optional<double> eta_u;  ///< fixed input-PRS radius
  std::vector<long> reliability_M{30, 100, 400};
  std::vector<double> reliability_theta{0.0};
  GridAxis region_x1{-15.0, 15.0, 31};
  GridAxis region_x2{-3.0, 3.0, 13};

  Eigen::Index nx() const { return A.rows(); }
  Eigen::Index nu() const { return B.cols(); }
};

namespace detail {

inline Error config_error(int line, const std::string& what) {
  return Error(Errc::ConfigError, "line " + std::to_string(line) + ": " + what);
}

inline double json_number(const nlohmann::json& j, int line, const std::string& key) {
  if (!j.is_number()) throw config_error(line, key + ": expected a number");
  return j.get<double>();
}

inline Vector json_vector(const nlohmann::json& j, int line, const std::string& key) {
  if (!j.is_array()) throw config_error(line, key + ": expected [a, b, ...]");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = json_number(j[i], line, key);
  return v;
}

inline Matrix json_matrix(const nlohmann::json& j, int line, const std::string& key) {
  if (!j.is_array() || j.empty()) throw config_error(line, key + ": expected [[..], [..]]");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  if (cols == 0) throw config_error(line, key + ": matrix rows must be non-empty arrays");
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw config_error(line, key + ": ragged matrix");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = json_number(j[r][c], line, key);
  }
  return m;
}

inline double probability(const nlohmann::json& j, int line, const std::string& key) {
  const double v = json_number(j, line, key);
  if (!(v > 0.0 && v < 1.0)) throw config_error(line, key + ": must lie in (0,1)");
  return v;
}

inline long positive_integer(const nlohmann::json& j, int line, const std::string& key) {
  if (!j.is_number_integer() || j.get<long>() < 1) throw config_error(line, key + ": expected an integer >= 1");
  return j.get<long>();
}

inline std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace detail

/// Parses configuration text; errors carry the offending line number.
inline ExperimentConfig parse_config(std::istream& in) {
  using detail::config_error;
  ExperimentConfig cfg;
  std::map<std::string, int> seen;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string text = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw config_error(line, "expected `key = value`");
    const std::string key = detail::trim(text.substr(0, eq));
    const std::string value = detail::trim(text.substr(eq + 1));
    if (key.empty() || value.empty()) throw config_error(line, "empty key or value");
    if (seen.count(key)) throw config_error(line, key + " already set on line " + std::to_string(seen[key]));
    seen[key] = line;

    nlohmann::json j = nlohmann::json::parse(value, nullptr, false);
    const bool is_word = j.is_discarded();
    if (is_word) j = value;

    if (key == "matrix.A") cfg.A = detail::json_matrix(j, line, key);
    else if (key == "matrix.B") cfg.B = detail::json_matrix(j, line, key);
    else if (key == "matrix.K") cfg.K = detail::json_matrix(j, line, key);
    else if (key == "gain") {
      if (value != "auto") throw config_error(line, "gain: only `auto` is accepted (use matrix.K otherwise)");
    }
    else if (key == "matrix.Q") cfg.Q = detail::json_matrix(j, line, key);
    else if (key == "matrix.R") cfg.R = detail::json_matrix(j, line, key);
    else if (key == "matrix.Sigma_w") cfg.sigma_w = detail::json_matrix(j, line, key);
    else if (key == "matrix.H") cfg.H = detail::json_matrix(j, line, key);
    else if (key == "vector.h") cfg.h = detail::json_vector(j, line, key);
    else if (key == "matrix.L") cfg.L = detail::json_matrix(j, line, key);
    else if (key == "vector.l") cfg.l = detail::json_vector(j, line, key);
    else if (key == "vector.x0") cfg.x0 = detail::json_vector(j, line, key);
    else if (key == "N") cfg.horizon = static_cast<int>(detail::positive_integer(j, line, key));
    else if (key == "p_x") cfg.p_x = detail::probability(j, line, key);
    else if (key == "p_u") cfg.p_u = detail::probability(j, line, key);
    else if (key == "theta") {
      cfg.theta = detail::json_number(j, line, key);
      if (cfg.theta < 0.0) throw config_error(line, "theta must be >= 0");
    }
    else if (key == "M") cfg.M = detail::positive_integer(j, line, key);
    else if (key == "N_s") cfg.N_s = detail::positive_integer(j, line, key);
    else if (key == "T") cfg.T = static_cast<int>(detail::positive_integer(j, line, key));
    else if (key == "N_mc") cfg.N_mc = detail::positive_integer(j, line, key);
    else if (key == "N_v") cfg.N_v = detail::positive_integer(j, line, key);
    else if (key == "seed") {
      if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<long long>() >= 0))
        throw config_error(line, "seed: expected a non-negative integer");
      cfg.seed = j.get<std::uint64_t>();
    }
    else if (key == "mode") {
      if (value == "var") cfg.mode = DrMode::var_byproduct;
      else if (value == "cvar") cfg.mode = DrMode::cvar;
      else throw config_error(line, "mode: expected var or cvar");
    }
    else if (key == "lambda_min") {
      cfg.lambda_min = detail::json_number(j, line, key);
      if (!(cfg.lambda_min > 0.0)) throw config_error(line, "lambda_min must be > 0");
    }
    else if (key == "sampling") {
      if (value == "stationary") cfg.sampling = SamplingMode::stationary;
      else if (value == "recursion") cfg.sampling = SamplingMode::recursion;
      else throw config_error(line, "sampling: expected stationary or recursion");
    }
    else if (key == "eta") cfg.eta = detail::json_number(j, line, key);
    else if (key == "eta_u") cfg.eta_u = detail::json_number(j, line, key);
    else if (key == "reliability.M") {
      if (!j.is_array() || j.empty()) throw config_error(line, key + ": expected [M1, M2, ...]");
      cfg.reliability_M.clear();
      for (const auto& v : j) cfg.reliability_M.push_back(detail::positive_integer(v, line, key));
    }
    else if (key == "reliability.theta") {
      const Vector v = detail::json_vector(j, line, key);
      if (v.size() == 0 || v.minCoeff() < 0.0) throw config_error(line, key + ": expected non-negative radii");
      cfg.reliability_theta.assign(v.data(), v.data() + v.size());
    }
    else if (key == "region.x1" || key == "region.x2") {
      const Vector v = detail::json_vector(j, line, key);
      if (v.size() != 3 || v(2) < 1 || v(2) != std::floor(v(2)))
        throw config_error(line, key + ": expected [min, max, count]");
      (key == "region.x1" ? cfg.region_x1 : cfg.region_x2) = {v(0), v(1), static_cast<int>(v(2))};
    }
    else throw config_error(line, "unknown key `" + key + "`");
  }

  const auto need = [&](bool ok, const std::string& what) {
    if (!ok) throw Error(Errc::ConfigError, what);
  };
  need(cfg.A.size() > 0 && cfg.A.rows() == cfg.A.cols(), "matrix.A must be given and square");
  const Eigen::Index n = cfg.A.rows();
  need(cfg.B.rows() == n && cfg.B.cols() >= 1, "matrix.B must have as many rows as A");
  const Eigen::Index m = cfg.B.cols();
  if (cfg.Q.size() == 0) cfg.Q = Matrix::Identity(n, n);
  if (cfg.R.size() == 0) cfg.R = Matrix::Identity(m, m);
  need(cfg.Q.rows() == n && cfg.Q.cols() == n, "matrix.Q must be n_x x n_x");
  need(cfg.R.rows() == m && cfg.R.cols() == m, "matrix.R must be n_u x n_u");
  if (cfg.K) need(cfg.K->rows() == m && cfg.K->cols() == n, "matrix.K must be n_u x n_x");
  need(cfg.sigma_w.rows() == n && cfg.sigma_w.cols() == n, "matrix.Sigma_w must be given and n_x x n_x");
  need(cfg.H.cols() == n && cfg.H.rows() >= 1, "matrix.H must be given with n_x columns");
  need(cfg.h.size() == cfg.H.rows(), "vector.h must have one entry per row of H");
  need(cfg.h.minCoeff() > 0.0, "vector.h must be positive (origin in the interior of X)");
  need(cfg.L.has_value() == cfg.l.has_value(), "matrix.L and vector.l must be given together");
  if (cfg.L) {
    need(cfg.L->cols() == m && cfg.l->size() == cfg.L->rows(), "matrix.L / vector.l dimensions");
    need(cfg.l->minCoeff() > 0.0, "vector.l must be positive (origin in the interior of U)");
  }
  if (cfg.x0.size() == 0) cfg.x0 = Vector::Zero(n);
  need(cfg.x0.size() == n, "vector.x0 must have n_x entries");
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigError, "cannot open config file " + path);
  return parse_config(in);
}

/// CSV with one sample per row, no header.
inline SampleSet load_samples(const std::string& path, Eigen::Index expected_cols) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigError, "cannot open sample file " + path);
  std::vector<std::vector<double>> rows;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (detail::trim(raw).empty()) continue;
    std::vector<double> row;
    std::stringstream ss(raw);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        const std::string t = detail::trim(cell);
        row.push_back(std::stod(t, &used));
        if (used != t.size()) throw std::invalid_argument(t);
      } catch (const std::exception&) {
        throw Error(Errc::ConfigError, path + ": line " + std::to_string(line) + ": bad number `" + cell + "`");
      }
    }
    if (static_cast<Eigen::Index>(row.size()) != expected_cols) {
      throw Error(Errc::ConfigError, path + ": line " + std::to_string(line) + ": expected " +
                                         std::to_string(expected_cols) + " columns");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(Errc::EmptySampleSet, path + ": no samples");
  Matrix samples(static_cast<Eigen::Index>(rows.size()), expected_cols);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (Eigen::Index c = 0; c < expected_cols; ++c) samples(static_cast<Eigen::Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
  return SampleSet(std::move(samples));
}

}  // namespace drsmpc
