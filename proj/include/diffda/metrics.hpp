#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "diffda/dynamics.hpp"

namespace diffda {

inline std::vector<int> observed_coordinates(const ObservationModel& obs) {
  std::vector<int> idx;
  for (Eigen::Index r = 0; r < obs.H().rows(); ++r)
    for (Eigen::Index c = 0; c < obs.H().cols(); ++c)
      if (obs.H()(r, c) != 0.0) {
        idx.push_back(static_cast<int>(c));
        break;
      }
  return idx;
}

inline std::vector<int> unobserved_coordinates(const ObservationModel& obs) {
  const std::vector<int> seen = observed_coordinates(obs);
  std::vector<int> idx;
  for (int c = 0; c < obs.state_dim(); ++c)
    if (std::find(seen.begin(), seen.end(), c) == seen.end()) idx.push_back(c);
  return idx;
}

// RMSE of the ensemble mean against the truth over a coordinate subset.
inline double skill(const Eigen::MatrixXd& ensemble, const Eigen::VectorXd& truth,
                    const std::vector<int>& coords) {
  if (coords.empty()) throw std::invalid_argument("empty coordinate subset");
  const Eigen::VectorXd mean = ensemble.colwise().mean().transpose();
  double acc = 0.0;
  for (int c : coords) {
    const double e = mean[c] - truth[c];
    acc += e * e;
  }
  return std::sqrt(acc / static_cast<double>(coords.size()));
}

// RMS of the per-coordinate ensemble standard deviation (N-1 normalization).
inline double spread(const Eigen::MatrixXd& ensemble, const std::vector<int>& coords) {
  if (coords.empty()) throw std::invalid_argument("empty coordinate subset");
  if (ensemble.rows() < 2) throw std::invalid_argument("spread needs >= 2 members");
  const double n = static_cast<double>(ensemble.rows());
  double acc = 0.0;
  for (int c : coords) {
    const double m = ensemble.col(c).mean();
    acc += (ensemble.col(c).array() - m).square().sum() / (n - 1.0);
  }
  return std::sqrt(acc / static_cast<double>(coords.size()));
}

inline std::vector<int> all_coordinates(Eigen::Index dim) {
  std::vector<int> idx(dim);
  for (Eigen::Index c = 0; c < dim; ++c) idx[static_cast<std::size_t>(c)] = static_cast<int>(c);
  return idx;
}

struct PpcResult {
  Eigen::VectorXd grid;
  Eigen::VectorXd density;
  double rank = 0.0;  // predictive CDF evaluated at the observation
};

inline double standard_normal_cdf(double z) {
  return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

// Posterior predictive check for one observed coordinate: the predictive law
// for y_c is the equal-weight mixture over members of N(h_r x_i, noise_std_r^2).
// The density is tabulated on mean +- 5 predictive stds; the rank is the
// predictive CDF at the realized observation (uniform when calibrated).
inline PpcResult posterior_predictive_check(const Eigen::MatrixXd& ensemble,
                                            const ObservationModel& obs,
                                            const Eigen::VectorXd& y, int obs_row,
                                            int n_grid = 401) {
  if (obs_row < 0 || obs_row >= obs.obs_dim())
    throw std::invalid_argument("observation row out of range");
  if (ensemble.cols() != obs.state_dim())
    throw std::invalid_argument("ensemble does not match the observation model");
  if (ensemble.rows() < 32)
    throw std::invalid_argument("predictive check needs at least 32 members");
  const Eigen::VectorXd centers = ensemble * obs.H().row(obs_row).transpose();
  const double sd = obs.noise_std()[obs_row];
  const double mean = centers.mean();
  const double var_centers =
      (centers.array() - mean).square().sum() / (centers.size() - 1.0);
  const double pred_std = std::sqrt(var_centers + sd * sd);

  PpcResult out;
  out.grid.resize(n_grid);
  out.density.resize(n_grid);
  const double lo = mean - 5.0 * pred_std;
  const double hi = mean + 5.0 * pred_std;
  const double inv_norm = 1.0 / (sd * std::sqrt(2.0 * M_PI));
  for (int g = 0; g < n_grid; ++g) {
    const double v = lo + (hi - lo) * g / (n_grid - 1);
    out.grid[g] = v;
    const Eigen::ArrayXd z = (v - centers.array()) / sd;
    out.density[g] = (inv_norm * (-0.5 * z.square()).exp()).mean();
  }
  const Eigen::ArrayXd z = (y[obs_row] - centers.array()) / sd;
  out.rank = z.unaryExpr([](double v) { return standard_normal_cdf(v); }).mean();
  return out;
}

// |sum_i w_i g(x_i) - reference| for a weighted ensemble and a scalar test
// function; the particle approximation of E[g] should converge to the
// reference as the ensemble grows.
inline double weak_convergence_error(
    const Eigen::MatrixXd& ensemble, const Eigen::VectorXd& weights,
    const std::function<double(const Eigen::VectorXd&)>& g, double reference) {
  if (weights.size() != ensemble.rows())
    throw std::invalid_argument("one weight per ensemble member required");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < ensemble.rows(); ++i)
    acc += weights[i] * g(ensemble.row(i).transpose());
  return std::abs(acc - reference);
}

inline double trapezoid_integral(const Eigen::VectorXd& x, const Eigen::VectorXd& f) {
  double acc = 0.0;
  for (Eigen::Index i = 1; i < x.size(); ++i)
    acc += 0.5 * (f[i] + f[i - 1]) * (x[i] - x[i - 1]);
  return acc;
}

// Kolmogorov-Smirnov distance of a sample against U[0, 1].
inline double ks_uniform(std::vector<double> ranks) {
  if (ranks.empty()) throw std::invalid_argument("empty rank sample");
  std::sort(ranks.begin(), ranks.end());
  const double n = static_cast<double>(ranks.size());
  double d = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    d = std::max(d, std::abs((i + 1.0) / n - ranks[i]));
    d = std::max(d, std::abs(ranks[i] - static_cast<double>(i) / n));
  }
  return d;
}

}  // namespace diffda
