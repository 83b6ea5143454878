#pragma once

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "diffda/hash.hpp"

namespace diffda {

enum class ScheduleKind { variance_exploding, variance_preserving };

enum class Warping { linear, geometric, poly7 };

// Forward diffusion law x_t = alpha(t) x_0 + sigma(t) eps on t in [0, 1],
// together with the matching SDE coefficients dx = f(t) x dt + g(t) dw.
class NoiseSchedule {
 public:
  static NoiseSchedule variance_exploding(double sigma_min = 0.02,
                                          double sigma_max = 100.0) {
    if (!(sigma_min > 0.0) || !(sigma_max > sigma_min))
      throw std::invalid_argument("variance-exploding schedule needs 0 < sigma_min < sigma_max");
    NoiseSchedule s;
    s.kind_ = ScheduleKind::variance_exploding;
    s.sigma_min_ = sigma_min;
    s.sigma_max_ = sigma_max;
    return s;
  }

  static NoiseSchedule variance_preserving(double beta_min = 0.1,
                                           double beta_max = 20.0) {
    if (!(beta_min > 0.0) || !(beta_max > beta_min))
      throw std::invalid_argument("variance-preserving schedule needs 0 < beta_min < beta_max");
    NoiseSchedule s;
    s.kind_ = ScheduleKind::variance_preserving;
    s.beta_min_ = beta_min;
    s.beta_max_ = beta_max;
    return s;
  }

  ScheduleKind kind() const { return kind_; }
  double sigma_min() const { return sigma_min_; }
  double sigma_max() const { return sigma_max_; }
  double beta_min() const { return beta_min_; }
  double beta_max() const { return beta_max_; }

  double alpha(double t) const {
    check_time(t);
    if (kind_ == ScheduleKind::variance_exploding) return 1.0;
    return std::exp(-0.25 * t * t * (beta_max_ - beta_min_) - 0.5 * t * beta_min_);
  }

  double sigma(double t) const {
    check_time(t);
    if (kind_ == ScheduleKind::variance_exploding)
      return sigma_min_ * std::pow(sigma_max_ / sigma_min_, t);
    const double a = alpha(t);
    return std::sqrt(std::max(0.0, 1.0 - a * a));
  }

  double drift_f(double t) const {
    check_time(t);
    if (kind_ == ScheduleKind::variance_exploding) return 0.0;
    return -0.5 * beta(t);
  }

  double diffusion_g2(double t) const {
    check_time(t);
    if (kind_ == ScheduleKind::variance_exploding) {
      const double s = sigma(t);
      return 2.0 * s * s * std::log(sigma_max_ / sigma_min_);
    }
    return beta(t);
  }

  // Exact integral of g^2 over [t_lo, t_hi]; the noise variance accumulated by
  // the SDE between two grid nodes.
  double integrated_g2(double t_lo, double t_hi) const {
    check_time(t_lo);
    check_time(t_hi);
    if (t_hi < t_lo) throw std::domain_error("integrated_g2 needs t_lo <= t_hi");
    if (kind_ == ScheduleKind::variance_exploding) {
      const double s_hi = sigma(t_hi);
      const double s_lo = sigma(t_lo);
      return s_hi * s_hi - s_lo * s_lo;
    }
    return beta_min_ * (t_hi - t_lo) +
           0.5 * (beta_max_ - beta_min_) * (t_hi * t_hi - t_lo * t_lo);
  }

  std::string canonical_string() const {
    char buf[128];
    if (kind_ == ScheduleKind::variance_exploding)
      std::snprintf(buf, sizeof buf, "ve|%.17g|%.17g", sigma_min_, sigma_max_);
    else
      std::snprintf(buf, sizeof buf, "vp|%.17g|%.17g", beta_min_, beta_max_);
    return buf;
  }

  std::uint64_t hash() const { return fnv1a64(canonical_string()); }

 private:
  static void check_time(double t) {
    if (!(t >= 0.0 && t <= 1.0))
      throw std::domain_error("diffusion time must lie in [0, 1]");
  }

  double beta(double t) const { return beta_min_ + t * (beta_max_ - beta_min_); }

  ScheduleKind kind_ = ScheduleKind::variance_exploding;
  double sigma_min_ = 0.02;
  double sigma_max_ = 100.0;
  double beta_min_ = 0.1;
  double beta_max_ = 20.0;
};

// n_steps node values from t=1 down to t=0 inclusive, strictly decreasing.
// geometric places nodes so sigma is log-spaced (uniform t for the VE law);
// poly7 is the rho=7 polynomial spacing in sigma^(1/7). The VP law has
// sigma(0)=0, so sigma-space warpings reduce to a uniform grid there.
inline Eigen::VectorXd time_grid(int n_steps, const NoiseSchedule& schedule,
                                 Warping warping = Warping::geometric) {
  if (n_steps < 2) throw std::invalid_argument("time_grid needs at least 2 nodes");
  Eigen::VectorXd ts(n_steps);
  const bool sigma_space = schedule.kind() == ScheduleKind::variance_exploding &&
                           warping != Warping::linear;
  if (!sigma_space) {
    for (int i = 0; i < n_steps; ++i)
      ts[i] = 1.0 - static_cast<double>(i) / (n_steps - 1);
  } else {
    const double smin = schedule.sigma_min();
    const double smax = schedule.sigma_max();
    const double log_ratio = std::log(smax / smin);
    for (int i = 0; i < n_steps; ++i) {
      const double u = static_cast<double>(i) / (n_steps - 1);
      double sig;
      if (warping == Warping::geometric) {
        sig = smax * std::pow(smin / smax, u);
      } else {
        const double rho = 7.0;
        const double r = std::pow(smax, 1.0 / rho) +
                         u * (std::pow(smin, 1.0 / rho) - std::pow(smax, 1.0 / rho));
        sig = std::pow(r, rho);
      }
      ts[i] = std::log(sig / smin) / log_ratio;
    }
  }
  ts[0] = 1.0;
  ts[n_steps - 1] = 0.0;
  for (int i = 1; i < n_steps; ++i)
    if (!(ts[i] < ts[i - 1]))
      throw std::runtime_error("time grid is not strictly decreasing");
  return ts;
}

}  // namespace diffda
