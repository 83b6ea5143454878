#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "diffda/denoiser.hpp"
#include "diffda/dynamics.hpp"
#include "diffda/guidance.hpp"
#include "diffda/parallel.hpp"
#include "diffda/rng.hpp"
#include "diffda/sampler.hpp"

namespace diffda {

enum class Resampling { multinomial, systematic };

struct FilterConfig {
  int n_particles = 256;
  double ess_min = 60.0;
  double ess_max = 70.0;
  double alpha_min = 1e-4;
  int adapt_max_iters = 60;
  Resampling resampling = Resampling::multinomial;
  int mean_draws = 1;
  int snapshot_every = 1;  // 0 disables ensemble snapshots
  std::uint64_t seed = 0;
  int workers = 1;
};

inline double effective_sample_size(const Eigen::VectorXd& weights) {
  const double s2 = weights.squaredNorm();
  if (!(s2 > 0.0)) throw std::invalid_argument("weights must not be all zero");
  return 1.0 / s2;
}

// Normalized tempered weights w_i proportional to exp(alpha ll_i), computed
// with the max shifted out so extreme log-likelihoods stay finite.
inline Eigen::VectorXd weights_from_logliks(const Eigen::VectorXd& logliks,
                                            double alpha) {
  const double m = (alpha * logliks.array()).maxCoeff();
  if (!std::isfinite(m))
    throw std::runtime_error("all particle likelihoods vanished");
  Eigen::VectorXd w = (alpha * logliks.array() - m).exp();
  return w / w.sum();
}

struct InflationResult {
  double alpha = 1.0;
  Eigen::VectorXd weights;
  double ess = 0.0;
  bool clamped = false;
};

// Picks the tempering exponent alpha in [alpha_min, 1] whose effective sample
// size lands inside [ess_min, ess_max]. ESS is monotone decreasing in alpha, so
// bisection on log alpha brackets the band. alpha = 1 is preferred whenever the
// untempered ESS already meets ess_min (no tempering bias unless needed); the
// clamped flag records the cases where the band is unreachable at either end.
inline InflationResult adapt_inflation(const Eigen::VectorXd& logliks,
                                       const FilterConfig& cfg) {
  const double n = static_cast<double>(logliks.size());
  if (!(cfg.ess_min >= 1.0) || !(cfg.ess_max > cfg.ess_min) || cfg.ess_max > n)
    throw std::invalid_argument("ESS band must satisfy 1 <= ess_min < ess_max <= N");
  if (!(cfg.alpha_min > 0.0) || cfg.alpha_min >= 1.0)
    throw std::invalid_argument("alpha_min must lie in (0, 1)");

  auto at = [&](double alpha) {
    InflationResult r;
    r.alpha = alpha;
    r.weights = weights_from_logliks(logliks, alpha);
    r.ess = effective_sample_size(r.weights);
    return r;
  };

  InflationResult full = at(1.0);
  if (full.ess >= cfg.ess_min) {
    full.clamped = full.ess > cfg.ess_max;
    return full;
  }

  InflationResult flat = at(cfg.alpha_min);
  if (flat.ess < cfg.ess_min) {
    flat.clamped = true;  // degenerate even at the flattest allowed tempering
    return flat;
  }
  if (flat.ess <= cfg.ess_max) return flat;

  double lo = std::log(cfg.alpha_min);  // ESS above the band here
  double hi = 0.0;                      // ESS below the band here
  for (int it = 0; it < cfg.adapt_max_iters; ++it) {
    const double mid = 0.5 * (lo + hi);
    InflationResult r = at(std::exp(mid));
    if (r.ess > cfg.ess_max) {
      lo = mid;
    } else if (r.ess < cfg.ess_min) {
      hi = mid;
    } else {
      return r;
    }
  }
  throw std::runtime_error("tempering adaptation failed to reach the ESS band");
}

inline std::vector<int> resample_indices(const Eigen::VectorXd& weights, int n,
                                         Resampling kind, Rng& rng) {
  const Eigen::Index m = weights.size();
  Eigen::VectorXd cdf(m);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    acc += weights[i];
    cdf[i] = acc;
  }
  cdf[m - 1] = 1.0;
  std::vector<int> idx(n);
  if (kind == Resampling::multinomial) {
    for (int j = 0; j < n; ++j) {
      const double u = rng.uniform();
      idx[j] = static_cast<int>(
          std::lower_bound(cdf.data(), cdf.data() + m, u) - cdf.data());
    }
  } else {
    const double u0 = rng.uniform() / n;
    Eigen::Index i = 0;
    for (int j = 0; j < n; ++j) {
      const double u = u0 + static_cast<double>(j) / n;
      while (cdf[i] < u) ++i;
      idx[j] = static_cast<int>(i);
    }
  }
  return idx;
}

// Single-draw estimate of E[x_k | x_{k-1}]: denoise pure schedule noise at
// t = 1 conditioned on x_prev, averaged over draws.
inline Eigen::VectorXd predict_mean(const Denoiser& den, const Eigen::VectorXd& x_prev,
                                    const NoiseSchedule& schedule, Rng& rng,
                                    int draws = 1) {
  if (draws < 1) throw std::invalid_argument("draws must be >= 1");
  const Eigen::Index d = x_prev.size();
  const double s1 = schedule.sigma(1.0);
  const Eigen::MatrixXd prev = x_prev.transpose();
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(d);
  for (int r = 0; r < draws; ++r) {
    const Eigen::MatrixXd noisy = (s1 * rng.normal_vector(d)).transpose();
    acc += den.denoise(noisy, prev, 1.0).row(0).transpose();
  }
  return acc / static_cast<double>(draws);
}

struct FilterTrace {
  std::vector<double> alpha;
  std::vector<double> ess;
  std::vector<char> clamped;
  std::vector<Eigen::VectorXd> weights;
  std::vector<std::vector<int>> ancestors;
  std::vector<Eigen::MatrixXd> predicted_means;
  std::vector<Eigen::MatrixXd> snapshots;  // index 0 is the initial ensemble
  std::vector<int> snapshot_steps;
};

namespace detail {

// Per-cycle stream labels; each (cycle, role, particle) triple is independent.
inline std::uint64_t stream_step(int cycle, int role) {
  return 3ULL * static_cast<std::uint64_t>(cycle) + static_cast<std::uint64_t>(role);
}

inline Eigen::MatrixXd predicted_means(const Denoiser& den, const Eigen::MatrixXd& X,
                                       const NoiseSchedule& schedule,
                                       const FilterConfig& cfg, int cycle) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  const double s1 = schedule.sigma(1.0);
  Eigen::MatrixXd mu = Eigen::MatrixXd::Zero(n, d);
  parallel_for(n, cfg.workers, [&](std::int64_t lo, std::int64_t hi) {
    const Eigen::Index b = hi - lo;
    std::vector<Rng> streams;
    streams.reserve(b);
    for (std::int64_t i = lo; i < hi; ++i)
      streams.push_back(substream(cfg.seed, stream_step(cycle, 0),
                                  static_cast<std::uint64_t>(i)));
    const Eigen::MatrixXd prev = X.middleRows(lo, b);
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(b, d);
    Eigen::MatrixXd noisy(b, d);
    for (int r = 0; r < cfg.mean_draws; ++r) {
      for (Eigen::Index i = 0; i < b; ++i)
        noisy.row(i) = s1 * streams[i].normal_vector(d).transpose();
      acc += den.denoise(noisy, prev, 1.0);
    }
    mu.middleRows(lo, b) = acc / static_cast<double>(cfg.mean_draws);
  });
  return mu;
}

inline void propagate(const Denoiser& den, const ObservationModel* obs,
                      const Eigen::VectorXd* y, const Eigen::MatrixXd& X_prev,
                      Eigen::MatrixXd& X_out, const NoiseSchedule& schedule,
                      const SamplerConfig& sampler_cfg, const GuidanceConfig& gcfg,
                      const FilterConfig& cfg, int cycle) {
  const Eigen::Index d = X_prev.cols();
  parallel_for(X_prev.rows(), cfg.workers, [&](std::int64_t lo, std::int64_t hi) {
    const Eigen::Index b = hi - lo;
    std::vector<Rng> streams;
    streams.reserve(b);
    for (std::int64_t i = lo; i < hi; ++i)
      streams.push_back(substream(cfg.seed, stream_step(cycle, 2),
                                  static_cast<std::uint64_t>(i)));
    const Eigen::MatrixXd prev = X_prev.middleRows(lo, b);
    ScoreFn score;
    if (obs != nullptr) {
      score = [&](const Eigen::MatrixXd& Xt, double t) {
        return posterior_score(den, *obs, *y, Xt, prev, t, schedule, gcfg);
      };
    } else {
      score = [&](const Eigen::MatrixXd& Xt, double t) {
        return score_from_denoiser(den, Xt, prev, t, schedule);
      };
    }
    X_out.middleRows(lo, b) = reverse_sde_solve(score, d, sampler_cfg, schedule, streams);
  });
}

}  // namespace detail

// Guided optimal-proposal particle filter: predicted means from single-draw
// denoising, tempered evidence weights held in an ESS band, resampling every
// cycle, then propagation through the observation-guided reverse SDE.
inline FilterTrace faapf_run(const Denoiser& den, const ObservationModel& obs,
                             const Eigen::MatrixXd& Ys, const Eigen::VectorXd& x0,
                             const NoiseSchedule& schedule,
                             const SamplerConfig& sampler_cfg,
                             const GuidanceConfig& guidance_cfg,
                             const FilterConfig& cfg) {
  const Eigen::Index d = x0.size();
  const int n = cfg.n_particles;
  if (n < 2) throw std::invalid_argument("need at least 2 particles");
  if (Ys.cols() != obs.obs_dim())
    throw std::invalid_argument("observation rows do not match the observation model");
  if (obs.state_dim() != d)
    throw std::invalid_argument("initial state does not match the observation model");
  if (cfg.mean_draws < 1) throw std::invalid_argument("mean_draws must be >= 1");

  Eigen::MatrixXd X = x0.transpose().replicate(n, 1);
  FilterTrace trace;
  if (cfg.snapshot_every > 0) {
    trace.snapshots.push_back(X);
    trace.snapshot_steps.push_back(0);
  }

  for (Eigen::Index k = 0; k < Ys.rows(); ++k) {
    const int cycle = static_cast<int>(k);
    const Eigen::VectorXd y = Ys.row(k).transpose();

    const Eigen::MatrixXd mu =
        detail::predicted_means(den, X, schedule, cfg, cycle);
    Eigen::VectorXd logliks(n);
    for (int i = 0; i < n; ++i)
      logliks[i] = obs.log_density(y, mu.row(i).transpose());

    const InflationResult inflation = adapt_inflation(logliks, cfg);

    Rng resample_rng = substream(cfg.seed, detail::stream_step(cycle, 1), 0);
    const std::vector<int> ancestors =
        resample_indices(inflation.weights, n, cfg.resampling, resample_rng);
    Eigen::MatrixXd parents(n, d);
    for (int i = 0; i < n; ++i) parents.row(i) = X.row(ancestors[i]);

    detail::propagate(den, &obs, &y, parents, X, schedule, sampler_cfg,
                      guidance_cfg, cfg, cycle);

    trace.alpha.push_back(inflation.alpha);
    trace.ess.push_back(inflation.ess);
    trace.clamped.push_back(inflation.clamped ? 1 : 0);
    trace.weights.push_back(inflation.weights);
    trace.ancestors.push_back(ancestors);
    trace.predicted_means.push_back(mu);
    if (cfg.snapshot_every > 0 &&
        (k % cfg.snapshot_every == cfg.snapshot_every - 1 || k + 1 == Ys.rows())) {
      trace.snapshots.push_back(X);
      trace.snapshot_steps.push_back(static_cast<int>(k) + 1);
    }
  }
  return trace;
}

// Matched unguided baseline: same initialization, streams, and reverse solver,
// but prior score only and no weighting or resampling.
inline FilterTrace unconditional_rollout(const Denoiser& den, int n_cycles,
                                         const Eigen::VectorXd& x0,
                                         const NoiseSchedule& schedule,
                                         const SamplerConfig& sampler_cfg,
                                         const FilterConfig& cfg) {
  const Eigen::Index d = x0.size();
  const int n = cfg.n_particles;
  if (n < 1) throw std::invalid_argument("need at least 1 particle");
  Eigen::MatrixXd X = x0.transpose().replicate(n, 1);
  FilterTrace trace;
  if (cfg.snapshot_every > 0) {
    trace.snapshots.push_back(X);
    trace.snapshot_steps.push_back(0);
  }
  GuidanceConfig unused;
  for (int k = 0; k < n_cycles; ++k) {
    Eigen::MatrixXd next(n, d);
    detail::propagate(den, nullptr, nullptr, X, next, schedule, sampler_cfg,
                      unused, cfg, k);
    X = std::move(next);
    if (cfg.snapshot_every > 0 &&
        (k % cfg.snapshot_every == cfg.snapshot_every - 1 || k + 1 == n_cycles)) {
      trace.snapshots.push_back(X);
      trace.snapshot_steps.push_back(k + 1);
    }
  }
  return trace;
}

}  // namespace diffda
