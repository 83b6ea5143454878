#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

#include "diffda/denoiser.hpp"
#include "diffda/dynamics.hpp"
#include "diffda/schedule.hpp"

namespace diffda {

enum class KrylovSolver { bicgstab, conjugate_gradient };
enum class VarianceModel { tweedie_vjp, scalar_fallback };

struct GuidanceConfig {
  KrylovSolver solver = KrylovSolver::bicgstab;
  int max_iters = 2;
  double tol = 1e-8;
  VarianceModel variance_model = VarianceModel::tweedie_vjp;
};

struct KrylovResult {
  Eigen::VectorXd x;
  double residual_norm = 0.0;
  int iters = 0;
  bool breakdown = false;
};

// Short-iteration solvers that return the minimum-residual iterate seen,
// starting from x = 0. On an indefinite or noisy operator the recurrences can
// degrade; keeping the best iterate means the result never has a larger
// residual than the zero guess, so a failed solve shrinks toward "no update"
// instead of amplifying.
inline KrylovResult krylov_solve(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& matvec,
    const Eigen::VectorXd& b, const GuidanceConfig& cfg) {
  if (cfg.max_iters < 1) throw std::invalid_argument("max_iters must be >= 1");
  const double bnorm = b.norm();
  KrylovResult best{Eigen::VectorXd::Zero(b.size()), bnorm, 0};
  if (bnorm == 0.0) return best;

  auto consider = [&](const Eigen::VectorXd& x, double rn, int it) {
    if (std::isfinite(rn) && rn < best.residual_norm) {
      best.x = x;
      best.residual_norm = rn;
    }
    best.iters = it;
  };

  if (cfg.solver == KrylovSolver::conjugate_gradient) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(b.size());
    Eigen::VectorXd r = b, p = b;
    double rs = r.squaredNorm();
    for (int it = 1; it <= cfg.max_iters; ++it) {
      const Eigen::VectorXd ap = matvec(p);
      const double denom = p.dot(ap);
      if (denom == 0.0 || !std::isfinite(denom)) {
        best.breakdown = true;
        break;
      }
      const double alpha = rs / denom;
      x += alpha * p;
      r -= alpha * ap;
      const double rs_new = r.squaredNorm();
      consider(x, std::sqrt(rs_new), it);
      if (best.residual_norm <= cfg.tol * bnorm) break;
      p = r + (rs_new / rs) * p;
      rs = rs_new;
      if (rs == 0.0) break;
    }
    return best;
  }

  Eigen::VectorXd x = Eigen::VectorXd::Zero(b.size());
  Eigen::VectorXd r = b, r0 = b;
  Eigen::VectorXd p = Eigen::VectorXd::Zero(b.size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(b.size());
  double rho = 1.0, alpha = 1.0, omega = 1.0;
  for (int it = 1; it <= cfg.max_iters; ++it) {
    const double rho_new = r0.dot(r);
    if (rho_new == 0.0 || !std::isfinite(rho_new)) {
      best.breakdown = true;
      break;
    }
    if (it == 1) {
      p = r;
    } else {
      const double beta = (rho_new / rho) * (alpha / omega);
      p = r + beta * (p - omega * v);
    }
    v = matvec(p);
    const double denom = r0.dot(v);
    if (denom == 0.0 || !std::isfinite(denom)) {
      best.breakdown = true;
      break;
    }
    alpha = rho_new / denom;
    const Eigen::VectorXd s = r - alpha * v;
    const Eigen::VectorXd t = matvec(s);
    const double tt = t.squaredNorm();
    omega = tt > 0.0 ? t.dot(s) / tt : 0.0;
    x += alpha * p + omega * s;
    r = s - omega * t;
    rho = rho_new;
    consider(x, r.norm(), it);
    if (best.residual_norm <= cfg.tol * bnorm) break;
    if (omega == 0.0 || !r.allFinite()) {
      best.breakdown = true;
      break;
    }
  }
  return best;
}

struct RowKrylovResult {
  Eigen::MatrixXd x;              // solution rows
  Eigen::VectorXd residual_norm;  // per row, of the returned iterate
  int iters = 0;
  bool breakdown = false;
};

namespace detail {

inline Eigen::ArrayXd row_dots(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a.array() * b.array()).rowwise().sum();
}

inline Eigen::ArrayXd row_norms(const Eigen::MatrixXd& a) {
  return a.rowwise().norm().array();
}

inline void keep_best(const Eigen::MatrixXd& x, const Eigen::ArrayXd& rn,
                      Eigen::MatrixXd& best_x, Eigen::ArrayXd& best_rn) {
  for (Eigen::Index i = 0; i < rn.size(); ++i)
    if (std::isfinite(rn[i]) && rn[i] < best_rn[i]) {
      best_x.row(i) = x.row(i);
      best_rn[i] = rn[i];
    }
}

inline Eigen::ArrayXd safe_div(const Eigen::ArrayXd& num, const Eigen::ArrayXd& den) {
  return (den != 0.0).select(num / den, Eigen::ArrayXd::Zero(num.size()));
}

inline Eigen::ArrayXd safe_div(const Eigen::ArrayXd& num, const Eigen::ArrayXd& den,
                               bool& degenerate) {
  if (((den == 0.0) && (num != 0.0)).any() || !den.isFinite().all()) degenerate = true;
  return safe_div(num, den);
}

}  // namespace detail

// Row-batched variant: solves one independent system per row of B, with the
// same minimum-residual guard applied row by row.
inline RowKrylovResult krylov_solve_rows(
    const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& matvec,
    const Eigen::MatrixXd& B, const GuidanceConfig& cfg) {
  if (cfg.max_iters < 1) throw std::invalid_argument("max_iters must be >= 1");
  const Eigen::Index n = B.rows();
  RowKrylovResult out{Eigen::MatrixXd::Zero(n, B.cols()), Eigen::VectorXd(n), 0};
  Eigen::ArrayXd best_rn = detail::row_norms(B);
  const Eigen::ArrayXd bnorm = best_rn;

  if (cfg.solver == KrylovSolver::conjugate_gradient) {
    Eigen::MatrixXd x = out.x, r = B, p = B;
    Eigen::ArrayXd rs = detail::row_dots(r, r);
    for (int it = 1; it <= cfg.max_iters; ++it) {
      const Eigen::MatrixXd ap = matvec(p);
      const Eigen::ArrayXd alpha =
          detail::safe_div(rs, detail::row_dots(p, ap), out.breakdown);
      x += (p.array().colwise() * alpha).matrix();
      r -= (ap.array().colwise() * alpha).matrix();
      const Eigen::ArrayXd rs_new = detail::row_dots(r, r);
      out.iters = it;
      detail::keep_best(x, rs_new.sqrt(), out.x, best_rn);
      if (!r.allFinite()) out.breakdown = true;
      if ((best_rn <= cfg.tol * bnorm).all()) break;
      p = r + (p.array().colwise() * detail::safe_div(rs_new, rs)).matrix();
      rs = rs_new;
    }
    out.residual_norm = best_rn.matrix();
    return out;
  }

  Eigen::MatrixXd x = out.x, r = B, r0 = B;
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, B.cols());
  Eigen::MatrixXd v = p;
  Eigen::ArrayXd rho = Eigen::ArrayXd::Ones(n);
  Eigen::ArrayXd alpha = rho, omega = rho;
  for (int it = 1; it <= cfg.max_iters; ++it) {
    const Eigen::ArrayXd rho_new = detail::row_dots(r0, r);
    if (it == 1) {
      p = r;
    } else {
      const Eigen::ArrayXd beta =
          detail::safe_div(rho_new, rho) * detail::safe_div(alpha, omega);
      p = r + ((p - (v.array().colwise() * omega).matrix()).array().colwise() * beta)
                  .matrix();
    }
    v = matvec(p);
    alpha = detail::safe_div(rho_new, detail::row_dots(r0, v), out.breakdown);
    const Eigen::MatrixXd s = r - (v.array().colwise() * alpha).matrix();
    const Eigen::MatrixXd t = matvec(s);
    const Eigen::ArrayXd tt = detail::row_dots(t, t);
    omega = detail::safe_div(detail::row_dots(t, s), tt);
    x += (p.array().colwise() * alpha).matrix() +
         (s.array().colwise() * omega).matrix();
    r = s - (t.array().colwise() * omega).matrix();
    rho = rho_new;
    out.iters = it;
    detail::keep_best(x, detail::row_norms(r), out.x, best_rn);
    if (!r.allFinite()) out.breakdown = true;
    if ((best_rn <= cfg.tol * bnorm).all()) break;
  }
  out.residual_norm = best_rn.matrix();
  return out;
}

struct LikelihoodScoreResult {
  Eigen::MatrixXd score;          // rows: grad_{x_t} log p(y | x_t, x_prev)
  Eigen::VectorXd residual_norm;  // per row, from the inner solve
  int iters_used = 0;
  bool breakdown = false;
};

// One application of the observation-space system matrix R + H V H^T to v,
// with V = (sigma^2/alpha) dD/dx_t routed through the denoiser VJP. This is
// the operator the guided-score solve inverts; exposing it directly allows
// checking it against closed forms.
inline Eigen::VectorXd matfree_apply(
    const Denoiser& den, const ObservationModel& obs, const Eigen::VectorXd& x_t,
    const Eigen::VectorXd& x_prev, double t, const NoiseSchedule& schedule,
    const Eigen::VectorXd& v,
    VarianceModel variance_model = VarianceModel::tweedie_vjp) {
  const double a = schedule.alpha(t);
  const double sig = schedule.sigma(t);
  if (sig <= 0.0) throw std::domain_error("operator undefined at sigma = 0");
  if (v.size() != obs.obs_dim()) throw std::invalid_argument("vector size mismatch");
  const Eigen::MatrixXd& H = obs.H();
  const Eigen::VectorXd rv = obs.noise_std().array().square() * v.array();
  if (variance_model == VarianceModel::scalar_fallback) {
    const double v_scalar = sig * sig / (a * a + sig * sig);
    return rv + v_scalar * (H * (H.transpose() * v));
  }
  const auto vjp = den.vjp_operator(Eigen::MatrixXd(x_t.transpose()),
                                    Eigen::MatrixXd(x_prev.transpose()), t);
  const double c = sig * sig / a;
  const Eigen::MatrixXd jv = vjp(Eigen::MatrixXd((H.transpose() * v).transpose()));
  return rv + c * (H * jv.row(0).transpose());
}

// Moment-matched likelihood score: with x_hat = D(x_t) and posterior-variance
// surrogate V = (sigma^2/alpha) dD/dx_t applied matrix-free through the VJP,
//   score = J^T H^T (R + H V H^T)^{-1} (y - H x_hat).
// The inner system is solved per row with the guarded short-iteration Krylov
// solver; V itself is never formed or differentiated.
inline LikelihoodScoreResult likelihood_score(const Denoiser& den,
                                              const ObservationModel& obs,
                                              const Eigen::VectorXd& y,
                                              const Eigen::MatrixXd& X_t,
                                              const Eigen::MatrixXd& X_prev, double t,
                                              const NoiseSchedule& schedule,
                                              const GuidanceConfig& cfg) {
  const double a = schedule.alpha(t);
  const double sig = schedule.sigma(t);
  if (sig <= 0.0) throw std::domain_error("likelihood score undefined at sigma = 0");
  if (y.size() != obs.obs_dim()) throw std::invalid_argument("observation size mismatch");

  const Eigen::MatrixXd& H = obs.H();
  const Eigen::ArrayXd r_diag = obs.noise_std().array().square();
  const Eigen::MatrixXd x_hat = den.denoise(X_t, X_prev, t);
  const Eigen::MatrixXd resid =
      (-(x_hat * H.transpose())).rowwise() + y.transpose();

  const auto vjp = den.vjp_operator(X_t, X_prev, t);
  const double c = sig * sig / a;
  const double v_scalar = sig * sig / (a * a + sig * sig);

  std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)> matvec;
  if (cfg.variance_model == VarianceModel::tweedie_vjp) {
    matvec = [&](const Eigen::MatrixXd& U) -> Eigen::MatrixXd {
      return (U.array().rowwise() * r_diag.transpose()).matrix() +
             c * (vjp(U * H) * H.transpose());
    };
  } else {
    matvec = [&](const Eigen::MatrixXd& U) -> Eigen::MatrixXd {
      return (U.array().rowwise() * r_diag.transpose()).matrix() +
             v_scalar * ((U * H) * H.transpose());
    };
  }

  const RowKrylovResult solve = krylov_solve_rows(matvec, resid, cfg);
  LikelihoodScoreResult out;
  out.score = vjp(solve.x * H);
  out.residual_norm = solve.residual_norm;
  out.iters_used = solve.iters;
  out.breakdown = solve.breakdown;
  return out;
}

inline LikelihoodScoreResult likelihood_score(const Denoiser& den,
                                              const ObservationModel& obs,
                                              const Eigen::VectorXd& y,
                                              const Eigen::VectorXd& x_t,
                                              const Eigen::VectorXd& x_prev, double t,
                                              const NoiseSchedule& schedule,
                                              const GuidanceConfig& cfg) {
  return likelihood_score(den, obs, y, Eigen::MatrixXd(x_t.transpose()),
                          Eigen::MatrixXd(x_prev.transpose()), t, schedule, cfg);
}

// Prior score plus guided correction: grad log p(x_t | x_prev, y).
inline Eigen::MatrixXd posterior_score(const Denoiser& den, const ObservationModel& obs,
                                       const Eigen::VectorXd& y,
                                       const Eigen::MatrixXd& X_t,
                                       const Eigen::MatrixXd& X_prev, double t,
                                       const NoiseSchedule& schedule,
                                       const GuidanceConfig& cfg) {
  return score_from_denoiser(den, X_t, X_prev, t, schedule) +
         likelihood_score(den, obs, y, X_t, X_prev, t, schedule, cfg).score;
}

// Score callbacks for the reverse-SDE solver. The conditioning states are
// copied in; the denoiser, observation model and schedule are captured by
// reference and must outlive the returned callable.
inline std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, double)> make_prior_score(
    const Denoiser& den, const NoiseSchedule& schedule, Eigen::MatrixXd X_prev) {
  return [&den, &schedule, X_prev = std::move(X_prev)](const Eigen::MatrixXd& X,
                                                       double t) {
    return score_from_denoiser(den, X, X_prev, t, schedule);
  };
}

inline std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, double)> make_guided_score(
    const Denoiser& den, const NoiseSchedule& schedule, const ObservationModel& obs,
    Eigen::VectorXd y, Eigen::MatrixXd X_prev, GuidanceConfig cfg) {
  return [&den, &schedule, &obs, y = std::move(y), X_prev = std::move(X_prev),
          cfg](const Eigen::MatrixXd& X, double t) {
    return posterior_score(den, obs, y, X, X_prev, t, schedule, cfg);
  };
}

}  // namespace diffda
