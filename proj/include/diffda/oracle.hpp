#pragma once

#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "diffda/dynamics.hpp"
#include "diffda/schedule.hpp"

namespace diffda {

struct GaussianState {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// Exact Kalman recursion for the linear-Gaussian system, starting from a Dirac
// at the known initial state. Returns the post-update state for each cycle.
inline std::vector<GaussianState> kalman_filter(const LinearGaussianSSM& sys,
                                                const ObservationModel& obs,
                                                const Eigen::MatrixXd& ys) {
  const Eigen::Index d = sys.dim();
  const Eigen::Index m = obs.obs_dim();
  if (ys.cols() != m) throw std::invalid_argument("observation rows have wrong width");
  const Eigen::MatrixXd& H = obs.H();
  const Eigen::MatrixXd R = obs.noise_cov();

  GaussianState st{sys.x0(), Eigen::MatrixXd::Zero(d, d)};
  std::vector<GaussianState> out;
  out.reserve(ys.rows());
  for (Eigen::Index k = 0; k < ys.rows(); ++k) {
    const Eigen::VectorXd mp = sys.A() * st.mean;
    const Eigen::MatrixXd Pp = sys.A() * st.cov * sys.A().transpose() + sys.Q();
    const Eigen::MatrixXd S = H * Pp * H.transpose() + R;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
      throw std::runtime_error("singular innovation covariance in Kalman update");
    const Eigen::MatrixXd K = ldlt.solve(H * Pp).transpose();
    st.mean = mp + K * (ys.row(k).transpose() - H * mp);
    st.cov = Pp - K * H * Pp;
    st.cov = 0.5 * (st.cov + st.cov.transpose()).eval();
    out.push_back(st);
  }
  return out;
}

// One predict step of the same recursion, for inspection in tests.
inline GaussianState kalman_predict(const LinearGaussianSSM& sys,
                                    const GaussianState& st) {
  return {sys.A() * st.mean,
          sys.A() * st.cov * sys.A().transpose() + sys.Q()};
}

// log p(y^{k+1} | x^k) = log N(y; HAx, HQH^T + R), the per-particle evidence
// an optimal-proposal filter weights by.
inline double exact_transition_evidence(const LinearGaussianSSM& sys,
                                        const ObservationModel& obs,
                                        const Eigen::VectorXd& x_prev,
                                        const Eigen::VectorXd& y) {
  const Eigen::MatrixXd& H = obs.H();
  const Eigen::MatrixXd S = H * sys.Q() * H.transpose() + obs.noise_cov();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw std::runtime_error("singular evidence covariance");
  const Eigen::VectorXd r = y - H * sys.A() * x_prev;
  const double quad = r.dot(ldlt.solve(r));
  const double logdet = ldlt.vectorD().array().log().sum();
  return -0.5 * (quad + logdet + obs.obs_dim() * std::log(2.0 * M_PI));
}

// p(x^{k+1} | x^k, y^{k+1}): Gaussian with precision Q^-1 + H^T R^-1 H.
inline GaussianState exact_guided_posterior(const LinearGaussianSSM& sys,
                                            const ObservationModel& obs,
                                            const Eigen::VectorXd& x_prev,
                                            const Eigen::VectorXd& y) {
  const Eigen::Index d = sys.dim();
  const Eigen::MatrixXd& H = obs.H();
  const Eigen::VectorXd rinv = obs.noise_std().array().square().inverse();
  const Eigen::MatrixXd q_inv =
      Eigen::LLT<Eigen::MatrixXd>(sys.Q()).solve(Eigen::MatrixXd::Identity(d, d));
  const Eigen::MatrixXd prec =
      q_inv + H.transpose() * rinv.asDiagonal() * H;
  Eigen::LLT<Eigen::MatrixXd> llt(prec);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("guided posterior precision is not positive definite");
  GaussianState st;
  st.cov = llt.solve(Eigen::MatrixXd::Identity(d, d));
  st.mean = llt.solve(q_inv * (sys.A() * x_prev) +
                      H.transpose() * rinv.cwiseProduct(y).eval());
  return st;
}

// Fixed point of P <- A P A^T + Q (exists for stable A).
inline Eigen::MatrixXd lg_stationary_covariance(const LinearGaussianSSM& sys,
                                                int max_iters = 10000,
                                                double tol = 1e-13) {
  if (!sys.stable())
    throw std::invalid_argument("stationary covariance needs spectral radius < 1");
  Eigen::MatrixXd P = sys.Q();
  for (int i = 0; i < max_iters; ++i) {
    Eigen::MatrixXd next = sys.A() * P * sys.A().transpose() + sys.Q();
    const double delta = (next - P).cwiseAbs().maxCoeff();
    P = std::move(next);
    if (delta < tol) return P;
  }
  throw std::runtime_error("stationary covariance iteration did not converge");
}

// Diffused transition kernel at time t: x_t | x_prev ~ N(alpha A x_prev,
// alpha^2 Q + sigma^2 I). Score and posterior mean are closed-form and serve
// as ground truth for denoiser and guidance tests.
inline Eigen::VectorXd lg_marginal_score(const LinearGaussianSSM& sys,
                                         const NoiseSchedule& schedule,
                                         const Eigen::VectorXd& x_t,
                                         const Eigen::VectorXd& x_prev, double t) {
  const double a = schedule.alpha(t);
  const double s = schedule.sigma(t);
  const Eigen::Index d = sys.dim();
  const Eigen::MatrixXd cov =
      a * a * sys.Q() + s * s * Eigen::MatrixXd::Identity(d, d);
  return Eigen::LLT<Eigen::MatrixXd>(cov).solve(a * sys.A() * x_prev - x_t);
}

inline Eigen::VectorXd lg_posterior_mean(const LinearGaussianSSM& sys,
                                         const NoiseSchedule& schedule,
                                         const Eigen::VectorXd& x_t,
                                         const Eigen::VectorXd& x_prev, double t) {
  // E[x | x_t] = (Q^-1 + (a^2/s^2) I)^-1 (Q^-1 A x_prev + (a/s^2) x_t)
  const double a = schedule.alpha(t);
  const double s = schedule.sigma(t);
  if (s <= 0.0) throw std::domain_error("posterior mean undefined at sigma = 0");
  const Eigen::Index d = sys.dim();
  const Eigen::MatrixXd q_inv =
      Eigen::LLT<Eigen::MatrixXd>(sys.Q()).solve(Eigen::MatrixXd::Identity(d, d));
  const Eigen::MatrixXd prec =
      q_inv + (a * a / (s * s)) * Eigen::MatrixXd::Identity(d, d);
  return Eigen::LLT<Eigen::MatrixXd>(prec).solve(q_inv * (sys.A() * x_prev) +
                                                 (a / (s * s)) * x_t);
}

}  // namespace diffda
