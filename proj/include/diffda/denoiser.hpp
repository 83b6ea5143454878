#pragma once

#include <functional>
#include <memory>
#include <stdexcept>

#include <Eigen/Dense>

#include "diffda/dynamics.hpp"
#include "diffda/schedule.hpp"

namespace diffda {

// Conditional denoiser D(x_t, x_prev, t) ~= E[x_{k+1} | x_t, x^k = x_prev].
// Batched: rows of X_t / X_prev are ensemble members, handled independently.
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  virtual Eigen::Index dim() const = 0;

  virtual Eigen::MatrixXd denoise(const Eigen::MatrixXd& X_t,
                                  const Eigen::MatrixXd& X_prev, double t) const = 0;

  // Row-wise vector-Jacobian product U -> U (dD/dx_t) for fixed (X_t, X_prev, t).
  // Returned as an operator so repeated products (Krylov iterations) reuse the
  // forward pass.
  virtual std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)> vjp_operator(
      const Eigen::MatrixXd& X_t, const Eigen::MatrixXd& X_prev, double t) const = 0;

  Eigen::VectorXd denoise_one(const Eigen::VectorXd& x_t,
                              const Eigen::VectorXd& x_prev, double t) const {
    return denoise(x_t.transpose(), x_prev.transpose(), t).row(0).transpose();
  }

  Eigen::VectorXd vjp_one(const Eigen::VectorXd& x_t, const Eigen::VectorXd& x_prev,
                          double t, const Eigen::VectorXd& u) const {
    return vjp_operator(x_t.transpose(), x_prev.transpose(),
                        t)(u.transpose()).row(0).transpose();
  }
};

// Exact posterior mean for the linear-Gaussian transition kernel. With
// x_t | x ~ N(alpha x, sigma^2 I) and x | x_prev ~ N(A x_prev, Q):
//   E[x | x_t] = (Q^-1 + c I)^-1 (Q^-1 A x_prev + (alpha/sigma^2) x_t),
// c = alpha^2/sigma^2. Q^-1 is eigendecomposed once so each time level costs
// only matrix products.
class AnalyticLGDenoiser final : public Denoiser {
 public:
  AnalyticLGDenoiser(LinearGaussianSSM sys, NoiseSchedule schedule)
      : sys_(std::move(sys)), schedule_(schedule) {
    const Eigen::Index d = sys_.dim();
    const Eigen::MatrixXd q_inv =
        Eigen::LLT<Eigen::MatrixXd>(sys_.Q()).solve(Eigen::MatrixXd::Identity(d, d));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (q_inv + q_inv.transpose()));
    if (eig.info() != Eigen::Success)
      throw std::runtime_error("eigendecomposition of process precision failed");
    basis_ = eig.eigenvectors();
    evals_ = eig.eigenvalues();
    qinv_a_ = q_inv * sys_.A();
  }

  Eigen::Index dim() const override { return sys_.dim(); }

  const NoiseSchedule& schedule() const { return schedule_; }

  Eigen::MatrixXd denoise(const Eigen::MatrixXd& X_t, const Eigen::MatrixXd& X_prev,
                          double t) const override {
    const auto [a, s2] = coeffs(t);
    const Eigen::MatrixXd rhs =
        X_prev * qinv_a_.transpose() + (a / s2) * X_t;
    return apply_inverse(rhs, a * a / s2);
  }

  std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)> vjp_operator(
      const Eigen::MatrixXd&, const Eigen::MatrixXd&, double t) const override {
    const auto [a, s2] = coeffs(t);
    const double c = a * a / s2;
    const double scale = a / s2;
    return [this, c, scale](const Eigen::MatrixXd& U) {
      return apply_inverse(scale * U, c);
    };
  }

 private:
  std::pair<double, double> coeffs(double t) const {
    const double a = schedule_.alpha(t);
    const double s = schedule_.sigma(t);
    if (s <= 0.0) throw std::domain_error("denoiser undefined at sigma = 0");
    return {a, s * s};
  }

  // Rows r -> r (Qinv + c I)^-1 via the cached eigenbasis.
  Eigen::MatrixXd apply_inverse(const Eigen::MatrixXd& rhs, double c) const {
    const Eigen::VectorXd inv = (evals_.array() + c).inverse();
    return ((rhs * basis_) * inv.asDiagonal()) * basis_.transpose();
  }

  LinearGaussianSSM sys_;
  NoiseSchedule schedule_;
  Eigen::MatrixXd basis_;
  Eigen::VectorXd evals_;
  Eigen::MatrixXd qinv_a_;
};

// Tweedie: grad_x log p_t(x_t | x_prev) = sigma^-2 (alpha D(x_t) - x_t).
inline Eigen::MatrixXd score_from_denoiser(const Denoiser& den,
                                           const Eigen::MatrixXd& X_t,
                                           const Eigen::MatrixXd& X_prev, double t,
                                           const NoiseSchedule& schedule) {
  const double a = schedule.alpha(t);
  const double s = schedule.sigma(t);
  if (s <= 0.0) throw std::domain_error("score undefined at sigma = 0");
  return (a * den.denoise(X_t, X_prev, t) - X_t) / (s * s);
}

}  // namespace diffda
