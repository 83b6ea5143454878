#pragma once

#include <stdexcept>
#include <variant>

#include <Eigen/Dense>

#include "diffda/rng.hpp"

namespace diffda {

// x_{k+1} = A x_k + w,  w ~ N(0, Q).
class LinearGaussianSSM {
 public:
  LinearGaussianSSM(Eigen::MatrixXd A, Eigen::MatrixXd Q, Eigen::VectorXd x0)
      : A_(std::move(A)), Q_(std::move(Q)), x0_(std::move(x0)) {
    const auto d = A_.rows();
    if (A_.cols() != d || Q_.rows() != d || Q_.cols() != d || x0_.size() != d)
      throw std::invalid_argument("linear-Gaussian system dimensions disagree");
    if (!Q_.isApprox(Q_.transpose(), 1e-12))
      throw std::invalid_argument("process covariance must be symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(Q_);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("process covariance must be positive definite");
    chol_q_ = llt.matrixL();
    spectral_radius_ = A_.eigenvalues().cwiseAbs().maxCoeff();
  }

  Eigen::Index dim() const { return A_.rows(); }
  const Eigen::MatrixXd& A() const { return A_; }
  const Eigen::MatrixXd& Q() const { return Q_; }
  const Eigen::VectorXd& x0() const { return x0_; }
  const Eigen::MatrixXd& chol_q() const { return chol_q_; }
  double spectral_radius() const { return spectral_radius_; }
  bool stable() const { return spectral_radius_ < 1.0; }

  Eigen::VectorXd transition_mean(const Eigen::VectorXd& x) const { return A_ * x; }

  Eigen::VectorXd step(const Eigen::VectorXd& x, Rng& rng) const {
    return A_ * x + chol_q_ * rng.normal_vector(dim());
  }

 private:
  Eigen::MatrixXd A_, Q_;
  Eigen::VectorXd x0_;
  Eigen::MatrixXd chol_q_;
  double spectral_radius_ = 0.0;
};

// Cyclic Lorenz-96: dx_i/dt = (x_{i+1} - x_{i-2}) x_{i-1} - x_i + F,
// integrated with RK4; one assimilation cycle = cycle_length RK4 steps.
struct Lorenz96System {
  int dim = 40;
  double forcing = 8.0;
  double dt = 0.01;
  int cycle_length = 10;

  Eigen::VectorXd fixed_point() const {
    return Eigen::VectorXd::Constant(dim, forcing);
  }
};

inline Eigen::VectorXd l96_rhs(const Lorenz96System& sys, const Eigen::VectorXd& x) {
  if (x.size() != sys.dim) throw std::invalid_argument("state size mismatch");
  const int d = sys.dim;
  Eigen::VectorXd dx(d);
  for (int i = 0; i < d; ++i) {
    const double xp1 = x[(i + 1) % d];
    const double xm1 = x[(i - 1 + d) % d];
    const double xm2 = x[(i - 2 + d) % d];
    dx[i] = (xp1 - xm2) * xm1 - x[i] + sys.forcing;
  }
  return dx;
}

inline Eigen::VectorXd rk4_step(const Lorenz96System& sys, const Eigen::VectorXd& x,
                                double dt) {
  const Eigen::VectorXd k1 = l96_rhs(sys, x);
  const Eigen::VectorXd k2 = l96_rhs(sys, x + 0.5 * dt * k1);
  const Eigen::VectorXd k3 = l96_rhs(sys, x + 0.5 * dt * k2);
  const Eigen::VectorXd k4 = l96_rhs(sys, x + dt * k3);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline Eigen::VectorXd l96_cycle(const Lorenz96System& sys, Eigen::VectorXd x) {
  for (int s = 0; s < sys.cycle_length; ++s) x = rk4_step(sys, x, sys.dt);
  return x;
}

using SystemModel = std::variant<LinearGaussianSSM, Lorenz96System>;

inline Eigen::Index state_dim(const SystemModel& sys) {
  return std::visit([](const auto& s) -> Eigen::Index {
    if constexpr (std::is_same_v<std::decay_t<decltype(s)>, LinearGaussianSSM>)
      return s.dim();
    else
      return s.dim;
  }, sys);
}

inline Eigen::VectorXd step_truth(const SystemModel& sys, const Eigen::VectorXd& x,
                                  Rng& rng) {
  if (const auto* lg = std::get_if<LinearGaussianSSM>(&sys)) return lg->step(x, rng);
  return l96_cycle(std::get<Lorenz96System>(sys), x);
}

// y = H x + eps, eps ~ N(0, diag(noise_std^2)). H selects coordinates
// offset, offset+stride, ... so it always has full row rank.
class ObservationModel {
 public:
  ObservationModel(Eigen::MatrixXd H, Eigen::VectorXd noise_std)
      : H_(std::move(H)), noise_std_(std::move(noise_std)) {
    if (H_.rows() == 0 || H_.rows() > H_.cols())
      throw std::invalid_argument("observation operator must map down to 1..dim rows");
    if (noise_std_.size() != H_.rows() || (noise_std_.array() <= 0.0).any())
      throw std::invalid_argument("observation noise stds must be positive, one per row");
  }

  static ObservationModel stride_mask(int dim, int stride, double noise_std,
                                      int offset = 0) {
    if (stride < 1 || offset < 0 || offset >= dim)
      throw std::invalid_argument("bad observation stride or offset");
    const int m = (dim - offset + stride - 1) / stride;
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m, dim);
    for (int r = 0; r < m; ++r) H(r, offset + r * stride) = 1.0;
    return ObservationModel(H, Eigen::VectorXd::Constant(m, noise_std));
  }

  Eigen::Index obs_dim() const { return H_.rows(); }
  Eigen::Index state_dim() const { return H_.cols(); }
  const Eigen::MatrixXd& H() const { return H_; }
  const Eigen::VectorXd& noise_std() const { return noise_std_; }

  Eigen::MatrixXd noise_cov() const {
    return noise_std_.array().square().matrix().asDiagonal();
  }

  Eigen::VectorXd observe(const Eigen::VectorXd& x, Rng& rng) const {
    return H_ * x + noise_std_.cwiseProduct(rng.normal_vector(obs_dim()));
  }

  // log N(y; Hx, diag(noise_std^2))
  double log_density(const Eigen::VectorXd& y, const Eigen::VectorXd& x) const {
    const Eigen::VectorXd r = (y - H_ * x).cwiseQuotient(noise_std_);
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < noise_std_.size(); ++i)
      logdet += std::log(noise_std_[i] * noise_std_[i]);
    return -0.5 * (r.squaredNorm() + logdet +
                   obs_dim() * std::log(2.0 * M_PI));
  }

 private:
  Eigen::MatrixXd H_;
  Eigen::VectorXd noise_std_;
};

// truth rows x^0..x^K, observation rows y^1..y^K.
struct TwinData {
  Eigen::MatrixXd truth;
  Eigen::MatrixXd obs;
};

inline TwinData generate_twin(const SystemModel& sys, const ObservationModel& obs_model,
                              int n_cycles, std::uint64_t seed,
                              int l96_spinup_steps = 1000) {
  if (n_cycles < 1) throw std::invalid_argument("need at least one cycle");
  const Eigen::Index d = state_dim(sys);
  if (obs_model.state_dim() != d)
    throw std::invalid_argument("observation operator does not match state dimension");
  Rng rng(splitmix64(seed += 0x632be59bd9b4e019ULL));

  Eigen::VectorXd x;
  if (const auto* lg = std::get_if<LinearGaussianSSM>(&sys)) {
    x = lg->x0();
  } else {
    const auto& l96 = std::get<Lorenz96System>(sys);
    x = l96.fixed_point() + 0.01 * rng.normal_vector(d);
    for (int s = 0; s < l96_spinup_steps; ++s) x = rk4_step(l96, x, l96.dt);
  }

  TwinData data;
  data.truth.resize(n_cycles + 1, d);
  data.obs.resize(n_cycles, obs_model.obs_dim());
  data.truth.row(0) = x.transpose();
  for (int k = 0; k < n_cycles; ++k) {
    x = step_truth(sys, x, rng);
    data.truth.row(k + 1) = x.transpose();
    data.obs.row(k) = obs_model.observe(x, rng).transpose();
  }
  return data;
}

}  // namespace diffda
