#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "diffda/mlp.hpp"
#include "diffda/rng.hpp"
#include "diffda/schedule.hpp"

namespace diffda {

struct TrainConfig {
  int epochs = 200;
  int batch = 128;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double lr_decay = 0.5;
  int lr_decay_every = 0;  // 0 keeps the learning rate constant
  double cond_noise = 0.0; // std of Gaussian augmentation on the conditioning input
  double holdout_fraction = 0.05;
  std::uint64_t seed = 0;
};

struct TrainResult {
  MlpDenoiser model;
  Eigen::MatrixXd loss_history;  // rows: epoch; cols: train loss, holdout loss
  double trivial_holdout_loss = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

// One noising draw per row: sigma log-uniform in [lo, hi].
struct NoisedBatch {
  Eigen::MatrixXd x_noisy;
  Eigen::MatrixXd cond;
  Eigen::ArrayXd sigma;
};

inline NoisedBatch noise_rows(const Eigen::MatrixXd& X_prev,
                              const Eigen::MatrixXd& X_next, double lo, double hi,
                              double cond_noise, Rng& rng) {
  const Eigen::Index b = X_next.rows();
  const Eigen::Index d = X_next.cols();
  NoisedBatch out;
  out.sigma.resize(b);
  out.x_noisy.resize(b, d);
  out.cond.resize(b, d);
  const double log_lo = std::log(lo), log_hi = std::log(hi);
  for (Eigen::Index i = 0; i < b; ++i) {
    out.sigma[i] = std::exp(log_lo + (log_hi - log_lo) * rng.uniform());
    for (Eigen::Index j = 0; j < d; ++j)
      out.x_noisy(i, j) = X_next(i, j) + out.sigma[i] * rng.normal();
    for (Eigen::Index j = 0; j < d; ++j)
      out.cond(i, j) = X_prev(i, j) +
                       (cond_noise > 0.0 ? cond_noise * rng.normal() : 0.0);
  }
  return out;
}

// Per-row preconditioning, mirroring MlpDenoiser::precond for a sigma vector.
struct PrecondRows {
  Eigen::ArrayXd c_in, c_skip, c_out, c_noise, lambda;
};

inline PrecondRows precond_rows(const Eigen::ArrayXd& sigma, double sd) {
  PrecondRows p;
  const Eigen::ArrayXd s2 = sigma.square() + sd * sd;
  const Eigen::ArrayXd gate = (sd * sd) / s2;
  p.c_in = gate / s2.sqrt();
  p.c_skip = gate;
  p.c_out = sigma * sd / s2.sqrt();
  p.c_noise = sigma.log() / 4.0;
  p.lambda = s2 / (sigma * sd).square();
  return p;
}

inline Eigen::MatrixXd assemble_rows(const NoisedBatch& nb, const PrecondRows& p,
                                     double sd) {
  const Eigen::Index b = nb.x_noisy.rows();
  const Eigen::Index d = nb.x_noisy.cols();
  Eigen::MatrixXd in(b, 2 * d + 1);
  in.leftCols(d) = (nb.x_noisy.array().colwise() * p.c_in).matrix();
  in.middleCols(d, d) = nb.cond / sd;
  in.col(2 * d) = p.c_noise.matrix();
  return in;
}

inline double weighted_loss(const Eigen::MatrixXd& denoised,
                            const Eigen::MatrixXd& target,
                            const Eigen::ArrayXd& lambda) {
  const Eigen::ArrayXXd sq = (denoised - target).array().square();
  return (sq.colwise() * lambda).mean();
}

}  // namespace detail

// Denoising score matching on transition pairs (rows of X_prev -> X_next).
inline TrainResult train_denoiser(const Eigen::MatrixXd& X_prev,
                                  const Eigen::MatrixXd& X_next,
                                  const NoiseSchedule& schedule,
                                  const std::vector<int>& hidden,
                                  const TrainConfig& cfg) {
  if (X_prev.rows() != X_next.rows() || X_prev.cols() != X_next.cols())
    throw std::invalid_argument("training pair matrices must have matching shapes");
  const Eigen::Index n = X_next.rows();
  const Eigen::Index d = X_next.cols();
  if (n < 2) throw std::invalid_argument("need at least two training pairs");
  if (cfg.batch < 1 || cfg.epochs < 0 || !(cfg.lr > 0.0))
    throw std::invalid_argument("bad training configuration");

  // Split, then set sigma_data from the training targets.
  std::vector<Eigen::Index> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  {
    Rng split_rng = substream(cfg.seed, 0, 0);
    for (Eigen::Index i = n - 1; i > 0; --i)
      std::swap(perm[i], perm[split_rng.index(static_cast<std::uint64_t>(i) + 1)]);
  }
  const Eigen::Index n_hold =
      std::min<Eigen::Index>(n - 1, static_cast<Eigen::Index>(
                                        std::llround(cfg.holdout_fraction * n)));
  const Eigen::Index n_train = n - n_hold;
  Eigen::MatrixXd train_prev(n_train, d), train_next(n_train, d);
  Eigen::MatrixXd hold_prev(n_hold, d), hold_next(n_hold, d);
  for (Eigen::Index i = 0; i < n_train; ++i) {
    train_prev.row(i) = X_prev.row(perm[i]);
    train_next.row(i) = X_next.row(perm[i]);
  }
  for (Eigen::Index i = 0; i < n_hold; ++i) {
    hold_prev.row(i) = X_prev.row(perm[n_train + i]);
    hold_next.row(i) = X_next.row(perm[n_train + i]);
  }
  const double sigma_data =
      std::sqrt(train_next.array().square().mean());

  MlpDenoiser model(static_cast<int>(d), hidden, schedule, sigma_data, cfg.seed);

  const double sig_hi = schedule.sigma(1.0) / schedule.alpha(1.0);
  double sig_lo = schedule.sigma(0.0) / schedule.alpha(0.0);
  if (!(sig_lo > 0.0)) sig_lo = 1e-4 * sig_hi;

  // Fixed holdout noising so the holdout curve is evaluation-noise free.
  detail::NoisedBatch hold;
  detail::PrecondRows hold_p;
  TrainResult result{std::move(model), Eigen::MatrixXd(cfg.epochs, 2)};
  if (n_hold > 0) {
    Rng hold_rng = substream(cfg.seed, 0, 1);
    hold = detail::noise_rows(hold_prev, hold_next, sig_lo, sig_hi, 0.0, hold_rng);
    hold_p = detail::precond_rows(hold.sigma, sigma_data);
    result.trivial_holdout_loss =
        detail::weighted_loss(hold.x_noisy, hold_next, hold_p.lambda);
  }

  auto& layers = result.model.layers();
  std::vector<Eigen::MatrixXd> mW(layers.size()), vW(layers.size());
  std::vector<Eigen::VectorXd> mb(layers.size()), vb(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    mW[l] = Eigen::MatrixXd::Zero(layers[l].W.rows(), layers[l].W.cols());
    vW[l] = mW[l];
    mb[l] = Eigen::VectorXd::Zero(layers[l].b.size());
    vb[l] = mb[l];
  }
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  long adam_t = 0;

  std::vector<Eigen::Index> order(n_train);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.lr;
    if (cfg.lr_decay_every > 0)
      lr *= std::pow(cfg.lr_decay, epoch / cfg.lr_decay_every);

    Rng shuffle_rng = substream(cfg.seed, static_cast<std::uint64_t>(epoch) + 1, 0);
    for (Eigen::Index i = n_train - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.index(static_cast<std::uint64_t>(i) + 1)]);
    Rng noise_rng = substream(cfg.seed, static_cast<std::uint64_t>(epoch) + 1, 1);

    double epoch_loss = 0.0;
    Eigen::Index seen = 0;
    for (Eigen::Index start = 0; start < n_train; start += cfg.batch) {
      const Eigen::Index b = std::min<Eigen::Index>(cfg.batch, n_train - start);
      Eigen::MatrixXd bp(b, d), bn(b, d);
      for (Eigen::Index i = 0; i < b; ++i) {
        bp.row(i) = train_prev.row(order[start + i]);
        bn.row(i) = train_next.row(order[start + i]);
      }
      const detail::NoisedBatch nb =
          detail::noise_rows(bp, bn, sig_lo, sig_hi, cfg.cond_noise, noise_rng);
      const detail::PrecondRows p = detail::precond_rows(nb.sigma, sigma_data);
      const Eigen::MatrixXd input = detail::assemble_rows(nb, p, sigma_data);

      std::vector<Eigen::MatrixXd> pre;
      const Eigen::MatrixXd f = result.model.forward(input, pre);
      const Eigen::MatrixXd denoised =
          (nb.x_noisy.array().colwise() * p.c_skip).matrix() +
          (f.array().colwise() * p.c_out).matrix();
      const double loss = detail::weighted_loss(denoised, bn, p.lambda);
      if (!std::isfinite(loss))
        throw std::runtime_error("training diverged (non-finite loss) at epoch " +
                                 std::to_string(epoch));
      epoch_loss += loss * static_cast<double>(b);
      seen += b;

      // d loss / d f, folding in the per-row lambda and c_out factors.
      const double scale = 2.0 / static_cast<double>(b * d);
      Eigen::MatrixXd g =
          (((denoised - bn).array().colwise() * (p.lambda * p.c_out)) * scale)
              .matrix();

      adam_t += 1;
      const double bc1 = 1.0 - std::pow(beta1, adam_t);
      const double bc2 = 1.0 - std::pow(beta2, adam_t);
      auto adam_step = [&](auto& param, const auto& grad, auto& m, auto& v) {
        m = beta1 * m + (1.0 - beta1) * grad;
        v.array() = beta2 * v.array() + (1.0 - beta2) * grad.array().square();
        param.array() -=
            lr * ((m.array() / bc1) / ((v.array() / bc2).sqrt() + adam_eps) +
                  cfg.weight_decay * param.array());
      };
      for (std::size_t l = layers.size(); l-- > 0;) {
        Eigen::MatrixXd act_store;
        const Eigen::MatrixXd* act = &input;
        if (l > 0) {
          act_store = silu(pre[l - 1].array()).matrix();
          act = &act_store;
        }
        const Eigen::MatrixXd gW = g.transpose() * (*act);
        const Eigen::VectorXd gb = g.colwise().sum().transpose();
        if (l > 0) {
          g = (g * layers[l].W).eval();
          g.array() *= silu_grad(pre[l - 1].array());
        }
        adam_step(layers[l].W, gW, mW[l], vW[l]);
        adam_step(layers[l].b, gb, mb[l], vb[l]);
      }
    }
    result.loss_history(epoch, 0) = epoch_loss / static_cast<double>(seen);

    if (n_hold > 0) {
      const Eigen::MatrixXd input = detail::assemble_rows(hold, hold_p, sigma_data);
      std::vector<Eigen::MatrixXd> pre;
      const Eigen::MatrixXd f = result.model.forward(input, pre);
      const Eigen::MatrixXd denoised =
          (hold.x_noisy.array().colwise() * hold_p.c_skip).matrix() +
          (f.array().colwise() * hold_p.c_out).matrix();
      result.loss_history(epoch, 1) =
          detail::weighted_loss(denoised, hold_next, hold_p.lambda);
    } else {
      result.loss_history(epoch, 1) = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return result;
}

}  // namespace diffda
