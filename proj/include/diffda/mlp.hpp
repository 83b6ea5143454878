#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "diffda/denoiser.hpp"
#include "diffda/errors.hpp"
#include "diffda/rng.hpp"
#include "diffda/schedule.hpp"

namespace diffda {

inline Eigen::ArrayXXd silu(const Eigen::ArrayXXd& z) {
  return z / (1.0 + (-z).exp());
}

inline Eigen::ArrayXXd silu_grad(const Eigen::ArrayXXd& z) {
  const Eigen::ArrayXXd s = 1.0 / (1.0 + (-z).exp());
  return s * (1.0 + z * (1.0 - s));
}

// Fully connected conditional denoiser. The network sees
//   [c_in x_tilde, x_prev / sigma_data, c_noise]
// and the output is assembled as c_skip x_tilde + c_out F(.), with
//   s2     = sigma^2 + sigma_data^2
//   gate   = sigma_data^2 / s2
//   c_in   = gate / sqrt(s2)
//   c_skip = gate
//   c_out  = sigma sigma_data / sqrt(s2)
//   c_noise = log(sigma) / 4.
// The gate factor on c_in keeps the network Jacobian's contribution to
// sigma^2 dD/dx_t bounded at large sigma, so downstream matrix-free systems
// built from this Jacobian stay near the well-posed skip-term limit.
// Schedules with alpha < 1 are folded out by the caller-facing methods:
// x_tilde = x_t / alpha carries noise level sigma_tilde = sigma / alpha.
class MlpDenoiser final : public Denoiser {
 public:
  struct Layer {
    Eigen::MatrixXd W;  // out x in
    Eigen::VectorXd b;
  };

  MlpDenoiser(int dim, std::vector<int> hidden, NoiseSchedule schedule,
              double sigma_data, std::uint64_t init_seed = 0)
      : dim_(dim), hidden_(std::move(hidden)), schedule_(schedule),
        sigma_data_(sigma_data) {
    if (dim_ < 1 || hidden_.empty())
      throw std::invalid_argument("denoiser needs dim >= 1 and a hidden layer");
    if (!(sigma_data_ > 0.0))
      throw std::invalid_argument("sigma_data must be positive");
    Rng rng(splitmix64(init_seed += 0xa0761d6478bd642fULL));
    int in = 2 * dim_ + 1;
    for (std::size_t l = 0; l <= hidden_.size(); ++l) {
      const int out = l < hidden_.size() ? hidden_[l] : dim_;
      Layer layer;
      layer.W.resize(out, in);
      layer.b.resize(out);
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      for (Eigen::Index j = 0; j < layer.W.size(); ++j)
        layer.W.data()[j] = (2.0 * rng.uniform() - 1.0) * bound;
      for (Eigen::Index j = 0; j < out; ++j)
        layer.b[j] = (2.0 * rng.uniform() - 1.0) * bound;
      layers_.push_back(std::move(layer));
      in = out;
    }
  }

  Eigen::Index dim() const override { return dim_; }
  const std::vector<int>& hidden() const { return hidden_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  double sigma_data() const { return sigma_data_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.W.size() + l.b.size();
    return n;
  }

  struct Precond {
    double gate, c_in, c_skip, c_out, c_noise;
  };

  Precond precond(double sigma) const {
    const double sd = sigma_data_;
    const double s2 = sigma * sigma + sd * sd;
    Precond p;
    p.gate = sd * sd / s2;
    p.c_in = p.gate / std::sqrt(s2);
    p.c_skip = p.gate;
    p.c_out = sigma * sd / std::sqrt(s2);
    p.c_noise = std::log(sigma) / 4.0;
    return p;
  }

  // Noise-space form: X_noisy = x + sigma eps, returns E[x | .].
  Eigen::MatrixXd denoise_sigma(const Eigen::MatrixXd& X_noisy,
                                const Eigen::MatrixXd& X_prev, double sigma) const {
    const Precond p = precond(sigma);
    std::vector<Eigen::MatrixXd> pre;
    const Eigen::MatrixXd f = forward(assemble_input(X_noisy, X_prev, p), pre);
    return p.c_skip * X_noisy + p.c_out * f;
  }

  Eigen::MatrixXd denoise(const Eigen::MatrixXd& X_t, const Eigen::MatrixXd& X_prev,
                          double t) const override {
    const auto [a, sig] = folded(t);
    return denoise_sigma(X_t / a, X_prev, sig);
  }

  std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)> vjp_operator(
      const Eigen::MatrixXd& X_t, const Eigen::MatrixXd& X_prev,
      double t) const override {
    const auto [a, sig] = folded(t);
    const Precond p = precond(sig);
    auto pre = std::make_shared<std::vector<Eigen::MatrixXd>>();
    forward(assemble_input(X_t / a, X_prev, p), *pre);
    return [this, a, p, pre](const Eigen::MatrixXd& U) {
      Eigen::MatrixXd T = p.c_out * U;
      for (std::size_t l = layers_.size(); l-- > 0;) {
        T = T * layers_[l].W;
        if (l > 0) T.array() *= silu_grad((*pre)[l - 1].array());
      }
      return ((p.c_in * T.leftCols(dim_) + p.c_skip * U) / a).eval();
    };
  }

  // Forward pass keeping pre-activations for backprop; used by the trainer.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& input,
                          std::vector<Eigen::MatrixXd>& pre_activations) const {
    pre_activations.clear();
    Eigen::MatrixXd h = input;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Eigen::MatrixXd z = h * layers_[l].W.transpose();
      z.rowwise() += layers_[l].b.transpose();
      if (l + 1 < layers_.size()) {
        pre_activations.push_back(z);
        h = silu(z.array()).matrix();
      } else {
        h = std::move(z);
      }
    }
    return h;
  }

  Eigen::MatrixXd assemble_input(const Eigen::MatrixXd& X_noisy,
                                 const Eigen::MatrixXd& X_prev,
                                 const Precond& p) const {
    Eigen::MatrixXd in(X_noisy.rows(), 2 * dim_ + 1);
    in.leftCols(dim_) = p.c_in * X_noisy;
    in.middleCols(dim_, dim_) = X_prev / sigma_data_;
    in.col(2 * dim_).setConstant(p.c_noise);
    return in;
  }

  void save(const std::string& path) const {
    nlohmann::ordered_json header;
    header["format"] = "diffda-mlp-v1";
    header["dim"] = dim_;
    header["hidden"] = hidden_;
    header["sigma_data"] = sigma_data_;
    if (schedule_.kind() == ScheduleKind::variance_exploding) {
      header["schedule"] = {{"kind", "variance-exploding"},
                            {"sigma_min", schedule_.sigma_min()},
                            {"sigma_max", schedule_.sigma_max()}};
    } else {
      header["schedule"] = {{"kind", "variance-preserving"},
                            {"beta_min", schedule_.beta_min()},
                            {"beta_max", schedule_.beta_max()}};
    }
    char hash_hex[17];
    std::snprintf(hash_hex, sizeof hash_hex, "%016llx",
                  static_cast<unsigned long long>(schedule_.hash()));
    header["schedule_hash"] = hash_hex;
    header["param_count"] = param_count();
    header["layout"] = "col-major";
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    const std::uint64_t len = text.size();
    unsigned char lenb[8];
    for (int i = 0; i < 8; ++i) lenb[i] = static_cast<unsigned char>(len >> (8 * i));
    out.write(reinterpret_cast<const char*>(lenb), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& l : layers_) {
      out.write(reinterpret_cast<const char*>(l.W.data()),
                static_cast<std::streamsize>(l.W.size() * sizeof(double)));
      out.write(reinterpret_cast<const char*>(l.b.data()),
                static_cast<std::streamsize>(l.b.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("short write on checkpoint: " + path);
  }

  static MlpDenoiser load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingInputError("cannot open checkpoint: " + path);
    unsigned char lenb[8];
    in.read(reinterpret_cast<char*>(lenb), 8);
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(lenb[i]) << (8 * i);
    if (!in || len == 0 || len > (1u << 20))
      throw std::runtime_error("corrupt checkpoint header: " + path);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    nlohmann::json header = nlohmann::json::parse(text, nullptr, false);
    if (header.is_discarded() || header.value("format", "") != "diffda-mlp-v1")
      throw std::runtime_error("unrecognized checkpoint format: " + path);

    const auto& sj = header.at("schedule");
    NoiseSchedule schedule =
        sj.at("kind") == "variance-exploding"
            ? NoiseSchedule::variance_exploding(sj.at("sigma_min"), sj.at("sigma_max"))
            : NoiseSchedule::variance_preserving(sj.at("beta_min"), sj.at("beta_max"));

    MlpDenoiser model(header.at("dim"), header.at("hidden").get<std::vector<int>>(),
                      schedule, header.at("sigma_data"));
    if (model.param_count() != header.at("param_count").get<std::size_t>())
      throw std::runtime_error("checkpoint parameter count disagrees with header");
    for (auto& l : model.layers_) {
      in.read(reinterpret_cast<char*>(l.W.data()),
              static_cast<std::streamsize>(l.W.size() * sizeof(double)));
      in.read(reinterpret_cast<char*>(l.b.data()),
              static_cast<std::streamsize>(l.b.size() * sizeof(double)));
    }
    if (!in) throw std::runtime_error("checkpoint truncated: " + path);
    return model;
  }

 private:
  std::pair<double, double> folded(double t) const {
    const double a = schedule_.alpha(t);
    const double s = schedule_.sigma(t);
    if (s <= 0.0) throw std::domain_error("denoiser undefined at sigma = 0");
    return {a, s / a};
  }

  int dim_;
  std::vector<int> hidden_;
  NoiseSchedule schedule_;
  double sigma_data_;
  std::vector<Layer> layers_;
};

}  // namespace diffda
