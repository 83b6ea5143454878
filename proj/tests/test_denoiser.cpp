#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>

#include <diffda/denoiser.hpp>
#include <diffda/mlp.hpp>
#include <diffda/oracle.hpp>

using diffda::AnalyticLGDenoiser;
using diffda::LinearGaussianSSM;
using diffda::MlpDenoiser;
using diffda::NoiseSchedule;
using diffda::Rng;

namespace {

LinearGaussianSSM ring_system(int d) {
  Eigen::MatrixXd A = 0.9 * Eigen::MatrixXd::Identity(d, d);
  for (int i = 0; i < d; ++i) A(i, (i + 1) % d) += 0.08;
  return LinearGaussianSSM(A, 0.01 * Eigen::MatrixXd::Identity(d, d),
                           Eigen::VectorXd::Zero(d));
}

}  // namespace

TEST_CASE("analytic denoiser equals the dense posterior mean") {
  const auto sys = ring_system(5);
  const auto ve = NoiseSchedule::variance_exploding();
  const AnalyticLGDenoiser den(sys, ve);
  Rng rng(31);
  const Eigen::VectorXd x_prev = rng.normal_vector(5);
  for (double t : {0.1, 0.5, 0.9}) {
    const Eigen::VectorXd x_t = rng.normal_vector(5) * ve.sigma(t);
    const Eigen::VectorXd mine = den.denoise_one(x_t, x_prev, t);
    const Eigen::VectorXd exact = diffda::lg_posterior_mean(sys, ve, x_t, x_prev, t);
    REQUIRE(mine.isApprox(exact, 1e-10));
  }
}

TEST_CASE("analytic denoiser handles batches row by row") {
  const auto sys = ring_system(4);
  const auto ve = NoiseSchedule::variance_exploding();
  const AnalyticLGDenoiser den(sys, ve);
  Rng rng(5);
  Eigen::MatrixXd X_t(3, 4), X_prev(3, 4);
  for (int r = 0; r < 3; ++r) {
    X_t.row(r) = rng.normal_vector(4).transpose();
    X_prev.row(r) = rng.normal_vector(4).transpose();
  }
  const Eigen::MatrixXd batch = den.denoise(X_t, X_prev, 0.6);
  for (int r = 0; r < 3; ++r) {
    const Eigen::VectorXd one =
        den.denoise_one(X_t.row(r).transpose(), X_prev.row(r).transpose(), 0.6);
    REQUIRE(batch.row(r).transpose().isApprox(one, 1e-12));
  }
}

TEST_CASE("denoiser-derived score matches the closed-form marginal score") {
  const auto sys = ring_system(6);
  const auto ve = NoiseSchedule::variance_exploding();
  const AnalyticLGDenoiser den(sys, ve);
  Rng rng(7);
  const Eigen::VectorXd x_prev = rng.normal_vector(6);
  for (double t : {0.2, 0.55, 1.0}) {
    const Eigen::VectorXd x_t = ve.sigma(t) * rng.normal_vector(6);
    const Eigen::MatrixXd score = diffda::score_from_denoiser(
        den, x_t.transpose(), x_prev.transpose(), t, ve);
    const Eigen::VectorXd exact = diffda::lg_marginal_score(sys, ve, x_t, x_prev, t);
    REQUIRE(score.row(0).transpose().isApprox(exact, 1e-9));
  }
}

TEST_CASE("denoiser-derived score differentiates the exact log marginal") {
  const auto sys = ring_system(4);
  const auto ve = NoiseSchedule::variance_exploding();
  const AnalyticLGDenoiser den(sys, ve);
  Rng rng(23);
  const Eigen::VectorXd x_prev = rng.normal_vector(4);
  int probes = 0;
  for (double t : {0.15, 0.4, 0.7, 1.0}) {
    const double a = ve.alpha(t);
    const double s = ve.sigma(t);
    const Eigen::MatrixXd cov =
        a * a * sys.Q() + s * s * Eigen::MatrixXd::Identity(4, 4);
    const Eigen::MatrixXd cov_inv = cov.inverse();
    auto logp = [&](const Eigen::VectorXd& v) {
      const Eigen::VectorXd r = v - a * sys.A() * x_prev;
      return -0.5 * r.dot(cov_inv * r);
    };
    for (int p = 0; p < 5; ++p) {
      const Eigen::VectorXd x_t =
          a * sys.A() * x_prev + s * rng.normal_vector(4);
      const Eigen::VectorXd score =
          diffda::score_from_denoiser(den, x_t.transpose(), x_prev.transpose(), t, ve)
              .row(0).transpose();
      Eigen::VectorXd fd(4);
      for (int j = 0; j < 4; ++j) {
        const double h = 1e-4 * (1.0 + std::abs(x_t[j]));
        Eigen::VectorXd hi = x_t, lo = x_t;
        hi[j] += h;
        lo[j] -= h;
        fd[j] = (logp(hi) - logp(lo)) / (2.0 * h);
      }
      REQUIRE((score - fd).norm() / std::max(1e-12, fd.norm()) < 1e-5);
      ++probes;
    }
  }
  REQUIRE(probes == 20);
}

TEST_CASE("analytic vector-Jacobian product equals the dense Jacobian") {
  const auto sys = ring_system(4);
  const auto ve = NoiseSchedule::variance_exploding();
  const AnalyticLGDenoiser den(sys, ve);
  const double t = 0.5;
  const double a = ve.alpha(t);
  const double s2 = ve.sigma(t) * ve.sigma(t);
  const Eigen::MatrixXd q_inv = sys.Q().inverse();
  const Eigen::MatrixXd J =
      (q_inv + (a * a / s2) * Eigen::MatrixXd::Identity(4, 4)).inverse() * (a / s2);
  Rng rng(2);
  const Eigen::VectorXd x_t = rng.normal_vector(4);
  const Eigen::VectorXd x_prev = rng.normal_vector(4);
  for (int p = 0; p < 5; ++p) {
    const Eigen::VectorXd u = rng.normal_vector(4);
    const Eigen::VectorXd vjp = den.vjp_one(x_t, x_prev, t, u);
    REQUIRE(vjp.isApprox((u.transpose() * J).transpose(), 1e-10));
  }
}

TEST_CASE("analytic denoiser approaches its limits in sigma") {
  const auto sys = ring_system(4);
  const auto ve = NoiseSchedule::variance_exploding();
  const AnalyticLGDenoiser den(sys, ve);
  Rng rng(6);
  const Eigen::VectorXd x_prev = rng.normal_vector(4);
  const Eigen::VectorXd x_t = rng.normal_vector(4);

  // sigma = 100 swamps the measurement: posterior mean ~= prior mean.
  const Eigen::VectorXd top = den.denoise_one(100.0 * x_t, x_prev, 1.0);
  REQUIRE((top - sys.A() * x_prev).norm() < 1e-3);

  // sigma = 0.02 with q = 0.01: posterior mean hugs x_t.
  const Eigen::VectorXd bottom = den.denoise_one(x_t, x_prev, 0.0);
  REQUIRE((bottom - x_t).norm() < 0.1 * x_t.norm());
}

TEST_CASE("preconditioner coefficients satisfy their defining identities") {
  const auto ve = NoiseSchedule::variance_exploding();
  const MlpDenoiser den(3, {8}, ve, 2.5, 1);
  for (double sigma : {0.01, 0.5, 2.5, 40.0}) {
    const auto p = den.precond(sigma);
    const double sd = 2.5;
    const double s2 = sigma * sigma + sd * sd;
    REQUIRE(p.gate == Catch::Approx(sd * sd / s2));
    REQUIRE(p.c_skip == p.gate);
    REQUIRE(p.c_out * p.c_out * s2 == Catch::Approx(sigma * sigma * sd * sd));
    REQUIRE(p.c_in == Catch::Approx(p.gate / std::sqrt(s2)));
    REQUIRE(p.c_noise == Catch::Approx(std::log(sigma) / 4.0));
  }
  // Large sigma: skip and input gains vanish, output gain tends to sigma_data.
  const auto tail = den.precond(1e6);
  REQUIRE(tail.c_skip < 1e-11);
  REQUIRE(tail.c_out == Catch::Approx(2.5).epsilon(1e-6));
}

TEST_CASE("network vjp matches central finite differences") {
  const auto ve = NoiseSchedule::variance_exploding();
  const MlpDenoiser den(4, {16, 16}, ve, 1.3, 9);
  Rng rng(12);
  int probes = 0;
  for (double t : {0.2, 0.5, 0.8}) {
    for (int p = 0; p < 4; ++p) {
      const Eigen::VectorXd x_t = ve.sigma(t) * rng.normal_vector(4);
      const Eigen::VectorXd x_prev = rng.normal_vector(4);
      const Eigen::VectorXd u = rng.normal_vector(4);
      const Eigen::VectorXd vjp = den.vjp_one(x_t, x_prev, t, u);
      Eigen::VectorXd fd(4);
      for (int j = 0; j < 4; ++j) {
        const double h = 1e-5 * (1.0 + std::abs(x_t[j]));
        Eigen::VectorXd hi = x_t, lo = x_t;
        hi[j] += h;
        lo[j] -= h;
        fd[j] = (u.dot(den.denoise_one(hi, x_prev, t)) -
                 u.dot(den.denoise_one(lo, x_prev, t))) / (2.0 * h);
      }
      REQUIRE((vjp - fd).norm() / std::max(1e-12, fd.norm()) < 1e-4);
      ++probes;
    }
  }
  REQUIRE(probes == 12);
}

TEST_CASE("network vjp matches finite differences under alpha folding") {
  const auto vp = NoiseSchedule::variance_preserving();
  const MlpDenoiser den(3, {12}, vp, 0.8, 4);
  Rng rng(15);
  const double t = 0.6;
  const Eigen::VectorXd x_t = rng.normal_vector(3);
  const Eigen::VectorXd x_prev = rng.normal_vector(3);
  const Eigen::VectorXd u = rng.normal_vector(3);
  const Eigen::VectorXd vjp = den.vjp_one(x_t, x_prev, t, u);
  Eigen::VectorXd fd(3);
  for (int j = 0; j < 3; ++j) {
    const double h = 1e-6;
    Eigen::VectorXd hi = x_t, lo = x_t;
    hi[j] += h;
    lo[j] -= h;
    fd[j] = (u.dot(den.denoise_one(hi, x_prev, t)) -
             u.dot(den.denoise_one(lo, x_prev, t))) / (2.0 * h);
  }
  REQUIRE((vjp - fd).norm() / fd.norm() < 1e-4);
}

TEST_CASE("network batches are row independent") {
  const auto ve = NoiseSchedule::variance_exploding();
  const MlpDenoiser den(5, {16}, ve, 1.0, 3);
  Rng rng(44);
  Eigen::MatrixXd X_t(4, 5), X_prev(4, 5);
  for (int r = 0; r < 4; ++r) {
    X_t.row(r) = rng.normal_vector(5).transpose();
    X_prev.row(r) = rng.normal_vector(5).transpose();
  }
  const Eigen::MatrixXd batch = den.denoise(X_t, X_prev, 0.4);
  for (int r = 0; r < 4; ++r) {
    const Eigen::VectorXd one =
        den.denoise_one(X_t.row(r).transpose(), X_prev.row(r).transpose(), 0.4);
    REQUIRE(batch.row(r).transpose().isApprox(one, 1e-13));
  }
}

TEST_CASE("checkpoint round trip reproduces the network bit for bit") {
  const auto ve = NoiseSchedule::variance_exploding(0.05, 80.0);
  const MlpDenoiser den(4, {8, 8}, ve, 1.7, 77);
  const std::string path = "denoiser_roundtrip.ckpt";
  den.save(path);
  const MlpDenoiser back = MlpDenoiser::load(path);
  REQUIRE(back.dim() == 4);
  REQUIRE(back.hidden() == std::vector<int>{8, 8});
  REQUIRE(back.sigma_data() == den.sigma_data());
  REQUIRE(back.schedule().hash() == ve.hash());
  REQUIRE(back.layers().size() == den.layers().size());
  for (std::size_t l = 0; l < back.layers().size(); ++l) {
    REQUIRE(back.layers()[l].W == den.layers()[l].W);
    REQUIRE(back.layers()[l].b == den.layers()[l].b);
  }
  Rng rng(1);
  const Eigen::VectorXd x_t = rng.normal_vector(4);
  const Eigen::VectorXd x_prev = rng.normal_vector(4);
  REQUIRE(back.denoise_one(x_t, x_prev, 0.5) == den.denoise_one(x_t, x_prev, 0.5));
  std::remove(path.c_str());
}

TEST_CASE("corrupt or missing checkpoints are rejected") {
  REQUIRE_THROWS_AS(MlpDenoiser::load("no_such_file.ckpt"), diffda::MissingInputError);

  const auto ve = NoiseSchedule::variance_exploding();
  const MlpDenoiser den(3, {8}, ve, 1.0, 2);
  const std::string path = "denoiser_truncated.ckpt";
  den.save(path);
  {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  REQUIRE_THROWS_AS(MlpDenoiser::load(path), std::runtime_error);
  std::remove(path.c_str());

  const std::string garbled = "denoiser_garbled.ckpt";
  {
    std::ofstream out(garbled, std::ios::binary);
    out << "not a checkpoint at all";
  }
  REQUIRE_THROWS_AS(MlpDenoiser::load(garbled), std::runtime_error);
  std::remove(garbled.c_str());
}

TEST_CASE("denoiser construction validates its arguments") {
  const auto ve = NoiseSchedule::variance_exploding();
  REQUIRE_THROWS_AS(MlpDenoiser(0, {8}, ve, 1.0), std::invalid_argument);
  REQUIRE_THROWS_AS(MlpDenoiser(3, {}, ve, 1.0), std::invalid_argument);
  REQUIRE_THROWS_AS(MlpDenoiser(3, {8}, ve, 0.0), std::invalid_argument);
}
