#include <catch_amalgamated.hpp>

#include <cmath>
#include <stdexcept>

#include <diffda/schedule.hpp>

using diffda::NoiseSchedule;
using diffda::ScheduleKind;
using diffda::Warping;
using diffda::time_grid;

namespace {

// Composite Simpson quadrature of g^2 for cross-checking the closed form.
double quad_g2(const NoiseSchedule& s, double lo, double hi, int n = 2000) {
  const double h = (hi - lo) / n;
  double acc = s.diffusion_g2(lo) + s.diffusion_g2(hi);
  for (int i = 1; i < n; ++i)
    acc += (i % 2 ? 4.0 : 2.0) * s.diffusion_g2(lo + i * h);
  return acc * h / 3.0;
}

}  // namespace

TEST_CASE("variance-exploding endpoints and geometric midpoint") {
  const auto s = NoiseSchedule::variance_exploding();
  REQUIRE(s.sigma(0.0) == Catch::Approx(0.02));
  REQUIRE(s.sigma(1.0) == Catch::Approx(100.0));
  REQUIRE(s.sigma(0.5) == Catch::Approx(std::sqrt(0.02 * 100.0)));
  REQUIRE(s.alpha(0.0) == 1.0);
  REQUIRE(s.alpha(0.7) == 1.0);
  REQUIRE(s.drift_f(0.3) == 0.0);
}

TEST_CASE("variance-exploding g^2 matches the derivative of sigma^2") {
  const auto s = NoiseSchedule::variance_exploding(0.05, 30.0);
  const double h = 1e-6;
  for (double t : {0.1, 0.4, 0.8}) {
    const double fd = (std::pow(s.sigma(t + h), 2) - std::pow(s.sigma(t - h), 2)) / (2 * h);
    REQUIRE(s.diffusion_g2(t) == Catch::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("variance-exploding integrated g^2 is the sigma^2 increment") {
  const auto s = NoiseSchedule::variance_exploding();
  for (auto [lo, hi] : {std::pair{0.0, 1.0}, {0.2, 0.7}, {0.35, 0.36}}) {
    const double exact = s.sigma(hi) * s.sigma(hi) - s.sigma(lo) * s.sigma(lo);
    REQUIRE(s.integrated_g2(lo, hi) == Catch::Approx(exact).margin(1e-14));
    REQUIRE(s.integrated_g2(lo, hi) == Catch::Approx(quad_g2(s, lo, hi)).epsilon(1e-8));
  }
  REQUIRE(s.integrated_g2(0.5, 0.5) == 0.0);
}

TEST_CASE("variance-preserving law keeps alpha^2 + sigma^2 = 1") {
  const auto s = NoiseSchedule::variance_preserving();
  REQUIRE(s.alpha(0.0) == Catch::Approx(1.0));
  REQUIRE(s.sigma(0.0) == Catch::Approx(0.0).margin(1e-12));
  for (double t : {0.1, 0.3, 0.5, 0.9, 1.0}) {
    const double a = s.alpha(t);
    const double sig = s.sigma(t);
    REQUIRE(a * a + sig * sig == Catch::Approx(1.0).margin(1e-12));
  }
  REQUIRE(s.alpha(1.0) < 0.01);
}

TEST_CASE("variance-preserving coefficients follow the linear beta ramp") {
  const auto s = NoiseSchedule::variance_preserving(0.2, 10.0);
  for (double t : {0.0, 0.25, 1.0}) {
    const double beta = 0.2 + t * (10.0 - 0.2);
    REQUIRE(s.diffusion_g2(t) == Catch::Approx(beta));
    REQUIRE(s.drift_f(t) == Catch::Approx(-0.5 * beta));
  }
  REQUIRE(s.integrated_g2(0.1, 0.9) == Catch::Approx(quad_g2(s, 0.1, 0.9)).epsilon(1e-10));
}

TEST_CASE("times outside the unit interval are rejected") {
  const auto s = NoiseSchedule::variance_exploding();
  REQUIRE_THROWS_AS(s.sigma(-0.01), std::domain_error);
  REQUIRE_THROWS_AS(s.sigma(1.01), std::domain_error);
  REQUIRE_THROWS_AS(s.alpha(2.0), std::domain_error);
  REQUIRE_THROWS_AS(s.integrated_g2(0.5, 0.2), std::domain_error);
}

TEST_CASE("invalid schedule parameters are rejected") {
  REQUIRE_THROWS_AS(NoiseSchedule::variance_exploding(0.0, 1.0), std::invalid_argument);
  REQUIRE_THROWS_AS(NoiseSchedule::variance_exploding(2.0, 1.0), std::invalid_argument);
  REQUIRE_THROWS_AS(NoiseSchedule::variance_preserving(-1.0, 5.0), std::invalid_argument);
  REQUIRE_THROWS_AS(NoiseSchedule::variance_preserving(5.0, 5.0), std::invalid_argument);
}

TEST_CASE("canonical string and hash identify the schedule") {
  const auto a = NoiseSchedule::variance_exploding(0.02, 100.0);
  const auto b = NoiseSchedule::variance_exploding(0.02, 100.0);
  const auto c = NoiseSchedule::variance_exploding(0.02, 99.0);
  const auto d = NoiseSchedule::variance_preserving();
  REQUIRE(a.canonical_string() == b.canonical_string());
  REQUIRE(a.hash() == b.hash());
  REQUIRE(a.hash() != c.hash());
  REQUIRE(a.hash() != d.hash());
  REQUIRE(a.canonical_string().substr(0, 3) == "ve|");
  REQUIRE(d.canonical_string().substr(0, 3) == "vp|");
}

TEST_CASE("time grids run from one to zero and strictly decrease") {
  const auto ve = NoiseSchedule::variance_exploding();
  for (Warping w : {Warping::linear, Warping::geometric, Warping::poly7}) {
    const Eigen::VectorXd ts = time_grid(17, ve, w);
    REQUIRE(ts.size() == 17);
    REQUIRE(ts[0] == 1.0);
    REQUIRE(ts[16] == 0.0);
    for (int i = 1; i < 17; ++i) REQUIRE(ts[i] < ts[i - 1]);
  }
  const Eigen::VectorXd two = time_grid(2, ve);
  REQUIRE(two[0] == 1.0);
  REQUIRE(two[1] == 0.0);
  REQUIRE_THROWS_AS(time_grid(1, ve), std::invalid_argument);
}

TEST_CASE("linear warping is the uniform grid") {
  const auto ve = NoiseSchedule::variance_exploding();
  const Eigen::VectorXd ts = time_grid(5, ve, Warping::linear);
  for (int i = 0; i < 5; ++i) REQUIRE(ts[i] == Catch::Approx(1.0 - 0.25 * i));
}

TEST_CASE("geometric warping log-spaces sigma") {
  const auto ve = NoiseSchedule::variance_exploding();
  const Eigen::VectorXd ts = time_grid(9, ve, Warping::geometric);
  const double ratio = ve.sigma(ts[1]) / ve.sigma(ts[0]);
  for (int i = 1; i < 9; ++i)
    REQUIRE(ve.sigma(ts[i]) / ve.sigma(ts[i - 1]) == Catch::Approx(ratio).epsilon(1e-10));
}

TEST_CASE("poly7 warping matches the rho=7 node formula") {
  const auto ve = NoiseSchedule::variance_exploding();
  const int n = 11;
  const Eigen::VectorXd ts = time_grid(n, ve, Warping::poly7);
  const double rho = 7.0;
  const double hi = std::pow(100.0, 1.0 / rho);
  const double lo = std::pow(0.02, 1.0 / rho);
  for (int i = 1; i + 1 < n; ++i) {
    const double u = static_cast<double>(i) / (n - 1);
    const double sig = std::pow(hi + u * (lo - hi), rho);
    REQUIRE(ve.sigma(ts[i]) == Catch::Approx(sig).epsilon(1e-10));
  }
}

TEST_CASE("sigma-space warpings fall back to uniform for variance-preserving") {
  const auto vp = NoiseSchedule::variance_preserving();
  for (Warping w : {Warping::geometric, Warping::poly7}) {
    const Eigen::VectorXd ts = time_grid(5, vp, w);
    for (int i = 0; i < 5; ++i) REQUIRE(ts[i] == Catch::Approx(1.0 - 0.25 * i));
  }
}
