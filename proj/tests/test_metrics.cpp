#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include <diffda/metrics.hpp>
#include <diffda/rng.hpp>

using diffda::ObservationModel;
using diffda::Rng;

TEST_CASE("observed and unobserved coordinates partition the state") {
  const auto obs = ObservationModel::stride_mask(8, 2, 0.1, 1);
  REQUIRE(diffda::observed_coordinates(obs) == std::vector<int>{1, 3, 5, 7});
  REQUIRE(diffda::unobserved_coordinates(obs) == std::vector<int>{0, 2, 4, 6});
  REQUIRE(diffda::all_coordinates(4) == std::vector<int>{0, 1, 2, 3});

  const auto full = ObservationModel::stride_mask(3, 1, 0.1);
  REQUIRE(diffda::unobserved_coordinates(full).empty());
}

TEST_CASE("skill is the root mean square error of the ensemble mean") {
  Eigen::MatrixXd ens(2, 3);
  ens << 1.0, 0.0, 2.0,
         3.0, 0.0, 4.0;  // means: 2, 0, 3
  Eigen::VectorXd truth(3);
  truth << 0.0, 0.0, 3.0;
  REQUIRE(diffda::skill(ens, truth, {0}) == Catch::Approx(2.0));
  REQUIRE(diffda::skill(ens, truth, {1, 2}) == Catch::Approx(0.0));
  REQUIRE(diffda::skill(ens, truth, {0, 1}) == Catch::Approx(std::sqrt(2.0)));
  REQUIRE_THROWS_AS(diffda::skill(ens, truth, {}), std::invalid_argument);
}

TEST_CASE("spread is the root mean square sample deviation") {
  Eigen::MatrixXd ens(3, 2);
  ens << 0.0, 1.0,
         1.0, 1.0,
         2.0, 1.0;  // col 0: var 1; col 1: var 0
  REQUIRE(diffda::spread(ens, {0}) == Catch::Approx(1.0));
  REQUIRE(diffda::spread(ens, {1}) == Catch::Approx(0.0));
  REQUIRE(diffda::spread(ens, {0, 1}) == Catch::Approx(std::sqrt(0.5)));
  REQUIRE_THROWS_AS(diffda::spread(ens.topRows(1), {0}), std::invalid_argument);
}

TEST_CASE("normal CDF hits its standard values") {
  REQUIRE(diffda::standard_normal_cdf(0.0) == Catch::Approx(0.5));
  REQUIRE(diffda::standard_normal_cdf(1.959964) == Catch::Approx(0.975).margin(1e-6));
  REQUIRE(diffda::standard_normal_cdf(-8.0) < 1e-14);
}

TEST_CASE("identical members with a centered observation rank at one half") {
  const auto obs = ObservationModel::stride_mask(4, 2, 0.3);
  Eigen::MatrixXd ens = Eigen::MatrixXd::Zero(64, 4);
  ens.col(0).setConstant(1.7);
  Eigen::VectorXd y(2);
  y << 1.7, 0.0;
  const auto ppc = diffda::posterior_predictive_check(ens, obs, y, 0);
  REQUIRE(ppc.rank == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(ppc.grid.size() == 401);
  REQUIRE(ppc.grid[200] == Catch::Approx(1.7).margin(1e-9));
}

TEST_CASE("an observation far below the ensemble ranks near zero") {
  const auto obs = ObservationModel::stride_mask(4, 2, 0.3);
  Rng rng(3);
  Eigen::MatrixXd ens(64, 4);
  for (int i = 0; i < 64; ++i) ens.row(i) = rng.normal_vector(4).transpose();
  Eigen::VectorXd y(2);
  y << -40.0, 0.0;
  const auto low = diffda::posterior_predictive_check(ens, obs, y, 0);
  REQUIRE(low.rank < 1e-10);
  y << 40.0, 0.0;
  const auto high = diffda::posterior_predictive_check(ens, obs, y, 0);
  REQUIRE(high.rank > 1.0 - 1e-10);
}

TEST_CASE("predictive density integrates to one") {
  const auto obs = ObservationModel::stride_mask(4, 2, 0.25);
  Rng rng(9);
  Eigen::MatrixXd ens(128, 4);
  for (int i = 0; i < 128; ++i)
    ens.row(i) = (2.0 * rng.normal_vector(4)).transpose();
  Eigen::VectorXd y(2);
  y << 0.5, 0.0;
  const auto ppc = diffda::posterior_predictive_check(ens, obs, y, 1);
  REQUIRE(diffda::trapezoid_integral(ppc.grid, ppc.density) ==
          Catch::Approx(1.0).margin(1e-3));
  REQUIRE((ppc.density.array() >= 0.0).all());
}

TEST_CASE("predictive check validates ensemble size and row index") {
  const auto obs = ObservationModel::stride_mask(4, 2, 0.3);
  Eigen::MatrixXd small = Eigen::MatrixXd::Zero(31, 4);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(2);
  REQUIRE_THROWS_AS(diffda::posterior_predictive_check(small, obs, y, 0),
                    std::invalid_argument);
  Eigen::MatrixXd ok = Eigen::MatrixXd::Zero(32, 4);
  REQUIRE_THROWS_AS(diffda::posterior_predictive_check(ok, obs, y, 2),
                    std::invalid_argument);
  Eigen::MatrixXd wrong = Eigen::MatrixXd::Zero(32, 5);
  REQUIRE_THROWS_AS(diffda::posterior_predictive_check(wrong, obs, y, 0),
                    std::invalid_argument);
}

TEST_CASE("ranks are uniform for a self-consistent Gaussian ensemble") {
  // Members and observation drawn from the same law: ranks over many trials
  // should look uniform.
  const auto obs = ObservationModel::stride_mask(2, 1, 0.4);
  Rng rng(17);
  std::vector<double> ranks;
  for (int trial = 0; trial < 400; ++trial) {
    Eigen::MatrixXd ens(64, 2);
    for (int i = 0; i < 64; ++i) ens.row(i) = rng.normal_vector(2).transpose();
    const Eigen::VectorXd truth = rng.normal_vector(2);
    Eigen::VectorXd y(2);
    y << truth[0] + 0.4 * rng.normal(), truth[1] + 0.4 * rng.normal();
    ranks.push_back(diffda::posterior_predictive_check(ens, obs, y, 0).rank);
  }
  // 5% critical value for n = 400 is about 1.358 / sqrt(400) = 0.068.
  REQUIRE(diffda::ks_uniform(ranks) < 0.068);
}

TEST_CASE("Kolmogorov-Smirnov distance separates uniform from clumped") {
  std::vector<double> uniform;
  for (int i = 0; i < 200; ++i) uniform.push_back((i + 0.5) / 200.0);
  REQUIRE(diffda::ks_uniform(uniform) < 0.01);

  std::vector<double> clumped(200, 0.5);
  REQUIRE(diffda::ks_uniform(clumped) == Catch::Approx(0.5));

  std::vector<double> low(100, 0.01);
  REQUIRE(diffda::ks_uniform(low) > 0.9);
  REQUIRE_THROWS_AS(diffda::ks_uniform({}), std::invalid_argument);
}

TEST_CASE("weighted expectations use the supplied weights") {
  Eigen::MatrixXd ens(3, 2);
  ens << 1.0, 0.0,
         2.0, 0.0,
         3.0, 0.0;
  Eigen::VectorXd w(3);
  w << 0.2, 0.3, 0.5;
  const auto g = [](const Eigen::VectorXd& x) { return x[0]; };
  // E[g] = 0.2 + 0.6 + 1.5 = 2.3
  REQUIRE(diffda::weak_convergence_error(ens, w, g, 2.3) ==
          Catch::Approx(0.0).margin(1e-14));
  REQUIRE(diffda::weak_convergence_error(ens, w, g, 2.0) == Catch::Approx(0.3));
  REQUIRE_THROWS_AS(
      diffda::weak_convergence_error(ens, Eigen::VectorXd::Ones(2), g, 0.0),
      std::invalid_argument);
}

TEST_CASE("trapezoid integration is exact for linear functions") {
  Eigen::VectorXd x(4), f(4);
  x << 0.0, 0.5, 1.5, 2.0;
  f = (2.0 * x.array() + 1.0).matrix();
  REQUIRE(diffda::trapezoid_integral(x, f) == Catch::Approx(6.0));
}
