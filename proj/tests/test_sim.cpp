#include "doctest.h"

#include "sfpca/error.hpp"
#include "sfpca/log.hpp"
#include "sfpca/sim.hpp"

#include <cmath>
#include <filesystem>
#include <numbers>

using namespace sfpca;

TEST_CASE("truth functions") {
  const Vec ts = linspace(0.0, 1.0, 2001);
  for (double z : {0.0, 0.3, 0.8}) {
    // Orthonormal in L2[0, 1] (trapezoid rule).
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) {
        double ip = 0.0;
        for (Eigen::Index i = 0; i < ts.size(); ++i) {
          const double w = (i == 0 || i == ts.size() - 1) ? 0.5 : 1.0;
          ip += w * SimTruth::eigenfunction(j, ts(i), z) * SimTruth::eigenfunction(k, ts(i), z);
        }
        ip /= static_cast<double>(ts.size() - 1);
        CHECK(ip == doctest::Approx(j == k ? 1.0 : 0.0).epsilon(1e-6).scale(1.0));
      }
    CHECK(SimTruth::eigenvalue(0, z) == 2.0 * (z + 20.0));
    CHECK(SimTruth::eigenvalue(1, z) == z + 10.0);
    CHECK(SimTruth::eigenvalue(2, z) == z);
  }
  CHECK(SimTruth::mean(0.5, 0.2) == doctest::Approx(30.0 * 0.09));
  CHECK_THROWS_AS(SimTruth::eigenfunction(3, 0.0, 0.0), InvalidArgument);
}

TEST_CASE("generated curves") {
  SimTruth truth;
  truth.n_curves = 50;
  truth.grid_size = 11;
  truth.z_lo = 0.2;
  truth.z_hi = 0.4;
  const auto a = generate(truth);
  REQUIRE(a.size() == 50);
  for (const auto& s : a) {
    CHECK(s.size() == 11);
    CHECK(s.covariate >= 0.2);
    CHECK(s.covariate <= 0.4);
    CHECK_FALSE(s.has_noise_sd());
    CHECK_NOTHROW(s.validate());
  }
  CHECK(a[7].id == "s7");

  // Curve n depends only on the seed and n.
  truth.n_curves = 10;
  const auto b = generate(truth);
  CHECK(b[7].values == a[7].values);
  CHECK(b[7].covariate == a[7].covariate);
  truth.seed = 2;
  CHECK(generate(truth)[7].values != a[7].values);

  // Without scores or noise the curves are the mean.
  truth.zero_scores = true;
  truth.noise_var = 0.0;
  for (const auto& s : generate(truth))
    for (Eigen::Index i = 0; i < s.size(); ++i)
      CHECK(s.values(i) == doctest::Approx(SimTruth::mean(s.times(i), s.covariate)));
}

TEST_CASE("irregular sampling") {
  SimTruth truth;
  truth.n_curves = 200;
  truth.grid_size = 21;
  truth.keep_fraction = 0.1;
  std::size_t total = 0;
  for (const auto& s : generate(truth)) {
    CHECK(s.size() >= 2);
    CHECK_NOTHROW(s.validate());
    total += static_cast<std::size_t>(s.size());
  }
  // Roughly 10% of the grid, with at least two points per curve.
  CHECK(total > 200 * 2);
  CHECK(total < 200 * 5);
  truth.keep_fraction = 0.0;
  CHECK_THROWS_AS(generate(truth), InvalidArgument);
}

TEST_CASE("simulation input errors") {
  SimTruth truth;
  truth.grid_size = 1;
  CHECK_THROWS_AS(generate(truth), InvalidArgument);
  truth = SimTruth{};
  truth.noise_var = -1.0;
  CHECK_THROWS_AS(generate(truth), InvalidArgument);
  truth = SimTruth{};
  truth.z_lo = 1.0;
  truth.z_hi = 0.0;
  CHECK_THROWS_AS(generate(truth), InvalidArgument);
}

TEST_CASE("small study end to end") {
  set_quiet(true);
  StudyConfig config;
  config.n_train = 200;
  config.n_test = 60;
  config.grid_size = 21;
  config.ranks = {1, 3};
  config.fit.l = 6;
  config.fit.p = 4;
  config.fit.m = 8;
  config.fit.q = 4;
  config.fit.max_outer = 5;
  const auto dir = std::filesystem::temp_directory_path() / "sfpca_test_study";
  std::filesystem::remove_all(dir);
  config.out_dir = dir.string();
  const StudyReport report = run_study(config);
  REQUIRE(report.ranks.size() == 2);
  CHECK(report.ranks[0].eigen_mise.size() == 1);
  CHECK(report.ranks[1].eigen_mise.size() == 3);
  CHECK(report.ranks[1].test_fve > report.ranks[0].test_fve);
  for (const char* name : {"train.csv", "test.csv", "report.txt", "eigen_r1.csv", "eigen_r3.csv",
                           "pred_r3.csv", "model_r3.txt"})
    CHECK(std::filesystem::exists(dir / name));
  const std::string text = report.text();
  CHECK(text.rfind("rank,test_fve", 0) == 0);
  CHECK(text.find("NA") != std::string::npos);
  // Writing files does not change the results.
  config.out_dir.clear();
  CHECK(run_study(config).text() == text);
  std::filesystem::remove_all(dir);

  CHECK_THROWS_AS(eigenfunction_mise(report.models[0], 1, {0, 1}, 10, 11), InvalidArgument);
  set_quiet(false);
}
