#include "doctest.h"

#include "sfpca/error.hpp"
#include "sfpca/init.hpp"
#include "sfpca/likelihood.hpp"
#include "sfpca/log.hpp"
#include "sfpca/sim.hpp"
#include "test_support.hpp"

using namespace sfpca;
using namespace sfpca::testing;

namespace {

// Curves with mean zero and covariance B Sigma B^T, Sigma constant in z.
std::vector<FunctionalSample> curves_with_covariance(std::mt19937_64& rng, const SplineBasis& b,
                                                     const Mat& factor, int n, double noise_sd) {
  std::vector<FunctionalSample> out;
  const Vec grid = linspace(0.0, 1.0, 30);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int k = 0; k < n; ++k) {
    FunctionalSample s;
    s.id = "c" + std::to_string(k);
    s.covariate = unif(rng);
    s.times = grid;
    const Vec coef = factor * normal_vec(rng, factor.cols());
    s.values.resize(grid.size());
    for (Eigen::Index i = 0; i < grid.size(); ++i)
      s.values(i) = b.eval(grid(i)).dot(coef) + noise_sd * normal_vec(rng, 1)(0);
    out.push_back(std::move(s));
  }
  return out;
}

} // namespace

TEST_CASE("default bin count") {
  CHECK(default_n_bins(10) == 5);
  CHECK(default_n_bins(500) == 10);
  CHECK(default_n_bins(2000) == 15);
}

TEST_CASE("covariate bins") {
  set_quiet(true);
  std::mt19937_64 rng(3);
  auto samples = random_samples(rng, 100, 3, 5);
  for (std::size_t n = 0; n < samples.size(); ++n) samples[n].covariate = (n < 60) ? 0.1 : 0.9;
  samples[0].covariate = 0.5; // lone curve in the middle bin

  const auto bins = bin_samples(samples, 3, 10);
  REQUIRE(bins.size() == 2);
  CHECK(bins[0].members.size() == 59);
  CHECK(bins[1].members.size() == 40);
  CHECK(bins[0].z_center == doctest::Approx(0.1));
  CHECK(bins[1].sample_ids.front() == "c60");
  CHECK_THROWS_AS(bin_samples(samples, 3, 100), DataError);
  CHECK_THROWS_AS(bin_samples(samples, 0, 10), InvalidArgument);
  set_quiet(false);
}

TEST_CASE("rank-r factor") {
  std::mt19937_64 rng(5);
  const Mat F = normal_mat(rng, 6, 2);
  const Mat sigma = F * F.transpose();
  const Mat C = rank_r_factor(sigma, 2);
  CHECK(rel_err_mat(C * C.transpose(), sigma) < 1e-12);
  CHECK(C.col(0).norm() >= C.col(1).norm());
  // Truncation keeps the leading eigenpairs.
  const Mat C1 = rank_r_factor(sigma, 1);
  Eigen::SelfAdjointEigenSolver<Mat> es(sigma);
  CHECK(C1.col(0).squaredNorm() == doctest::Approx(es.eigenvalues()(5)));
}

TEST_CASE("bin covariance separates signal from noise") {
  std::mt19937_64 rng(9);
  const ModelBases bases = make_bases(6, 5, 6, 5, {0, 1}, {0, 1});
  Mat factor = Mat::Zero(6, 2);
  factor.col(0) << 2, 1, 0, -1, 0.5, 1;
  factor.col(1) << 0, 1, 1.5, 0, -1, 0;
  const double noise_sd = 0.5;
  const auto samples = curves_with_covariance(rng, bases.b, factor, 400, noise_sd);
  BinSummary bin;
  for (std::size_t n = 0; n < samples.size(); ++n) bin.members.push_back(n);
  bin.z_center = 0.5;
  const BinSummary out = bin_covariance(bin, samples, bases.b);
  const Mat truth = factor * factor.transpose();
  CHECK(rel_err_mat(out.sigma_hat, truth) < 0.15);
  CHECK(out.has_noise_var);
  CHECK(out.noise_var == doctest::Approx(noise_sd * noise_sd).epsilon(0.1));
  Eigen::SelfAdjointEigenSolver<Mat> es(out.sigma_hat);
  CHECK(es.eigenvalues().minCoeff() >= -1e-12);
}

TEST_CASE("alignment undoes sign flips and reordering") {
  const ModelBases bases = make_bases(6, 5, 5, 6, {0, 1}, {0, 1});
  const int m = 5, r = 2;
  auto truth = [&](double z) {
    Mat C(m, r);
    for (int i = 0; i < m; ++i) {
      C(i, 0) = 4.0 + i + z;
      C(i, 1) = (i % 2 == 0 ? 1.0 : -1.0) * (1.0 + 0.5 * z);
    }
    return C;
  };
  std::vector<BinSummary> bins;
  for (int u = 4; u >= 0; --u) {
    BinSummary b;
    b.bin_index = u;
    b.z_center = 0.1 + 0.2 * u;
    Mat C = truth(b.z_center);
    if (u % 2 == 1) C.col(1) *= -1.0;
    if (u == 3) C.col(0).swap(C.col(1));
    b.c_target = C;
    bins.push_back(b);
  }
  const Mat gamma = align_and_solve(bins, bases.v, r);
  CHECK(bins.front().z_center < bins.back().z_center);
  ModelParams params = ModelParams::zeros(bases, r);
  params.gamma = gamma;
  for (const auto& b : bins) {
    const Mat C = c_matrix(params, b.z_center, bases.v);
    const Mat want = truth(b.z_center);
    // Columns are compared up to sign; the small ridge of the underdetermined
    // solve (more basis functions than bins) leaves a tiny residual.
    const double s0 = C.col(0).dot(want.col(0)) < 0 ? -1.0 : 1.0;
    const double s1 = C.col(1).dot(want.col(1)) < 0 ? -1.0 : 1.0;
    CHECK((s0 * C.col(0) - want.col(0)).norm() < 1e-6 * want.norm());
    CHECK((s1 * C.col(1) - want.col(1)).norm() < 1e-6 * want.norm());
  }
}

TEST_CASE("initialization on simulated curves") {
  set_quiet(true);
  SimTruth truth;
  truth.n_curves = 300;
  truth.seed = 17;
  const auto samples = generate(truth);
  const ModelBases bases = make_bases(10, 5, 10, 7, {0, 1}, {0, 1});
  const InitResult a = initialize(samples, bases, 3);
  const InitResult b = initialize(samples, bases, 3);
  CHECK(a.params.gamma == b.params.gamma);
  CHECK(a.params.theta.isZero(0.0));
  CHECK(a.params.sigma2() == doctest::Approx(truth.noise_var).epsilon(0.3));
  CHECK(a.bins.size() == static_cast<std::size_t>(default_n_bins(samples.size())));

  // The bin covariances carry the simulated eigenvalue scale.
  const Eigenfunctions ef = eigenfunctions_at(a.params, 0.5, bases.b, bases.v, linspace(0, 1, 5));
  CHECK(ef.eigenvalues(0) == doctest::Approx(SimTruth::eigenvalue(0, 0.5)).epsilon(0.5));

  // With every curve carrying its own errors the noise variance is not estimated.
  auto own = samples;
  for (auto& s : own) s.noise_sd = Vec::Constant(s.size(), 0.3);
  const InitResult c = initialize(own, bases, 3);
  CHECK(c.params.sigma2() == doctest::Approx(InitConfig{}.sigma2_floor));
  CHECK_FALSE(c.bins.front().has_noise_var);
  CHECK_THROWS_AS(initialize(samples, bases, 0), InvalidArgument);
  set_quiet(false);
}
