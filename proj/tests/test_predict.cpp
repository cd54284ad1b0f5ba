#include "doctest.h"

#include "sfpca/error.hpp"
#include "sfpca/log.hpp"
#include "sfpca/predict.hpp"
#include "sfpca/sim.hpp"
#include "test_support.hpp"

#include <set>

using namespace sfpca;
using namespace sfpca::testing;

namespace {

struct Setup {
  ModelBases bases = make_bases(6, 5, 7, 5, {0, 1}, {0, 1});
  ModelParams params;
  FunctionalSample sample;
};

Setup make_setup(std::uint64_t seed, int r, bool own_noise) {
  std::mt19937_64 rng(seed);
  Setup s;
  s.params = random_params(rng, s.bases, r, 0.3);
  s.sample = random_samples(rng, 1, 6, 12, own_noise).front();
  return s;
}

// Joint Gaussian conditioning written out densely.
CurvePrediction dense_conditional(const Setup& s, const Vec& t_grid, bool latent) {
  FunctionalSample target;
  target.times = t_grid;
  target.values = Vec::Zero(t_grid.size());
  target.covariate = s.sample.covariate;
  const DesignPair obs = design(s.sample, s.bases);
  const DesignPair tgt = design(target, s.bases);
  const Mat sigma = sigma_of_z(s.params, s.sample.covariate, s.bases.b, s.bases.v);
  const Mat S_oo = marginal_cov(s.sample, s.params, s.bases);
  const Mat S_to = tgt.B * sigma * obs.B.transpose();
  const Mat S_tt = tgt.B * sigma * tgt.B.transpose();
  const Eigen::LDLT<Mat> ldlt(S_oo);
  const Vec res = s.sample.values - obs.H * s.params.theta;
  CurvePrediction out;
  out.mean = tgt.H * s.params.theta + S_to * ldlt.solve(res);
  out.var = (S_tt - S_to * ldlt.solve(Mat(S_to.transpose()))).diagonal();
  if (!latent) out.var.array() += s.params.sigma2();
  return out;
}

} // namespace

TEST_CASE("posterior prediction matches dense conditioning") {
  const Vec grid = linspace(0.0, 1.0, 17);
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    for (bool own : {false, true}) {
      const Setup s = make_setup(seed, 1 + static_cast<int>(seed % 3), own);
      const ScorePosterior post = infer_scores(s.params, s.bases, s.sample);
      for (bool latent : {false, true}) {
        const CurvePrediction fast = predict_curve(s.params, s.bases, post, grid, latent);
        const CurvePrediction dense = dense_conditional(s, grid, latent);
        CHECK(rel_err_mat(fast.mean, dense.mean) < 1e-9);
        CHECK(rel_err_mat(fast.var, dense.var) < 1e-9);
      }
    }
  }
}

TEST_CASE("prior prediction") {
  const Setup s = make_setup(3, 2, false);
  const Vec grid = linspace(0.0, 1.0, 9);
  const ScorePosterior prior = prior_scores(s.params, s.bases, 0.4);
  CHECK(prior.mean.isZero(0.0));
  CHECK(prior.d_star(0) >= prior.d_star(1));
  const CurvePrediction p = predict_curve(s.params, s.bases, prior, grid);
  const Mat sigma = sigma_of_z(s.params, 0.4, s.bases.b, s.bases.v);
  for (Eigen::Index k = 0; k < grid.size(); ++k) {
    const Vec bt = s.bases.b.eval(grid(k));
    const double mean = kron(s.bases.a.eval(grid(k)), s.bases.u.eval(0.4)).dot(s.params.theta);
    CHECK(p.mean(k) == doctest::Approx(mean).epsilon(1e-12));
    CHECK(p.var(k) == doctest::Approx(bt.dot(sigma * bt) + s.params.sigma2()).epsilon(1e-10));
  }
  // Per-target errors replace the common noise variance.
  const Vec sd = Vec::Constant(grid.size(), 2.0);
  const CurvePrediction q = predict_curve(s.params, s.bases, prior, grid, false, sd);
  const CurvePrediction latent = predict_curve(s.params, s.bases, prior, grid, true);
  CHECK(rel_err_mat(q.var, (latent.var.array() + 4.0).matrix()) < 1e-14);
  CHECK_THROWS_AS(predict_curve(s.params, s.bases, prior, grid, false, Vec::Ones(2)),
                  InvalidArgument);
}

TEST_CASE("extrapolated covariates warn instead of failing") {
  set_quiet(true);
  const Setup s = make_setup(4, 2, false);
  CHECK_NOTHROW(prior_scores(s.params, s.bases, 1.5));
  FunctionalSample outside = s.sample;
  outside.covariate = -0.2;
  CHECK_NOTHROW(infer_scores(s.params, s.bases, outside));
  FunctionalSample bad_time = s.sample;
  bad_time.times(bad_time.size() - 1) = 1.5;
  CHECK_THROWS_AS(infer_scores(s.params, s.bases, bad_time), DataError);
  set_quiet(false);
}

TEST_CASE("observed rows are a seeded subset") {
  const auto a = observed_rows(51, 0.2, 9, 3);
  CHECK(a.size() == 10);
  CHECK(std::is_sorted(a.begin(), a.end()));
  CHECK(std::set<Eigen::Index>(a.begin(), a.end()).size() == a.size());
  CHECK(a.front() >= 0);
  CHECK(a.back() < 51);
  CHECK(a == observed_rows(51, 0.2, 9, 3));
  CHECK(a != observed_rows(51, 0.2, 9, 4));
  CHECK(a != observed_rows(51, 0.2, 10, 3));
  CHECK(observed_rows(7, 0.0, 1, 0).empty());
  CHECK(observed_rows(7, 1.0, 1, 0).size() == 7);
  CHECK_THROWS_AS(observed_rows(7, 1.5, 1, 0), InvalidArgument);
}

TEST_CASE("scores of predictions on simulated curves") {
  set_quiet(true);
  SimTruth truth;
  truth.n_curves = 40;
  truth.grid_size = 21;
  const auto samples = generate(truth);
  const ModelBases bases = make_bases(6, 4, 6, 4, {0, 1}, {0, 1});
  std::mt19937_64 rng(5);
  const ModelParams params = random_params(rng, bases, 2, 0.5);

  const PredictionScore a = score_predictions(params, bases, samples, 0.2, 11);
  CHECK(a.pointwise_baseline);
  CHECK(a.n_heldout == 40 * (21 - 4));
  CHECK(a.n_skipped == 0);
  CHECK(std::isfinite(a.fve));
  CHECK(a.coverage >= 0.0);
  CHECK(a.coverage <= 1.0);
  CHECK(a.mse_heldout > 0.0);
  const PredictionScore b = score_predictions(params, bases, samples, 0.2, 11);
  CHECK(a.fve == b.fve);
  CHECK(a.nll_heldout == b.nll_heldout);
  CHECK(fve(params, bases, samples, 0.2, 11) == a.fve);

  // Irregular times fall back to the global mean baseline.
  truth.keep_fraction = 0.5;
  const auto irregular = generate(truth);
  CHECK_FALSE(score_predictions(params, bases, irregular, 0.5, 11).pointwise_baseline);

  // Curves with too few observed points are skipped, and skipping all is an error.
  auto mixed = samples;
  for (std::size_t n = 0; n < 10; ++n) mixed[n] = mixed[n].subset({0, 5, 10, 15});
  const PredictionScore c = score_predictions(params, bases, mixed, 0.2, 11, 2);
  CHECK(c.n_skipped == 10);
  CHECK(c.n_heldout == 30 * (21 - 4));
  CHECK_THROWS_AS(score_predictions(params, bases, samples, 0.05, 11, 2), DataError);

  auto flat = samples;
  for (auto& s : flat) s.values.setConstant(1.0);
  CHECK_THROWS_AS(score_predictions(params, bases, flat, 0.2, 11), DataError);
  set_quiet(false);
}
