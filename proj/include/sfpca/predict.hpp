#pragma once

#include "sfpca/model.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace sfpca {

/// Gaussian posterior of the principal component scores of one curve.
struct ScorePosterior {
  double z = 0.0;
  Vec mean;        // r
  Mat cov;         // r x r
  Mat theta_star;  // m x r eigenvectors of Sigma(z)
  Vec d_star;      // r eigenvalues of Sigma(z), nonincreasing
};

struct CurvePrediction {
  Vec mean;
  Vec var;
};

// Score prior at covariate z: mean 0, covariance diag(d_star). Covariates
// outside the trained range are extrapolated with a warning.
ScorePosterior prior_scores(const ModelParams& params, const ModelBases& bases, double z);

// Conditions the scores on the observed values of the curve. The noise is
// sigma^2 I, or diag(sd^2) when the curve carries its own errors.
ScorePosterior infer_scores(const ModelParams& params, const ModelBases& bases,
                            const FunctionalSample& sample);

// Predictive mean and variance at the given times. The variance includes the
// observation noise unless latent is set; target_sd, when non-empty, replaces
// sigma^2 by sd^2 per target.
CurvePrediction predict_curve(const ModelParams& params, const ModelBases& bases,
                              const ScorePosterior& posterior, const Vec& t_grid,
                              bool latent = false, const Vec& target_sd = Vec());

/// Out-of-sample accuracy when a random part of every curve is observed and
/// the model predicts all of it.
struct PredictionScore {
  double fve = 0.0;          // 1 - SS_res / SS_tot over all points
  double mse_heldout = 0.0;  // mean squared error on unobserved points
  double coverage = 0.0;     // share of unobserved points inside the 95% interval
  double nll_heldout = 0.0;  // mean Gaussian negative log predictive density, unobserved points
  std::size_t n_heldout = 0;
  std::size_t n_skipped = 0; // curves with fewer than min_observed observed points
  bool pointwise_baseline = false; // SS_tot around the per-time mean (common grid)
};

// Seeded choice of the observed rows of a curve: round(fraction * size)
// indices, sorted. Depends only on (seed, curve position).
std::vector<Eigen::Index> observed_rows(Eigen::Index size, double fraction, std::uint64_t seed,
                                        std::size_t position);

PredictionScore score_predictions(const ModelParams& params, const ModelBases& bases,
                                  const std::vector<FunctionalSample>& samples,
                                  double observe_fraction, std::uint64_t seed,
                                  int min_observed = 1);

// Fraction of variation explained. Baseline is the per-time mean across curves
// when every curve shares the same times, else the global mean.
double fve(const ModelParams& params, const ModelBases& bases,
           const std::vector<FunctionalSample>& samples, double observe_fraction,
           std::uint64_t seed);

} // namespace sfpca
