#pragma once

#include "sfpca/init.hpp"
#include "sfpca/likelihood.hpp"
#include "sfpca/model.hpp"
#include "sfpca/penalty.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sfpca {

struct FitConfig {
  int r = 3;
  int l = 10, p = 5; // mean basis sizes in t and z
  int m = 10, q = 7; // covariance basis sizes in t and z
  // Basis domains; when unset they span the observed times / covariates.
  std::optional<Interval> t_domain;
  std::optional<Interval> z_domain;
  Lambdas lambdas;
  std::vector<double> lambda_grid; // candidate values for cross-validation

  int max_outer = 50;
  int max_inner = 200;
  double rel_tol = 1e-6;   // relative objective change across an outer sweep
  double inner_tol = 1e-4; // relative objective change within a block
  double shrink = 0.5;
  double armijo = 1e-4;
  double initial_step = 1.0;

  std::uint64_t seed = 1;
  int n_bins = 0; // 0 selects default_n_bins
  int min_bin_count = 10;
  int cv_folds = 5;
  double cv_observe_fraction = 0.25;
  Exec exec = Exec::parallel;

  void validate() const;
};

struct TraceEntry {
  int iter = 0;      // accepted steps so far
  int outer = 0;     // outer sweep, 0 for the starting point
  std::string block; // "init", "theta", "gamma" or "sigma"
  double objective = 0.0;
};

struct FitDiagnostics {
  std::vector<TraceEntry> trace;
  int outer_iterations = 0;
  int accepted_steps = 0;
  int line_search_failures = 0;
  bool converged = false;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  double grad_norm_theta = 0.0;
  double grad_norm_gamma = 0.0;
  double grad_norm_eta = 0.0;
};

struct TrainingInfo {
  std::size_t n_curves = 0;
  std::size_t n_observations = 0;
  Interval t_range;
  Interval z_range;
};

struct FittedModel {
  ModelBases bases;
  ModelParams params;
  Lambdas lambdas;
  TrainingInfo training;
  FitDiagnostics diagnostics;
};

// Observed ranges of the times and covariates.
TrainingInfo describe(const std::vector<FunctionalSample>& samples);

// Bases of the configured sizes over the configured or observed domains.
ModelBases bases_for(const std::vector<FunctionalSample>& samples, const FitConfig& config);

// Block coordinate descent on the penalized objective from a given start.
// Each sweep runs Armijo-backtracking gradient descent on theta, then Gamma,
// then log sigma^2 (skipped when every curve has its own errors).
FittedModel fit_from(const std::vector<FunctionalSample>& samples, const ModelBases& bases,
                     ModelParams start, const FitConfig& config);

// Initializes from covariate bins, then runs fit_from.
FittedModel fit(const std::vector<FunctionalSample>& samples, const FitConfig& config);

struct CvRow {
  std::string stage; // "mean" or "covariance"
  Lambdas lambdas;
  double score = 0.0; // mean held-out negative log predictive density
  int folds_used = 0;
};

struct CvResult {
  Lambdas best;
  std::vector<CvRow> table;
};

// K-fold cross-validation by curve over config.lambda_grid. Stage one picks
// the two mean weights with Gamma held at its initial value; stage two picks
// the two covariance weights with full fits. Ties go to the larger weights.
CvResult cross_validate(const std::vector<FunctionalSample>& samples, const FitConfig& config);

// Mean squared prediction error on the points left out when a seeded
// observe_fraction of each curve conditions the scores.
double predict_mse(const FittedModel& model, const std::vector<FunctionalSample>& samples,
                   double observe_fraction, std::uint64_t seed);

} // namespace sfpca
