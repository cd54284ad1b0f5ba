#pragma once

#include "sfpca/fit.hpp"
#include "sfpca/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace sfpca {

/// Covariate-dependent generating process:
///   mean    30 (t - z)^2
///   f1      sqrt(2) cos(pi (t + z))
///   f2      sqrt(2) sin(pi (t + z))
///   f3      sqrt(2) cos(3 pi (t - z))
///   scores  independent N(0, d_j(z)), d(z) = (2 (z + 20), z + 10, z)
///   noise   N(0, noise_var)
/// on a regular grid of grid_size points over [0, 1], z ~ U[z_lo, z_hi].
struct SimTruth {
  std::size_t n_curves = 100;
  int grid_size = 51;
  double noise_var = 0.1;
  double z_lo = 0.0, z_hi = 1.0;
  // Each grid point is kept with this probability (at least two per curve).
  double keep_fraction = 1.0;
  bool zero_scores = false; // curves equal the mean plus noise
  std::uint64_t seed = 1;
  std::string id_prefix = "s";

  static double mean(double t, double z);
  static double eigenfunction(int j, double t, double z); // j = 0, 1, 2
  static double eigenvalue(int j, double z);
};

// Curves are drawn from independent per-curve streams, so curve n depends
// only on (seed, n) and generation parallelizes without changing the output.
std::vector<FunctionalSample> generate(const SimTruth& truth);

struct StudyConfig {
  std::size_t n_train = 2000;
  std::size_t n_test = 1000;
  int grid_size = 51;
  double noise_var = 0.1;
  std::uint64_t seed = 2024;
  std::vector<int> ranks{1, 2, 3};
  double observe_fraction = 0.2;
  // Covariate range over which eigenfunction errors are averaged.
  Interval error_z_range{0.0, 1.0};
  int error_grid_z = 20;
  int error_grid_t = 101;
  FitConfig fit; // r is overridden per rank; bases default to [0, 1] x [0, 1]
  std::string out_dir; // empty: no data files
};

struct StudyRank {
  int r = 0;
  double test_fve = 0.0;
  double test_mse = 0.0;
  double coverage = 0.0;
  std::vector<double> eigen_mise; // per eigenfunction j < min(r, 3)
  double final_objective = 0.0;
  int outer_iterations = 0;
  bool converged = false;
};

struct StudyReport {
  std::vector<StudyRank> ranks;
  std::vector<FittedModel> models;
  std::string text() const;
};

// Integrated squared difference between the fitted and true eigenfunction j,
// averaged over z by the midpoint rule on n_z cells of z_range, with the
// fitted sign chosen per z to match. The midpoint rule never evaluates the
// endpoint z = 0, where the third true eigenvalue vanishes and its
// eigenfunction is undefined.
double eigenfunction_mise(const FittedModel& model, int j, const Interval& z_range, int n_z,
                          int n_t);

// Generates train and test sets, fits every rank and scores the test set.
// With out_dir set, writes train.csv, test.csv, report.txt and per-rank
// eigen_r{r}.csv (fitted and true surfaces) and pred_r{r}.csv (intervals).
StudyReport run_study(const StudyConfig& config);

} // namespace sfpca
