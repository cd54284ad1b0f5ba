#pragma once

#include "sfpca/model.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace sfpca {

/// One covariate bin and its unsupervised covariance estimate.
struct BinSummary {
  int bin_index = 0;
  double z_center = 0.0;             // mean covariate of the members
  std::vector<std::size_t> members;  // indices into the sample list
  std::vector<std::string> sample_ids;
  Mat sigma_hat;                     // m x m, PSD, b-coefficient space
  Mat c_target;                      // m x r factor of sigma_hat
  double noise_var = 0.0;            // mean diagonal residual variance net of sigma_hat
  bool has_noise_var = false;        // false when every member carries its own errors
};

struct InitConfig {
  int n_bins = 0;          // 0 selects default_n_bins(N)
  int min_bin_count = 10;  // bins with fewer curves are dropped
  double sigma2_floor = 1e-4;
};

// max(5, min(15, N / 50)).
int default_n_bins(std::size_t n_samples);

// Equal-width bins over the observed covariate range. Underpopulated bins are
// dropped with a warning; throws DataError when none is left.
std::vector<BinSummary> bin_samples(const std::vector<FunctionalSample>& samples, int n_bins,
                                    int min_bin_count = 10);

// Covariance of the curves in one bin, ignoring the covariate:
//   1. mean curve b(t)^T (c0 + (z - z_center) c1) by lightly penalized least squares
//   2. products of residuals at distinct time pairs of the same curve
//   3. least squares of those products on b(t)^T Sigma b(t'), which keeps the
//      noise out of the estimate
//   4. symmetrize and clip negative eigenvalues
BinSummary bin_covariance(BinSummary bin, const std::vector<FunctionalSample>& samples,
                          const SplineBasis& b_basis, double sigma2_floor = 1e-4);

// Best rank-r PSD factor: V_r diag(sqrt(lambda_1..r)).
Mat rank_r_factor(const Mat& sigma_hat, int r);

// Aligns the bin factors (sign and column order, greedy, in z order) in place,
// then fits Gamma by least squares of C(z_u; Gamma) against the aligned
// factors at every bin center. With fewer than two bins the fit is constant in z.
Mat align_and_solve(std::vector<BinSummary>& bins, const SplineBasis& v_basis, int r);

struct InitResult {
  ModelParams params;
  std::vector<BinSummary> bins;
};

// Full starting point: theta = 0, Gamma from the bins, sigma^2 from the median
// bin noise variance (floored).
InitResult initialize(const std::vector<FunctionalSample>& samples, const ModelBases& bases, int r,
                      const InitConfig& config = {});

} // namespace sfpca
