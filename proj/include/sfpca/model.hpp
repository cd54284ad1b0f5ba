#pragma once

#include "sfpca/basis.hpp"
#include "sfpca/penalty.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace sfpca {

/// The four bases of the model.
///   a(t), size l  - temporal mean basis
///   u(z), size p  - covariate mean basis
///   b(t), size m  - orthonormalized temporal covariance basis
///   v(z), size q  - covariate basis for the entries of C(z)
struct ModelBases {
  SplineBasis a;
  SplineBasis u;
  SplineBasis b;
  SplineBasis v;

  int l() const { return a.size(); }
  int p() const { return u.size(); }
  int m() const { return b.size(); }
  int q() const { return v.size(); }

  friend bool operator==(const ModelBases&, const ModelBases&) = default;
};

// Cubic bases with the given sizes over the time and covariate domains; b is
// orthonormalized. Every size must be at least degree + 1 = 4.
ModelBases make_bases(int l, int p, int m, int q, Interval t_domain, Interval z_domain);

/// Model parameters.
///   theta     - row-major vec of the l x p mean coefficient matrix
///   gamma     - (m*q) x r; block row i, column j holds beta_ij
///   log_sigma2 - log of the common noise variance
struct ModelParams {
  Vec theta;
  Mat gamma;
  double log_sigma2 = 0.0;

  int r() const { return static_cast<int>(gamma.cols()); }
  double sigma2() const { return std::exp(log_sigma2); }
  Vec beta() const { return Eigen::Map<const Vec>(gamma.data(), gamma.size()); }
  void set_beta(const Vec& beta);

  static ModelParams zeros(const ModelBases& bases, int r, double sigma2 = 1.0);
};

/// One observed curve.
struct FunctionalSample {
  std::string id;
  Vec times;
  Vec values;
  double covariate = 0.0;
  Vec noise_sd; // empty when the curve carries no per-observation errors

  Eigen::Index size() const { return times.size(); }
  bool has_noise_sd() const { return noise_sd.size() > 0; }

  // Lengths agree, times sorted, everything finite, sd > 0. Throws DataError.
  void validate() const;
  FunctionalSample subset(const std::vector<Eigen::Index>& rows) const;
};

struct DesignPair {
  Mat B; // n_obs x m, rows b(t_i)
  Mat H; // n_obs x (l p), rows a(t_i) (x) u(z)
};

// C(z) = (I_m (x) v(z)^T) Gamma, shape m x r.
Mat c_matrix(const Mat& gamma, const Vec& v_at_z, int m);
Mat c_matrix(const ModelParams& params, double z, const SplineBasis& v_basis,
             DomainPolicy policy = DomainPolicy::error);

// Sigma(z) = C(z) C(z)^T, shape m x m.
Mat sigma_of_z(const ModelParams& params, double z, const SplineBasis& b_basis,
               const SplineBasis& v_basis, DomainPolicy policy = DomainPolicy::error);

DesignPair design(const FunctionalSample& sample, const ModelBases& bases,
                  DomainPolicy policy = DomainPolicy::error);

// Dense marginal covariance B Sigma(z) B^T + noise, with noise sigma^2 I or
// diag(sd^2) when the sample has its own errors.
Mat marginal_cov(const FunctionalSample& sample, const ModelParams& params,
                 const ModelBases& bases, DomainPolicy policy = DomainPolicy::error);

struct Eigenfunctions {
  double z = 0.0;
  Vec eigenvalues; // r, nonincreasing
  Mat vectors;     // m x r, orthonormal columns in b-coefficient space
  Mat functions;   // r x |t_grid|, row j is f_j(t, z)
};

// Eigendecomposition of Sigma(z). Each eigenvector is signed so that its
// largest-magnitude entry is positive.
Eigenfunctions eigenfunctions_at(const ModelParams& params, double z, const SplineBasis& b_basis,
                                 const SplineBasis& v_basis, const Vec& t_grid,
                                 DomainPolicy policy = DomainPolicy::error);

// Eigenfunctions over a covariate sweep, with signs flipped so that each
// eigenvector has a nonnegative inner product with its predecessor in z.
std::vector<Eigenfunctions> eigen_sweep(const ModelParams& params, const ModelBases& bases,
                                        const Vec& z_grid, const Vec& t_grid);

// Evenly spaced grid including both endpoints.
Vec linspace(double lo, double hi, int n);

} // namespace sfpca
