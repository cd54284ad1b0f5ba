#pragma once

#include "sfpca/basis.hpp"

#include <utility>

namespace sfpca {

// Smoothing weights for the four roughness terms.
struct Lambdas {
  double t_cov = 0.0;  // temporal roughness of the covariance factor
  double z_cov = 0.0;  // covariate roughness of the covariance factor
  double t_mean = 0.0; // temporal roughness of the mean surface
  double z_mean = 0.0; // covariate roughness of the mean surface

  friend bool operator==(const Lambdas&, const Lambdas&) = default;
};

/// Assembled tensor-product roughness penalties.
///
/// The covariance matrices act on one column of Gamma (length m*q, index
/// i*q + k for b-basis i and v-basis k); the mean matrices act on theta
/// (length l*p, index i*p + j). Immutable after assemble().
struct PenaltyOperator {
  Mat S_t_cov;  // (S'_t (x) I_q), S'_t from the b basis
  Mat S_z_cov;  // (I_m (x) S'_z), S'_z from the v basis
  Mat S_t_mean; // (S'_t (x) I_p), from the a basis
  Mat S_z_mean; // (I_l (x) S'_z), from the u basis
  Lambdas lambdas;

  // lambda-weighted sums, cached by assemble()
  Mat cov_weighted;
  Mat mean_weighted;

  PenaltyOperator with_lambdas(const Lambdas& lam) const;
};

// Integral of b''(t) b''(t)^T over the domain (transform applied).
Mat raw_penalty_matrix(const SplineBasis& basis);

// Entry (i, j) = b_i(x_j) on n_points equally spaced grid points spanning the
// domain. n_points must equal the basis size; throws NumericalError when the
// matrix is singular.
Mat collocation_matrix(const SplineBasis& basis, int n_points);

// Roughness penalty expressed on function values at the collocation grid:
// with X = collocation_matrix^T (rows = grid points), returns X^{-T} S X^{-1}.
Mat grid_penalty(const SplineBasis& basis);

PenaltyOperator assemble(const SplineBasis& b_basis, const SplineBasis& v_basis,
                         const SplineBasis& a_basis, const SplineBasis& u_basis,
                         const Lambdas& lambdas);

// theta^T (l_t S_t_mean + l_z S_z_mean) theta
//   + beta^T (l_t I_r (x) S_t_cov + l_z I_r (x) S_z_cov) beta
// with beta = vec(Gamma), Gamma of shape (m*q) x r.
double penalty_value(const PenaltyOperator& op, const Vec& theta_mu, const Vec& beta, int r);

// (dP/dtheta, dP/dbeta).
std::pair<Vec, Vec> penalty_grad(const PenaltyOperator& op, const Vec& theta_mu, const Vec& beta,
                                 int r);

} // namespace sfpca
