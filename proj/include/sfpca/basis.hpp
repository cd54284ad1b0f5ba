#pragma once

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace sfpca {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct Interval {
  double lo = 0.0;
  double hi = 1.0;

  double width() const { return hi - lo; }
  bool contains(double x) const { return x >= lo && x <= hi; }
};

// What eval does with an argument outside the basis domain.
//   error       - throw DataError (default)
//   clamp       - evaluate at the nearest endpoint
//   extrapolate - continue the boundary polynomial piece
enum class DomainPolicy { error, clamp, extrapolate };

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

// n-point Gauss-Legendre rule on [-1, 1] (Golub-Welsch).
QuadratureRule gauss_legendre(int n);

/// Clamped B-spline basis with equally spaced interior knots, optionally
/// composed with a square transform so that b(t) = T * b_raw(t).
///
/// Immutable after construction; safe to share between threads.
class SplineBasis {
public:
  SplineBasis(int degree, int n_interior_knots, Interval domain);

  int degree() const { return degree_; }
  int n_interior_knots() const { return n_interior_; }
  int size() const { return n_interior_ + degree_ + 1; }
  Interval domain() const { return domain_; }
  const std::vector<double>& knots() const { return knots_; }

  bool has_transform() const { return transform_.has_value(); }
  // Only valid when has_transform().
  const Mat& transform() const { return *transform_; }

  // Returns a copy whose evaluations are T * (evaluations of this basis).
  // T composes with an existing transform.
  SplineBasis with_transform(const Mat& T) const;
  // Drops the transform; evaluations become the raw B-splines again.
  SplineBasis raw() const;

  Vec eval(double t, DomainPolicy policy = DomainPolicy::error) const;
  Vec eval_deriv2(double t, DomainPolicy policy = DomainPolicy::error) const;
  // Column k holds the k-th derivative (k = 0, 1, 2), transform applied.
  Mat eval_derivs(double t, DomainPolicy policy = DomainPolicy::error) const;

  // Quadrature over the domain with n nodes on every knot interval.
  QuadratureRule quadrature(int n_per_interval) const;

  friend bool operator==(const SplineBasis& a, const SplineBasis& b);

private:
  double resolve(double t, DomainPolicy policy) const;
  int find_span(double t) const;
  // Raw derivative table for the degree+1 nonzero functions at t:
  // ders(k, j) is the k-th derivative of N_{span-degree+j}.
  Mat raw_derivs(double t, int n_deriv, int& first) const;
  Mat finish(const Mat& local, int first, int n_rows) const;

  int degree_;
  int n_interior_;
  Interval domain_;
  std::vector<double> knots_;
  std::optional<Mat> transform_;
};

SplineBasis make_bspline(int degree, int n_interior_knots, Interval domain);

// Gram matrix of the basis, integral of b(t) b(t)^T over the domain, by
// Gauss-Legendre quadrature on every knot interval.
Mat gram_matrix(const SplineBasis& basis, int n_quad);

// Whitens the basis against its Gram matrix: with G = L L^T (lower Cholesky)
// the returned basis carries T = L^{-1}, so its Gram matrix is the identity.
// n_quad <= 0 selects degree + 2 nodes per interval.
SplineBasis orthonormalize(const SplineBasis& basis, int n_quad = 0);

// a(t) (x) u(z); entry i*p + j holds a_i(t) * u_j(z).
Vec kron(const Vec& a, const Vec& u);
Vec tensor_row(const SplineBasis& a_basis, const SplineBasis& u_basis, double t, double z,
               DomainPolicy policy = DomainPolicy::error);

} // namespace sfpca
