#include "sfpca/penalty.hpp"

#include "sfpca/error.hpp"

#include <unsupported/Eigen/KroneckerProduct>

#include <cmath>
#include <sstream>

namespace sfpca {

namespace {

void check_lambdas(const Lambdas& lam) {
  for (double x : {lam.t_cov, lam.z_cov, lam.t_mean, lam.z_mean})
    if (!(x >= 0.0) || !std::isfinite(x))
      throw InvalidArgument("smoothing weights must be finite and nonnegative");
}

void check_lengths(const PenaltyOperator& op, const Vec& theta, const Vec& beta, int r) {
  if (theta.size() != op.S_t_mean.rows()) {
    std::ostringstream msg;
    msg << "penalty: theta has length " << theta.size() << ", expected " << op.S_t_mean.rows();
    throw InvalidArgument(msg.str());
  }
  if (r < 1 || beta.size() != op.S_t_cov.rows() * r) {
    std::ostringstream msg;
    msg << "penalty: beta has length " << beta.size() << ", expected " << op.S_t_cov.rows()
        << " * r with r = " << r;
    throw InvalidArgument(msg.str());
  }
}

} // namespace

Mat raw_penalty_matrix(const SplineBasis& basis) {
  const QuadratureRule rule = basis.quadrature(basis.degree() + 2);
  const int m = basis.size();
  Mat S = Mat::Zero(m, m);
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    const Vec d2 = basis.eval_deriv2(rule.nodes[i]);
    S.selfadjointView<Eigen::Lower>().rankUpdate(d2, rule.weights[i]);
  }
  return S.selfadjointView<Eigen::Lower>();
}

Mat collocation_matrix(const SplineBasis& basis, int n_points) {
  const int m = basis.size();
  if (n_points != m) {
    std::ostringstream msg;
    msg << "collocation matrix must be square: " << n_points << " grid points for " << m
        << " basis functions";
    throw InvalidArgument(msg.str());
  }
  const Interval dom = basis.domain();
  Mat X(m, n_points);
  for (int j = 0; j < n_points; ++j) {
    // The last point is pinned to hi; lo + width can round past it.
    const double x = n_points == 1       ? dom.lo
                     : j == n_points - 1 ? dom.hi
                                         : dom.lo + j * dom.width() / (n_points - 1);
    X.col(j) = basis.eval(x);
  }
  Eigen::FullPivLU<Mat> lu(X);
  if (!lu.isInvertible()) {
    std::ostringstream msg;
    msg << "collocation matrix is singular (rank " << lu.rank() << " of " << m
        << "); check the knot layout";
    throw NumericalError(msg.str());
  }
  return X;
}

Mat grid_penalty(const SplineBasis& basis) {
  const Mat S = raw_penalty_matrix(basis);
  const Mat X = collocation_matrix(basis, basis.size());
  // X here is (i, j) = b_i(x_j); the value-space penalty is X^{-1} S X^{-T}.
  Eigen::PartialPivLU<Mat> lu(X);
  const Mat left = lu.solve(S);
  Mat out = lu.solve(Mat(left.transpose()));
  return 0.5 * (out + out.transpose());
}

PenaltyOperator PenaltyOperator::with_lambdas(const Lambdas& lam) const {
  check_lambdas(lam);
  PenaltyOperator out = *this;
  out.lambdas = lam;
  out.cov_weighted = lam.t_cov * S_t_cov + lam.z_cov * S_z_cov;
  out.mean_weighted = lam.t_mean * S_t_mean + lam.z_mean * S_z_mean;
  return out;
}

PenaltyOperator assemble(const SplineBasis& b_basis, const SplineBasis& v_basis,
                         const SplineBasis& a_basis, const SplineBasis& u_basis,
                         const Lambdas& lambdas) {
  check_lambdas(lambdas);
  const int m = b_basis.size(), q = v_basis.size();
  const int l = a_basis.size(), p = u_basis.size();

  PenaltyOperator op;
  op.S_t_cov = Eigen::kroneckerProduct(grid_penalty(b_basis), Mat::Identity(q, q));
  op.S_z_cov = Eigen::kroneckerProduct(Mat::Identity(m, m), grid_penalty(v_basis));
  op.S_t_mean = Eigen::kroneckerProduct(grid_penalty(a_basis), Mat::Identity(p, p));
  op.S_z_mean = Eigen::kroneckerProduct(Mat::Identity(l, l), grid_penalty(u_basis));
  return op.with_lambdas(lambdas);
}

double penalty_value(const PenaltyOperator& op, const Vec& theta_mu, const Vec& beta, int r) {
  check_lengths(op, theta_mu, beta, r);
  double value = theta_mu.dot(op.mean_weighted * theta_mu);
  const Eigen::Index mq = op.S_t_cov.rows();
  Eigen::Map<const Mat> gamma(beta.data(), mq, r);
  value += (gamma.cwiseProduct(op.cov_weighted * gamma)).sum();
  return value;
}

std::pair<Vec, Vec> penalty_grad(const PenaltyOperator& op, const Vec& theta_mu, const Vec& beta,
                                 int r) {
  check_lengths(op, theta_mu, beta, r);
  const Mat& Sm = op.mean_weighted;
  Vec g_theta = (Sm + Sm.transpose()) * theta_mu;

  const Eigen::Index mq = op.S_t_cov.rows();
  Eigen::Map<const Mat> gamma(beta.data(), mq, r);
  const Mat& Sc = op.cov_weighted;
  Mat g_gamma = (Sc + Sc.transpose()) * gamma;
  Vec g_beta = Eigen::Map<const Vec>(g_gamma.data(), g_gamma.size());
  return {std::move(g_theta), std::move(g_beta)};
}

} // namespace sfpca
