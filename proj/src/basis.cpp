#include "sfpca/basis.hpp"

#include "sfpca/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sfpca {

QuadratureRule gauss_legendre(int n) {
  if (n < 1) throw InvalidArgument("gauss_legendre: need at least one node");
  Mat jacobi = Mat::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    const double b = k / std::sqrt(4.0 * k * k - 1.0);
    jacobi(k, k - 1) = b;
    jacobi(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Mat> eig(jacobi);
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] = eig.eigenvalues()(i);
    const double v0 = eig.eigenvectors()(0, i);
    rule.weights[i] = 2.0 * v0 * v0;
  }
  return rule;
}

SplineBasis::SplineBasis(int degree, int n_interior_knots, Interval domain)
    : degree_(degree), n_interior_(n_interior_knots), domain_(domain) {
  if (degree < 1) throw InvalidArgument("spline degree must be >= 1");
  if (n_interior_knots < 0) throw InvalidArgument("interior knot count must be >= 0");
  if (!(std::isfinite(domain.lo) && std::isfinite(domain.hi)) || !(domain.hi > domain.lo)) {
    std::ostringstream msg;
    msg << "spline domain must be a nonempty interval, got [" << domain.lo << ", " << domain.hi
        << "]";
    throw InvalidArgument(msg.str());
  }
  knots_.reserve(n_interior_ + 2 * (degree_ + 1));
  for (int i = 0; i <= degree_; ++i) knots_.push_back(domain_.lo);
  const double step = domain_.width() / (n_interior_ + 1);
  for (int k = 1; k <= n_interior_; ++k) knots_.push_back(domain_.lo + k * step);
  for (int i = 0; i <= degree_; ++i) knots_.push_back(domain_.hi);
}

SplineBasis SplineBasis::with_transform(const Mat& T) const {
  if (T.rows() != size() || T.cols() != size())
    throw InvalidArgument("basis transform must be square with the basis dimension");
  SplineBasis out = *this;
  out.transform_ = transform_ ? Mat(T * *transform_) : T;
  return out;
}

SplineBasis SplineBasis::raw() const {
  SplineBasis out = *this;
  out.transform_.reset();
  return out;
}

double SplineBasis::resolve(double t, DomainPolicy policy) const {
  if (!std::isfinite(t)) throw DataError("spline argument is not finite");
  if (domain_.contains(t)) return t;
  switch (policy) {
  case DomainPolicy::clamp:
    return std::clamp(t, domain_.lo, domain_.hi);
  case DomainPolicy::extrapolate:
    return t;
  case DomainPolicy::error:
    break;
  }
  std::ostringstream msg;
  msg << "value " << t << " outside spline domain [" << domain_.lo << ", " << domain_.hi << "]";
  throw DataError(msg.str());
}

int SplineBasis::find_span(double t) const {
  const int n = size() - 1;
  // Left limit at the upper end: the last piece owns t = hi.
  if (t >= knots_[n + 1]) return n;
  if (t <= knots_[degree_]) return degree_;
  auto it = std::upper_bound(knots_.begin() + degree_, knots_.begin() + n + 2, t);
  return static_cast<int>(it - knots_.begin()) - 1;
}

Mat SplineBasis::raw_derivs(double t, int n_deriv, int& first) const {
  const int p = degree_;
  const int span = find_span(t);
  first = span - p;
  const auto& U = knots_;

  Mat ndu(p + 1, p + 1);
  std::vector<double> left(p + 1), right(p + 1);
  ndu(0, 0) = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = t - U[span + 1 - j];
    right[j] = U[span + j] - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu(j, r) = right[r + 1] + left[j - r];
      const double temp = ndu(r, j - 1) / ndu(j, r);
      ndu(r, j) = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu(j, j) = saved;
  }

  const int nd = std::min(n_deriv, p);
  Mat ders = Mat::Zero(n_deriv + 1, p + 1);
  for (int j = 0; j <= p; ++j) ders(0, j) = ndu(j, p);

  Mat a(2, p + 1);
  for (int r = 0; r <= p; ++r) {
    int s1 = 0, s2 = 1;
    a.setZero();
    a(0, 0) = 1.0;
    for (int k = 1; k <= nd; ++k) {
      double d = 0.0;
      const int rk = r - k;
      const int pk = p - k;
      if (r >= k) {
        a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
        d = a(s2, 0) * ndu(rk, pk);
      }
      const int j1 = rk >= -1 ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
        d += a(s2, j) * ndu(rk + j, pk);
      }
      if (r <= pk) {
        a(s2, k) = -a(s1, k - 1) / ndu(pk + 1, r);
        d += a(s2, k) * ndu(r, pk);
      }
      ders(k, r) = d;
      std::swap(s1, s2);
    }
  }
  double factor = p;
  for (int k = 1; k <= nd; ++k) {
    ders.row(k) *= factor;
    factor *= (p - k);
  }
  return ders;
}

Mat SplineBasis::finish(const Mat& local, int first, int n_rows) const {
  // local is n_rows x (degree+1); scatter into a full size() x n_rows block.
  Mat full = Mat::Zero(size(), n_rows);
  for (int k = 0; k < n_rows; ++k)
    for (int j = 0; j <= degree_; ++j) full(first + j, k) = local(k, j);
  if (transform_) full = (*transform_) * full;
  return full;
}

Vec SplineBasis::eval(double t, DomainPolicy policy) const {
  const double x = resolve(t, policy);
  int first = 0;
  const Mat d = raw_derivs(x, 0, first);
  return finish(d, first, 1).col(0);
}

Vec SplineBasis::eval_deriv2(double t, DomainPolicy policy) const {
  const double x = resolve(t, policy);
  int first = 0;
  const Mat d = raw_derivs(x, 2, first);
  return finish(d.bottomRows(1), first, 1).col(0);
}

Mat SplineBasis::eval_derivs(double t, DomainPolicy policy) const {
  const double x = resolve(t, policy);
  int first = 0;
  const Mat d = raw_derivs(x, 2, first);
  return finish(d, first, 3);
}

QuadratureRule SplineBasis::quadrature(int n_per_interval) const {
  const QuadratureRule ref = gauss_legendre(n_per_interval);
  QuadratureRule rule;
  for (std::size_t k = 0; k + 1 < knots_.size(); ++k) {
    const double a = knots_[k];
    const double b = knots_[k + 1];
    if (!(b > a)) continue;
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (b + a);
    for (std::size_t i = 0; i < ref.nodes.size(); ++i) {
      rule.nodes.push_back(mid + half * ref.nodes[i]);
      rule.weights.push_back(half * ref.weights[i]);
    }
  }
  return rule;
}

bool operator==(const SplineBasis& a, const SplineBasis& b) {
  if (a.degree_ != b.degree_ || a.n_interior_ != b.n_interior_ ||
      a.domain_.lo != b.domain_.lo || a.domain_.hi != b.domain_.hi ||
      a.transform_.has_value() != b.transform_.has_value())
    return false;
  return !a.transform_ || *a.transform_ == *b.transform_;
}

SplineBasis make_bspline(int degree, int n_interior_knots, Interval domain) {
  return SplineBasis(degree, n_interior_knots, domain);
}

Mat gram_matrix(const SplineBasis& basis, int n_quad) {
  const QuadratureRule rule = basis.quadrature(n_quad);
  const int m = basis.size();
  Mat G = Mat::Zero(m, m);
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    const Vec b = basis.eval(rule.nodes[i]);
    G.selfadjointView<Eigen::Lower>().rankUpdate(b, rule.weights[i]);
  }
  return G.selfadjointView<Eigen::Lower>();
}

SplineBasis orthonormalize(const SplineBasis& basis, int n_quad) {
  if (n_quad <= 0) n_quad = basis.degree() + 2;
  const Mat G = gram_matrix(basis, n_quad);
  Eigen::LLT<Mat> llt(G);
  if (llt.info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(G, Eigen::EigenvaluesOnly);
    std::ostringstream msg;
    msg << "orthonormalize: Gram matrix is not positive definite (eigenvalue range "
        << eig.eigenvalues().minCoeff() << " .. " << eig.eigenvalues().maxCoeff() << ")";
    throw NumericalError(msg.str());
  }
  const int m = basis.size();
  Mat Linv = llt.matrixL().solve(Mat::Identity(m, m));
  return basis.with_transform(Linv);
}

Vec kron(const Vec& a, const Vec& u) {
  const Eigen::Index p = u.size();
  Vec out(a.size() * p);
  for (Eigen::Index i = 0; i < a.size(); ++i) out.segment(i * p, p) = a(i) * u;
  return out;
}

Vec tensor_row(const SplineBasis& a_basis, const SplineBasis& u_basis, double t, double z,
               DomainPolicy policy) {
  return kron(a_basis.eval(t, policy), u_basis.eval(z, policy));
}

} // namespace sfpca
