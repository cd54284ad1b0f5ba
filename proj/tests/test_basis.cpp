#include "doctest.h"

#include "sfpca/basis.hpp"
#include "sfpca/error.hpp"

#include <cmath>
#include <random>
#include <vector>

using namespace sfpca;

namespace {

// Bernstein polynomials of degree 3, the no-interior-knot cubic B-splines on [0, 1].
Vec bernstein3(double t) {
  Vec b(4);
  b << std::pow(1 - t, 3), 3 * t * (1 - t) * (1 - t), 3 * t * t * (1 - t), t * t * t;
  return b;
}

std::vector<double> grid(double lo, double hi, int n) {
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = lo + (hi - lo) * i / (n - 1);
  out.back() = hi;
  return out;
}

} // namespace

TEST_CASE("make_bspline sizes and knots") {
  CHECK(make_bspline(3, 6, {0, 1}).size() == 10);
  CHECK(make_bspline(3, 0, {0, 1}).size() == 4);
  const SplineBasis b = make_bspline(3, 1, {0, 2});
  CHECK(b.size() == 5);
  CHECK(b.knots()[4] == doctest::Approx(1.0));
  CHECK(b.knots().size() == 9u);

  CHECK_THROWS_AS(make_bspline(3, 2, {1, 1}), InvalidArgument);
  CHECK_THROWS_AS(make_bspline(3, 2, {1, 0}), InvalidArgument);
  CHECK_THROWS_AS(make_bspline(0, 2, {0, 1}), InvalidArgument);
  CHECK_THROWS_AS(make_bspline(3, -1, {0, 1}), InvalidArgument);
}

TEST_CASE("no-knot cubic equals the Bernstein basis") {
  const SplineBasis b = make_bspline(3, 0, {0, 1});
  const Vec at_half = b.eval(0.5);
  CHECK(at_half(0) == doctest::Approx(0.125).epsilon(1e-14));
  CHECK(at_half(1) == doctest::Approx(0.375).epsilon(1e-14));
  CHECK(at_half(2) == doctest::Approx(0.375).epsilon(1e-14));
  CHECK(at_half(3) == doctest::Approx(0.125).epsilon(1e-14));
  for (double t : {0.0, 0.1, 0.37, 0.9, 1.0})
    CHECK((b.eval(t) - bernstein3(t)).cwiseAbs().maxCoeff() < 1e-14);

  const Vec d2 = b.eval_deriv2(0.0);
  CHECK(d2(0) == doctest::Approx(6.0));
  CHECK(d2(1) == doctest::Approx(-12.0));
  CHECK(d2(2) == doctest::Approx(6.0));
  CHECK(std::abs(d2(3)) < 1e-12);
}

TEST_CASE("partition of unity, boundary values and local support") {
  for (int degree : {1, 2, 3}) {
    const SplineBasis b = make_bspline(degree, 5, {-1.0, 2.0});
    for (double t : grid(-1.0, 2.0, 301)) {
      const Vec v = b.eval(t);
      CHECK(std::abs(v.sum() - 1.0) < 1e-12);
      CHECK(v.minCoeff() >= -1e-15);
      CHECK((v.array() != 0.0).count() <= degree + 1);
    }
    const Vec lo = b.eval(-1.0);
    CHECK(lo(0) == 1.0);
    CHECK(lo.tail(lo.size() - 1).cwiseAbs().maxCoeff() == 0.0);
    const Vec hi = b.eval(2.0);
    CHECK(hi(hi.size() - 1) == doctest::Approx(1.0));
  }
}

TEST_CASE("domain policy") {
  const SplineBasis b = make_bspline(3, 2, {0, 1});
  CHECK_THROWS_AS(b.eval(1.5), DataError);
  CHECK_THROWS_AS(b.eval(-0.1), DataError);
  CHECK((b.eval(1.5, DomainPolicy::clamp) - b.eval(1.0)).norm() == 0.0);
  // Extrapolation continues the last polynomial piece, so it stays a partition of unity.
  CHECK(std::abs(b.eval(1.2, DomainPolicy::extrapolate).sum() - 1.0) < 1e-12);
}

TEST_CASE("second derivative matches central differences") {
  const SplineBasis b = orthonormalize(make_bspline(3, 6, {0, 1}));
  const double h = 1e-4;
  double worst = 0.0;
  for (double t : grid(0.01, 0.99, 97)) {
    // Central differences are exact on a cubic piece; skip stencils straddling a knot.
    const double pos = t * 7.0;
    if (std::abs(pos - std::round(pos)) * (1.0 / 7.0) < 2 * h) continue;
    const Vec fd = (b.eval(t + h) - 2.0 * b.eval(t) + b.eval(t - h)) / (h * h);
    worst = std::max(worst, (fd - b.eval_deriv2(t)).cwiseAbs().maxCoeff() /
                                (1.0 + b.eval_deriv2(t).cwiseAbs().maxCoeff()));
  }
  CHECK(worst < 1e-5);

  // Coefficients of a straight line have zero curvature.
  const SplineBasis raw = make_bspline(3, 4, {0, 1});
  const Vec greville = [&] {
    Vec g(raw.size());
    for (int i = 0; i < raw.size(); ++i)
      g(i) = (raw.knots()[i + 1] + raw.knots()[i + 2] + raw.knots()[i + 3]) / 3.0;
    return g;
  }();
  const Vec coef = 2.0 - 3.0 * greville.array();
  for (double t : {0.05, 0.5, 0.77}) {
    CHECK(std::abs(coef.dot(raw.eval(t)) - (2.0 - 3.0 * t)) < 1e-12);
    CHECK(std::abs(coef.dot(raw.eval_deriv2(t))) < 1e-10);
  }
}

TEST_CASE("orthonormalize") {
  const SplineBasis raw = make_bspline(3, 0, {0, 1});
  const Mat G = gram_matrix(raw, 5);
  CHECK(G(0, 0) == doctest::Approx(1.0 / 7.0).epsilon(1e-13));

  const SplineBasis b = orthonormalize(make_bspline(3, 6, {0, 1}));
  CHECK(b.has_transform());
  const Mat Gb = gram_matrix(b, 5);
  CHECK((Gb - Mat::Identity(10, 10)).cwiseAbs().maxCoeff() < 1e-10);

  // Gram computed with many more nodes agrees, so the per-interval rule is exact.
  CHECK((gram_matrix(b, 12) - Mat::Identity(10, 10)).cwiseAbs().maxCoeff() < 1e-10);

  const SplineBasis twice = orthonormalize(b);
  CHECK((gram_matrix(twice, 5) - Mat::Identity(10, 10)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("gauss_legendre integrates polynomials exactly") {
  const QuadratureRule rule = gauss_legendre(4);
  double sum_w = 0.0, x6 = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    sum_w += rule.weights[i];
    x6 += rule.weights[i] * std::pow(rule.nodes[i], 6);
  }
  CHECK(sum_w == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(x6 == doctest::Approx(2.0 / 7.0).epsilon(1e-13));
}

TEST_CASE("tensor_row ordering") {
  Vec a(2), u(2);
  a << 1, 0;
  u << 0, 1;
  const Vec k = kron(a, u);
  CHECK(k(0) == 0);
  CHECK(k(1) == 1);
  CHECK(k(2) == 0);
  CHECK(k(3) == 0);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const SplineBasis ab = make_bspline(3, 3, {0, 1});
  const SplineBasis ub = make_bspline(3, 1, {0, 1});
  for (int rep = 0; rep < 20; ++rep) {
    const double t = unif(rng), z = unif(rng);
    const Vec row = tensor_row(ab, ub, t, z);
    const Vec av = ab.eval(t), uv = ub.eval(z);
    for (int i = 0; i < av.size(); ++i)
      for (int j = 0; j < uv.size(); ++j) CHECK(row(i * uv.size() + j) == av(i) * uv(j));
    CHECK(std::abs(row.sum() - av.sum() * uv.sum()) < 1e-12);
  }
}
