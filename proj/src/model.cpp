#include "sfpca/model.hpp"

#include "sfpca/error.hpp"

#include <algorithm>
#include <sstream>

namespace sfpca {

ModelBases make_bases(int l, int p, int m, int q, Interval t_domain, Interval z_domain) {
  constexpr int degree = 3;
  for (int size : {l, p, m, q})
    if (size < degree + 1)
      throw InvalidArgument("every basis needs at least 4 functions for cubic splines");
  return ModelBases{make_bspline(degree, l - degree - 1, t_domain),
                    make_bspline(degree, p - degree - 1, z_domain),
                    orthonormalize(make_bspline(degree, m - degree - 1, t_domain)),
                    make_bspline(degree, q - degree - 1, z_domain)};
}

void ModelParams::set_beta(const Vec& beta) {
  if (beta.size() != gamma.size()) throw InvalidArgument("beta length does not match Gamma");
  gamma = Eigen::Map<const Mat>(beta.data(), gamma.rows(), gamma.cols());
}

ModelParams ModelParams::zeros(const ModelBases& bases, int r, double sigma2) {
  if (r < 1 || r > bases.m()) throw InvalidArgument("rank r must satisfy 1 <= r <= m");
  if (!(sigma2 > 0.0)) throw InvalidArgument("noise variance must be positive");
  ModelParams out;
  out.theta = Vec::Zero(bases.l() * bases.p());
  out.gamma = Mat::Zero(bases.m() * bases.q(), r);
  out.log_sigma2 = std::log(sigma2);
  return out;
}

void FunctionalSample::validate() const {
  auto fail = [&](const std::string& what) {
    throw DataError("sample '" + id + "': " + what);
  };
  if (times.size() == 0) fail("no observations");
  if (values.size() != times.size()) fail("times and values differ in length");
  if (has_noise_sd() && noise_sd.size() != times.size()) fail("noise_sd length differs");
  if (!std::isfinite(covariate)) fail("covariate is not finite");
  for (Eigen::Index i = 0; i < times.size(); ++i) {
    if (!std::isfinite(times(i)) || !std::isfinite(values(i))) fail("non-finite observation");
    if (i > 0 && times(i) < times(i - 1)) fail("times are not sorted");
    if (has_noise_sd() && !(noise_sd(i) > 0.0 && std::isfinite(noise_sd(i))))
      fail("noise_sd must be positive");
  }
}

FunctionalSample FunctionalSample::subset(const std::vector<Eigen::Index>& rows) const {
  FunctionalSample out;
  out.id = id;
  out.covariate = covariate;
  const auto n = static_cast<Eigen::Index>(rows.size());
  out.times.resize(n);
  out.values.resize(n);
  if (has_noise_sd()) out.noise_sd.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    out.times(k) = times(rows[k]);
    out.values(k) = values(rows[k]);
    if (has_noise_sd()) out.noise_sd(k) = noise_sd(rows[k]);
  }
  return out;
}

Mat c_matrix(const Mat& gamma, const Vec& v_at_z, int m) {
  const Eigen::Index q = v_at_z.size();
  if (gamma.rows() != m * q) throw InvalidArgument("Gamma rows must equal m * q");
  Mat C(m, gamma.cols());
  for (int i = 0; i < m; ++i) C.row(i) = v_at_z.transpose() * gamma.middleRows(i * q, q);
  return C;
}

Mat c_matrix(const ModelParams& params, double z, const SplineBasis& v_basis,
             DomainPolicy policy) {
  const Vec v = v_basis.eval(z, policy);
  return c_matrix(params.gamma, v, static_cast<int>(params.gamma.rows() / v.size()));
}

Mat sigma_of_z(const ModelParams& params, double z, const SplineBasis& b_basis,
               const SplineBasis& v_basis, DomainPolicy policy) {
  const Mat C = c_matrix(params.gamma, v_basis.eval(z, policy), b_basis.size());
  return C * C.transpose();
}

DesignPair design(const FunctionalSample& sample, const ModelBases& bases, DomainPolicy policy) {
  const Eigen::Index n = sample.size();
  DesignPair out{Mat(n, bases.m()), Mat(n, bases.l() * bases.p())};
  Vec u;
  try {
    u = bases.u.eval(sample.covariate, policy);
  } catch (const DataError& e) {
    throw DataError("sample '" + sample.id + "': covariate " + e.what());
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    try {
      out.B.row(i) = bases.b.eval(sample.times(i), policy).transpose();
      out.H.row(i) = kron(bases.a.eval(sample.times(i), policy), u).transpose();
    } catch (const DataError& e) {
      std::ostringstream msg;
      msg << "sample '" << sample.id << "', observation " << i << ": " << e.what();
      throw DataError(msg.str());
    }
  }
  return out;
}

Mat marginal_cov(const FunctionalSample& sample, const ModelParams& params,
                 const ModelBases& bases, DomainPolicy policy) {
  const DesignPair d = design(sample, bases, policy);
  const Mat C = c_matrix(params.gamma, bases.v.eval(sample.covariate, policy), bases.m());
  const Mat BC = d.B * C;
  Mat S = BC * BC.transpose();
  if (sample.has_noise_sd())
    S.diagonal() += sample.noise_sd.array().square().matrix();
  else
    S.diagonal().array() += params.sigma2();
  return S;
}

Eigenfunctions eigenfunctions_at(const ModelParams& params, double z, const SplineBasis& b_basis,
                                 const SplineBasis& v_basis, const Vec& t_grid,
                                 DomainPolicy policy) {
  const int r = params.r();
  const int m = b_basis.size();
  const Mat sigma = sigma_of_z(params, z, b_basis, v_basis, policy);
  Eigen::SelfAdjointEigenSolver<Mat> eig(sigma);
  if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition of Sigma(z) failed");

  Eigenfunctions out;
  out.z = z;
  out.eigenvalues.resize(r);
  out.vectors.resize(m, r);
  for (int j = 0; j < r; ++j) {
    const int col = m - 1 - j;
    out.eigenvalues(j) = std::max(0.0, eig.eigenvalues()(col));
    Vec v = eig.eigenvectors().col(col);
    Eigen::Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    if (v(imax) < 0) v = -v;
    out.vectors.col(j) = v;
  }
  out.functions.resize(r, t_grid.size());
  for (Eigen::Index k = 0; k < t_grid.size(); ++k)
    out.functions.col(k) = out.vectors.transpose() * b_basis.eval(t_grid(k), policy);
  return out;
}

std::vector<Eigenfunctions> eigen_sweep(const ModelParams& params, const ModelBases& bases,
                                        const Vec& z_grid, const Vec& t_grid) {
  std::vector<Eigenfunctions> out;
  out.reserve(z_grid.size());
  for (Eigen::Index k = 0; k < z_grid.size(); ++k) {
    Eigenfunctions ef =
        eigenfunctions_at(params, z_grid(k), bases.b, bases.v, t_grid, DomainPolicy::clamp);
    if (!out.empty()) {
      const Eigenfunctions& prev = out.back();
      for (int j = 0; j < params.r(); ++j) {
        if (ef.vectors.col(j).dot(prev.vectors.col(j)) < 0) {
          ef.vectors.col(j) *= -1.0;
          ef.functions.row(j) *= -1.0;
        }
      }
    }
    out.push_back(std::move(ef));
  }
  return out;
}

Vec linspace(double lo, double hi, int n) {
  if (n < 1) throw InvalidArgument("linspace needs at least one point");
  if (n == 1) return Vec::Constant(1, lo);
  return Vec::LinSpaced(n, lo, hi);
}

} // namespace sfpca
