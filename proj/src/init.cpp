#include "sfpca/init.hpp"

#include "sfpca/error.hpp"
#include "sfpca/log.hpp"
#include "sfpca/penalty.hpp"

#include <unsupported/Eigen/KroneckerProduct>

#include <algorithm>
#include <cmath>
#include <exception>
#include <sstream>

namespace sfpca {

namespace {

// Relative weight of the roughness penalty on the bin mean curve.
constexpr double kMeanSmoothing = 1e-4;
constexpr double kRidge = 1e-8;

Mat solve_spd(Mat A, const Mat& rhs) {
  Eigen::LLT<Mat> llt(A);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-12) {
    const double scale = std::max(A.trace() / A.rows(), 1e-300);
    A.diagonal().array() += kRidge * scale;
    llt.compute(A);
    if (llt.info() != Eigen::Success) throw NumericalError("initialization: singular normal equations");
  }
  return llt.solve(rhs);
}

// Bin mean curve coefficients (c0, c1) for b(t)^T (c0 + (z - z0) c1).
Vec bin_mean(const std::vector<const FunctionalSample*>& curves, const std::vector<Mat>& Bs,
             double z0, const Mat& S) {
  const Eigen::Index m = S.rows();
  Mat G = Mat::Zero(2 * m, 2 * m);
  Vec rhs = Vec::Zero(2 * m);
  for (std::size_t n = 0; n < curves.size(); ++n) {
    const Mat& B = Bs[n];
    const double dz = curves[n]->covariate - z0;
    const Mat BtB = B.transpose() * B;
    const Vec Bty = B.transpose() * curves[n]->values;
    G.topLeftCorner(m, m) += BtB;
    G.topRightCorner(m, m) += dz * BtB;
    G.bottomRightCorner(m, m) += dz * dz * BtB;
    rhs.head(m) += Bty;
    rhs.tail(m) += dz * Bty;
  }
  G.bottomLeftCorner(m, m) = G.topRightCorner(m, m).transpose();
  const double s_trace = std::max(S.trace(), 1e-300);
  const double lam0 = kMeanSmoothing * G.topLeftCorner(m, m).trace() / s_trace;
  const double lam1 = kMeanSmoothing * G.bottomRightCorner(m, m).trace() / s_trace;
  G.topLeftCorner(m, m) += lam0 * S;
  G.bottomRightCorner(m, m) += lam1 * S;
  // The slope block vanishes when all members share one covariate value.
  const double ridge = kRidge * std::max(G.trace() / (2.0 * m), 1e-300);
  G.diagonal().array() += ridge;
  return solve_spd(G, rhs);
}

} // namespace

int default_n_bins(std::size_t n_samples) {
  return static_cast<int>(std::max<std::size_t>(5, std::min<std::size_t>(15, n_samples / 50)));
}

std::vector<BinSummary> bin_samples(const std::vector<FunctionalSample>& samples, int n_bins,
                                    int min_bin_count) {
  if (n_bins < 1) throw InvalidArgument("number of bins must be at least 1");
  if (min_bin_count < 1) throw InvalidArgument("minimum bin count must be at least 1");
  if (samples.empty()) throw DataError("initialization needs at least one curve");

  double lo = samples.front().covariate, hi = lo;
  for (const auto& s : samples) {
    lo = std::min(lo, s.covariate);
    hi = std::max(hi, s.covariate);
  }
  const double width = (hi - lo) / n_bins;
  std::vector<std::vector<std::size_t>> members(n_bins);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    int k = width > 0.0 ? static_cast<int>((samples[i].covariate - lo) / width) : 0;
    k = std::clamp(k, 0, n_bins - 1);
    members[k].push_back(i);
  }

  std::vector<BinSummary> out;
  int dropped = 0;
  for (int k = 0; k < n_bins; ++k) {
    if (static_cast<int>(members[k].size()) < min_bin_count) {
      if (!members[k].empty() || n_bins > 1) ++dropped;
      continue;
    }
    BinSummary bin;
    bin.bin_index = k;
    bin.members = members[k];
    double sum = 0.0;
    for (std::size_t i : bin.members) {
      sum += samples[i].covariate;
      bin.sample_ids.push_back(samples[i].id);
    }
    bin.z_center = sum / static_cast<double>(bin.members.size());
    out.push_back(std::move(bin));
  }
  if (out.empty()) {
    std::ostringstream msg;
    msg << "initialization: every one of the " << n_bins << " covariate bins has fewer than "
        << min_bin_count << " curves; use fewer bins";
    throw DataError(msg.str());
  }
  if (dropped > 0) {
    std::ostringstream msg;
    msg << "initialization dropped " << dropped << " of " << n_bins
        << " covariate bins with fewer than " << min_bin_count << " curves";
    warn(msg.str());
  }
  return out;
}

BinSummary bin_covariance(BinSummary bin, const std::vector<FunctionalSample>& samples,
                          const SplineBasis& b_basis, double sigma2_floor) {
  const int m = b_basis.size();
  std::vector<const FunctionalSample*> curves;
  std::vector<Mat> Bs;
  for (std::size_t i : bin.members) {
    const FunctionalSample& s = samples.at(i);
    Mat B(s.size(), m);
    for (Eigen::Index j = 0; j < s.size(); ++j) B.row(j) = b_basis.eval(s.times(j)).transpose();
    curves.push_back(&s);
    Bs.push_back(std::move(B));
  }
  if (curves.empty()) throw DataError("initialization: empty covariate bin");

  const Vec coef = bin_mean(curves, Bs, bin.z_center, raw_penalty_matrix(b_basis));
  const Vec c0 = coef.head(m), c1 = coef.tail(m);

  // Least squares of e_j e_k on b_j^T Sigma b_k over ordered pairs j != k, in vec(Sigma).
  const int mm = m * m;
  Mat normal = Mat::Zero(mm, mm);
  Vec rhs = Vec::Zero(mm);
  std::vector<Vec> residuals(curves.size());
  for (std::size_t n = 0; n < curves.size(); ++n) {
    const Mat& B = Bs[n];
    const double dz = curves[n]->covariate - bin.z_center;
    residuals[n] = curves[n]->values - B * (c0 + dz * c1);
    if (B.rows() < 2) continue;
    const Vec& e = residuals[n];
    const Mat G = B.transpose() * B;
    Mat K(B.rows(), mm);
    for (Eigen::Index j = 0; j < B.rows(); ++j) {
      const Vec bj = B.row(j).transpose();
      K.row(j) = Eigen::kroneckerProduct(bj, bj).eval().transpose();
    }
    normal += Eigen::kroneckerProduct(G, G);
    normal.noalias() -= K.transpose() * K;
    const Vec Bte = B.transpose() * e;
    Mat R = Bte * Bte.transpose();
    R.noalias() -= B.transpose() * e.cwiseAbs2().asDiagonal() * B;
    rhs += Eigen::Map<const Vec>(R.data(), mm);
  }

  Mat sigma(m, m);
  if (rhs.squaredNorm() == 0.0) {
    sigma.setZero();
  } else {
    const Vec sol = solve_spd(normal, rhs);
    sigma = Eigen::Map<const Mat>(sol.data(), m, m);
    sigma = (0.5 * (sigma + sigma.transpose())).eval();
    Eigen::SelfAdjointEigenSolver<Mat> eig(sigma);
    const Vec clipped = eig.eigenvalues().cwiseMax(0.0);
    sigma = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
    sigma = (0.5 * (sigma + sigma.transpose())).eval();
  }
  bin.sigma_hat = sigma;

  // Diagonal residual variance not explained by the smooth part.
  double excess = 0.0;
  std::size_t count = 0;
  for (std::size_t n = 0; n < curves.size(); ++n) {
    if (curves[n]->has_noise_sd()) continue;
    const Mat& B = Bs[n];
    for (Eigen::Index j = 0; j < B.rows(); ++j) {
      const Vec bj = B.row(j).transpose();
      excess += residuals[n](j) * residuals[n](j) - bj.dot(sigma * bj);
      ++count;
    }
  }
  bin.has_noise_var = count > 0;
  bin.noise_var = count > 0 ? std::max(excess / static_cast<double>(count), sigma2_floor)
                            : sigma2_floor;
  return bin;
}

Mat rank_r_factor(const Mat& sigma_hat, int r) {
  const Eigen::Index m = sigma_hat.rows();
  if (r < 1 || r > m) throw InvalidArgument("rank r must satisfy 1 <= r <= m");
  Eigen::SelfAdjointEigenSolver<Mat> eig(sigma_hat);
  if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition of a bin covariance failed");
  Mat out(m, r);
  for (int j = 0; j < r; ++j) {
    const Eigen::Index col = m - 1 - j;
    out.col(j) = eig.eigenvectors().col(col) * std::sqrt(std::max(eig.eigenvalues()(col), 0.0));
  }
  return out;
}

Mat align_and_solve(std::vector<BinSummary>& bins, const SplineBasis& v_basis, int r) {
  if (bins.empty()) throw InvalidArgument("align_and_solve needs at least one bin");
  std::sort(bins.begin(), bins.end(),
            [](const BinSummary& a, const BinSummary& b) { return a.z_center < b.z_center; });
  const Eigen::Index m = bins.front().c_target.rows();
  for (const auto& b : bins)
    if (b.c_target.rows() != m || b.c_target.cols() != r)
      throw InvalidArgument("bin factors must all be m x r");

  // Greedy matching on |<prev_j, cur_k>|, largest first, lowest index on ties.
  for (std::size_t u = 1; u < bins.size(); ++u) {
    const Mat& prev = bins[u - 1].c_target;
    const Mat cur = bins[u].c_target;
    const Mat inner = prev.transpose() * cur;
    std::vector<bool> used_prev(r, false), used_cur(r, false);
    Mat aligned(m, r);
    for (int step = 0; step < r; ++step) {
      int bj = -1, bk = -1;
      double best = -1.0;
      for (int j = 0; j < r; ++j) {
        if (used_prev[j]) continue;
        for (int k = 0; k < r; ++k) {
          if (used_cur[k]) continue;
          if (std::abs(inner(j, k)) > best) {
            best = std::abs(inner(j, k));
            bj = j;
            bk = k;
          }
        }
      }
      used_prev[bj] = used_cur[bk] = true;
      aligned.col(bj) = inner(bj, bk) < 0.0 ? Vec(-cur.col(bk)) : Vec(cur.col(bk));
    }
    bins[u].c_target = aligned;
  }

  const int q = v_basis.size();
  Mat gamma(m * q, r);
  if (bins.size() < 2) {
    warn("initialization has a single covariate bin; starting covariance is constant in z");
    // v is a partition of unity, so a constant coefficient vector gives a constant function.
    for (Eigen::Index i = 0; i < m; ++i)
      for (int j = 0; j < r; ++j)
        gamma.block(i * q, j, q, 1).setConstant(bins.front().c_target(i, j));
    return gamma;
  }

  const auto U = static_cast<Eigen::Index>(bins.size());
  Mat V(U, q);
  for (Eigen::Index u = 0; u < U; ++u)
    V.row(u) = v_basis.eval(bins[u].z_center, DomainPolicy::clamp).transpose();
  Mat VtV = V.transpose() * V;
  VtV.diagonal().array() += kRidge * std::max(VtV.trace() / q, 1.0);
  Eigen::LLT<Mat> llt(VtV);
  if (llt.info() != Eigen::Success) throw NumericalError("initialization: covariate fit failed");

  // Targets for entry (i, j) across bins form one right-hand side.
  Mat targets(U, m * r);
  for (Eigen::Index u = 0; u < U; ++u)
    for (Eigen::Index i = 0; i < m; ++i)
      for (int j = 0; j < r; ++j) targets(u, i * r + j) = bins[u].c_target(i, j);
  const Mat coef = llt.solve(V.transpose() * targets);
  for (Eigen::Index i = 0; i < m; ++i)
    for (int j = 0; j < r; ++j) gamma.block(i * q, j, q, 1) = coef.col(i * r + j);
  return gamma;
}

InitResult initialize(const std::vector<FunctionalSample>& samples, const ModelBases& bases, int r,
                      const InitConfig& config) {
  if (r < 1 || r > bases.m()) throw InvalidArgument("rank r must satisfy 1 <= r <= m");
  const int n_bins = config.n_bins > 0 ? config.n_bins : default_n_bins(samples.size());
  std::vector<BinSummary> bins = bin_samples(samples, n_bins, config.min_bin_count);

  std::vector<std::exception_ptr> errors(bins.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(bins.size()); ++k) {
    try {
      bins[k] = bin_covariance(std::move(bins[k]), samples, bases.b, config.sigma2_floor);
      bins[k].c_target = rank_r_factor(bins[k].sigma_hat, r);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  InitResult out;
  out.params = ModelParams::zeros(bases, r, 1.0);
  out.params.gamma = align_and_solve(bins, bases.v, r);

  std::vector<double> noise;
  for (const auto& b : bins)
    if (b.has_noise_var) noise.push_back(b.noise_var);
  double sigma2 = config.sigma2_floor;
  if (!noise.empty()) {
    std::sort(noise.begin(), noise.end());
    const std::size_t n = noise.size();
    sigma2 = n % 2 == 1 ? noise[n / 2] : 0.5 * (noise[n / 2 - 1] + noise[n / 2]);
  }
  out.params.log_sigma2 = std::log(std::max(sigma2, config.sigma2_floor));
  out.bins = std::move(bins);
  return out;
}

} // namespace sfpca
