#include "sfpca/predict.hpp"

#include "sfpca/error.hpp"
#include "sfpca/log.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <random>
#include <sstream>

namespace sfpca {

namespace {

bool outside_covariate_range(const ModelBases& bases, double z) {
  return !bases.v.domain().contains(z) || !bases.u.domain().contains(z);
}

void warn_extrapolation(double z) {
  std::ostringstream msg;
  msg << "covariate " << z << " lies outside the trained range; extrapolating";
  warn(msg.str());
}

ScorePosterior prior_impl(const ModelParams& params, const ModelBases& bases, double z) {
  const Eigenfunctions ef =
      eigenfunctions_at(params, z, bases.b, bases.v, Vec(), DomainPolicy::extrapolate);
  ScorePosterior post;
  post.z = z;
  post.theta_star = ef.vectors;
  post.d_star = ef.eigenvalues;
  post.mean = Vec::Zero(params.r());
  post.cov = ef.eigenvalues.asDiagonal();
  return post;
}

ScorePosterior infer_impl(const ModelParams& params, const ModelBases& bases,
                          const FunctionalSample& sample) {
  sample.validate();
  ScorePosterior post = prior_impl(params, bases, sample.covariate);
  const Eigen::Index n = sample.size();
  const Vec u = bases.u.eval(sample.covariate, DomainPolicy::extrapolate);
  Mat B(n, bases.m());
  Vec res(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    try {
      B.row(i) = bases.b.eval(sample.times(i)).transpose();
      res(i) = sample.values(i) - kron(bases.a.eval(sample.times(i)), u).dot(params.theta);
    } catch (const DataError& e) {
      std::ostringstream msg;
      msg << "sample '" << sample.id << "', observation " << i << ": " << e.what();
      throw DataError(msg.str());
    }
  }

  const Mat K = B * post.theta_star;         // n x r
  const Mat KD = K * post.d_star.asDiagonal(); // n x r
  Mat S = KD * K.transpose();
  if (sample.has_noise_sd())
    S.diagonal() += sample.noise_sd.cwiseAbs2();
  else
    S.diagonal().array() += params.sigma2();
  Eigen::LLT<Mat> llt(S);
  if (llt.info() != Eigen::Success)
    throw NumericalError("sample '" + sample.id + "': marginal covariance is not positive definite");

  post.mean = KD.transpose() * llt.solve(res);
  Mat cov = post.cov - KD.transpose() * llt.solve(KD);
  post.cov = 0.5 * (cov + cov.transpose());
  return post;
}

} // namespace

ScorePosterior prior_scores(const ModelParams& params, const ModelBases& bases, double z) {
  if (outside_covariate_range(bases, z)) warn_extrapolation(z);
  return prior_impl(params, bases, z);
}

ScorePosterior infer_scores(const ModelParams& params, const ModelBases& bases,
                            const FunctionalSample& sample) {
  if (outside_covariate_range(bases, sample.covariate)) warn_extrapolation(sample.covariate);
  return infer_impl(params, bases, sample);
}

CurvePrediction predict_curve(const ModelParams& params, const ModelBases& bases,
                              const ScorePosterior& posterior, const Vec& t_grid, bool latent,
                              const Vec& target_sd) {
  if (target_sd.size() != 0 && target_sd.size() != t_grid.size())
    throw InvalidArgument("target_sd must be empty or match the number of target times");
  const Vec u = bases.u.eval(posterior.z, DomainPolicy::extrapolate);
  const Vec coef_mean = posterior.theta_star * posterior.mean;
  const Mat F = posterior.theta_star * posterior.cov * posterior.theta_star.transpose();
  CurvePrediction out{Vec(t_grid.size()), Vec(t_grid.size())};
  for (Eigen::Index k = 0; k < t_grid.size(); ++k) {
    const Vec bt = bases.b.eval(t_grid(k));
    out.mean(k) = kron(bases.a.eval(t_grid(k)), u).dot(params.theta) + bt.dot(coef_mean);
    double var = std::max(bt.dot(F * bt), 0.0);
    if (!latent) var += target_sd.size() ? target_sd(k) * target_sd(k) : params.sigma2();
    out.var(k) = var;
  }
  return out;
}

std::vector<Eigen::Index> observed_rows(Eigen::Index size, double fraction, std::uint64_t seed,
                                        std::size_t position) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw InvalidArgument("observed fraction must lie in [0, 1]");
  const auto k = std::clamp<Eigen::Index>(
      static_cast<Eigen::Index>(std::llround(fraction * static_cast<double>(size))), 0, size);
  std::vector<Eigen::Index> idx(size);
  for (Eigen::Index i = 0; i < size; ++i) idx[i] = i;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(position),
                    static_cast<std::uint32_t>(static_cast<std::uint64_t>(position) >> 32)};
  std::mt19937_64 rng(seq);
  // Partial Fisher-Yates with a portable index draw.
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto span = static_cast<std::uint64_t>(size - i);
    const auto j = i + static_cast<Eigen::Index>(rng() % span);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

PredictionScore score_predictions(const ModelParams& params, const ModelBases& bases,
                                  const std::vector<FunctionalSample>& samples,
                                  double observe_fraction, std::uint64_t seed, int min_observed) {
  struct PerCurve {
    bool skipped = false;
    bool extrapolated = false;
    Vec mean;
    double sse_held = 0.0, nll_held = 0.0;
    std::size_t n_held = 0, covered = 0;
  };
  std::vector<PerCurve> per(samples.size());
  std::vector<std::exception_ptr> errors(samples.size());

#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(samples.size()); ++n) {
    try {
      const FunctionalSample& s = samples[n];
      PerCurve& pc = per[n];
      const auto rows = observed_rows(s.size(), observe_fraction, seed, static_cast<std::size_t>(n));
      if (static_cast<int>(rows.size()) < min_observed) {
        pc.skipped = true;
        continue;
      }
      pc.extrapolated = outside_covariate_range(bases, s.covariate);
      const ScorePosterior post = rows.empty() ? prior_impl(params, bases, s.covariate)
                                               : infer_impl(params, bases, s.subset(rows));
      const CurvePrediction pred = predict_curve(params, bases, post, s.times, false, s.noise_sd);
      pc.mean = pred.mean;
      std::vector<bool> observed(s.size(), false);
      for (auto i : rows) observed[i] = true;
      for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (observed[i]) continue;
        const double e = s.values(i) - pred.mean(i);
        pc.sse_held += e * e;
        pc.nll_held += 0.5 * (std::log(2.0 * std::numbers::pi * pred.var(i)) + e * e / pred.var(i));
        pc.covered += std::abs(e) <= 1.959963984540054 * std::sqrt(pred.var(i));
        ++pc.n_held;
      }
    } catch (...) {
      errors[n] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  PredictionScore out;
  std::size_t n_extrapolated = 0;
  const FunctionalSample* first = nullptr;
  bool common_grid = true;
  for (std::size_t n = 0; n < samples.size(); ++n) {
    if (per[n].skipped) {
      ++out.n_skipped;
      continue;
    }
    n_extrapolated += per[n].extrapolated;
    if (!first)
      first = &samples[n];
    else if (samples[n].times.size() != first->times.size() || samples[n].times != first->times)
      common_grid = false;
  }
  if (!first) throw DataError("no curve has enough observed points to score predictions");
  if (n_extrapolated > 0) {
    std::ostringstream msg;
    msg << n_extrapolated << " curves have covariates outside the trained range; extrapolating";
    warn(msg.str());
  }

  // Baseline for the total sum of squares.
  Vec baseline;
  double global_mean = 0.0;
  std::size_t n_points = 0, n_used = 0;
  if (common_grid) baseline = Vec::Zero(first->size());
  for (std::size_t n = 0; n < samples.size(); ++n) {
    if (per[n].skipped) continue;
    global_mean += samples[n].values.sum();
    n_points += samples[n].size();
    ++n_used;
    if (common_grid) baseline += samples[n].values;
  }
  global_mean /= static_cast<double>(n_points);
  if (common_grid) baseline /= static_cast<double>(n_used);
  out.pointwise_baseline = common_grid;

  double ss_res = 0.0, ss_tot = 0.0, sse_held = 0.0, nll_held = 0.0;
  std::size_t covered = 0;
  for (std::size_t n = 0; n < samples.size(); ++n) {
    if (per[n].skipped) continue;
    const Vec& y = samples[n].values;
    ss_res += (y - per[n].mean).squaredNorm();
    ss_tot += common_grid ? (y - baseline).squaredNorm()
                          : (y.array() - global_mean).square().sum();
    sse_held += per[n].sse_held;
    nll_held += per[n].nll_held;
    covered += per[n].covered;
    out.n_heldout += per[n].n_held;
  }
  if (!(ss_tot > 0.0)) throw DataError("fraction of variation explained is undefined for constant data");
  out.fve = 1.0 - ss_res / ss_tot;
  if (out.n_heldout > 0) {
    const auto nh = static_cast<double>(out.n_heldout);
    out.mse_heldout = sse_held / nh;
    out.nll_heldout = nll_held / nh;
    out.coverage = static_cast<double>(covered) / nh;
  }
  return out;
}

double fve(const ModelParams& params, const ModelBases& bases,
           const std::vector<FunctionalSample>& samples, double observe_fraction,
           std::uint64_t seed) {
  return score_predictions(params, bases, samples, observe_fraction, seed).fve;
}

} // namespace sfpca
