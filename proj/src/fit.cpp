#include "sfpca/fit.hpp"

#include "sfpca/error.hpp"
#include "sfpca/log.hpp"
#include "sfpca/predict.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <sstream>

namespace sfpca {

namespace {

constexpr double kMinStep = 1e-14;
constexpr double kMaxStep = 1e12;

enum class Block { theta = 0, gamma = 1, sigma = 2 };

const char* block_name(Block b) {
  switch (b) {
  case Block::theta: return "theta";
  case Block::gamma: return "gamma";
  case Block::sigma: return "sigma";
  }
  return "?";
}

EvalRequest request_for(Block b) {
  EvalRequest req;
  req.grad_theta = b == Block::theta;
  req.grad_gamma = b == Block::gamma;
  req.grad_sigma = b == Block::sigma;
  return req;
}

Vec get_block(const ModelParams& p, Block b) {
  switch (b) {
  case Block::theta: return p.theta;
  case Block::gamma: return p.beta();
  case Block::sigma: return Vec::Constant(1, p.log_sigma2);
  }
  return {};
}

void set_block(ModelParams& p, Block b, const Vec& x) {
  switch (b) {
  case Block::theta: p.theta = x; break;
  case Block::gamma: p.set_beta(x); break;
  case Block::sigma: p.log_sigma2 = x(0); break;
  }
}

Vec grad_block(const ObjectiveEval& e, Block b) {
  switch (b) {
  case Block::theta: return e.grad_theta;
  case Block::gamma: return Eigen::Map<const Vec>(e.grad_gamma.data(), e.grad_gamma.size());
  case Block::sigma: return Vec::Constant(1, e.grad_eta);
  }
  return {};
}

struct BlockMask {
  bool theta = true, gamma = true, sigma = true;
};

class Descent {
public:
  Descent(const Dataset& data, const PenaltyOperator& penalty, const FitConfig& config,
          ModelParams start)
      : data_(data), penalty_(penalty), config_(config), params_(std::move(start)) {
    steps_.fill(config.initial_step);
    ObjectiveEval e;
    if (!evaluate(params_, Block::theta, e))
      throw NumericalError("objective at the starting point is not finite");
    f_ = e.value;
    diag_.initial_objective = f_;
    diag_.trace.push_back({0, 0, "init", f_});
  }

  void run(BlockMask mask) {
    const bool sigma = mask.sigma && data_.uses_common_noise();
    for (int outer = 1; outer <= config_.max_outer; ++outer) {
      const double before = f_;
      if (mask.theta) run_block(Block::theta, outer);
      if (mask.gamma) run_block(Block::gamma, outer);
      if (sigma) run_block(Block::sigma, outer);
      diag_.outer_iterations = outer;
      if (std::abs(before - f_) <= config_.rel_tol * std::max(1.0, std::abs(f_))) {
        diag_.converged = true;
        break;
      }
    }
    diag_.final_objective = f_;
    ObjectiveEval e = objective(data_, params_, penalty_, EvalRequest::all(), config_.exec);
    diag_.grad_norm_theta = e.grad_theta.norm();
    diag_.grad_norm_gamma = e.grad_gamma.norm();
    diag_.grad_norm_eta = data_.uses_common_noise() ? std::abs(e.grad_eta) : 0.0;
  }

  const ModelParams& params() const { return params_; }
  FitDiagnostics& diagnostics() { return diag_; }

private:
  bool evaluate(const ModelParams& p, Block b, ObjectiveEval& out) const {
    try {
      out = objective(data_, p, penalty_, request_for(b), config_.exec);
    } catch (const NumericalError&) {
      return false;
    }
    // A point whose gradient overflows is rejected like one whose value does.
    return std::isfinite(out.value) && grad_block(out, b).allFinite();
  }

  void run_block(Block b, int outer) {
    ObjectiveEval cur;
    if (!evaluate(params_, b, cur)) throw NumericalError("objective became non-finite");
    Vec x = get_block(params_, b);
    Vec g = grad_block(cur, b);
    double alpha = steps_[static_cast<int>(b)];

    for (int it = 0; it < config_.max_inner; ++it) {
      const double g2 = g.squaredNorm();
      if (!(g2 > 0.0)) break;
      if (!std::isfinite(g2)) throw NumericalError("gradient is not finite");

      ModelParams cand = params_;
      ObjectiveEval trial;
      bool accepted = false;
      while (alpha >= kMinStep) {
        set_block(cand, b, x - alpha * g);
        if (evaluate(cand, b, trial) && trial.value <= f_ - config_.armijo * alpha * g2) {
          accepted = true;
          break;
        }
        alpha *= config_.shrink;
      }
      if (!accepted) {
        ++diag_.line_search_failures;
        steps_[static_cast<int>(b)] = config_.initial_step;
        return;
      }

      const double f_old = f_;
      params_ = std::move(cand);
      f_ = trial.value;
      ++diag_.accepted_steps;
      diag_.trace.push_back({diag_.accepted_steps, outer, block_name(b), f_});

      // Barzilai-Borwein estimate for the next trial step.
      const Vec xn = get_block(params_, b);
      const Vec gn = grad_block(trial, b);
      const Vec s = xn - x, y = gn - g;
      const double sy = s.dot(y);
      alpha = sy > 0.0 ? s.squaredNorm() / sy : 2.0 * alpha;
      alpha = std::clamp(alpha, kMinStep, kMaxStep);
      steps_[static_cast<int>(b)] = alpha;
      x = xn;
      g = gn;
      if (std::abs(f_old - f_) <= config_.inner_tol * std::max(1.0, std::abs(f_))) break;
    }
  }

  const Dataset& data_;
  const PenaltyOperator& penalty_;
  const FitConfig& config_;
  ModelParams params_;
  double f_ = 0.0;
  std::array<double, 3> steps_{};
  FitDiagnostics diag_;
};

FittedModel run_fit(const std::vector<FunctionalSample>& samples, const ModelBases& bases,
                    ModelParams start, const FitConfig& config, BlockMask mask) {
  config.validate();
  const Dataset data(samples, bases);
  const PenaltyOperator penalty = assemble(bases.b, bases.v, bases.a, bases.u, config.lambdas);
  Descent descent(data, penalty, config, std::move(start));
  descent.run(mask);
  FittedModel out{bases, descent.params(), config.lambdas, describe(samples),
                  std::move(descent.diagnostics())};
  return out;
}

InitConfig init_config(const FitConfig& config) {
  InitConfig ic;
  ic.n_bins = config.n_bins;
  ic.min_bin_count = config.min_bin_count;
  return ic;
}

} // namespace

void FitConfig::validate() const {
  auto fail = [](const std::string& what) { throw InvalidArgument(what); };
  if (r < 1) fail("rank r must be at least 1");
  for (int size : {l, p, m, q})
    if (size < 4) fail("every basis needs at least 4 functions for cubic splines");
  if (r > m) fail("rank r must not exceed the covariance basis size m");
  if (max_outer < 1 || max_inner < 1) fail("iteration limits must be positive");
  if (!(rel_tol > 0.0 && rel_tol < 1.0)) fail("rel_tol must lie in (0, 1)");
  if (!(inner_tol > 0.0 && inner_tol < 1.0)) fail("inner_tol must lie in (0, 1)");
  if (!(shrink > 0.0 && shrink < 1.0)) fail("line-search shrink factor must lie in (0, 1)");
  if (!(armijo > 0.0 && armijo < 1.0)) fail("Armijo constant must lie in (0, 1)");
  if (!(initial_step > 0.0)) fail("initial step must be positive");
  if (cv_folds < 2) fail("cross-validation needs at least 2 folds");
  if (!(cv_observe_fraction >= 0.0 && cv_observe_fraction < 1.0))
    fail("cross-validation observed fraction must lie in [0, 1)");
  for (double v : {lambdas.t_cov, lambdas.z_cov, lambdas.t_mean, lambdas.z_mean})
    if (!(v >= 0.0) || !std::isfinite(v)) fail("smoothing weights must be finite and nonnegative");
  for (double v : lambda_grid)
    if (!(v >= 0.0) || !std::isfinite(v)) fail("lambda grid values must be finite and nonnegative");
}

TrainingInfo describe(const std::vector<FunctionalSample>& samples) {
  if (samples.empty()) throw DataError("no curves");
  TrainingInfo info;
  info.n_curves = samples.size();
  double tlo = std::numeric_limits<double>::infinity(), thi = -tlo;
  double zlo = tlo, zhi = -tlo;
  for (const auto& s : samples) {
    info.n_observations += static_cast<std::size_t>(s.size());
    if (s.size() > 0) {
      tlo = std::min(tlo, s.times.minCoeff());
      thi = std::max(thi, s.times.maxCoeff());
    }
    zlo = std::min(zlo, s.covariate);
    zhi = std::max(zhi, s.covariate);
  }
  info.t_range = {tlo, thi};
  info.z_range = {zlo, zhi};
  return info;
}

ModelBases bases_for(const std::vector<FunctionalSample>& samples, const FitConfig& config) {
  const TrainingInfo info = describe(samples);
  const Interval t = config.t_domain.value_or(info.t_range);
  const Interval z = config.z_domain.value_or(info.z_range);
  if (!(t.hi > t.lo)) throw DataError("observed times span an empty interval; set the time domain");
  if (!(z.hi > z.lo)) throw DataError("covariates span an empty interval; set the covariate domain");
  return make_bases(config.l, config.p, config.m, config.q, t, z);
}

FittedModel fit_from(const std::vector<FunctionalSample>& samples, const ModelBases& bases,
                     ModelParams start, const FitConfig& config) {
  return run_fit(samples, bases, std::move(start), config, {});
}

FittedModel fit(const std::vector<FunctionalSample>& samples, const FitConfig& config) {
  config.validate();
  if (samples.size() < 2) throw DataError("fitting needs at least two curves");
  const ModelBases bases = bases_for(samples, config);
  InitResult init = initialize(samples, bases, config.r, init_config(config));
  return fit_from(samples, bases, std::move(init.params), config);
}

CvResult cross_validate(const std::vector<FunctionalSample>& samples, const FitConfig& config) {
  config.validate();
  if (config.lambda_grid.empty()) throw InvalidArgument("cross-validation needs a lambda grid");
  if (samples.size() < static_cast<std::size_t>(config.cv_folds))
    throw DataError("fewer curves than cross-validation folds");
  const ModelBases bases = bases_for(samples, config);

  // Folds by curve, from a seeded permutation.
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(config.seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  const auto K = static_cast<std::size_t>(config.cv_folds);

  struct Fold {
    std::vector<FunctionalSample> train, test;
    std::optional<ModelParams> start;
  };
  std::vector<Fold> folds(K);
  for (std::size_t pos = 0; pos < order.size(); ++pos)
    for (std::size_t k = 0; k < K; ++k)
      (pos % K == k ? folds[k].test : folds[k].train).push_back(samples[order[pos]]);
  for (std::size_t k = 0; k < K; ++k) {
    try {
      folds[k].start = initialize(folds[k].train, bases, config.r, init_config(config)).params;
    } catch (const DataError& e) {
      warn("cross-validation fold " + std::to_string(k + 1) + " skipped: " + e.what());
    }
  }

  // Larger weights first so that ties resolve toward smoother fits.
  std::vector<double> grid = config.lambda_grid;
  std::stable_sort(grid.begin(), grid.end(), std::greater<>());

  CvResult result;
  auto score = [&](const Lambdas& lam, BlockMask mask, const std::string& stage) {
    FitConfig cfg = config;
    cfg.lambdas = lam;
    double nll = 0.0;
    std::size_t points = 0;
    int used = 0;
    for (std::size_t k = 0; k < K; ++k) {
      if (!folds[k].start) continue;
      const FittedModel fm = run_fit(folds[k].train, bases, *folds[k].start, cfg, mask);
      const PredictionScore ps = score_predictions(fm.params, fm.bases, folds[k].test,
                                                   config.cv_observe_fraction, config.seed + k, 0);
      if (ps.n_heldout == 0) continue;
      nll += ps.nll_heldout * static_cast<double>(ps.n_heldout);
      points += ps.n_heldout;
      ++used;
    }
    CvRow row{stage, lam,
              points > 0 ? nll / static_cast<double>(points)
                         : std::numeric_limits<double>::infinity(),
              used};
    result.table.push_back(row);
    return row.score;
  };

  Lambdas best = config.lambdas;
  double best_score = std::numeric_limits<double>::infinity();
  for (double a : grid)
    for (double b : grid) {
      const Lambdas lam{config.lambdas.t_cov, config.lambdas.z_cov, a, b};
      const double s = score(lam, {true, false, false}, "mean");
      if (s < best_score) {
        best_score = s;
        best = lam;
      }
    }
  const Lambdas mean_best = best;
  best_score = std::numeric_limits<double>::infinity();
  for (double a : grid)
    for (double b : grid) {
      const Lambdas lam{a, b, mean_best.t_mean, mean_best.z_mean};
      const double s = score(lam, {}, "covariance");
      if (s < best_score) {
        best_score = s;
        best = lam;
      }
    }
  if (!std::isfinite(best_score)) throw DataError("cross-validation: no fold could be scored");
  result.best = best;
  return result;
}

double predict_mse(const FittedModel& model, const std::vector<FunctionalSample>& samples,
                   double observe_fraction, std::uint64_t seed) {
  if (!(observe_fraction > 0.0 && observe_fraction < 1.0))
    throw InvalidArgument("observed fraction must lie in (0, 1)");
  const PredictionScore ps =
      score_predictions(model.params, model.bases, samples, observe_fraction, seed, 2);
  if (ps.n_skipped > 0)
    warn(std::to_string(ps.n_skipped) + " curves with fewer than 2 observed points skipped");
  return ps.mse_heldout;
}

} // namespace sfpca
