#include "sfpca/sim.hpp"

#include "sfpca/error.hpp"
#include "sfpca/io.hpp"
#include "sfpca/predict.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace sfpca {

namespace {

constexpr double kPi = std::numbers::pi;
const double kSqrt2 = std::sqrt(2.0);

std::mt19937_64 curve_stream(std::uint64_t seed, std::size_t n) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(n),
                    static_cast<std::uint32_t>(static_cast<std::uint64_t>(n) >> 32)};
  return std::mt19937_64(seq);
}

std::string fixed(double x, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

} // namespace

double SimTruth::mean(double t, double z) { return 30.0 * (t - z) * (t - z); }

double SimTruth::eigenfunction(int j, double t, double z) {
  switch (j) {
  case 0: return kSqrt2 * std::cos(kPi * (t + z));
  case 1: return kSqrt2 * std::sin(kPi * (t + z));
  case 2: return kSqrt2 * std::cos(3.0 * kPi * (t - z));
  default: throw InvalidArgument("the simulation has three eigenfunctions");
  }
}

double SimTruth::eigenvalue(int j, double z) {
  switch (j) {
  case 0: return 2.0 * (z + 20.0);
  case 1: return z + 10.0;
  case 2: return z;
  default: throw InvalidArgument("the simulation has three eigenfunctions");
  }
}

std::vector<FunctionalSample> generate(const SimTruth& truth) {
  if (truth.grid_size < 2) throw InvalidArgument("simulation grid needs at least two points");
  if (!(truth.noise_var >= 0.0)) throw InvalidArgument("noise variance must be nonnegative");
  if (!(truth.z_hi >= truth.z_lo)) throw InvalidArgument("covariate range is empty");
  if (!(truth.keep_fraction > 0.0 && truth.keep_fraction <= 1.0))
    throw InvalidArgument("keep fraction must lie in (0, 1]");
  const Vec grid = Vec::LinSpaced(truth.grid_size, 0.0, 1.0);
  const double noise_sd = std::sqrt(truth.noise_var);

  std::vector<FunctionalSample> out(truth.n_curves);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(truth.n_curves); ++n) {
    std::mt19937_64 rng = curve_stream(truth.seed, static_cast<std::size_t>(n));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    FunctionalSample& s = out[n];
    s.id = truth.id_prefix + std::to_string(n);
    s.covariate = truth.z_lo + (truth.z_hi - truth.z_lo) * unif(rng);
    double xi[3];
    for (int j = 0; j < 3; ++j)
      xi[j] = truth.zero_scores ? 0.0 : std::sqrt(std::max(0.0, SimTruth::eigenvalue(j, s.covariate))) * normal(rng);

    std::vector<Eigen::Index> keep;
    if (truth.keep_fraction < 1.0) {
      do {
        keep.clear();
        for (Eigen::Index i = 0; i < grid.size(); ++i)
          if (unif(rng) < truth.keep_fraction) keep.push_back(i);
      } while (keep.size() < 2);
    } else {
      for (Eigen::Index i = 0; i < grid.size(); ++i) keep.push_back(i);
    }
    const auto k = static_cast<Eigen::Index>(keep.size());
    s.times.resize(k);
    s.values.resize(k);
    for (Eigen::Index i = 0; i < k; ++i) {
      const double t = grid(keep[i]);
      double y = SimTruth::mean(t, s.covariate);
      for (int j = 0; j < 3; ++j) y += xi[j] * SimTruth::eigenfunction(j, t, s.covariate);
      s.times(i) = t;
      s.values(i) = y + noise_sd * normal(rng);
    }
  }
  return out;
}

double eigenfunction_mise(const FittedModel& model, int j, const Interval& z_range, int n_z,
                          int n_t) {
  if (j < 0 || j >= std::min(model.params.r(), 3))
    throw InvalidArgument("eigenfunction index out of range");
  if (n_z < 1 || n_t < 2) throw InvalidArgument("error grid needs n_z >= 1 and n_t >= 2");
  // Midpoint rule in z, trapezoid rule in t.
  Vec zs(n_z);
  for (int k = 0; k < n_z; ++k) zs(k) = z_range.lo + (k + 0.5) * z_range.width() / n_z;
  const Vec ts = linspace(model.bases.b.domain().lo, model.bases.b.domain().hi, n_t);
  const double dt = (ts(n_t - 1) - ts(0)) / (n_t - 1);
  double total = 0.0;
  for (Eigen::Index k = 0; k < zs.size(); ++k) {
    const Eigenfunctions ef = eigenfunctions_at(model.params, zs(k), model.bases.b, model.bases.v,
                                                ts, DomainPolicy::clamp);
    double plus = 0.0, minus = 0.0;
    for (Eigen::Index i = 0; i < n_t; ++i) {
      const double w = (i == 0 || i == n_t - 1) ? 0.5 * dt : dt;
      const double truth = SimTruth::eigenfunction(j, ts(i), zs(k));
      const double fit = ef.functions(j, i);
      plus += w * (fit - truth) * (fit - truth);
      minus += w * (fit + truth) * (fit + truth);
    }
    total += std::min(plus, minus);
  }
  return total / static_cast<double>(n_z);
}

std::string StudyReport::text() const {
  std::ostringstream out;
  out << "rank,test_fve,test_mse,coverage95,objective,outer_iterations,converged";
  out << ",mise_f1,mise_f2,mise_f3\n";
  for (const auto& r : ranks) {
    out << r.r << ',' << fixed(r.test_fve) << ',' << fixed(r.test_mse) << ',' << fixed(r.coverage, 4)
        << ',' << fixed(r.final_objective, 3) << ',' << r.outer_iterations << ','
        << (r.converged ? "yes" : "no");
    for (int j = 0; j < 3; ++j)
      out << ',' << (j < static_cast<int>(r.eigen_mise.size()) ? fixed(r.eigen_mise[j]) : "NA");
    out << '\n';
  }
  return out.str();
}

StudyReport run_study(const StudyConfig& config) {
  if (config.ranks.empty()) throw InvalidArgument("study needs at least one rank");
  SimTruth train_truth;
  train_truth.n_curves = config.n_train;
  train_truth.grid_size = config.grid_size;
  train_truth.noise_var = config.noise_var;
  train_truth.seed = config.seed;
  train_truth.id_prefix = "train";
  SimTruth test_truth = train_truth;
  test_truth.n_curves = config.n_test;
  test_truth.seed = config.seed + 1;
  test_truth.id_prefix = "test";
  const auto train = generate(train_truth);
  const auto test = generate(test_truth);

  std::filesystem::path dir;
  if (!config.out_dir.empty()) {
    dir = config.out_dir;
    std::filesystem::create_directories(dir);
    const double sd = std::sqrt(config.noise_var);
    write_samples_csv_file((dir / "train.csv").string(), train, sd);
    write_samples_csv_file((dir / "test.csv").string(), test, sd);
  }

  StudyReport report;
  for (int r : config.ranks) {
    FitConfig fc = config.fit;
    fc.r = r;
    if (!fc.t_domain) fc.t_domain = Interval{0.0, 1.0};
    if (!fc.z_domain) fc.z_domain = Interval{train_truth.z_lo, train_truth.z_hi};
    FittedModel model = fit(train, fc);
    const PredictionScore ps = score_predictions(model.params, model.bases, test,
                                                 config.observe_fraction, config.seed + 2);
    StudyRank row;
    row.r = r;
    row.test_fve = ps.fve;
    row.test_mse = ps.mse_heldout;
    row.coverage = ps.coverage;
    row.final_objective = model.diagnostics.final_objective;
    row.outer_iterations = model.diagnostics.outer_iterations;
    row.converged = model.diagnostics.converged;
    for (int j = 0; j < std::min(r, 3); ++j)
      row.eigen_mise.push_back(eigenfunction_mise(model, j, config.error_z_range,
                                                  config.error_grid_z, config.error_grid_t));

    if (!dir.empty()) {
      // Fitted and true eigenfunction surfaces.
      std::ostringstream eig;
      eig << "z,t,j,fitted,truth,eigenvalue,true_eigenvalue\n";
      const Vec zs = linspace(0.0, 1.0, config.error_grid_z);
      const Vec ts = linspace(0.0, 1.0, config.error_grid_t);
      const auto sweep = eigen_sweep(model.params, model.bases, zs, ts);
      for (Eigen::Index k = 0; k < zs.size(); ++k)
        for (int j = 0; j < std::min(r, 3); ++j) {
          // Orient each fitted function toward the truth for plotting.
          double dot = 0.0;
          for (Eigen::Index i = 0; i < ts.size(); ++i)
            dot += sweep[k].functions(j, i) * SimTruth::eigenfunction(j, ts(i), zs(k));
          const double sign = dot < 0.0 ? -1.0 : 1.0;
          for (Eigen::Index i = 0; i < ts.size(); ++i)
            eig << format_double(zs(k)) << ',' << format_double(ts(i)) << ',' << j + 1 << ','
                << format_double(sign * sweep[k].functions(j, i)) << ','
                << format_double(SimTruth::eigenfunction(j, ts(i), zs(k))) << ','
                << format_double(sweep[k].eigenvalues(j)) << ','
                << format_double(SimTruth::eigenvalue(j, zs(k))) << '\n';
        }
      write_text(dir / ("eigen_r" + std::to_string(r) + ".csv"), eig.str());

      // Prediction intervals for the test curves nearest to a few covariate values.
      std::ostringstream pred;
      pred << "id,z,t,y,observed,mean,lower,upper\n";
      for (double target : {0.2, 0.5, 0.7}) {
        std::size_t best = 0;
        for (std::size_t n = 1; n < test.size(); ++n)
          if (std::abs(test[n].covariate - target) < std::abs(test[best].covariate - target))
            best = n;
        const FunctionalSample& s = test[best];
        const auto rows = observed_rows(s.size(), config.observe_fraction, config.seed + 2, best);
        const ScorePosterior post = rows.empty() ? prior_scores(model.params, model.bases, s.covariate)
                                                 : infer_scores(model.params, model.bases, s.subset(rows));
        const CurvePrediction cp = predict_curve(model.params, model.bases, post, s.times);
        std::vector<bool> observed(s.size(), false);
        for (auto i : rows) observed[i] = true;
        for (Eigen::Index i = 0; i < s.size(); ++i) {
          const double half = 1.959963984540054 * std::sqrt(cp.var(i));
          pred << s.id << ',' << format_double(s.covariate) << ',' << format_double(s.times(i)) << ','
               << format_double(s.values(i)) << ',' << (observed[i] ? 1 : 0) << ','
               << format_double(cp.mean(i)) << ',' << format_double(cp.mean(i) - half) << ','
               << format_double(cp.mean(i) + half) << '\n';
        }
      }
      write_text(dir / ("pred_r" + std::to_string(r) + ".csv"), pred.str());
      save_model((dir / ("model_r" + std::to_string(r) + ".txt")).string(), model);
    }
    report.ranks.push_back(row);
    report.models.push_back(std::move(model));
  }
  if (!dir.empty()) write_text(dir / "report.txt", report.text());
  return report;
}

} // namespace sfpca
