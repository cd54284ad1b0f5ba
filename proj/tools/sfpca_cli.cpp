#include "sfpca/error.hpp"
#include "sfpca/fit.hpp"
#include "sfpca/io.hpp"
#include "sfpca/log.hpp"
#include "sfpca/predict.hpp"
#include "sfpca/sim.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace sfpca;

namespace {

// Flags shared by fit, cv and study.
struct FitFlags {
  FitConfig config;
  std::vector<double> lambdas;
  std::vector<double> t_range, z_range;
  bool serial = false;
  CLI::Option* lambdas_opt = nullptr;
  CLI::Option* grid_opt = nullptr;

  void add(CLI::App* app, bool with_rank = true) {
    if (with_rank) app->add_option("-r,--rank", config.r, "number of components")->capture_default_str();
    app->add_option("--l", config.l, "mean basis size in t")->capture_default_str();
    app->add_option("--p", config.p, "mean basis size in z")->capture_default_str();
    app->add_option("--m", config.m, "covariance basis size in t")->capture_default_str();
    app->add_option("--q", config.q, "covariance basis size in z")->capture_default_str();
    lambdas_opt = app->add_option("--lambdas", lambdas,
                                  "smoothing weights t_cov,z_cov,t_mean,z_mean")
                      ->delimiter(',')
                      ->expected(4);
    grid_opt = app->add_option("--cv-grid", config.lambda_grid,
                               "candidate smoothing weights for cross-validation")
                   ->delimiter(',');
    lambdas_opt->excludes(grid_opt);
    app->add_option("--t-range", t_range, "time domain lo,hi (default: observed)")
        ->delimiter(',')
        ->expected(2);
    app->add_option("--z-range", z_range, "covariate domain lo,hi (default: observed)")
        ->delimiter(',')
        ->expected(2);
    app->add_option("--max-outer", config.max_outer)->capture_default_str();
    app->add_option("--max-inner", config.max_inner)->capture_default_str();
    app->add_option("--rel-tol", config.rel_tol)->capture_default_str();
    app->add_option("--inner-tol", config.inner_tol)->capture_default_str();
    app->add_option("--shrink", config.shrink, "line-search shrink factor")->capture_default_str();
    app->add_option("--armijo", config.armijo, "line-search sufficient decrease")->capture_default_str();
    app->add_option("--initial-step", config.initial_step)->capture_default_str();
    app->add_option("--seed", config.seed)->capture_default_str();
    app->add_option("--n-bins", config.n_bins, "initialization bins (0 = automatic)")
        ->capture_default_str();
    app->add_option("--min-bin-count", config.min_bin_count)->capture_default_str();
    app->add_option("--folds", config.cv_folds, "cross-validation folds")->capture_default_str();
    app->add_flag("--serial", serial, "evaluate the likelihood on one thread");
  }

  FitConfig resolve() {
    if (!lambdas.empty()) config.lambdas = {lambdas[0], lambdas[1], lambdas[2], lambdas[3]};
    if (!t_range.empty()) config.t_domain = Interval{t_range[0], t_range[1]};
    if (!z_range.empty()) config.z_domain = Interval{z_range[0], z_range[1]};
    for (const auto& d : {config.t_domain, config.z_domain})
      if (d && !(d->hi > d->lo)) throw InvalidArgument("domain ranges need lo < hi");
    config.exec = serial ? Exec::serial : Exec::parallel;
    config.validate();
    return config;
  }
};

std::vector<FunctionalSample> load_samples(const std::string& path, bool ignore_sd) {
  auto samples = read_samples_csv_file(path);
  if (ignore_sd)
    for (auto& s : samples) s.noise_sd.resize(0);
  return samples;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text;
}

std::string cv_table(const CvResult& cv) {
  std::ostringstream out;
  out << "stage,t_cov,z_cov,t_mean,z_mean,score,folds\n";
  for (const auto& row : cv.table)
    out << row.stage << ',' << format_double(row.lambdas.t_cov) << ','
        << format_double(row.lambdas.z_cov) << ',' << format_double(row.lambdas.t_mean) << ','
        << format_double(row.lambdas.z_mean) << ',' << format_double(row.score) << ','
        << row.folds_used << '\n';
  return out.str();
}

// Values from --config fill options that were not given on the command line.
void apply_config(CLI::App* app, const std::string& path) {
  for (const auto& [key, value] : read_config_file(path)) {
    CLI::Option* opt = nullptr;
    try {
      opt = app->get_option("--" + key);
    } catch (const CLI::OptionNotFound&) {
      throw InvalidArgument("config file '" + path + "': unknown option '" + key + "'");
    }
    if (opt->count() > 0) continue;
    if (opt->get_expected_max() == 0) {
      if (value != "true" && value != "1" && value != "false" && value != "0")
        throw InvalidArgument("config file '" + path + "': flag '" + key + "' needs true or false");
      if (value == "false" || value == "0") continue;
    }
    opt->add_result(value);
    try {
      opt->run_callback();
    } catch (const CLI::ParseError& e) {
      throw InvalidArgument("config file '" + path + "': " + key + ": " + e.what());
    }
  }
}

void print_summary(const FittedModel& model, const std::vector<FunctionalSample>& samples) {
  const FitDiagnostics& d = model.diagnostics;
  std::cout << "objective " << format_double(d.final_objective) << " after " << d.outer_iterations
            << " sweeps (" << (d.converged ? "converged" : "iteration limit reached") << ")\n";
  if (std::all_of(samples.begin(), samples.end(),
                  [](const FunctionalSample& s) { return s.has_noise_sd(); }))
    std::cout << "noise taken from the sd column\n";
  else
    std::cout << "sigma^2 " << format_double(model.params.sigma2()) << '\n';
  if (d.line_search_failures > 0)
    std::cout << "line search stalled " << d.line_search_failures << " times\n";
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Supervised functional principal components with covariate-dependent mean "
               "and covariance"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "suppress warnings");

  // simulate
  auto* sim = app.add_subcommand("simulate", "write simulated curves as CSV");
  SimTruth truth;
  std::string sim_out;
  std::vector<double> sim_z;
  sim->add_option("-o,--out", sim_out, "output CSV")->required();
  sim->add_option("-n,--n", truth.n_curves, "number of curves")->capture_default_str();
  sim->add_option("--grid", truth.grid_size, "grid points per curve")->capture_default_str();
  sim->add_option("--seed", truth.seed)->capture_default_str();
  sim->add_option("--keep-fraction", truth.keep_fraction,
                  "probability of keeping each grid point (irregular sampling)")
      ->capture_default_str();
  sim->add_option("--noise-var", truth.noise_var)->capture_default_str();
  sim->add_option("--z-range", sim_z, "covariate range lo,hi")->delimiter(',')->expected(2);
  sim->add_option("--id-prefix", truth.id_prefix)->capture_default_str();

  // fit
  auto* fitc = app.add_subcommand("fit", "fit a model to curves in CSV");
  FitFlags fit_flags;
  std::string fit_data, fit_out, fit_diag, fit_cv_out, fit_config;
  bool fit_ignore_sd = false;
  fitc->add_option("-d,--data", fit_data, "input CSV")->required()->check(CLI::ExistingFile);
  fitc->add_option("-o,--out", fit_out, "output model file")->required();
  fitc->add_option("--diagnostics", fit_diag, "write the objective trace as CSV");
  fitc->add_option("--cv-table", fit_cv_out, "write the cross-validation table as CSV");
  fitc->add_flag("--ignore-sd", fit_ignore_sd, "ignore the sd column and estimate the noise");
  fitc->add_option("--config", fit_config, "key = value file of options")->check(CLI::ExistingFile);
  fit_flags.add(fitc);

  // cv
  auto* cvc = app.add_subcommand("cv", "cross-validate the smoothing weights");
  FitFlags cv_flags;
  std::string cv_data, cv_out, cv_config;
  bool cv_ignore_sd = false;
  cvc->add_option("-d,--data", cv_data, "input CSV")->required()->check(CLI::ExistingFile);
  cvc->add_option("-o,--out", cv_out, "output CSV table (default: stdout)");
  cvc->add_flag("--ignore-sd", cv_ignore_sd, "ignore the sd column and estimate the noise");
  cvc->add_option("--config", cv_config, "key = value file of options")->check(CLI::ExistingFile);
  cv_flags.add(cvc);

  // predict
  auto* pred = app.add_subcommand("predict", "predict curves from a fitted model");
  std::string pred_model, pred_data, pred_out, pred_targets;
  bool pred_latent = false, pred_ignore_sd = false;
  int pred_grid = 0;
  pred->add_option("-m,--model", pred_model, "model file")->required()->check(CLI::ExistingFile);
  pred->add_option("-d,--data", pred_data, "observed curves (CSV)")->required()->check(CLI::ExistingFile);
  pred->add_option("-o,--out", pred_out, "output CSV id,t,mean,var")->required();
  pred->add_flag("--latent", pred_latent, "variance of the latent curve, without noise");
  auto* grid_opt = pred->add_option("--grid", pred_grid, "predict on this many evenly spaced times");
  auto* targets_opt = pred->add_option("--targets", pred_targets, "CSV id,t[,sd] of target times")
                          ->check(CLI::ExistingFile);
  grid_opt->excludes(targets_opt);
  pred->add_flag("--ignore-sd", pred_ignore_sd, "condition with the model noise variance");

  // eigen
  auto* eig = app.add_subcommand("eigen", "write eigenfunction surfaces");
  std::string eig_model, eig_out;
  int eig_nz = 21, eig_nt = 101;
  std::vector<double> eig_z;
  eig->add_option("-m,--model", eig_model, "model file")->required()->check(CLI::ExistingFile);
  eig->add_option("-o,--out", eig_out, "output CSV z,t,j,value,eigenvalue")->required();
  eig->add_option("--z-grid", eig_nz, "covariate grid size over the trained range")->capture_default_str();
  eig->add_option("--t-grid", eig_nt, "time grid size")->capture_default_str();
  eig->add_option("--z", eig_z, "explicit covariate values")->delimiter(',');

  // study
  auto* study = app.add_subcommand("study", "simulation study over several ranks");
  StudyConfig sc;
  FitFlags study_flags;
  std::string study_config;
  study->add_option("-o,--out", sc.out_dir, "output directory")->required();
  study->add_option("--n-train", sc.n_train)->capture_default_str();
  study->add_option("--n-test", sc.n_test)->capture_default_str();
  study->add_option("--grid", sc.grid_size, "grid points per curve")->capture_default_str();
  study->add_option("--noise-var", sc.noise_var)->capture_default_str();
  study->add_option("--study-seed", sc.seed, "seed of the simulated data")->capture_default_str();
  study->add_option("--ranks", sc.ranks)->delimiter(',')->capture_default_str();
  study->add_option("--observe-fraction", sc.observe_fraction)->capture_default_str();
  study->add_option("--config", study_config, "key = value file of options")->check(CLI::ExistingFile);
  study_flags.add(study, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  set_quiet(quiet);

  try {
    if (*sim) {
      if (!sim_z.empty()) {
        truth.z_lo = sim_z[0];
        truth.z_hi = sim_z[1];
      }
      const auto samples = generate(truth);
      write_samples_csv_file(sim_out, samples, std::sqrt(truth.noise_var));
    } else if (*fitc) {
      if (!fit_config.empty()) apply_config(fitc, fit_config);
      FitConfig config = fit_flags.resolve();
      const auto samples = load_samples(fit_data, fit_ignore_sd);
      if (!config.lambda_grid.empty()) {
        const CvResult cv = cross_validate(samples, config);
        config.lambdas = cv.best;
        if (!fit_cv_out.empty()) write_text(fit_cv_out, cv_table(cv));
        std::cout << "cross-validated lambdas " << format_double(cv.best.t_cov) << ','
                  << format_double(cv.best.z_cov) << ',' << format_double(cv.best.t_mean) << ','
                  << format_double(cv.best.z_mean) << '\n';
      } else if (!fit_cv_out.empty()) {
        throw InvalidArgument("--cv-table needs --cv-grid");
      }
      const FittedModel model = fit(samples, config);
      save_model(fit_out, model);
      if (!fit_diag.empty()) write_trace_csv(fit_diag, model.diagnostics);
      print_summary(model, samples);
    } else if (*cvc) {
      if (!cv_config.empty()) apply_config(cvc, cv_config);
      const FitConfig config = cv_flags.resolve();
      if (config.lambda_grid.empty()) throw InvalidArgument("cv needs --cv-grid");
      const auto samples = load_samples(cv_data, cv_ignore_sd);
      const CvResult cv = cross_validate(samples, config);
      if (cv_out.empty())
        std::cout << cv_table(cv);
      else
        write_text(cv_out, cv_table(cv));
    } else if (*pred) {
      const FittedModel model = load_model(pred_model);
      const auto samples = load_samples(pred_data, pred_ignore_sd);
      std::vector<FunctionalSample> targets;
      if (!pred_targets.empty()) {
        // Targets share the sample CSV reader with placeholder values and covariates.
        std::ifstream in(pred_targets);
        std::string header;
        std::getline(in, header);
        std::ostringstream patched;
        const bool with_sd = header.find("sd") != std::string::npos;
        if (header != "id,t" && header != "id,t,sd")
          throw DataError(pred_targets + ":1: header must be id,t or id,t,sd");
        patched << (with_sd ? "id,t,y,z,sd\n" : "id,t,y,z\n");
        std::string line;
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          const auto c1 = line.find(',');
          if (c1 == std::string::npos) {
            patched << line << '\n';
            continue;
          }
          const auto c2 = line.find(',', c1 + 1);
          patched << line.substr(0, c2) << ",0,0" << (c2 == std::string::npos ? "" : line.substr(c2))
                  << '\n';
        }
        std::istringstream pin(patched.str());
        targets = read_samples_csv(pin, pred_targets);
      }
      if (pred_grid < 0) throw InvalidArgument("--grid must be positive");
      std::ostringstream out;
      out << "id,t,mean,var\n";
      for (const auto& s : samples) {
        const ScorePosterior post = infer_scores(model.params, model.bases, s);
        Vec times = s.times, sd = pred_latent ? Vec() : s.noise_sd;
        if (pred_grid > 0) {
          times = linspace(model.bases.a.domain().lo, model.bases.a.domain().hi, pred_grid);
          sd = Vec();
        } else if (!pred_targets.empty()) {
          const auto it = std::find_if(targets.begin(), targets.end(),
                                       [&](const FunctionalSample& t) { return t.id == s.id; });
          if (it == targets.end()) continue;
          times = it->times;
          sd = it->noise_sd;
        }
        const CurvePrediction cp = predict_curve(model.params, model.bases, post, times, pred_latent, sd);
        for (Eigen::Index i = 0; i < times.size(); ++i)
          out << s.id << ',' << format_double(times(i)) << ',' << format_double(cp.mean(i)) << ','
              << format_double(cp.var(i)) << '\n';
      }
      for (const auto& t : targets)
        if (std::none_of(samples.begin(), samples.end(),
                         [&](const FunctionalSample& s) { return s.id == t.id; }))
          warn("target id '" + t.id + "' has no observed curve; skipped");
      write_text(pred_out, out.str());
    } else if (*eig) {
      const FittedModel model = load_model(eig_model);
      if (eig_nz < 1 || eig_nt < 2) throw InvalidArgument("grid sizes must be at least 1 (z) and 2 (t)");
      Vec zs = eig_z.empty() ? linspace(model.training.z_range.lo, model.training.z_range.hi, eig_nz)
                             : Eigen::Map<const Vec>(eig_z.data(), eig_z.size()).eval();
      const Vec ts = linspace(model.bases.b.domain().lo, model.bases.b.domain().hi, eig_nt);
      const auto sweep = eigen_sweep(model.params, model.bases, zs, ts);
      std::ostringstream out;
      out << "z,t,j,value,eigenvalue\n";
      for (const auto& ef : sweep)
        for (int j = 0; j < model.params.r(); ++j)
          for (Eigen::Index i = 0; i < ts.size(); ++i)
            out << format_double(ef.z) << ',' << format_double(ts(i)) << ',' << j + 1 << ','
                << format_double(ef.functions(j, i)) << ',' << format_double(ef.eigenvalues(j)) << '\n';
      write_text(eig_out, out.str());
    } else if (*study) {
      if (!study_config.empty()) apply_config(study, study_config);
      sc.fit = study_flags.resolve();
      const StudyReport report = run_study(sc);
      std::cout << report.text();
    }
  } catch (const InvalidArgument& e) {
    std::cerr << "sfpca: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "sfpca: data error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "sfpca: numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "sfpca: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "sfpca: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
