#include "sfpca/likelihood.hpp"
#include "sfpca/sim.hpp"

#include "CLI11.hpp"

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <optional>
#include <random>

using namespace sfpca;

namespace {

template <class F>
double best_seconds(int reps, F&& f) {
  double best = 1e300;
  for (int k = 0; k < reps; ++k) {
    const auto start = std::chrono::steady_clock::now();
    f();
    const std::chrono::duration<double> d = std::chrono::steady_clock::now() - start;
    best = std::min(best, d.count());
  }
  return best;
}

} // namespace

// Times the penalized objective with all gradients on the serial and parallel
// fast paths, and the dense reference on a subset of curves.
int main(int argc, char** argv) {
  CLI::App app{"Likelihood kernel benchmark"};
  std::size_t n_curves = 2000;
  std::vector<int> grids{50, 100, 200, 400};
  int reps = 5, r = 3;
  std::size_t dense_curves = 50;
  app.add_option("--n", n_curves, "curves")->capture_default_str();
  app.add_option("--grids", grids, "observations per curve")->delimiter(',')->capture_default_str();
  app.add_option("--reps", reps, "repetitions; the best time is reported")->capture_default_str();
  app.add_option("--rank", r)->capture_default_str();
  app.add_option("--dense-curves", dense_curves, "curves for the dense reference")
      ->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  std::printf("threads %d\n", omp_get_max_threads());
  std::printf("%8s %10s %12s %12s %12s %9s %14s %12s\n", "obs", "prepare_s", "serial_s",
              "parallel_s", "speedup", "bitwise", "dense_s/curve", "fast_s/curve");
  const ModelBases bases = make_bases(10, 5, 10, 7, {0.0, 1.0}, {0.0, 1.0});
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal(0.0, 0.3);
  ModelParams params = ModelParams::zeros(bases, r, 0.1);
  for (Eigen::Index i = 0; i < params.theta.size(); ++i) params.theta(i) = normal(rng);
  for (Eigen::Index i = 0; i < params.gamma.size(); ++i) params.gamma(i) = normal(rng);
  const PenaltyOperator penalty = assemble(bases.b, bases.v, bases.a, bases.u, Lambdas{1e-3, 1e-3, 1e-3, 1e-3});

  for (int grid : grids) {
    SimTruth truth;
    truth.n_curves = n_curves;
    truth.grid_size = grid;
    const auto samples = generate(truth);
    std::optional<Dataset> data;
    const double prep = best_seconds(1, [&] { data.emplace(samples, bases); });
    ObjectiveEval es, ep;
    const double ts =
        best_seconds(reps, [&] { es = objective(*data, params, penalty, EvalRequest::all(), Exec::serial); });
    const double tp =
        best_seconds(reps, [&] { ep = objective(*data, params, penalty, EvalRequest::all(), Exec::parallel); });
    const bool same = es.value == ep.value && es.grad_theta == ep.grad_theta &&
                      es.grad_gamma == ep.grad_gamma && es.grad_eta == ep.grad_eta;

    const std::vector<FunctionalSample> sub(samples.begin(),
                                            samples.begin() + std::min(dense_curves, samples.size()));
    const double td = best_seconds(1, [&] {
      nll_dense(sub, params, bases);
      grad_theta_dense(sub, params, bases);
      grad_gamma_dense(sub, params, bases);
    });
    std::printf("%8d %10.4f %12.5f %12.5f %12.2f %9s %14.3e %12.3e\n", grid, prep, ts, tp, ts / tp,
                same ? "yes" : "NO", td / static_cast<double>(sub.size()),
                ts / static_cast<double>(n_curves));
  }
  return 0;
}
