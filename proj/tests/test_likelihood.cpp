#include "doctest.h"

#include "sfpca/error.hpp"
#include "sfpca/likelihood.hpp"
#include "test_support.hpp"

using namespace sfpca;
using namespace sfpca::testing;

namespace {

struct Instance {
  ModelBases bases;
  std::vector<FunctionalSample> samples;
  ModelParams params;
};

Instance make_instance(std::uint64_t seed, bool own_noise = false, int r = 2) {
  std::mt19937_64 rng(seed);
  Instance in{make_bases(6, 5, 7, 5, {0, 1}, {0, 1}), {}, {}};
  in.samples = random_samples(rng, 20, 3, 25, own_noise);
  in.params = random_params(rng, in.bases, r, 0.4);
  return in;
}

} // namespace

TEST_CASE("fast likelihood matches the dense path") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (bool own : {false, true}) {
      const Instance in = make_instance(seed, own, 1 + static_cast<int>(seed % 3));
      const Dataset data(in.samples, in.bases);
      const LikelihoodEval fast = evaluate(data, in.params, EvalRequest::all());
      CHECK(rel_err(fast.value, nll_dense(in.samples, in.params, in.bases)) < 1e-10);
      CHECK(rel_err_mat(fast.grad_theta, grad_theta_dense(in.samples, in.params, in.bases)) <
            1e-9);
      CHECK(rel_err_mat(fast.grad_gamma, grad_gamma_dense(in.samples, in.params, in.bases)) <
            1e-9);
      CHECK(rel_err(fast.grad_sigma2, grad_sigma_dense(in.samples, in.params, in.bases)) < 1e-9);
      if (own) CHECK(fast.grad_sigma2 == 0.0);
      CHECK(fast.grad_eta == doctest::Approx(in.params.sigma2() * fast.grad_sigma2));
    }
  }
}

TEST_CASE("gradients match central differences of the dense objective") {
  const Instance in = make_instance(42);
  const Dataset data(in.samples, in.bases);
  const LikelihoodEval fast = evaluate(data, in.params, EvalRequest::all());
  auto f = [&](const ModelParams& p) { return nll_dense(in.samples, p, in.bases); };

  std::mt19937_64 rng(7);
  std::uniform_int_distribution<Eigen::Index> pick_t(0, in.params.theta.size() - 1);
  std::uniform_int_distribution<Eigen::Index> pick_g(0, in.params.gamma.size() - 1);
  const Vec gb = Eigen::Map<const Vec>(fast.grad_gamma.data(), fast.grad_gamma.size());
  for (int rep = 0; rep < 10; ++rep) {
    const Eigen::Index i = pick_t(rng);
    const double h = 1e-5;
    ModelParams pp = in.params, pm = in.params;
    pp.theta(i) += h;
    pm.theta(i) -= h;
    CHECK(rel_err((f(pp) - f(pm)) / (2 * h), fast.grad_theta(i)) < 1e-5);

    const Eigen::Index k = pick_g(rng);
    pp = in.params;
    pm = in.params;
    pp.gamma.data()[k] += h;
    pm.gamma.data()[k] -= h;
    CHECK(rel_err((f(pp) - f(pm)) / (2 * h), gb(k)) < 1e-5);
  }
  ModelParams pp = in.params, pm = in.params;
  pp.log_sigma2 += 1e-5;
  pm.log_sigma2 -= 1e-5;
  CHECK(rel_err((f(pp) - f(pm)) / 2e-5, fast.grad_eta) < 1e-5);
}

TEST_CASE("serial and parallel evaluation are bitwise identical") {
  std::mt19937_64 rng(9);
  const ModelBases bases = make_bases(6, 5, 7, 5, {0, 1}, {0, 1});
  const auto samples = random_samples(rng, 150, 5, 30);
  const ModelParams params = random_params(rng, bases, 3);
  const Dataset data(samples, bases);
  const LikelihoodEval a = evaluate(data, params, EvalRequest::all(), Exec::serial);
  const LikelihoodEval b = evaluate(data, params, EvalRequest::all(), Exec::parallel);
  CHECK(a.value == b.value);
  CHECK(a.grad_theta == b.grad_theta);
  CHECK(a.grad_gamma == b.grad_gamma);
  CHECK(a.grad_sigma2 == b.grad_sigma2);
}

TEST_CASE("Woodbury inverse") {
  for (bool own : {false, true}) {
    const Instance inst = make_instance(13, own, 3);
    for (const auto& s : inst.samples) {
      const Mat S = marginal_cov(s, inst.params, inst.bases);
      const Mat inv = woodbury_inverse(s, inst.params, inst.bases);
      const Mat I = Mat::Identity(s.size(), s.size());
      CHECK((S * inv - I).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("workspace invariants") {
  const Instance in = make_instance(21, false, 3);
  const Dataset data(in.samples, in.bases);
  for (const auto& s : data.samples()) {
    const SampleWorkspace ws = make_workspace(s, in.params, in.bases);
    const Mat I = Mat::Identity(3, 3);
    CHECK((ws.F * ws.F.transpose() - (I + ws.W / ws.nu)).norm() < 1e-10 * (1 + ws.W.norm()));
    CHECK(((ws.nu * I + ws.W) * ws.a - ws.g).norm() < 1e-9 * (1 + ws.g.norm()));
    CHECK((ws.W - ws.W.transpose()).norm() == 0.0);
    CHECK_FALSE(ws.jittered);
  }
}

TEST_CASE("constant per-observation sd reproduces the common-noise likelihood") {
  Instance in = make_instance(17);
  const Dataset common(in.samples, in.bases);
  std::vector<FunctionalSample> with_sd = in.samples;
  for (auto& s : with_sd) s.noise_sd = Vec::Constant(s.size(), std::sqrt(in.params.sigma2()));
  const Dataset own(with_sd, in.bases);
  CHECK_FALSE(own.uses_common_noise());
  const LikelihoodEval a = evaluate(common, in.params, EvalRequest::all());
  const LikelihoodEval b = evaluate(own, in.params, EvalRequest::all());
  CHECK(rel_err(a.value, b.value) < 1e-12);
  CHECK(rel_err_mat(a.grad_theta, b.grad_theta) < 1e-11);
  CHECK(rel_err_mat(a.grad_gamma, b.grad_gamma) < 1e-11);
}

TEST_CASE("objective adds the penalty") {
  const Instance in = make_instance(5);
  const Dataset data(in.samples, in.bases);
  const PenaltyOperator pen =
      assemble(in.bases.b, in.bases.v, in.bases.a, in.bases.u, {0.1, 0.2, 0.3, 0.4});
  const ObjectiveEval obj = objective(data, in.params, pen, EvalRequest::all());
  const double pv = penalty_value(pen, in.params.theta, in.params.beta(), in.params.r());
  CHECK(obj.penalty == pv);
  CHECK(obj.value == doctest::Approx(nll_fast(data, in.params) + pv).epsilon(1e-14));
  const auto [gt, gb] = penalty_grad(pen, in.params.theta, in.params.beta(), in.params.r());
  CHECK(rel_err_mat(obj.grad_theta, grad_theta_fast(data, in.params) + gt) < 1e-14);
}

TEST_CASE("input errors") {
  Instance in = make_instance(8);
  in.samples[3].covariate = 2.0;
  CHECK_THROWS_AS(Dataset(in.samples, in.bases), DataError);
  in = make_instance(8);
  const Dataset data(in.samples, in.bases);
  ModelParams bad = in.params;
  bad.theta = Vec::Zero(2);
  CHECK_THROWS_AS(nll_fast(data, bad), InvalidArgument);
}
