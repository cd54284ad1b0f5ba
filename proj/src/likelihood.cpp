#include "sfpca/likelihood.hpp"

#include "sfpca/error.hpp"

#include <unsupported/Eigen/KroneckerProduct>

#include <cmath>
#include <exception>
#include <sstream>

namespace sfpca {

namespace {

constexpr std::size_t kChunk = 16;

using RowMajorMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Vec mean_coefficients(const Vec& theta, const Vec& u, int l) {
  const auto p = u.size();
  Eigen::Map<const RowMajorMat> Theta(theta.data(), l, p);
  return Theta * u;
}

[[noreturn]] void numerical_failure(const std::string& id, const std::string& what) {
  throw NumericalError("sample '" + id + "': " + what);
}

struct Partial {
  double value = 0.0;
  Vec grad_theta;
  Mat grad_gamma;
  double grad_sigma2 = 0.0;
  double grad_eta = 0.0;

  void init(const ModelBases& bases, int r, EvalRequest req) {
    if (req.grad_theta) grad_theta = Vec::Zero(bases.l() * bases.p());
    if (req.grad_gamma) grad_gamma = Mat::Zero(bases.m() * bases.q(), r);
  }

  void add(const Partial& other, EvalRequest req) {
    value += other.value;
    if (req.grad_theta) grad_theta += other.grad_theta;
    if (req.grad_gamma) grad_gamma += other.grad_gamma;
    grad_sigma2 += other.grad_sigma2;
    grad_eta += other.grad_eta;
  }
};

void accumulate_sample(const PreparedSample& s, const ModelParams& params,
                       const ModelBases& bases, EvalRequest req, Partial& out) {
  const SampleWorkspace ws = make_workspace(s, params, bases);
  const double nu = ws.nu;

  // Determinant lemma and Woodbury: log det Sigma + res^T Sigma^{-1} res.
  const double value = 2.0 * ws.F.diagonal().array().log().sum() + s.n_obs * std::log(nu) +
                       ws.rr / nu - ws.h.squaredNorm() / (nu * nu) + s.log_det_offset;
  if (!std::isfinite(value)) numerical_failure(s.id, "non-finite likelihood term");
  out.value += value;

  if (req.grad_theta) {
    // -2/nu H^T res + 2/nu H^T B E^T E B^T res, with E^T E B^T res = C a.
    const Vec omega = (-2.0 / nu) * (ws.Atr - s.BtA.transpose() * (ws.C * ws.a));
    out.grad_theta += kron(omega, s.u);
  }

  if (req.grad_sigma && !s.own_noise) {
    // m_n/nu - tr(E^T E B^T B)/nu - ||Sigma^{-1} res||^2
    const double tr = (ws.E * s.BtB).cwiseProduct(ws.E).sum();
    const double sinv_res_sq =
        (ws.rr - 2.0 * ws.a.dot(ws.g) + ws.a.dot(ws.W * ws.a)) / (nu * nu);
    const double d_sigma2 = s.n_obs / nu - tr / nu - sinv_res_sq;
    out.grad_sigma2 += d_sigma2;
    out.grad_eta += nu * d_sigma2;
  }

  if (req.grad_gamma) {
    // dL/dC = 2/nu (B^T B C - B^T K W) - 2/nu^2 (B^T - B^T K C^T B^T) S (B C - K W)
    const Mat BtK = ws.L.transpose()
                        .triangularView<Eigen::Upper>()
                        .solve(ws.L.triangularView<Eigen::Lower>().solve(ws.P.transpose()))
                        .transpose();
    const Mat term1 = (2.0 / nu) * (ws.P - BtK * ws.W);
    const Vec left = ws.Btr - BtK * ws.g;
    const Vec right = ws.g - ws.W * ws.a;
    const Mat dC = term1 - (2.0 / (nu * nu)) * left * right.transpose();
    // dC/dbeta_ijk has the single entry v_k(z) at (i, j).
    const auto q = s.v.size();
    for (Eigen::Index i = 0; i < dC.rows(); ++i)
      out.grad_gamma.middleRows(i * q, q).noalias() += s.v * dC.row(i);
  }
}

template <class Kernel>
void run_chunks(std::size_t n, Exec exec, std::vector<Partial>& partials, Kernel&& kernel) {
  const std::size_t n_chunks = (n + kChunk - 1) / kChunk;
  partials.resize(n_chunks);
  std::vector<std::exception_ptr> errors(n_chunks);
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(n_chunks); ++c) {
      try {
        kernel(static_cast<std::size_t>(c), partials[c]);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  } else {
    for (std::size_t c = 0; c < n_chunks; ++c) {
      try {
        kernel(c, partials[c]);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

} // namespace

PreparedSample prepare_sample(const FunctionalSample& sample, const ModelBases& bases,
                              DomainPolicy policy) {
  sample.validate();
  const DesignPair d = design(sample, bases, policy);
  const Eigen::Index n = sample.size();
  PreparedSample s;
  s.id = sample.id;
  s.n_obs = static_cast<int>(n);
  s.covariate = sample.covariate;
  s.own_noise = sample.has_noise_sd();
  s.u = bases.u.eval(sample.covariate, policy);
  s.v = bases.v.eval(sample.covariate, policy);

  Mat A(n, bases.l());
  for (Eigen::Index i = 0; i < n; ++i) A.row(i) = bases.a.eval(sample.times(i), policy).transpose();
  Mat B = d.B;
  Vec y = sample.values;
  if (s.own_noise) {
    const Vec w = sample.noise_sd.cwiseInverse();
    A = w.asDiagonal() * A;
    B = w.asDiagonal() * B;
    y = y.cwiseProduct(w);
    s.log_det_offset = 2.0 * sample.noise_sd.array().log().sum();
  }
  s.BtB = B.transpose() * B;
  s.BtA = B.transpose() * A;
  s.AtA = A.transpose() * A;
  s.Bty = B.transpose() * y;
  s.Aty = A.transpose() * y;
  s.yty = y.squaredNorm();
  return s;
}

Dataset::Dataset(const std::vector<FunctionalSample>& samples, const ModelBases& bases,
                 DomainPolicy policy)
    : bases_(bases) {
  samples_.resize(samples.size());
  std::vector<std::exception_ptr> errors(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(samples.size()); ++i) {
    try {
      samples_[i] = prepare_sample(samples[i], bases, policy);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (const auto& s : samples_) uses_common_noise_ |= !s.own_noise;
}

SampleWorkspace make_workspace(const PreparedSample& s, const ModelParams& params,
                               const ModelBases& bases) {
  const int r = params.r();
  SampleWorkspace ws;
  ws.nu = s.own_noise ? 1.0 : params.sigma2();
  ws.C = c_matrix(params.gamma, s.v, bases.m());
  ws.phi = mean_coefficients(params.theta, s.u, bases.l());
  ws.Btr = s.Bty - s.BtA * ws.phi;
  ws.Atr = s.Aty - s.AtA * ws.phi;
  ws.rr = s.yty - 2.0 * ws.phi.dot(s.Aty) + ws.phi.dot(s.AtA * ws.phi);
  ws.P = s.BtB * ws.C;
  ws.W = ws.C.transpose() * ws.P;
  ws.W = (0.5 * (ws.W + ws.W.transpose())).eval();
  ws.g = ws.C.transpose() * ws.Btr;

  Mat M = Mat::Identity(r, r) + ws.W / ws.nu;
  Eigen::LLT<Mat> llt(M);
  if (llt.info() != Eigen::Success) {
    M.diagonal().array() += 1e-10 * M.trace() / r;
    llt.compute(M);
    ws.jittered = true;
    if (llt.info() != Eigen::Success) numerical_failure(s.id, "Cholesky of I + W/nu failed");
  }
  ws.F = llt.matrixL();
  ws.h = ws.F.triangularView<Eigen::Lower>().solve(ws.g);
  ws.L = std::sqrt(ws.nu) * ws.F;
  ws.E = ws.L.triangularView<Eigen::Lower>().solve(ws.C.transpose());
  ws.a = ws.L.transpose().triangularView<Eigen::Upper>().solve(
      ws.L.triangularView<Eigen::Lower>().solve(ws.g));
  return ws;
}

LikelihoodEval evaluate(const Dataset& data, const ModelParams& params, EvalRequest request,
                        Exec exec) {
  const ModelBases& bases = data.bases();
  const auto& samples = data.samples();
  const int r = params.r();
  if (params.theta.size() != bases.l() * bases.p() || params.gamma.rows() != bases.m() * bases.q())
    throw InvalidArgument("parameter dimensions do not match the model bases");

  std::vector<Partial> partials;
  run_chunks(samples.size(), exec, partials, [&](std::size_t c, Partial& part) {
    part.init(bases, r, request);
    const std::size_t end = std::min(samples.size(), (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i)
      accumulate_sample(samples[i], params, bases, request, part);
  });

  Partial total;
  total.init(bases, r, request);
  for (const auto& p : partials) total.add(p, request);

  LikelihoodEval out;
  out.value = total.value;
  out.grad_theta = std::move(total.grad_theta);
  out.grad_gamma = std::move(total.grad_gamma);
  out.grad_sigma2 = total.grad_sigma2;
  out.grad_eta = total.grad_eta;
  return out;
}

double nll_fast(const Dataset& data, const ModelParams& params, Exec exec) {
  return evaluate(data, params, EvalRequest::value_only(), exec).value;
}

Vec grad_theta_fast(const Dataset& data, const ModelParams& params, Exec exec) {
  return evaluate(data, params, {true, false, false}, exec).grad_theta;
}

double grad_sigma_fast(const Dataset& data, const ModelParams& params, Exec exec) {
  return evaluate(data, params, {false, false, true}, exec).grad_sigma2;
}

Mat grad_gamma_fast(const Dataset& data, const ModelParams& params, Exec exec) {
  return evaluate(data, params, {false, true, false}, exec).grad_gamma;
}

Vec grad_beta_fast(const Dataset& data, const ModelParams& params, Exec exec) {
  const Mat g = grad_gamma_fast(data, params, exec);
  return Eigen::Map<const Vec>(g.data(), g.size());
}

// ---------------------------------------------------------------------------
// Dense reference path.

namespace {

struct DenseSample {
  DesignPair d;
  Mat C;
  Mat Sigma;
  Eigen::LLT<Mat> llt;
  Vec res;
};

DenseSample dense_sample(const FunctionalSample& sample, const ModelParams& params,
                         const ModelBases& bases) {
  sample.validate();
  DenseSample ds;
  ds.d = design(sample, bases);
  ds.C = c_matrix(params.gamma, bases.v.eval(sample.covariate), bases.m());
  const Mat BC = ds.d.B * ds.C;
  ds.Sigma = BC * BC.transpose();
  if (sample.has_noise_sd())
    ds.Sigma.diagonal() += sample.noise_sd.array().square().matrix();
  else
    ds.Sigma.diagonal().array() += params.sigma2();
  ds.llt.compute(ds.Sigma);
  if (ds.llt.info() != Eigen::Success)
    numerical_failure(sample.id, "marginal covariance is not positive definite");
  ds.res = sample.values - ds.d.H * params.theta;
  return ds;
}

} // namespace

double nll_dense(const std::vector<FunctionalSample>& samples, const ModelParams& params,
                 const ModelBases& bases) {
  double total = 0.0;
  for (const auto& sample : samples) {
    const DenseSample ds = dense_sample(sample, params, bases);
    const Mat L = ds.llt.matrixL();
    const double logdet = 2.0 * L.diagonal().array().log().sum();
    total += logdet + ds.res.dot(ds.llt.solve(ds.res));
  }
  return total;
}

Vec grad_theta_dense(const std::vector<FunctionalSample>& samples, const ModelParams& params,
                     const ModelBases& bases) {
  Vec grad = Vec::Zero(params.theta.size());
  for (const auto& sample : samples) {
    const DenseSample ds = dense_sample(sample, params, bases);
    grad += -2.0 * ds.d.H.transpose() * ds.llt.solve(ds.res);
  }
  return grad;
}

double grad_sigma_dense(const std::vector<FunctionalSample>& samples, const ModelParams& params,
                        const ModelBases& bases) {
  double grad = 0.0;
  for (const auto& sample : samples) {
    if (sample.has_noise_sd()) continue;
    const DenseSample ds = dense_sample(sample, params, bases);
    const Mat inv = ds.llt.solve(Mat::Identity(sample.size(), sample.size()));
    const Vec sr = inv * ds.res;
    grad += inv.trace() - sr.squaredNorm();
  }
  return grad;
}

Mat grad_gamma_dense(const std::vector<FunctionalSample>& samples, const ModelParams& params,
                     const ModelBases& bases) {
  Mat grad = Mat::Zero(params.gamma.rows(), params.gamma.cols());
  for (const auto& sample : samples) {
    const DenseSample ds = dense_sample(sample, params, bases);
    const Mat inv = ds.llt.solve(Mat::Identity(sample.size(), sample.size()));
    const Vec sr = inv * ds.res;
    const Mat middle = inv - sr * sr.transpose();
    const Mat dC = 2.0 * ds.d.B.transpose() * middle * ds.d.B * ds.C;
    const Vec v = bases.v.eval(sample.covariate);
    grad += Eigen::kroneckerProduct(dC, v);
  }
  return grad;
}

Mat woodbury_inverse(const FunctionalSample& sample, const ModelParams& params,
                     const ModelBases& bases) {
  const DesignPair d = design(sample, bases);
  const Mat C = c_matrix(params.gamma, bases.v.eval(sample.covariate), bases.m());
  const Vec dinv = sample.has_noise_sd()
                       ? Vec(sample.noise_sd.array().square().inverse().matrix())
                       : Vec::Constant(sample.size(), 1.0 / params.sigma2());
  const Mat U = d.B * C;
  const Mat DinvU = dinv.asDiagonal() * U;
  Mat core = Mat::Identity(C.cols(), C.cols()) + U.transpose() * DinvU;
  Eigen::LLT<Mat> llt(core);
  if (llt.info() != Eigen::Success) numerical_failure(sample.id, "Woodbury core not SPD");
  Mat out = -DinvU * llt.solve(DinvU.transpose());
  out.diagonal() += dinv;
  return out;
}

ObjectiveEval objective(const Dataset& data, const ModelParams& params,
                        const PenaltyOperator& penalty, EvalRequest request, Exec exec) {
  const LikelihoodEval lik = evaluate(data, params, request, exec);
  const Vec beta = params.beta();
  ObjectiveEval out;
  out.nll = lik.value;
  out.penalty = penalty_value(penalty, params.theta, beta, params.r());
  out.value = out.nll + out.penalty;
  if (request.grad_theta || request.grad_gamma) {
    auto [gp_theta, gp_beta] = penalty_grad(penalty, params.theta, beta, params.r());
    if (request.grad_theta) out.grad_theta = lik.grad_theta + gp_theta;
    if (request.grad_gamma)
      out.grad_gamma =
          lik.grad_gamma + Eigen::Map<const Mat>(gp_beta.data(), params.gamma.rows(), params.r());
  }
  out.grad_eta = lik.grad_eta;
  return out;
}

} // namespace sfpca
