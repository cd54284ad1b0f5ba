#pragma once

#include "sfpca/model.hpp"
#include "sfpca/penalty.hpp"

#include <vector>

namespace sfpca {

// How the per-sample kernels are driven. Both policies use the same fixed
// chunking and ordered reduction, so results are bitwise identical.
enum class Exec { serial, parallel };

/// Parameter-independent per-curve statistics.
///
/// Rows of A (rows a(t_i)), B (rows b(t_i)) and y are scaled by 1/sd_i when the
/// curve carries its own errors and left unscaled otherwise. With that
/// whitening every low-rank identity is written once in terms of a generic
/// noise level nu (sigma^2 for the common-noise path, 1 for the own-error path).
struct PreparedSample {
  std::string id;
  int n_obs = 0;
  double covariate = 0.0;
  bool own_noise = false;
  double log_det_offset = 0.0; // sum_i log sd_i^2 on the own-error path
  Vec u;                       // u(z)
  Vec v;                       // v(z)
  Mat BtB;                     // m x m
  Mat BtA;                     // m x l
  Mat AtA;                     // l x l
  Vec Bty;                     // m
  Vec Aty;                     // l
  double yty = 0.0;
};

class Dataset {
public:
  Dataset(const std::vector<FunctionalSample>& samples, const ModelBases& bases,
          DomainPolicy policy = DomainPolicy::error);

  const std::vector<PreparedSample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  const ModelBases& bases() const { return bases_; }
  // True when at least one curve uses the common noise variance.
  bool uses_common_noise() const { return uses_common_noise_; }

private:
  std::vector<PreparedSample> samples_;
  ModelBases bases_;
  bool uses_common_noise_ = false;
};

PreparedSample prepare_sample(const FunctionalSample& sample, const ModelBases& bases,
                              DomainPolicy policy = DomainPolicy::error);

/// Low-rank per-sample quantities, in whitened coordinates (nu as above).
///   W = C^T B^T B C               (r x r)
///   g = C^T B^T res               (r)
///   F F^T = I + W / nu            (lower Cholesky)
///   h = F^{-1} g
///   L L^T = nu I + W              (L = sqrt(nu) F)
///   E = L^{-1} C^T                (r x m)
///   BtK = B^T B C (nu I + W)^{-1} (m x r); B^T K with K = B C (nu I + W)^{-1}
struct SampleWorkspace {
  double nu = 1.0;
  Mat C;
  Vec phi;   // Theta u(z), the mean in a-coefficients
  Vec Btr;   // B^T res
  Vec Atr;   // A^T res
  double rr = 0.0;
  Mat P;     // B^T B C
  Mat W;
  Vec g;
  Mat F;
  Vec h;
  Mat L;
  Mat E;
  Vec a;     // (nu I + W)^{-1} g
  bool jittered = false;
};

SampleWorkspace make_workspace(const PreparedSample& s, const ModelParams& params,
                               const ModelBases& bases);

struct EvalRequest {
  bool grad_theta = false;
  bool grad_gamma = false;
  bool grad_sigma = false;

  static EvalRequest value_only() { return {}; }
  static EvalRequest all() { return {true, true, true}; }
};

struct LikelihoodEval {
  double value = 0.0;
  Vec grad_theta;       // dL/dtheta
  Mat grad_gamma;       // dL/dGamma, same shape as Gamma; vec() is dL/dbeta
  double grad_sigma2 = 0.0; // dL/dsigma^2, common-noise curves only
  double grad_eta = 0.0;    // dL/dlog(sigma^2) = sigma^2 dL/dsigma^2
};

// Negative log-likelihood sum_n [log det Sigma_n + res_n^T Sigma_n^{-1} res_n]
// and requested gradients through the low-rank identities. Cost per curve is
// O(m^2 r + m l + l p + r^3), independent of the number of observations.
LikelihoodEval evaluate(const Dataset& data, const ModelParams& params, EvalRequest request,
                        Exec exec = Exec::parallel);

double nll_fast(const Dataset& data, const ModelParams& params, Exec exec = Exec::parallel);
Vec grad_theta_fast(const Dataset& data, const ModelParams& params, Exec exec = Exec::parallel);
double grad_sigma_fast(const Dataset& data, const ModelParams& params,
                       Exec exec = Exec::parallel);
Mat grad_gamma_fast(const Dataset& data, const ModelParams& params, Exec exec = Exec::parallel);
Vec grad_beta_fast(const Dataset& data, const ModelParams& params, Exec exec = Exec::parallel);

// Dense O(n_obs^3) reference path, built directly from the design matrices.
double nll_dense(const std::vector<FunctionalSample>& samples, const ModelParams& params,
                 const ModelBases& bases);
Vec grad_theta_dense(const std::vector<FunctionalSample>& samples, const ModelParams& params,
                     const ModelBases& bases);
double grad_sigma_dense(const std::vector<FunctionalSample>& samples, const ModelParams& params,
                        const ModelBases& bases);
Mat grad_gamma_dense(const std::vector<FunctionalSample>& samples, const ModelParams& params,
                     const ModelBases& bases);

// Sigma_n^{-1} via Sherman-Morrison-Woodbury:
// D^{-1} - D^{-1} B C (I + C^T B^T D^{-1} B C)^{-1} C^T B^T D^{-1}.
Mat woodbury_inverse(const FunctionalSample& sample, const ModelParams& params,
                     const ModelBases& bases);

struct ObjectiveEval {
  double value = 0.0;
  double nll = 0.0;
  double penalty = 0.0;
  Vec grad_theta;
  Mat grad_gamma;
  double grad_eta = 0.0;
};

// Penalized objective: nll_fast + penalty_value, with gradients from both.
ObjectiveEval objective(const Dataset& data, const ModelParams& params,
                        const PenaltyOperator& penalty, EvalRequest request,
                        Exec exec = Exec::parallel);

} // namespace sfpca
