#pragma once

#include "pvi/common.hpp"
#include "pvi/families.hpp"
#include "pvi/models.hpp"

#include <span>
#include <string>

namespace pvi {

enum class RegKind { None, PriorKL, PosteriorKL };
enum class MixMode { Additive, Interpolate };

inline std::string to_string(RegKind k) {
  switch (k) {
    case RegKind::None: return "none";
    case RegKind::PriorKL: return "prior_kl";
    case RegKind::PosteriorKL: return "posterior_kl";
  }
  return "?";
}

//! Regularizer selection. Additive mode maximizes score - lambda * r(phi);
//! interpolate mode maximizes lambda * score + (1 - lambda) * averaged ELBO.
struct RegularizerSpec {
  RegKind kind = RegKind::None;
  double lambda = 0.0;
  MixMode mode = MixMode::Additive;
  int mc_size = 100;

  void validate() const {
    expect(lambda >= 0.0, "regularizer: lambda must be nonnegative");
    if (mode == MixMode::Interpolate) {
      expect(lambda <= 1.0, "regularizer: interpolation needs lambda in [0,1]");
      expect(kind == RegKind::PosteriorKL,
             "regularizer: interpolation mixes against the ELBO (posterior_kl)");
    }
  }
};

struct RegResult {
  double value = 0.0;
  Vec grad;
  double mc_se = 0.0;
};

//! KL(q_phi || prior) with gradient; closed form for Gaussian families.
inline RegResult prior_kl(const RegularizerSpec& spec, const Family& family, const Vec& phi,
                          const GaussianPrior& prior, Rng* rng) {
  const KlResult kl = family.kl_to_gaussian_prior(phi, prior, spec.mc_size, rng);
  return RegResult{kl.value, kl.grad, kl.mc_se};
}

//! Gradient-equivalent surrogate for KL(q_phi || p(theta|y)): the negative
//! ELBO E_q[log q - log prior - sum_i loglik], estimated by reparameterized
//! Monte Carlo. Equals the posterior KL up to the constant log p(y); the
//! value is reported as a negative ELBO, never as an exact KL.
inline RegResult posterior_kl_surrogate(const RegularizerSpec& spec, const Family& family,
                                        const Vec& phi, const Model& model, const Dataset& data,
                                        std::span<const int> idx, Rng& rng) {
  expect(model.has_lik(), "posterior_kl: needs an explicit likelihood");
  expect(spec.mc_size >= 2, "posterior_kl: mc_size must be >= 2");
  const auto q = family.at(phi);
  const auto* spline = dynamic_cast<const Spline1dEval*>(q.get());
  const int n = data.size();
  std::vector<int> all;
  if (idx.empty()) {
    all.resize(n);
    for (int i = 0; i < n; ++i) all[i] = i;
  }
  const std::span<const int> use = idx.empty() ? std::span<const int>(all) : idx;
  const double scale = static_cast<double>(n) / static_cast<double>(use.size());

  RegResult r;
  r.grad = Vec::Zero(family.layout().dim());
  double sum = 0.0, sum2 = 0.0;
  for (int j = 0; j < spec.mc_size; ++j) {
    const Vec u = family.sample_base(rng);
    const Vec theta = q->sample(u);
    double loglik = 0.0;
    Vec dloglik = Vec::Zero(model.theta_dim);
    for (int i : use) {
      loglik += model.lik->log_lik(theta, data[i]);
      dloglik += model.lik->dloglik_dtheta(theta, data[i]);
    }
    const double term =
        q->log_density(theta) - model.prior.log_density(theta) - scale * loglik;
    sum += term;
    sum2 += term * term;
    const Vec cot = -model.prior.grad_log_density(theta) - scale * dloglik;
    if (spline != nullptr)
      r.grad += spline->grad_sample_logq_phi(u[0]) + q->pathwise_jvp(u, cot);
    else
      r.grad += q->pathwise_jvp(u, q->grad_logq_theta(theta) + cot) + q->grad_logq_phi(theta);
  }
  r.grad /= static_cast<double>(spec.mc_size);
  r.value = sum / spec.mc_size;
  const double var = std::max(0.0, sum2 / spec.mc_size - r.value * r.value);
  r.mc_se = std::sqrt(var / spec.mc_size);
  return r;
}

struct Combined {
  double objective = 0.0;
  Vec grad;
};

//! score - lambda * r(phi): an additive penalty on the regularizer.
inline Combined combine_additive(double score_value, const Vec& score_grad, double lambda,
                                 double reg_value, const Vec& reg_grad) {
  expect(lambda >= 0.0, "combine_additive: lambda must be >= 0");
  Combined c;
  c.objective = score_value - lambda * reg_value;
  c.grad = score_grad - lambda * reg_grad;
  return c;
}

//! lambda * PVI + (1 - lambda) * VI; endpoints recover each pure method.
inline Combined combine_interpolate(double lambda, double pvi_value, const Vec& pvi_grad,
                                    double vi_value, const Vec& vi_grad) {
  expect(lambda >= 0.0 && lambda <= 1.0, "combine_interpolate: lambda must be in [0,1]");
  Combined c;
  c.objective = lambda * pvi_value + (1.0 - lambda) * vi_value;
  c.grad = lambda * pvi_grad + (1.0 - lambda) * vi_grad;
  return c;
}

}  // namespace pvi
