#pragma once

#include "pvi/common.hpp"
#include "pvi/scores.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace pvi {

enum class EstimatorKind { LogReparam, LogRejection, Quadratic, CrpsPathwise, FiniteDiff };

inline std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::LogReparam: return "log_reparam";
    case EstimatorKind::LogRejection: return "log_rejection";
    case EstimatorKind::Quadratic: return "quadratic";
    case EstimatorKind::CrpsPathwise: return "crps_pathwise";
    case EstimatorKind::FiniteDiff: return "finite_diff";
  }
  return "?";
}

//! A phi-shaped gradient plus estimator metadata. Data dropped by an
//! estimator (all-underflow or zero acceptances) are excluded from the mean
//! and counted in dropped_data; a batch with no usable data reports a
//! non-finite gradient.
struct GradientEstimate {
  Vec grad;
  EstimatorKind estimator = EstimatorKind::FiniteDiff;
  int mc_size = 0;
  std::vector<int> accepted;
  int dropped_data = 0;
  double value = std::numeric_limits<double>::quiet_NaN();

  double acceptance_rate() const {
    if (accepted.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (int a : accepted) s += a;
    return s / (static_cast<double>(accepted.size()) * mc_size);
  }
};

//! Reparameterized (self-normalized) gradient of the log-score objective:
//! per datum a softmax-weighted sum of pathwise likelihood derivatives.
inline GradientEstimate grad_log_reparam(const Model& model, const Family& family,
                                         const Vec& phi, const Dataset& data,
                                         std::span<const int> idx, const McBatch& batch) {
  expect(model.has_lik(), "log_reparam: needs an explicit likelihood");
  batch.validate(ScoreKind::Log);
  const auto q = family.at(phi);
  const std::vector<Vec> thetas = detail::sampled_thetas(*q, batch);
  const std::vector<int> all = idx.empty() ? detail::all_indices(data) : std::vector<int>();
  const std::span<const int> use = idx.empty() ? all : idx;
  const int m = batch.M;

  GradientEstimate est;
  est.estimator = EstimatorKind::LogReparam;
  est.mc_size = m;
  std::vector<Vec> cot(m, Vec::Zero(model.theta_dim));
  std::vector<double> l(m), w(m);
  double value = 0.0;
  int kept = 0;
  for (int i : use) {
    const DatumView d = data[i];
    for (int j = 0; j < m; ++j) l[j] = model.lik->log_lik(thetas[j], d);
    const double lse = logsumexp(l);
    if (!std::isfinite(lse)) {
      ++est.dropped_data;
      continue;
    }
    ++kept;
    value += lse - std::log(static_cast<double>(m));
    for (int j = 0; j < m; ++j) w[j] = std::exp(l[j] - lse);
    for (int j = 0; j < m; ++j)
      if (w[j] > 0.0) cot[j] += w[j] * model.lik->dloglik_dtheta(thetas[j], d);
  }
  est.grad = Vec::Zero(family.layout().dim());
  if (kept == 0) {
    est.grad.setConstant(std::numeric_limits<double>::quiet_NaN());
    est.value = kNegInf;
    return est;
  }
  for (int j = 0; j < m; ++j) est.grad += q->pathwise_jvp(batch.u[j], cot[j]);
  est.grad /= static_cast<double>(kept);
  est.value = value / kept;
  return est;
}

//! Rejection-sampling gradient: accept draw j for datum i when
//! t_j < p(y_i|theta_j)/C_i, average the score function over accepted draws.
//! Unbiased at any M. Data with zero acceptances are dropped for the
//! iteration; an observed likelihood above the bound is a hard error.
inline GradientEstimate grad_log_rejection(const Model& model, const Family& family,
                                           const Vec& phi, const Dataset& data,
                                           std::span<const int> idx, const McBatch& batch) {
  expect(model.has_lik(), "log_rejection: needs an explicit likelihood");
  batch.validate(ScoreKind::Log);
  expect(static_cast<int>(batch.rej_t.size()) == batch.M,
         "log_rejection: batch carries no uniform variates");
  const auto q = family.at(phi);
  const std::vector<Vec> thetas = detail::sampled_thetas(*q, batch);
  const std::vector<int> all = idx.empty() ? detail::all_indices(data) : std::vector<int>();
  const std::span<const int> use = idx.empty() ? all : idx;
  const int m = batch.M;

  std::vector<Vec> score_j(m);
  for (int j = 0; j < m; ++j) score_j[j] = q->grad_logq_phi(thetas[j]);

  GradientEstimate est;
  est.estimator = EstimatorKind::LogRejection;
  est.mc_size = m;
  est.grad = Vec::Zero(family.layout().dim());
  est.accepted.reserve(use.size());
  std::vector<double> l(m);
  double value = 0.0;
  int kept = 0;
  for (int i : use) {
    const DatumView d = data[i];
    const std::optional<double> bound = model.lik->lik_bound(d);
    if (!bound) throw ConfigError("log_rejection: model declares no likelihood bound");
    Vec acc = Vec::Zero(est.grad.size());
    int k = 0;
    for (int j = 0; j < m; ++j) {
      l[j] = model.lik->log_lik(thetas[j], d);
      const double p = std::exp(l[j]);
      if (p > *bound * (1.0 + 1e-9))
        throw RuntimeFailure("log_rejection: likelihood bound violated at datum " +
                             std::to_string(i));
      if (batch.rej_t[j] < p / *bound) {
        acc += score_j[j];
        ++k;
      }
    }
    est.accepted.push_back(k);
    const double lse = logsumexp(l);
    if (k == 0) {
      ++est.dropped_data;
      continue;
    }
    ++kept;
    est.grad += acc / static_cast<double>(k);
    if (std::isfinite(lse)) value += lse - std::log(static_cast<double>(m));
  }
  if (kept == 0) {
    est.grad.setConstant(std::numeric_limits<double>::quiet_NaN());
    return est;
  }
  est.grad /= static_cast<double>(kept);
  est.value = value / kept;
  return est;
}

//! Pathwise gradient of the quadratic (Brier) score. Per datum the frozen
//! batch also makes this the exact gradient of the Monte Carlo objective:
//! 2 A(y_i) - 2 sum_c B_c A_c with A = dB/dphi.
inline GradientEstimate grad_quadratic(const Model& model, const Family& family, const Vec& phi,
                                       const Dataset& data, std::span<const int> idx,
                                       const McBatch& batch) {
  expect(model.has_lik(), "quadratic: needs an explicit likelihood");
  batch.validate(ScoreKind::Quadratic);
  const auto q = family.at(phi);
  const std::vector<Vec> thetas = detail::sampled_thetas(*q, batch);
  const std::vector<int> all = idx.empty() ? detail::all_indices(data) : std::vector<int>();
  const std::span<const int> use = idx.empty() ? all : idx;
  const int m = batch.M;
  const int n_use = static_cast<int>(use.size());

  GradientEstimate est;
  est.estimator = EstimatorKind::Quadratic;
  est.mc_size = m;
  std::vector<Vec> cot(m, Vec::Zero(model.theta_dim));
  double value = 0.0;
  std::vector<double> pmass;
  for (int i : use) {
    const DatumView d = data[i];
    const int cats = model.lik->category_count(d);
    expect(cats >= 2, "quadratic: model is not discrete");
    const int cy = model.lik->outcome_category(d);
    expect(cy >= 1 && cy <= cats, "quadratic: outcome outside its category range");
    pmass.assign(cats, 0.0);
    for (int c = 1; c <= cats; ++c) {
      for (int j = 0; j < m; ++j) pmass[c - 1] += model.lik->mass(thetas[j], d, c);
      pmass[c - 1] /= m;
    }
    double sq = 0.0;
    for (double p : pmass) sq += p * p;
    value += 2.0 * pmass[cy - 1] - sq;
    for (int j = 0; j < m; ++j) {
      Vec tc = 2.0 * model.lik->dmass_dtheta(thetas[j], d, cy);
      for (int c = 1; c <= cats; ++c)
        tc -= 2.0 * pmass[c - 1] * model.lik->dmass_dtheta(thetas[j], d, c);
      cot[j] += tc;
    }
  }
  est.grad = Vec::Zero(family.layout().dim());
  for (int j = 0; j < m; ++j) est.grad += q->pathwise_jvp(batch.u[j], cot[j] / m);
  est.grad /= static_cast<double>(n_use);
  est.value = value / n_use;
  return est;
}

//! Pathwise CRPS/energy gradient through a differentiable simulator.
//! The scalar sign generalizes to the unit vector in outcome space; exact
//! ties contribute zero.
inline GradientEstimate grad_crps(const Model& model, const Family& family, const Vec& phi,
                                  const Dataset& data, std::span<const int> idx,
                                  const McBatch& batch) {
  expect(model.has_sim(), "crps gradient: needs a simulator");
  batch.validate(ScoreKind::Crps);
  const auto q = family.at(phi);
  const std::vector<Vec> thetas = detail::sampled_thetas(*q, batch);
  const std::vector<int> all = idx.empty() ? detail::all_indices(data) : std::vector<int>();
  const std::span<const int> use = idx.empty() ? all : idx;
  const int m = batch.M;
  const int two_m = 2 * m;
  const int n_use = static_cast<int>(use.size());
  const bool per_datum_sims = model.sim->uses_covariates();
  const double wfit = -1.0 / (static_cast<double>(two_m) * n_use);
  const double wpair = 1.0 / (static_cast<double>(two_m) * n_use);

  GradientEstimate est;
  est.estimator = EstimatorKind::CrpsPathwise;
  est.mc_size = m;
  est.grad = Vec::Zero(family.layout().dim());

  const auto unit = [](const Vec& a) -> Vec {
    const double nrm = a.norm();
    return nrm > 0.0 ? Vec(a / nrm) : Vec(Vec::Zero(a.size()));
  };

  const bool scalar = model.sim->out_dim() == 1;
  const auto sign_of = [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); };

  std::vector<Vec> sims;
  std::vector<Vec> theta_cot(two_m, Vec::Zero(model.theta_dim));
  std::vector<double> sims1(scalar ? two_m : 0);
  double value = 0.0;

  if (!per_datum_sims) {
    detail::simulate_all(model, thetas, batch, nullptr, sims);
    std::vector<Vec> out_cot(two_m, Vec::Zero(sims[0].size()));
    std::vector<double> out_cot1(scalar ? two_m : 0, 0.0);
    if (scalar)
      for (int j = 0; j < two_m; ++j) sims1[j] = sims[j][0];
    double pair = 0.0;
    for (int p = 0; p < m; ++p) {
      if (scalar) {
        const double diff = sims1[p] - sims1[p + m];
        pair += std::abs(diff) / two_m;
        const double e = sign_of(diff);
        out_cot1[p] += (wpair * n_use) * e;  // pair term is shared, not per datum
        out_cot1[p + m] -= (wpair * n_use) * e;
      } else {
        const Vec diff = sims[p] - sims[p + m];
        pair += diff.norm() / two_m;
        const Vec e = unit(diff);
        out_cot[p] += (wpair * n_use) * e;
        out_cot[p + m] -= (wpair * n_use) * e;
      }
    }
    double fit_total = 0.0;
    for (int k = 0; k < n_use; ++k) {
      const DatumView d = data[use[k]];
      expect(sims[0].size() == d.y->size(), "crps gradient: dimension mismatch");
      if (scalar) {
        const double y = (*d.y)[0];
        for (int j = 0; j < two_m; ++j) {
          const double diff = sims1[j] - y;
          fit_total += std::abs(diff);
          out_cot1[j] += wfit * sign_of(diff);
        }
      } else {
        for (int j = 0; j < two_m; ++j) {
          const Vec diff = sims[j] - *d.y;
          fit_total += diff.norm();
          out_cot[j] += wfit * unit(diff);
        }
      }
    }
    value = -fit_total / (static_cast<double>(two_m) * n_use) + pair;
    for (int j = 0; j < two_m; ++j) {
      if (scalar) out_cot[j][0] = out_cot1[j];
      est.grad += q->pathwise_jvp(
          batch.u[j], model.sim->dsim_dtheta(thetas[j], batch.sim_eps[j], nullptr, out_cot[j]));
    }
  } else {
    std::vector<double> out_cot1(scalar ? two_m : 0);
    for (int k = 0; k < n_use; ++k) {
      const DatumView d = data[use[k]];
      detail::simulate_all(model, thetas, batch, &d, sims);
      expect(sims[0].size() == d.y->size(), "crps gradient: dimension mismatch");
      std::vector<Vec> out_cot(two_m, Vec::Zero(sims[0].size()));
      double fit = 0.0, pair = 0.0;
      if (scalar) {
        for (int j = 0; j < two_m; ++j) sims1[j] = sims[j][0];
        std::fill(out_cot1.begin(), out_cot1.end(), 0.0);
        const double y = (*d.y)[0];
        for (int j = 0; j < two_m; ++j) {
          const double diff = sims1[j] - y;
          fit += std::abs(diff);
          out_cot1[j] += wfit * sign_of(diff);
        }
        for (int p = 0; p < m; ++p) {
          const double diff = sims1[p] - sims1[p + m];
          pair += std::abs(diff);
          const double e = sign_of(diff);
          out_cot1[p] += wpair * e;
          out_cot1[p + m] -= wpair * e;
        }
        for (int j = 0; j < two_m; ++j) out_cot[j][0] = out_cot1[j];
      } else {
        for (int j = 0; j < two_m; ++j) {
          const Vec diff = sims[j] - *d.y;
          fit += diff.norm();
          out_cot[j] += wfit * unit(diff);
        }
        for (int p = 0; p < m; ++p) {
          const Vec diff = sims[p] - sims[p + m];
          pair += diff.norm();
          const Vec e = unit(diff);
          out_cot[p] += wpair * e;
          out_cot[p + m] -= wpair * e;
        }
      }
      value += -fit / two_m + pair / two_m;
      for (int j = 0; j < two_m; ++j)
        theta_cot[j] += model.sim->dsim_dtheta(thetas[j], batch.sim_eps[j], &d, out_cot[j]);
    }
    for (int j = 0; j < two_m; ++j) est.grad += q->pathwise_jvp(batch.u[j], theta_cot[j]);
    value /= n_use;
  }
  est.value = value;
  return est;
}

//! Central finite differences of a deterministic objective; the oracle every
//! stochastic estimator is checked against on a frozen batch.
inline GradientEstimate finite_difference_gradient(const std::function<double(const Vec&)>& f,
                                                   const Vec& phi, double h) {
  expect(h > 0.0, "finite differences: h must be positive");
  GradientEstimate est;
  est.estimator = EstimatorKind::FiniteDiff;
  est.grad = Vec::Zero(phi.size());
  Vec probe = phi;
  for (int k = 0; k < phi.size(); ++k) {
    probe[k] = phi[k] + h;
    const double up = f(probe);
    probe[k] = phi[k] - h;
    const double dn = f(probe);
    probe[k] = phi[k];
    expect(std::isfinite(up) && std::isfinite(dn),
           "finite differences: non-finite objective at probe point");
    est.grad[k] = (up - dn) / (2.0 * h);
  }
  return est;
}

inline GradientEstimate score_gradient(EstimatorKind kind, const Model& model,
                                       const Family& family, const Vec& phi, const Dataset& data,
                                       std::span<const int> idx, const McBatch& batch) {
  switch (kind) {
    case EstimatorKind::LogReparam:
      return grad_log_reparam(model, family, phi, data, idx, batch);
    case EstimatorKind::LogRejection:
      return grad_log_rejection(model, family, phi, data, idx, batch);
    case EstimatorKind::Quadratic:
      return grad_quadratic(model, family, phi, data, idx, batch);
    case EstimatorKind::CrpsPathwise:
      return grad_crps(model, family, phi, data, idx, batch);
    case EstimatorKind::FiniteDiff: break;
  }
  throw ContractError("score_gradient: not a stochastic estimator");
}

}  // namespace pvi
