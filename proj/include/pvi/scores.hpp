#pragma once

#include "pvi/common.hpp"
#include "pvi/data.hpp"
#include "pvi/families.hpp"
#include "pvi/models.hpp"

#include <span>
#include <string>
#include <vector>

namespace pvi {

enum class ScoreKind { Log, Quadratic, Crps, Energy };

inline std::string to_string(ScoreKind k) {
  switch (k) {
    case ScoreKind::Log: return "log";
    case ScoreKind::Quadratic: return "quadratic";
    case ScoreKind::Crps: return "crps";
    case ScoreKind::Energy: return "energy";
  }
  return "?";
}

//! One Monte Carlo batch of common random numbers. The same batch is shared
//! by every datum within one evaluation; CRPS/energy batches carry 2M base
//! draws and 2M simulator noise records.
struct McBatch {
  int M = 1;
  std::vector<Vec> u;
  std::vector<Vec> sim_eps;
  std::vector<double> rej_t;

  void validate(ScoreKind kind) const {
    expect(M >= 1, "mc batch: M must be >= 1");
    const bool sim_kind = kind == ScoreKind::Crps || kind == ScoreKind::Energy;
    expect(static_cast<int>(u.size()) == (sim_kind ? 2 * M : M), "mc batch: wrong u count");
    if (sim_kind)
      expect(static_cast<int>(sim_eps.size()) == 2 * M, "mc batch: need exactly 2M simulator draws");
  }
};

inline McBatch make_mc_batch(const Family& family, const Model& model, ScoreKind kind, int M,
                             Rng& rng, bool with_rejection = false) {
  expect(M >= 1, "mc batch: M must be >= 1");
  McBatch b;
  b.M = M;
  const bool sim_kind = kind == ScoreKind::Crps || kind == ScoreKind::Energy;
  const int draws = sim_kind ? 2 * M : M;
  b.u.reserve(draws);
  for (int j = 0; j < draws; ++j) b.u.push_back(family.sample_base(rng));
  if (sim_kind) {
    expect(model.has_sim(), "mc batch: CRPS/energy needs a simulator");
    b.sim_eps.reserve(2 * M);
    for (int j = 0; j < 2 * M; ++j) b.sim_eps.push_back(model.sim->sample_noise(rng));
  }
  if (with_rejection) {
    b.rej_t.reserve(M);
    for (int j = 0; j < M; ++j) b.rej_t.push_back(rng.uniform());
  }
  return b;
}

//! Data-averaged score plus the per-datum terms behind it.
struct ScoreEval {
  double value = 0.0;
  Vec per_datum;
  int dropped = 0;  // data whose every Monte Carlo likelihood underflowed
};

namespace detail {

inline std::vector<int> all_indices(const Dataset& data) {
  std::vector<int> idx(data.size());
  for (int i = 0; i < data.size(); ++i) idx[i] = i;
  return idx;
}

inline std::vector<Vec> sampled_thetas(const FamilyEval& q, const McBatch& batch) {
  std::vector<Vec> thetas;
  thetas.reserve(batch.u.size());
  for (const Vec& u : batch.u) thetas.push_back(q.sample(u));
  return thetas;
}

}  // namespace detail

//! (1/n) sum_i log( (1/M) sum_j p(y_i | T_phi(u_j)) ), evaluated in log space.
//! A datum whose every draw underflows scores -inf and is flagged in
//! `dropped`; the mean then carries the -inf marker.
inline ScoreEval log_score_objective(const Model& model, const Family& family, const Vec& phi,
                                     const Dataset& data, std::span<const int> idx,
                                     const McBatch& batch) {
  expect(model.has_lik(), "log score: needs an explicit likelihood");
  batch.validate(ScoreKind::Log);
  const auto q = family.at(phi);
  const std::vector<Vec> thetas = detail::sampled_thetas(*q, batch);
  const std::vector<int> all = idx.empty() ? detail::all_indices(data) : std::vector<int>();
  const std::span<const int> use = idx.empty() ? all : idx;

  ScoreEval out;
  out.per_datum = Vec::Zero(static_cast<int>(use.size()));
  std::vector<double> l(batch.M);
  double sum = 0.0;
  for (size_t k = 0; k < use.size(); ++k) {
    const DatumView d = data[use[k]];
    for (int j = 0; j < batch.M; ++j) l[j] = model.lik->log_lik(thetas[j], d);
    const double lse = logsumexp(l);
    const double s = std::isfinite(lse) ? lse - std::log(static_cast<double>(batch.M)) : kNegInf;
    out.per_datum[static_cast<int>(k)] = s;
    if (!std::isfinite(s)) ++out.dropped;
    sum += s;
  }
  out.value = sum / static_cast<double>(use.size());
  return out;
}

//! Brier-style quadratic score for discrete outcome models: per datum
//! 2 P(y_i) - sum_c P(c)^2 with P the Monte Carlo predictive mass.
inline ScoreEval quadratic_score_objective(const Model& model, const Family& family,
                                           const Vec& phi, const Dataset& data,
                                           std::span<const int> idx, const McBatch& batch) {
  expect(model.has_lik(), "quadratic score: needs an explicit likelihood");
  batch.validate(ScoreKind::Quadratic);
  const auto q = family.at(phi);
  const std::vector<Vec> thetas = detail::sampled_thetas(*q, batch);
  const std::vector<int> all = idx.empty() ? detail::all_indices(data) : std::vector<int>();
  const std::span<const int> use = idx.empty() ? all : idx;

  ScoreEval out;
  out.per_datum = Vec::Zero(static_cast<int>(use.size()));
  double sum = 0.0;
  for (size_t k = 0; k < use.size(); ++k) {
    const DatumView d = data[use[k]];
    const int cats = model.lik->category_count(d);
    expect(cats >= 2, "quadratic score: model is not discrete");
    const int cy = model.lik->outcome_category(d);
    expect(cy >= 1 && cy <= cats, "quadratic score: outcome outside its category range");
    double sq = 0.0, at_y = 0.0;
    for (int c = 1; c <= cats; ++c) {
      double p = 0.0;
      for (int j = 0; j < batch.M; ++j) p += model.lik->mass(thetas[j], d, c);
      p /= batch.M;
      sq += p * p;
      if (c == cy) at_y = p;
    }
    const double s = 2.0 * at_y - sq;
    out.per_datum[static_cast<int>(k)] = s;
    sum += s;
  }
  out.value = sum / static_cast<double>(use.size());
  return out;
}

namespace detail {

//! Simulations for one datum; shared across data when the simulator ignores
//! covariates.
inline void simulate_all(const Model& model, const std::vector<Vec>& thetas, const McBatch& batch,
                         const DatumView* d, std::vector<Vec>& sims) {
  sims.resize(batch.u.size());
  for (size_t m = 0; m < batch.u.size(); ++m)
    sims[m] = model.sim->simulate(thetas[m], batch.sim_eps[m], d);
}

}  // namespace detail

//! Negative CRPS of the simulated posterior predictive, averaged over data.
//! Scalar outcomes use |a-b|; vector outcomes (the energy score) use the
//! Euclidean norm, which coincides with |.| in one dimension.
inline ScoreEval crps_objective(const Model& model, const Family& family, const Vec& phi,
                                const Dataset& data, std::span<const int> idx,
                                const McBatch& batch) {
  expect(model.has_sim(), "crps: needs a simulator (or likelihood sampler)");
  batch.validate(ScoreKind::Crps);
  const auto q = family.at(phi);
  const std::vector<Vec> thetas = detail::sampled_thetas(*q, batch);
  const std::vector<int> all = idx.empty() ? detail::all_indices(data) : std::vector<int>();
  const std::span<const int> use = idx.empty() ? all : idx;
  const int two_m = 2 * batch.M;
  const bool per_datum_sims = model.sim->uses_covariates();

  std::vector<Vec> sims;
  double shared_pair = 0.0;
  if (!per_datum_sims) {
    detail::simulate_all(model, thetas, batch, nullptr, sims);
    for (int m = 0; m < batch.M; ++m) shared_pair += (sims[m] - sims[m + batch.M]).norm();
    shared_pair /= two_m;
  }

  const bool scalar = model.sim->out_dim() == 1;
  std::vector<double> sims1(scalar ? two_m : 0);

  ScoreEval out;
  out.per_datum = Vec::Zero(static_cast<int>(use.size()));
  double sum = 0.0;
  for (size_t k = 0; k < use.size(); ++k) {
    const DatumView d = data[use[k]];
    double pair = shared_pair;
    if (per_datum_sims) {
      detail::simulate_all(model, thetas, batch, &d, sims);
      pair = 0.0;
      for (int m = 0; m < batch.M; ++m) pair += (sims[m] - sims[m + batch.M]).norm();
      pair /= two_m;
    }
    expect(sims[0].size() == d.y->size(), "crps: simulation/outcome dimension mismatch");
    double fit = 0.0;
    if (scalar) {
      if (k == 0 || per_datum_sims)
        for (int m = 0; m < two_m; ++m) sims1[m] = sims[m][0];
      const double y = (*d.y)[0];
      for (int m = 0; m < two_m; ++m) fit += std::abs(sims1[m] - y);
    } else {
      for (int m = 0; m < two_m; ++m) fit += (sims[m] - *d.y).norm();
    }
    const double s = -fit / two_m + pair;
    out.per_datum[static_cast<int>(k)] = s;
    sum += s;
  }
  out.value = sum / static_cast<double>(use.size());
  return out;
}

inline ScoreEval score_objective(ScoreKind kind, const Model& model, const Family& family,
                                 const Vec& phi, const Dataset& data, std::span<const int> idx,
                                 const McBatch& batch) {
  switch (kind) {
    case ScoreKind::Log: return log_score_objective(model, family, phi, data, idx, batch);
    case ScoreKind::Quadratic:
      return quadratic_score_objective(model, family, phi, data, idx, batch);
    case ScoreKind::Crps:
    case ScoreKind::Energy: return crps_objective(model, family, phi, data, idx, batch);
  }
  throw ContractError("score_objective: unknown kind");
}

}  // namespace pvi
