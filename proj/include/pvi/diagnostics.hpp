#pragma once

#include "pvi/common.hpp"
#include "pvi/scores.hpp"

#include <algorithm>
#include <string>
#include <variant>
#include <vector>

namespace pvi {

//! Two-sample Kolmogorov-Smirnov statistic: sup |ECDF_a - ECDF_b| over the
//! pooled sample points. Symmetric; invariant under common monotone maps.
inline double two_sample_ks(std::vector<double> a, std::vector<double> b) {
  expect(!a.empty() && !b.empty(), "two_sample_ks: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  size_t i = 0, j = 0;
  double ks = 0.0;
  while (i < a.size() || j < b.size()) {
    const double v = (i < a.size() && (j >= b.size() || a[i] <= b[j])) ? a[i] : b[j];
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    ks = std::max(ks, std::abs(i / na - j / nb));
  }
  return ks;
}

//! Per-parameter spread comparison between a PVI fit and a reference.
struct HeterogeneityRow {
  std::string name;
  double pvi_std = 0.0;
  double reference_std = 0.0;
  double ratio = 0.0;
  bool flagged = false;
};

struct HeterogeneityReport {
  std::vector<HeterogeneityRow> rows;
  double threshold = 3.0;

  bool any_flagged() const {
    for (const auto& r : rows)
      if (r.flagged) return true;
    return false;
  }
};

//! Reference spreads: either a fitted (family, phi) pair or analytic
//! posterior standard deviations.
struct FittedReference {
  const Family* family = nullptr;
  Vec phi;
};
using HeterogeneityReference = std::variant<FittedReference, Vec>;

//! Flags parameters whose PVI spread exceeds threshold x the reference
//! spread; a wide PVI margin over VI / exact Bayes marks a parameter that
//! varies in the population.
inline HeterogeneityReport heterogeneity_report(const Family& family, const Vec& phi_pvi,
                                                const HeterogeneityReference& reference,
                                                const std::vector<std::string>& names,
                                                double threshold = 3.0, int mc_draws = 10000,
                                                Rng* rng = nullptr) {
  Rng fallback(0x68657472);
  Rng* use_rng = rng ? rng : &fallback;
  const Vec pvi_std = family.theta_stds(phi_pvi, mc_draws, use_rng);
  Vec ref_std;
  if (std::holds_alternative<FittedReference>(reference)) {
    const auto& fit = std::get<FittedReference>(reference);
    expect(fit.family != nullptr, "heterogeneity: null reference family");
    ref_std = fit.family->theta_stds(fit.phi, mc_draws, use_rng);
  } else {
    ref_std = std::get<Vec>(reference);
  }
  expect(ref_std.size() == pvi_std.size(), "heterogeneity: parameter dimension mismatch");
  expect(static_cast<int>(names.size()) == pvi_std.size(),
         "heterogeneity: name list does not match dimension");

  HeterogeneityReport report;
  report.threshold = threshold;
  for (int k = 0; k < pvi_std.size(); ++k) {
    HeterogeneityRow row;
    row.name = names[k];
    row.pvi_std = pvi_std[k];
    row.reference_std = ref_std[k];
    row.ratio = ref_std[k] > 0.0 ? pvi_std[k] / ref_std[k]
                                 : std::numeric_limits<double>::infinity();
    row.flagged = row.ratio > threshold;
    report.rows.push_back(std::move(row));
  }
  return report;
}

struct ScoreTableRow {
  ScoreKind kind = ScoreKind::Log;
  double mean = 0.0;
  double se = 0.0;  // across data
  int n_test = 0;
};

struct ScoreTable {
  std::vector<ScoreTableRow> rows;
  std::vector<std::string> skipped;  // inapplicable kinds, with reason

  const ScoreTableRow* find(ScoreKind k) const {
    for (const auto& r : rows)
      if (r.kind == k) return &r;
    return nullptr;
  }
};

namespace detail {
inline ScoreTableRow summarize(ScoreKind kind, const ScoreEval& eval) {
  ScoreTableRow row;
  row.kind = kind;
  row.n_test = static_cast<int>(eval.per_datum.size());
  row.mean = eval.value;
  const double m = eval.per_datum.mean();
  const double var = (eval.per_datum.array() - m).square().sum() /
                     std::max(1, row.n_test - 1);
  row.se = std::sqrt(var / row.n_test);
  return row;
}
}  // namespace detail

//! Held-out predictive scores at large M with fresh noise, one row per
//! applicable scoring rule. Mean is per datum; the standard error is across
//! data. Deterministic in the seed.
inline ScoreTable heldout_scores(const Model& model, const Family& family, const Vec& phi,
                                 const Dataset& test_data, int mc_size, std::uint64_t seed) {
  test_data.validate();
  ScoreTable table;
  Rng rng(Rng::mix(seed, 0x6576616c));
  if (model.has_lik()) {
    const McBatch batch = make_mc_batch(family, model, ScoreKind::Log, mc_size, rng);
    table.rows.push_back(detail::summarize(
        ScoreKind::Log, log_score_objective(model, family, phi, test_data, {}, batch)));
    if (model.lik->category_count(test_data[0]) >= 2) {
      const McBatch qb = make_mc_batch(family, model, ScoreKind::Quadratic, mc_size, rng);
      table.rows.push_back(detail::summarize(
          ScoreKind::Quadratic,
          quadratic_score_objective(model, family, phi, test_data, {}, qb)));
    } else {
      table.skipped.push_back("quadratic: outcomes are not discrete");
    }
  } else {
    table.skipped.push_back("log: model has no explicit likelihood");
    table.skipped.push_back("quadratic: model has no explicit likelihood");
  }
  if (model.has_sim()) {
    const ScoreKind kind = model.sim->out_dim() == 1 ? ScoreKind::Crps : ScoreKind::Energy;
    const McBatch batch = make_mc_batch(family, model, kind, mc_size, rng);
    table.rows.push_back(detail::summarize(
        kind, crps_objective(model, family, phi, test_data, {}, batch)));
  } else {
    table.skipped.push_back("crps: model has no simulator");
  }
  return table;
}

}  // namespace pvi
