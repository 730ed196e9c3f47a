#pragma once

#include "pvi/common.hpp"
#include "pvi/data.hpp"
#include "pvi/families.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace pvi {

//! Explicit likelihood: pointwise density/mass and its theta-gradient.
class Likelihood {
 public:
  virtual ~Likelihood() = default;
  virtual double log_lik(const Vec& theta, const DatumView& d) const = 0;
  virtual Vec dloglik_dtheta(const Vec& theta, const DatumView& d) const = 0;
  //! Pointwise likelihood bound sup_theta p(y|theta), when known.
  virtual std::optional<double> lik_bound(const DatumView&) const { return std::nullopt; }
  //! Number of outcome categories for discrete models (0 = not discrete).
  virtual int category_count(const DatumView&) const { return 0; }
  //! Category index in 1..I of the observed outcome.
  virtual int outcome_category(const DatumView&) const {
    throw ContractError("outcome_category: model is not discrete");
  }
  //! Predictive mass f(theta, c) for category c in 1..I.
  virtual double mass(const Vec&, const DatumView&, int) const {
    throw ContractError("mass: model is not discrete");
  }
  virtual Vec dmass_dtheta(const Vec&, const DatumView&, int) const {
    throw ContractError("dmass_dtheta: model is not discrete");
  }
};

//! Differentiable simulator y = f(theta, eps) with a reparameterized noise
//! record eps; deterministic given (theta, eps).
class Simulator {
 public:
  virtual ~Simulator() = default;
  virtual int noise_dim() const = 0;
  virtual int out_dim() const = 0;
  virtual Vec sample_noise(Rng& rng) const = 0;
  virtual Vec simulate(const Vec& theta, const Vec& eps, const DatumView* d) const = 0;
  //! cotangent^T d f(theta, eps) / d theta.
  virtual Vec dsim_dtheta(const Vec& theta, const Vec& eps, const DatumView* d,
                          const Vec& cotangent) const = 0;
  virtual bool uses_covariates() const { return false; }
};

//! A statistical model: prior plus at least one of {explicit likelihood,
//! differentiable simulator}.
struct Model {
  std::string name;
  int theta_dim = 0;
  GaussianPrior prior;
  std::vector<std::string> theta_names;
  std::shared_ptr<const Likelihood> lik;
  std::shared_ptr<const Simulator> sim;

  bool has_lik() const { return lik != nullptr; }
  bool has_sim() const { return sim != nullptr; }
};

inline GaussianPrior iid_prior(int dim, double mean, double scale) {
  return GaussianPrior{Vec::Constant(dim, mean), Vec::Constant(dim, scale)};
}

// ---------------------------------------------------------------------------
// Normal location model: y | theta ~ normal(theta, 1)
// ---------------------------------------------------------------------------

class NormalLocationLik final : public Likelihood {
 public:
  double log_lik(const Vec& theta, const DatumView& d) const override {
    return normal_logpdf(d.scalar_y(), theta[0], 1.0);
  }
  Vec dloglik_dtheta(const Vec& theta, const DatumView& d) const override {
    return Vec::Constant(1, d.scalar_y() - theta[0]);
  }
  std::optional<double> lik_bound(const DatumView&) const override {
    return 1.0 / std::sqrt(2.0 * M_PI);
  }
};

class NormalLocationSim final : public Simulator {
 public:
  int noise_dim() const override { return 1; }
  int out_dim() const override { return 1; }
  Vec sample_noise(Rng& rng) const override { return rng.normal_vec(1); }
  Vec simulate(const Vec& theta, const Vec& eps, const DatumView*) const override {
    return Vec::Constant(1, theta[0] + eps[0]);
  }
  Vec dsim_dtheta(const Vec&, const Vec&, const DatumView*, const Vec& cot) const override {
    return cot;
  }
};

inline Model normal_location_model(double prior_mean = 0.0, double prior_scale = 1.0) {
  Model m;
  m.name = "normal_location";
  m.theta_dim = 1;
  m.prior = iid_prior(1, prior_mean, prior_scale);
  m.theta_names = {"theta"};
  m.lik = std::make_shared<NormalLocationLik>();
  m.sim = std::make_shared<NormalLocationSim>();
  return m;
}

inline Dataset generate_normal_data(int n, double sigma_true, std::uint64_t seed) {
  expect(n >= 1 && sigma_true > 0.0, "generate_normal_data: need n >= 1, sigma > 0");
  Rng rng(Rng::mix(seed, 0x6e6f726d));
  Dataset data;
  data.outcomes.reserve(n);
  for (int i = 0; i < n; ++i)
    data.outcomes.push_back(Vec::Constant(1, sigma_true * rng.normal()));
  return data;
}

// ---------------------------------------------------------------------------
// Binomial logit regression over survey cells
// ---------------------------------------------------------------------------

enum class VotingLevel { StateOnly, StateEthnicity, SharedSlope, PerStateSlope };

struct VotingDesign {
  int states = 51;
  int ethnicities = 4;
  int incomes = 5;
  int trials = 100;
  VotingLevel level = VotingLevel::PerStateSlope;

  int cell_count() const { return states * ethnicities * incomes; }
  //! Income levels enter centered so intercepts and slopes decouple.
  double income_value(int level_1based) const {
    return static_cast<double>(level_1based) - 0.5 * (incomes + 1);
  }
  int theta_dim() const {
    switch (level) {
      case VotingLevel::StateOnly: return states;
      case VotingLevel::StateEthnicity: return states + ethnicities;
      case VotingLevel::SharedSlope: return states + ethnicities + 1;
      case VotingLevel::PerStateSlope: return states + ethnicities + states;
    }
    return 0;
  }
};

inline double log_binom_coeff(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

class BinomialLogitLik final : public Likelihood {
 public:
  explicit BinomialLogitLik(VotingDesign design) : d_(design) {}

  double linear_predictor(const Vec& theta, const DatumView& d) const {
    const int s = cell_state(d);
    const int e = cell_eth(d);
    const double x = (*d.x)[2];
    double eta = theta[s];
    if (d_.level == VotingLevel::StateOnly) return eta;
    eta += theta[d_.states + e];
    if (d_.level == VotingLevel::StateEthnicity) return eta;
    if (d_.level == VotingLevel::SharedSlope) return eta + theta[d_.states + d_.ethnicities] * x;
    return eta + theta[d_.states + d_.ethnicities + s] * x;
  }

  double log_lik(const Vec& theta, const DatumView& d) const override {
    return log_mass_at(theta, d, static_cast<int>(d.scalar_y()));
  }

  Vec dloglik_dtheta(const Vec& theta, const DatumView& d) const override {
    return scatter_deta(theta, d, static_cast<int>(d.scalar_y()));
  }

  std::optional<double> lik_bound(const DatumView& d) const override {
    const int n = d.trials;
    const int y = static_cast<int>(d.scalar_y());
    double lc = log_binom_coeff(n, y);
    if (y > 0) lc += y * std::log(static_cast<double>(y) / n);
    if (y < n) lc += (n - y) * std::log(1.0 - static_cast<double>(y) / n);
    return std::exp(lc);
  }

  int category_count(const DatumView& d) const override { return d.trials + 1; }

  int outcome_category(const DatumView& d) const override {
    return static_cast<int>(d.scalar_y()) + 1;  // counts 0..N map to categories 1..N+1
  }

  double mass(const Vec& theta, const DatumView& d, int c) const override {
    check_category(d, c);
    return std::exp(log_mass_at(theta, d, c - 1));
  }

  Vec dmass_dtheta(const Vec& theta, const DatumView& d, int c) const override {
    check_category(d, c);
    const int y = c - 1;
    return std::exp(log_mass_at(theta, d, y)) * scatter_deta(theta, d, y);
  }

 private:
  int cell_state(const DatumView& d) const {
    const int s = static_cast<int>((*d.x)[0]);
    expect(s >= 0 && s < d_.states, "binomial_logit: state index out of range");
    return s;
  }
  int cell_eth(const DatumView& d) const {
    const int e = static_cast<int>((*d.x)[1]);
    expect(e >= 0 && e < d_.ethnicities, "binomial_logit: ethnicity index out of range");
    return e;
  }
  void check_category(const DatumView& d, int c) const {
    expect(c >= 1 && c <= d.trials + 1, "binomial_logit: category out of range");
  }

  double log_mass_at(const Vec& theta, const DatumView& d, int y) const {
    const double eta = linear_predictor(theta, d);
    return log_binom_coeff(d.trials, y) + y * eta - d.trials * log1pexp(eta);
  }

  //! (y - N p) scattered onto the active coefficients.
  Vec scatter_deta(const Vec& theta, const DatumView& d, int y) const {
    const double eta = linear_predictor(theta, d);
    const double g = y - d.trials * logistic(eta);
    Vec out = Vec::Zero(d_.theta_dim());
    out[cell_state(d)] = g;
    if (d_.level == VotingLevel::StateOnly) return out;
    out[d_.states + cell_eth(d)] = g;
    const double x = (*d.x)[2];
    if (d_.level == VotingLevel::SharedSlope)
      out[d_.states + d_.ethnicities] = g * x;
    else if (d_.level == VotingLevel::PerStateSlope)
      out[d_.states + d_.ethnicities + cell_state(d)] = g * x;
    return out;
  }

  VotingDesign d_;
};

inline Model binomial_logit_model(const VotingDesign& design, double prior_scale = 10.0) {
  Model m;
  m.name = "binomial_logit";
  m.theta_dim = design.theta_dim();
  m.prior = iid_prior(m.theta_dim, 0.0, prior_scale);
  for (int s = 0; s < design.states; ++s) m.theta_names.push_back("state_" + std::to_string(s));
  if (design.level != VotingLevel::StateOnly)
    for (int e = 0; e < design.ethnicities; ++e)
      m.theta_names.push_back("eth_" + std::to_string(e));
  if (design.level == VotingLevel::SharedSlope) m.theta_names.push_back("slope");
  if (design.level == VotingLevel::PerStateSlope)
    for (int s = 0; s < design.states; ++s) m.theta_names.push_back("slope_" + std::to_string(s));
  m.lik = std::make_shared<BinomialLogitLik>(design);
  return m;
}

//! Ground-truth coefficient tables for the synthetic voting process.
struct VotingTruth {
  Vec state_effect;   // size = states
  Vec eth_effect;     // size = ethnicities
  Vec state_slope;    // size = states (constant table encodes a shared slope)
};

inline Dataset generate_voting_data(const VotingTruth& truth, const VotingDesign& design,
                                    std::uint64_t seed) {
  expect(truth.state_effect.size() == design.states &&
             truth.eth_effect.size() == design.ethnicities &&
             truth.state_slope.size() == design.states,
         "generate_voting_data: truth tables must match the design");
  Rng rng(Rng::mix(seed, 0x766f7465));
  Dataset data;
  for (int s = 0; s < design.states; ++s)
    for (int e = 0; e < design.ethnicities; ++e)
      for (int l = 1; l <= design.incomes; ++l) {
        const double x = design.income_value(l);
        const double eta = truth.state_effect[s] + truth.eth_effect[e] + truth.state_slope[s] * x;
        const int y = rng.binomial(design.trials, logistic(eta));
        data.outcomes.push_back(Vec::Constant(1, static_cast<double>(y)));
        Vec cov(3);
        cov << s, e, x;
        data.covariates.push_back(std::move(cov));
        data.trial_counts.push_back(design.trials);
      }
  return data;
}

// ---------------------------------------------------------------------------
// Linear regression with fixed observation noise
// ---------------------------------------------------------------------------

class LinearRegressionLik final : public Likelihood {
 public:
  LinearRegressionLik(int dim, double sigma) : dim_(dim), sigma_(sigma) {}

  double log_lik(const Vec& beta, const DatumView& d) const override {
    return normal_logpdf(d.scalar_y(), d.x->dot(beta), sigma_);
  }
  Vec dloglik_dtheta(const Vec& beta, const DatumView& d) const override {
    return (*d.x) * ((d.scalar_y() - d.x->dot(beta)) / (sigma_ * sigma_));
  }
  std::optional<double> lik_bound(const DatumView&) const override {
    return 1.0 / (std::sqrt(2.0 * M_PI) * sigma_);
  }

 private:
  int dim_;
  double sigma_;
};

class LinearRegressionSim final : public Simulator {
 public:
  explicit LinearRegressionSim(double sigma) : sigma_(sigma) {}
  int noise_dim() const override { return 1; }
  int out_dim() const override { return 1; }
  bool uses_covariates() const override { return true; }
  Vec sample_noise(Rng& rng) const override { return rng.normal_vec(1); }
  Vec simulate(const Vec& beta, const Vec& eps, const DatumView* d) const override {
    expect(d != nullptr && d->x != nullptr, "linear_regression sim: needs covariates");
    return Vec::Constant(1, d->x->dot(beta) + sigma_ * eps[0]);
  }
  Vec dsim_dtheta(const Vec&, const Vec&, const DatumView* d, const Vec& cot) const override {
    return cot[0] * (*d->x);
  }

 private:
  double sigma_;
};

inline Model linear_regression_model(int dim, double sigma = 1.0, double prior_scale = 1.0) {
  expect(dim >= 1 && sigma > 0.0, "linear_regression: need dim >= 1, sigma > 0");
  Model m;
  m.name = "linear_regression";
  m.theta_dim = dim;
  m.prior = iid_prior(dim, 0.0, prior_scale);
  for (int j = 0; j < dim; ++j) m.theta_names.push_back("beta_" + std::to_string(j));
  m.lik = std::make_shared<LinearRegressionLik>(dim, sigma);
  m.sim = std::make_shared<LinearRegressionSim>(sigma);
  return m;
}

//! Interpolated per-datum coefficient population for misspecified regression:
//! each datum uses (1-alpha) beta_0 + alpha beta_j with j uniform in 1..g.
struct MisspecGrid {
  double alpha = 0.0;
  std::vector<Vec> betas;  // beta_0 followed by beta_1..beta_g

  int groups() const { return static_cast<int>(betas.size()) - 1; }
  Vec coefficient(int group_1based) const {
    return (1.0 - alpha) * betas[0] + alpha * betas[group_1based];
  }
  void validate() const {
    expect(alpha >= 0.0 && alpha <= 1.0, "misspec grid: alpha outside [0,1]");
    expect(groups() >= 1, "misspec grid: need at least one group");
  }
};

inline MisspecGrid make_misspec_grid(int dim, int groups, double alpha, std::uint64_t seed) {
  Rng rng(Rng::mix(seed, 0x67726964));
  MisspecGrid grid;
  grid.alpha = alpha;
  for (int j = 0; j <= groups; ++j) grid.betas.push_back(rng.normal_vec(dim));
  grid.validate();
  return grid;
}

inline Dataset generate_misspec_regression(int n, int dim, const MisspecGrid& grid,
                                           std::uint64_t seed, double sigma = 1.0) {
  grid.validate();
  expect(n >= 1 && dim >= 1, "generate_misspec_regression: bad sizes");
  Rng rng(Rng::mix(seed, 0x72656772));
  Dataset data;
  for (int i = 0; i < n; ++i) {
    const int j = 1 + rng.uniform_int(grid.groups());
    const Vec beta = grid.coefficient(j);
    expect(beta.size() == dim, "generate_misspec_regression: grid dimension mismatch");
    const Vec x = rng.normal_vec(dim);
    data.outcomes.push_back(Vec::Constant(1, x.dot(beta) + sigma * rng.normal()));
    data.covariates.push_back(x);
  }
  return data;
}

// ---------------------------------------------------------------------------
// Sum-of-squares simulator (observed statistic || X beta + eps ||^2)
// ---------------------------------------------------------------------------

class SumOfSquaresSim final : public Simulator {
 public:
  SumOfSquaresSim(int rows, int dim) : rows_(rows), dim_(dim) {
    expect(rows >= 1 && dim >= 1, "sum_of_squares: need m >= 1, d >= 1");
  }

  int noise_dim() const override { return rows_ * dim_ + rows_; }
  int out_dim() const override { return 1; }

  //! eps packs the design matrix (row-major) then the observation noise.
  Vec sample_noise(Rng& rng) const override { return rng.normal_vec(noise_dim()); }

  Vec simulate(const Vec& beta, const Vec& eps, const DatumView*) const override {
    return Vec::Constant(1, residual(beta, eps).squaredNorm());
  }

  Vec dsim_dtheta(const Vec& beta, const Vec& eps, const DatumView*,
                  const Vec& cot) const override {
    const Vec r = residual(beta, eps);
    return cot[0] * 2.0 * (design(eps) * r);  // design() maps X^T, so this is 2 X^T r
  }

 private:
  Eigen::Map<const Mat> design(const Vec& eps) const {
    // row-major packing read back through a transposed column-major map
    return Eigen::Map<const Mat>(eps.data(), dim_, rows_);
  }
  Vec residual(const Vec& beta, const Vec& eps) const {
    expect(beta.size() == dim_ && eps.size() == noise_dim(), "sum_of_squares: dim mismatch");
    return design(eps).transpose() * beta + eps.tail(rows_);
  }

  int rows_;
  int dim_;
};

inline Model sum_of_squares_simulator(int rows, int dim, double prior_scale = 1.0) {
  Model m;
  m.name = "sum_of_squares";
  m.theta_dim = dim;
  m.prior = iid_prior(dim, 0.0, prior_scale);
  for (int j = 0; j < dim; ++j) m.theta_names.push_back("beta_" + std::to_string(j));
  m.sim = std::make_shared<SumOfSquaresSim>(rows, dim);
  return m;
}

//! Pushes a list of parameter draws through a simulator, one noise record per
//! datum. Used to synthesize likelihood-free datasets.
inline Dataset generate_simulator_data(const Simulator& sim, const std::vector<Vec>& thetas,
                                       std::uint64_t seed) {
  expect(!thetas.empty(), "generate_simulator_data: no parameter draws");
  expect(!sim.uses_covariates(), "generate_simulator_data: covariate simulators unsupported");
  Rng rng(Rng::mix(seed, 0x73696d64));
  Dataset data;
  for (const Vec& theta : thetas) {
    const Vec eps = sim.sample_noise(rng);
    data.outcomes.push_back(sim.simulate(theta, eps, nullptr));
  }
  return data;
}

//! Equal-weight two-component normal mixture; the bimodal populations used by
//! the likelihood-free experiments.
inline std::vector<Vec> sample_bimodal_population(int n, double center_a, double center_b,
                                                  double spread, std::uint64_t seed) {
  Rng rng(Rng::mix(seed, 0x62696d6f));
  std::vector<Vec> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double c = (rng.uniform() < 0.5) ? center_a : center_b;
    out.push_back(Vec::Constant(1, c + spread * rng.normal()));
  }
  return out;
}

}  // namespace pvi
