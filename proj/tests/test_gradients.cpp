#include <pvi/gradients.hpp>

#include "oracles.hpp"

#include <catch_amalgamated.hpp>

using namespace pvi;

namespace {

double rel_err(const Vec& got, const Vec& want) {
  const double scale = std::max(1e-8, want.cwiseAbs().maxCoeff());
  return (got - want).cwiseAbs().maxCoeff() / scale;
}

Vec diag_phi(double mu, double log_sigma) {
  Vec phi(2);
  phi << mu, log_sigma;
  return phi;
}

struct IdentitySim final : Simulator {
  int noise_dim() const override { return 1; }
  int out_dim() const override { return 1; }
  Vec sample_noise(Rng& rng) const override { return rng.normal_vec(1); }
  Vec simulate(const Vec& theta, const Vec&, const DatumView*) const override { return theta; }
  Vec dsim_dtheta(const Vec&, const Vec&, const DatumView*, const Vec& cot) const override {
    return cot;
  }
};

//! theta ~ q pushed through the identity: the predictive IS q.
Model identity_sim_model() {
  Model m = normal_location_model();
  m.sim = std::make_shared<IdentitySim>();
  return m;
}

Model voting_toy() {
  VotingDesign design;
  design.states = 2;
  design.ethnicities = 1;
  design.incomes = 3;
  design.trials = 2;
  design.level = VotingLevel::SharedSlope;
  return binomial_logit_model(design);
}

Dataset voting_toy_data(std::uint64_t seed) {
  VotingDesign design;
  design.states = 2;
  design.ethnicities = 1;
  design.incomes = 3;
  design.trials = 2;
  VotingTruth truth{Vec::Zero(2), Vec::Zero(1), 0.4 * Vec::Ones(2)};
  return generate_voting_data(truth, design, seed);
}

}  // namespace

TEST_CASE("finite differences: polynomial and linear exactness, KL oracle") {
  const auto quad = [](const Vec& p) { return p.squaredNorm(); };
  Vec phi(2);
  phi << 1.0, 2.0;
  const Vec g = finite_difference_gradient(quad, phi, 1e-5).grad;
  CHECK(std::abs(g[0] - 2.0) < 1e-8);
  CHECK(std::abs(g[1] - 4.0) < 1e-8);

  const auto lin = [](const Vec& p) { return 3.0 * p[0] - 0.5 * p[1]; };
  const Vec gl = finite_difference_gradient(lin, phi, 0.1).grad;
  CHECK(gl[0] == Catch::Approx(3.0).epsilon(1e-12));
  CHECK(gl[1] == Catch::Approx(-0.5).epsilon(1e-12));

  GaussianDiagFamily fam(2);
  const GaussianPrior prior = iid_prior(2, 0.3, 1.4);
  const Vec point = Vec::Constant(4, 0.25);
  const Vec analytic = fam.kl_to_gaussian_prior(point, prior, 0, nullptr).grad;
  const Vec fd = finite_difference_gradient(
                     [&](const Vec& p) {
                       return fam.kl_to_gaussian_prior(p, prior, 0, nullptr).value;
                     },
                     point, 1e-5)
                     .grad;
  CHECK(rel_err(fd, analytic) < 1e-6);

  CHECK_THROWS_AS(
      finite_difference_gradient([](const Vec& p) { return std::log(p[0]); },
                                 Vec::Constant(1, 1e-9), 1e-5),
      ContractError);
}

TEST_CASE("log-reparam estimator: frozen-batch oracle agreement on 20 points") {
  const Model m = normal_location_model();
  const GaussianDiagFamily fam(1);
  const Dataset data = generate_normal_data(12, 2.0, 3);
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const Vec phi = 0.6 * rng.normal_vec(2);
    const McBatch batch = make_mc_batch(fam, m, ScoreKind::Log, 25, rng);
    const GradientEstimate est = grad_log_reparam(m, fam, phi, data, {}, batch);
    const Vec fd = finite_difference_gradient(
                       [&](const Vec& p) {
                         return log_score_objective(m, fam, p, data, {}, batch).value;
                       },
                       phi, 1e-5)
                       .grad;
    INFO("rep " << rep);
    CHECK(rel_err(est.grad, fd) < 1e-4);
    CHECK(est.value == Catch::Approx(log_score_objective(m, fam, phi, data, {}, batch).value));
  }
}

TEST_CASE("log-reparam estimator: dense family and regression model") {
  const Model m = linear_regression_model(3, 0.9);
  const GaussianDenseFamily fam(3);
  const Dataset data = generate_misspec_regression(10, 3, make_misspec_grid(3, 2, 0.3, 7), 9);
  Rng rng(11);
  for (int rep = 0; rep < 10; ++rep) {
    const Vec phi = 0.4 * rng.normal_vec(fam.layout().dim());
    const McBatch batch = make_mc_batch(fam, m, ScoreKind::Log, 20, rng);
    const GradientEstimate est = grad_log_reparam(m, fam, phi, data, {}, batch);
    const Vec fd = finite_difference_gradient(
                       [&](const Vec& p) {
                         return log_score_objective(m, fam, p, data, {}, batch).value;
                       },
                       phi, 1e-5)
                       .grad;
    INFO("rep " << rep);
    CHECK(rel_err(est.grad, fd) < 1e-4);
  }
}

TEST_CASE("log-reparam estimator: symmetric optimum has zero mean gradient") {
  const Model m = normal_location_model();
  const GaussianDiagFamily fam(1);
  Dataset data;
  data.outcomes = {Vec::Zero(1)};
  Rng rng(13);
  const McBatch batch = make_mc_batch(fam, m, ScoreKind::Log, 10000, rng);
  const GradientEstimate est = grad_log_reparam(m, fam, diag_phi(0.0, 0.0), data, {}, batch);
  // mu-gradient is symmetric around zero; 4 standard errors at M = 1e4
  CHECK(std::abs(est.grad[0]) < 4.0 * 0.5 / std::sqrt(10000.0));
}

TEST_CASE("log-reparam estimator: replication mean near the analytic gradient") {
  const Model m = normal_location_model();
  const GaussianDiagFamily fam(1);
  Dataset data;
  data.outcomes = {Vec::Constant(1, 1.0)};
  const Vec phi = diag_phi(0.0, 0.0);
  // predictive N(mu, sqrt(1 + sigma^2)); d/dmu log N(1 | 0, sqrt(2)) = 0.5
  const int reps = 200;
  Rng rng(17);
  std::vector<double> mu_grads;
  for (int r = 0; r < reps; ++r) {
    const McBatch batch = make_mc_batch(fam, m, ScoreKind::Log, 2000, rng);
    mu_grads.push_back(grad_log_reparam(m, fam, phi, data, {}, batch).grad[0]);
  }
  const auto mm = oracle::moments(mu_grads);
  CHECK(std::abs(mm.mean - 0.5) < 3.0 * mm.se);
}

TEST_CASE("log-reparam estimator: self-normalization bias shrinks with M") {
  const Model m = normal_location_model();
  const GaussianDiagFamily fam(1);
  Dataset data;
  data.outcomes = {Vec::Constant(1, 2.0)};
  const Vec phi = diag_phi(0.0, 0.0);
  const double analytic = 2.0 / 2.0;  // (y - mu) / (1 + sigma^2)
  Rng rng(19);
  const auto mean_bias = [&](int M, int reps) {
    double acc = 0.0;
    for (int r = 0; r < reps; ++r) {
      const McBatch batch = make_mc_batch(fam, m, ScoreKind::Log, M, rng);
      acc += grad_log_reparam(m, fam, phi, data, {}, batch).grad[0] - analytic;
    }
    return acc / reps;
  };
  const double bias_small = mean_bias(100, 2000);
  const double bias_large = mean_bias(10000, 200);
  CHECK(std::abs(bias_large) < std::abs(bias_small));
}

TEST_CASE("rejection estimator: acceptance rate matches the conjugate oracle") {
  const Model m = normal_location_model();
  const GaussianDiagFamily fam(1);
  Dataset data;
  data.outcomes = {Vec::Zero(1)};
  Rng rng(23);
  const McBatch batch = make_mc_batch(fam, m, ScoreKind::Log, 100000, rng, true);
  const GradientEstimate est =
      grad_log_rejection(m, fam, diag_phi(0.0, 0.0), data, {}, batch);
  // E_q p(0|theta) / C = N(0 | 0, sqrt(2)) sqrt(2 pi) = 1 / sqrt(2)
  CHECK(std::abs(est.acceptance_rate() - 1.0 / std::sqrt(2.0)) < 0.005);
}

TEST_CASE("rejection estimator: frozen-acceptance oracle agreement") {
  const Model m = normal_location_model();
  const GaussianDiagFamily fam(1);
  const Dataset data = generate_normal_data(8, 2.0, 29);
  Rng rng(31);
  for (int rep = 0; rep < 20; ++rep) {
    const Vec phi = 0.5 * rng.normal_vec(2);
    const McBatch batch = make_mc_batch(fam, m, ScoreKind::Log, 40, rng, true);
    const GradientEstimate est = grad_log_rejection(m, fam, phi, data, {}, batch);

    // recompute the acceptance pattern, freeze it and the theta draws, and
    // differentiate the accepted-score surrogate in phi alone
    const auto q = fam.at(phi);
    std::vector<Vec> thetas;
    for (const Vec& u : batch.u) thetas.push_back(q->sample(u));
    std::vector<std::vector<int>> accepted(data.size());
    for (int i = 0; i < data.size(); ++i) {
      const double c = *m.lik->lik_bound(data[i]);
      for (int j = 0; j < batch.M; ++j)
        if (batch.rej_t[j] < std::exp(m.lik->log_lik(thetas[j], data[i])) / c)
          accepted[i].push_back(j);
    }
    const auto surrogate = [&](const Vec& p) {
      double total = 0.0;
      int kept = 0;
      for (int i = 0; i < data.size(); ++i) {
        if (accepted[i].empty()) continue;
        ++kept;
        double s = 0.0;
        for (int j : accepted[i]) s += fam.log_density(p, thetas[j]);
        total += s / accepted[i].size();
      }
      return total / kept;
    };
    const Vec fd = finite_difference_gradient(surrogate, phi, 1e-5).grad;
    INFO("rep " << rep);
    CHECK(rel_err(est.grad, fd) < 1e-4);
  }
}

TEST_CASE("rejection estimator: unbiased at M in {1, 10, 100}") {
  const Model m = normal_location_model();
  const GaussianDiagFamily fam(1);
  Dataset data;
  data.outcomes = {Vec::Constant(1, 1.0)};
  const Vec phi = diag_phi(0.0, 0.0);
  // analytic gradient of log N(1 | mu, sqrt(1+sigma^2)) at mu=0, log sigma=0
  const double dmu = 0.5;
  const double dlogsigma = 1.0 * (1.0 / 4.0 - 1.0 / 2.0);
  Rng rng(37);
  for (const int M : {1, 10, 100}) {
    std::vector<double> g0, g1;
    const int reps = M == 1 ? 4000 : 1000;
    for (int r = 0; r < reps; ++r) {
      const McBatch batch = make_mc_batch(fam, m, ScoreKind::Log, M, rng, true);
      const GradientEstimate est = grad_log_rejection(m, fam, phi, data, {}, batch);
      if (est.dropped_data > 0) continue;  // no acceptance: datum excluded this round
      g0.push_back(est.grad[0]);
      g1.push_back(est.grad[1]);
    }
    const auto m0 = oracle::moments(g0);
    const auto m1 = oracle::moments(g1);
    INFO("M = " << M << " mean " << m0.mean << " se " << m0.se);
    CHECK(std::abs(m0.mean - dmu) < 3.0 * m0.se);
    CHECK(std::abs(m1.mean - dlogsigma) < 3.0 * m1.se);
  }
}

TEST_CASE("rejection estimator: bound violations and missing bounds error out") {
  Model m = normal_location_model();
  const GaussianDiagFamily fam(1);
  Dataset data;
  data.outcomes = {Vec::Zero(1)};
  Rng rng(41);
  const McBatch batch = make_mc_batch(fam, m, ScoreKind::Log, 8, rng, true);

  struct NoBound : Likelihood {
    double log_lik(const Vec& t, const DatumView& d) const override {
      return normal_logpdf(d.scalar_y(), t[0], 1.0);
    }
    Vec dloglik_dtheta(const Vec& t, const DatumView& d) const override {
      return Vec::Constant(1, d.scalar_y() - t[0]);
    }
  };
  m.lik = std::make_shared<NoBound>();
  CHECK_THROWS_AS(grad_log_rejection(m, fam, diag_phi(0, 0), data, {}, batch), ConfigError);

  struct BadBound final : NoBound {
    std::optional<double> lik_bound(const DatumView&) const override { return 1e-6; }
  };
  m.lik = std::make_shared<BadBound>();
  CHECK_THROWS_AS(grad_log_rejection(m, fam, diag_phi(0, 0), data, {}, batch), RuntimeFailure);
}

TEST_CASE("quadratic estimator: frozen-batch oracle agreement on 20 points") {
  const Model m = voting_toy();
  const GaussianDiagFamily fam(m.theta_dim);
  const Dataset data = voting_toy_data(43);
  Rng rng(47);
  for (int rep = 0; rep < 20; ++rep) {
    const Vec phi = 0.5 * rng.normal_vec(fam.layout().dim());
    const McBatch batch = make_mc_batch(fam, m, ScoreKind::Quadratic, 15, rng);
    const GradientEstimate est = grad_quadratic(m, fam, phi, data, {}, batch);
    const Vec fd = finite_difference_gradient(
                       [&](const Vec& p) {
                         return quadratic_score_objective(m, fam, p, data, {}, batch).value;
                       },
                       phi, 1e-5)
                       .grad;
    INFO("rep " << rep);
    CHECK(rel_err(est.grad, fd) < 1e-4);
  }
}

TEST_CASE("quadratic estimator: symmetric two-category optimum and mass-pull sign") {
  // one Bernoulli cell, balanced outcomes: the optimum is eta = 0
  VotingDesign design;
  design.states = 1;
  design.ethnicities = 1;
  design.incomes = 1;
  design.trials = 1;
  design.level = VotingLevel::StateOnly;
  const Model m = binomial_logit_model(design);
  const GaussianDiagFamily fam(1);
  Dataset data;
  Vec cov(3);
  cov << 0, 0, 0.0;
  for (int i = 0; i < 2; ++i) {
    data.outcomes.push_back(Vec::Constant(1, static_cast<double>(i)));
    data.covariates.push_back(cov);
    data.trial_counts.push_back(1);
  }
  Rng rng(53);
  const McBatch big = make_mc_batch(fam, m, ScoreKind::Quadratic, 20000, rng);
  const GradientEstimate at_opt = grad_quadratic(m, fam, diag_phi(0.0, -3.0), data, {}, big);
  CHECK(std::abs(at_opt.grad[0]) < 4.0 * 0.5 / std::sqrt(20000.0));

  // all-ones data below the optimum: the gradient pushes eta (via mu) upward
  Dataset ones;
  ones.outcomes = {Vec::Constant(1, 1.0)};
  ones.covariates = {cov};
  ones.trial_counts = {1};
  const McBatch b2 = make_mc_batch(fam, m, ScoreKind::Quadratic, 20000, rng);
  const GradientEstimate push = grad_quadratic(m, fam, diag_phi(0.0, -3.0), ones, {}, b2);
  CHECK(push.grad[0] > 0.0);
}

TEST_CASE("crps estimator: frozen-batch oracle, shared and per-datum simulations") {
  Rng rng(59);

  SECTION("sum-of-squares simulator with a Gaussian family") {
    const Model m = sum_of_squares_simulator(4, 2);
    const GaussianDiagFamily fam(2);
    std::vector<Vec> betas;
    for (int i = 0; i < 10; ++i) betas.push_back(rng.normal_vec(2));
    const Dataset data = generate_simulator_data(*m.sim, betas, 61);
    for (int rep = 0; rep < 20; ++rep) {
      const Vec phi = 0.4 * rng.normal_vec(fam.layout().dim());
      const McBatch batch = make_mc_batch(fam, m, ScoreKind::Crps, 12, rng);
      const GradientEstimate est = grad_crps(m, fam, phi, data, {}, batch);
      const Vec fd = finite_difference_gradient(
                         [&](const Vec& p) {
                           return crps_objective(m, fam, p, data, {}, batch).value;
                         },
                         phi, 1e-6)
                         .grad;
      INFO("rep " << rep);
      CHECK(rel_err(est.grad, fd) < 1e-3);
      CHECK(est.value ==
            Catch::Approx(crps_objective(m, fam, phi, data, {}, batch).value));
    }
  }

  SECTION("covariate-dependent regression sampler") {
    const Model m = linear_regression_model(2, 0.8);
    const GaussianDiagFamily fam(2);
    const Dataset data = generate_misspec_regression(8, 2, make_misspec_grid(2, 2, 0.5, 3), 67);
    for (int rep = 0; rep < 10; ++rep) {
      const Vec phi = 0.4 * rng.normal_vec(fam.layout().dim());
      const McBatch batch = make_mc_batch(fam, m, ScoreKind::Crps, 10, rng);
      const GradientEstimate est = grad_crps(m, fam, phi, data, {}, batch);
      const Vec fd = finite_difference_gradient(
                         [&](const Vec& p) {
                           return crps_objective(m, fam, p, data, {}, batch).value;
                         },
                         phi, 1e-6)
                         .grad;
      INFO("rep " << rep);
      CHECK(rel_err(est.grad, fd) < 1e-3);
    }
  }

  SECTION("spline flow through the sum-of-squares simulator") {
    const Model m = sum_of_squares_simulator(4, 1);
    const Spline1dFamily fam(8, 5.0);
    std::vector<Vec> betas;
    for (int i = 0; i < 6; ++i) betas.push_back(Vec::Constant(1, 0.5 + 0.1 * i));
    const Dataset data = generate_simulator_data(*m.sim, betas, 71);
    for (int rep = 0; rep < 10; ++rep) {
      const Vec phi = 0.3 * rng.normal_vec(fam.layout().dim());
      const McBatch batch = make_mc_batch(fam, m, ScoreKind::Crps, 8, rng);
      const GradientEstimate est = grad_crps(m, fam, phi, data, {}, batch);
      const Vec fd = finite_difference_gradient(
                         [&](const Vec& p) {
                           return crps_objective(m, fam, p, data, {}, batch).value;
                         },
                         phi, 1e-6)
                         .grad;
      INFO("rep " << rep);
      CHECK(rel_err(est.grad, fd) < 1e-3);
    }
  }
}

TEST_CASE("energy score: vector outcomes, gradient matches finite differences") {
  // 2-d location simulator: y = theta + noise
  struct Location2Sim final : Simulator {
    int noise_dim() const override { return 2; }
    int out_dim() const override { return 2; }
    Vec sample_noise(Rng& rng) const override { return rng.normal_vec(2); }
    Vec simulate(const Vec& theta, const Vec& eps, const DatumView*) const override {
      return theta + 0.5 * eps;
    }
    Vec dsim_dtheta(const Vec&, const Vec&, const DatumView*, const Vec& cot) const override {
      return cot;
    }
  };
  Model m;
  m.name = "location2";
  m.theta_dim = 2;
  m.prior = iid_prior(2, 0.0, 1.0);
  m.theta_names = {"a", "b"};
  m.sim = std::make_shared<Location2Sim>();

  const GaussianDiagFamily fam(2);
  Rng rng(103);
  Dataset data;
  for (int i = 0; i < 6; ++i) data.outcomes.push_back(rng.normal_vec(2));

  for (int rep = 0; rep < 10; ++rep) {
    const Vec phi = 0.4 * rng.normal_vec(fam.layout().dim());
    const McBatch batch = make_mc_batch(fam, m, ScoreKind::Energy, 10, rng);
    const GradientEstimate est = grad_crps(m, fam, phi, data, {}, batch);
    const Vec fd = finite_difference_gradient(
                       [&](const Vec& p) {
                         return crps_objective(m, fam, p, data, {}, batch).value;
                       },
                       phi, 1e-6)
                       .grad;
    INFO("rep " << rep);
    CHECK(rel_err(est.grad, fd) < 1e-3);
  }

  // degenerate predictive: score is the negative Euclidean error
  Vec point(4);
  point << 0.3, -0.7, -40.0, -40.0;
  Rng rng2(107);
  const McBatch batch = make_mc_batch(fam, m, ScoreKind::Energy, 20, rng2);
  Model noise_free = m;
  struct Ident2 final : Simulator {
    int noise_dim() const override { return 2; }
    int out_dim() const override { return 2; }
    Vec sample_noise(Rng& rng) const override { return rng.normal_vec(2); }
    Vec simulate(const Vec& theta, const Vec&, const DatumView*) const override { return theta; }
    Vec dsim_dtheta(const Vec&, const Vec&, const DatumView*, const Vec& cot) const override {
      return cot;
    }
  };
  noise_free.sim = std::make_shared<Ident2>();
  Dataset one;
  Vec target(2);
  target << 1.0, 1.0;
  one.outcomes = {target};
  const double got = crps_objective(noise_free, fam, point, one, {}, batch).value;
  Vec mu(2);
  mu << 0.3, -0.7;
  CHECK(got == Catch::Approx(-(mu - target).norm()).epsilon(1e-9));
}

TEST_CASE("crps estimator: point-mass family is exact at M = 1") {
  const Model m = identity_sim_model();
  const GaussianDiagFamily fam(1);
  Dataset data;
  data.outcomes = {Vec::Constant(1, 0.4)};
  Rng rng(73);
  const McBatch batch = make_mc_batch(fam, m, ScoreKind::Crps, 1, rng);
  const double x = 1.2;
  const GradientEstimate est = grad_crps(m, fam, diag_phi(x, -40.0), data, {}, batch);
  // gradient of -|x - y| in mu: -sign(x - y)
  CHECK(est.grad[0] == Catch::Approx(-1.0));
}

TEST_CASE("crps estimator: unbiased at M in {10, 100} on the Gaussian oracle") {
  const Model m = identity_sim_model();
  const GaussianDiagFamily fam(1);
  const Vec phi = diag_phi(0.0, 0.0);  // predictive is exactly N(0, 1)
  Rng rng(79);
  for (const int M : {10, 100}) {
    for (const double y : {0.0, 1.0}) {
      Dataset data;
      data.outcomes = {Vec::Constant(1, y)};
      std::vector<double> grads;
      for (int r = 0; r < 500; ++r) {
        const McBatch batch = make_mc_batch(fam, m, ScoreKind::Crps, M, rng);
        grads.push_back(grad_crps(m, fam, phi, data, {}, batch).grad[0]);
      }
      const auto mm = oracle::moments(grads);
      const double want = oracle::neg_crps_dmu(0.0, 1.0, y);
      INFO("M = " << M << " y = " << y);
      CHECK(std::abs(mm.mean - want) < 3.0 * mm.se);
    }
  }
}

TEST_CASE("estimators are bit-reproducible given (seed, M, phi, data)") {
  const Model m = normal_location_model();
  const GaussianDiagFamily fam(1);
  const Dataset data = generate_normal_data(30, 2.0, 83);
  const Vec phi = diag_phi(0.2, -0.3);
  {
    Rng r1(89), r2(89);
    const McBatch b1 = make_mc_batch(fam, m, ScoreKind::Log, 16, r1, true);
    const McBatch b2 = make_mc_batch(fam, m, ScoreKind::Log, 16, r2, true);
    CHECK((grad_log_reparam(m, fam, phi, data, {}, b1).grad -
           grad_log_reparam(m, fam, phi, data, {}, b2).grad)
              .norm() == 0.0);
    CHECK((grad_log_rejection(m, fam, phi, data, {}, b1).grad -
           grad_log_rejection(m, fam, phi, data, {}, b2).grad)
              .norm() == 0.0);
  }
  {
    Rng r1(97), r2(97);
    const McBatch b1 = make_mc_batch(fam, m, ScoreKind::Crps, 16, r1);
    const McBatch b2 = make_mc_batch(fam, m, ScoreKind::Crps, 16, r2);
    CHECK((grad_crps(m, fam, phi, data, {}, b1).grad -
           grad_crps(m, fam, phi, data, {}, b2).grad)
              .norm() == 0.0);
  }
}

TEST_CASE("quadratic estimator: bias shrinks with M against a quadrature oracle") {
  // Bernoulli cell with q over the logit: gradients of the exact objective
  // come from differentiating the Gaussian density under the integral.
  VotingDesign design;
  design.states = 1;
  design.ethnicities = 1;
  design.incomes = 1;
  design.trials = 1;
  design.level = VotingLevel::StateOnly;
  const Model m = binomial_logit_model(design);
  const GaussianDiagFamily fam(1);
  Dataset data;
  Vec cov(3);
  cov << 0, 0, 0.0;
  data.outcomes = {Vec::Constant(1, 1.0)};
  data.covariates = {cov};
  data.trial_counts = {1};

  const double mu = 0.3, ls = -0.2, sigma = std::exp(ls);
  const Vec phi = diag_phi(mu, ls);
  // m1(phi) = E_q logistic(theta); d m1 / d mu via quadrature
  const auto m1 = [&](double mm) {
    return oracle::integrate(
        [&](double th) { return logistic(th) * oracle::normal_pdf(th, mm, sigma); },
        {mm - 12 * sigma, mm, mm + 12 * sigma});
  };
  const double p1 = m1(mu);
  const double dp1 = oracle::integrate(
      [&](double th) {
        return logistic(th) * oracle::normal_pdf(th, mu, sigma) * (th - mu) / (sigma * sigma);
      },
      {mu - 12 * sigma, mu, mu + 12 * sigma});
  // objective = 2 m1 - m1^2 - (1 - m1)^2 ; d/dmu = (2 - 4 m1 + 2) ... expand:
  const double analytic_dmu = 2.0 * dp1 - 2.0 * p1 * dp1 + 2.0 * (1.0 - p1) * dp1;

  Rng rng(101);
  const auto mean_bias = [&](int M, int reps) {
    double acc = 0.0;
    for (int r = 0; r < reps; ++r) {
      const McBatch batch = make_mc_batch(fam, m, ScoreKind::Quadratic, M, rng);
      acc += grad_quadratic(m, fam, phi, data, {}, batch).grad[0] - analytic_dmu;
    }
    return acc / reps;
  };
  const double bias_small = mean_bias(100, 2000);
  const double bias_large = mean_bias(10000, 200);
  CHECK(std::abs(bias_large) < std::abs(bias_small));
}
