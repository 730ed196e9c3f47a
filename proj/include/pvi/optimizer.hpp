#pragma once

#include "pvi/common.hpp"
#include "pvi/gradients.hpp"
#include "pvi/regularizers.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace pvi {

enum class Algorithm { Rmsprop, Adam };

struct Schedule {
  enum class Kind { Constant, StepDecay, WarmupCosine };
  Kind kind = Kind::Constant;
  double lr = 1e-3;          // Constant / StepDecay base rate
  double factor = 0.1;       // StepDecay multiplier
  int at_iteration = 0;      // StepDecay drop point
  double peak_lr = 1e-3;     // WarmupCosine
  double floor_lr = 1e-4;
  int warmup = 0;
  int total = 0;

  void validate() const {
    switch (kind) {
      case Kind::Constant: expect(lr > 0.0, "schedule: lr must be positive"); break;
      case Kind::StepDecay:
        expect(lr > 0.0 && factor > 0.0 && at_iteration >= 0, "schedule: bad step decay");
        break;
      case Kind::WarmupCosine:
        expect(peak_lr > 0.0 && floor_lr > 0.0 && warmup >= 0 && warmup < total,
               "schedule: warmup must precede total");
        break;
    }
  }
};

//! Learning rate at iteration t: linear ramp to the peak over the warmup
//! steps, then cosine annealing to the floor.
inline double lr_at(const Schedule& s, int t) {
  s.validate();
  switch (s.kind) {
    case Schedule::Kind::Constant:
      expect(t >= 0, "lr_at: t out of range");
      return s.lr;
    case Schedule::Kind::StepDecay:
      expect(t >= 0, "lr_at: t out of range");
      return t < s.at_iteration ? s.lr : s.lr * s.factor;
    case Schedule::Kind::WarmupCosine: {
      expect(t >= 0 && t <= s.total, "lr_at: t out of range");
      if (t < s.warmup) return s.peak_lr * static_cast<double>(t) / s.warmup;
      const double progress = static_cast<double>(t - s.warmup) / (s.total - s.warmup);
      return s.floor_lr + (s.peak_lr - s.floor_lr) * 0.5 * (1.0 + std::cos(M_PI * progress));
    }
  }
  throw ContractError("lr_at: unknown schedule");
}

struct RmspropState {
  Vec v;
};

//! Ascent step: v <- 0.9 v + 0.1 g^2; phi <- phi + lr g / (sqrt(v) + 1e-8).
inline void rmsprop_step(RmspropState& state, Vec& phi, const Vec& grad, double lr) {
  expect(state.v.size() == grad.size() && phi.size() == grad.size(),
         "rmsprop_step: dimension mismatch");
  state.v = 0.9 * state.v + 0.1 * grad.cwiseProduct(grad);
  phi += lr * grad.cwiseQuotient((state.v.cwiseSqrt().array() + 1e-8).matrix());
}

struct AdamState {
  Vec m;
  Vec v;
  int t = 0;
};

//! Ascent step with standard bias-corrected moments (beta1 0.9, beta2 0.999).
inline void adam_step(AdamState& state, Vec& phi, const Vec& grad, double lr) {
  expect(state.m.size() == grad.size() && phi.size() == grad.size(),
         "adam_step: dimension mismatch");
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++state.t;
  state.m = b1 * state.m + (1.0 - b1) * grad;
  state.v = b2 * state.v + (1.0 - b2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(b1, state.t);
  const double c2 = 1.0 - std::pow(b2, state.t);
  const Vec mhat = state.m / c1;
  const Vec vhat = state.v / c2;
  phi += lr * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps).matrix());
}

//! Rescales g in place when its norm exceeds max_norm; returns the pre-clip norm.
inline double clip_global_norm(Vec& g, double max_norm) {
  expect(max_norm > 0.0, "clip: bound must be positive");
  const double nrm = g.norm();
  if (nrm > max_norm) g *= max_norm / nrm;
  return nrm;
}

struct OptimizerSpec {
  Algorithm algorithm = Algorithm::Rmsprop;
  Schedule schedule;
  std::optional<double> clip_global_norm;
  std::optional<double> box_bound;  // project phi onto [-B, B]^d after each step
  int iterations = 1000;
  int mc_size = 100;
  int minibatch = 0;  // 0 = full batch
  std::uint64_t seed = 1;
  int log_stride = 100;
  int snapshot_stride = 1000;

  void validate() const {
    schedule.validate();
    expect(iterations >= 1 && mc_size >= 1, "optimizer: iterations and M must be >= 1");
    expect(minibatch >= 0, "optimizer: minibatch must be >= 0");
    expect(log_stride >= 1 && snapshot_stride >= 1, "optimizer: strides must be >= 1");
    if (clip_global_norm) expect(*clip_global_norm > 0.0, "optimizer: clip must be positive");
    if (box_bound) expect(*box_bound > 0.0, "optimizer: box bound must be positive");
  }
};

struct TraceRecord {
  int iter = 0;
  double objective = 0.0;
  double reg_value = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  double accept_rate = std::numeric_limits<double>::quiet_NaN();
  int dropped = 0;
  bool flagged = false;
};

struct Snapshot {
  int iter = 0;
  Vec phi;
};

struct RunTrace {
  std::vector<TraceRecord> records;
  std::vector<Snapshot> snapshots;
  Vec final_phi;
  int flagged_iterations = 0;
  bool failed = false;
};

struct RunSpec {
  Model model;
  std::shared_ptr<const Family> family;
  Dataset data;
  ScoreKind score = ScoreKind::Log;
  EstimatorKind estimator = EstimatorKind::LogReparam;
  RegularizerSpec reg;
  OptimizerSpec opt;
  Vec init_phi;  // empty -> family default initialization
};

//! Rejects exactly the undefined (model, family, score, estimator,
//! regularizer) combinations before any iteration runs.
inline void validate_combination(const RunSpec& spec) {
  expect(spec.family != nullptr, "run: no family");
  spec.data.validate();
  spec.reg.validate();
  spec.opt.validate();
  if (spec.opt.minibatch > 0)
    expect(spec.opt.minibatch <= spec.data.size(), "run: minibatch larger than dataset");
  if (spec.family->theta_dim() != spec.model.theta_dim)
    throw ConfigError("run: family dimension " + std::to_string(spec.family->theta_dim()) +
                      " does not match model dimension " + std::to_string(spec.model.theta_dim));

  const auto need = [&](bool ok, const std::string& what) {
    if (!ok)
      throw ConfigError("run: incompatible combination: " + to_string(spec.score) + " score + " +
                        to_string(spec.estimator) + " estimator + model " + spec.model.name +
                        " (" + what + ")");
  };
  switch (spec.estimator) {
    case EstimatorKind::LogReparam:
    case EstimatorKind::LogRejection:
      need(spec.score == ScoreKind::Log, "estimator serves the log score");
      need(spec.model.has_lik(), "needs an explicit likelihood");
      break;
    case EstimatorKind::Quadratic:
      need(spec.score == ScoreKind::Quadratic, "estimator serves the quadratic score");
      need(spec.model.has_lik(), "needs an explicit likelihood");
      need(spec.model.lik->category_count(spec.data[0]) >= 2, "needs discrete outcomes");
      break;
    case EstimatorKind::CrpsPathwise:
      need(spec.score == ScoreKind::Crps || spec.score == ScoreKind::Energy,
           "estimator serves CRPS/energy");
      need(spec.model.has_sim(), "needs a simulator or likelihood sampler");
      if (spec.score == ScoreKind::Crps)
        need(spec.model.sim->out_dim() == 1, "CRPS needs scalar outcomes");
      else
        need(spec.model.sim->out_dim() > 1, "energy score needs vector outcomes");
      break;
    case EstimatorKind::FiniteDiff:
      throw ConfigError("run: finite differences is a test oracle, not a training estimator");
  }
  if (spec.estimator == EstimatorKind::LogRejection) {
    for (int i = 0; i < spec.data.size(); ++i)
      if (!spec.model.lik->lik_bound(spec.data[i]))
        throw ConfigError("run: rejection estimator needs a likelihood bound C");
  }
  if (spec.reg.kind == RegKind::PosteriorKL || spec.reg.mode == MixMode::Interpolate)
    if (!spec.model.has_lik())
      throw ConfigError("run: posterior regularization needs an explicit likelihood");
}

//! Stochastic-gradient ascent on the combined objective. Deterministic in
//! the run seed; non-finite gradients flag the iteration and skip the step.
inline RunTrace run_pvi(const RunSpec& spec) {
  validate_combination(spec);
  const Family& family = *spec.family;
  const int dim = family.layout().dim();
  Vec phi = spec.init_phi.size() > 0 ? spec.init_phi : family.init_params();
  expect(phi.size() == dim, "run: initial phi has wrong dimension");

  Rng rng(spec.opt.seed);
  RmspropState rms{Vec::Zero(dim)};
  AdamState adam{Vec::Zero(dim), Vec::Zero(dim), 0};
  RunTrace trace;
  const int n = spec.data.size();
  const bool interpolate = spec.reg.mode == MixMode::Interpolate;
  const bool want_score = !(interpolate && spec.reg.lambda == 0.0);
  const bool want_reg =
      interpolate ? spec.reg.lambda < 1.0 : spec.reg.kind != RegKind::None;

  for (int t = 0; t < spec.opt.iterations; ++t) {
    const double lr = lr_at(spec.opt.schedule, t);

    std::vector<int> idx;
    if (spec.opt.minibatch > 0 && spec.opt.minibatch < n)
      idx = rng.sample_without_replacement(n, spec.opt.minibatch);

    GradientEstimate score_est;
    score_est.grad = Vec::Zero(dim);
    score_est.value = 0.0;
    if (want_score) {
      const McBatch batch =
          make_mc_batch(family, spec.model, spec.score, spec.opt.mc_size, rng,
                        spec.estimator == EstimatorKind::LogRejection);
      score_est = score_gradient(spec.estimator, spec.model, family, phi, spec.data, idx, batch);
    }

    RegResult reg;
    reg.grad = Vec::Zero(dim);
    if (want_reg) {
      if (interpolate || spec.reg.kind == RegKind::PosteriorKL)
        reg = posterior_kl_surrogate(spec.reg, family, phi, spec.model, spec.data, idx, rng);
      else
        reg = prior_kl(spec.reg, family, phi, spec.model.prior, &rng);
    }

    Combined comb;
    if (interpolate) {
      // VI term is the data-averaged ELBO, the negative of the surrogate / n.
      comb = combine_interpolate(spec.reg.lambda, score_est.value, score_est.grad,
                                 -reg.value / n, -reg.grad / n);
    } else {
      comb = combine_additive(score_est.value, score_est.grad, spec.reg.lambda, reg.value,
                              reg.grad);
    }

    TraceRecord rec;
    rec.iter = t;
    rec.objective = comb.objective;
    rec.reg_value = reg.value;
    rec.lr = lr;
    rec.accept_rate = score_est.acceptance_rate();
    rec.dropped = score_est.dropped_data;

    const bool finite = all_finite(comb.grad) && std::isfinite(comb.objective);
    if (!finite) {
      rec.flagged = true;
      ++trace.flagged_iterations;
      rec.grad_norm = std::numeric_limits<double>::quiet_NaN();
    } else {
      Vec g = comb.grad;
      rec.grad_norm = spec.opt.clip_global_norm ? clip_global_norm(g, *spec.opt.clip_global_norm)
                                                : g.norm();
      if (spec.opt.algorithm == Algorithm::Rmsprop)
        rmsprop_step(rms, phi, g, lr);
      else
        adam_step(adam, phi, g, lr);
      if (spec.opt.box_bound)
        phi = phi.cwiseMax(-*spec.opt.box_bound).cwiseMin(*spec.opt.box_bound);
    }

    if ((t + 1) % spec.opt.log_stride == 0) trace.records.push_back(rec);
    if ((t + 1) % spec.opt.snapshot_stride == 0) trace.snapshots.push_back({t, phi});
  }
  trace.final_phi = phi;
  trace.failed = trace.flagged_iterations > spec.opt.iterations / 2;
  return trace;
}

}  // namespace pvi
