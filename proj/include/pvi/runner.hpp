#pragma once

#include "pvi/diagnostics.hpp"
#include "pvi/pvi.hpp"

#include <json.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace pvi {

using Json = nlohmann::ordered_json;

namespace detail {

inline double get_num(const Json& j, const std::string& key, double fallback) {
  return j.contains(key) ? j.at(key).get<double>() : fallback;
}
inline int get_int(const Json& j, const std::string& key, int fallback) {
  return j.contains(key) ? j.at(key).get<int>() : fallback;
}
inline std::string get_str(const Json& j, const std::string& key, const std::string& fallback) {
  return j.contains(key) ? j.at(key).get<std::string>() : fallback;
}
inline const Json& require(const Json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError("config: missing \"" + key + "\" in " + where);
  return j.at(key);
}

//! Non-finite doubles have no JSON representation; emit them as strings.
inline Json json_num(double v) {
  if (std::isfinite(v)) return Json(v);
  return Json(std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf"));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

inline ScoreKind parse_score(const std::string& s) {
  if (s == "log") return ScoreKind::Log;
  if (s == "quadratic") return ScoreKind::Quadratic;
  if (s == "crps") return ScoreKind::Crps;
  if (s == "energy") return ScoreKind::Energy;
  throw ConfigError("config: unknown score \"" + s + "\"");
}

inline EstimatorKind parse_estimator(const std::string& s) {
  if (s == "log_reparam") return EstimatorKind::LogReparam;
  if (s == "log_rejection") return EstimatorKind::LogRejection;
  if (s == "quadratic") return EstimatorKind::Quadratic;
  if (s == "crps_pathwise") return EstimatorKind::CrpsPathwise;
  throw ConfigError("config: unknown estimator \"" + s + "\"");
}

inline VotingLevel parse_voting_level(const std::string& s) {
  if (s == "state_only") return VotingLevel::StateOnly;
  if (s == "state_ethnicity") return VotingLevel::StateEthnicity;
  if (s == "shared_slope") return VotingLevel::SharedSlope;
  if (s == "per_state_slope") return VotingLevel::PerStateSlope;
  throw ConfigError("config: unknown voting level \"" + s + "\"");
}

inline VotingDesign parse_voting_design(const Json& j) {
  VotingDesign d;
  d.states = detail::get_int(j, "states", d.states);
  d.ethnicities = detail::get_int(j, "ethnicities", d.ethnicities);
  d.incomes = detail::get_int(j, "incomes", d.incomes);
  d.trials = detail::get_int(j, "trials", d.trials);
  d.level = parse_voting_level(detail::get_str(j, "level", "per_state_slope"));
  return d;
}

inline Model build_model(const Json& cfg) {
  const std::string name = detail::require(cfg, "name", "model").get<std::string>();
  if (name == "normal_location")
    return normal_location_model(detail::get_num(cfg, "prior_mean", 0.0),
                                 detail::get_num(cfg, "prior_scale", 1.0));
  if (name == "binomial_logit")
    return binomial_logit_model(parse_voting_design(detail::require(cfg, "design", "model")),
                                detail::get_num(cfg, "prior_scale", 10.0));
  if (name == "linear_regression")
    return linear_regression_model(detail::get_int(cfg, "dim", 1),
                                   detail::get_num(cfg, "sigma", 1.0),
                                   detail::get_num(cfg, "prior_scale", 1.0));
  if (name == "sum_of_squares")
    return sum_of_squares_simulator(detail::get_int(cfg, "rows", 10),
                                    detail::get_int(cfg, "dim", 1),
                                    detail::get_num(cfg, "prior_scale", 1.0));
  throw ConfigError("config: unknown model \"" + name + "\"");
}

inline VotingTruth build_voting_truth(const Json& j, const VotingDesign& design) {
  VotingTruth truth;
  Rng rng(Rng::mix(detail::get_int(j, "seed", 1), 0x74727574));
  const double state_sd = detail::get_num(j, "state_sd", 0.5);
  const double eth_sd = detail::get_num(j, "eth_sd", 0.3);
  const double slope_mean = detail::get_num(j, "slope_mean", 0.3);
  const double slope_sd = detail::get_num(j, "slope_sd", 0.25);
  const bool heterogeneous = j.contains("heterogeneous_slopes") &&
                             j.at("heterogeneous_slopes").get<bool>();
  truth.state_effect = state_sd * rng.normal_vec(design.states);
  truth.eth_effect = eth_sd * rng.normal_vec(design.ethnicities);
  truth.state_slope = Vec::Constant(design.states, slope_mean);
  if (heterogeneous) truth.state_slope += slope_sd * rng.normal_vec(design.states);
  return truth;
}

struct BuiltData {
  Dataset data;
  std::vector<double> true_thetas;  // simulator generators: the latent draws
};

//! Dataset from either a CSV path or a generator block.
inline BuiltData resolve_data(const Json& model_cfg, const Model& model) {
  BuiltData out;
  if (model_cfg.contains("data_csv")) {
    out.data = read_dataset_csv(model_cfg.at("data_csv").get<std::string>());
    return out;
  }
  const Json& gen = detail::require(model_cfg, "generate", "model");
  const std::string kind = detail::require(gen, "kind", "model.generate").get<std::string>();
  const auto seed = static_cast<std::uint64_t>(detail::get_int(gen, "seed", 1));
  if (kind == "normal") {
    out.data = generate_normal_data(detail::get_int(gen, "n", 100),
                                    detail::get_num(gen, "sigma_true", 1.0), seed);
  } else if (kind == "voting") {
    const VotingDesign design =
        parse_voting_design(detail::require(model_cfg, "design", "model"));
    out.data = generate_voting_data(
        build_voting_truth(detail::require(gen, "truth", "model.generate"), design), design,
        seed);
  } else if (kind == "misspec_regression") {
    const int dim = detail::get_int(model_cfg, "dim", 1);
    const MisspecGrid grid = make_misspec_grid(
        dim, detail::get_int(gen, "groups", 2), detail::get_num(gen, "alpha", 0.0),
        static_cast<std::uint64_t>(detail::get_int(gen, "grid_seed", 1)));
    out.data = generate_misspec_regression(detail::get_int(gen, "n", 100), dim, grid, seed,
                                           detail::get_num(model_cfg, "sigma", 1.0));
  } else if (kind == "sum_of_squares") {
    expect(model.has_sim(), "generate: sum_of_squares needs the simulator model");
    const Json& pop = detail::require(gen, "population", "model.generate");
    const int n = detail::get_int(gen, "n", 100);
    const std::vector<Vec> thetas = sample_bimodal_population(
        n, detail::get_num(pop, "center_a", 0.5), detail::get_num(pop, "center_b", 2.0),
        detail::get_num(pop, "spread", 0.1),
        static_cast<std::uint64_t>(detail::get_int(pop, "seed", 1)));
    out.data = generate_simulator_data(*model.sim, thetas, seed);
    for (const Vec& t : thetas) out.true_thetas.push_back(t[0]);
  } else {
    throw ConfigError("config: unknown generator \"" + kind + "\"");
  }
  return out;
}

inline std::shared_ptr<const Family> build_family(const Json& cfg) {
  const std::string kind = detail::require(cfg, "kind", "family").get<std::string>();
  if (kind == "gaussian_diag")
    return std::make_shared<GaussianDiagFamily>(detail::get_int(cfg, "dim", 1));
  if (kind == "gaussian_dense")
    return std::make_shared<GaussianDenseFamily>(detail::get_int(cfg, "dim", 1));
  if (kind == "spline1d")
    return std::make_shared<Spline1dFamily>(detail::get_int(cfg, "knots", 32),
                                            detail::get_num(cfg, "bound", 10.0));
  throw ConfigError("config: unknown family \"" + kind + "\"");
}

//! Family default parameters with per-segment scalar overrides applied.
inline Vec build_init_phi(const Family& family, const Json& family_cfg) {
  Vec phi = family.init_params();
  if (!family_cfg.contains("init")) return phi;
  const ParamLayout layout = family.layout();
  for (const auto& [key, value] : family_cfg.at("init").items()) {
    if (!layout.has(key))
      throw ConfigError("config: family init names unknown segment \"" + key + "\"");
    const Segment& seg = layout.segment(key);
    if (value.is_number()) {
      phi.segment(seg.offset, seg.size).setConstant(value.get<double>());
    } else {
      const auto vals = value.get<std::vector<double>>();
      if (static_cast<int>(vals.size()) != seg.size)
        throw ConfigError("config: init for \"" + key + "\" has the wrong length");
      for (int i = 0; i < seg.size; ++i) phi[seg.offset + i] = vals[i];
    }
  }
  return phi;
}

inline RegularizerSpec parse_regularizer(const Json& j) {
  RegularizerSpec spec;
  const std::string kind = detail::get_str(j, "kind", "none");
  if (kind == "none")
    spec.kind = RegKind::None;
  else if (kind == "prior_kl")
    spec.kind = RegKind::PriorKL;
  else if (kind == "posterior_kl")
    spec.kind = RegKind::PosteriorKL;
  else
    throw ConfigError("config: unknown regularizer \"" + kind + "\"");
  spec.lambda = detail::get_num(j, "lambda", 0.0);
  const std::string mode = detail::get_str(j, "mode", "additive");
  if (mode == "additive")
    spec.mode = MixMode::Additive;
  else if (mode == "interpolate")
    spec.mode = MixMode::Interpolate;
  else
    throw ConfigError("config: unknown regularizer mode \"" + mode + "\"");
  spec.mc_size = detail::get_int(j, "mc_size", 100);
  return spec;
}

inline Schedule parse_schedule(const Json& j) {
  Schedule s;
  const std::string kind = detail::require(j, "kind", "optimizer.schedule").get<std::string>();
  if (kind == "constant") {
    s.kind = Schedule::Kind::Constant;
    s.lr = detail::require(j, "lr", "schedule").get<double>();
  } else if (kind == "step_decay") {
    s.kind = Schedule::Kind::StepDecay;
    s.lr = detail::require(j, "lr", "schedule").get<double>();
    s.factor = detail::get_num(j, "factor", 0.1);
    s.at_iteration = detail::require(j, "at_iteration", "schedule").get<int>();
  } else if (kind == "warmup_cosine") {
    s.kind = Schedule::Kind::WarmupCosine;
    s.peak_lr = detail::require(j, "peak_lr", "schedule").get<double>();
    s.floor_lr = detail::require(j, "floor_lr", "schedule").get<double>();
    s.warmup = detail::require(j, "warmup", "schedule").get<int>();
    s.total = detail::require(j, "total", "schedule").get<int>();
  } else {
    throw ConfigError("config: unknown schedule \"" + kind + "\"");
  }
  return s;
}

inline OptimizerSpec parse_optimizer(const Json& j) {
  OptimizerSpec o;
  const std::string alg = detail::get_str(j, "algorithm", "rmsprop");
  if (alg == "rmsprop")
    o.algorithm = Algorithm::Rmsprop;
  else if (alg == "adam")
    o.algorithm = Algorithm::Adam;
  else
    throw ConfigError("config: unknown algorithm \"" + alg + "\"");
  o.schedule = parse_schedule(detail::require(j, "schedule", "optimizer"));
  o.iterations = detail::require(j, "iterations", "optimizer").get<int>();
  o.mc_size = detail::get_int(j, "mc_size", 100);
  o.minibatch = detail::get_int(j, "minibatch", 0);
  o.seed = static_cast<std::uint64_t>(detail::get_int(j, "seed", 1));
  o.log_stride = detail::get_int(j, "log_stride", 100);
  o.snapshot_stride = detail::get_int(j, "snapshot_stride", 1000);
  if (j.contains("clip_global_norm")) o.clip_global_norm = j.at("clip_global_norm").get<double>();
  if (j.contains("box_bound")) o.box_bound = j.at("box_bound").get<double>();
  return o;
}

struct BuiltRun {
  RunSpec spec;
  std::vector<double> true_thetas;
};

inline BuiltRun build_run(const Json& config,
                          std::optional<std::uint64_t> seed_override = std::nullopt) {
  BuiltRun built;
  RunSpec& spec = built.spec;
  spec.model = build_model(detail::require(config, "model", "config"));
  BuiltData data = resolve_data(config.at("model"), spec.model);
  spec.data = std::move(data.data);
  built.true_thetas = std::move(data.true_thetas);
  spec.family = build_family(detail::require(config, "family", "config"));
  spec.init_phi = build_init_phi(*spec.family, config.at("family"));
  spec.score = parse_score(detail::require(config, "score", "config").get<std::string>());
  spec.estimator =
      parse_estimator(detail::require(config, "estimator", "config").get<std::string>());
  if (config.contains("regularizer")) spec.reg = parse_regularizer(config.at("regularizer"));
  spec.opt = parse_optimizer(detail::require(config, "optimizer", "config"));
  if (seed_override) spec.opt.seed = *seed_override;
  return built;
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

inline void write_trace_csv(const RunTrace& trace, const std::string& path) {
  std::ofstream out(path);
  expect(out.good(), "cannot open " + path + " for writing");
  out << "iter,objective,regularizer,grad_norm,lr,accept_rate,dropped\n";
  for (const TraceRecord& r : trace.records) {
    out << r.iter << ',' << detail::format_double(r.objective) << ','
        << detail::format_double(r.reg_value) << ',' << detail::format_double(r.grad_norm)
        << ',' << detail::format_double(r.lr) << ',' << detail::format_double(r.accept_rate)
        << ',' << r.dropped << '\n';
  }
}

inline Json phi_snapshot_json(const Json& family_cfg, const Family& family, const Vec& phi) {
  Json j;
  j["family"] = family_cfg;
  j["param_dim"] = family.layout().dim();
  j["theta_dim"] = family.theta_dim();
  j["phi"] = std::vector<double>(phi.data(), phi.data() + phi.size());
  return j;
}

inline Json summary_json(const Json& config, const RunSpec& spec, const RunTrace& trace) {
  const Family& family = *spec.family;
  const ParamLayout layout = family.layout();
  Json segments;
  for (const Segment& seg : layout.segments())
    segments[seg.name] = std::vector<double>(trace.final_phi.data() + seg.offset,
                                             trace.final_phi.data() + seg.offset + seg.size);
  Rng std_rng(spec.opt.seed ^ 0x5354444eull);
  const Vec stds = family.theta_stds(trace.final_phi, 10000, &std_rng);
  const Vec means = family.theta_means(trace.final_phi, 10000, &std_rng);

  Json j;
  j["config"] = config;
  j["model"] = spec.model.name;
  j["family"] = family.name();
  j["seed"] = spec.opt.seed;
  j["n_data"] = spec.data.size();
  j["iterations"] = spec.opt.iterations;
  j["final_phi"] = {{"values", std::vector<double>(trace.final_phi.data(),
                                                   trace.final_phi.data() +
                                                       trace.final_phi.size())},
                    {"segments", segments}};
  j["final_theta_mean"] = std::vector<double>(means.data(), means.data() + means.size());
  j["final_theta_std"] = std::vector<double>(stds.data(), stds.data() + stds.size());
  if (!trace.records.empty()) {
    j["final_objective"] = detail::json_num(trace.records.back().objective);
    j["final_regularizer"] = detail::json_num(trace.records.back().reg_value);
  }
  j["trace_records"] = trace.records.size();
  j["flagged_iterations"] = trace.flagged_iterations;
  j["failed"] = trace.failed;
  return j;
}

inline Json score_table_json(const ScoreTable& table) {
  Json rows = Json::array();
  for (const auto& r : table.rows) {
    Json row;
    row["score"] = to_string(r.kind);
    row["mean"] = detail::json_num(r.mean);
    row["se"] = detail::json_num(r.se);
    row["n_test"] = r.n_test;
    rows.push_back(row);
  }
  Json j;
  j["rows"] = rows;
  j["skipped"] = table.skipped;
  return j;
}

inline void write_json(const Json& j, const std::string& path) {
  std::ofstream out(path);
  expect(out.good(), "cannot open " + path + " for writing");
  out << j.dump(2) << '\n';
}

inline Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw ConfigError("cannot read " + path);
  Json j;
  in >> j;
  return j;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct RunOutputs {
  RunTrace trace;
  std::filesystem::path dir;
};

inline RunOutputs execute_run(const Json& config, const std::string& out_dir,
                              std::optional<std::uint64_t> seed_override = std::nullopt) {
  BuiltRun built = build_run(config, seed_override);
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  write_dataset_csv(built.spec.data, (dir / "data.csv").string());
  if (!built.true_thetas.empty()) {
    std::ofstream out(dir / "true_thetas.csv");
    out << "theta\n";
    for (double t : built.true_thetas) out << detail::format_double(t) << '\n';
  }
  RunOutputs outputs;
  outputs.dir = dir;
  outputs.trace = run_pvi(built.spec);
  write_trace_csv(outputs.trace, (dir / "trace.csv").string());

  Json summary = summary_json(config, built.spec, outputs.trace);
  // final predictive scores on the training data, and on held-out data when
  // the config supplies any
  const Json heldout_cfg = config.contains("heldout") ? config.at("heldout") : Json::object();
  const int score_mc = detail::get_int(heldout_cfg, "mc_size", 2000);
  const auto score_seed = static_cast<std::uint64_t>(detail::get_int(heldout_cfg, "seed", 7));
  summary["train_scores"] = score_table_json(heldout_scores(
      built.spec.model, *built.spec.family, outputs.trace.final_phi, built.spec.data, score_mc,
      score_seed));
  if (heldout_cfg.contains("data_csv") || heldout_cfg.contains("generate")) {
    Json ho_source = config.at("model");  // inherit model parameters (dim, design, ...)
    ho_source.erase("generate");
    ho_source.erase("data_csv");
    ho_source.update(heldout_cfg);
    const BuiltData heldout = resolve_data(ho_source, built.spec.model);
    write_dataset_csv(heldout.data, (dir / "heldout_data.csv").string());
    summary["heldout_scores"] = score_table_json(heldout_scores(
        built.spec.model, *built.spec.family, outputs.trace.final_phi, heldout.data, score_mc,
        score_seed));
  }
  write_json(summary, (dir / "summary.json").string());
  write_json(phi_snapshot_json(config.at("family"), *built.spec.family, outputs.trace.final_phi),
             (dir / "phi_final.json").string());
  if (outputs.trace.failed)
    throw RuntimeFailure("run: more than half of all iterations were flagged");
  return outputs;
}

//! Frozen-batch finite-difference check of the configured estimator, plus a
//! replication unbiasedness check against the conjugate normal oracle when
//! the model admits one.
inline Json gradcheck_report(const Json& config) {
  BuiltRun built = build_run(config);
  RunSpec& spec = built.spec;
  validate_combination(spec);
  const Json gc = config.contains("gradcheck") ? config.at("gradcheck") : Json::object();
  const int points = detail::get_int(gc, "points", 20);
  const int mc_size = detail::get_int(gc, "mc_size", 25);
  const double h = detail::get_num(gc, "h", 1e-5);
  const double tolerance = detail::get_num(
      gc, "tolerance", spec.estimator == EstimatorKind::CrpsPathwise ? 1e-3 : 1e-4);
  const bool corrupt = gc.contains("corrupt_for_test") && gc.at("corrupt_for_test").get<bool>();
  const Family& family = *spec.family;
  const int dim = family.layout().dim();

  Rng rng(spec.opt.seed ^ 0x67636b00ull);
  double max_rel = 0.0;
  Vec per_coord = Vec::Zero(dim);
  for (int point = 0; point < points; ++point) {
    const Vec phi = spec.init_phi + 0.4 * rng.normal_vec(dim);
    const McBatch batch = make_mc_batch(family, spec.model, spec.score, mc_size, rng,
                                        spec.estimator == EstimatorKind::LogRejection);
    GradientEstimate est =
        score_gradient(spec.estimator, spec.model, family, phi, spec.data, {}, batch);
    if (corrupt) est.grad *= 1.1;

    Vec fd;
    if (spec.estimator == EstimatorKind::LogRejection) {
      // freeze draws and acceptances; differentiate the accepted-score mean
      const auto q = family.at(phi);
      std::vector<Vec> thetas;
      for (const Vec& u : batch.u) thetas.push_back(q->sample(u));
      std::vector<std::vector<int>> accepted(spec.data.size());
      for (int i = 0; i < spec.data.size(); ++i) {
        const double c = *spec.model.lik->lik_bound(spec.data[i]);
        for (int j = 0; j < batch.M; ++j)
          if (batch.rej_t[j] <
              std::exp(spec.model.lik->log_lik(thetas[j], spec.data[i])) / c)
            accepted[i].push_back(j);
      }
      fd = finite_difference_gradient(
               [&](const Vec& p) {
                 const auto qq = family.at(p);
                 double total = 0.0;
                 int kept = 0;
                 for (int i = 0; i < spec.data.size(); ++i) {
                   if (accepted[i].empty()) continue;
                   ++kept;
                   double s = 0.0;
                   for (int j : accepted[i]) s += qq->log_density(thetas[j]);
                   total += s / accepted[i].size();
                 }
                 return kept > 0 ? total / kept : 0.0;
               },
               phi, h)
               .grad;
    } else {
      fd = finite_difference_gradient(
               [&](const Vec& p) {
                 return score_objective(spec.score, spec.model, family, p, spec.data, {}, batch)
                     .value;
               },
               phi, h)
               .grad;
    }
    const double scale = std::max(1e-8, fd.cwiseAbs().maxCoeff());
    const Vec rel = (est.grad - fd).cwiseAbs() / scale;
    per_coord = per_coord.cwiseMax(rel);
    max_rel = std::max(max_rel, rel.maxCoeff());
  }

  Json j;
  j["estimator"] = to_string(spec.estimator);
  j["points"] = points;
  j["mc_size"] = mc_size;
  j["tolerance"] = tolerance;
  j["max_rel_error"] = detail::json_num(max_rel);
  j["per_coordinate_max_rel_error"] =
      std::vector<double>(per_coord.data(), per_coord.data() + dim);
  bool pass = max_rel <= tolerance;
  if (!pass) {
    std::vector<int> offending;
    for (int k = 0; k < dim; ++k)
      if (per_coord[k] > tolerance) offending.push_back(k);
    j["offending_coordinates"] = offending;
  }

  // Replication unbiasedness against the conjugate oracle.
  if (spec.model.name == "normal_location" && spec.family->name() == "gaussian_diag") {
    const double y = spec.data.outcomes[0][0];
    const Vec phi = spec.init_phi;
    const double mu = phi[0], sigma = std::exp(phi[1]);
    const double s_pred = std::sqrt(1.0 + sigma * sigma);
    const double z = (y - mu) / s_pred;
    Vec analytic(2);
    if (spec.score == ScoreKind::Log) {
      analytic[0] = z / s_pred;
      analytic[1] = sigma * sigma * (z * z - 1.0) / (s_pred * s_pred);
    } else {
      // d(-CRPS)/dmu = 2 Phi(z) - 1; d CRPS/ds = 2 phi(z) - 1/sqrt(pi)
      const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
      analytic[0] = 2.0 * normal_cdf(z) - 1.0;
      analytic[1] = -(2.0 * pdf - 1.0 / std::sqrt(M_PI)) * sigma * sigma / s_pred;
    }
    Dataset single;
    single.outcomes = {Vec::Constant(1, y)};
    const int reps = detail::get_int(gc, "replications", 400);
    Vec mean = Vec::Zero(2), m2 = Vec::Zero(2);
    int used = 0;
    for (int r = 0; r < reps; ++r) {
      const McBatch batch = make_mc_batch(family, spec.model, spec.score, mc_size, rng,
                                          spec.estimator == EstimatorKind::LogRejection);
      GradientEstimate est =
          score_gradient(spec.estimator, spec.model, family, phi, single, {}, batch);
      if (est.dropped_data > 0 || !all_finite(est.grad)) continue;
      if (corrupt) est.grad.array() += 0.5;
      mean += est.grad;
      m2 += est.grad.cwiseProduct(est.grad);
      ++used;
    }
    mean /= used;
    Json rep;
    rep["replications_used"] = used;
    rep["analytic"] = std::vector<double>{analytic[0], analytic[1]};
    rep["mean"] = std::vector<double>{mean[0], mean[1]};
    std::vector<double> zscores;
    bool rep_pass = true;
    for (int k = 0; k < 2; ++k) {
      const double se =
          std::sqrt(std::max(1e-30, (m2[k] / used - mean[k] * mean[k]) / used));
      const double zs = (mean[k] - analytic[k]) / se;
      zscores.push_back(zs);
      // the reparameterized estimator is only asymptotically unbiased; gate
      // the strictly unbiased ones at 3 standard errors
      if (spec.estimator != EstimatorKind::LogReparam && std::abs(zs) > 3.0) rep_pass = false;
    }
    rep["z_scores"] = zscores;
    rep["pass"] = rep_pass;
    j["replication"] = rep;
    pass = pass && rep_pass;
  } else {
    j["replication"] = "skipped: no analytic oracle for this model/family";
  }

  j["pass"] = pass;
  return j;
}

inline Json heterogeneity_json(const HeterogeneityReport& report) {
  Json rows = Json::array();
  for (const auto& r : report.rows) {
    Json row;
    row["name"] = r.name;
    row["pvi_std"] = detail::json_num(r.pvi_std);
    row["reference_std"] = detail::json_num(r.reference_std);
    row["ratio"] = detail::json_num(r.ratio);
    row["flagged"] = r.flagged;
    rows.push_back(row);
  }
  Json j;
  j["threshold"] = report.threshold;
  j["rows"] = rows;
  j["any_flagged"] = report.any_flagged();
  return j;
}

inline void execute_eval(const Json& config, const std::string& phi_path,
                         const std::string& data_path, const std::string& out_dir) {
  const Json snapshot = read_json(phi_path);
  const auto family = build_family(detail::require(snapshot, "family", "phi snapshot"));
  const auto phi_vals = detail::require(snapshot, "phi", "phi snapshot").get<std::vector<double>>();
  if (static_cast<int>(phi_vals.size()) != family->layout().dim())
    throw ConfigError("eval: phi snapshot does not match the family dimension");
  Vec phi(family->layout().dim());
  for (int i = 0; i < phi.size(); ++i) phi[i] = phi_vals[i];

  const Model model = build_model(detail::require(config, "model", "config"));
  if (family->theta_dim() != model.theta_dim)
    throw ConfigError("eval: family dimension does not match the model");
  const Dataset test = read_dataset_csv(data_path);

  const Json eval_cfg = config.contains("eval") ? config.at("eval") : Json::object();
  const int mc = detail::get_int(eval_cfg, "mc_size", 10000);
  const auto seed = static_cast<std::uint64_t>(detail::get_int(eval_cfg, "seed", 7));

  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);

  Json report;
  report["scores"] = score_table_json(heldout_scores(model, *family, phi, test, mc, seed));

  std::ofstream csv(dir / "report.csv");
  csv << "kind,name,value,se,extra\n";
  for (const auto& row : report["scores"]["rows"])
    csv << "score," << row["score"].get<std::string>() << ','
        << row["mean"].dump() << ',' << row["se"].dump() << ',' << row["n_test"] << '\n';

  if (eval_cfg.contains("reference_snapshot")) {
    const Json ref_snap = read_json(eval_cfg.at("reference_snapshot").get<std::string>());
    const auto ref_family = build_family(detail::require(ref_snap, "family", "reference"));
    const auto ref_vals =
        detail::require(ref_snap, "phi", "reference").get<std::vector<double>>();
    Vec ref_phi(ref_family->layout().dim());
    for (int i = 0; i < ref_phi.size(); ++i) ref_phi[i] = ref_vals[i];
    Rng rng(Rng::mix(seed, 0x72656631));
    const auto het = heterogeneity_report(
        *family, phi, HeterogeneityReference(FittedReference{ref_family.get(), ref_phi}),
        model.theta_names, detail::get_num(eval_cfg, "threshold", 3.0), 10000, &rng);
    report["heterogeneity"] = heterogeneity_json(het);
    for (const auto& row : report["heterogeneity"]["rows"])
      csv << "heterogeneity," << row["name"].get<std::string>() << ','
          << row["ratio"].dump() << ',' << row["pvi_std"].dump() << ',' << row["flagged"]
          << '\n';
  } else {
    report["heterogeneity"] = "skipped: no reference_snapshot configured";
  }

  write_json(report, (dir / "report.json").string());
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct SweepCell {
  int index = 0;
  Json overrides = Json::object();  // pointer path -> value
  std::uint64_t seed = 1;
};

inline std::vector<SweepCell> enumerate_cells(const Json& config) {
  const Json& sweep = detail::require(config, "sweep", "config");
  std::vector<std::pair<std::string, std::vector<Json>>> axes;
  if (sweep.contains("axes"))
    for (const auto& axis : sweep.at("axes")) {
      const std::string path = detail::require(axis, "path", "sweep.axes").get<std::string>();
      std::vector<Json> values;
      for (const auto& v : detail::require(axis, "values", "sweep.axes")) values.push_back(v);
      expect(!values.empty(), "sweep: empty axis " + path);
      axes.emplace_back(path, values);
    }
  std::vector<std::uint64_t> seeds;
  if (sweep.contains("seeds"))
    for (const auto& s : sweep.at("seeds")) seeds.push_back(s.get<std::uint64_t>());
  if (seeds.empty()) seeds.push_back(detail::get_int(sweep, "seed", 1));

  std::vector<SweepCell> cells;
  std::vector<size_t> idx(axes.size(), 0);
  for (;;) {
    for (const std::uint64_t seed : seeds) {
      SweepCell cell;
      cell.index = static_cast<int>(cells.size());
      cell.seed = seed;
      for (size_t a = 0; a < axes.size(); ++a)
        cell.overrides[axes[a].first] = axes[a].second[idx[a]];
      cells.push_back(std::move(cell));
    }
    size_t a = 0;
    for (; a < axes.size(); ++a) {
      if (++idx[a] < axes[a].second.size()) break;
      idx[a] = 0;
    }
    if (a == axes.size()) break;
    if (axes.empty()) break;
  }
  return cells;
}

inline Json apply_overrides(Json config, const SweepCell& cell) {
  for (const auto& [path, value] : cell.overrides.items())
    config[Json::json_pointer(path)] = value;
  config[Json::json_pointer("/optimizer/seed")] = cell.seed;
  return config;
}

//! Cross-product sweep. Cells run concurrently with isolated state; the
//! collector writes sweep.csv in cell order after all cells finish.
inline int execute_sweep(const Json& config, const std::string& out_dir, int jobs) {
  const std::vector<SweepCell> cells = enumerate_cells(config);
  expect(!cells.empty(), "sweep: no cells");
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);

  struct CellResult {
    bool ok = false;
    std::string error;
    Json summary;
  };
  std::vector<CellResult> results(cells.size());
  std::atomic<size_t> next{0};
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(cells.size())));

  const auto work = [&]() {
    for (;;) {
      const size_t k = next.fetch_add(1);
      if (k >= cells.size()) return;
      try {
        const Json cell_config = apply_overrides(config, cells[k]);
        const std::string cell_dir = (dir / ("cell_" + std::to_string(k))).string();
        execute_run(cell_config, cell_dir);
        results[k].summary = read_json(cell_dir + "/summary.json");
        results[k].ok = true;
      } catch (const std::exception& e) {
        results[k].error = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();

  // fixed-order collector
  std::ofstream csv(dir / "sweep.csv");
  csv << "cell";
  std::vector<std::string> axis_cols;
  for (const auto& [path, value] : cells[0].overrides.items()) {
    axis_cols.push_back(path);
    const auto pos = path.find_last_of('/');
    csv << ',' << (pos == std::string::npos ? path : path.substr(pos + 1));
  }
  csv << ",seed,status,final_objective,final_theta_std\n";
  bool any_failed = false;
  for (size_t k = 0; k < cells.size(); ++k) {
    csv << k;
    for (const auto& col : axis_cols) csv << ',' << cells[k].overrides[col].dump();
    csv << ',' << cells[k].seed;
    if (results[k].ok) {
      const Json& s = results[k].summary;
      std::string stds;
      for (const auto& v : s.at("final_theta_std")) {
        if (!stds.empty()) stds += ';';
        stds += v.dump();
      }
      csv << ",ok," << s.at("final_objective").dump() << ",\"" << stds << "\"\n";
    } else {
      any_failed = true;
      csv << ",failed,,\n";
    }
  }
  return any_failed ? 1 : 0;
}

}  // namespace pvi
