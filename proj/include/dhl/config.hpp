#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dhl/env.hpp"

namespace dhl {

enum class Experiment {
  env_gen,
  inequality_audit,
  harnack,
  log_audit,
  oscillation,
  diagonal,
  clt_sweep,
  full_pipeline,
};

inline const char* to_string(Experiment e) {
  switch (e) {
    case Experiment::env_gen: return "env-gen";
    case Experiment::inequality_audit: return "inequality-audit";
    case Experiment::harnack: return "harnack";
    case Experiment::log_audit: return "log-audit";
    case Experiment::oscillation: return "oscillation";
    case Experiment::diagonal: return "diagonal";
    case Experiment::clt_sweep: return "clt-sweep";
    case Experiment::full_pipeline: return "full-pipeline";
  }
  return "?";
}

inline std::optional<Experiment> experiment_from_string(const std::string& s) {
  for (auto e : {Experiment::env_gen, Experiment::inequality_audit,
                 Experiment::harnack, Experiment::log_audit, Experiment::oscillation,
                 Experiment::diagonal, Experiment::clt_sweep, Experiment::full_pipeline})
    if (s == to_string(e)) return e;
  return std::nullopt;
}

/// One experiment run: environment, exponent pair, geometry, ladders,
/// solver settings. Defaults are spelled out here and in the README; the
/// parser rejects unknown keys in strict mode so configs cannot silently
/// drift.
struct RunConfig {
  Experiment experiment = Experiment::full_pipeline;
  EnvironmentSpec environment;
  double p = 4.0;
  double q = 4.0;

  struct Cylinder {
    double radius = 8.0;
    double tau = 1.0;
    double delta = 0.5;
    double kappa = 0.5;
    double top_time = 0.0;  // 0 = tau * radius^2 (one parabolic scale)
  } cylinder;

  std::vector<double> epsilons = {1.0, 0.5, 0.25, 0.125};

  struct Times {
    double t_min = 0.5;
    double t_max = 2.0;
    int count = 5;
  } times;

  struct Clt {
    double radius = 2.0;
    int origins = 4;
  } clt;

  struct Audit {
    int trials = 200;
    double ball_radius = 12.0;
  } audit;

  struct Batch {
    int solutions = 50;
  } batch;

  struct Diagonal {
    double t_min = 4.0;
    double t_max = 40.0;
    int count = 5;
  } diagonal;

  struct Solver {
    double tolerance = 1e-10;
  } solver;

  bool failure_regime = false;
  std::uint64_t seed = 1;
  std::string out = "runs/latest";
  int threads = 1;
  bool strict = true;
  std::string calibration_path;  // empty = checked-in default

  std::vector<double> time_grid() const {
    std::vector<double> ts;
    for (int i = 0; i < times.count; ++i)
      ts.push_back(times.t_min +
                   (times.t_max - times.t_min) * i / std::max(1, times.count - 1));
    return ts;
  }

  std::vector<std::string> validate() const {
    std::vector<std::string> errs;
    for (auto& e : environment.validate()) errs.push_back("environment: " + e);
    if (!(p >= 1.0)) errs.push_back("exponents: p must be >= 1");
    if (!(q >= 1.0)) errs.push_back("exponents: q must be >= 1");
    const double ip = std::isfinite(p) ? 1.0 / p : 0.0;
    const double iq = std::isfinite(q) ? 1.0 / q : 0.0;
    const bool trap = environment.model == EnvModel::trap_counterexample;
    if (!(ip + iq < 2.0 / environment.dimension) && !failure_regime && !trap)
      errs.push_back(
          "exponents: moment condition 1/p + 1/q < 2/d violated "
          "(set failure_regime to target the failure regime)");
    if (!(cylinder.radius > 0.0)) errs.push_back("cylinder: radius must be > 0");
    if (!(cylinder.tau > 0.0)) errs.push_back("cylinder: tau must be > 0");
    if (!(cylinder.delta >= 0.5 && cylinder.delta < 1.0))
      errs.push_back("cylinder: delta must lie in [1/2, 1)");
    if (!(cylinder.kappa > 0.0 && cylinder.kappa < 1.0))
      errs.push_back("cylinder: kappa must lie in (0, 1)");
    for (std::size_t i = 0; i + 1 < epsilons.size(); ++i)
      if (!(epsilons[i] > epsilons[i + 1])) {
        errs.push_back("epsilons: must be strictly descending");
        break;
      }
    if (!(times.t_min > 0.0) || !(times.t_max >= times.t_min) || times.count < 1)
      errs.push_back("times: need 0 < t_min <= t_max and count >= 1");
    if (audit.trials < 1) errs.push_back("audit: trials must be >= 1");
    if (batch.solutions < 1) errs.push_back("batch: solutions must be >= 1");
    if (!(solver.tolerance > 0.0) || solver.tolerance > 1e-4)
      errs.push_back("solver: tolerance must lie in (0, 1e-4]");
    if (threads < 1) errs.push_back("threads must be >= 1");
    if (out.empty()) errs.push_back("out: output directory must be set");
    return errs;
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j,
                           std::initializer_list<const char*> known,
                           const std::string& where,
                           std::vector<std::string>& errs) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known)
      if (it.key() == k) ok = true;
    if (!ok) errs.push_back("unknown key '" + where + it.key() + "'");
  }
}

}  // namespace detail

/// Parses a config document, collecting every problem rather than stopping
/// at the first. Unknown keys are rejected when strict (the default).
inline RunConfig parse_config(const nlohmann::json& j, bool force_strict = false) {
  RunConfig cfg;
  std::vector<std::string> errs;

  cfg.strict = j.value("strict", true) || force_strict;
  if (cfg.strict)
    detail::reject_unknown(
        j,
        {"experiment", "environment", "exponents", "cylinder", "epsilons", "times",
         "clt", "audit", "batch", "diagonal", "solver", "failure_regime", "seed",
         "out", "threads", "strict", "calibration"},
        "", errs);

  if (j.contains("experiment")) {
    auto e = experiment_from_string(j["experiment"].get<std::string>());
    if (!e)
      errs.push_back("experiment: unknown value '" +
                     j["experiment"].get<std::string>() + "'");
    else
      cfg.experiment = *e;
  }
  try {
    if (j.contains("environment")) {
      if (cfg.strict)
        detail::reject_unknown(j["environment"],
                               {"dimension", "cells_per_side", "cell_size", "model",
                                "tail_lambda_inv", "tail_Lambda", "anisotropy", "seed"},
                               "environment.", errs);
      cfg.environment = j["environment"].get<EnvironmentSpec>();
    }
  } catch (const std::exception& ex) {
    errs.push_back(std::string("environment: ") + ex.what());
  }
  if (j.contains("exponents")) {
    const auto& e = j["exponents"];
    if (cfg.strict) detail::reject_unknown(e, {"p", "q"}, "exponents.", errs);
    auto read_exp = [&](const char* name, double fallback) {
      if (!e.contains(name)) return fallback;
      if (e[name].is_string() && e[name] == "inf") return kInf;
      return e[name].get<double>();
    };
    cfg.p = read_exp("p", cfg.p);
    cfg.q = read_exp("q", cfg.q);
  }
  if (j.contains("cylinder")) {
    const auto& c = j["cylinder"];
    if (cfg.strict)
      detail::reject_unknown(c, {"radius", "tau", "delta", "kappa", "top_time"},
                             "cylinder.", errs);
    cfg.cylinder.radius = c.value("radius", cfg.cylinder.radius);
    cfg.cylinder.tau = c.value("tau", cfg.cylinder.tau);
    cfg.cylinder.delta = c.value("delta", cfg.cylinder.delta);
    cfg.cylinder.kappa = c.value("kappa", cfg.cylinder.kappa);
    cfg.cylinder.top_time = c.value("top_time", cfg.cylinder.top_time);
  }
  if (j.contains("epsilons")) cfg.epsilons = j["epsilons"].get<std::vector<double>>();
  if (j.contains("times")) {
    const auto& t = j["times"];
    if (cfg.strict) detail::reject_unknown(t, {"t_min", "t_max", "count"}, "times.", errs);
    cfg.times.t_min = t.value("t_min", cfg.times.t_min);
    cfg.times.t_max = t.value("t_max", cfg.times.t_max);
    cfg.times.count = t.value("count", cfg.times.count);
  }
  if (j.contains("clt")) {
    const auto& c = j["clt"];
    if (cfg.strict) detail::reject_unknown(c, {"radius", "origins"}, "clt.", errs);
    cfg.clt.radius = c.value("radius", cfg.clt.radius);
    cfg.clt.origins = c.value("origins", cfg.clt.origins);
  }
  if (j.contains("audit")) {
    const auto& a = j["audit"];
    if (cfg.strict) detail::reject_unknown(a, {"trials", "ball_radius"}, "audit.", errs);
    cfg.audit.trials = a.value("trials", cfg.audit.trials);
    cfg.audit.ball_radius = a.value("ball_radius", cfg.audit.ball_radius);
  }
  if (j.contains("batch")) {
    const auto& b = j["batch"];
    if (cfg.strict) detail::reject_unknown(b, {"solutions"}, "batch.", errs);
    cfg.batch.solutions = b.value("solutions", cfg.batch.solutions);
  }
  if (j.contains("diagonal")) {
    const auto& d = j["diagonal"];
    if (cfg.strict) detail::reject_unknown(d, {"t_min", "t_max", "count"}, "diagonal.", errs);
    cfg.diagonal.t_min = d.value("t_min", cfg.diagonal.t_min);
    cfg.diagonal.t_max = d.value("t_max", cfg.diagonal.t_max);
    cfg.diagonal.count = d.value("count", cfg.diagonal.count);
  }
  if (j.contains("solver")) {
    const auto& s = j["solver"];
    if (cfg.strict) detail::reject_unknown(s, {"tolerance"}, "solver.", errs);
    cfg.solver.tolerance = s.value("tolerance", cfg.solver.tolerance);
  }
  cfg.failure_regime = j.value("failure_regime", false);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.out = j.value("out", cfg.out);
  cfg.threads = j.value("threads", 1);
  cfg.calibration_path = j.value("calibration", std::string());

  for (auto& e : cfg.validate()) errs.push_back(e);
  if (!errs.empty()) throw ValidationError(errs);
  return cfg;
}

inline RunConfig parse_config(const std::string& text, bool force_strict = false) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& ex) {
    throw ValidationError({std::string("config is not valid JSON: ") + ex.what()});
  }
  return parse_config(j, force_strict);
}

/// Canonical serialization used for the manifest's config hash.
inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["experiment"] = to_string(c.experiment);
  j["environment"] = c.environment;
  j["exponents"] = {{"p", std::isfinite(c.p) ? nlohmann::json(c.p) : nlohmann::json("inf")},
                    {"q", std::isfinite(c.q) ? nlohmann::json(c.q) : nlohmann::json("inf")}};
  j["cylinder"] = {{"radius", c.cylinder.radius},
                   {"tau", c.cylinder.tau},
                   {"delta", c.cylinder.delta},
                   {"kappa", c.cylinder.kappa},
                   {"top_time", c.cylinder.top_time}};
  j["epsilons"] = c.epsilons;
  j["times"] = {{"t_min", c.times.t_min}, {"t_max", c.times.t_max}, {"count", c.times.count}};
  j["clt"] = {{"radius", c.clt.radius}, {"origins", c.clt.origins}};
  j["audit"] = {{"trials", c.audit.trials}, {"ball_radius", c.audit.ball_radius}};
  j["batch"] = {{"solutions", c.batch.solutions}};
  j["diagonal"] = {{"t_min", c.diagonal.t_min},
                   {"t_max", c.diagonal.t_max},
                   {"count", c.diagonal.count}};
  j["solver"] = {{"tolerance", c.solver.tolerance}};
  j["failure_regime"] = c.failure_regime;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["strict"] = c.strict;
  return j;
}

}  // namespace dhl
