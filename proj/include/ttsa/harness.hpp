#pragma once

#include "ttsa/analysis.hpp"
#include "ttsa/builtins.hpp"
#include "ttsa/core.hpp"
#include "ttsa/greedy_gq.hpp"
#include "ttsa/linear_tdc.hpp"
#include "ttsa/mixing.hpp"
#include "ttsa/nonlinear_tdc.hpp"
#include "ttsa/parallel.hpp"
#include "ttsa/value_models.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#ifndef TTSA_VERSION
#define TTSA_VERSION "0.0.0"
#endif

namespace ttsa {

using json = nlohmann::json;

inline constexpr const char* kCsvHeader =
    "run_id,algo,seed,t,samples,theta_err_sq,tracking_err_sq,objective,grad_norm_sq";

/// Process exit status for an error category.
inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config:
    case ErrorKind::dimension: return 2;
    case ErrorKind::resource: return 4;
    default: return 3;
  }
}

inline std::size_t default_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

// ---------------------------------------------------------------------------
// Spec strings

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

inline double to_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    require(pos == s.size(), ErrorKind::config, "bad number in " + what + ": " + s);
    return v;
  } catch (const std::logic_error&) {
    throw Error(ErrorKind::config, "bad number in " + what + ": " + s);
  }
}

inline std::uint64_t to_uint(const std::string& s, const std::string& what) {
  const double v = to_double(s, what);
  require(v >= 0 && v == std::floor(v), ErrorKind::config, "expected a nonnegative integer in " + what);
  return static_cast<std::uint64_t>(v);
}

/// "name:a,b,c" -> ("name", {"a", "b", "c"}).
inline std::pair<std::string, std::vector<std::string>> head_args(const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) return {spec, {}};
  return {spec.substr(0, colon), split(spec.substr(colon + 1), ',')};
}

inline RowMat matrix_from_json(const json& j, const std::string& what) {
  require(j.is_array() && !j.empty() && j.front().is_array(), ErrorKind::config, what + " must be a nested array");
  RowMat m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j.front().size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    require(j[i].size() == j.front().size(), ErrorKind::config, what + " rows differ in length");
    for (std::size_t k = 0; k < j[i].size(); ++k)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = j[i][k].get<double>();
  }
  return m;
}

inline json to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

}  // namespace detail

/**
 * Builtins "twostate", "baird7", "random-garnet" (10 states, 2 actions, branching 3, seed 2)
 * or "random-garnet:S,A,B,seed";
 * anything else is read as a JSON file with n_states, n_actions, gamma and
 * row-major transition and reward tensors.
 */
inline MdpModel resolve_mdp(const std::string& spec, std::optional<double> gamma = std::nullopt) {
  const auto [name, args] = detail::head_args(spec);
  MdpModel m;
  if (name == "twostate") {
    m = twostate_mdp();
  } else if (name == "baird7") {
    m = baird7_mdp();
  } else if (name == "random-garnet") {
    std::vector<std::uint64_t> v{10, 2, 3, 2};
    require(args.empty() || args.size() == 4, ErrorKind::config, "random-garnet takes S,A,B,seed");
    for (std::size_t i = 0; i < args.size(); ++i) v[i] = detail::to_uint(args[i], "random-garnet");
    m = random_garnet(v[0], v[1], v[2], v[3]);
  } else {
    std::ifstream in(spec);
    require(in.good(), ErrorKind::config, "unknown MDP '" + spec + "' (not a builtin or readable file)");
    json j;
    try {
      in >> j;
      m.name = j.value("name", std::filesystem::path(spec).stem().string());
      m.n_states = j.at("n_states").get<std::size_t>();
      m.n_actions = j.at("n_actions").get<std::size_t>();
      m.gamma = j.at("gamma").get<double>();
      m.transition = j.at("transition").get<std::vector<double>>();
      m.reward = j.at("reward").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw Error(ErrorKind::config, std::string("MDP file: ") + e.what());
    }
    require(m.transition.size() == m.n_states * m.n_actions * m.n_states && m.reward.size() == m.transition.size(),
            ErrorKind::config, "MDP file tensor sizes do not match n_states and n_actions");
  }
  if (gamma) m.gamma = *gamma;
  m.validate();
  return m;
}

/// "uniform", "random:seed[,floor]", "baird", "fixed:p0,p1,..", "deterministic:a" or {"probs": [[..]]}.
inline PolicyTable resolve_policy(const json& spec, const MdpModel& mdp) {
  PolicyTable p;
  if (spec.is_object()) {
    p.probs = detail::matrix_from_json(spec.at("probs"), "policy probs");
  } else {
    require(spec.is_string(), ErrorKind::config, "policy spec must be a string or object");
    const auto [name, args] = detail::head_args(spec.get<std::string>());
    if (name == "uniform") {
      p = PolicyTable::uniform(mdp.n_states, mdp.n_actions);
    } else if (name == "random") {
      require(args.size() == 1 || args.size() == 2, ErrorKind::config, "random policy takes seed[,floor]");
      p = PolicyTable::random(mdp.n_states, mdp.n_actions, detail::to_uint(args[0], "policy"),
                              args.size() == 2 ? detail::to_double(args[1], "policy") : 0.2);
    } else if (name == "baird") {
      require(mdp.n_states == 7 && mdp.n_actions == 2, ErrorKind::config, "baird policy needs the baird7 MDP");
      p = baird7_behavior();
    } else if (name == "fixed") {
      std::vector<double> d;
      for (const auto& a : args) d.push_back(detail::to_double(a, "policy"));
      p = PolicyTable::state_independent(mdp.n_states, d);
    } else if (name == "deterministic") {
      require(args.size() == 1, ErrorKind::config, "deterministic policy takes one action");
      p = PolicyTable::deterministic(mdp.n_states, mdp.n_actions, detail::to_uint(args[0], "policy"));
    } else {
      throw Error(ErrorKind::config, "unknown policy spec '" + spec.get<std::string>() + "'");
    }
  }
  p.validate(mdp);
  return p;
}

/// "tabular", "random:d,seed" or {"rows": [[..]]}; `rows` is the number of feature rows expected.
inline RowMat resolve_features(const json& spec, std::size_t rows) {
  RowMat f;
  if (spec.is_object()) {
    f = detail::matrix_from_json(spec.at("rows"), "feature rows");
  } else {
    require(spec.is_string(), ErrorKind::config, "feature spec must be a string or object");
    const auto [name, args] = detail::head_args(spec.get<std::string>());
    if (name == "tabular") {
      f = tabular_features(rows);
    } else if (name == "random") {
      require(args.size() == 2, ErrorKind::config, "random features take d,seed");
      f = random_features(rows, detail::to_uint(args[0], "features"), detail::to_uint(args[1], "features"));
    } else {
      throw Error(ErrorKind::config, "unknown feature spec '" + spec.get<std::string>() + "'");
    }
  }
  require(static_cast<std::size_t>(f.rows()) == rows, ErrorKind::dimension, "feature row count does not match");
  return f;
}

// ---------------------------------------------------------------------------
// Experiment configuration

struct ExperimentConfig {
  std::string mdp = "twostate";
  std::optional<double> gamma;
  std::string algorithm = "linear-tdc";
  json behavior = "uniform";
  json target = "uniform";
  json features = "tabular";
  /// Nonlinear value model: {"kind": "tanh-linear", "d", "c", "kappa", "seed", "radius"} or {"kind": "linear"}.
  json model = json{{"kind", "tanh-linear"}, {"d", 2}, {"c", 0.5}, {"kappa", 1.0}, {"seed", 1}, {"radius", 10.0}};
  double tau = 1.0;
  bool auto_schedule = false;
  TwoTimescaleConfig schedule{0.01, 0.1, 10, 100};
  std::optional<double> target_eps;
  double batch_cap = 1e12;
  std::vector<std::uint64_t> seeds{0};
  std::string out = "out";
  bool sampled_next = false;
  bool project_on_violation = true;
  bool guard = true;
  std::size_t probe_count = 200;

  void validate() const {
    require(algorithm == "linear-tdc" || algorithm == "nonlinear-tdc" || algorithm == "greedy-gq", ErrorKind::config,
            "algorithm must be one of linear-tdc, nonlinear-tdc, greedy-gq");
    require(!auto_schedule || target_eps.has_value(), ErrorKind::config, "an auto schedule needs target_eps");
    require(!target_eps || *target_eps > 0, ErrorKind::config, "target_eps must be positive");
    require(!seeds.empty(), ErrorKind::config, "at least one seed is required");
    require(tau > 0, ErrorKind::config, "tau must be positive");
    if (!auto_schedule) schedule.validate();
  }

  json to_json() const {
    json j;
    j["mdp"] = mdp;
    j["gamma"] = gamma ? json(*gamma) : json(nullptr);
    j["algorithm"] = algorithm;
    j["behavior"] = behavior;
    j["target"] = target;
    j["features"] = features;
    j["model"] = model;
    j["tau"] = tau;
    if (auto_schedule) {
      j["schedule"] = "auto";
    } else {
      j["schedule"] = {{"alpha", schedule.alpha},
                       {"beta", schedule.beta},
                       {"batch_size", schedule.batch_size},
                       {"iterations", schedule.iterations}};
    }
    j["target_eps"] = target_eps ? json(*target_eps) : json(nullptr);
    j["batch_cap"] = batch_cap;
    j["seeds"] = seeds;
    j["out"] = out;
    j["sampled_next"] = sampled_next;
    j["project_on_violation"] = project_on_violation;
    j["guard"] = guard;
    j["probe_count"] = probe_count;
    return j;
  }

  /// Accepts a config object or a manifest holding one under "config".
  static ExperimentConfig from_json(const json& src) {
    const json& j = src.contains("config") && src["config"].is_object() ? src["config"] : src;
    ExperimentConfig c;
    try {
      c.mdp = j.value("mdp", c.mdp);
      if (j.contains("gamma") && !j["gamma"].is_null()) c.gamma = j["gamma"].get<double>();
      c.algorithm = j.value("algorithm", c.algorithm);
      if (j.contains("behavior")) c.behavior = j["behavior"];
      if (j.contains("target")) c.target = j["target"];
      if (j.contains("features")) c.features = j["features"];
      if (j.contains("model")) c.model = j["model"];
      c.tau = j.value("tau", c.tau);
      if (j.contains("schedule")) {
        const json& s = j["schedule"];
        if (s.is_string()) {
          require(s.get<std::string>() == "auto", ErrorKind::config, "schedule must be an object or \"auto\"");
          c.auto_schedule = true;
        } else {
          c.schedule.alpha = s.at("alpha").get<double>();
          c.schedule.beta = s.at("beta").get<double>();
          c.schedule.batch_size = s.at("batch_size").get<std::uint64_t>();
          c.schedule.iterations = s.at("iterations").get<std::uint64_t>();
        }
      }
      if (j.contains("target_eps") && !j["target_eps"].is_null()) c.target_eps = j["target_eps"].get<double>();
      c.batch_cap = j.value("batch_cap", c.batch_cap);
      if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
      c.out = j.value("out", c.out);
      c.sampled_next = j.value("sampled_next", c.sampled_next);
      c.project_on_violation = j.value("project_on_violation", c.project_on_violation);
      c.guard = j.value("guard", c.guard);
      c.probe_count = j.value("probe_count", c.probe_count);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::config, std::string("config: ") + e.what());
    }
    c.validate();
    return c;
  }
};

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::config, "cannot read config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::config, std::string("config parse: ") + e.what());
  }
  return ExperimentConfig::from_json(j);
}

// ---------------------------------------------------------------------------
// CSV

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_trace_csv(std::ostream& os, const std::string& run_id, const RunTrace& run) {
  auto cell = [&](const std::optional<double>& v) {
    os << ',';
    if (v) os << format_double(*v);
  };
  os << kCsvHeader << '\n';
  for (const auto& r : run.records) {
    os << run_id << ',' << run.algo << ',' << run.seed << ',' << r.t << ',' << r.samples;
    cell(r.theta_err_sq);
    cell(r.tracking_err_sq);
    cell(r.objective);
    cell(r.grad_norm_sq);
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Instances

using NonlinearTanh = NonlinearExact<TanhLinearModel>;
using NonlinearLinear = NonlinearExact<LinearValueModel>;

/// Everything a run needs, resolved once from the config and shared read-only across seeds.
struct Instance {
  MdpModel mdp;
  PolicyTable behavior;  // sampling policy (the evaluated policy for nonlinear TDC)
  PolicyTable target;
  std::optional<LinearTdcExact> linear;
  std::variant<std::monostate, NonlinearTanh, NonlinearLinear> nonlinear;
  std::optional<GreedyGqExact> gq;
  MixingFit mixing;

  std::size_t dim() const {
    if (linear) return linear->dim();
    if (gq) return gq->dim();
    return std::visit(
        [](const auto& ex) -> std::size_t {
          if constexpr (std::is_same_v<std::decay_t<decltype(ex)>, std::monostate>) return 0;
          else return ex.dim();
        },
        nonlinear);
  }
  const Vec& stationary() const {
    if (linear) return linear->mu_b;
    if (gq) return gq->mu_b;
    if (const auto* t = std::get_if<NonlinearTanh>(&nonlinear)) return t->mu;
    return std::get<NonlinearLinear>(nonlinear).mu;
  }
};

inline Instance build_instance(const ExperimentConfig& c) {
  Instance in;
  in.mdp = resolve_mdp(c.mdp, c.gamma);
  in.behavior = resolve_policy(c.behavior, in.mdp);
  const std::size_t ns = in.mdp.n_states, na = in.mdp.n_actions;
  if (c.algorithm == "linear-tdc") {
    in.target = resolve_policy(c.target, in.mdp);
    in.linear = build_linear_exact(in.mdp, in.behavior, in.target, LinearFeatureMap(resolve_features(c.features, ns)));
  } else if (c.algorithm == "nonlinear-tdc") {
    in.target = in.behavior;
    const std::string kind = c.model.value("kind", "tanh-linear");
    const double radius = c.model.value("radius", 10.0);
    if (kind == "tanh-linear") {
      in.nonlinear = build_nonlinear_exact(
          in.mdp, in.behavior,
          tanh_linear_model(ns, c.model.value("d", 2), c.model.value("c", 0.5), c.model.value("kappa", 1.0),
                            c.model.value("seed", 1), radius));
    } else if (kind == "linear") {
      in.nonlinear = build_nonlinear_exact(in.mdp, in.behavior,
                                           LinearValueModel(resolve_features(c.features, ns), radius));
    } else {
      throw Error(ErrorKind::config, "unknown value model kind '" + kind + "'");
    }
  } else {
    in.target = in.behavior;
    in.gq = build_greedy_gq_exact(in.mdp, in.behavior,
                                  StateActionFeatureMap(resolve_features(c.features, ns * na), ns, na), c.tau,
                                  {c.probe_count, 0});
  }
  in.mixing = fit_geometric_mixing(induced_chain(in.mdp, in.behavior), in.stationary());
  return in;
}

// ---------------------------------------------------------------------------
// Theorem calculators on an instance

/// Probe grid for the nonlinear constants: origin plus points spread over a ball.
inline std::vector<Vec> nonlinear_probe_grid(std::size_t d, double radius, std::size_t count) {
  CounterRng rng = make_stream(0, Stream::probe);
  return ball_grid(static_cast<Eigen::Index>(d), radius, count, rng);
}

template <ValueModel Model>
Theorem2Config nonlinear_theorem(const NonlinearExact<Model>& ex, const Instance& in, double eps, double cap,
                                 std::size_t probes) {
  const double radius = std::min(ex.model.radius(), 4.0);
  const auto rep = estimate_model_constants(ex, in.mdp, in.behavior, nonlinear_probe_grid(ex.dim(), radius, probes),
                                            2000, 0);
  const Vec th0 = Vec::Zero(static_cast<Eigen::Index>(ex.dim()));
  const NonlinearPoint p = ex.at(th0);
  return theorem2_config(ledger_from_report(ex, rep), in.mixing.kappa, in.mixing.rho, eps, p.J, p.w.squaredNorm(),
                         cap);
}

inline json theorem_json(const Theorem1Config& c) {
  return {{"alpha", c.alpha},         {"beta", c.beta},
          {"alpha_terms", c.alpha_terms}, {"batch_lower_bound", c.batch_lower_bound},
          {"A1", c.A1},               {"mix", c.mix},
          {"rate", c.rate},           {"delta0", c.delta0},
          {"target_eps", c.target_eps}, {"batch_size", c.batch_size},
          {"iterations", c.iterations}, {"total_samples", c.total_samples}};
}

inline json ledger_json(const SmoothnessLedger& l) {
  const ModelConstants& k = l.model;
  return {{"C_phi", k.C_phi}, {"C_v", k.C_v}, {"D_v", k.D_v}, {"L_v", k.L_v}, {"L_phi", k.L_phi},
          {"L_h", k.L_h},     {"lambda_v", k.lambda_v}, {"gamma", l.gamma}, {"r_max", l.r_max},
          {"L_J", l.L_J},     {"L_e", l.L_e}, {"R_w", l.R_w}, {"L_w", l.L_w}, {"C_g", l.C_g},
          {"C_f", l.C_f},     {"D_1", l.D_1}, {"B_1", l.B_1}, {"B_2", l.B_2}};
}

inline json theorem_json(const Theorem2Config& c) {
  return {{"alpha", c.alpha},
          {"beta", c.beta},
          {"alpha_terms", c.alpha_terms},
          {"mix", c.mix},
          {"J0", c.J0},
          {"w0_err_sq", c.w0_err_sq},
          {"target_eps", c.target_eps},
          {"tracking_batch_lower_bound", c.tracking_batch_lower_bound},
          {"batch_size", c.batch_size},
          {"iterations", c.iterations},
          {"total_samples", c.total_samples},
          {"ledger", ledger_json(c.ledger)}};
}

inline json theorem_json(const Theorem3Config& c) {
  return {{"alpha", c.alpha},         {"beta", c.beta},
          {"alpha_terms", c.alpha_terms}, {"L_J", c.L_J},
          {"mix", c.mix},             {"C1", c.C1},
          {"C2", c.C2},               {"batch_lower_bound", c.batch_lower_bound},
          {"J0", c.J0},               {"w0_err_sq", c.w0_err_sq},
          {"target_eps", c.target_eps}, {"batch_size", c.batch_size},
          {"iterations", c.iterations}, {"total_samples", c.total_samples}};
}

inline json mixing_json(const MixingFit& m) {
  return {{"kappa", m.kappa},   {"rho", m.rho},         {"slem", m.slem},
          {"factor", m.factor()}, {"max_residual", m.max_residual}, {"horizon", m.horizon}};
}

/// Counts beyond 2^63 saturate; such schedules are never run.
inline std::uint64_t clamp_count(double x) {
  return x >= 9.2e18 ? std::uint64_t(9.2e18) : static_cast<std::uint64_t>(std::max(0.0, x));
}

/// Calculator output for the instance, plus the bound at (T, M) and whether alpha is compliant.
struct TheoremEval {
  json report;
  std::optional<TwoTimescaleConfig> schedule;
};

inline TheoremEval evaluate_theorem(const Instance& in, const ExperimentConfig& c) {
  const double eps = c.target_eps.value_or(0.1);
  const double cap = c.auto_schedule ? c.batch_cap : 1e300;
  TheoremEval out;
  auto finish = [&](const auto& cfg, auto&& bound) {
    out.report = theorem_json(cfg);
    const TwoTimescaleConfig s =
        c.auto_schedule ? TwoTimescaleConfig{cfg.alpha, cfg.beta, clamp_count(cfg.batch_size), clamp_count(cfg.iterations)}
                        : c.schedule;
    if (c.auto_schedule) out.schedule = s;
    out.report["compliant"] = s.alpha <= cfg.alpha * (1.0 + 1e-12) && s.beta <= cfg.beta * (1.0 + 1e-12);
    if (s.iterations > 0) out.report["bound_at_schedule"] = bound(double(s.iterations), double(s.batch_size));
  };
  if (in.linear) {
    const auto& ex = *in.linear;
    const Vec z = Vec::Zero(static_cast<Eigen::Index>(ex.dim()));
    const auto cfg = theorem1_config(ex, in.mixing, eps, linear_delta0(ex, z, z), cap);
    finish(cfg, [&](double T, double M) { return cfg.bound(T, M); });
  } else if (in.gq) {
    const auto& ex = *in.gq;
    const Vec z = Vec::Zero(static_cast<Eigen::Index>(ex.dim()));
    const auto cfg = theorem3_config(ex, in.mixing, eps, z, z, cap);
    finish(cfg, [&](double T, double M) { return cfg.bound(T, M); });
  } else {
    std::visit(
        [&](const auto& ex) {
          if constexpr (!std::is_same_v<std::decay_t<decltype(ex)>, std::monostate>) {
            const auto cfg = nonlinear_theorem(ex, in, eps, cap, c.probe_count / 10 + 10);
            finish(cfg, [&](double T, double M) { return cfg.bound(T, M); });
          }
        },
        in.nonlinear);
  }
  return out;
}

inline json instance_constants(const Instance& in) {
  json j;
  j["mixing"] = mixing_json(in.mixing);
  if (in.linear) {
    const auto& ex = *in.linear;
    j["lambda1"] = ex.lambda1;
    j["lambda1_literal"] = ex.lambda1_literal;
    j["lambda2"] = ex.lambda2;
    j["lambda2_literal"] = ex.lambda2_literal;
    j["rho_max"] = ex.rho_max;
    j["r_max"] = ex.r_max;
    j["R_theta"] = ex.R_theta;
    j["theta_star"] = detail::to_json(ex.theta_star);
  } else if (in.gq) {
    const auto& ex = *in.gq;
    j["lambda1"] = ex.lambda1;
    j["lambda1_conservative"] = std::isfinite(ex.lambda1_conservative) ? json(ex.lambda1_conservative) : json(nullptr);
    j["lambda2"] = ex.lambda2;
    j["rho_max"] = ex.rho_max;
    j["r_max"] = ex.r_max;
    j["R_theta"] = ex.R_theta;
    j["cap_radius"] = ex.cap_radius;
    j["L_J"] = ex.L_J;
    j["tau"] = ex.tau;
  } else {
    std::visit(
        [&](const auto& ex) {
          if constexpr (!std::is_same_v<std::decay_t<decltype(ex)>, std::monostate>) {
            j["declared"] = {{"C_phi", ex.declared.C_phi}, {"C_v", ex.declared.C_v},
                             {"D_v", ex.declared.D_v},     {"L_v", ex.declared.L_v},
                             {"L_phi", ex.declared.L_phi}, {"L_h", ex.declared.L_h},
                             {"lambda_v", ex.declared.lambda_v}};
            j["r_max"] = ex.r_max;
          }
        },
        in.nonlinear);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Runs

/// One seed of the configured algorithm. T = 0 yields the initial record only.
inline RunTrace run_one(const Instance& in, const ExperimentConfig& c, const TwoTimescaleConfig& s,
                        std::uint64_t seed) {
  const auto d = static_cast<Eigen::Index>(in.dim());
  const Vec z = Vec::Zero(d);
  if (in.linear) return run_linear_tdc(*in.linear, in.mdp, in.behavior, s, seed);
  if (in.gq) {
    if (s.iterations == 0) {
      RunTrace r;
      r.algo = "greedy-gq";
      r.seed = seed;
      r.records.push_back(gq_record(in.gq->at(z), 0, 0, z));
      r.theta_final = r.w_final = r.theta_output = z;
      return r;
    }
    return run_greedy_gq(*in.gq, in.mdp, s, seed, std::nullopt, std::nullopt,
                         {c.sampled_next, c.project_on_violation});
  }
  return std::visit(
      [&](const auto& ex) -> RunTrace {
        if constexpr (std::is_same_v<std::decay_t<decltype(ex)>, std::monostate>) {
          throw Error(ErrorKind::config, "instance has no algorithm");
        } else {
          if (s.iterations == 0) {
            RunTrace r;
            r.algo = "nonlinear-tdc";
            r.seed = seed;
            r.records.push_back(nonlinear_record(ex, ex.at(z), 0, 0, z));
            r.theta_final = r.w_final = r.theta_output = z;
            return r;
          }
          return run_nonlinear_tdc(ex, in.mdp, in.behavior, s, seed, std::nullopt, std::nullopt, c.guard);
        }
      },
      in.nonlinear);
}

inline json record_json(const TraceRecord& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"t", r.t},
          {"samples", r.samples},
          {"theta_err_sq", opt(r.theta_err_sq)},
          {"tracking_err_sq", opt(r.tracking_err_sq)},
          {"objective", opt(r.objective)},
          {"grad_norm_sq", opt(r.grad_norm_sq)}};
}

struct ExperimentResult {
  json summary;
  json manifest;
};

/**
 * Resolve the instance, run every seed (each writes its own run_{seed}.csv), then
 * write summary.json and manifest.json. Throws ttsa::Error on invalid input.
 */
inline ExperimentResult run_experiment(const ExperimentConfig& c, std::size_t jobs, const std::string& command = "") {
  c.validate();
  const Instance in = build_instance(c);
  TheoremEval theorem;
  std::optional<std::string> theorem_error;
  try {
    theorem = evaluate_theorem(in, c);
  } catch (const Error& e) {
    if (c.auto_schedule) throw;
    theorem_error = e.what();
  }
  const TwoTimescaleConfig sched = theorem.schedule.value_or(c.schedule);
  sched.validate();

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(c.out, ec);
  require(!ec, ErrorKind::config, "cannot create output directory " + c.out);

  std::vector<json> per_seed(c.seeds.size());
  parallel_for(c.seeds.size(), jobs, [&](std::size_t i) {
    const std::uint64_t seed = c.seeds[i];
    const RunTrace run = run_one(in, c, sched, seed);
    const std::string id = "run_" + std::to_string(seed);
    std::ofstream os(fs::path(c.out) / (id + ".csv"), std::ios::binary);
    require(os.good(), ErrorKind::config, "cannot write trace for seed " + std::to_string(seed));
    write_trace_csv(os, id, run);
    json s{{"run_id", id}, {"seed", seed}, {"final", record_json(run.final_record())},
           {"events", run.events}, {"theta_final", detail::to_json(run.theta_final)}};
    if (run.output_index) {
      s["output_index"] = *run.output_index;
      s["output"] = record_json(run.output_record());
    }
    per_seed[i] = s;
  });

  json mean = json::object();
  for (const char* key : {"theta_err_sq", "tracking_err_sq", "objective", "grad_norm_sq"}) {
    for (const char* where : {"final", "output"}) {
      double acc = 0.0;
      std::size_t n = 0;
      for (const auto& s : per_seed)
        if (s.contains(where) && !s[where][key].is_null()) {
          acc += s[where][key].get<double>();
          ++n;
        }
      if (n == per_seed.size()) mean[std::string(where) + "_" + key] = acc / double(n);
    }
  }

  ExperimentResult res;
  res.summary = {{"algorithm", c.algorithm},
                 {"mdp", in.mdp.name},
                 {"schedule",
                  {{"alpha", sched.alpha},
                   {"beta", sched.beta},
                   {"batch_size", sched.batch_size},
                   {"iterations", sched.iterations}}},
                 {"seeds", c.seeds},
                 {"mean", mean},
                 {"runs", per_seed},
                 {"constants", instance_constants(in)},
                 {"theorem", theorem_error ? json{{"error", *theorem_error}} : theorem.report}};
  res.manifest = {{"version", TTSA_VERSION}, {"command", command}, {"config", c.to_json()}};
  std::ofstream(fs::path(c.out) / "summary.json") << res.summary.dump(2) << '\n';
  std::ofstream(fs::path(c.out) / "manifest.json") << res.manifest.dump(2) << '\n';
  return res;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepOptions {
  /// "grid": the configured stepsizes over a (T, M) grid. "theorem": the calculator's
  /// stepsizes and its single (T, M) per eps.
  std::string mode = "grid";
  std::uint64_t T_max = 4096;
  std::uint64_t M_max = 1024;
  /// Divide the metric by its value at t = 0.
  bool relative = false;
  double sample_cap = 1e10;
};

namespace detail {

/// Grid of values 1, 2^(1/k), 2^(2/k), ... up to `max`, rounded and deduplicated.
inline std::vector<std::uint64_t> geometric_grid(std::uint64_t max, int per_octave) {
  std::vector<std::uint64_t> out;
  for (int i = 0;; ++i) {
    const auto v = static_cast<std::uint64_t>(std::llround(std::pow(2.0, double(i) / per_octave)));
    if (v > max) break;
    if (out.empty() || v != out.back()) out.push_back(v);
  }
  return out;
}

/// Per-t criterion curve: the theta error for linear TDC, otherwise the mean of the
/// stationarity measure over t' = 1..t (its expectation under a uniform output index).
inline std::vector<double> criterion_curve(const RunTrace& run, bool relative) {
  std::vector<double> c(run.records.size());
  const bool linear = run.records.front().theta_err_sq.has_value();
  double acc = 0.0;
  for (std::size_t t = 0; t < c.size(); ++t) {
    const TraceRecord& r = run.records[t];
    if (linear) {
      c[t] = *r.theta_err_sq;
    } else if (t == 0) {
      c[t] = r.grad_norm_sq.value();
    } else {
      acc += r.grad_norm_sq.value();
      c[t] = acc / double(t);
    }
  }
  if (relative && c[0] > 0) {
    const double c0 = c[0];
    for (double& v : c) v /= c0;
  }
  return c;
}

}  // namespace detail

/**
 * Runner for complexity_sweep. Curves are cached per (M, seed) at the longest T in
 * the ladder, so each (M, seed) trajectory is simulated once.
 */
inline SweepRunner make_sweep_runner(std::shared_ptr<const Instance> in, const ExperimentConfig& c,
                                     const SweepOptions& opt) {
  struct Cache {
    std::mutex mu;
    std::map<std::pair<std::uint64_t, std::uint64_t>, std::shared_ptr<const std::vector<double>>> curves;
  };
  auto cache = std::make_shared<Cache>();
  TwoTimescaleConfig steps = c.schedule;
  std::function<std::vector<SweepPoint>(double)> ladder;
  if (opt.mode == "theorem") {
    ladder = [in, c](double eps) {
      ExperimentConfig cc = c;
      cc.target_eps = eps;
      cc.auto_schedule = true;
      cc.batch_cap = 1e300;
      const auto s = *evaluate_theorem(*in, cc).schedule;
      return std::vector<SweepPoint>{{std::max<std::uint64_t>(1, s.iterations), s.batch_size}};
    };
    ExperimentConfig cc = c;
    cc.target_eps = 0.1;
    cc.auto_schedule = true;
    cc.batch_cap = 1e300;
    steps = *evaluate_theorem(*in, cc).schedule;
  } else {
    require(opt.mode == "grid", ErrorKind::config, "sweep mode must be grid or theorem");
    const auto Ts = detail::geometric_grid(opt.T_max, 8);
    const auto Ms = detail::geometric_grid(opt.M_max, 2);
    ladder = [Ts, Ms](double) {
      std::vector<SweepPoint> out;
      for (auto M : Ms)
        for (auto T : Ts) out.push_back({T, M});
      return out;
    };
  }
  const std::uint64_t T_max = opt.T_max;
  const bool relative = opt.relative;
  auto metric = [in, c, steps, cache, T_max, relative](const SweepPoint& p, double, std::uint64_t seed) {
    const auto key = std::make_pair(p.M, seed);
    {
      std::lock_guard<std::mutex> lock(cache->mu);
      auto it = cache->curves.find(key);
      if (it != cache->curves.end() && it->second->size() > p.T) return (*it->second)[p.T];
    }
    TwoTimescaleConfig s = steps;
    s.batch_size = p.M;
    s.iterations = std::max(p.T, T_max);
    auto curve = std::make_shared<const std::vector<double>>(detail::criterion_curve(run_one(*in, c, s, seed), relative));
    std::lock_guard<std::mutex> lock(cache->mu);
    cache->curves[key] = curve;
    return (*curve)[p.T];
  };
  return SweepRunner{c.algorithm, ladder, metric};
}

inline json sweep_json(const SweepResult& r) {
  json entries = json::array();
  for (const auto& e : r.entries)
    entries.push_back({{"eps", e.eps},
                       {"reached", e.reached},
                       {"T", e.point.T},
                       {"M", e.point.M},
                       {"samples", e.point.samples()},
                       {"metric", e.metric},
                       {"evaluated", e.evaluated}});
  return {{"algorithm", r.algo},
          {"entries", entries},
          {"partial", r.partial},
          {"fit", {{"slope", r.fit.slope}, {"intercept", r.fit.intercept}, {"r_squared", r.fit.r_squared}}}};
}

}  // namespace ttsa
