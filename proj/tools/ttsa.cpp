// ttsa: command-line driver for runs, mixing fits, variance probes, sweeps and
// the stepsize/batch calculators.

#include "ttsa/harness.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

using namespace ttsa;

namespace {

void emit(const json& j, const std::string& out_dir, const std::string& file) {
  std::cout << j.dump(2) << '\n';
  if (out_dir.empty()) return;
  std::filesystem::create_directories(out_dir);
  std::ofstream(std::filesystem::path(out_dir) / file) << j.dump(2) << '\n';
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> v;
  for (const auto& item : detail::split(s, ',')) v.push_back(detail::to_double(item, "list"));
  require(!v.empty(), ErrorKind::config, "empty list");
  return v;
}

std::string joined_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) s += (i ? " " : "") + std::string(argv[i]);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-timescale TDC / Greedy-GQ experiment driver"};
  app.require_subcommand(1);
  app.set_version_flag("--version", TTSA_VERSION);

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = default_jobs();
  auto common = [&](CLI::App* sub, bool need_config) {
    auto* opt = sub->add_option("--config", config_path, "experiment config (JSON) or manifest");
    if (need_config) opt->required();
    sub->add_option("--seed", seed, "single seed overriding the config");
    sub->add_option("--jobs", jobs, "parallel workers");
    sub->add_option("--out", out_dir, "output directory");
  };

  auto* run = app.add_subcommand("run", "run an experiment and write traces, summary and manifest");
  common(run, true);

  std::string mdp_spec = "twostate", policy_spec = "uniform", feature_spec = "tabular";
  std::size_t horizon = 200;
  auto* mixing = app.add_subcommand("mixing", "fit geometric-ergodicity constants of the sampling chain");
  common(mixing, false);
  mixing->add_option("--mdp", mdp_spec, "builtin name, random-garnet:S,A,B,seed or file");
  mixing->add_option("--policy", policy_spec, "sampling policy");
  mixing->add_option("--horizon", horizon, "total-variation horizon");

  std::string m_list = "10,30,100,300,1000";
  std::size_t reps = 2000;
  std::optional<double> cx;
  bool nonstationary = false;
  auto* probe = app.add_subcommand("probe-variance", "mini-batch mean-square deviation against its bound");
  common(probe, false);
  probe->add_option("--mdp", mdp_spec, "builtin name, random-garnet:S,A,B,seed or file");
  probe->add_option("--policy", policy_spec, "sampling policy");
  probe->add_option("--features", feature_spec, "state map X: tabular or random:d,seed");
  probe->add_option("--M", m_list, "comma-separated batch sizes");
  probe->add_option("--reps", reps, "windows per batch size");
  probe->add_option("--cx", cx, "claimed bound on ||X(s)|| (default: its maximum)");
  probe->add_flag("--nonstationary", nonstationary, "start windows from state 0");

  std::string eps_list = "1e-1,3e-2,1e-2,3e-3";
  std::size_t seed_count = 20;
  SweepOptions sweep_opt;
  auto* sweep = app.add_subcommand("sweep", "sample-complexity sweep over target accuracies");
  common(sweep, true);
  sweep->add_option("--eps", eps_list, "comma-separated targets");
  sweep->add_option("--seeds", seed_count, "seeds per schedule");
  sweep->add_option("--mode", sweep_opt.mode, "grid or theorem")->check(CLI::IsMember({"grid", "theorem"}));
  sweep->add_option("--T-max", sweep_opt.T_max, "largest iteration count on the grid");
  sweep->add_option("--M-max", sweep_opt.M_max, "largest batch size on the grid");
  sweep->add_flag("--relative", sweep_opt.relative, "measure the criterion relative to its t = 0 value");
  sweep->add_option("--cap", sweep_opt.sample_cap, "largest T M to simulate");

  std::string algo = "linear-tdc";
  bool all_ones = false;
  double gamma = 0.5, eps = 1.0, kappa = 1.0, rho = 0.0, J0 = 1.0, w0_err = 0.0, delta0 = 1.0;
  auto* constants = app.add_subcommand("constants", "evaluate the stepsize and batch calculators");
  common(constants, false);
  constants->add_option("--algo", algo, "linear-tdc, nonlinear-tdc or greedy-gq")
      ->check(CLI::IsMember({"linear-tdc", "nonlinear-tdc", "greedy-gq"}));
  constants->add_flag("--all-ones", all_ones, "set every problem constant to one");
  constants->add_option("--gamma", gamma, "discount (with --all-ones)");
  constants->add_option("--eps", eps, "target accuracy");
  constants->add_option("--kappa", kappa, "mixing kappa (with --all-ones)");
  constants->add_option("--rho", rho, "mixing rho (with --all-ones)");
  constants->add_option("--J0", J0, "initial objective (with --all-ones)");
  constants->add_option("--w0-err", w0_err, "initial tracking error (with --all-ones)");
  constants->add_option("--delta0", delta0, "initial Lyapunov value (with --all-ones, linear)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    std::optional<ExperimentConfig> cfg;
    if (!config_path.empty()) {
      cfg = load_config(config_path);
      if (seed) cfg->seeds = {*seed};
      if (!out_dir.empty()) cfg->out = out_dir;
    }

    if (*run) {
      const auto res = run_experiment(*cfg, jobs, joined_args(argc, argv));
      std::cout << res.summary["mean"].dump(2) << '\n';
    } else if (*mixing) {
      MdpModel m;
      PolicyTable pi;
      if (cfg) {
        const Instance in = build_instance(*cfg);
        m = in.mdp;
        pi = in.behavior;
      } else {
        m = resolve_mdp(mdp_spec);
        pi = resolve_policy(policy_spec, m);
      }
      const Mat P = induced_chain(m, pi);
      emit(mixing_json(fit_geometric_mixing(P, stationary_distribution(P), horizon)), out_dir, "mixing.json");
    } else if (*probe) {
      const MdpModel m = resolve_mdp(mdp_spec);
      const PolicyTable pi = resolve_policy(policy_spec, m);
      const Mat P = induced_chain(m, pi);
      const RowMat X = resolve_features(feature_spec, m.n_states);
      VarianceProbeOptions opt;
      opt.Ms.clear();
      for (double v : parse_list(m_list)) opt.Ms.push_back(static_cast<std::size_t>(v));
      opt.reps = reps;
      opt.seed = seed.value_or(0);
      opt.jobs = jobs;
      opt.stationary_start = !nonstationary;
      opt.mixing_horizon = horizon;
      const auto r = batch_variance_probe(P, stationary_distribution(P), X, cx.value_or(max_row_norm(X)), opt);
      emit({{"M", r.Ms},
            {"empirical", r.empirical},
            {"std_error", r.std_error},
            {"bound", r.bound},
            {"reps", r.reps},
            {"C_x", r.C_x},
            {"mixing", mixing_json(r.mixing)},
            {"slope", r.slope.slope},
            {"within_bound", r.within_bound(3.0)}},
           out_dir, "probe.json");
    } else if (*sweep) {
      auto in = std::make_shared<const Instance>(build_instance(*cfg));
      std::vector<std::uint64_t> seeds;
      for (std::size_t i = 0; i < seed_count; ++i) seeds.push_back(seed.value_or(0) + i);
      const auto r = complexity_sweep(make_sweep_runner(in, *cfg, sweep_opt), parse_list(eps_list), seeds,
                                      sweep_opt.sample_cap, jobs);
      emit(sweep_json(r), out_dir, "sweep.json");
    } else if (*constants) {
      json j;
      if (cfg) {
        const Instance in = build_instance(*cfg);
        ExperimentConfig c = *cfg;
        c.target_eps = c.target_eps.value_or(eps);
        j = {{"constants", instance_constants(in)}, {"theorem", evaluate_theorem(in, c).report}};
      } else {
        require(all_ones, ErrorKind::config, "constants needs --config or --all-ones");
        if (algo == "linear-tdc") {
          j = theorem_json(theorem1_config(1, 1, 1, 1, 1, kappa, rho, eps, delta0, 1e300));
        } else if (algo == "nonlinear-tdc") {
          const auto l = make_ledger(ModelConstants{1, 1, 1, 1, 1, 1, 1}, 1.0, gamma, 1.0, 1.0);
          j = theorem_json(theorem2_config(l, kappa, rho, eps, J0, w0_err, 1e300));
        } else {
          j = theorem_json(theorem3_config(1, 1, 1, 1, 1, 1, kappa, rho, eps, J0, w0_err, 1e300));
        }
      }
      emit(j, out_dir, "constants.json");
    }
  } catch (const Error& e) {
    std::cerr << "ttsa: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "ttsa: internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
