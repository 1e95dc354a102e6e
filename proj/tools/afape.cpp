// afape command line: generate, simulate, estimate, experiment, oracle, count-traj.

#include "afape/datagen.hpp"
#include "afape/estimators.hpp"
#include "afape/harness.hpp"
#include "afape/simulate.hpp"
#include "afape/tiny_env.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitOracle = 3;

afape::ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  auto raw = afape::load_json_file(path);
  for (const auto& o : overrides) afape::apply_override(raw, o);
  return afape::parse_config(raw);
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw afape::Error("cannot write " + path);
  return out;
}

std::size_t policy_index(const afape::ExperimentConfig& config, const std::string& name) {
  const auto& policies = config.json.at("policies");
  if (name.empty()) return 0;
  for (std::size_t i = 0; i < policies.size(); ++i) {
    if (policies[i].at("name") == name) return i;
  }
  throw afape::ConfigError("no policy named '" + name + "' in the config");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evaluate active feature acquisition policies from retrospective data with missingness"};
  app.require_subcommand(1);
  unsigned threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: AFAPE_THREADS or all cores)");

  std::string config_path;
  std::vector<std::string> overrides;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "Override a config key, e.g. --set data.n=20000");
  };

  auto* generate = app.add_subcommand("generate", "Write the observed (and optionally full) dataset of a config");
  add_config(generate);
  std::string out_path, full_path;
  generate->add_option("--out", out_path, "Observed dataset CSV")->required();
  generate->add_option("--full", full_path, "Fully observed dataset CSV");

  auto* simulate = app.add_subcommand("simulate", "Semi-offline rollouts of one policy on the test split");
  add_config(simulate);
  std::string policy_name;
  simulate->add_option("--policy", policy_name, "Policy name (default: first)");
  simulate->add_option("--out", out_path, "Trajectory CSV")->required();

  auto* estimate = app.add_subcommand("estimate", "Run the configured estimators and print the estimates CSV");
  add_config(estimate);
  estimate->add_option("--out", out_path, "Write the CSV here instead of stdout");

  auto* experiment = app.add_subcommand("experiment", "Run a full experiment and write its report directory");
  add_config(experiment);
  std::string out_dir;
  experiment->add_option("--out", out_dir, "Output directory (default: config output_dir)");

  auto* oracle = app.add_subcommand("oracle", "Check every estimator against exact enumeration on a tiny environment");
  afape::OracleOptions oopts;
  std::string target_name = "J_total";
  std::string oracle_config;
  oracle->add_option("--config", oracle_config, "Tiny-instance config (JSON); its keys take precedence over flags")
      ->check(CLI::ExistingFile);
  oracle->add_option("--target", target_name, "J_mc, J_a or J_total")->capture_default_str();
  oracle->add_option("--n", oopts.n_trajectories, "Monte Carlo trajectories")->capture_default_str();
  oracle->add_option("--seed", oopts.seed, "Rollout seed")->capture_default_str();
  oracle->add_option("--p", oopts.p_acquire, "Acquisition probability of the random policy")->capture_default_str();
  oracle->add_flag("--corrupt-propensity", oopts.corrupt_propensity, "Zero the propensity coefficients");
  oracle->add_flag("--corrupt-q", oopts.corrupt_q, "Replace Q by a biased transform");

  auto* count = app.add_subcommand("count-traj", "Number of semi-offline trajectories over m features");
  std::uint64_t m = 0;
  count->add_option("m", m, "Number of acquirable features")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) {
      const auto config = load_config(config_path, overrides);
      const auto ctx = afape::prepare_experiment(config);
      auto out = open_output(out_path);
      afape::write_csv(out, ctx.observed);
      if (!full_path.empty()) {
        if (!ctx.full) throw afape::ConfigError("the config has no fully observed data");
        auto full_out = open_output(full_path);
        afape::write_csv(full_out, afape::ObservedDataset::fully_observed(*ctx.full, ctx.schema));
      }
      std::cerr << "wrote " << ctx.observed.rows() << " rows, complete fraction "
                << ctx.observed.complete_fraction() << '\n';
    } else if (simulate->parsed()) {
      const auto config = load_config(config_path, overrides);
      const auto ctx = afape::prepare_experiment(config);
      const auto index = policy_index(config, policy_name);
      const auto policy = afape::build_policy(config, ctx, index, threads);
      const auto sim = afape::simulation_policy(config, policy);
      const afape::RolloutOptions ro{config.json["n_traj_per_row"].get<std::size_t>(),
                                     config.json["seeds"]["experiment"].get<std::uint64_t>(), threads};
      const auto trajectories = afape::rollout_semi_offline(ctx.test, *sim, *policy, *ctx.classifier, ctx.costs, ro);
      auto out = open_output(out_path);
      afape::write_trajectories_csv(out, trajectories);
    } else if (estimate->parsed()) {
      auto raw = afape::load_json_file(config_path);
      for (const auto& o : overrides) afape::apply_override(raw, o);
      raw["bootstrap"]["convergence"] = false;
      const auto result = afape::run_experiment(afape::parse_config(raw), threads);
      if (out_path.empty()) {
        afape::write_reports_csv(std::cout, result.reports);
      } else {
        auto out = open_output(out_path);
        afape::write_reports_csv(out, result.reports);
      }
    } else if (experiment->parsed()) {
      const auto config = load_config(config_path, overrides);
      const auto dir = out_dir.empty() ? config.json["output_dir"].get<std::string>() : out_dir;
      const auto result = afape::run_experiment(config, threads);
      afape::write_experiment(result, dir);
      afape::write_reports_csv(std::cout, result.reports);
    } else if (oracle->parsed()) {
      if (!oracle_config.empty()) {
        const auto j = afape::load_json_file(oracle_config);
        for (const auto& [k, v] : j.items()) {
          if (k == "target") target_name = v.get<std::string>();
          else if (k == "n_trajectories") oopts.n_trajectories = v.get<std::size_t>();
          else if (k == "seed") oopts.seed = v.get<std::uint64_t>();
          else if (k == "p_acquire") oopts.p_acquire = v.get<double>();
          else if (k == "corrupt_propensity") oopts.corrupt_propensity = v.get<bool>();
          else if (k == "corrupt_q") oopts.corrupt_q = v.get<bool>();
          else throw afape::ConfigError("unknown oracle config key '" + k + "'");
        }
      }
      if (!(oopts.p_acquire > 0.0 && oopts.p_acquire < 1.0)) throw afape::ConfigError("oracle p must lie in (0, 1)");
      oopts.target = afape::parse_target(target_name);
      oopts.threads = threads;
      const auto report = afape::run_oracle_suite(oopts);
      report.print(std::cout);
      return report.ok() ? 0 : kExitOracle;
    } else if (count->parsed()) {
      std::cout << afape::count_trajectories(m) << '\n';
    }
  } catch (const afape::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
