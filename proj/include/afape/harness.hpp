#pragma once

// Config-driven experiment runner: data -> splits -> classifier / policies ->
// nuisances -> semi-offline rollouts -> estimates, convergence and diagnostics.

#include "afape/core.hpp"
#include "afape/datagen.hpp"
#include "afape/policy.hpp"

#include <json.hpp>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace afape {

// Recognised estimator names.
const std::vector<std::string>& known_estimators();

// Validated configuration with every default filled in. `json` is what gets
// written as config.resolved.json.
struct ExperimentConfig {
  nlohmann::json json;
};

// Validates and resolves defaults. Throws ConfigError.
ExperimentConfig parse_config(const nlohmann::json& raw);
nlohmann::json load_json_file(const std::string& path);

// Applies "dotted.key=value" to a raw config. The value is parsed as JSON when
// possible and taken as a string otherwise.
void apply_override(nlohmann::json& raw, const std::string& assignment);

struct ConvergencePoint {
  std::string estimator;
  std::string policy;
  Target target = Target::Misclassification;
  std::size_t n = 0;
  double estimate = 0.0;
  std::optional<double> ci_low;
  std::optional<double> ci_high;
};

struct ExperimentResult {
  std::vector<EstimateReport> reports;
  std::vector<ConvergencePoint> convergence;
  nlohmann::json diagnostics;
  nlohmann::json resolved_config;

  const EstimateReport& report(const std::string& estimator, const std::string& policy, Target target) const;
};

// Data, splits, costs and classifier shared by every policy of a run.
struct ExperimentContext {
  SuperfeatureSchema schema;
  std::optional<MissingnessMechanism> mechanism;
  CostSpec costs;
  ObservedDataset observed;
  std::optional<FullDataset> full;
  ObservedDataset train, nuisance, test;
  std::optional<FullDataset> test_full;
  std::shared_ptr<const Classifier> classifier;
};

ExperimentContext prepare_experiment(const ExperimentConfig& config);
// Policy `index` of the config; greedy policies are fit on the train split.
std::shared_ptr<const Policy> build_policy(const ExperimentConfig& config, const ExperimentContext& context,
                                           std::size_t index, unsigned threads = 0);
// The configured simulation policy for `target`.
std::shared_ptr<const Policy> simulation_policy(const ExperimentConfig& config, std::shared_ptr<const Policy> target);

// {1, 2, 5} x 10^k below n, then n itself.
std::vector<std::size_t> convergence_checkpoints(std::size_t n);

ExperimentResult run_experiment(const ExperimentConfig& config, unsigned threads = 0);

// estimates.csv, estimates.json, convergence.csv, diagnostics.json,
// config.resolved.json. Creates the directory.
void write_experiment(const ExperimentResult& result, const std::string& directory);

}  // namespace afape
