#pragma once

// Point estimators of J_mc / J_a / J_total, bootstrap intervals and
// positivity diagnostics.
//
// Every estimator reduces to per-row sums so that bootstrap replicates and
// convergence prefixes are cheap folds with no refitting:
//   estimate = sum(direct)/sum(count) + sum(weighted)/D
// where D = sum(count) for RAW weights and D = sum(normalizer) (the summed
// final weights) for SELF_NORMALIZED weights.

#include "afape/core.hpp"
#include "afape/nuisance.hpp"
#include "afape/policy.hpp"
#include "afape/simulate.hpp"

#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace afape {

enum class Normalization { Raw, SelfNormalized };

struct RowSums {
  double direct = 0.0;
  double weighted = 0.0;
  double normalizer = 0.0;
  double count = 0.0;
};

struct RowContributions {
  std::vector<RowSums> rows;
  std::size_t n_trajectories = 0;

  double estimate(Normalization mode) const { return estimate_prefix(rows.size(), mode); }
  double estimate_prefix(std::size_t n_rows, Normalization mode) const;
  // Row r enters counts[r] times.
  double estimate_counts(std::span<const std::uint32_t> counts, Normalization mode) const;
};

// Per-step cost C^t for the chosen target.
double step_cost(const Trajectory& trajectory, std::size_t step, Target target);
double trajectory_cost(const Trajectory& trajectory, Target target);

// Unweighted mean of trajectory costs (ground truth on complete data, or the
// Blocking baseline on semi-offline data).
RowContributions mean_cost_contributions(const std::vector<Trajectory>& trajectories, std::size_t n_rows,
                                         Target target);
// Unweighted mean over rows whose mask is all ones.
RowContributions complete_case_contributions(const std::vector<Trajectory>& trajectories, const ObservedDataset& data,
                                             Target target);
// Complete rows weighted by I(R = 1)/P(R = 1 | .), times target/simulation
// policy ratios when those differ.
RowContributions ipw_miss_contributions(const std::vector<Trajectory>& trajectories, const ObservedDataset& data,
                                        const PropensityModel& propensity, Target target);
// Semi-offline IPW; with a nonempty adjustment set this is the hybrid
// estimator for MNAR data.
RowContributions ipw_semi_contributions(const std::vector<Trajectory>& trajectories, const ObservedDataset& data,
                                        const PropensityModel& propensity, Target target,
                                        const std::vector<std::size_t>& adjustment = {});
// Single-trajectory terms of the semi-offline estimators.
RowSums ipw_semi_trajectory(const Trajectory& trajectory, const ObservedDataset& data,
                            const PropensityModel& propensity, Target target,
                            const std::vector<std::size_t>& adjustment = {});
RowSums drl_semi_trajectory(const Trajectory& trajectory, const ObservedDataset& data,
                            const PropensityModel& propensity, const QModel& q, Target target);
// Diagnostic only: self-normalized IPW-Semi with every rho^t capped at `clip`.
// Clipping biases the estimate; it is never used as a reported point.
double clipped_ipw_semi_estimate(const std::vector<Trajectory>& trajectories, const ObservedDataset& data,
                                 const PropensityModel& propensity, Target target, double clip,
                                 const std::vector<std::size_t>& adjustment = {});
RowContributions dm_semi_contributions(const QModel& q, const ObservedDataset& data, const Policy& target_policy);
RowContributions drl_semi_contributions(const std::vector<Trajectory>& trajectories, const ObservedDataset& data,
                                        const PropensityModel& propensity, const QModel& q, Target target);

struct BootstrapOptions {
  std::size_t replicates = 200;
  double level = 0.95;
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

// Percentile interval over row resamples. `estimator` maps per-row
// multiplicities to an estimate.
std::pair<double, double> bootstrap_ci(std::size_t n_rows,
                                       const std::function<double(std::span<const std::uint32_t>)>& estimator,
                                       const BootstrapOptions& options);
// Interval for the first `n_rows` rows of the contributions.
std::pair<double, double> bootstrap_ci(const RowContributions& contributions, Normalization mode,
                                       const BootstrapOptions& options, std::size_t n_rows);

std::map<std::string, double> positivity_diagnostics(const std::vector<Trajectory>& trajectories,
                                                     const ObservedDataset& data, const PropensityModel& propensity,
                                                     const std::vector<std::size_t>& adjustment = {});

struct EstimateOptions {
  Normalization normalization = Normalization::SelfNormalized;
  std::optional<BootstrapOptions> bootstrap;
};

// Point estimate, optional interval (ci_low <= point <= ci_high) and counts.
EstimateReport make_report(const std::string& estimator, Target target, const RowContributions& contributions,
                           const EstimateOptions& options);

// Convenience wrappers that return full reports.
EstimateReport estimate_ground_truth(const std::vector<Trajectory>& trajectories, std::size_t n_rows, Target target,
                                     const EstimateOptions& options = {});
EstimateReport estimate_blocking(const std::vector<Trajectory>& trajectories, std::size_t n_rows, Target target,
                                 const EstimateOptions& options = {});
EstimateReport estimate_cc(const std::vector<Trajectory>& trajectories, const ObservedDataset& data, Target target,
                           const EstimateOptions& options = {});
// Replaces missing values with `fill` and rolls out as if complete.
EstimateReport estimate_imp_mean(const ObservedDataset& data, std::span<const double> fill, const Policy& policy,
                                 const Classifier& classifier, const CostSpec& costs, Target target,
                                 const RolloutOptions& rollout, const EstimateOptions& options = {});
RowContributions imp_mean_contributions(const ObservedDataset& data, std::span<const double> fill,
                                        const Policy& policy, const Classifier& classifier, const CostSpec& costs,
                                        Target target, const RolloutOptions& rollout);
EstimateReport estimate_ipw_miss(const std::vector<Trajectory>& trajectories, const ObservedDataset& data,
                                 const PropensityModel& propensity, Target target, const EstimateOptions& options = {});
EstimateReport estimate_ipw_semi(const std::vector<Trajectory>& trajectories, const ObservedDataset& data,
                                 const PropensityModel& propensity, Target target, const EstimateOptions& options = {});
EstimateReport estimate_dm_semi(const QModel& q, const ObservedDataset& data, const Policy& target_policy, Target target,
                                const EstimateOptions& options = {});
EstimateReport estimate_drl_semi(const std::vector<Trajectory>& trajectories, const ObservedDataset& data,
                                 const PropensityModel& propensity, const QModel& q, Target target,
                                 const EstimateOptions& options = {});
EstimateReport estimate_ipw_semi_miss(const std::vector<Trajectory>& trajectories, const ObservedDataset& data,
                                      const PropensityModel& propensity, const std::vector<std::size_t>& adjustment,
                                      Target target, const EstimateOptions& options = {});

// One row per report: estimator, policy, target, point, ci_low, ci_high,
// n_rows, n_traj, ess, mean_weight, floored, forced_stop_frac.
void write_reports_csv(std::ostream& out, const std::vector<EstimateReport>& reports);
nlohmann::json to_json(const EstimateReport& report);

}  // namespace afape
