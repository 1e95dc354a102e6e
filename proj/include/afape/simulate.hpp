#pragma once

// Semi-offline rollouts under blocking, ground-truth rollouts on complete
// data, and exhaustive enumeration for small environments.

#include "afape/core.hpp"
#include "afape/policy.hpp"

#include <iosfwd>
#include <vector>

namespace afape {

struct RolloutOptions {
  std::size_t n_traj_per_row = 1;
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

// Samples from the blocked simulation policy; p_alpha records the unblocked
// target policy. Ordered by (row, episode); episode (r, e) uses stream (seed, r, e).
std::vector<Trajectory> rollout_semi_offline(const ObservedDataset& data, const Policy& simulation_policy,
                                             const Policy& target_policy, const Classifier& classifier,
                                             const CostSpec& costs, const RolloutOptions& options);

// No masking: every superfeature is available and p_sim = p_alpha.
std::vector<Trajectory> rollout_ground_truth(const FullDataset& full, const SuperfeatureSchema& schema,
                                             const Policy& policy, const Classifier& classifier, const CostSpec& costs,
                                             const RolloutOptions& options);

// Every trajectory with positive sampling probability, one row at a time,
// with `weight` set to its path probability under the blocked simulation policy.
std::vector<Trajectory> enumerate_semi_offline(const ObservedDataset& data, const Policy& simulation_policy,
                                               const Policy& target_policy, const Classifier& classifier,
                                               const CostSpec& costs);

// One CSV row per step plus a TERMINAL row carrying prediction and mc_cost.
void write_trajectories_csv(std::ostream& out, const std::vector<Trajectory>& trajectories);

}  // namespace afape
