#include "afape/simulate.hpp"

#include "afape/datagen.hpp"
#include "afape/parallel.hpp"
#include "afape/rng.hpp"

#include <ostream>

namespace afape {

namespace {

struct StepChoice {
  int action;
  TrajectoryStep step;
  bool forced;
};

StepChoice describe(const AcquisitionState& state, int action, const ActionDistribution& target,
                    const ActionDistribution& blocked, const CostSpec& costs) {
  TrajectoryStep step;
  step.action = action;
  step.p_alpha = target.prob(action);
  step.p_sim = blocked.prob(action);
  step.acquisition_cost = action == kStop ? 0.0 : costs.acquisition[static_cast<std::size_t>(action)];
  step.target_probs = target.probs;
  (void)state;
  return {action, std::move(step), blocked.forced};
}

void finish(Trajectory& traj, const AcquisitionState& state, const Classifier& classifier, int label,
            const CostSpec& costs) {
  traj.prediction = classifier.predict(state);
  traj.mc_cost = traj.prediction == label ? 0.0 : costs.misclassification;
}

Trajectory run_episode(const SuperfeatureSchema& schema, std::span<const double> source,
                       std::span<const std::uint8_t> mask, int label, const Policy& simulation_policy,
                       const Policy& target_policy, const Classifier& classifier, const CostSpec& costs,
                       std::mt19937_64& rng) {
  Trajectory traj;
  AcquisitionState state(schema, source);
  const bool same = &simulation_policy == &target_policy;
  for (;;) {
    const ActionDistribution target = target_policy.probs(state);
    const ActionDistribution blocked = block_policy(same ? target : simulation_policy.probs(state), mask);
    const int action = blocked.sample(uniform01(rng));
    auto choice = describe(state, action, target, blocked, costs);
    traj.steps.push_back(std::move(choice.step));
    if (action == kStop) {
      traj.forced_stop = choice.forced;
      finish(traj, state, classifier, label, costs);
      return traj;
    }
    state.acquire(static_cast<std::size_t>(action), source);
  }
}

std::vector<Trajectory> rollout(const ObservedDataset& data, const Policy& simulation_policy,
                                const Policy& target_policy, const Classifier& classifier, const CostSpec& costs,
                                const RolloutOptions& options) {
  if (options.n_traj_per_row < 1) throw ConfigError("n_traj_per_row must be at least 1");
  costs.validate(data.schema());
  const std::size_t per_row = options.n_traj_per_row;
  std::vector<Trajectory> out(data.rows() * per_row);
  parallel_for(data.rows(), options.threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      const auto row = data.row(r);
      for (std::size_t e = 0; e < per_row; ++e) {
        auto rng = keyed_stream(options.seed, {r, e});
        auto traj = run_episode(data.schema(), row.values, row.mask, data.label(r), simulation_policy, target_policy,
                                classifier, costs, rng);
        traj.row = r;
        traj.episode = e;
        out[r * per_row + e] = std::move(traj);
      }
    }
  });
  return out;
}

void enumerate_row(const SuperfeatureSchema& schema, std::span<const double> source, std::span<const std::uint8_t> mask,
                   int label, const Policy& simulation_policy, const Policy& target_policy,
                   const Classifier& classifier, const CostSpec& costs, const AcquisitionState& state,
                   Trajectory& prefix, std::vector<Trajectory>& out) {
  const ActionDistribution target = target_policy.probs(state);
  const ActionDistribution blocked =
      block_policy(&simulation_policy == &target_policy ? target : simulation_policy.probs(state), mask);
  for (std::size_t i = 0; i < blocked.probs.size(); ++i) {
    if (!(blocked.probs[i] > 0.0)) continue;
    const int action = i == blocked.stop_index() ? kStop : static_cast<int>(i);
    auto choice = describe(state, action, target, blocked, costs);
    const double weight = prefix.weight;
    prefix.weight *= choice.step.p_sim;
    prefix.steps.push_back(std::move(choice.step));
    if (action == kStop) {
      Trajectory done = prefix;
      done.forced_stop = choice.forced;
      finish(done, state, classifier, label, costs);
      out.push_back(std::move(done));
    } else {
      AcquisitionState next = state;
      next.acquire(static_cast<std::size_t>(action), source);
      enumerate_row(schema, source, mask, label, simulation_policy, target_policy, classifier, costs, next, prefix,
                    out);
    }
    prefix.steps.pop_back();
    prefix.weight = weight;
  }
}

}  // namespace

std::vector<Trajectory> rollout_semi_offline(const ObservedDataset& data, const Policy& simulation_policy,
                                             const Policy& target_policy, const Classifier& classifier,
                                             const CostSpec& costs, const RolloutOptions& options) {
  return rollout(data, simulation_policy, target_policy, classifier, costs, options);
}

std::vector<Trajectory> rollout_ground_truth(const FullDataset& full, const SuperfeatureSchema& schema,
                                             const Policy& policy, const Classifier& classifier, const CostSpec& costs,
                                             const RolloutOptions& options) {
  const auto data = ObservedDataset::fully_observed(full, schema);
  return rollout(data, policy, policy, classifier, costs, options);
}

std::vector<Trajectory> enumerate_semi_offline(const ObservedDataset& data, const Policy& simulation_policy,
                                               const Policy& target_policy, const Classifier& classifier,
                                               const CostSpec& costs) {
  costs.validate(data.schema());
  std::vector<Trajectory> out;
  for (std::size_t r = 0; r < data.rows(); ++r) {
    const auto row = data.row(r);
    Trajectory prefix;
    prefix.row = r;
    const std::size_t first = out.size();
    enumerate_row(data.schema(), row.values, row.mask, data.label(r), simulation_policy, target_policy, classifier,
                  costs, AcquisitionState(data.schema(), row.values), prefix, out);
    for (std::size_t k = first; k < out.size(); ++k) out[k].episode = k - first;
  }
  return out;
}

void write_trajectories_csv(std::ostream& out, const std::vector<Trajectory>& trajectories) {
  out << "row,episode,step,action,p_alpha,p_sim,cost,forced,prediction,mc_cost\n";
  for (const auto& t : trajectories) {
    for (std::size_t s = 0; s < t.steps.size(); ++s) {
      const auto& st = t.steps[s];
      out << t.row << ',' << t.episode << ',' << s << ','
          << (st.action == kStop ? std::string("STOP") : std::to_string(st.action)) << ','
          << format_double(st.p_alpha) << ',' << format_double(st.p_sim) << ','
          << format_double(st.acquisition_cost) << ',' << (st.action == kStop && t.forced_stop ? 1 : 0) << ",,\n";
    }
    out << t.row << ',' << t.episode << ',' << t.steps.size() << ",TERMINAL,,,,"
        << (t.forced_stop ? 1 : 0) << ',' << t.prediction << ',' << format_double(t.mc_cost) << '\n';
  }
}

}  // namespace afape
