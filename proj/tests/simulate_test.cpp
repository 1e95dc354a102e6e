#include "afape/datagen.hpp"
#include "afape/estimators.hpp"
#include "afape/simulate.hpp"
#include "afape/tiny_env.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace afape;

namespace {

struct Fixture {
  SuperfeatureSchema schema = synthetic_schema();
  FullDataset full;
  ObservedDataset observed;
  CostSpec costs;
  MajorityClassifier majority{1, 2};

  explicit Fixture(std::size_t n) {
    full = generate_synthetic(n, synthetic_covariance(), 41);
    observed = apply_missingness(full, schema, synthetic_mar_mechanism(), 42);
    costs = CostSpec::from_schema(schema, 14.0);
  }
};

}  // namespace

TEST(Rollout, FullyObservedRowsHaveEqualPolicies) {
  Fixture s(300);
  const SubsetRandomPolicy pi(0.5);
  const auto traj = rollout_ground_truth(s.full, s.schema, pi, s.majority, s.costs, {2, 1, 1});
  ASSERT_EQ(traj.size(), 600u);
  for (const auto& t : traj) {
    for (const auto& st : t.steps) EXPECT_EQ(st.p_alpha, st.p_sim);
    EXPECT_FALSE(t.forced_stop);
  }
}

TEST(Rollout, MissingSuperfeaturesAreNeverAcquired) {
  Fixture s(2000);
  const SubsetRandomPolicy pi(0.9);
  const auto traj = rollout_semi_offline(s.observed, pi, pi, s.majority, s.costs, {1, 5, 2});
  for (const auto& t : traj) {
    for (const auto& st : t.steps) {
      if (st.action != kStop) EXPECT_TRUE(s.observed.observed(t.row, static_cast<std::size_t>(st.action)));
      EXPECT_GT(st.p_sim, 0.0);
    }
    EXPECT_FALSE(t.forced_stop);
  }
}

TEST(Rollout, ForcedStopOnIncompleteRows) {
  Fixture s(2000);
  const FixedSequencePolicy all({1, 2});
  const auto traj = rollout_semi_offline(s.observed, all, all, s.majority, s.costs, {1, 5, 2});
  for (const auto& t : traj) {
    EXPECT_EQ(t.forced_stop, !s.observed.complete(t.row));
    EXPECT_EQ(t.steps.back().p_alpha, t.forced_stop ? 0.0 : 1.0);
  }
}

TEST(Rollout, StopAlwaysWithMajorityClass) {
  // P(Y=1) = 0.5 + 0.5 * 0.3 for any zero-mean symmetric design.
  Fixture s(100000);
  const FixedSequencePolicy stop({});
  const auto traj = rollout_ground_truth(s.full, s.schema, stop, s.majority, s.costs, {1, 0, 0});
  const auto r = estimate_ground_truth(traj, s.full.rows(), Target::Misclassification);
  const double sd = 14.0 * std::sqrt(0.35 * 0.65 / 100000);
  EXPECT_NEAR(r.point, 4.9, 3 * sd);
  EXPECT_EQ(estimate_ground_truth(traj, s.full.rows(), Target::Acquisition).point, 0.0);
}

TEST(Rollout, FixedSequenceCostAccounting) {
  Fixture s(50);
  auto costs = s.costs;
  costs.acquisition = {0.0, 1.5, 2.5};
  const FixedSequencePolicy pi({2, 1});
  const auto traj = rollout_ground_truth(s.full, s.schema, pi, s.majority, costs, {1, 0, 1});
  for (const auto& t : traj) {
    ASSERT_EQ(t.steps.size(), 3u);
    EXPECT_EQ(t.steps[0].action, 2);
    EXPECT_EQ(t.acquisition_cost(), 4.0);
    EXPECT_EQ(t.total_cost(), 4.0 + t.mc_cost);
    EXPECT_EQ(trajectory_cost(t, Target::Acquisition), 4.0);
    EXPECT_TRUE(t.mc_cost == 0.0 || t.mc_cost == 14.0);
  }
}

TEST(Rollout, MoreTrajectoriesPerRowAgree) {
  Fixture s(20000);
  const SubsetRandomPolicy pi(0.5);
  const auto one = rollout_semi_offline(s.observed, pi, pi, s.majority, s.costs, {1, 3, 0});
  const auto ten = rollout_semi_offline(s.observed, pi, pi, s.majority, s.costs, {10, 3, 0});
  const double a = estimate_blocking(one, s.observed.rows(), Target::Acquisition).point;
  const double b = estimate_blocking(ten, s.observed.rows(), Target::Acquisition).point;
  EXPECT_NEAR(a, b, 0.02);
  EXPECT_EQ(ten[37].row, 3u);
  EXPECT_EQ(ten[37].episode, 7u);
}

TEST(Rollout, DeterministicAndThreadInvariant) {
  Fixture s(3000);
  const SubsetRandomPolicy pi(0.5);
  std::ostringstream a, b;
  write_trajectories_csv(a, rollout_semi_offline(s.observed, pi, pi, s.majority, s.costs, {2, 9, 1}));
  write_trajectories_csv(b, rollout_semi_offline(s.observed, pi, pi, s.majority, s.costs, {2, 9, 4}));
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str().find("TERMINAL"), std::string::npos);
}

TEST(Rollout, OffPolicySimulationRecordsBothProbabilities) {
  Fixture s(500);
  const SubsetRandomPolicy target(0.9), sim(0.5);
  const auto traj = rollout_semi_offline(s.observed, sim, target, s.majority, s.costs, {1, 4, 1});
  for (const auto& t : traj) {
    const auto& first = t.steps.front();
    const double expected = first.action == kStop ? 0.01 : 0.99 / 2;
    EXPECT_NEAR(first.p_alpha, expected, 1e-12);
    EXPECT_EQ(first.target_probs.size(), 4u);
  }
}

TEST(Rollout, ZeroTrajectoriesPerRowIsAConfigError) {
  Fixture s(10);
  const SubsetRandomPolicy pi(0.5);
  EXPECT_THROW(rollout_semi_offline(s.observed, pi, pi, s.majority, s.costs, {0, 0, 1}), ConfigError);
}

TEST(Enumeration, PathProbabilitiesSumToOnePerRow) {
  const auto env = make_tiny_environment(0.5);
  const auto traj = enumerate_semi_offline(env.observed, *env.policy, *env.policy, *env.classifier, env.costs);
  std::vector<double> mass(env.observed.rows(), 0.0);
  for (const auto& t : traj) mass[t.row] += t.weight;
  for (double m : mass) EXPECT_NEAR(m, 1.0, 1e-12);
}

TEST(Enumeration, ExactValueOfTinyEnvironment) {
  const auto env = make_tiny_environment(0.5);
  EXPECT_DOUBLE_EQ(tiny_exact_value(env, Target::Total), 2.6640625);
  EXPECT_DOUBLE_EQ(tiny_exact_value(env, Target::Total),
                   tiny_exact_value(env, Target::Misclassification) + tiny_exact_value(env, Target::Acquisition));
  // Random policy acquires each of the two costly features with probability 1/2.
  EXPECT_DOUBLE_EQ(tiny_exact_value(env, Target::Acquisition), 1.0);
}
