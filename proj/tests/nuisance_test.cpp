#include "afape/datagen.hpp"
#include "afape/estimators.hpp"
#include "afape/nuisance.hpp"
#include "afape/simulate.hpp"
#include "afape/tiny_env.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace afape;

namespace {

RowView view(const std::vector<double>& values, const Mask& mask) { return {values, mask}; }

}  // namespace

TEST(Propensity, IndependentConstantFactorsMultiply) {
  const auto schema = SuperfeatureSchema::singletons({0, 1, 1});
  const MissingnessMechanism mcar{{MissingnessRule::always(), MissingnessRule::constant(0.5),
                                   MissingnessRule::constant(0.5)}};
  const auto p = ground_truth_propensity(mcar, schema);
  const std::vector<double> x{0, 0, 0};
  const Mask full{1, 1, 1};
  EXPECT_DOUBLE_EQ(*p.prob_complete(view(x, full)), 0.25);
  EXPECT_DOUBLE_EQ(*p.prob_superset(Mask{1, 1, 0}, view(x, full)), 0.5);
  EXPECT_DOUBLE_EQ(*p.prob_superset(Mask{1, 0, 0}, view(x, full)), 1.0);
  EXPECT_EQ(p.source(), PropensityModel::Source::GroundTruth);
}

TEST(Propensity, GroundTruthMnarFactors) {
  const auto schema = synthetic_schema();
  const auto p = ground_truth_propensity(synthetic_mnar_mechanism(), schema);
  const std::vector<double> x{0.0, 1.5, 0.0, 0.0};
  const Mask all{1, 1, 1};
  EXPECT_DOUBLE_EQ(*p.prob_superset(Mask{1, 1, 0}, view(x, all)), 0.7);
  EXPECT_DOUBLE_EQ(*p.prob_superset(Mask{1, 0, 1}, view(x, all)), 0.5);
  EXPECT_DOUBLE_EQ(*p.prob_complete(view(x, all)), 0.35);
  // Needs X1, which this row lacks.
  EXPECT_FALSE(p.prob_superset(Mask{1, 0, 1}, view(x, Mask{1, 0, 1})).has_value());
}

TEST(Propensity, LearnedMarMatchesCompleteFraction) {
  const auto schema = synthetic_schema();
  const auto full = generate_synthetic(50000, synthetic_covariance(), 51);
  const auto obs = apply_missingness(full, schema, synthetic_mar_mechanism(), 52);
  const auto p = fit_propensity_mar(obs, schema.free_set());
  double mean = 0;
  for (std::size_t r = 0; r < obs.rows(); ++r) mean += *p.prob_complete(obs.row(r));
  EXPECT_NEAR(mean / obs.rows(), obs.complete_fraction(), 0.005);
  EXPECT_NEAR(p.factors()[1].intercept, -0.3, 0.05);
  EXPECT_NEAR(p.factors()[2].terms.at(0).second, 0.6, 0.05);
  EXPECT_EQ(p.source(), PropensityModel::Source::Learned);
}

TEST(Propensity, FreeSetOnlyIsCertain) {
  const auto schema = synthetic_schema();
  const auto p = ground_truth_propensity(synthetic_mar_mechanism(), schema);
  const std::vector<double> x{2.0, 0, 0, 0};
  EXPECT_EQ(*p.prob_superset(Mask{1, 0, 0}, view(x, Mask{1, 0, 0})), 1.0);
}

TEST(Propensity, MonotoneInRequiredSet) {
  const auto schema = synthetic_schema();
  const auto p = ground_truth_propensity(synthetic_mar_mechanism(), schema);
  for (double x0 : {-3.0, -0.5, 0.0, 1.0, 4.0}) {
    const std::vector<double> x{x0, 0, 0, 0};
    const Mask all{1, 1, 1};
    const double one = *p.prob_superset(Mask{1, 1, 0}, view(x, all));
    const double both = *p.prob_complete(view(x, all));
    EXPECT_LE(both, one);
    EXPECT_GT(both, 0.0);
  }
}

TEST(Propensity, MnarPatternModel) {
  const auto schema = synthetic_schema();
  const auto full = generate_synthetic(60000, synthetic_covariance(), 61);
  const auto obs = apply_missingness(full, schema, synthetic_mnar_mechanism(), 62);
  const auto p = fit_propensity_mnar_pattern(obs, {1});
  // R1 is missing completely at random with rate 0.3.
  double mean = 0, count = 0;
  for (std::size_t r = 0; r < obs.rows(); ++r) {
    if (!obs.observed(r, 1)) continue;
    mean += *p.prob_superset(Mask{1, 1, 0}, obs.row(r));
    ++count;
  }
  EXPECT_NEAR(mean / count, 0.7, 3 * std::sqrt(0.21 / 60000.0));
  // Rows without the adjustment set cannot be evaluated.
  std::size_t lacking = 0;
  for (std::size_t r = 0; r < obs.rows() && lacking < 10; ++r) {
    if (obs.observed(r, 1)) continue;
    EXPECT_FALSE(p.prob_complete(obs.row(r)).has_value());
    ++lacking;
  }
  EXPECT_EQ(lacking, 10u);
  // Conditioning on the adjustment column recovers the R2 rule.
  EXPECT_NEAR(p.factors()[2].intercept, -1.5, 0.1);
  EXPECT_THROW(fit_propensity_mnar_pattern(obs, {}), ConfigError);
  EXPECT_THROW(fit_propensity_mnar_pattern(obs, {0}), ConfigError);
}

TEST(Propensity, JsonRoundTrip) {
  const auto schema = synthetic_schema();
  const auto p = ground_truth_propensity(synthetic_mar_mechanism(), schema);
  const auto back = FactorizedPropensity::from_json(p.to_json(), schema);
  const std::vector<double> x{0.7, 0, 0, 0};
  const Mask all{1, 1, 1};
  EXPECT_EQ(*back.prob_complete(view(x, all)), *p.prob_complete(view(x, all)));
  EXPECT_EQ(checkpoint(p, schema).at("schema_hash"), schema.hash());
}

TEST(Propensity, ZeroedCoefficientsKeepIntercepts) {
  const auto schema = synthetic_schema();
  const auto z = ground_truth_propensity(synthetic_mar_mechanism(), schema).zeroed_coefficients();
  const std::vector<double> x{5.0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(*z.prob_superset(Mask{1, 1, 0}, view(x, Mask{1, 1, 1})), sigmoid(-0.3));
}

TEST(Weights, TelescopeToInverseCompleteness) {
  const auto schema = SuperfeatureSchema::singletons({0, 1, 1});
  const MissingnessMechanism mcar{{MissingnessRule::always(), MissingnessRule::constant(0.5),
                                   MissingnessRule::constant(0.8)}};
  const auto p = ground_truth_propensity(mcar, schema);
  Trajectory t;
  t.steps.push_back({1, 0.5, 0.5, 1.0, {}});
  t.steps.push_back({2, 1.0, 1.0, 1.0, {}});
  t.steps.push_back({kStop, 1.0, 1.0, 0.0, {}});
  const std::vector<double> x{0, 0, 0};
  const Mask all{1, 1, 1};
  const auto w = weight_series(t, schema, view(x, all), p);
  ASSERT_EQ(w.rho.size(), 4u);
  EXPECT_DOUBLE_EQ(w.rho[0], 1.0);
  EXPECT_DOUBLE_EQ(w.rho[1], 2.0);
  EXPECT_DOUBLE_EQ(w.rho[2], 2.5);
  EXPECT_DOUBLE_EQ(w.final(), 2.5);
  EXPECT_EQ(w.floored, 0u);
}

TEST(Weights, AdjustmentSetWeightsTheStart) {
  const auto schema = SuperfeatureSchema::singletons({0, 1, 1});
  const MissingnessMechanism mcar{{MissingnessRule::always(), MissingnessRule::constant(0.5),
                                   MissingnessRule::constant(0.8)}};
  const auto p = ground_truth_propensity(mcar, schema);
  Trajectory t;
  t.steps.push_back({kStop, 1.0, 1.0, 0.0, {}});
  const std::vector<double> x{0, 0, 0};
  EXPECT_DOUBLE_EQ(weight_series(t, schema, view(x, Mask{1, 1, 1}), p, {1}).rho[0], 2.0);
  EXPECT_EQ(weight_series(t, schema, view(x, Mask{1, 0, 1}), p, {1}).rho[0], 0.0);
}

TEST(QFit, TabularRecoversExactValue) {
  const auto env = make_tiny_environment(0.5);
  const auto complete = ObservedDataset::fully_observed(env.full, env.schema);
  const auto traj = enumerate_semi_offline(complete, *env.policy, *env.policy, *env.classifier, env.costs);
  for (Target target : {Target::Misclassification, Target::Acquisition, Target::Total}) {
    QFitOptions o;
    o.target = target;
    o.regressor = "tabular";
    const auto q = fit_q_semi(traj, complete, env.schema.free_columns(), o);
    const double dm = dm_semi_contributions(*q, complete, *env.policy).estimate(Normalization::Raw);
    EXPECT_NEAR(dm, tiny_exact_value(env, target), 1e-9) << to_string(target);
  }
}

TEST(QFit, StopAlwaysValueIsMeanMisclassification) {
  const auto env = make_tiny_environment(0.5);
  const auto complete = ObservedDataset::fully_observed(env.full, env.schema);
  const FixedSequencePolicy stop({});
  const auto traj = enumerate_semi_offline(complete, stop, stop, *env.classifier, env.costs);
  QFitOptions o;
  o.target = Target::Total;
  o.regressor = "tabular";
  const auto q = fit_q_semi(traj, complete, env.schema.free_columns(), o);
  const double dm = dm_semi_contributions(*q, complete, stop).estimate(Normalization::Raw);
  const double mc = mean_cost_contributions(traj, complete.rows(), Target::Misclassification)
                        .estimate(Normalization::Raw);
  EXPECT_NEAR(dm, mc, 1e-9);
}

TEST(QFit, PerfectClassifierHasZeroStopValue) {
  const auto schema = SuperfeatureSchema::singletons({0, 1});
  Matrix x(4, 2);
  x << 0, 0, 0, 1, 1, 0, 1, 1;
  const ObservedDataset d(schema, x, Mask(8, 1), {0, 0, 1, 1});
  const auto costs = CostSpec::from_schema(schema, 5.0);
  LogisticFit rule;
  rule.intercept = -20;
  rule.coef = Eigen::VectorXd::Zero(3);
  rule.coef[0] = 40;
  const MeanImputeLogisticClassifier clf({0.5, 0.5}, {1}, {rule}, 2);
  const FixedSequencePolicy stop({});
  const auto traj = enumerate_semi_offline(d, stop, stop, clf, costs);
  QFitOptions o;
  o.target = Target::Total;
  o.regressor = "tabular";
  const auto q = fit_q_semi(traj, d, {}, o);
  for (std::size_t r = 0; r < 4; ++r) {
    const AcquisitionState st(schema, d.row(r).values);
    EXPECT_NEAR(q->q(st, kStop, {}), 0.0, 1e-12);
  }
}

TEST(QFit, WeightedNeedsPropensity) {
  const auto env = make_tiny_environment(0.5);
  const auto traj = enumerate_semi_offline(env.observed, *env.policy, *env.policy, *env.classifier, env.costs);
  QFitOptions o;
  o.weighted = true;
  EXPECT_THROW(fit_q_semi(traj, env.observed, {}, o), ConfigError);
  o.weighted = false;
  o.regressor = "forest";
  EXPECT_THROW(fit_q_semi(traj, env.observed, {}, o), ConfigError);
}

TEST(QFit, CheckpointRoundTrip) {
  const auto env = make_tiny_environment(0.5);
  const auto traj = enumerate_semi_offline(env.observed, *env.policy, *env.policy, *env.classifier, env.costs);
  QFitOptions o;
  o.regressor = "ridge";
  const auto q = fit_q_semi(traj, env.observed, env.schema.free_columns(), o);
  const auto back = FittedQModel::from_json(q->to_json(), env.schema);
  const AcquisitionState st(env.schema, env.full.row(5));
  const std::vector<double> x_o{env.full.row(5)[0]};
  for (int a : {kStop, 1, 2}) EXPECT_EQ(back.q(st, a, x_o), q->q(st, a, x_o));
}
