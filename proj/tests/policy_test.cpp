#include "afape/datagen.hpp"
#include "afape/policy.hpp"
#include "afape/rng.hpp"
#include "afape/simulate.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>

using namespace afape;

namespace {

std::vector<double> zeros(const SuperfeatureSchema& s) { return std::vector<double>(s.raw_width(), 0.0); }

ObservedDataset sign_of_x0(std::size_t n, std::uint64_t seed) {
  auto full = generate_synthetic(n, Matrix::Identity(4, 4), seed);
  std::vector<int> y(n);
  for (std::size_t r = 0; r < n; ++r) y[r] = full.row(r)[0] > 0 ? 1 : 0;
  return ObservedDataset::fully_observed(FullDataset(full.features(), y), synthetic_schema());
}

}  // namespace

TEST(SubsetPolicy, ClosedFormSteps) {
  auto [a, s] = subset_policy_step(0.3, 0, 1);
  EXPECT_DOUBLE_EQ(a, 0.3);
  EXPECT_DOUBLE_EQ(s, 0.7);
  std::tie(a, s) = subset_policy_step(0.5, 0, 2);
  EXPECT_DOUBLE_EQ(a, 0.375);
  EXPECT_DOUBLE_EQ(s, 0.25);
  std::tie(a, s) = subset_policy_step(0.0, 0, 3);
  EXPECT_EQ(a, 0.0);
  EXPECT_EQ(s, 1.0);
  std::tie(a, s) = subset_policy_step(0.5, 2, 0);
  EXPECT_EQ(s, 1.0);
}

TEST(SubsetPolicy, ExchangeableAcrossCandidates) {
  const auto schema = SuperfeatureSchema::singletons({0, 1, 1, 1, 1});
  const SubsetRandomPolicy pi(0.4);
  const auto row = zeros(schema);
  AcquisitionState st(schema, row);
  st.acquire(2, row);
  const auto d = pi.probs(st);
  EXPECT_EQ(d.prob(0), 0.0);
  EXPECT_EQ(d.prob(2), 0.0);
  EXPECT_DOUBLE_EQ(d.prob(1), d.prob(3));
  EXPECT_DOUBLE_EQ(d.prob(3), d.prob(4));
  double total = 0;
  for (double p : d.probs) total += p;
  EXPECT_NEAR(total, 1.0, 1e-15);
}

TEST(SubsetPolicy, MarginalSubsetLaw) {
  // Each costly superfeature is acquired with probability p, independently.
  const auto schema = SuperfeatureSchema::singletons({0, 1, 1, 1});
  const SubsetRandomPolicy pi(0.3);
  const std::size_t n = 100000;
  const auto row = zeros(schema);
  std::map<int, double> size_counts;
  double first = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto rng = keyed_stream(99, {i});
    AcquisitionState st(schema, row);
    int k = 0;
    for (;;) {
      const int a = pi.probs(st).sample(uniform01(rng));
      if (a == kStop) break;
      st.acquire(static_cast<std::size_t>(a), row);
      ++k;
    }
    size_counts[k] += 1;
    first += st.has(1);
  }
  const double sd = std::sqrt(0.3 * 0.7 / n);
  EXPECT_NEAR(first / n, 0.3, 3 * sd);
  const double p0 = 0.343;
  EXPECT_NEAR(size_counts[0] / n, p0, 3 * std::sqrt(p0 * (1 - p0) / n));
  const double p3 = 0.027;
  EXPECT_NEAR(size_counts[3] / n, p3, 3 * std::sqrt(p3 * (1 - p3) / n));
}

TEST(Blocking, RenormalizesAvailableMass) {
  ActionDistribution base{{0.4, 0.4, 0.2}};
  const Mask mask{1, 0};
  const auto b = block_policy(base, mask);
  EXPECT_FALSE(b.forced);
  EXPECT_DOUBLE_EQ(b.probs[0], 2.0 / 3.0);
  EXPECT_EQ(b.probs[1], 0.0);
  EXPECT_DOUBLE_EQ(b.stop(), 1.0 / 3.0);
}

TEST(Blocking, ForcedStopWhenNothingSurvives) {
  ActionDistribution base{{0.0, 1.0, 0.0}};
  const Mask mask{1, 0};
  const auto b = block_policy(base, mask);
  EXPECT_TRUE(b.forced);
  EXPECT_EQ(b.stop(), 1.0);
  EXPECT_EQ(b.probs[0], 0.0);
}

TEST(Blocking, PreservesRatiosAmongAvailable) {
  ActionDistribution base{{0.1, 0.3, 0.2, 0.4}};
  const Mask mask{1, 0, 1};
  const auto b = block_policy(base, mask);
  EXPECT_DOUBLE_EQ(b.probs[0] / b.probs[2], 0.5);
  EXPECT_DOUBLE_EQ(b.probs[2] / b.probs[3], 0.5);
  EXPECT_NEAR(b.probs[0] + b.probs[2] + b.probs[3], 1.0, 1e-15);
}

TEST(ActionSample, InverseCdf) {
  ActionDistribution d{{0.25, 0.25, 0.5}};
  EXPECT_EQ(d.sample(0.1), 0);
  EXPECT_EQ(d.sample(0.3), 1);
  EXPECT_EQ(d.sample(0.9), kStop);
}

TEST(FixedSequence, SkipsAcquiredThenStops) {
  const auto schema = synthetic_schema();
  const FixedSequencePolicy pi({2, 1});
  const auto row = zeros(schema);
  AcquisitionState st(schema, row);
  EXPECT_EQ(pi.probs(st).prob(2), 1.0);
  st.acquire(1, row);
  EXPECT_EQ(pi.probs(st).prob(2), 1.0);
  st.acquire(2, row);
  EXPECT_EQ(pi.probs(st).stop(), 1.0);
}

TEST(Classifier, LearnsThresholdOnFreeFeature) {
  const auto train = sign_of_x0(5000, 1);
  const auto test = sign_of_x0(2000, 2);
  const auto clf = fit_classifier(train, 0.5, 3);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < test.rows(); ++r) {
    const AcquisitionState st(test.schema(), test.row(r).values);
    correct += clf.predict(st) == test.label(r);
  }
  EXPECT_GT(static_cast<double>(correct) / test.rows(), 0.95);
}

TEST(Classifier, DeterministicAndOrderInvariant) {
  const auto train = sign_of_x0(1000, 4);
  const auto a = fit_classifier(train, 0.5, 7);
  const auto b = fit_classifier(train, 0.5, 7);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  const auto row = train.row(10).values;
  const AcquisitionState st(train.schema(), row);
  EXPECT_EQ(a.predict_proba(st), b.predict_proba(st));
  // Full-information fit ignores the subsample seed and the row order.
  std::vector<std::size_t> rev(train.rows());
  for (std::size_t i = 0; i < rev.size(); ++i) rev[i] = rev.size() - 1 - i;
  const auto c = fit_classifier(train, 0.0, 1);
  const auto d = fit_classifier(train.subset(rev), 0.0, 2);
  EXPECT_NEAR(c.predict_proba(st)[1], d.predict_proba(st)[1], 1e-9);
}

TEST(Classifier, SingleClassIsRejected) {
  const auto schema = synthetic_schema();
  Matrix x = Matrix::Zero(5, 4);
  const ObservedDataset d(schema, x, Mask(15, 1), std::vector<int>(5, 1));
  EXPECT_THROW(fit_classifier(d, 0.5, 0), Error);
  const auto maj = fit_majority_classifier(d);
  const auto row = zeros(schema);
  EXPECT_EQ(maj.predict(AcquisitionState(schema, row)), 1);
}

TEST(Greedy, StopsWhenAcquisitionOutweighsError) {
  const auto data = sign_of_x0(400, 5);
  const auto clf = fit_classifier(data, 0.5, 1);
  const SubsetRandomPolicy explore(0.5);
  auto costs = CostSpec::from_schema(data.schema(), 0.5);
  costs.acquisition = {0.0, 2.0, 2.0};
  const auto traj = rollout_semi_offline(data, explore, explore, clf, costs, {2, 3, 1});
  GreedyOptions o;
  o.regressor = "ridge";
  const auto g = fit_greedy_policy(data, traj, costs, o);
  for (std::size_t r = 0; r < 20; ++r) {
    const AcquisitionState st(data.schema(), data.row(r).values);
    EXPECT_EQ(g.probs(st).stop(), 1.0);
  }
}

TEST(Checkpoint, PolicyRoundTripAndSchemaGuard) {
  const auto schema = synthetic_schema();
  const SubsetRandomPolicy pi(0.25);
  const auto j = checkpoint(pi, schema);
  const auto back = policy_from_checkpoint(j, schema);
  const auto row = zeros(schema);
  const AcquisitionState st(schema, row);
  EXPECT_EQ(back->probs(st).probs, pi.probs(st).probs);
  const auto other = SuperfeatureSchema::singletons({0, 1, 1, 1});
  EXPECT_THROW(policy_from_checkpoint(j, other), Error);
}

TEST(Checkpoint, ClassifierRoundTrip) {
  const auto train = sign_of_x0(500, 6);
  const auto clf = fit_classifier(train, 0.5, 2);
  const auto back = classifier_from_checkpoint(checkpoint(clf, train.schema()), train.schema());
  const AcquisitionState st(train.schema(), train.row(3).values);
  EXPECT_EQ(back->predict_proba(st), clf.predict_proba(st));
}
