#include "afape/core.hpp"
#include "afape/datagen.hpp"

#include <gtest/gtest.h>

#include <stdexcept>

using namespace afape;

TEST(CountTrajectories, SmallValues) {
  EXPECT_EQ(count_trajectories(0), 1u);
  EXPECT_EQ(count_trajectories(1), 2u);
  EXPECT_EQ(count_trajectories(2), 5u);
  EXPECT_EQ(count_trajectories(3), 16u);
}

TEST(CountTrajectories, TenFeaturesIsAboutTenMillion) { EXPECT_EQ(count_trajectories(10), 9864101u); }

TEST(CountTrajectories, Recurrence) {
  for (std::uint64_t m = 1; m <= 20; ++m) EXPECT_EQ(count_trajectories(m), 1 + m * count_trajectories(m - 1)) << m;
}

TEST(CountTrajectories, OverflowIsAnError) {
  EXPECT_NO_THROW(count_trajectories(20));
  EXPECT_THROW(count_trajectories(21), std::overflow_error);
  EXPECT_THROW(count_trajectories(1000), std::overflow_error);
}

TEST(Schema, FreeSetIsCostZero) {
  const auto s = synthetic_schema();
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s.raw_width(), 4u);
  EXPECT_EQ(s.free_set(), (std::vector<std::size_t>{0}));
  EXPECT_EQ(s.costly(), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(s.owner(3), 2u);
  EXPECT_EQ(s.columns_of({2}), (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(*s.find("superX1"), 1u);
  EXPECT_FALSE(s.find("nope").has_value());
}

TEST(Schema, ColumnsMustPartition) {
  EXPECT_THROW(SuperfeatureSchema({{"a", {0, 1}, 0.0}, {"b", {1}, 1.0}}), Error);
  EXPECT_THROW(SuperfeatureSchema({{"a", {0}, 0.0}, {"b", {2}, 1.0}}), Error);
  EXPECT_THROW(SuperfeatureSchema({{"a", {}, 0.0}}), Error);
  EXPECT_THROW(SuperfeatureSchema({{"a", {0}, -1.0}}), Error);
}

TEST(Schema, HashSeparatesSchemas) {
  const auto a = SuperfeatureSchema::singletons({0.0, 1.0});
  const auto b = SuperfeatureSchema::singletons({0.0, 2.0});
  EXPECT_EQ(a.hash(), SuperfeatureSchema::singletons({0.0, 1.0}).hash());
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_TRUE(a == SuperfeatureSchema::singletons({0.0, 1.0}));
}

TEST(CostSpec, FreeSetMustCostZero) {
  const auto s = synthetic_schema();
  auto c = CostSpec::from_schema(s, 14.0);
  EXPECT_EQ(c.acquisition, (std::vector<double>{0.0, 1.0, 1.0}));
  EXPECT_NO_THROW(c.validate(s));
  c.acquisition[0] = 0.5;
  EXPECT_THROW(c.validate(s), Error);
  EXPECT_THROW(CostSpec::from_schema(s, 0.0), Error);
}

TEST(ObservedDataset, FreeSuperfeaturesMustBeObserved) {
  const auto s = SuperfeatureSchema::singletons({0.0, 1.0});
  Matrix x(1, 2);
  x << 1.0, 2.0;
  EXPECT_THROW(ObservedDataset(s, x, Mask{0, 1}, {0}), Error);
  const ObservedDataset ok(s, x, Mask{1, 0}, {0});
  EXPECT_EQ(ok.value(0, 0), 1.0);
  EXPECT_FALSE(ok.value(0, 1).has_value());
  EXPECT_FALSE(ok.complete(0));
}

TEST(ObservedDataset, MaskingRoundTripsObservedValues) {
  const auto schema = synthetic_schema();
  const auto full = generate_synthetic(500, Matrix::Identity(4, 4), 3);
  const auto obs = apply_missingness(full, schema, synthetic_mar_mechanism(), 4);
  std::size_t seen = 0;
  for (std::size_t r = 0; r < obs.rows(); ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      const auto v = obs.value(r, c);
      EXPECT_EQ(v.has_value(), obs.observed(r, schema.owner(c)));
      if (v) {
        EXPECT_EQ(*v, full.row(r)[c]);
        ++seen;
      }
    }
  }
  EXPECT_GT(seen, 1000u);
}

TEST(AcquisitionState, FreeSetRevealedAtStepZero) {
  const auto schema = synthetic_schema();
  const std::vector<double> row{0.5, -1.0, 2.0, 3.0};
  AcquisitionState s(schema, row);
  EXPECT_EQ(s.step(), 0u);
  EXPECT_TRUE(s.has(0));
  EXPECT_FALSE(s.has(2));
  EXPECT_EQ(s.value(0), 0.5);
  EXPECT_FALSE(s.value(2).has_value());
  s.acquire(2, row);
  EXPECT_EQ(s.step(), 1u);
  EXPECT_EQ(s.value(3), 3.0);
  EXPECT_THROW(s.acquire(2, row), Error);
}

TEST(Target, Names) {
  EXPECT_EQ(parse_target("J_mc"), Target::Misclassification);
  EXPECT_EQ(parse_target("J_a"), Target::Acquisition);
  EXPECT_EQ(parse_target("J_total"), Target::Total);
  EXPECT_EQ(to_string(Target::Total), "J_total");
  EXPECT_THROW(parse_target("J_x"), ConfigError);
}
