#include "afape/harness.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

using namespace afape;

namespace {

nlohmann::json small_config() {
  return nlohmann::json::parse(R"({
    "data": {"source": "synthetic", "n": 4000},
    "schema": "synthetic",
    "mechanism": "mar",
    "policies": [{"name": "half", "kind": "subset_random", "p": 0.5},
                 {"name": "x2-then-x1", "kind": "fixed_sequence", "sequence": ["superX2", "superX1"]}],
    "nuisances": {"q": {"regressor": "ridge"}},
    "estimators": ["J", "Blocking", "CC", "IPW-Miss-gt", "IPW-Semi-gt", "IPW-Semi", "DM-Semi", "DRL-Semi"],
    "targets": ["J_mc", "J_total"],
    "splits": [0.3, 0.3, 0.4],
    "bootstrap": {"replicates": 20},
    "seeds": {"data": 3, "experiment": 4}
  })");
}

std::string config_error(const nlohmann::json& raw) {
  try {
    parse_config(raw);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(Config, DefaultsAreResolved) {
  const auto cfg = parse_config(small_config());
  EXPECT_EQ(cfg.json["costs"]["misclassification"], 14.0);
  EXPECT_EQ(cfg.json["n_traj_per_row"], 1);
  EXPECT_EQ(cfg.json["bootstrap"]["level"], 0.95);
  EXPECT_EQ(cfg.json["classifier"]["kind"], "logistic");
  EXPECT_EQ(cfg.json["simulation_policy"], "target");
  EXPECT_EQ(parse_config(cfg.json).json, cfg.json);
}

TEST(Config, Errors) {
  auto raw = small_config();
  raw["estimators"] = {"J", "IPW-Magic"};
  EXPECT_NE(config_error(raw).find("unknown estimator 'IPW-Magic'"), std::string::npos);

  raw = small_config();
  raw["splits"] = {0.5, 0.5, 0.5};
  EXPECT_NE(config_error(raw).find("sum to 1"), std::string::npos);

  raw = small_config();
  raw["colour"] = "blue";
  EXPECT_NE(config_error(raw).find("unknown config key"), std::string::npos);

  raw = small_config();
  raw.erase("policies");
  EXPECT_NE(config_error(raw).find("policies"), std::string::npos);

  raw = small_config();
  raw["policies"][0]["p"] = 1.5;
  EXPECT_FALSE(config_error(raw).empty());

  raw = small_config();
  raw["bootstrap"]["replicates"] = 1;
  EXPECT_FALSE(config_error(raw).empty());
}

TEST(Config, MnarRejectsMarOnlyEstimators) {
  auto raw = small_config();
  raw["mechanism"] = "mnar";
  const auto msg = config_error(raw);
  EXPECT_NE(msg.find("MNAR"), std::string::npos) << msg;
  EXPECT_NE(msg.find("IPW-Semi-Miss"), std::string::npos) << msg;

  raw["estimators"] = {"J", "CC", "IPW-Semi-Miss"};
  EXPECT_NE(config_error(raw).find("adjustment"), std::string::npos);
  raw["nuisances"]["adjustment"] = {"superX1"};
  EXPECT_EQ(config_error(raw), "");
  raw["estimators"] = {"IPW-Semi"};
  raw["nuisances"]["assume_mar"] = true;
  EXPECT_EQ(config_error(raw), "");
}

TEST(Config, ClippedEstimateIsADiagnostic) {
  auto raw = small_config();
  raw["estimators"] = {"IPW-Semi-gt"};
  raw["targets"] = {"J_mc"};
  raw["bootstrap"]["replicates"] = 0;
  const auto plain = run_experiment(parse_config(raw), 1);
  raw["nuisances"]["clip_weights"] = 2.0;
  const auto clipped = run_experiment(parse_config(raw), 1);
  const auto& a = plain.report("IPW-Semi-gt", "half", Target::Misclassification);
  const auto& b = clipped.report("IPW-Semi-gt", "half", Target::Misclassification);
  EXPECT_EQ(a.point, b.point);
  EXPECT_FALSE(a.diagnostics.count("clipped_point"));
  EXPECT_TRUE(std::isfinite(b.diagnostics.at("clipped_point")));
  raw["nuisances"]["clip_weights"] = -1;
  EXPECT_FALSE(config_error(raw).empty());
}

TEST(Config, Overrides) {
  auto raw = small_config();
  apply_override(raw, "data.n=1234");
  apply_override(raw, "policies.0.p=0.25");
  apply_override(raw, "policies.1.name=seq");
  apply_override(raw, "nuisances.q.hidden=[8,8]");
  EXPECT_EQ(raw["data"]["n"], 1234);
  EXPECT_EQ(raw["policies"][0]["p"], 0.25);
  EXPECT_EQ(raw["policies"][1]["name"], "seq");
  EXPECT_EQ(raw["nuisances"]["q"]["hidden"], nlohmann::json({8, 8}));
  EXPECT_THROW(apply_override(raw, "noequals"), ConfigError);
  EXPECT_THROW(apply_override(raw, "policies.7.p=1"), ConfigError);
}

TEST(Convergence, Checkpoints) {
  EXPECT_EQ(convergence_checkpoints(1), (std::vector<std::size_t>{1}));
  EXPECT_EQ(convergence_checkpoints(600), (std::vector<std::size_t>{1, 2, 5, 10, 20, 50, 100, 200, 500, 600}));
  EXPECT_EQ(convergence_checkpoints(1000), (std::vector<std::size_t>{1, 2, 5, 10, 20, 50, 100, 200, 500, 1000}));
}

class Experiment : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { result = new ExperimentResult(run_experiment(parse_config(small_config()), 2)); }
  static void TearDownTestSuite() { delete result; }
  static ExperimentResult* result;
};

ExperimentResult* Experiment::result = nullptr;

TEST_F(Experiment, OneReportPerEstimatorPolicyTarget) {
  EXPECT_EQ(result->reports.size(), 8u * 2u * 2u);
  const auto& j = result->report("J", "half", Target::Total);
  EXPECT_EQ(j.policy, "half");
  ASSERT_TRUE(j.ci_low && j.ci_high);
  EXPECT_LE(*j.ci_low, j.point);
  EXPECT_GE(*j.ci_high, j.point);
  EXPECT_THROW(result->report("J", "nope", Target::Total), Error);
}

TEST_F(Experiment, FixedSequenceAcquisitionCost) {
  EXPECT_NEAR(result->report("J", "x2-then-x1", Target::Total).point -
                  result->report("J", "x2-then-x1", Target::Misclassification).point,
              2.0, 1e-12);
}

TEST_F(Experiment, LastCheckpointIsTheReport) {
  for (const auto& r : result->reports) {
    const ConvergencePoint* last = nullptr;
    for (const auto& c : result->convergence) {
      if (c.estimator == r.estimator && c.policy == r.policy && c.target == r.target) last = &c;
    }
    ASSERT_NE(last, nullptr) << r.estimator;
    EXPECT_EQ(last->estimate, r.point) << r.estimator << ' ' << r.policy;
  }
}

TEST_F(Experiment, DiagnosticsRecordSplits) {
  const auto& d = result->diagnostics;
  EXPECT_EQ(d["rows"]["train"].get<int>() + d["rows"]["nuisance"].get<int>() + d["rows"]["test"].get<int>(), 4000);
  EXPECT_EQ(d["rows"]["total"], 4000);
  EXPECT_GT(d["complete_fraction"]["total"].get<double>(), 0.15);
  EXPECT_NEAR(d["policies"]["x2-then-x1"]["forced_stop_frac"].get<double>(),
              1.0 - d["complete_fraction"]["test"].get<double>(), 1e-12);
  EXPECT_TRUE(d["policies"].contains("half"));
}

TEST_F(Experiment, RerunWritesIdenticalFiles) {
  const auto base = std::filesystem::temp_directory_path() / ("afape_harness_" + std::to_string(getpid()));
  write_experiment(*result, (base / "a").string());
  write_experiment(run_experiment(parse_config(small_config()), 1), (base / "b").string());
  for (const char* f : {"estimates.csv", "estimates.json", "convergence.csv", "diagnostics.json",
                        "config.resolved.json"}) {
    const auto a = slurp(base / "a" / f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, slurp(base / "b" / f)) << f;
  }
  std::filesystem::remove_all(base);
}
