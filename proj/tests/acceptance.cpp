// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails. Set AFAPE_CONFIG_DIR to the shipped configs.

#include "afape/datagen.hpp"
#include "afape/estimators.hpp"
#include "afape/harness.hpp"
#include "afape/nuisance.hpp"
#include "afape/simulate.hpp"
#include "afape/tiny_env.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

using namespace afape;

namespace {

std::string config_dir() {
  const char* env = std::getenv("AFAPE_CONFIG_DIR");
  return env ? env : "configs";
}

nlohmann::json config(const std::string& name) { return load_json_file(config_dir() + "/" + name); }

double rel_err(double v, double ref) { return std::abs(v - ref) / std::abs(ref); }

bool outside(const EstimateReport& r, const EstimateReport& truth) {
  return r.point < *truth.ci_low || r.point > *truth.ci_high;
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

int failures = 0;

void line(int id, bool ok, const std::string& what) {
  std::cout << (ok ? "PASS" : "FAIL") << " criterion " << id << ": " << what << std::endl;
  if (!ok) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void oracle_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = run_oracle_suite(OracleOptions{});
  const double elapsed = seconds_since(t0);
  report.print(std::cout);
  line(1, report.ok() && elapsed < 60.0,
       "tiny environment oracle (exact J = " + fmt(report.exact, 8) + "), " + std::to_string(report.checks.size()) +
           " checks, " + fmt(elapsed, 3) + " s");
}

void configuration_checks() {
  auto fraction = [](const char* name) {
    auto raw = config(name);
    raw["estimators"] = {"Blocking"};
    const auto ctx = prepare_experiment(parse_config(raw));
    return ctx.observed.complete_fraction();
  };
  const double mar = fraction("synthetic_mar.json");
  const double mnar = fraction("synthetic_mnar.json");
  const auto n10 = count_trajectories(10);
  line(2, std::abs(mar - 0.24) <= 0.01 && std::abs(mnar - 0.22) <= 0.01 && n10 == 9864101,
       "complete-case fraction MAR " + fmt(mar) + ", MNAR " + fmt(mnar) + ", count_trajectories(10) = " +
           std::to_string(n10));
}

ExperimentResult mar_consistency() {
  const auto result = run_experiment(parse_config(config("synthetic_mar.json")));
  bool ok = true;
  std::ostringstream what;
  for (const char* policy : {"random-10%", "random-90%"}) {
    const auto& truth = result.report("J", policy, Target::Misclassification);
    what << policy << " J=" << fmt(truth.point) << " [";
    for (const char* e : {"IPW-Semi-gt", "DM-Semi", "DRL-Semi-gt"}) {
      const double err = rel_err(result.report(e, policy, Target::Misclassification).point, truth.point);
      ok = ok && err <= 0.05;
      what << e << " " << fmt(100 * err, 2) << "% ";
    }
    what << "| outside CI:";
    for (const char* e : {"Imp-Mean", "Blocking", "CC"}) {
      const bool out = outside(result.report(e, policy, Target::Misclassification), truth);
      ok = ok && out;
      what << ' ' << e << '=' << (out ? "yes" : "no");
    }
    what << "] ";
  }
  line(3, ok, "synthetic MAR, n=150000: " + what.str());
  return result;
}

void data_efficiency() {
  const int reps = 30;
  std::vector<double> semi10, miss10, semi90, miss90;
  for (int rep = 0; rep < reps; ++rep) {
    auto raw = config("synthetic_mar.json");
    raw["data"]["n"] = 20000;
    raw["seeds"] = {{"data", 5000 + rep}, {"experiment", 7000 + rep}};
    raw["estimators"] = {"IPW-Semi-gt", "IPW-Miss-gt"};
    raw["bootstrap"]["replicates"] = 0;
    const auto r = run_experiment(parse_config(raw));
    semi10.push_back(r.report("IPW-Semi-gt", "random-10%", Target::Misclassification).point);
    miss10.push_back(r.report("IPW-Miss-gt", "random-10%", Target::Misclassification).point);
    semi90.push_back(r.report("IPW-Semi-gt", "random-90%", Target::Misclassification).point);
    miss90.push_back(r.report("IPW-Miss-gt", "random-90%", Target::Misclassification).point);
  }
  auto sd = [](const std::vector<double>& v) {
    double m = 0.0, s = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
  };
  const double r10 = sd(semi10) / sd(miss10);
  const double r90 = sd(semi90) / sd(miss90);
  line(4, r10 < 1.0 && std::abs(r90 - 1.0) < std::abs(r10 - 1.0),
       std::to_string(reps) + " replicates at n=20000: SE ratio IPW-Semi-gt/IPW-Miss-gt random-10% " + fmt(r10) +
           ", random-90% " + fmt(r90));
}

void double_robustness() {
  // Random-90%: the policy whose weights carry enough of the estimate for a
  // propensity corruption to matter.
  auto base = config("synthetic_mar.json");
  base["policies"] = {{{"name", "random-90%"}, {"kind", "subset_random"}, {"p", 0.9}}};
  base["bootstrap"]["replicates"] = 0;
  const Target t = Target::Misclassification;

  auto a = base;
  a["estimators"] = {"J", "IPW-Semi", "DRL-Semi"};
  a["nuisances"]["corrupt_propensity"] = true;
  const auto ra = run_experiment(parse_config(a));
  const double j = ra.report("J", "random-90%", t).point;
  const double drl_a = rel_err(ra.report("DRL-Semi", "random-90%", t).point, j);
  const double ipw_a = rel_err(ra.report("IPW-Semi", "random-90%", t).point, j);

  auto b = base;
  b["estimators"] = {"J", "DM-Semi", "DRL-Semi-gt"};
  b["nuisances"]["q"]["regressor"] = "zero";
  const auto rb = run_experiment(parse_config(b));
  const double drl_b = rel_err(rb.report("DRL-Semi-gt", "random-90%", t).point, j);
  const double dm_b = rel_err(rb.report("DM-Semi", "random-90%", t).point, j);

  line(5, drl_a <= 0.05 && ipw_a > 0.05 && drl_b <= 0.05 && dm_b > 0.05,
       "random-90%: zeroed propensity DRL " + fmt(100 * drl_a, 3) + "% vs IPW-Semi " + fmt(100 * ipw_a, 3) +
           "%; zero Q DRL-gt " + fmt(100 * drl_b, 3) + "% vs DM " + fmt(100 * dm_b, 3) + "%");
}

void mnar_hybrid() {
  auto raw = config("synthetic_mnar.json");
  raw["policies"] = {{{"name", "random-10%"}, {"kind", "subset_random"}, {"p", 0.1}}};
  raw["estimators"] = {"J", "IPW-Semi-Miss-gt", "IPW-Semi"};
  raw["nuisances"]["assume_mar"] = true;  // the naive comparison
  const auto r = run_experiment(parse_config(raw));
  const Target t = Target::Misclassification;
  const auto& truth = r.report("J", "random-10%", t);
  const double err = rel_err(r.report("IPW-Semi-Miss-gt", "random-10%", t).point, truth.point);
  const auto& naive = r.report("IPW-Semi", "random-10%", t);
  line(6, err <= 0.05 && outside(naive, truth),
       "synthetic MNAR random-10%: IPW-Semi-Miss-gt " + fmt(100 * err, 3) + "% from J=" + fmt(truth.point) +
           "; naive IPW-Semi " + fmt(naive.point) + " vs CI [" + fmt(*truth.ci_low) + ", " + fmt(*truth.ci_high) +
           "]");
}

void weight_sanity(const ExperimentResult& mar) {
  const Target t = Target::Misclassification;
  std::ostringstream what;
  bool ok = true;
  for (const char* policy : {"random-10%", "random-90%"}) {
    const double w = mar.report("IPW-Semi-gt", policy, t).diagnostics.at("mean_weight");
    ok = ok && w >= 0.9 && w <= 1.1;
    what << "mean rho^T " << policy << " " << fmt(w, 6) << "; ";
  }

  // Exact identities on the same data.
  const auto cfg = parse_config(config("synthetic_mar.json"));
  const auto ctx = prepare_experiment(cfg);
  const auto policy = build_policy(cfg, ctx, 0);
  const auto truth = ground_truth_propensity(*ctx.mechanism, ctx.schema);
  const auto traj = rollout_semi_offline(ctx.test, *policy, *policy, *ctx.classifier, ctx.costs, {1, 99, 0});
  double max_gap = 0.0;
  for (auto mode : {Normalization::Raw, Normalization::SelfNormalized}) {
    const double ipw = ipw_semi_contributions(traj, ctx.test, truth, t).estimate(mode);
    const double drl0 = drl_semi_contributions(traj, ctx.test, truth, ConstantQModel(0.0), t).estimate(mode);
    const double hybrid =
        ipw_semi_contributions(traj, ctx.test, truth, t, {*ctx.schema.find("superX0")}).estimate(mode);
    max_gap = std::max({max_gap, std::abs(ipw - drl0), std::abs(ipw - hybrid)});
  }
  const auto complete = ObservedDataset::fully_observed(*ctx.test_full, ctx.schema);
  const auto semi = rollout_semi_offline(complete, *policy, *policy, *ctx.classifier, ctx.costs, {1, 123, 0});
  const auto gt = rollout_ground_truth(*ctx.test_full, ctx.schema, *policy, *ctx.classifier, ctx.costs, {1, 123, 0});
  const auto never_missing = fit_propensity_mar(complete, ctx.schema.free_set());
  for (auto mode : {Normalization::Raw, Normalization::SelfNormalized}) {
    const double j = mean_cost_contributions(gt, complete.rows(), t).estimate(mode);
    const double blocking = mean_cost_contributions(semi, complete.rows(), t).estimate(mode);
    const double ipw = ipw_semi_contributions(semi, complete, never_missing, t).estimate(mode);
    max_gap = std::max({max_gap, std::abs(j - blocking), std::abs(j - ipw)});
  }
  ok = ok && max_gap <= 1e-12;
  what << "largest identity gap " << max_gap;
  line(7, ok, what.str());
}

void determinism() {
  namespace fs = std::filesystem;
  auto raw = config("synthetic_mar.json");
  raw["data"]["n"] = 20000;
  raw["policies"].push_back({{"name", "greedy"}, {"kind", "greedy"}});
  const fs::path root = fs::temp_directory_path() / ("afape_determinism_" + std::to_string(::getpid()));
  const auto cfg = parse_config(raw);
  write_experiment(run_experiment(cfg, 1), (root / "a").string());
  write_experiment(run_experiment(cfg, 4), (root / "b").string());
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  bool same = true;
  std::size_t files = 0;
  for (const char* f : {"estimates.csv", "estimates.json", "convergence.csv", "diagnostics.json",
                        "config.resolved.json"}) {
    const auto x = slurp(root / "a" / f);
    same = same && !x.empty() && x == slurp(root / "b" / f);
    ++files;
  }
  fs::remove_all(root);
  line(8, same, std::to_string(files) + " output files byte-identical across reruns (1 vs 4 threads)");
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    oracle_equivalence();
    configuration_checks();
    const auto mar = mar_consistency();
    data_efficiency();
    double_robustness();
    mnar_hybrid();
    weight_sanity(mar);
    determinism();
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance run aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << " in "
            << fmt(seconds_since(t0), 4) << " s" << std::endl;
  return failures == 0 ? 0 : 1;
}
