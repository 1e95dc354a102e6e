#include "afape/harness.hpp"

#include "afape/datagen.hpp"
#include "afape/estimators.hpp"
#include "afape/nuisance.hpp"
#include "afape/policy.hpp"
#include "afape/rng.hpp"
#include "afape/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>

namespace afape {

using nlohmann::json;

namespace {

// Stream tags for derived seeds.
enum : std::uint64_t {
  kTagMissingness = 1,
  kTagSplit = 2,
  kTagClassifier = 3,
  kTagGreedyRollout = 4,
  kTagGreedyFit = 5,
  kTagTest = 6,
  kTagTruth = 7,
  kTagNuisance = 8,
  kTagQ = 9,
  kTagImpute = 10,
  kTagBootstrap = 11,
};

std::uint64_t derive(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
  auto rng = keyed_stream(seed, {tag, index});
  return rng();
}

const std::set<std::string> kMarOnly = {"IPW-Miss", "IPW-Semi", "IPW-Semi-gt", "DM-Semi", "DRL-Semi", "DRL-Semi-gt"};

std::string policy_default_name(double p) {
  std::ostringstream s;
  s << "random-" << p * 100.0 << "%";
  return s.str();
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

// Header names of a CSV, minus the label and mask_ columns.
std::vector<std::string> csv_feature_names(const std::string& path, const std::string& label) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open data file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("data file '" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> names;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\"");
    const auto e = cell.find_last_not_of(" \t\"");
    const std::string name = b == std::string::npos ? std::string() : cell.substr(b, e - b + 1);
    if (name == label || name.rfind("mask_", 0) == 0) continue;
    names.push_back(name);
  }
  return names;
}

SuperfeatureSchema resolve_schema(const json& cfg) {
  const auto& s = cfg.at("schema");
  if (s.is_string()) {
    require(s.get<std::string>() == "synthetic", "unknown named schema '" + s.get<std::string>() + "'");
    return synthetic_schema();
  }
  std::vector<std::string> names;
  const auto& data = cfg.at("data");
  if (data.at("source") == "csv") names = csv_feature_names(data.at("path"), data.at("label_column"));
  return schema_from_json(s, names);
}

std::optional<MissingnessMechanism> resolve_mechanism(const json& m) {
  if (m.is_null()) return std::nullopt;
  if (m.is_string()) {
    const auto name = m.get<std::string>();
    if (name == "mar") return synthetic_mar_mechanism();
    if (name == "mnar") return synthetic_mnar_mechanism();
    if (name == "none") return std::nullopt;
    throw ConfigError("unknown named mechanism '" + name + "' (expected mar, mnar, none or a rule list)");
  }
  return mechanism_from_json(m);
}

std::vector<std::size_t> superfeature_indices(const json& names, const SuperfeatureSchema& schema,
                                              const std::string& key) {
  std::vector<std::size_t> out;
  for (const auto& n : names) {
    const auto idx = schema.find(n.get<std::string>());
    require(idx.has_value(), key + ": unknown superfeature '" + n.get<std::string>() + "'");
    out.push_back(*idx);
  }
  std::sort(out.begin(), out.end());
  return out;
}

json resolve_policy(const json& p, std::size_t index) {
  require(p.is_object(), "policies[" + std::to_string(index) + "] must be an object");
  json out = p;
  const std::string kind = p.value("kind", "subset_random");
  out["kind"] = kind;
  if (kind == "subset_random") {
    require(p.contains("p") && p["p"].is_number(), "subset_random policy needs a numeric 'p'");
    const double prob = p["p"].get<double>();
    require(prob >= 0.0 && prob <= 1.0, "subset_random 'p' must lie in [0, 1]");
    if (!out.contains("name")) out["name"] = policy_default_name(prob);
  } else if (kind == "fixed_sequence") {
    require(p.contains("sequence") && p["sequence"].is_array(), "fixed_sequence policy needs a 'sequence' list");
    if (!out.contains("name")) out["name"] = "fixed-" + std::to_string(index);
  } else if (kind == "greedy") {
    if (!out.contains("name")) out["name"] = "greedy";
    if (!out.contains("regressor")) out["regressor"] = "ridge";
    if (!out.contains("ridge_lambda")) out["ridge_lambda"] = 1e-4;
    if (!out.contains("p_explore")) out["p_explore"] = 0.5;
    if (!out.contains("n_traj_per_row")) out["n_traj_per_row"] = 2;
  } else {
    throw ConfigError("unknown policy kind '" + kind + "' (expected subset_random, fixed_sequence or greedy)");
  }
  return out;
}

MlpOptions mlp_options(const json& j, std::uint64_t seed) {
  MlpOptions o;
  if (j.contains("hidden")) o.hidden = j["hidden"].get<std::vector<int>>();
  o.learning_rate = j.value("learning_rate", o.learning_rate);
  o.epochs = j.value("epochs", o.epochs);
  o.batch_size = j.value("batch_size", o.batch_size);
  o.seed = seed;
  return o;
}

template <typename T>
void fill_default(json& j, const std::string& key, const T& value) {
  if (!j.contains(key) || j[key].is_null()) j[key] = value;
}

}  // namespace

const std::vector<std::string>& known_estimators() {
  static const std::vector<std::string> names = {
      "J",           "Imp-Mean",  "Blocking", "CC",          "IPW-Miss",      "IPW-Miss-gt",
      "IPW-Semi",    "IPW-Semi-gt", "DM-Semi", "DRL-Semi",   "DRL-Semi-gt",   "IPW-Semi-Miss",
      "IPW-Semi-Miss-gt"};
  return names;
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

void apply_override(json& raw, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &raw;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& p = parts[i];
    if (p.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (node->is_array()) {
      const bool numeric = std::all_of(p.begin(), p.end(), [](char c) { return c >= '0' && c <= '9'; });
      if (!numeric) throw ConfigError("override key '" + key + "': '" + p + "' indexes an array");
      const auto idx = std::stoul(p);
      if (idx >= node->size()) throw ConfigError("override key '" + key + "': index out of range");
      node = &(*node)[idx];
    } else {
      if (!node->is_object()) *node = json::object();
      node = &(*node)[p];
    }
  }
  *node = std::move(value);
}

ExperimentConfig parse_config(const json& raw) {
  require(raw.is_object(), "config must be a JSON object");
  static const std::set<std::string> keys = {"data",      "schema",     "mechanism",  "costs",          "policies",
                                             "simulation_policy", "classifier", "nuisances", "estimators", "targets",
                                             "splits",    "n_traj_per_row", "bootstrap", "seeds", "output_dir"};
  for (const auto& [k, v] : raw.items()) require(keys.count(k) > 0, "unknown config key '" + k + "'");
  for (const char* k : {"data", "schema", "policies", "estimators", "splits"}) {
    require(raw.contains(k), std::string("missing required config key '") + k + "'");
  }

  json cfg = raw;
  try {
    auto& data = cfg["data"];
    require(data.is_object(), "'data' must be an object");
    const std::string source = data.value("source", "synthetic");
    data["source"] = source;
    if (source == "synthetic") {
      require(data.contains("n") && data["n"].is_number_integer() && data["n"].get<long long>() > 0,
              "data.n must be a positive integer");
      fill_default(data, "covariance", "default");
    } else if (source == "csv") {
      require(data.contains("path"), "data.path is required for csv data");
      require(data.contains("label_column"), "data.label_column is required for csv data");
      fill_default(data, "sentinel", "?");
    } else {
      throw ConfigError("unknown data.source '" + source + "' (expected synthetic or csv)");
    }

    fill_default(cfg, "mechanism", json());
    if (source == "synthetic") require(!cfg["mechanism"].is_null(), "synthetic data needs a missingness mechanism");

    auto& costs = cfg["costs"];
    if (costs.is_null()) costs = json::object();
    fill_default(costs, "misclassification", 14.0);

    auto& splits = cfg["splits"];
    require(splits.is_array() && splits.size() == 3, "splits must be [train, nuisance, test] fractions");
    double total = 0.0;
    for (const auto& f : splits) {
      require(f.is_number() && f.get<double>() > 0.0, "split fractions must be positive");
      total += f.get<double>();
    }
    require(std::abs(total - 1.0) < 1e-9, "split fractions must sum to 1");

    auto& policies = cfg["policies"];
    require(policies.is_array() && !policies.empty(), "policies must be a nonempty list");
    std::set<std::string> policy_names;
    for (std::size_t i = 0; i < policies.size(); ++i) {
      policies[i] = resolve_policy(policies[i], i);
      require(policy_names.insert(policies[i]["name"].get<std::string>()).second,
              "duplicate policy name '" + policies[i]["name"].get<std::string>() + "'");
    }

    fill_default(cfg, "simulation_policy", "target");
    const auto& sim = cfg["simulation_policy"];
    if (!sim.is_string() || sim.get<std::string>() != "target") {
      require(sim.is_object() && sim.value("kind", "subset_random") == "subset_random" && sim.contains("p"),
              "simulation_policy must be \"target\" or {\"kind\": \"subset_random\", \"p\": ...}");
      const double p = sim["p"].get<double>();
      // Every target policy path needs positive simulation probability.
      require(p > 0.0 && p < 1.0, "an off-policy simulation policy needs 0 < p < 1 for positivity");
    }

    auto& clf = cfg["classifier"];
    if (clf.is_null()) clf = json::object();
    fill_default(clf, "kind", "logistic");
    fill_default(clf, "subsample_prob", 0.5);
    fill_default(clf, "l2", 1e-3);
    require(clf["kind"] == "logistic" || clf["kind"] == "majority", "classifier.kind must be logistic or majority");

    auto& nz = cfg["nuisances"];
    if (nz.is_null()) nz = json::object();
    fill_default(nz, "propensity_l2", 1e-6);
    fill_default(nz, "adjustment", json::array());
    fill_default(nz, "assume_mar", false);
    fill_default(nz, "corrupt_propensity", false);
    fill_default(nz, "clip_weights", nullptr);
    require(nz["clip_weights"].is_null() || (nz["clip_weights"].is_number() && nz["clip_weights"].get<double>() > 0.0),
            "nuisances.clip_weights must be null or a positive number");
    auto& q = nz["q"];
    if (q.is_null()) q = json::object();
    fill_default(q, "regressor", "mlp");
    fill_default(q, "hidden", std::vector<int>{32, 32});
    fill_default(q, "epochs", 20);
    fill_default(q, "learning_rate", 1e-3);
    fill_default(q, "batch_size", 256);
    fill_default(q, "ridge_lambda", 1e-4);
    fill_default(q, "weighted", false);
    fill_default(q, "n_traj_per_row", 1);
    fill_default(q, "conditioning", json::array());
    static const std::set<std::string> regs = {"mlp", "ridge", "tabular", "zero"};
    require(regs.count(q["regressor"].get<std::string>()) > 0, "nuisances.q.regressor must be mlp, ridge, tabular or zero");

    auto& est = cfg["estimators"];
    require(est.is_array() && !est.empty(), "estimators must be a nonempty list");
    const auto& known = known_estimators();
    for (const auto& e : est) {
      require(e.is_string(), "estimator names must be strings");
      const auto name = e.get<std::string>();
      if (std::find(known.begin(), known.end(), name) == known.end()) {
        std::string list;
        for (const auto& k : known) list += (list.empty() ? "" : ", ") + k;
        throw ConfigError("unknown estimator '" + name + "' (known: " + list + ")");
      }
    }

    fill_default(cfg, "targets", std::vector<std::string>{"J_mc"});
    for (const auto& t : cfg["targets"]) parse_target(t.get<std::string>());

    fill_default(cfg, "n_traj_per_row", 1);
    require(cfg["n_traj_per_row"].get<long long>() >= 1, "n_traj_per_row must be at least 1");

    auto& boot = cfg["bootstrap"];
    if (boot.is_null()) boot = json::object();
    fill_default(boot, "replicates", 200);
    fill_default(boot, "level", 0.95);
    fill_default(boot, "convergence", true);
    const auto reps = boot["replicates"].get<long long>();
    require(reps == 0 || reps >= 2, "bootstrap.replicates must be 0 (no intervals) or at least 2");
    const double level = boot["level"].get<double>();
    require(level > 0.0 && level < 1.0, "bootstrap.level must lie in (0, 1)");

    auto& seeds = cfg["seeds"];
    if (seeds.is_null()) seeds = json::object();
    fill_default(seeds, "data", 0);
    fill_default(seeds, "experiment", 0);

    fill_default(cfg, "output_dir", "results");

    // Schema / mechanism consistency and the MNAR guard.
    const auto schema = resolve_schema(cfg);
    const auto mech = resolve_mechanism(cfg["mechanism"]);
    if (mech) {
      try {
        mech->validate(schema);
      } catch (const Error& e) {
        throw ConfigError(std::string("mechanism does not fit the schema: ") + e.what());
      }
    }
    const auto adjustment = superfeature_indices(nz["adjustment"], schema, "nuisances.adjustment");
    superfeature_indices(q["conditioning"], schema, "nuisances.q.conditioning");
    for (const auto& p : policies) {
      if (p["kind"] == "fixed_sequence") superfeature_indices(p["sequence"], schema, "policies.sequence");
    }
    const bool mnar = mech && mech->is_mnar(schema);
    for (const auto& e : est) {
      const auto name = e.get<std::string>();
      if (mnar && kMarOnly.count(name) && !nz["assume_mar"].get<bool>()) {
        throw ConfigError("estimator '" + name +
                          "' assumes MAR missingness but the mechanism is MNAR; use IPW-Semi-Miss (hybrid) with "
                          "nuisances.adjustment instead");
      }
      if (name.rfind("IPW-Semi-Miss", 0) == 0) {
        require(!adjustment.empty(), "estimator '" + name + "' needs a nonempty nuisances.adjustment set");
      }
      const bool gt = name.size() > 3 && name.compare(name.size() - 3, 3, "-gt") == 0;
      if (gt || name == "J") {
        require(mech.has_value(), "estimator '" + name + "' needs a known missingness mechanism");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return {cfg};
}

std::vector<std::size_t> convergence_checkpoints(std::size_t n) {
  std::vector<std::size_t> out;
  for (std::size_t scale = 1; scale < n && scale <= std::numeric_limits<std::size_t>::max() / 10; scale *= 10) {
    for (std::size_t m : {1, 2, 5}) {
      if (m * scale < n) out.push_back(m * scale);
    }
  }
  if (n > 0) out.push_back(n);
  return out;
}

const EstimateReport& ExperimentResult::report(const std::string& estimator, const std::string& policy,
                                               Target target) const {
  for (const auto& r : reports) {
    if (r.estimator == estimator && r.policy == policy && r.target == target) return r;
  }
  throw Error("no report for " + estimator + " / " + policy + " / " + to_string(target));
}

namespace {

void build_data(ExperimentContext& d, const json& cfg) {
  d.schema = resolve_schema(cfg);
  d.mechanism = resolve_mechanism(cfg["mechanism"]);
  const auto& data = cfg["data"];
  const std::uint64_t seed = cfg["seeds"]["data"].get<std::uint64_t>();
  if (data["source"] == "synthetic") {
    Matrix cov;
    const auto& c = data["covariance"];
    if (c.is_string()) {
      if (c == "default") {
        cov = synthetic_covariance();
      } else if (c == "identity") {
        cov = Matrix::Identity(static_cast<Eigen::Index>(d.schema.raw_width()),
                               static_cast<Eigen::Index>(d.schema.raw_width()));
      } else {
        throw ConfigError("data.covariance must be default, identity or a matrix");
      }
    } else {
      const auto rows = c.get<std::vector<std::vector<double>>>();
      cov.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows.size()) throw ConfigError("data.covariance must be square");
        for (std::size_t k = 0; k < rows.size(); ++k) {
          cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
        }
      }
    }
    if (static_cast<std::size_t>(cov.rows()) != d.schema.raw_width()) {
      throw ConfigError("data.covariance dimension does not match the schema width");
    }
    d.full = generate_synthetic(data["n"].get<std::size_t>(), cov, seed);
    d.observed = apply_missingness(*d.full, d.schema, *d.mechanism, derive(seed, kTagMissingness));
    return;
  }
  const auto loaded = load_csv(data["path"], d.schema, data["label_column"], data["sentinel"]);
  bool complete = true;
  for (std::size_t r = 0; r < loaded.rows() && complete; ++r) complete = loaded.complete(r);
  if (d.mechanism) {
    if (!complete) throw ConfigError("a missingness mechanism can only be applied to fully observed CSV data");
    Matrix x(static_cast<Eigen::Index>(loaded.rows()), static_cast<Eigen::Index>(loaded.raw_width()));
    for (std::size_t r = 0; r < loaded.rows(); ++r) {
      const auto row = loaded.row(r);
      for (std::size_t c = 0; c < row.values.size(); ++c) {
        x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row.values[c];
      }
    }
    d.full = FullDataset(std::move(x), loaded.labels());
    d.observed = apply_missingness(*d.full, d.schema, *d.mechanism, derive(seed, kTagMissingness));
  } else {
    d.observed = loaded;
  }
}

void split_data(ExperimentContext& d, const json& cfg) {
  const std::size_t n = d.observed.rows();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  auto rng = keyed_stream(cfg["seeds"]["experiment"].get<std::uint64_t>(), {kTagSplit});
  // Fisher-Yates with an explicit draw so the permutation is portable.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  const auto& f = cfg["splits"];
  const auto n_train = static_cast<std::size_t>(std::llround(f[0].get<double>() * static_cast<double>(n)));
  const auto n_nuis = static_cast<std::size_t>(std::llround(f[1].get<double>() * static_cast<double>(n)));
  if (n_train == 0 || n_nuis == 0 || n_train + n_nuis >= n) throw ConfigError("splits leave an empty partition");
  const auto at = [&](std::size_t k) { return perm.begin() + static_cast<std::ptrdiff_t>(k); };
  const std::vector<std::size_t> a(at(0), at(n_train));
  const std::vector<std::size_t> b(at(n_train), at(n_train + n_nuis));
  const std::vector<std::size_t> c(at(n_train + n_nuis), perm.end());
  d.train = d.observed.subset(a);
  d.nuisance = d.observed.subset(b);
  d.test = d.observed.subset(c);
  if (d.full) d.test_full = d.full->subset(c);
}

}  // namespace

ExperimentContext prepare_experiment(const ExperimentConfig& config) {
  const json& cfg = config.json;
  ExperimentContext ctx;
  build_data(ctx, cfg);
  split_data(ctx, cfg);
  ctx.costs = CostSpec::from_schema(ctx.schema, cfg["costs"]["misclassification"].get<double>());
  if (cfg["costs"].contains("acquisition")) {
    ctx.costs.acquisition = cfg["costs"]["acquisition"].get<std::vector<double>>();
  }
  try {
    ctx.costs.validate(ctx.schema);
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid costs: ") + e.what());
  }
  const auto& c = cfg["classifier"];
  if (c["kind"] == "majority") {
    ctx.classifier = std::make_shared<MajorityClassifier>(fit_majority_classifier(ctx.train));
  } else {
    ctx.classifier = std::make_shared<MeanImputeLogisticClassifier>(
        fit_classifier(ctx.train, c["subsample_prob"].get<double>(),
                       derive(cfg["seeds"]["experiment"].get<std::uint64_t>(), kTagClassifier),
                       ClassifierOptions{c["l2"].get<double>()}));
  }
  return ctx;
}

std::shared_ptr<const Policy> build_policy(const ExperimentConfig& config, const ExperimentContext& ctx,
                                           std::size_t index, unsigned threads) {
  const json& cfg = config.json;
  const json& p = cfg.at("policies").at(index);
  const std::string kind = p["kind"];
  if (kind == "subset_random") return std::make_shared<SubsetRandomPolicy>(p["p"].get<double>());
  if (kind == "fixed_sequence") {
    return std::make_shared<FixedSequencePolicy>(superfeature_indices(p["sequence"], ctx.schema, "sequence"));
  }
  const std::uint64_t seed = cfg["seeds"]["experiment"].get<std::uint64_t>();
  const SubsetRandomPolicy explore(p["p_explore"].get<double>());
  const auto trajectories =
      rollout_semi_offline(ctx.train, explore, explore, *ctx.classifier, ctx.costs,
                           {p["n_traj_per_row"].get<std::size_t>(), derive(seed, kTagGreedyRollout, index), threads});
  GreedyOptions g;
  g.regressor = p["regressor"].get<std::string>();
  g.ridge_lambda = p["ridge_lambda"].get<double>();
  g.seed = derive(seed, kTagGreedyFit, index);
  g.mlp = mlp_options(p, g.seed);
  return std::make_shared<GreedyQPolicy>(fit_greedy_policy(ctx.train, trajectories, ctx.costs, g));
}

std::shared_ptr<const Policy> simulation_policy(const ExperimentConfig& config, std::shared_ptr<const Policy> target) {
  const auto& sim = config.json.at("simulation_policy");
  if (sim.is_object()) return std::make_shared<SubsetRandomPolicy>(sim["p"].get<double>());
  return target;
}

namespace {

json diagnostics_json(const std::map<std::string, double>& d) {
  json j = json::object();
  for (const auto& [k, v] : d) j[k] = std::isfinite(v) ? json(v) : json();
  return j;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, unsigned threads) {
  const json& cfg = config.json;
  ExperimentResult result;
  result.resolved_config = cfg;

  const ExperimentContext ctx = prepare_experiment(config);
  const auto& sp = ctx;
  const auto& schema = ctx.schema;
  const auto& costs = ctx.costs;
  const auto& classifier = ctx.classifier;
  const std::uint64_t seed = cfg["seeds"]["experiment"].get<std::uint64_t>();

  const auto& nz = cfg["nuisances"];
  const auto& qcfg = nz["q"];
  const auto adjustment = superfeature_indices(nz["adjustment"], schema, "nuisances.adjustment");
  const auto q_conditioning = schema.columns_of(superfeature_indices(qcfg["conditioning"], schema, "q.conditioning"));
  const auto estimators = cfg["estimators"].get<std::vector<std::string>>();
  auto wants = [&](const std::string& name) {
    return std::find(estimators.begin(), estimators.end(), name) != estimators.end();
  };
  const bool corrupt = nz["corrupt_propensity"].get<bool>();

  // Propensity models.
  std::unique_ptr<FactorizedPropensity> learned, learned_pattern, truth;
  if (wants("IPW-Miss") || wants("IPW-Semi") || wants("DRL-Semi")) {
    learned = std::make_unique<FactorizedPropensity>(
        fit_propensity_mar(sp.nuisance, schema.free_set(), nz["propensity_l2"].get<double>()));
    if (corrupt) *learned = learned->zeroed_coefficients();
  }
  if (wants("IPW-Semi-Miss")) {
    learned_pattern = std::make_unique<FactorizedPropensity>(
        fit_propensity_mnar_pattern(sp.nuisance, adjustment, nz["propensity_l2"].get<double>()));
    if (corrupt) *learned_pattern = learned_pattern->zeroed_coefficients();
  }
  if (ctx.mechanism) {
    truth = std::make_unique<FactorizedPropensity>(ground_truth_propensity(*ctx.mechanism, schema));
    if (corrupt) *truth = truth->zeroed_coefficients();
  }

  EstimateOptions eopts;
  BootstrapOptions bopts;
  bopts.replicates = cfg["bootstrap"]["replicates"].get<std::size_t>();
  bopts.level = cfg["bootstrap"]["level"].get<double>();
  bopts.threads = threads;
  const bool boot = bopts.replicates > 0;
  const bool boot_convergence = boot && cfg["bootstrap"]["convergence"].get<bool>();
  const std::size_t n_traj = cfg["n_traj_per_row"].get<std::size_t>();
  std::optional<double> clip;
  if (!nz["clip_weights"].is_null()) clip = nz["clip_weights"].get<double>();

  json diag;
  diag["seeds"] = cfg["seeds"];
  diag["mnar"] = sp.test.mnar;
  diag["rows"] = {{"total", ctx.observed.rows()},
                  {"train", sp.train.rows()},
                  {"nuisance", sp.nuisance.rows()},
                  {"test", sp.test.rows()}};
  diag["complete_fraction"] = {{"total", ctx.observed.complete_fraction()},
                               {"train", sp.train.complete_fraction()},
                               {"nuisance", sp.nuisance.complete_fraction()},
                               {"test", sp.test.complete_fraction()}};
  diag["classifier"] = classifier->to_json();
  if (learned) diag["propensity"]["learned"] = learned->to_json();
  if (learned_pattern) diag["propensity"]["learned_pattern"] = learned_pattern->to_json();
  if (truth) diag["propensity"]["ground_truth"] = truth->to_json();
  diag["policies"] = json::object();

  const auto fill = sp.train.column_means();

  for (std::size_t pi = 0; pi < cfg["policies"].size(); ++pi) {
    const auto& pcfg = cfg["policies"][pi];
    const std::string pname = pcfg["name"];
    const auto policy = build_policy(config, ctx, pi, threads);
    const auto sim_ptr = simulation_policy(config, policy);
    const auto& sim = *sim_ptr;
    json pdiag;
    pdiag["policy"] = policy->to_json();

    const auto test_traj =
        rollout_semi_offline(sp.test, sim, *policy, *classifier, costs, {n_traj, derive(seed, kTagTest, pi), threads});
    std::vector<Trajectory> truth_traj;
    if (wants("J")) {
      truth_traj = rollout_ground_truth(*sp.test_full, schema, *policy, *classifier, costs,
                                        {n_traj, derive(seed, kTagTruth, pi), threads});
    }
    std::vector<Trajectory> nuis_traj;
    const bool need_q = wants("DM-Semi") || wants("DRL-Semi") || wants("DRL-Semi-gt");
    if (need_q && qcfg["regressor"] != "zero") {
      nuis_traj = rollout_semi_offline(sp.nuisance, sim, *policy, *classifier, costs,
                                       {qcfg["n_traj_per_row"].get<std::size_t>(), derive(seed, kTagNuisance, pi),
                                        threads});
    }
    double forced = 0.0, steps = 0.0;
    for (const auto& t : test_traj) {
      forced += t.forced_stop ? 1.0 : 0.0;
      steps += static_cast<double>(t.steps.size() - 1);
    }
    pdiag["forced_stop_frac"] = forced / static_cast<double>(test_traj.size());
    pdiag["mean_acquisitions"] = steps / static_cast<double>(test_traj.size());

    for (const auto& tname : cfg["targets"]) {
      const Target target = parse_target(tname.get<std::string>());
      std::shared_ptr<const QModel> q;
      if (need_q) {
        if (qcfg["regressor"] == "zero") {
          q = std::make_shared<ConstantQModel>(0.0, q_conditioning);
        } else {
          QFitOptions qo;
          qo.target = target;
          qo.regressor = qcfg["regressor"].get<std::string>();
          qo.ridge_lambda = qcfg["ridge_lambda"].get<double>();
          qo.seed = derive(seed, kTagQ, pi * 3 + static_cast<std::size_t>(target));
          qo.mlp = mlp_options(qcfg, qo.seed);
          qo.weighted = qcfg["weighted"].get<bool>();
          if (qo.weighted) qo.weighting = learned ? learned.get() : truth.get();
          if (qo.weighted && !qo.weighting) throw ConfigError("nuisances.q.weighted needs a propensity model");
          q = fit_q_semi(nuis_traj, sp.nuisance, q_conditioning, qo);
        }
      }

      for (std::size_t ei = 0; ei < estimators.size(); ++ei) {
        const auto& name = estimators[ei];
        RowContributions c;
        std::map<std::string, double> d;
        auto unweighted = [&](const std::vector<Trajectory>& tr) {
          d["ess"] = static_cast<double>(c.n_trajectories);
          d["mean_weight"] = 1.0;
          double f = 0.0;
          for (const auto& t : tr) f += t.forced_stop ? 1.0 : 0.0;
          d["forced_stop_frac"] = tr.empty() ? 0.0 : f / static_cast<double>(tr.size());
        };
        if (name == "J") {
          c = mean_cost_contributions(truth_traj, sp.test.rows(), target);
          unweighted(truth_traj);
        } else if (name == "Imp-Mean") {
          c = imp_mean_contributions(sp.test, fill, *policy, *classifier, costs, target,
                                     {n_traj, derive(seed, kTagImpute, pi), threads});
          d["ess"] = static_cast<double>(c.n_trajectories);
        } else if (name == "Blocking") {
          c = mean_cost_contributions(test_traj, sp.test.rows(), target);
          unweighted(test_traj);
        } else if (name == "CC") {
          c = complete_case_contributions(test_traj, sp.test, target);
          unweighted(test_traj);
        } else if (name == "IPW-Miss" || name == "IPW-Miss-gt") {
          const auto& prop = name == "IPW-Miss" ? *learned : *truth;
          c = ipw_miss_contributions(test_traj, sp.test, prop, target);
          double sw = 0.0, n = 0.0;
          for (const auto& r : c.rows) {
            sw += r.normalizer;
            n += r.count;
          }
          d["mean_weight"] = sw / n;
        } else if (name == "IPW-Semi" || name == "IPW-Semi-gt") {
          const auto& prop = name == "IPW-Semi" ? *learned : *truth;
          c = ipw_semi_contributions(test_traj, sp.test, prop, target);
          d = positivity_diagnostics(test_traj, sp.test, prop);
          if (clip) d["clipped_point"] = clipped_ipw_semi_estimate(test_traj, sp.test, prop, target, *clip);
        } else if (name == "DM-Semi") {
          c = dm_semi_contributions(*q, sp.test, *policy);
        } else if (name == "DRL-Semi" || name == "DRL-Semi-gt") {
          const auto& prop = name == "DRL-Semi" ? *learned : *truth;
          c = drl_semi_contributions(test_traj, sp.test, prop, *q, target);
          d = positivity_diagnostics(test_traj, sp.test, prop);
        } else if (name == "IPW-Semi-Miss" || name == "IPW-Semi-Miss-gt") {
          const auto& prop = name == "IPW-Semi-Miss" ? *learned_pattern : *truth;
          c = ipw_semi_contributions(test_traj, sp.test, prop, target, adjustment);
          d = positivity_diagnostics(test_traj, sp.test, prop, adjustment);
          if (clip) {
            d["clipped_point"] = clipped_ipw_semi_estimate(test_traj, sp.test, prop, target, *clip, adjustment);
          }
        }

        BootstrapOptions b = bopts;
        b.seed = derive(seed, kTagBootstrap, (pi * 16 + ei) * 4 + static_cast<std::size_t>(target));
        EstimateOptions o = eopts;
        if (boot) o.bootstrap = b;
        auto rep = make_report(name, target, c, o);
        rep.policy = pname;
        rep.diagnostics = d;
        result.reports.push_back(rep);
        pdiag["estimators"][name + "/" + to_string(target)] = diagnostics_json(d);

        for (const auto n : convergence_checkpoints(c.rows.size())) {
          ConvergencePoint pt{name, pname, target, n, c.estimate_prefix(n, eopts.normalization), {}, {}};
          if (n == c.rows.size()) {
            pt.estimate = rep.point;
            pt.ci_low = rep.ci_low;
            pt.ci_high = rep.ci_high;
          } else if (boot_convergence) {
            const auto [lo, hi] = bootstrap_ci(c, eopts.normalization, b, n);
            if (std::isfinite(lo) && std::isfinite(hi)) {
              pt.ci_low = std::isfinite(pt.estimate) ? std::min(lo, pt.estimate) : lo;
              pt.ci_high = std::isfinite(pt.estimate) ? std::max(hi, pt.estimate) : hi;
            }
          }
          result.convergence.push_back(pt);
        }
      }
    }
    diag["policies"][pname] = pdiag;
  }
  result.diagnostics = diag;
  return result;
}

void write_experiment(const ExperimentResult& result, const std::string& directory) {
  namespace fs = std::filesystem;
  fs::create_directories(directory);
  const fs::path dir(directory);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw Error("cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open("estimates.csv");
    write_reports_csv(out, result.reports);
  }
  {
    json reports = json::array();
    for (const auto& r : result.reports) reports.push_back(to_json(r));
    auto out = open("estimates.json");
    out << json{{"reports", reports}}.dump(2) << '\n';
  }
  {
    auto out = open("convergence.csv");
    auto num = [](double v) { return std::isfinite(v) ? format_double(v) : std::string(); };
    out << "estimator,policy,target,n,estimate,ci_low,ci_high\n";
    for (const auto& p : result.convergence) {
      out << p.estimator << ',' << p.policy << ',' << to_string(p.target) << ',' << p.n << ',' << num(p.estimate)
          << ',' << (p.ci_low ? num(*p.ci_low) : "") << ',' << (p.ci_high ? num(*p.ci_high) : "") << '\n';
    }
  }
  {
    auto out = open("diagnostics.json");
    out << result.diagnostics.dump(2) << '\n';
  }
  {
    auto out = open("config.resolved.json");
    out << result.resolved_config.dump(2) << '\n';
  }
}

}  // namespace afape
