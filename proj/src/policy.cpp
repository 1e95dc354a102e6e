#include "afape/policy.hpp"

#include "afape/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace afape {

ActionDistribution ActionDistribution::stop_only(std::size_t d_super) {
  ActionDistribution out;
  out.probs.assign(d_super + 1, 0.0);
  out.probs.back() = 1.0;
  return out;
}

int ActionDistribution::sample(double u) const {
  double acc = 0.0;
  int last_positive = kStop;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    const int action = i == stop_index() ? kStop : static_cast<int>(i);
    last_positive = action;
    acc += probs[i];
    if (u < acc) return action;
  }
  // Rounding left u above the accumulated mass.
  return last_positive;
}

namespace {

std::vector<std::size_t> remaining_candidates(const AcquisitionState& state) {
  std::vector<std::size_t> out;
  for (std::size_t j : state.schema().costly()) {
    if (!state.has(j)) out.push_back(j);
  }
  return out;
}

// sum_k C(m,k) p^k (1-p)^(m-k) / C(t+k,k)
double scaled_weight(double p, std::size_t t, std::size_t m) {
  double total = 0.0;
  double coef = 1.0;
  for (std::size_t k = 0; k <= m; ++k) {
    if (k > 0) coef *= static_cast<double>(m - k + 1) / static_cast<double>(t + k);
    total += coef * std::pow(p, static_cast<double>(k)) * std::pow(1.0 - p, static_cast<double>(m - k));
  }
  return total;
}

void check_hash(const nlohmann::json& j, const SuperfeatureSchema& schema) {
  if (!j.contains("schema_hash") || j.at("schema_hash").get<std::uint64_t>() != schema.hash()) {
    throw Error("checkpoint was written for a different superfeature schema");
  }
}

}  // namespace

SubsetRandomPolicy::SubsetRandomPolicy(double p_acquire) : p_(p_acquire) {
  if (!(p_ >= 0.0 && p_ <= 1.0)) throw ConfigError("p_acquire must lie in [0, 1]");
}

std::pair<double, double> subset_policy_step(double p, std::size_t t, std::size_t m) {
  const double w = scaled_weight(p, t, m);
  if (!(w > 0.0)) return {0.0, 1.0};
  const double stop = std::pow(1.0 - p, static_cast<double>(m)) / w;
  const double next = m == 0 ? 0.0 : p / static_cast<double>(t + 1) * scaled_weight(p, t + 1, m - 1) / w;
  return {next, stop};
}

ActionDistribution subset_policy_probs(const SubsetRandomPolicy& policy, const AcquisitionState& state) {
  const auto candidates = remaining_candidates(state);
  const auto [next, stop] = subset_policy_step(policy.p_acquire(), state.step(), candidates.size());
  ActionDistribution out;
  out.probs.assign(state.schema().size() + 1, 0.0);
  for (std::size_t j : candidates) out.probs[j] = next;
  out.probs.back() = stop;
  return out;
}

ActionDistribution SubsetRandomPolicy::probs(const AcquisitionState& state) const {
  return subset_policy_probs(*this, state);
}

nlohmann::json SubsetRandomPolicy::to_json() const { return {{"kind", kind()}, {"p", p_}}; }

ActionDistribution FixedSequencePolicy::probs(const AcquisitionState& state) const {
  auto out = ActionDistribution::stop_only(state.schema().size());
  for (std::size_t j : sequence_) {
    if (j >= state.schema().size() || state.schema().is_free(j)) throw Error("sequence names a non-action");
    if (!state.has(j)) {
      out.probs.back() = 0.0;
      out.probs[j] = 1.0;
      break;
    }
  }
  return out;
}

nlohmann::json FixedSequencePolicy::to_json() const { return {{"kind", kind()}, {"sequence", sequence_}}; }

double GreedyQPolicy::q(const AcquisitionState& state, int action) const {
  std::vector<double> cond;
  for (std::size_t c : encoder_.conditioning_columns()) cond.push_back(state.values()[c]);
  return q_->predict(encoder_.encode(state, action, cond));
}

ActionDistribution GreedyQPolicy::probs(const AcquisitionState& state) const {
  auto out = ActionDistribution::stop_only(state.schema().size());
  double best = q(state, kStop);
  int best_action = kStop;
  for (std::size_t j : remaining_candidates(state)) {
    const double v = q(state, static_cast<int>(j));
    if (v < best) {
      best = v;
      best_action = static_cast<int>(j);
    }
  }
  if (best_action != kStop) {
    out.probs.back() = 0.0;
    out.probs[static_cast<std::size_t>(best_action)] = 1.0;
  }
  return out;
}

nlohmann::json GreedyQPolicy::to_json() const {
  return {{"kind", kind()}, {"encoder", encoder_.to_json()}, {"q", q_->to_json()}};
}

ActionDistribution block_policy(const ActionDistribution& base, std::span<const std::uint8_t> mask_row) {
  ActionDistribution out = base;
  out.forced = false;
  double mass = out.probs.back();
  for (std::size_t j = 0; j + 1 < out.probs.size(); ++j) {
    if (!mask_row[j]) out.probs[j] = 0.0;
    mass += out.probs[j];
  }
  if (!(mass > 0.0)) {
    out = ActionDistribution::stop_only(base.probs.size() - 1);
    out.forced = true;
    return out;
  }
  if (mass != 1.0) {
    for (double& p : out.probs) p /= mass;
  }
  return out;
}

int Classifier::predict(const AcquisitionState& state) const {
  const auto p = predict_proba(state);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

MeanImputeLogisticClassifier::MeanImputeLogisticClassifier(std::vector<double> means, std::vector<std::size_t> costly,
                                                           std::vector<LogisticFit> models, int n_classes)
    : means_(std::move(means)), costly_(std::move(costly)), models_(std::move(models)), n_classes_(n_classes) {
  const std::size_t expected = n_classes_ == 2 ? 1 : static_cast<std::size_t>(n_classes_);
  if (models_.size() != expected) throw Error("classifier model count does not match class count");
}

std::vector<double> MeanImputeLogisticClassifier::features(const AcquisitionState& state) const {
  std::vector<double> f(means_.size() + costly_.size());
  const auto& schema = state.schema();
  const auto values = state.values();
  for (std::size_t c = 0; c < means_.size(); ++c) f[c] = state.has(schema.owner(c)) ? values[c] : means_[c];
  for (std::size_t k = 0; k < costly_.size(); ++k) f[means_.size() + k] = state.has(costly_[k]) ? 1.0 : 0.0;
  return f;
}

std::vector<double> MeanImputeLogisticClassifier::predict_proba(const AcquisitionState& state) const {
  const auto f = features(state);
  if (n_classes_ == 2) {
    const double p1 = models_[0].predict(f);
    return {1.0 - p1, p1};
  }
  std::vector<double> p(static_cast<std::size_t>(n_classes_));
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = models_[k].predict(f);
  const double s = std::accumulate(p.begin(), p.end(), 0.0);
  for (double& v : p) v /= s;
  return p;
}

nlohmann::json MeanImputeLogisticClassifier::to_json() const {
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : models_) {
    models.push_back({{"intercept", m.intercept}, {"coef", std::vector<double>(m.coef.data(), m.coef.data() + m.coef.size())}});
  }
  return {{"kind", "mean_impute_logistic"}, {"means", means_}, {"costly", costly_}, {"n_classes", n_classes_},
          {"models", models}};
}

std::vector<double> MajorityClassifier::predict_proba(const AcquisitionState&) const {
  std::vector<double> p(static_cast<std::size_t>(n_classes_), 0.0);
  p[static_cast<std::size_t>(label_)] = 1.0;
  return p;
}

nlohmann::json MajorityClassifier::to_json() const {
  return {{"kind", "majority"}, {"label", label_}, {"n_classes", n_classes_}};
}

MeanImputeLogisticClassifier fit_classifier(const ObservedDataset& train, double subsample_prob, std::uint64_t seed,
                                            const ClassifierOptions& options) {
  if (train.rows() == 0) throw Error("cannot fit a classifier on an empty dataset");
  if (!(subsample_prob >= 0.0 && subsample_prob <= 1.0)) throw ConfigError("subsample_prob must lie in [0, 1]");
  const int k = train.n_classes();
  std::vector<int> seen(static_cast<std::size_t>(std::max(k, 1)), 0);
  for (int y : train.labels()) seen[static_cast<std::size_t>(y)] = 1;
  if (std::count(seen.begin(), seen.end(), 1) < 2) throw Error("training labels contain a single class");

  const auto& schema = train.schema();
  const auto means = train.column_means();
  const auto& costly = schema.costly();
  const std::size_t width = train.raw_width() + costly.size();
  const std::size_t n = train.rows();

  Matrix x(static_cast<Eigen::Index>(2 * n), static_cast<Eigen::Index>(width));
  std::vector<int> y(2 * n);
  for (std::size_t r = 0; r < n; ++r) {
    auto rng = keyed_stream(seed, {r});
    Mask kept(schema.size());
    for (std::size_t j = 0; j < schema.size(); ++j) {
      kept[j] = train.observed(r, j) && (schema.is_free(j) || uniform01(rng) < subsample_prob);
    }
    for (int copy = 0; copy < 2; ++copy) {
      const auto row = static_cast<Eigen::Index>(copy * n + r);
      for (std::size_t c = 0; c < train.raw_width(); ++c) {
        const std::size_t j = schema.owner(c);
        const bool use = copy == 0 ? train.observed(r, j) : kept[j] != 0;
        x(row, static_cast<Eigen::Index>(c)) = use ? *train.value(r, c) : means[c];
      }
      for (std::size_t q = 0; q < costly.size(); ++q) {
        const bool use = copy == 0 ? train.observed(r, costly[q]) : kept[costly[q]] != 0;
        x(row, static_cast<Eigen::Index>(train.raw_width() + q)) = use ? 1.0 : 0.0;
      }
      y[static_cast<std::size_t>(row)] = train.label(r);
    }
  }

  std::vector<LogisticFit> models;
  const int fits = k == 2 ? 1 : k;
  for (int cls = (k == 2 ? 1 : 0); models.size() < static_cast<std::size_t>(fits); ++cls) {
    std::vector<double> target(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) target[i] = y[i] == cls ? 1.0 : 0.0;
    models.push_back(fit_logistic(x, target, options.l2));
  }
  return MeanImputeLogisticClassifier(means, costly, std::move(models), k);
}

MajorityClassifier fit_majority_classifier(const ObservedDataset& train) {
  if (train.rows() == 0) throw Error("cannot fit a classifier on an empty dataset");
  std::vector<std::size_t> counts(static_cast<std::size_t>(train.n_classes()), 0);
  for (int y : train.labels()) ++counts[static_cast<std::size_t>(y)];
  const int label = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  return MajorityClassifier(label, train.n_classes());
}

GreedyQPolicy fit_greedy_policy(const ObservedDataset& data, const std::vector<Trajectory>& trajectories,
                                const CostSpec& costs, const GreedyOptions& options) {
  if (trajectories.empty()) throw Error("cannot fit a greedy policy without trajectories");
  const auto& schema = data.schema();
  costs.validate(schema);
  StateActionEncoder encoder(schema, schema.free_columns());
  const std::size_t w = encoder.width();

  // Transition table: encoded (s, a), immediate cost, and encodings of the
  // valid actions at the successor state.
  std::vector<double> x_rows, immediate, weights;
  std::vector<std::size_t> next_begin, next_end;
  std::vector<double> next_rows;
  for (const auto& traj : trajectories) {
    const auto source = data.row(traj.row).values;
    const auto states = replay_states(schema, source, traj);
    std::vector<double> xo;
    for (std::size_t c : encoder.conditioning_columns()) xo.push_back(source[c]);
    for (std::size_t i = 0; i < traj.steps.size(); ++i) {
      const auto& step = traj.steps[i];
      const auto enc = encoder.encode(states[i], step.action, xo);
      x_rows.insert(x_rows.end(), enc.begin(), enc.end());
      weights.push_back(traj.weight);
      next_begin.push_back(next_rows.size() / w);
      if (step.action == kStop) {
        immediate.push_back(traj.mc_cost);
      } else {
        immediate.push_back(step.acquisition_cost);
        AcquisitionState next = states[i];
        next.acquire(static_cast<std::size_t>(step.action), source);
        const auto stop = encoder.encode(next, kStop, xo);
        next_rows.insert(next_rows.end(), stop.begin(), stop.end());
        for (std::size_t j : schema.costly()) {
          if (next.has(j)) continue;
          const auto e = encoder.encode(next, static_cast<int>(j), xo);
          next_rows.insert(next_rows.end(), e.begin(), e.end());
        }
      }
      next_end.push_back(next_rows.size() / w);
    }
  }
  const auto n = static_cast<Eigen::Index>(immediate.size());
  const Matrix x = Eigen::Map<const Matrix>(x_rows.data(), n, static_cast<Eigen::Index>(w));
  const Matrix nx = Eigen::Map<const Matrix>(next_rows.data(), static_cast<Eigen::Index>(next_rows.size() / w),
                                             static_cast<Eigen::Index>(w));

  std::shared_ptr<Regressor> q;
  if (options.regressor == "ridge") {
    q = std::make_shared<RidgeRegressor>(options.ridge_lambda);
  } else if (options.regressor == "mlp") {
    MlpOptions mlp = options.mlp;
    mlp.seed = options.seed;
    q = std::make_shared<MlpRegressor>(mlp);
  } else {
    throw ConfigError("unknown greedy regressor '" + options.regressor + "'");
  }

  std::vector<double> target(immediate);
  const std::size_t iterations = schema.costly().size() + 1;
  for (std::size_t it = 0; it < iterations; ++it) {
    if (it > 0) {
      const Eigen::VectorXd nq = nx.rows() > 0 ? q->predict_batch(nx) : Eigen::VectorXd();
      for (std::size_t i = 0; i < target.size(); ++i) {
        target[i] = immediate[i];
        if (next_end[i] > next_begin[i]) {
          double best = nq(static_cast<Eigen::Index>(next_begin[i]));
          for (std::size_t k = next_begin[i] + 1; k < next_end[i]; ++k) best = std::min(best, nq(static_cast<Eigen::Index>(k)));
          target[i] += best;
        }
      }
    }
    q->fit(x, target, weights);
  }
  return GreedyQPolicy(std::move(encoder), std::move(q));
}

nlohmann::json checkpoint(const Policy& policy, const SuperfeatureSchema& schema) {
  auto j = policy.to_json();
  j["schema_hash"] = schema.hash();
  return j;
}

nlohmann::json checkpoint(const Classifier& classifier, const SuperfeatureSchema& schema) {
  auto j = classifier.to_json();
  j["schema_hash"] = schema.hash();
  return j;
}

std::unique_ptr<Policy> policy_from_checkpoint(const nlohmann::json& j, const SuperfeatureSchema& schema) {
  check_hash(j, schema);
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "subset_random") return std::make_unique<SubsetRandomPolicy>(j.at("p").get<double>());
  if (kind == "fixed_sequence") {
    return std::make_unique<FixedSequencePolicy>(j.at("sequence").get<std::vector<std::size_t>>());
  }
  if (kind == "greedy_q") {
    return std::make_unique<GreedyQPolicy>(StateActionEncoder::from_json(j.at("encoder"), schema),
                                           std::shared_ptr<const Regressor>(regressor_from_json(j.at("q"))));
  }
  throw Error("unknown policy kind '" + kind + "'");
}

std::unique_ptr<Classifier> classifier_from_checkpoint(const nlohmann::json& j, const SuperfeatureSchema& schema) {
  check_hash(j, schema);
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "majority") {
    return std::make_unique<MajorityClassifier>(j.at("label").get<int>(), j.at("n_classes").get<int>());
  }
  if (kind == "mean_impute_logistic") {
    std::vector<LogisticFit> models;
    for (const auto& m : j.at("models")) {
      LogisticFit fit;
      fit.intercept = m.at("intercept").get<double>();
      const auto c = m.at("coef").get<std::vector<double>>();
      fit.coef = Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
      models.push_back(std::move(fit));
    }
    return std::make_unique<MeanImputeLogisticClassifier>(j.at("means").get<std::vector<double>>(),
                                                          j.at("costly").get<std::vector<std::size_t>>(),
                                                          std::move(models), j.at("n_classes").get<int>());
  }
  throw Error("unknown classifier kind '" + kind + "'");
}

}  // namespace afape
