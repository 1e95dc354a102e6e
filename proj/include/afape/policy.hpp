#pragma once

// AFA policies, blocking of unavailable acquisitions, and classifiers.

#include "afape/core.hpp"
#include "afape/encoding.hpp"
#include "afape/learn.hpp"

#include <memory>
#include <json.hpp>
#include <string>
#include <vector>

namespace afape {

// Distribution over superfeature actions 0..d-1 with STOP stored last.
struct ActionDistribution {
  std::vector<double> probs;
  bool forced = false;

  static ActionDistribution stop_only(std::size_t d_super);

  std::size_t stop_index() const { return probs.size() - 1; }
  double prob(int action) const { return probs[action == kStop ? stop_index() : static_cast<std::size_t>(action)]; }
  double stop() const { return probs.back(); }
  // Inverse-CDF draw from u in [0,1).
  int sample(double u) const;
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual ActionDistribution probs(const AcquisitionState& state) const = 0;
  virtual nlohmann::json to_json() const = 0;
  virtual std::string kind() const = 0;
};

// Samples S by independent Bernoulli(p) over costly superfeatures, acquires S
// in uniformly random order, then stops.
class SubsetRandomPolicy final : public Policy {
 public:
  explicit SubsetRandomPolicy(double p_acquire);
  ActionDistribution probs(const AcquisitionState& state) const override;
  nlohmann::json to_json() const override;
  std::string kind() const override { return "subset_random"; }
  double p_acquire() const { return p_; }

 private:
  double p_;
};

// Closed-form conditionals of SubsetRandomPolicy with t acquisitions so far and
// m remaining candidates: {P(a specific candidate next), P(STOP)}.
std::pair<double, double> subset_policy_step(double p, std::size_t t, std::size_t m);
ActionDistribution subset_policy_probs(const SubsetRandomPolicy& policy, const AcquisitionState& state);

// Acquires the listed superfeatures in order (skipping acquired ones), then stops.
class FixedSequencePolicy final : public Policy {
 public:
  explicit FixedSequencePolicy(std::vector<std::size_t> sequence) : sequence_(std::move(sequence)) {}
  ActionDistribution probs(const AcquisitionState& state) const override;
  nlohmann::json to_json() const override;
  std::string kind() const override { return "fixed_sequence"; }

 private:
  std::vector<std::size_t> sequence_;
};

// Deterministic argmin of a fitted cost-to-go over valid actions; ties go to STOP.
class GreedyQPolicy final : public Policy {
 public:
  GreedyQPolicy(StateActionEncoder encoder, std::shared_ptr<const Regressor> q)
      : encoder_(std::move(encoder)), q_(std::move(q)) {}
  ActionDistribution probs(const AcquisitionState& state) const override;
  nlohmann::json to_json() const override;
  std::string kind() const override { return "greedy_q"; }
  double q(const AcquisitionState& state, int action) const;

 private:
  StateActionEncoder encoder_;
  std::shared_ptr<const Regressor> q_;
};

// Zeroes actions whose superfeature is unavailable in the row and renormalizes.
// Returns a forced STOP when nothing with positive mass survives.
ActionDistribution block_policy(const ActionDistribution& base, std::span<const std::uint8_t> mask_row);

class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::vector<double> predict_proba(const AcquisitionState& state) const = 0;
  int predict(const AcquisitionState& state) const;
  virtual nlohmann::json to_json() const = 0;
};

// Mean imputation of unacquired columns, mask-bit augmentation, then a
// logistic model (one-vs-rest for more than two classes).
class MeanImputeLogisticClassifier final : public Classifier {
 public:
  MeanImputeLogisticClassifier(std::vector<double> means, std::vector<std::size_t> costly,
                               std::vector<LogisticFit> models, int n_classes);
  std::vector<double> predict_proba(const AcquisitionState& state) const override;
  nlohmann::json to_json() const override;
  std::vector<double> features(const AcquisitionState& state) const;

 private:
  std::vector<double> means_;
  std::vector<std::size_t> costly_;
  std::vector<LogisticFit> models_;
  int n_classes_;
};

class MajorityClassifier final : public Classifier {
 public:
  MajorityClassifier(int label, int n_classes) : label_(label), n_classes_(n_classes) {}
  std::vector<double> predict_proba(const AcquisitionState& state) const override;
  nlohmann::json to_json() const override;

 private:
  int label_;
  int n_classes_;
};

struct ClassifierOptions {
  double l2 = 1e-3;
};

MeanImputeLogisticClassifier fit_classifier(const ObservedDataset& train, double subsample_prob, std::uint64_t seed,
                                            const ClassifierOptions& options = {});
MajorityClassifier fit_majority_classifier(const ObservedDataset& train);

struct GreedyOptions {
  std::string regressor = "mlp";  // "mlp" or "ridge"
  MlpOptions mlp;
  double ridge_lambda = 1e-4;
  std::uint64_t seed = 0;
};

// Fitted-Q iteration with a min backup over valid next actions, minimizing
// expected total cost on simulated transitions.
GreedyQPolicy fit_greedy_policy(const ObservedDataset& data, const std::vector<Trajectory>& trajectories,
                                const CostSpec& costs, const GreedyOptions& options = {});

// Checkpoints carry the schema hash and are rejected against another schema.
nlohmann::json checkpoint(const Policy& policy, const SuperfeatureSchema& schema);
nlohmann::json checkpoint(const Classifier& classifier, const SuperfeatureSchema& schema);
std::unique_ptr<Policy> policy_from_checkpoint(const nlohmann::json& j, const SuperfeatureSchema& schema);
std::unique_ptr<Classifier> classifier_from_checkpoint(const nlohmann::json& j, const SuperfeatureSchema& schema);

}  // namespace afape
