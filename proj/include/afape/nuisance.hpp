#pragma once

// Propensity models for P(R >= r' | conditioning) and the semi-offline
// Q-function fit by backward fitted-Q evaluation.

#include "afape/core.hpp"
#include "afape/datagen.hpp"
#include "afape/encoding.hpp"
#include "afape/learn.hpp"
#include "afape/policy.hpp"

#include <memory>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

namespace afape {

inline constexpr double kPropensityFloor = 1e-6;

class PropensityModel {
 public:
  enum class Source { Learned, GroundTruth };

  virtual ~PropensityModel() = default;
  // P(R >= required | conditioning read from the row). nullopt when the row
  // lacks a conditioner the model needs.
  virtual std::optional<double> prob_superset(std::span<const std::uint8_t> required, const RowView& row) const = 0;
  std::optional<double> prob_complete(const RowView& row) const;
  virtual Source source() const = 0;
  virtual nlohmann::json to_json() const = 0;
};

// Product of independent per-superfeature factors P(R_j = 1 | columns).
class FactorizedPropensity final : public PropensityModel {
 public:
  FactorizedPropensity(std::vector<MissingnessRule> factors, const SuperfeatureSchema& schema, Source source);

  std::optional<double> prob_superset(std::span<const std::uint8_t> required, const RowView& row) const override;
  Source source() const override { return source_; }
  nlohmann::json to_json() const override;
  static FactorizedPropensity from_json(const nlohmann::json& j, const SuperfeatureSchema& schema);

  const std::vector<MissingnessRule>& factors() const { return factors_; }
  // Same intercepts with every covariate coefficient set to 0.
  FactorizedPropensity zeroed_coefficients() const;

 private:
  std::vector<MissingnessRule> factors_;
  std::vector<std::size_t> owner_;  // raw column -> superfeature
  Source source_;
};

// One logistic factor per superfeature that is ever missing, on the raw
// columns of the conditioning superfeatures (which must be fully observed).
FactorizedPropensity fit_propensity_mar(const ObservedDataset& data, const std::vector<std::size_t>& conditioning,
                                        double l2 = 1e-6);

FactorizedPropensity ground_truth_propensity(const MissingnessMechanism& mech, const SuperfeatureSchema& schema);

// Adjustment factors are fit on the free columns over all rows; the other
// factors on free + adjustment columns over rows where the adjustment set is
// observed. Evaluation needs the adjustment set observed.
FactorizedPropensity fit_propensity_mnar_pattern(const ObservedDataset& data, const std::vector<std::size_t>& adjustment,
                                                 double l2 = 1e-6);

// Cumulative weights rho^0..rho^T of one trajectory. With an adjustment set,
// rho^0 = I(R_adj = 1) / P(R_adj = 1 | .) and the semi-offline propensities
// condition on R_adj = 1.
struct WeightSeries {
  std::vector<double> rho;
  std::vector<double> propensity;  // floored P(R >= R'^t | .) per state, t = 0..T
  std::size_t floored = 0;
  bool inevaluable = false;

  double final() const { return rho.back(); }
};

WeightSeries weight_series(const Trajectory& trajectory, const SuperfeatureSchema& schema, const RowView& row,
                           const PropensityModel& propensity, const std::vector<std::size_t>& adjustment = {});

class QModel {
 public:
  virtual ~QModel() = default;
  virtual double q(const AcquisitionState& state, int action, std::span<const double> x_o) const = 0;
  // sum_a probs[a] q(state, a); STOP stored last in probs.
  double v(const AcquisitionState& state, std::span<const double> probs, std::span<const double> x_o) const;
  virtual nlohmann::json to_json() const = 0;
  // Columns whose retrospective values form x_o.
  virtual std::vector<std::size_t> conditioning_columns() const = 0;
};

class ConstantQModel final : public QModel {
 public:
  explicit ConstantQModel(double value, std::vector<std::size_t> conditioning = {})
      : value_(value), conditioning_(std::move(conditioning)) {}
  double q(const AcquisitionState&, int, std::span<const double>) const override { return value_; }
  nlohmann::json to_json() const override { return {{"kind", "constant"}, {"value", value_}}; }
  std::vector<std::size_t> conditioning_columns() const override { return conditioning_; }

 private:
  double value_;
  std::vector<std::size_t> conditioning_;
};

// a * base + b, used to corrupt a fitted model in robustness checks.
class AffineQModel final : public QModel {
 public:
  AffineQModel(std::shared_ptr<const QModel> base, double scale, double shift)
      : base_(std::move(base)), scale_(scale), shift_(shift) {}
  double q(const AcquisitionState& s, int a, std::span<const double> x_o) const override {
    return scale_ * base_->q(s, a, x_o) + shift_;
  }
  nlohmann::json to_json() const override {
    return {{"kind", "affine"}, {"scale", scale_}, {"shift", shift_}, {"base", base_->to_json()}};
  }
  std::vector<std::size_t> conditioning_columns() const override { return base_->conditioning_columns(); }

 private:
  std::shared_ptr<const QModel> base_;
  double scale_, shift_;
};

class FittedQModel final : public QModel {
 public:
  FittedQModel(StateActionEncoder encoder, std::shared_ptr<const Regressor> regressor)
      : encoder_(std::move(encoder)), regressor_(std::move(regressor)) {}
  double q(const AcquisitionState& state, int action, std::span<const double> x_o) const override;
  nlohmann::json to_json() const override;
  std::vector<std::size_t> conditioning_columns() const override { return encoder_.conditioning_columns(); }
  static FittedQModel from_json(const nlohmann::json& j, const SuperfeatureSchema& schema);

 private:
  StateActionEncoder encoder_;
  std::shared_ptr<const Regressor> regressor_;
};

struct QFitOptions {
  Target target = Target::Misclassification;
  std::string regressor = "mlp";  // "mlp", "ridge" or "tabular"
  MlpOptions mlp;
  double ridge_lambda = 1e-4;
  // Backups; 0 means number of costly superfeatures + 1.
  std::size_t iterations = 0;
  // Weight transitions by rho^t; needs `weighting`.
  bool weighted = false;
  const PropensityModel* weighting = nullptr;
  std::uint64_t seed = 0;
};

// Fitted-Q evaluation of the target policy from semi-offline trajectories over
// `data`. Next-state values average Q under the target-policy distribution
// recorded in each step.
std::shared_ptr<FittedQModel> fit_q_semi(const std::vector<Trajectory>& trajectories, const ObservedDataset& data,
                                         const std::vector<std::size_t>& conditioning_columns,
                                         const QFitOptions& options);

nlohmann::json checkpoint(const PropensityModel& model, const SuperfeatureSchema& schema);

}  // namespace afape
