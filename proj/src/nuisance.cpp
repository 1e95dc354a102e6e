#include "afape/nuisance.hpp"

#include <algorithm>

namespace afape {

namespace {

std::string source_name(PropensityModel::Source s) {
  return s == PropensityModel::Source::Learned ? "learned" : "ground_truth";
}

// Logistic factor for R_j on the given columns over the given rows.
MissingnessRule fit_factor(const ObservedDataset& data, std::size_t j, const std::vector<std::size_t>& columns,
                           const std::vector<std::size_t>& rows, double l2) {
  bool any_missing = false;
  for (std::size_t r : rows) any_missing = any_missing || !data.observed(r, j);
  if (!any_missing) return MissingnessRule::always();
  Matrix x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(columns.size()));
  std::vector<double> y(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto row = data.row(rows[i]);
    for (std::size_t k = 0; k < columns.size(); ++k) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = row.values[columns[k]];
    }
    y[i] = data.observed(rows[i], j) ? 1.0 : 0.0;
  }
  const auto fit = fit_logistic(x, y, l2);
  std::vector<std::pair<std::size_t, double>> terms;
  for (std::size_t k = 0; k < columns.size(); ++k) terms.emplace_back(columns[k], fit.coef(static_cast<Eigen::Index>(k)));
  return MissingnessRule::logistic(fit.intercept, std::move(terms));
}

double floored(double p, std::size_t& count) {
  if (p < kPropensityFloor) {
    ++count;
    return kPropensityFloor;
  }
  return p;
}

}  // namespace

std::optional<double> PropensityModel::prob_complete(const RowView& row) const {
  const Mask all(row.mask.size(), 1);
  return prob_superset(all, row);
}

FactorizedPropensity::FactorizedPropensity(std::vector<MissingnessRule> factors, const SuperfeatureSchema& schema,
                                           Source source)
    : factors_(std::move(factors)), source_(source) {
  if (factors_.size() != schema.size()) throw Error("propensity needs one factor per superfeature");
  for (std::size_t c = 0; c < schema.raw_width(); ++c) owner_.push_back(schema.owner(c));
}

std::optional<double> FactorizedPropensity::prob_superset(std::span<const std::uint8_t> required,
                                                          const RowView& row) const {
  double p = 1.0;
  for (std::size_t j = 0; j < factors_.size(); ++j) {
    if (!required[j]) continue;
    const auto& f = factors_[j];
    for (const auto& [c, w] : f.terms) {
      if (!row.observed(owner_[c])) return std::nullopt;
    }
    p *= f.probability(row.values);
  }
  return p;
}

nlohmann::json FactorizedPropensity::to_json() const {
  MissingnessMechanism mech{factors_};
  return {{"kind", "factorized"}, {"source", source_name(source_)}, {"factors", afape::to_json(mech).at("rules")}};
}

FactorizedPropensity FactorizedPropensity::from_json(const nlohmann::json& j, const SuperfeatureSchema& schema) {
  const auto mech = mechanism_from_json({{"rules", j.at("factors")}});
  const auto source = j.at("source").get<std::string>() == "learned" ? Source::Learned : Source::GroundTruth;
  return FactorizedPropensity(mech.rules, schema, source);
}

FactorizedPropensity FactorizedPropensity::zeroed_coefficients() const {
  FactorizedPropensity out = *this;
  for (auto& f : out.factors_) {
    for (auto& term : f.terms) term.second = 0.0;
  }
  return out;
}

FactorizedPropensity fit_propensity_mar(const ObservedDataset& data, const std::vector<std::size_t>& conditioning,
                                        double l2) {
  const auto& schema = data.schema();
  if (data.rows() == 0) throw Error("cannot fit a propensity model on an empty dataset");
  for (std::size_t j : conditioning) {
    if (j >= schema.size()) throw ConfigError("conditioning superfeature out of range");
    for (std::size_t r = 0; r < data.rows(); ++r) {
      if (!data.observed(r, j)) {
        throw Error("conditioning superfeature '" + schema[j].name + "' is missing in row " + std::to_string(r));
      }
    }
  }
  const auto columns = schema.columns_of(conditioning);
  std::vector<std::size_t> rows(data.rows());
  for (std::size_t r = 0; r < rows.size(); ++r) rows[r] = r;
  std::vector<MissingnessRule> factors;
  for (std::size_t j = 0; j < schema.size(); ++j) {
    factors.push_back(schema.is_free(j) ? MissingnessRule::always() : fit_factor(data, j, columns, rows, l2));
  }
  return FactorizedPropensity(std::move(factors), schema, PropensityModel::Source::Learned);
}

FactorizedPropensity ground_truth_propensity(const MissingnessMechanism& mech, const SuperfeatureSchema& schema) {
  mech.validate(schema);
  return FactorizedPropensity(mech.rules, schema, PropensityModel::Source::GroundTruth);
}

FactorizedPropensity fit_propensity_mnar_pattern(const ObservedDataset& data, const std::vector<std::size_t>& adjustment,
                                                 double l2) {
  const auto& schema = data.schema();
  if (adjustment.empty()) throw ConfigError("the MNAR pattern model needs a nonempty adjustment set");
  for (std::size_t j : adjustment) {
    if (j >= schema.size() || schema.is_free(j)) throw ConfigError("adjustment superfeatures must be costly");
  }
  const auto free_cols = schema.free_columns();
  auto adjusted_cols = free_cols;
  const auto adj_cols = schema.columns_of(adjustment);
  adjusted_cols.insert(adjusted_cols.end(), adj_cols.begin(), adj_cols.end());
  std::sort(adjusted_cols.begin(), adjusted_cols.end());

  std::vector<std::size_t> all_rows, adjusted_rows;
  for (std::size_t r = 0; r < data.rows(); ++r) {
    all_rows.push_back(r);
    bool ok = true;
    for (std::size_t j : adjustment) ok = ok && data.observed(r, j);
    if (ok) adjusted_rows.push_back(r);
  }
  if (adjusted_rows.empty()) throw Error("no row observes the full adjustment set");

  std::vector<MissingnessRule> factors;
  for (std::size_t j = 0; j < schema.size(); ++j) {
    if (schema.is_free(j)) {
      factors.push_back(MissingnessRule::always());
    } else if (std::find(adjustment.begin(), adjustment.end(), j) != adjustment.end()) {
      factors.push_back(fit_factor(data, j, free_cols, all_rows, l2));
    } else {
      factors.push_back(fit_factor(data, j, adjusted_cols, adjusted_rows, l2));
    }
  }
  return FactorizedPropensity(std::move(factors), schema, PropensityModel::Source::Learned);
}

WeightSeries weight_series(const Trajectory& trajectory, const SuperfeatureSchema& schema, const RowView& row,
                           const PropensityModel& propensity, const std::vector<std::size_t>& adjustment) {
  WeightSeries w;
  const std::size_t steps = trajectory.steps.size();
  Mask required(schema.size(), 0);
  for (std::size_t j : schema.free_set()) required[j] = 1;

  double rho = 1.0;
  if (!adjustment.empty()) {
    for (std::size_t j : adjustment) {
      if (!row.observed(j)) {
        w.rho.assign(steps + 1, 0.0);
        w.propensity.assign(steps + 1, 0.0);
        return w;
      }
      required[j] = 1;
    }
  }
  auto evaluate = [&](double& out) {
    const auto p = propensity.prob_superset(required, row);
    if (!p) {
      w.inevaluable = true;
      return false;
    }
    out = floored(*p, w.floored);
    return true;
  };
  double prev = 1.0;
  if (!evaluate(prev)) return w;
  if (!adjustment.empty()) rho = 1.0 / prev;
  w.rho.push_back(rho);
  w.propensity.push_back(prev);
  for (const auto& step : trajectory.steps) {
    rho *= step.p_alpha / step.p_sim;
    if (step.action != kStop) {
      required[static_cast<std::size_t>(step.action)] = 1;
      double cur = 1.0;
      if (!evaluate(cur)) return w;
      rho *= prev / cur;
      prev = cur;
    }
    w.rho.push_back(rho);
    w.propensity.push_back(prev);
  }
  return w;
}

double QModel::v(const AcquisitionState& state, std::span<const double> probs, std::span<const double> x_o) const {
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] > 0.0)) continue;
    const int action = i + 1 == probs.size() ? kStop : static_cast<int>(i);
    total += probs[i] * q(state, action, x_o);
  }
  return total;
}

double FittedQModel::q(const AcquisitionState& state, int action, std::span<const double> x_o) const {
  return regressor_->predict(encoder_.encode(state, action, x_o));
}

nlohmann::json FittedQModel::to_json() const {
  return {{"kind", "fitted"}, {"encoder", encoder_.to_json()}, {"regressor", regressor_->to_json()}};
}

FittedQModel FittedQModel::from_json(const nlohmann::json& j, const SuperfeatureSchema& schema) {
  return FittedQModel(StateActionEncoder::from_json(j.at("encoder"), schema),
                      std::shared_ptr<const Regressor>(regressor_from_json(j.at("regressor"))));
}

std::shared_ptr<FittedQModel> fit_q_semi(const std::vector<Trajectory>& trajectories, const ObservedDataset& data,
                                         const std::vector<std::size_t>& conditioning_columns,
                                         const QFitOptions& options) {
  if (trajectories.empty()) throw Error("cannot fit a Q-function without trajectories");
  if (options.weighted && options.weighting == nullptr) throw ConfigError("weighted Q regression needs a propensity");
  const auto& schema = data.schema();
  StateActionEncoder encoder(schema, conditioning_columns);
  const std::size_t w = encoder.width();
  const bool charge_acq = options.target != Target::Misclassification;
  const bool charge_mc = options.target != Target::Acquisition;

  std::vector<double> x_rows, immediate, weights;
  std::vector<double> next_rows, next_probs;
  std::vector<std::size_t> next_begin, next_end;
  for (const auto& traj : trajectories) {
    const auto row = data.row(traj.row);
    const auto states = replay_states(schema, row.values, traj);
    const auto xo = encoder.conditioning_values(row);
    std::vector<double> rho;
    if (options.weighted) rho = weight_series(traj, schema, row, *options.weighting).rho;
    for (std::size_t i = 0; i < traj.steps.size(); ++i) {
      const auto& step = traj.steps[i];
      const auto enc = encoder.encode(states[i], step.action, xo);
      x_rows.insert(x_rows.end(), enc.begin(), enc.end());
      weights.push_back(traj.weight * (options.weighted && i + 1 < rho.size() ? rho[i + 1] : 1.0));
      next_begin.push_back(next_probs.size());
      if (step.action == kStop) {
        immediate.push_back(charge_mc ? traj.mc_cost : 0.0);
      } else {
        immediate.push_back(charge_acq ? step.acquisition_cost : 0.0);
        const auto& probs = traj.steps[i + 1].target_probs;
        for (std::size_t a = 0; a < probs.size(); ++a) {
          if (!(probs[a] > 0.0)) continue;
          const int action = a + 1 == probs.size() ? kStop : static_cast<int>(a);
          const auto e = encoder.encode(states[i + 1], action, xo);
          next_rows.insert(next_rows.end(), e.begin(), e.end());
          next_probs.push_back(probs[a]);
        }
      }
      next_end.push_back(next_probs.size());
    }
  }
  const auto n = static_cast<Eigen::Index>(immediate.size());
  const Matrix x = Eigen::Map<const Matrix>(x_rows.data(), n, static_cast<Eigen::Index>(w));
  const Matrix nx =
      Eigen::Map<const Matrix>(next_rows.data(), static_cast<Eigen::Index>(next_probs.size()), static_cast<Eigen::Index>(w));

  std::shared_ptr<Regressor> reg;
  if (options.regressor == "mlp") {
    MlpOptions mlp = options.mlp;
    mlp.seed = options.seed;
    reg = std::make_shared<MlpRegressor>(mlp);
  } else if (options.regressor == "ridge") {
    reg = std::make_shared<RidgeRegressor>(options.ridge_lambda);
  } else if (options.regressor == "tabular") {
    reg = std::make_shared<TabularRegressor>();
  } else {
    throw ConfigError("unknown Q regressor '" + options.regressor + "'");
  }

  const std::size_t iterations = options.iterations > 0 ? options.iterations : schema.costly().size() + 1;
  std::vector<double> target(immediate);
  for (std::size_t it = 0; it < iterations; ++it) {
    if (it > 0 && nx.rows() > 0) {
      const Eigen::VectorXd nq = reg->predict_batch(nx);
      for (std::size_t i = 0; i < target.size(); ++i) {
        double v = 0.0;
        for (std::size_t k = next_begin[i]; k < next_end[i]; ++k) v += next_probs[k] * nq(static_cast<Eigen::Index>(k));
        target[i] = immediate[i] + v;
      }
    }
    reg->fit(x, target, weights);
  }
  return std::make_shared<FittedQModel>(std::move(encoder), std::move(reg));
}

nlohmann::json checkpoint(const PropensityModel& model, const SuperfeatureSchema& schema) {
  auto j = model.to_json();
  j["schema_hash"] = schema.hash();
  return j;
}

}  // namespace afape
