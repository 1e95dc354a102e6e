#include "afape/estimators.hpp"

#include "afape/datagen.hpp"
#include "afape/parallel.hpp"
#include "afape/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace afape {

namespace {

double combine(const RowSums& s, Normalization mode) {
  if (!(s.count > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  const double base = s.direct / s.count;
  if (mode == Normalization::Raw) return base + s.weighted / s.count;
  if (s.normalizer == 0.0) return s.weighted == 0.0 ? base : std::numeric_limits<double>::quiet_NaN();
  return base + s.weighted / s.normalizer;
}

void add(RowSums& into, const RowSums& r, double k = 1.0) {
  into.direct += k * r.direct;
  into.weighted += k * r.weighted;
  into.normalizer += k * r.normalizer;
  into.count += k * r.count;
}

// Type-7 sample quantile of sorted values.
double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::vector<double> row_conditioning(const QModel& q, const RowView& row) {
  std::vector<double> xo;
  for (std::size_t c : q.conditioning_columns()) xo.push_back(row.values[c]);
  return xo;
}

WeightSeries checked_weights(const Trajectory& t, const ObservedDataset& data, const PropensityModel& propensity,
                             const std::vector<std::size_t>& adjustment) {
  auto ws = weight_series(t, data.schema(), data.row(t.row), propensity, adjustment);
  if (ws.inevaluable) {
    throw Error("propensity model cannot be evaluated on row " + std::to_string(t.row) +
                " (a conditioning feature is unobserved); use IPW-Semi-Miss with an adjustment set");
  }
  return ws;
}

std::vector<RowSums> empty_rows(std::size_t n) { return std::vector<RowSums>(n); }

double forced_fraction(const std::vector<Trajectory>& trajectories) {
  if (trajectories.empty()) return 0.0;
  double forced = 0.0, total = 0.0;
  for (const auto& t : trajectories) {
    forced += t.forced_stop ? t.weight : 0.0;
    total += t.weight;
  }
  return forced / total;
}

void require_nonempty(const std::vector<Trajectory>& trajectories) {
  if (trajectories.empty()) throw Error("estimator needs at least one trajectory");
}

}  // namespace

double RowContributions::estimate_prefix(std::size_t n_rows, Normalization mode) const {
  RowSums total;
  for (std::size_t r = 0; r < std::min(n_rows, rows.size()); ++r) add(total, rows[r]);
  return combine(total, mode);
}

double RowContributions::estimate_counts(std::span<const std::uint32_t> counts, Normalization mode) const {
  RowSums total;
  for (std::size_t r = 0; r < counts.size(); ++r) {
    if (counts[r] != 0) add(total, rows[r], static_cast<double>(counts[r]));
  }
  return combine(total, mode);
}

double step_cost(const Trajectory& trajectory, std::size_t step, Target target) {
  const auto& s = trajectory.steps[step];
  if (s.action == kStop) return target == Target::Acquisition ? 0.0 : trajectory.mc_cost;
  return target == Target::Misclassification ? 0.0 : s.acquisition_cost;
}

double trajectory_cost(const Trajectory& trajectory, Target target) {
  switch (target) {
    case Target::Misclassification: return trajectory.mc_cost;
    case Target::Acquisition: return trajectory.acquisition_cost();
    case Target::Total: return trajectory.total_cost();
  }
  return 0.0;
}

RowContributions mean_cost_contributions(const std::vector<Trajectory>& trajectories, std::size_t n_rows,
                                         Target target) {
  require_nonempty(trajectories);
  RowContributions out{empty_rows(n_rows), trajectories.size()};
  for (const auto& t : trajectories) {
    auto& r = out.rows.at(t.row);
    r.weighted += t.weight * trajectory_cost(t, target);
    r.normalizer += t.weight;
    r.count += t.weight;
  }
  return out;
}

RowContributions complete_case_contributions(const std::vector<Trajectory>& trajectories, const ObservedDataset& data,
                                             Target target) {
  require_nonempty(trajectories);
  RowContributions out{empty_rows(data.rows()), 0};
  for (const auto& t : trajectories) {
    if (!data.complete(t.row)) continue;
    auto& r = out.rows[t.row];
    r.weighted += t.weight * trajectory_cost(t, target);
    r.normalizer += t.weight;
    r.count += t.weight;
    ++out.n_trajectories;
  }
  if (out.n_trajectories == 0) throw Error("no complete cases");
  return out;
}

RowContributions ipw_miss_contributions(const std::vector<Trajectory>& trajectories, const ObservedDataset& data,
                                        const PropensityModel& propensity, Target target) {
  require_nonempty(trajectories);
  RowContributions out{empty_rows(data.rows()), trajectories.size()};
  std::size_t complete = 0;
  for (const auto& t : trajectories) {
    auto& r = out.rows[t.row];
    r.count += t.weight;
    if (!data.complete(t.row)) continue;
    ++complete;
    const auto p = propensity.prob_complete(data.row(t.row));
    if (!p) throw Error("propensity model cannot be evaluated on complete row " + std::to_string(t.row));
    double rho = 1.0 / std::max(*p, kPropensityFloor);
    double sum = 0.0;
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
      rho *= t.steps[i].p_alpha / t.steps[i].p_sim;
      sum += rho * step_cost(t, i, target);
    }
    r.weighted += t.weight * sum;
    r.normalizer += t.weight * rho;
  }
  if (complete == 0) throw Error("IPW-Miss needs at least one complete case");
  return out;
}

RowSums ipw_semi_trajectory(const Trajectory& t, const ObservedDataset& data, const PropensityModel& propensity,
                            Target target, const std::vector<std::size_t>& adjustment) {
  const auto ws = checked_weights(t, data, propensity, adjustment);
  double sum = 0.0;
  for (std::size_t i = 0; i < t.steps.size(); ++i) sum += ws.rho[i + 1] * step_cost(t, i, target);
  return {0.0, t.weight * sum, t.weight * ws.final(), t.weight};
}

RowContributions ipw_semi_contributions(const std::vector<Trajectory>& trajectories, const ObservedDataset& data,
                                        const PropensityModel& propensity, Target target,
                                        const std::vector<std::size_t>& adjustment) {
  require_nonempty(trajectories);
  RowContributions out{empty_rows(data.rows()), trajectories.size()};
  for (const auto& t : trajectories) {
    add(out.rows[t.row], ipw_semi_trajectory(t, data, propensity, target, adjustment));
  }
  return out;
}

double clipped_ipw_semi_estimate(const std::vector<Trajectory>& trajectories, const ObservedDataset& data,
                                 const PropensityModel& propensity, Target target, double clip,
                                 const std::vector<std::size_t>& adjustment) {
  require_nonempty(trajectories);
  if (!(clip > 0.0)) throw ConfigError("weight clip must be positive");
  double weighted = 0.0, normalizer = 0.0;
  for (const auto& t : trajectories) {
    const auto ws = checked_weights(t, data, propensity, adjustment);
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
      weighted += t.weight * std::min(ws.rho[i + 1], clip) * step_cost(t, i, target);
    }
    normalizer += t.weight * std::min(ws.final(), clip);
  }
  return normalizer > 0.0 ? weighted / normalizer : std::numeric_limits<double>::quiet_NaN();
}

RowContributions dm_semi_contributions(const QModel& q, const ObservedDataset& data, const Policy& target_policy) {
  RowContributions out{empty_rows(data.rows()), 0};
  for (std::size_t r = 0; r < data.rows(); ++r) {
    const auto row = data.row(r);
    const AcquisitionState s0(data.schema(), row.values);
    const auto probs = target_policy.probs(s0).probs;
    out.rows[r].direct = q.v(s0, probs, row_conditioning(q, row));
    out.rows[r].count = 1.0;
  }
  return out;
}

RowSums drl_semi_trajectory(const Trajectory& t, const ObservedDataset& data, const PropensityModel& propensity,
                            const QModel& q, Target target) {
  const auto ws = checked_weights(t, data, propensity, {});
  const auto row = data.row(t.row);
  const auto states = replay_states(data.schema(), row.values, t);
  const auto xo = row_conditioning(q, row);
  double sum = 0.0;
  double v0 = 0.0;
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    const auto& step = t.steps[i];
    const double rho = ws.rho[i + 1];
    const double v = q.v(states[i], step.target_probs, xo);
    double term = rho * step_cost(t, i, target) - rho * q.q(states[i], step.action, xo);
    if (i == 0) {
      v0 = v;
    } else {
      term += ws.rho[i] * v;
    }
    sum += term;
  }
  return {t.weight * v0, t.weight * sum, t.weight * ws.final(), t.weight};
}

RowContributions drl_semi_contributions(const std::vector<Trajectory>& trajectories, const ObservedDataset& data,
                                        const PropensityModel& propensity, const QModel& q, Target target) {
  require_nonempty(trajectories);
  RowContributions out{empty_rows(data.rows()), trajectories.size()};
  for (const auto& t : trajectories) add(out.rows[t.row], drl_semi_trajectory(t, data, propensity, q, target));
  return out;
}

std::pair<double, double> bootstrap_ci(std::size_t n_rows,
                                       const std::function<double(std::span<const std::uint32_t>)>& estimator,
                                       const BootstrapOptions& options) {
  if (options.replicates < 2) throw ConfigError("bootstrap needs at least 2 replicates");
  if (!(options.level > 0.0 && options.level < 1.0)) throw ConfigError("bootstrap level must lie in (0, 1)");
  if (n_rows == 0) throw Error("bootstrap over zero rows");
  std::vector<double> values(options.replicates);
  parallel_for(options.replicates, options.threads, [&](std::size_t begin, std::size_t end) {
    std::vector<std::uint32_t> counts(n_rows);
    for (std::size_t b = begin; b < end; ++b) {
      auto rng = keyed_stream(options.seed, {b});
      std::uniform_int_distribution<std::size_t> pick(0, n_rows - 1);
      std::fill(counts.begin(), counts.end(), 0u);
      for (std::size_t i = 0; i < n_rows; ++i) ++counts[pick(rng)];
      values[b] = estimator(counts);
    }
  });
  std::erase_if(values, [](double v) { return !std::isfinite(v); });
  std::sort(values.begin(), values.end());
  const double alpha = 1.0 - options.level;
  return {quantile(values, alpha / 2), quantile(values, 1 - alpha / 2)};
}

std::pair<double, double> bootstrap_ci(const RowContributions& contributions, Normalization mode,
                                       const BootstrapOptions& options, std::size_t n_rows) {
  n_rows = std::min(n_rows, contributions.rows.size());
  return bootstrap_ci(
      n_rows, [&](std::span<const std::uint32_t> counts) { return contributions.estimate_counts(counts, mode); },
      options);
}

std::map<std::string, double> positivity_diagnostics(const std::vector<Trajectory>& trajectories,
                                                     const ObservedDataset& data, const PropensityModel& propensity,
                                                     const std::vector<std::size_t>& adjustment) {
  std::vector<double> props;
  double sw = 0.0, swr = 0.0, swr2 = 0.0;
  std::size_t floored = 0, inevaluable = 0;
  for (const auto& t : trajectories) {
    const auto ws = weight_series(t, data.schema(), data.row(t.row), propensity, adjustment);
    if (ws.inevaluable) {
      ++inevaluable;
      continue;
    }
    floored += ws.floored;
    props.push_back(ws.propensity.back());
    const double rho = ws.final();
    sw += t.weight;
    swr += t.weight * rho;
    swr2 += t.weight * rho * rho;
  }
  std::sort(props.begin(), props.end());
  std::map<std::string, double> d;
  d["min_propensity"] = props.empty() ? std::numeric_limits<double>::quiet_NaN() : props.front();
  d["propensity_q01"] = quantile(props, 0.01);
  d["propensity_q05"] = quantile(props, 0.05);
  d["propensity_q50"] = quantile(props, 0.50);
  d["floored"] = static_cast<double>(floored);
  d["inevaluable"] = static_cast<double>(inevaluable);
  d["forced_stop_frac"] = forced_fraction(trajectories);
  d["ess"] = swr2 > 0.0 ? swr * swr / swr2 : 0.0;
  d["mean_weight"] = sw > 0.0 ? swr / sw : std::numeric_limits<double>::quiet_NaN();
  return d;
}

EstimateReport make_report(const std::string& estimator, Target target, const RowContributions& contributions,
                           const EstimateOptions& options) {
  EstimateReport rep;
  rep.estimator = estimator;
  rep.target = target;
  rep.point = contributions.estimate(options.normalization);
  rep.n_rows = contributions.rows.size();
  rep.n_trajectories = contributions.n_trajectories;
  if (options.bootstrap) {
    auto [lo, hi] = bootstrap_ci(contributions, options.normalization, *options.bootstrap, contributions.rows.size());
    // Percentile intervals of skewed statistics can exclude the point estimate.
    rep.ci_low = std::min(lo, rep.point);
    rep.ci_high = std::max(hi, rep.point);
  }
  return rep;
}

namespace {

EstimateReport unweighted_report(const std::string& name, Target target, const RowContributions& c,
                                 const std::vector<Trajectory>& trajectories, const EstimateOptions& options) {
  auto rep = make_report(name, target, c, options);
  rep.diagnostics["ess"] = static_cast<double>(c.n_trajectories);
  rep.diagnostics["mean_weight"] = 1.0;
  rep.diagnostics["floored"] = 0.0;
  rep.diagnostics["forced_stop_frac"] = forced_fraction(trajectories);
  return rep;
}

}  // namespace

EstimateReport estimate_ground_truth(const std::vector<Trajectory>& trajectories, std::size_t n_rows, Target target,
                                     const EstimateOptions& options) {
  return unweighted_report("J", target, mean_cost_contributions(trajectories, n_rows, target), trajectories, options);
}

EstimateReport estimate_blocking(const std::vector<Trajectory>& trajectories, std::size_t n_rows, Target target,
                                 const EstimateOptions& options) {
  return unweighted_report("Blocking", target, mean_cost_contributions(trajectories, n_rows, target), trajectories,
                           options);
}

EstimateReport estimate_cc(const std::vector<Trajectory>& trajectories, const ObservedDataset& data, Target target,
                           const EstimateOptions& options) {
  return unweighted_report("CC", target, complete_case_contributions(trajectories, data, target), trajectories,
                           options);
}

RowContributions imp_mean_contributions(const ObservedDataset& data, std::span<const double> fill,
                                        const Policy& policy, const Classifier& classifier, const CostSpec& costs,
                                        Target target, const RolloutOptions& rollout) {
  Matrix filled(static_cast<Eigen::Index>(data.rows()), static_cast<Eigen::Index>(data.raw_width()));
  for (std::size_t r = 0; r < data.rows(); ++r) {
    const auto v = data.filled_row(r, fill);
    for (std::size_t c = 0; c < v.size(); ++c) filled(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v[c];
  }
  const FullDataset imputed(std::move(filled), data.labels());
  const auto trajectories = rollout_ground_truth(imputed, data.schema(), policy, classifier, costs, rollout);
  return mean_cost_contributions(trajectories, data.rows(), target);
}

EstimateReport estimate_imp_mean(const ObservedDataset& data, std::span<const double> fill, const Policy& policy,
                                 const Classifier& classifier, const CostSpec& costs, Target target,
                                 const RolloutOptions& rollout, const EstimateOptions& options) {
  const auto c = imp_mean_contributions(data, fill, policy, classifier, costs, target, rollout);
  auto rep = make_report("Imp-Mean", target, c, options);
  rep.diagnostics["ess"] = static_cast<double>(c.n_trajectories);
  rep.diagnostics["mean_weight"] = 1.0;
  rep.diagnostics["floored"] = 0.0;
  return rep;
}

EstimateReport estimate_ipw_miss(const std::vector<Trajectory>& trajectories, const ObservedDataset& data,
                                 const PropensityModel& propensity, Target target, const EstimateOptions& options) {
  const auto c = ipw_miss_contributions(trajectories, data, propensity, target);
  auto rep = make_report("IPW-Miss", target, c, options);
  double sw = 0.0, sw2 = 0.0, n = 0.0;
  for (const auto& r : c.rows) {
    sw += r.normalizer;
    n += r.count;
  }
  for (const auto& t : trajectories) {
    if (!data.complete(t.row)) continue;
    const double w = 1.0 / std::max(*propensity.prob_complete(data.row(t.row)), kPropensityFloor);
    sw2 += t.weight * w * w;
  }
  rep.diagnostics["ess"] = sw2 > 0.0 ? sw * sw / sw2 : 0.0;
  rep.diagnostics["mean_weight"] = sw / n;
  rep.diagnostics["floored"] = 0.0;
  rep.diagnostics["forced_stop_frac"] = forced_fraction(trajectories);
  return rep;
}

EstimateReport estimate_ipw_semi(const std::vector<Trajectory>& trajectories, const ObservedDataset& data,
                                 const PropensityModel& propensity, Target target, const EstimateOptions& options) {
  auto rep = make_report("IPW-Semi", target, ipw_semi_contributions(trajectories, data, propensity, target), options);
  rep.diagnostics = positivity_diagnostics(trajectories, data, propensity);
  return rep;
}

EstimateReport estimate_dm_semi(const QModel& q, const ObservedDataset& data, const Policy& target_policy, Target target,
                                const EstimateOptions& options) {
  return make_report("DM-Semi", target, dm_semi_contributions(q, data, target_policy), options);
}

EstimateReport estimate_drl_semi(const std::vector<Trajectory>& trajectories, const ObservedDataset& data,
                                 const PropensityModel& propensity, const QModel& q, Target target,
                                 const EstimateOptions& options) {
  auto rep =
      make_report("DRL-Semi", target, drl_semi_contributions(trajectories, data, propensity, q, target), options);
  rep.diagnostics = positivity_diagnostics(trajectories, data, propensity);
  return rep;
}

EstimateReport estimate_ipw_semi_miss(const std::vector<Trajectory>& trajectories, const ObservedDataset& data,
                                      const PropensityModel& propensity, const std::vector<std::size_t>& adjustment,
                                      Target target, const EstimateOptions& options) {
  if (adjustment.empty()) throw ConfigError("IPW-Semi-Miss needs a nonempty adjustment set; use IPW-Semi instead");
  auto rep = make_report("IPW-Semi-Miss", target,
                         ipw_semi_contributions(trajectories, data, propensity, target, adjustment), options);
  rep.diagnostics = positivity_diagnostics(trajectories, data, propensity, adjustment);
  return rep;
}

void write_reports_csv(std::ostream& out, const std::vector<EstimateReport>& reports) {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  auto diag = [](const EstimateReport& r, const char* key) {
    const auto it = r.diagnostics.find(key);
    return it == r.diagnostics.end() ? std::string() : format_double(it->second);
  };
  out << "estimator,policy,target,point,ci_low,ci_high,n_rows,n_traj,ess,mean_weight,floored,forced_stop_frac\n";
  for (const auto& r : reports) {
    out << r.estimator << ',' << r.policy << ',' << to_string(r.target) << ',' << format_double(r.point) << ','
        << opt(r.ci_low) << ',' << opt(r.ci_high) << ',' << r.n_rows << ',' << r.n_trajectories << ','
        << diag(r, "ess") << ',' << diag(r, "mean_weight") << ',' << diag(r, "floored") << ','
        << diag(r, "forced_stop_frac") << '\n';
  }
}

nlohmann::json to_json(const EstimateReport& r) {
  nlohmann::json j{{"estimator", r.estimator},
                   {"policy", r.policy},
                   {"target", to_string(r.target)},
                   {"point", r.point},
                   {"n_rows", r.n_rows},
                   {"n_trajectories", r.n_trajectories}};
  if (r.ci_low) j["ci_low"] = *r.ci_low;
  if (r.ci_high) j["ci_high"] = *r.ci_high;
  nlohmann::json d = nlohmann::json::object();
  for (const auto& [k, v] : r.diagnostics) {
    if (std::isfinite(v)) {
      d[k] = v;
    } else {
      d[k] = nullptr;
    }
  }
  j["diagnostics"] = d;
  return j;
}

}  // namespace afape
