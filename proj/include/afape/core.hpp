#pragma once

// Domain types shared by every module: superfeature schema, cost structure,
// full/observed datasets, acquisition states, trajectories and reports.

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace afape {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mask = std::vector<std::uint8_t>;

// Action index for "stop & predict". Superfeature actions are 0..d_super-1.
inline constexpr int kStop = -1;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct Superfeature {
  std::string name;
  std::vector<std::size_t> raw_columns;
  double cost = 0.0;
};

// Ordered superfeatures whose raw columns partition [0, raw_width). The free
// set is exactly the superfeatures with cost 0; they are revealed at step 0.
class SuperfeatureSchema {
 public:
  SuperfeatureSchema() = default;
  explicit SuperfeatureSchema(std::vector<Superfeature> superfeatures);

  // One superfeature per raw column, costs aligned with columns.
  static SuperfeatureSchema singletons(const std::vector<double>& costs);

  std::size_t size() const { return superfeatures_.size(); }
  std::size_t raw_width() const { return owner_.size(); }
  const Superfeature& operator[](std::size_t j) const { return superfeatures_[j]; }
  const std::vector<Superfeature>& superfeatures() const { return superfeatures_; }

  bool is_free(std::size_t j) const { return superfeatures_[j].cost == 0.0; }
  const std::vector<std::size_t>& free_set() const { return free_; }
  const std::vector<std::size_t>& costly() const { return costly_; }
  std::size_t owner(std::size_t raw_column) const { return owner_[raw_column]; }
  std::optional<std::size_t> find(const std::string& name) const;

  // Raw columns of all free superfeatures, in ascending order.
  std::vector<std::size_t> free_columns() const;
  // Raw columns of the given superfeatures, in ascending order.
  std::vector<std::size_t> columns_of(const std::vector<std::size_t>& superfeatures) const;

  // Stable 64-bit fingerprint of names, columns and costs.
  std::uint64_t hash() const;

  friend bool operator==(const SuperfeatureSchema& a, const SuperfeatureSchema& b);

 private:
  std::vector<Superfeature> superfeatures_;
  std::vector<std::size_t> owner_;
  std::vector<std::size_t> free_;
  std::vector<std::size_t> costly_;
};

struct CostSpec {
  std::vector<double> acquisition;  // aligned with the schema
  double misclassification = 1.0;

  static CostSpec from_schema(const SuperfeatureSchema& schema, double c_mc);
  void validate(const SuperfeatureSchema& schema) const;
};

// Counterfactual (fully observed) features and labels.
class FullDataset {
 public:
  FullDataset() = default;
  FullDataset(Matrix features, std::vector<int> labels);

  std::size_t rows() const { return static_cast<std::size_t>(features_.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(features_.cols()); }
  const Matrix& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }
  int n_classes() const { return n_classes_; }
  std::span<const double> row(std::size_t r) const {
    return {features_.row(static_cast<Eigen::Index>(r)).data(), cols()};
  }

  FullDataset subset(const std::vector<std::size_t>& rows) const;

 private:
  Matrix features_;
  std::vector<int> labels_;
  int n_classes_ = 0;
};

// One retrospective row. values[c] is meaningful only where mask[owner(c)] is 1.
struct RowView {
  std::span<const double> values;
  std::span<const std::uint8_t> mask;

  bool observed(std::size_t superfeature) const { return mask[superfeature] != 0; }
};

// Retrospective data with missingness tracked per superfeature. Unobserved
// cells have no value; the mask is authoritative.
class ObservedDataset {
 public:
  ObservedDataset() = default;
  ObservedDataset(SuperfeatureSchema schema, Matrix features, Mask mask, std::vector<int> labels);

  // Every superfeature observed in every row.
  static ObservedDataset fully_observed(const FullDataset& full, const SuperfeatureSchema& schema);

  std::size_t rows() const { return labels_.size(); }
  std::size_t raw_width() const { return schema_.raw_width(); }
  const SuperfeatureSchema& schema() const { return schema_; }
  const std::vector<int>& labels() const { return labels_; }
  int label(std::size_t r) const { return labels_[r]; }
  int n_classes() const { return n_classes_; }

  bool observed(std::size_t r, std::size_t superfeature) const {
    return mask_[r * schema_.size() + superfeature] != 0;
  }
  std::optional<double> value(std::size_t r, std::size_t raw_column) const;
  RowView row(std::size_t r) const;
  std::span<const std::uint8_t> mask_row(std::size_t r) const {
    return {mask_.data() + r * schema_.size(), schema_.size()};
  }
  bool complete(std::size_t r) const;
  double complete_fraction() const;

  // Raw values of the row with unobserved cells replaced by `fill`.
  std::vector<double> filled_row(std::size_t r, std::span<const double> fill) const;
  // Per raw column mean over observed cells (0 when a column is never observed).
  std::vector<double> column_means() const;

  ObservedDataset subset(const std::vector<std::size_t>& rows) const;

  // True when the generating mechanism conditioned on a column that can itself
  // be missing. Set by apply_missingness.
  bool mnar = false;

 private:
  SuperfeatureSchema schema_;
  Matrix features_;
  Mask mask_;
  std::vector<int> labels_;
  int n_classes_ = 0;
};

// Acquisition state R'^t with revealed values. Free superfeatures are
// acquired at construction and do not count as steps.
class AcquisitionState {
 public:
  AcquisitionState(const SuperfeatureSchema& schema, std::span<const double> source);

  const Mask& acquired() const { return acquired_; }
  bool has(std::size_t superfeature) const { return acquired_[superfeature] != 0; }
  std::size_t step() const { return step_; }
  std::optional<double> value(std::size_t raw_column) const;
  // Raw values; entries of unacquired columns are 0 and carry no meaning.
  std::span<const double> values() const { return values_; }
  const SuperfeatureSchema& schema() const { return *schema_; }

  // Reveal superfeature j from the source row.
  void acquire(std::size_t j, std::span<const double> source);

 private:
  const SuperfeatureSchema* schema_;
  Mask acquired_;
  std::vector<double> values_;
  std::size_t step_ = 0;
};

struct TrajectoryStep {
  int action = kStop;
  double p_alpha = 0.0;  // target policy, unblocked
  double p_sim = 0.0;    // blocked simulation policy
  double acquisition_cost = 0.0;
  // Full target-policy distribution at the state preceding this step,
  // indexed by superfeature with STOP last.
  std::vector<double> target_probs;
};

struct Trajectory {
  std::size_t row = 0;
  std::size_t episode = 0;
  std::vector<TrajectoryStep> steps;
  int prediction = 0;
  double mc_cost = 0.0;
  bool forced_stop = false;
  // Sampling weight: 1 for Monte Carlo rollouts, path probability for
  // exhaustively enumerated rollouts.
  double weight = 1.0;

  double acquisition_cost() const;
  double total_cost() const { return acquisition_cost() + mc_cost; }
};

// States preceding each step of a trajectory, rebuilt from the source row.
std::vector<AcquisitionState> replay_states(const SuperfeatureSchema& schema, std::span<const double> source,
                                            const Trajectory& trajectory);

enum class Target { Misclassification, Acquisition, Total };

std::string to_string(Target target);
Target parse_target(const std::string& name);

struct EstimateReport {
  std::string estimator;
  std::string policy;
  Target target = Target::Misclassification;
  double point = 0.0;
  std::optional<double> ci_low;
  std::optional<double> ci_high;
  std::size_t n_rows = 0;
  std::size_t n_trajectories = 0;
  std::map<std::string, double> diagnostics;
};

// Number of ordered acquisition sequences over m available features,
// sum_{i=0..m} m!/(m-i)!. Throws std::overflow_error past uint64.
std::uint64_t count_trajectories(std::uint64_t m);

}  // namespace afape
