#include "afape/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace afape {

namespace {

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

int count_classes(const std::vector<int>& labels) {
  int k = 0;
  for (int y : labels) {
    if (y < 0) throw Error("labels must be nonnegative class indices");
    k = std::max(k, y + 1);
  }
  return k;
}

}  // namespace

SuperfeatureSchema::SuperfeatureSchema(std::vector<Superfeature> superfeatures)
    : superfeatures_(std::move(superfeatures)) {
  std::size_t width = 0;
  for (const auto& sf : superfeatures_) {
    if (sf.raw_columns.empty()) throw Error("superfeature '" + sf.name + "' has no columns");
    if (!(sf.cost >= 0.0)) throw Error("superfeature '" + sf.name + "' has negative cost");
    for (std::size_t c : sf.raw_columns) width = std::max(width, c + 1);
  }
  const std::size_t unset = superfeatures_.size();
  owner_.assign(width, unset);
  for (std::size_t j = 0; j < superfeatures_.size(); ++j) {
    for (std::size_t c : superfeatures_[j].raw_columns) {
      if (owner_[c] != unset) {
        throw Error("raw column " + std::to_string(c) + " belongs to two superfeatures");
      }
      owner_[c] = j;
    }
    (superfeatures_[j].cost == 0.0 ? free_ : costly_).push_back(j);
  }
  for (std::size_t c = 0; c < width; ++c) {
    if (owner_[c] == unset) throw Error("raw column " + std::to_string(c) + " has no superfeature");
  }
}

SuperfeatureSchema SuperfeatureSchema::singletons(const std::vector<double>& costs) {
  std::vector<Superfeature> sfs;
  for (std::size_t j = 0; j < costs.size(); ++j) {
    sfs.push_back({"X" + std::to_string(j), {j}, costs[j]});
  }
  return SuperfeatureSchema(std::move(sfs));
}

std::optional<std::size_t> SuperfeatureSchema::find(const std::string& name) const {
  for (std::size_t j = 0; j < superfeatures_.size(); ++j) {
    if (superfeatures_[j].name == name) return j;
  }
  return std::nullopt;
}

std::vector<std::size_t> SuperfeatureSchema::free_columns() const { return columns_of(free_); }

std::vector<std::size_t> SuperfeatureSchema::columns_of(const std::vector<std::size_t>& sfs) const {
  std::vector<std::size_t> cols;
  for (std::size_t j : sfs) {
    const auto& rc = superfeatures_.at(j).raw_columns;
    cols.insert(cols.end(), rc.begin(), rc.end());
  }
  std::sort(cols.begin(), cols.end());
  return cols;
}

std::uint64_t SuperfeatureSchema::hash() const {
  std::ostringstream os;
  os.precision(17);
  for (const auto& sf : superfeatures_) {
    os << sf.name << '[';
    for (std::size_t c : sf.raw_columns) os << c << ',';
    os << "]" << sf.cost << ';';
  }
  return fnv1a(os.str());
}

bool operator==(const SuperfeatureSchema& a, const SuperfeatureSchema& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t j = 0; j < a.size(); ++j) {
    if (a[j].name != b[j].name || a[j].raw_columns != b[j].raw_columns || a[j].cost != b[j].cost) {
      return false;
    }
  }
  return true;
}

CostSpec CostSpec::from_schema(const SuperfeatureSchema& schema, double c_mc) {
  CostSpec costs;
  for (const auto& sf : schema.superfeatures()) costs.acquisition.push_back(sf.cost);
  costs.misclassification = c_mc;
  costs.validate(schema);
  return costs;
}

void CostSpec::validate(const SuperfeatureSchema& schema) const {
  if (acquisition.size() != schema.size()) throw Error("c_acq length does not match schema");
  for (std::size_t j = 0; j < schema.size(); ++j) {
    if (!(acquisition[j] >= 0.0)) throw Error("c_acq must be nonnegative");
    if ((acquisition[j] == 0.0) != schema.is_free(j)) {
      throw Error("c_acq[" + std::to_string(j) + "] must be 0 exactly for free superfeatures");
    }
  }
  if (!(misclassification > 0.0)) throw Error("c_mc must be positive");
}

FullDataset::FullDataset(Matrix features, std::vector<int> labels)
    : features_(std::move(features)), labels_(std::move(labels)) {
  if (static_cast<std::size_t>(features_.rows()) != labels_.size()) {
    throw Error("feature rows and label count differ");
  }
  if (!features_.allFinite()) throw Error("full dataset contains non-finite values");
  n_classes_ = count_classes(labels_);
}

FullDataset FullDataset::subset(const std::vector<std::size_t>& rows) const {
  Matrix f(static_cast<Eigen::Index>(rows.size()), features_.cols());
  std::vector<int> y(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    f.row(static_cast<Eigen::Index>(i)) = features_.row(static_cast<Eigen::Index>(rows[i]));
    y[i] = labels_[rows[i]];
  }
  FullDataset out(std::move(f), std::move(y));
  out.n_classes_ = std::max(out.n_classes_, n_classes_);
  return out;
}

ObservedDataset::ObservedDataset(SuperfeatureSchema schema, Matrix features, Mask mask,
                                 std::vector<int> labels)
    : schema_(std::move(schema)),
      features_(std::move(features)),
      mask_(std::move(mask)),
      labels_(std::move(labels)) {
  const std::size_t n = labels_.size();
  if (static_cast<std::size_t>(features_.rows()) != n) throw Error("feature rows and label count differ");
  if (static_cast<std::size_t>(features_.cols()) != schema_.raw_width()) {
    throw Error("feature width does not match schema");
  }
  if (mask_.size() != n * schema_.size()) throw Error("mask size does not match rows x superfeatures");
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j : schema_.free_set()) {
      if (!observed(r, j)) {
        throw Error("free superfeature '" + schema_[j].name + "' unobserved in row " + std::to_string(r));
      }
    }
    // Unobserved cells are zeroed so no stale value can leak.
    for (std::size_t c = 0; c < schema_.raw_width(); ++c) {
      auto& cell = features_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      if (!observed(r, schema_.owner(c))) {
        cell = 0.0;
      } else if (!std::isfinite(cell)) {
        throw Error("non-finite observed value at row " + std::to_string(r));
      }
    }
  }
  n_classes_ = count_classes(labels_);
}

ObservedDataset ObservedDataset::fully_observed(const FullDataset& full, const SuperfeatureSchema& schema) {
  Mask mask(full.rows() * schema.size(), 1);
  return ObservedDataset(schema, full.features(), std::move(mask), full.labels());
}

std::optional<double> ObservedDataset::value(std::size_t r, std::size_t c) const {
  if (!observed(r, schema_.owner(c))) return std::nullopt;
  return features_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

RowView ObservedDataset::row(std::size_t r) const {
  return RowView{{features_.row(static_cast<Eigen::Index>(r)).data(), schema_.raw_width()}, mask_row(r)};
}

bool ObservedDataset::complete(std::size_t r) const {
  const auto m = mask_row(r);
  return std::all_of(m.begin(), m.end(), [](std::uint8_t b) { return b != 0; });
}

double ObservedDataset::complete_fraction() const {
  if (rows() == 0) return 0.0;
  std::size_t k = 0;
  for (std::size_t r = 0; r < rows(); ++r) k += complete(r) ? 1 : 0;
  return static_cast<double>(k) / static_cast<double>(rows());
}

std::vector<double> ObservedDataset::filled_row(std::size_t r, std::span<const double> fill) const {
  std::vector<double> out(raw_width());
  for (std::size_t c = 0; c < raw_width(); ++c) {
    auto v = value(r, c);
    out[c] = v ? *v : fill[c];
  }
  return out;
}

std::vector<double> ObservedDataset::column_means() const {
  std::vector<double> sum(raw_width(), 0.0), count(raw_width(), 0.0);
  for (std::size_t r = 0; r < rows(); ++r) {
    for (std::size_t c = 0; c < raw_width(); ++c) {
      if (auto v = value(r, c)) {
        sum[c] += *v;
        count[c] += 1.0;
      }
    }
  }
  for (std::size_t c = 0; c < raw_width(); ++c) sum[c] = count[c] > 0 ? sum[c] / count[c] : 0.0;
  return sum;
}

ObservedDataset ObservedDataset::subset(const std::vector<std::size_t>& rows) const {
  const std::size_t d = schema_.size();
  Matrix f(static_cast<Eigen::Index>(rows.size()), features_.cols());
  Mask m(rows.size() * d);
  std::vector<int> y(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    f.row(static_cast<Eigen::Index>(i)) = features_.row(static_cast<Eigen::Index>(rows[i]));
    std::copy_n(mask_.begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d,
                m.begin() + static_cast<std::ptrdiff_t>(i * d));
    y[i] = labels_[rows[i]];
  }
  ObservedDataset out(schema_, std::move(f), std::move(m), std::move(y));
  out.mnar = mnar;
  out.n_classes_ = std::max(out.n_classes_, n_classes_);
  return out;
}

AcquisitionState::AcquisitionState(const SuperfeatureSchema& schema, std::span<const double> source)
    : schema_(&schema), acquired_(schema.size(), 0), values_(schema.raw_width(), 0.0) {
  for (std::size_t j : schema.free_set()) {
    acquired_[j] = 1;
    for (std::size_t c : schema[j].raw_columns) values_[c] = source[c];
  }
}

std::optional<double> AcquisitionState::value(std::size_t c) const {
  if (!acquired_[schema_->owner(c)]) return std::nullopt;
  return values_[c];
}

void AcquisitionState::acquire(std::size_t j, std::span<const double> source) {
  if (acquired_.at(j)) throw Error("superfeature acquired twice");
  acquired_[j] = 1;
  for (std::size_t c : (*schema_)[j].raw_columns) values_[c] = source[c];
  ++step_;
}

double Trajectory::acquisition_cost() const {
  double s = 0.0;
  for (const auto& st : steps) s += st.acquisition_cost;
  return s;
}

std::vector<AcquisitionState> replay_states(const SuperfeatureSchema& schema, std::span<const double> source,
                                            const Trajectory& trajectory) {
  std::vector<AcquisitionState> states;
  states.reserve(trajectory.steps.size());
  AcquisitionState state(schema, source);
  for (const auto& step : trajectory.steps) {
    states.push_back(state);
    if (step.action != kStop) state.acquire(static_cast<std::size_t>(step.action), source);
  }
  return states;
}

std::string to_string(Target target) {
  switch (target) {
    case Target::Misclassification: return "J_mc";
    case Target::Acquisition: return "J_a";
    case Target::Total: return "J_total";
  }
  return "?";
}

Target parse_target(const std::string& name) {
  if (name == "J_mc" || name == "J") return Target::Misclassification;
  if (name == "J_a") return Target::Acquisition;
  if (name == "J_total") return Target::Total;
  throw ConfigError("unknown target '" + name + "' (expected J_mc, J_a or J_total)");
}

std::uint64_t count_trajectories(std::uint64_t m) {
  // term_i = m!/(m-i)! = term_{i-1} * (m-i+1)
  std::uint64_t total = 1;
  std::uint64_t term = 1;
  for (std::uint64_t i = 1; i <= m; ++i) {
    if (__builtin_mul_overflow(term, m - i + 1, &term) || __builtin_add_overflow(total, term, &total)) {
      throw std::overflow_error("count_trajectories(" + std::to_string(m) + ") exceeds 64 bits");
    }
  }
  return total;
}

}  // namespace afape
