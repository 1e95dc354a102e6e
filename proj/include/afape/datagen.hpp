#pragma once

#include "afape/core.hpp"

#include <iosfwd>
#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

namespace afape {

// P(R_j = 1 | X_(1)) for one superfeature.
struct MissingnessRule {
  enum class Kind { Always, Constant, Logistic };

  Kind kind = Kind::Always;
  double p = 1.0;          // Constant
  double intercept = 0.0;  // Logistic
  std::vector<std::pair<std::size_t, double>> terms;  // (raw column, coefficient)

  static MissingnessRule always() { return {}; }
  static MissingnessRule constant(double p);
  static MissingnessRule logistic(double intercept, std::vector<std::pair<std::size_t, double>> terms);

  double probability(std::span<const double> full_row) const;
};

struct MissingnessMechanism {
  std::vector<MissingnessRule> rules;  // one per superfeature

  void validate(const SuperfeatureSchema& schema) const;
  // True if some rule conditions on a column whose superfeature can be missing.
  bool is_mnar(const SuperfeatureSchema& schema) const;
};

// Zero-mean multivariate normal features with labels drawn as
// P(Y=1) = 1 if sum(x) > 0 else 0.3. Row r uses the stream (seed, r).
FullDataset generate_synthetic(std::size_t n, const Matrix& covariance, std::uint64_t seed);
// Label rule used by generate_synthetic.
double synthetic_label_probability(std::span<const double> features);

ObservedDataset apply_missingness(const FullDataset& full, const SuperfeatureSchema& schema,
                                  const MissingnessMechanism& mech, std::uint64_t seed);

// Reads a CSV with a header row. Feature columns are all non-label columns in
// header order, except `mask_<superfeature>` columns which, when present,
// override the sentinel-derived mask. Partially observed superfeatures are
// rejected.
ObservedDataset load_csv(const std::string& path, const SuperfeatureSchema& schema,
                         const std::string& label_column, const std::string& sentinel_token = "?");
ObservedDataset read_csv(std::istream& in, const SuperfeatureSchema& schema, const std::string& label_column,
                         const std::string& sentinel_token = "?");

// Dataset dump: feature columns (empty cell when unobserved), label, then one
// mask_<superfeature> column per superfeature.
void write_csv(std::ostream& out, const ObservedDataset& data, const std::vector<std::string>& column_names = {},
               const std::string& label_column = "label");

// Synthetic setup: superX0=[X0] free, superX1=[X1], superX2=[X2,X3].
SuperfeatureSchema synthetic_schema();
MissingnessMechanism synthetic_mar_mechanism();
MissingnessMechanism synthetic_mnar_mechanism();
// Diagonal covariance (1.5^2, 2.6^2, 1, 1) that reproduces the reported
// complete-case ratios for both mechanisms.
Matrix synthetic_covariance();

nlohmann::json to_json(const MissingnessMechanism& mech);
MissingnessMechanism mechanism_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SuperfeatureSchema& schema);
// Accepts {"superfeatures": [{"name", "columns": [int | name...], "cost"}]};
// column names are resolved against `column_names` when given.
SuperfeatureSchema schema_from_json(const nlohmann::json& j, const std::vector<std::string>& column_names = {});

std::string format_double(double v);

}  // namespace afape
