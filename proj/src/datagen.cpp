#include "afape/datagen.hpp"

#include "afape/rng.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace afape {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  out.push_back(cell);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::optional<double> parse_double(const std::string& s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) return std::nullopt;
  return v;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

MissingnessRule MissingnessRule::constant(double p) {
  if (!(p > 0.0 && p <= 1.0)) throw Error("constant missingness probability must lie in (0, 1]");
  MissingnessRule r;
  r.kind = Kind::Constant;
  r.p = p;
  return r;
}

MissingnessRule MissingnessRule::logistic(double intercept, std::vector<std::pair<std::size_t, double>> terms) {
  MissingnessRule r;
  r.kind = Kind::Logistic;
  r.intercept = intercept;
  r.terms = std::move(terms);
  return r;
}

double MissingnessRule::probability(std::span<const double> x) const {
  switch (kind) {
    case Kind::Always: return 1.0;
    case Kind::Constant: return p;
    case Kind::Logistic: {
      double z = intercept;
      for (const auto& [c, w] : terms) z += w * x[c];
      return sigmoid(z);
    }
  }
  return 1.0;
}

void MissingnessMechanism::validate(const SuperfeatureSchema& schema) const {
  if (rules.size() != schema.size()) throw Error("mechanism needs one rule per superfeature");
  for (std::size_t j = 0; j < rules.size(); ++j) {
    if (schema.is_free(j) && rules[j].kind != MissingnessRule::Kind::Always) {
      throw Error("free superfeature '" + schema[j].name + "' must use the ALWAYS rule");
    }
    for (const auto& [c, w] : rules[j].terms) {
      if (c >= schema.raw_width()) throw Error("mechanism conditions on a column outside the schema");
      if (schema.owner(c) == j) {
        throw Error("rule for '" + schema[j].name + "' conditions on its own columns");
      }
    }
  }
}

bool MissingnessMechanism::is_mnar(const SuperfeatureSchema& schema) const {
  for (const auto& rule : rules) {
    for (const auto& [c, w] : rule.terms) {
      if (rules[schema.owner(c)].kind != MissingnessRule::Kind::Always) return true;
    }
  }
  return false;
}

double synthetic_label_probability(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s > 0.0 ? 1.0 : 0.3;
}

FullDataset generate_synthetic(std::size_t n, const Matrix& covariance, std::uint64_t seed) {
  if (n == 0) throw Error("generate_synthetic needs n >= 1");
  if (covariance.rows() != covariance.cols() || covariance.rows() == 0) {
    throw Error("covariance must be a nonempty square matrix");
  }
  if (!covariance.isApprox(covariance.transpose())) throw Error("covariance must be symmetric");
  const Eigen::LLT<Eigen::MatrixXd> llt(covariance);
  if (llt.info() != Eigen::Success) throw Error("covariance is not positive definite");
  const Eigen::MatrixXd chol = llt.matrixL();
  const auto d = covariance.rows();

  Matrix features(static_cast<Eigen::Index>(n), d);
  std::vector<int> labels(n);
  Eigen::VectorXd z(d);
  for (std::size_t r = 0; r < n; ++r) {
    auto rng = keyed_stream(seed, {r});
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index k = 0; k < d; ++k) z(k) = normal(rng);
    const Eigen::VectorXd x = chol * z;
    features.row(static_cast<Eigen::Index>(r)) = x.transpose();
    const double p1 = synthetic_label_probability({x.data(), static_cast<std::size_t>(d)});
    labels[r] = uniform01(rng) < p1 ? 1 : 0;
  }
  return FullDataset(std::move(features), std::move(labels));
}

ObservedDataset apply_missingness(const FullDataset& full, const SuperfeatureSchema& schema,
                                  const MissingnessMechanism& mech, std::uint64_t seed) {
  if (full.cols() != schema.raw_width()) throw Error("dataset width does not match schema");
  mech.validate(schema);
  const std::size_t d = schema.size();
  Mask mask(full.rows() * d, 1);
  for (std::size_t r = 0; r < full.rows(); ++r) {
    auto rng = keyed_stream(seed, {r});
    const auto x = full.row(r);
    for (std::size_t j = 0; j < d; ++j) {
      const double u = uniform01(rng);
      mask[r * d + j] = u < mech.rules[j].probability(x) ? 1 : 0;
    }
  }
  ObservedDataset out(schema, full.features(), std::move(mask), full.labels());
  out.mnar = mech.is_mnar(schema);
  return out;
}

ObservedDataset read_csv(std::istream& in, const SuperfeatureSchema& schema, const std::string& label_column,
                         const std::string& sentinel_token) {
  std::string line;
  if (!std::getline(in, line)) throw Error("CSV is empty (header row required)");
  const auto header = split_csv_line(line);

  std::optional<std::size_t> label_idx;
  std::vector<std::size_t> feature_idx;
  std::map<std::size_t, std::size_t> mask_idx;  // superfeature -> csv column
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string name = trim(header[i]);
    if (name == label_column) {
      label_idx = i;
    } else if (name.rfind("mask_", 0) == 0) {
      const auto j = schema.find(name.substr(5));
      if (!j) throw Error("mask column '" + name + "' names no superfeature of the schema");
      mask_idx[*j] = i;
    } else {
      feature_idx.push_back(i);
    }
  }
  if (!label_idx) throw Error("label column '" + label_column + "' not found in CSV header");
  if (feature_idx.size() != schema.raw_width()) {
    throw Error("CSV has " + std::to_string(feature_idx.size()) + " feature columns, schema expects " +
                std::to_string(schema.raw_width()));
  }

  const std::size_t d = schema.size();
  std::vector<std::vector<double>> rows;
  Mask mask;
  std::vector<std::string> raw_labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw Error("CSV line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                  " cells, header has " + std::to_string(header.size()));
    }
    const std::size_t r = rows.size();
    std::vector<double> values(schema.raw_width(), 0.0);
    std::vector<int> seen(d, 0), missing(d, 0);
    for (std::size_t c = 0; c < feature_idx.size(); ++c) {
      const std::string cell = trim(cells[feature_idx[c]]);
      const std::size_t j = schema.owner(c);
      if (cell == sentinel_token || cell.empty()) {
        ++missing[j];
        continue;
      }
      const auto v = parse_double(cell);
      if (!v) {
        throw Error("unparseable numeric cell '" + cell + "' at CSV line " + std::to_string(line_no) +
                    ", column '" + trim(header[feature_idx[c]]) + "'");
      }
      values[c] = *v;
      ++seen[j];
    }
    for (std::size_t j = 0; j < d; ++j) {
      std::uint8_t bit = missing[j] == 0 ? 1 : 0;
      if (auto it = mask_idx.find(j); it != mask_idx.end()) {
        const auto mv = parse_double(cells[it->second]);
        if (!mv || (*mv != 0.0 && *mv != 1.0)) {
          throw Error("mask column for '" + schema[j].name + "' must be 0 or 1 at CSV line " +
                      std::to_string(line_no));
        }
        bit = *mv == 1.0 ? 1 : 0;
        if (bit && missing[j] > 0) {
          throw Error("row " + std::to_string(r) + ": superfeature '" + schema[j].name +
                      "' is marked observed but has missing cells");
        }
      } else if (missing[j] > 0 && seen[j] > 0) {
        throw Error("row " + std::to_string(r) + ": superfeature '" + schema[j].name +
                    "' is partially observed");
      }
      mask.push_back(bit);
    }
    rows.push_back(std::move(values));
    raw_labels.push_back(trim(cells[*label_idx]));
  }

  // Integer labels are used as-is; anything else maps to sorted category order.
  std::vector<int> labels(raw_labels.size());
  bool integral = true;
  for (std::size_t i = 0; i < raw_labels.size() && integral; ++i) {
    int v = 0;
    const auto& s = raw_labels[i];
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    integral = ec == std::errc() && ptr == s.data() + s.size() && v >= 0;
    labels[i] = v;
  }
  if (!integral) {
    const std::set<std::string> cats(raw_labels.begin(), raw_labels.end());
    const std::vector<std::string> sorted(cats.begin(), cats.end());
    for (std::size_t i = 0; i < raw_labels.size(); ++i) {
      labels[i] = static_cast<int>(std::lower_bound(sorted.begin(), sorted.end(), raw_labels[i]) - sorted.begin());
    }
  }

  Matrix features(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(schema.raw_width()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < schema.raw_width(); ++c) {
      features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return ObservedDataset(schema, std::move(features), std::move(mask), std::move(labels));
}

ObservedDataset load_csv(const std::string& path, const SuperfeatureSchema& schema, const std::string& label_column,
                         const std::string& sentinel_token) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open CSV '" + path + "'");
  return read_csv(in, schema, label_column, sentinel_token);
}

void write_csv(std::ostream& out, const ObservedDataset& data, const std::vector<std::string>& column_names,
               const std::string& label_column) {
  const auto& schema = data.schema();
  for (std::size_t c = 0; c < data.raw_width(); ++c) {
    out << (c < column_names.size() ? column_names[c] : "x" + std::to_string(c)) << ',';
  }
  out << label_column;
  for (const auto& sf : schema.superfeatures()) out << ",mask_" << sf.name;
  out << '\n';
  for (std::size_t r = 0; r < data.rows(); ++r) {
    for (std::size_t c = 0; c < data.raw_width(); ++c) {
      if (auto v = data.value(r, c)) out << format_double(*v);
      out << ',';
    }
    out << data.label(r);
    for (std::size_t j = 0; j < schema.size(); ++j) out << ',' << (data.observed(r, j) ? 1 : 0);
    out << '\n';
  }
}

SuperfeatureSchema synthetic_schema() {
  return SuperfeatureSchema({{"superX0", {0}, 0.0}, {"superX1", {1}, 1.0}, {"superX2", {2, 3}, 1.0}});
}

MissingnessMechanism synthetic_mar_mechanism() {
  return {{MissingnessRule::always(), MissingnessRule::logistic(-0.3, {{0, 0.5}}),
           MissingnessRule::logistic(-0.1, {{0, 0.6}})}};
}

MissingnessMechanism synthetic_mnar_mechanism() {
  return {{MissingnessRule::always(), MissingnessRule::constant(0.7), MissingnessRule::logistic(-1.5, {{1, 1.0}})}};
}

Matrix synthetic_covariance() {
  Matrix cov = Matrix::Zero(4, 4);
  cov(0, 0) = 1.5 * 1.5;
  cov(1, 1) = 2.6 * 2.6;
  cov(2, 2) = 1.0;
  cov(3, 3) = 1.0;
  return cov;
}

nlohmann::json to_json(const MissingnessMechanism& mech) {
  nlohmann::json rules = nlohmann::json::array();
  for (const auto& r : mech.rules) {
    switch (r.kind) {
      case MissingnessRule::Kind::Always: rules.push_back({{"kind", "always"}}); break;
      case MissingnessRule::Kind::Constant: rules.push_back({{"kind", "constant"}, {"p", r.p}}); break;
      case MissingnessRule::Kind::Logistic: {
        nlohmann::json terms = nlohmann::json::array();
        for (const auto& [c, w] : r.terms) terms.push_back({{"column", c}, {"coef", w}});
        rules.push_back({{"kind", "logistic"}, {"intercept", r.intercept}, {"terms", terms}});
        break;
      }
    }
  }
  return {{"rules", rules}};
}

MissingnessMechanism mechanism_from_json(const nlohmann::json& j) {
  MissingnessMechanism mech;
  for (const auto& r : j.at("rules")) {
    const std::string kind = r.at("kind").get<std::string>();
    if (kind == "always") {
      mech.rules.push_back(MissingnessRule::always());
    } else if (kind == "constant") {
      mech.rules.push_back(MissingnessRule::constant(r.at("p").get<double>()));
    } else if (kind == "logistic") {
      std::vector<std::pair<std::size_t, double>> terms;
      for (const auto& t : r.value("terms", nlohmann::json::array())) {
        terms.emplace_back(t.at("column").get<std::size_t>(), t.at("coef").get<double>());
      }
      mech.rules.push_back(MissingnessRule::logistic(r.value("intercept", 0.0), std::move(terms)));
    } else {
      throw ConfigError("unknown missingness rule kind '" + kind + "'");
    }
  }
  return mech;
}

nlohmann::json to_json(const SuperfeatureSchema& schema) {
  nlohmann::json sfs = nlohmann::json::array();
  for (const auto& sf : schema.superfeatures()) {
    sfs.push_back({{"name", sf.name}, {"columns", sf.raw_columns}, {"cost", sf.cost}});
  }
  return {{"superfeatures", sfs}};
}

SuperfeatureSchema schema_from_json(const nlohmann::json& j, const std::vector<std::string>& column_names) {
  std::vector<Superfeature> sfs;
  for (const auto& s : j.at("superfeatures")) {
    Superfeature sf;
    sf.name = s.at("name").get<std::string>();
    sf.cost = s.at("cost").get<double>();
    for (const auto& c : s.at("columns")) {
      if (c.is_number_integer()) {
        sf.raw_columns.push_back(c.get<std::size_t>());
        continue;
      }
      const auto name = c.get<std::string>();
      const auto it = std::find(column_names.begin(), column_names.end(), name);
      if (it == column_names.end()) throw ConfigError("schema column '" + name + "' not found in data header");
      sf.raw_columns.push_back(static_cast<std::size_t>(it - column_names.begin()));
    }
    sfs.push_back(std::move(sf));
  }
  try {
    return SuperfeatureSchema(std::move(sfs));
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid schema: ") + e.what());
  }
}

}  // namespace afape
