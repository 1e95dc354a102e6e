#pragma once

// Small supervised learners used behind the classifier, propensity and
// Q-function contracts.

#include "afape/core.hpp"

#include <Eigen/Core>
#include <map>
#include <memory>
#include <json.hpp>
#include <span>
#include <vector>

namespace afape {

double sigmoid(double z);

struct LogisticFit {
  double intercept = 0.0;
  Eigen::VectorXd coef;

  double predict(std::span<const double> x) const;
};

// L2-penalised logistic regression (intercept unpenalised) by Newton/IRLS.
LogisticFit fit_logistic(const Matrix& x, std::span<const double> y, double l2,
                         std::span<const double> weights = {});

class Regressor {
 public:
  virtual ~Regressor() = default;
  // Weighted least squares; empty weights means unit weights. Refitting may
  // warm-start from the current parameters.
  virtual void fit(const Matrix& x, std::span<const double> y, std::span<const double> weights) = 0;
  virtual double predict(std::span<const double> x) const = 0;
  virtual Eigen::VectorXd predict_batch(const Matrix& x) const;
  virtual nlohmann::json to_json() const = 0;
  virtual std::unique_ptr<Regressor> clone() const = 0;
};

class RidgeRegressor final : public Regressor {
 public:
  explicit RidgeRegressor(double lambda = 1e-6) : lambda_(lambda) {}
  void fit(const Matrix& x, std::span<const double> y, std::span<const double> weights) override;
  double predict(std::span<const double> x) const override;
  nlohmann::json to_json() const override;
  std::unique_ptr<Regressor> clone() const override { return std::make_unique<RidgeRegressor>(*this); }
  static RidgeRegressor from_json(const nlohmann::json& j);

 private:
  double lambda_;
  double intercept_ = 0.0;
  Eigen::VectorXd coef_;
};

// Exact-match lookup table: prediction is the weighted mean of targets that
// share the input vector. Unseen inputs fall back to the global mean.
class TabularRegressor final : public Regressor {
 public:
  void fit(const Matrix& x, std::span<const double> y, std::span<const double> weights) override;
  double predict(std::span<const double> x) const override;
  nlohmann::json to_json() const override;
  std::unique_ptr<Regressor> clone() const override { return std::make_unique<TabularRegressor>(*this); }
  std::size_t cells() const { return table_.size(); }
  static TabularRegressor from_json(const nlohmann::json& j);

 private:
  std::map<std::vector<double>, double> table_;
  double fallback_ = 0.0;
};

struct MlpOptions {
  std::vector<int> hidden{16, 16};
  double learning_rate = 1e-3;
  int epochs = 30;
  int batch_size = 256;
  std::uint64_t seed = 0;
  // Least-squares refit of the output layer after the last epoch.
  bool refit_head = true;
};

// ReLU multi-layer perceptron trained with Adam on standardised inputs.
class MlpRegressor final : public Regressor {
 public:
  explicit MlpRegressor(MlpOptions options = {}) : options_(std::move(options)) {}
  void fit(const Matrix& x, std::span<const double> y, std::span<const double> weights) override;
  double predict(std::span<const double> x) const override;
  Eigen::VectorXd predict_batch(const Matrix& x) const override;
  nlohmann::json to_json() const override;
  std::unique_ptr<Regressor> clone() const override { return std::make_unique<MlpRegressor>(*this); }
  static MlpRegressor from_json(const nlohmann::json& j);
  const MlpOptions& options() const { return options_; }

 private:
  struct Layer {
    Eigen::MatrixXd w;  // out x in
    Eigen::VectorXd b;
  };
  Eigen::MatrixXd forward(const Eigen::MatrixXd& input) const;  // input: in x batch (standardised)
  void initialise(Eigen::Index inputs);

  MlpOptions options_;
  std::vector<Layer> layers_;
  Eigen::VectorXd in_mean_, in_scale_;
  double out_mean_ = 0.0, out_scale_ = 1.0;
  std::uint64_t fits_ = 0;
};

std::unique_ptr<Regressor> regressor_from_json(const nlohmann::json& j);

}  // namespace afape
