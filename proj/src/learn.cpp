#include "afape/learn.hpp"

#include "afape/rng.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace afape {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double LogisticFit::predict(std::span<const double> x) const {
  double z = intercept;
  for (Eigen::Index k = 0; k < coef.size(); ++k) z += coef(k) * x[static_cast<std::size_t>(k)];
  return sigmoid(z);
}

LogisticFit fit_logistic(const Matrix& x, std::span<const double> y, double l2, std::span<const double> weights) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  if (n == 0) throw Error("logistic regression on an empty design");
  if (static_cast<Eigen::Index>(y.size()) != n) throw Error("logistic regression: label count mismatch");

  Eigen::MatrixXd design(n, d + 1);
  design.col(0).setOnes();
  design.rightCols(d) = x;
  const Eigen::Map<const Eigen::VectorXd> target(y.data(), n);
  Eigen::VectorXd w = weights.empty() ? Eigen::VectorXd::Ones(n)
                                      : Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(weights.data(), n));
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(d + 1, l2);
  penalty(0) = 0.0;

  // Start at the weighted base rate.
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d + 1);
  const double rate = std::clamp(w.dot(target) / w.sum(), 1e-6, 1 - 1e-6);
  beta(0) = std::log(rate / (1 - rate));

  auto loss = [&](const Eigen::VectorXd& b) {
    const Eigen::VectorXd z = design * b;
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      // log(1 + e^z) - y z, computed stably
      const double zi = z(i);
      const double softplus = zi > 0 ? zi + std::log1p(std::exp(-zi)) : std::log1p(std::exp(zi));
      s += w(i) * (softplus - target(i) * zi);
    }
    return s + 0.5 * (penalty.array() * b.array().square()).sum();
  };

  double current = loss(beta);
  for (int iter = 0; iter < 100; ++iter) {
    const Eigen::VectorXd z = design * beta;
    Eigen::VectorXd p(n), curv(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p(i) = sigmoid(z(i));
      curv(i) = w(i) * std::max(p(i) * (1 - p(i)), 1e-12);
    }
    const Eigen::VectorXd grad =
        design.transpose() * (w.array() * (p - target).array()).matrix() + penalty.cwiseProduct(beta);
    Eigen::MatrixXd hess = design.transpose() * curv.asDiagonal() * design;
    hess.diagonal() += penalty + Eigen::VectorXd::Constant(d + 1, 1e-10);
    const Eigen::VectorXd step = hess.ldlt().solve(grad);

    double scale = 1.0;
    Eigen::VectorXd next = beta - step;
    double next_loss = loss(next);
    while (next_loss > current && scale > 1e-8) {
      scale *= 0.5;
      next = beta - scale * step;
      next_loss = loss(next);
    }
    const double moved = (next - beta).norm();
    if (next_loss <= current) {
      beta = next;
      current = next_loss;
    }
    if (moved < 1e-10 * (1.0 + beta.norm())) break;
  }
  LogisticFit fit;
  fit.intercept = beta(0);
  fit.coef = beta.tail(d);
  return fit;
}

Eigen::VectorXd Regressor::predict_batch(const Matrix& x) const {
  Eigen::VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out(i) = predict({x.row(i).data(), static_cast<std::size_t>(x.cols())});
  }
  return out;
}

void RidgeRegressor::fit(const Matrix& x, std::span<const double> y, std::span<const double> weights) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  if (n == 0) throw Error("ridge regression on an empty design");
  Eigen::MatrixXd design(n, d + 1);
  design.col(0).setOnes();
  design.rightCols(d) = x;
  const Eigen::Map<const Eigen::VectorXd> target(y.data(), n);
  const Eigen::VectorXd w = weights.empty() ? Eigen::VectorXd::Ones(n)
                                            : Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(weights.data(), n));
  Eigen::MatrixXd gram = design.transpose() * w.asDiagonal() * design;
  gram.diagonal().tail(d).array() += lambda_ * w.sum();
  const Eigen::VectorXd rhs = design.transpose() * w.cwiseProduct(target);
  const Eigen::VectorXd beta = gram.ldlt().solve(rhs);
  intercept_ = beta(0);
  coef_ = beta.tail(d);
}

double RidgeRegressor::predict(std::span<const double> x) const {
  double s = intercept_;
  for (Eigen::Index k = 0; k < coef_.size(); ++k) s += coef_(k) * x[static_cast<std::size_t>(k)];
  return s;
}

nlohmann::json RidgeRegressor::to_json() const {
  return {{"kind", "ridge"},
          {"lambda", lambda_},
          {"intercept", intercept_},
          {"coef", std::vector<double>(coef_.data(), coef_.data() + coef_.size())}};
}

RidgeRegressor RidgeRegressor::from_json(const nlohmann::json& j) {
  RidgeRegressor r(j.at("lambda").get<double>());
  r.intercept_ = j.at("intercept").get<double>();
  const auto c = j.at("coef").get<std::vector<double>>();
  r.coef_ = Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
  return r;
}

void TabularRegressor::fit(const Matrix& x, std::span<const double> y, std::span<const double> weights) {
  std::map<std::vector<double>, std::pair<double, double>> acc;
  double total = 0.0, total_w = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)];
    std::vector<double> key(x.row(i).data(), x.row(i).data() + x.cols());
    auto& cell = acc[std::move(key)];
    cell.first += w * y[static_cast<std::size_t>(i)];
    cell.second += w;
    total += w * y[static_cast<std::size_t>(i)];
    total_w += w;
  }
  table_.clear();
  for (auto& [key, cell] : acc) {
    if (cell.second > 0) table_.emplace(key, cell.first / cell.second);
  }
  fallback_ = total_w > 0 ? total / total_w : 0.0;
}

double TabularRegressor::predict(std::span<const double> x) const {
  const auto it = table_.find(std::vector<double>(x.begin(), x.end()));
  return it == table_.end() ? fallback_ : it->second;
}

nlohmann::json TabularRegressor::to_json() const {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& [key, v] : table_) cells.push_back({{"x", key}, {"y", v}});
  return {{"kind", "tabular"}, {"fallback", fallback_}, {"cells", cells}};
}

TabularRegressor TabularRegressor::from_json(const nlohmann::json& j) {
  TabularRegressor t;
  t.fallback_ = j.at("fallback").get<double>();
  for (const auto& c : j.at("cells")) t.table_.emplace(c.at("x").get<std::vector<double>>(), c.at("y").get<double>());
  return t;
}

void MlpRegressor::initialise(Eigen::Index inputs) {
  auto rng = keyed_stream(options_.seed, {0x6d6c70});
  layers_.clear();
  Eigen::Index prev = inputs;
  std::vector<int> sizes = options_.hidden;
  sizes.push_back(1);
  for (int width : sizes) {
    Layer layer;
    layer.w.resize(width, prev);
    layer.b = Eigen::VectorXd::Zero(width);
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(prev)));
    for (Eigen::Index r = 0; r < layer.w.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.w.cols(); ++c) layer.w(r, c) = normal(rng);
    }
    layers_.push_back(std::move(layer));
    prev = width;
  }
}

Eigen::MatrixXd MlpRegressor::forward(const Eigen::MatrixXd& input) const {
  Eigen::MatrixXd a = input;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = layers_[l].w * a;
    z.colwise() += layers_[l].b;
    a = (l + 1 < layers_.size()) ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
  }
  return a;
}

void MlpRegressor::fit(const Matrix& x, std::span<const double> y, std::span<const double> weights) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  if (n == 0) throw Error("MLP regression on an empty design");

  const bool fresh = layers_.empty() || layers_.front().w.cols() != d;
  if (fresh) {
    in_mean_ = x.colwise().mean().transpose();
    in_scale_.resize(d);
    for (Eigen::Index k = 0; k < d; ++k) {
      const double var = (x.col(k).array() - in_mean_(k)).square().mean();
      in_scale_(k) = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
    const Eigen::Map<const Eigen::VectorXd> t(y.data(), n);
    out_mean_ = t.mean();
    const double var = (t.array() - out_mean_).square().mean();
    out_scale_ = var > 1e-12 ? std::sqrt(var) : 1.0;
    initialise(d);
  }

  // Standardised copies, column-major with one sample per column.
  Eigen::MatrixXd xs = ((x.rowwise() - in_mean_.transpose()).array().rowwise() / in_scale_.transpose().array())
                           .matrix()
                           .transpose();
  Eigen::VectorXd ys(n), ws(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    ys(i) = (y[static_cast<std::size_t>(i)] - out_mean_) / out_scale_;
    ws(i) = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)];
  }

  const std::size_t nl = layers_.size();
  std::vector<Layer> m1(nl), m2(nl);
  for (std::size_t l = 0; l < nl; ++l) {
    m1[l] = {Eigen::MatrixXd::Zero(layers_[l].w.rows(), layers_[l].w.cols()), Eigen::VectorXd::Zero(layers_[l].b.size())};
    m2[l] = m1[l];
  }
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long long t = 0;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const Eigen::Index batch = std::max(1, options_.batch_size);
  std::vector<Eigen::MatrixXd> acts(nl + 1);
  std::vector<Layer> grads(nl);

  for (int epoch = 0; epoch < options_.epochs; ++epoch) {
    auto rng = keyed_stream(options_.seed, {fits_, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += batch) {
      const Eigen::Index bs = std::min(batch, n - start);
      Eigen::MatrixXd input(d, bs);
      Eigen::RowVectorXd target(bs), w(bs);
      for (Eigen::Index k = 0; k < bs; ++k) {
        const Eigen::Index i = order[static_cast<std::size_t>(start + k)];
        input.col(k) = xs.col(i);
        target(k) = ys(i);
        w(k) = ws(i);
      }
      const double wsum = w.sum();
      if (wsum <= 0) continue;

      acts[0] = input;
      for (std::size_t l = 0; l < nl; ++l) {
        Eigen::MatrixXd z = layers_[l].w * acts[l];
        z.colwise() += layers_[l].b;
        acts[l + 1] = (l + 1 < nl) ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
      }
      // d(loss)/d(output) for weighted mean squared error
      Eigen::MatrixXd delta = (2.0 / wsum) * ((acts[nl].row(0) - target).cwiseProduct(w));
      for (std::size_t l = nl; l-- > 0;) {
        grads[l].w = delta * acts[l].transpose();
        grads[l].b = delta.rowwise().sum();
        if (l > 0) {
          Eigen::MatrixXd back = layers_[l].w.transpose() * delta;
          delta = back.cwiseProduct((acts[l].array() > 0.0).cast<double>().matrix());
        }
      }
      ++t;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
      const double lr = options_.learning_rate;
      for (std::size_t l = 0; l < nl; ++l) {
        m1[l].w = beta1 * m1[l].w + (1 - beta1) * grads[l].w;
        m2[l].w = beta2 * m2[l].w + (1 - beta2) * grads[l].w.cwiseAbs2();
        m1[l].b = beta1 * m1[l].b + (1 - beta1) * grads[l].b;
        m2[l].b = beta2 * m2[l].b + (1 - beta2) * grads[l].b.cwiseAbs2();
        layers_[l].w.array() -= lr * (m1[l].w.array() / c1) / ((m2[l].w.array() / c2).sqrt() + eps);
        layers_[l].b.array() -= lr * (m1[l].b.array() / c1) / ((m2[l].b.array() / c2).sqrt() + eps);
      }
    }
  }
  if (options_.refit_head && nl > 0) {
    // Closed-form weighted least squares for the output layer on the final
    // hidden features; removes SGD noise from the fitted mean.
    Eigen::MatrixXd h = xs;
    for (std::size_t l = 0; l + 1 < nl; ++l) {
      Eigen::MatrixXd z = layers_[l].w * h;
      z.colwise() += layers_[l].b;
      h = z.cwiseMax(0.0);
    }
    const Eigen::Index k = h.rows();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(k + 1, k + 1);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k + 1);
    Eigen::VectorXd f(k + 1);
    double wsum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      f.head(k) = h.col(i);
      f(k) = 1.0;
      a.selfadjointView<Eigen::Lower>().rankUpdate(f, ws(i));
      rhs += ws(i) * ys(i) * f;
      wsum += ws(i);
    }
    a = a.selfadjointView<Eigen::Lower>();
    for (Eigen::Index j = 0; j < k; ++j) a(j, j) += 1e-6 * wsum;
    const Eigen::VectorXd sol = a.ldlt().solve(rhs);
    if (sol.allFinite()) {
      layers_.back().w = sol.head(k).transpose();
      layers_.back().b(0) = sol(k);
    }
  }
  ++fits_;
}

double MlpRegressor::predict(std::span<const double> x) const {
  Eigen::MatrixXd input(in_mean_.size(), 1);
  for (Eigen::Index k = 0; k < in_mean_.size(); ++k) {
    input(k, 0) = (x[static_cast<std::size_t>(k)] - in_mean_(k)) / in_scale_(k);
  }
  return forward(input)(0, 0) * out_scale_ + out_mean_;
}

Eigen::VectorXd MlpRegressor::predict_batch(const Matrix& x) const {
  const Eigen::MatrixXd xs =
      ((x.rowwise() - in_mean_.transpose()).array().rowwise() / in_scale_.transpose().array()).matrix().transpose();
  const Eigen::MatrixXd out = forward(xs);
  return (out.row(0).transpose().array() * out_scale_ + out_mean_).matrix();
}

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return m;
}

std::vector<double> vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd vec_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

nlohmann::json MlpRegressor::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) layers.push_back({{"w", matrix_json(l.w)}, {"b", vec(l.b)}});
  return {{"kind", "mlp"},
          {"hidden", options_.hidden},
          {"learning_rate", options_.learning_rate},
          {"epochs", options_.epochs},
          {"batch_size", options_.batch_size},
          {"seed", options_.seed},
          {"refit_head", options_.refit_head},
          {"in_mean", vec(in_mean_)},
          {"in_scale", vec(in_scale_)},
          {"out_mean", out_mean_},
          {"out_scale", out_scale_},
          {"layers", layers}};
}

MlpRegressor MlpRegressor::from_json(const nlohmann::json& j) {
  MlpOptions o;
  o.hidden = j.at("hidden").get<std::vector<int>>();
  o.learning_rate = j.at("learning_rate").get<double>();
  o.epochs = j.at("epochs").get<int>();
  o.batch_size = j.at("batch_size").get<int>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.refit_head = j.value("refit_head", true);
  MlpRegressor m(o);
  m.in_mean_ = vec_from_json(j.at("in_mean"));
  m.in_scale_ = vec_from_json(j.at("in_scale"));
  m.out_mean_ = j.at("out_mean").get<double>();
  m.out_scale_ = j.at("out_scale").get<double>();
  for (const auto& l : j.at("layers")) m.layers_.push_back({matrix_from_json(l.at("w")), vec_from_json(l.at("b"))});
  m.fits_ = 1;
  return m;
}

std::unique_ptr<Regressor> regressor_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "ridge") return std::make_unique<RidgeRegressor>(RidgeRegressor::from_json(j));
  if (kind == "tabular") return std::make_unique<TabularRegressor>(TabularRegressor::from_json(j));
  if (kind == "mlp") return std::make_unique<MlpRegressor>(MlpRegressor::from_json(j));
  throw Error("unknown regressor kind '" + kind + "'");
}

}  // namespace afape
