#include "dope/regressors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "dope/kernels.hpp"
#include "dope/rng.hpp"

namespace dope {

namespace {
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double capped(double eta) {
  return std::clamp(eta, -kLinearPredictorCap, kLinearPredictorCap);
}
}  // namespace

// ---------------------------------------------------------------------------
// OLS

double LinearModel::predict(std::span<const double> w) const {
  if (w.size() != coefficients.size())
    throw DimensionMismatch("LinearModel::predict feature dimension");
  return intercept + kernels::dot(coefficients.data(), w.data(),
                                  static_cast<int>(w.size()));
}

LinearModel fit_ols(std::span<const double> design, std::size_t p,
                    std::span<const double> targets) {
  const std::size_t n = targets.size();
  if (p == 0 || design.size() != n * p)
    throw DimensionMismatch("fit_ols design shape");
  if (n < p + 1) throw TooFewRows("fit_ols: need n >= p+1");

  Eigen::MatrixXd X(n, p + 1);
  for (std::size_t i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    for (std::size_t j = 0; j < p; ++j) X(i, j + 1) = design[i * p + j];
  }
  Eigen::Map<const Eigen::VectorXd> y(targets.data(), n);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < static_cast<Eigen::Index>(p + 1)) throw RankDeficient();
  const Eigen::VectorXd beta = qr.solve(y);

  LinearModel model;
  model.intercept = beta(0);
  model.coefficients.assign(beta.data() + 1, beta.data() + 1 + p);
  return model;
}

// ---------------------------------------------------------------------------
// Logistic regression

double LogisticModel::linear_predictor(std::span<const double> x) const {
  if (x.size() != coefficients.size())
    throw DimensionMismatch("LogisticModel feature dimension");
  const double eta = intercept + kernels::dot(coefficients.data(), x.data(),
                                              static_cast<int>(x.size()));
  return capped(eta);
}

double LogisticModel::predict(std::span<const double> x) const {
  return sigmoid(linear_predictor(x));
}

double predict_propensity(const LogisticModel& model, std::span<const double> x) {
  return model.predict(x);
}

LogisticModel fit_logistic_irls(std::span<const double> design, std::size_t p,
                                std::span<const double> labels) {
  const std::size_t n = labels.size();
  if (design.size() != n * p) throw DimensionMismatch("fit_logistic_irls design shape");
  if (n == 0) throw TooFewRows("fit_logistic_irls: empty sample");

  bool any0 = false, any1 = false;
  for (double y : labels) {
    if (y == 0.0) any0 = true;
    else if (y == 1.0) any1 = true;
    else throw Error("fit_logistic_irls: labels must be 0 or 1");
  }
  LogisticModel model;
  model.coefficients.assign(p, 0.0);
  if (!any0 || !any1) {
    // one-class degenerate fit; downstream clipping keeps this harmless
    model.intercept = any1 ? kLinearPredictorCap : -kLinearPredictorCap;
    model.converged = false;
    return model;
  }

  const std::size_t q = p + 1;  // intercept first
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(q);
  Eigen::MatrixXd X(n, q);
  for (std::size_t i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    for (std::size_t j = 0; j < p; ++j) X(i, j + 1) = design[i * p + j];
  }
  Eigen::Map<const Eigen::VectorXd> y(labels.data(), n);

  auto loglik = [&](const Eigen::VectorXd& b) {
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double eta = capped(X.row(i).dot(b));
      // log(1 + e^eta) evaluated stably
      const double log1pexp = eta > 0 ? eta + std::log1p(std::exp(-eta))
                                      : std::log1p(std::exp(eta));
      ll += y(i) * eta - log1pexp;
    }
    return ll;
  };

  constexpr double kScoreTol = 1e-8;
  constexpr int kMaxIter = 100;
  double ll = loglik(beta);
  Eigen::VectorXd score(q);
  Eigen::MatrixXd hess(q, q);

  for (int iter = 1; iter <= kMaxIter; ++iter) {
    model.iterations = iter;
    score.setZero();
    hess.setZero();
    for (std::size_t i = 0; i < n; ++i) {
      const double eta = capped(X.row(i).dot(beta));
      const double mu = sigmoid(eta);
      score += (y(i) - mu) * X.row(i).transpose();
      hess.selfadjointView<Eigen::Lower>().rankUpdate(X.row(i).transpose(),
                                                      mu * (1.0 - mu));
    }
    if (score.lpNorm<Eigen::Infinity>() < kScoreTol) {
      model.converged = true;
      break;
    }
    hess.triangularView<Eigen::Upper>() = hess.transpose();
    Eigen::MatrixXd h = hess;
    h.diagonal().array() += 1e-12;  // guards near-separated fits
    Eigen::VectorXd step = h.ldlt().solve(score);
    if (!step.allFinite()) break;

    double scale = 1.0;
    Eigen::VectorXd candidate = beta + step;
    double ll_new = loglik(candidate);
    // accept within fp noise of the current value so Newton can finish the
    // last ulps of convergence; halve only on a genuine decrease
    const double ll_floor = ll - 1e-10 * (std::abs(ll) + 1.0);
    int halvings = 0;
    while (ll_new < ll_floor && halvings < 40) {
      scale *= 0.5;
      candidate = beta + scale * step;
      ll_new = loglik(candidate);
      ++halvings;
    }
    if (ll_new < ll_floor) break;  // plateau under the cap (separation)
    beta = candidate;
    ll = std::max(ll, ll_new);
  }

  if (!model.converged) {
    // re-test at the final point (loop may exit by break before the check)
    score.setZero();
    for (std::size_t i = 0; i < n; ++i) {
      const double eta = capped(X.row(i).dot(beta));
      score += (y(i) - sigmoid(eta)) * X.row(i).transpose();
    }
    model.converged = score.lpNorm<Eigen::Infinity>() < kScoreTol;
  }

  model.intercept = beta(0);
  model.coefficients.assign(beta.data() + 1, beta.data() + q);
  return model;
}

// ---------------------------------------------------------------------------
// Single-index network

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw Error("learning_rate must be > 0");
  if (iterations < 1) throw Error("iterations must be >= 1");
}

std::size_t SingleIndexNet::parameter_count() const {
  return theta.size() + (mode == RegressionMode::joint ? 1 : 0) +
         hidden_w.size() + hidden_b.size() + out_w.size() + 1;
}

double SingleIndexNet::index_of(std::span<const double> w, double t) const {
  if (w.size() != theta.size())
    throw DimensionMismatch("SingleIndexNet feature dimension");
  double idx = 0.0;
  for (std::size_t j = 0; j < theta.size(); ++j) idx += theta[j] * w[j];
  if (mode == RegressionMode::joint) idx += alpha * t;
  return idx;
}

double SingleIndexNet::forward_from_index(double index) const {
  double pred = out_b;
  for (std::size_t j = 0; j < hidden_w.size(); ++j) {
    const double z = hidden_w[j] * index + hidden_b[j];
    if (z > 0.0) pred += out_w[j] * z;
  }
  return sigmoid_output ? sigmoid(pred) : pred;
}

double SingleIndexNet::predict(double t, std::span<const double> w) const {
  return forward_from_index(index_of(w, t));
}

std::vector<double> SingleIndexNet::normalized_theta() const {
  double norm2 = 0.0;
  for (double v : theta) norm2 += v * v;
  const double norm = std::sqrt(norm2);
  std::vector<double> out(theta);
  if (norm == 0.0) return out;
  double sign = 1.0;
  for (double v : theta) {
    if (v != 0.0) {
      sign = v > 0.0 ? 1.0 : -1.0;
      break;
    }
  }
  for (double& v : out) v = v * sign / norm;
  return out;
}

NetProblem::NetProblem(std::span<const double> X, std::span<const double> tcol,
                       std::span<const double> y, std::size_t d, NetLoss loss)
    : X_(X.begin(), X.end()),
      tcol_(tcol.begin(), tcol.end()),
      y_(y.begin(), y.end()),
      n_(y.size()),
      d_(d),
      loss_(loss) {
  if (X_.size() != n_ * d_) throw DimensionMismatch("NetProblem design shape");
  if (!tcol_.empty() && tcol_.size() != n_)
    throw DimensionMismatch("NetProblem treatment column length");
}

std::size_t NetProblem::dim() const {
  return d_ + (joint() ? 1 : 0) + 3 * kHiddenWidth + 1;
}

void NetProblem::unpack(std::span<const double> params, SingleIndexNet& net) const {
  const double* ptr = params.data();
  net.theta.assign(ptr, ptr + d_);
  ptr += d_;
  if (joint()) net.alpha = *ptr++;
  net.hidden_w.assign(ptr, ptr + kHiddenWidth);
  ptr += kHiddenWidth;
  net.hidden_b.assign(ptr, ptr + kHiddenWidth);
  ptr += kHiddenWidth;
  net.out_w.assign(ptr, ptr + kHiddenWidth);
  ptr += kHiddenWidth;
  net.out_b = *ptr;
  net.sigmoid_output = loss_ == NetLoss::bce;
}

void NetProblem::pack(const SingleIndexNet& net, std::span<double> params) const {
  double* ptr = params.data();
  std::memcpy(ptr, net.theta.data(), d_ * sizeof(double));
  ptr += d_;
  if (joint()) *ptr++ = net.alpha;
  std::memcpy(ptr, net.hidden_w.data(), kHiddenWidth * sizeof(double));
  ptr += kHiddenWidth;
  std::memcpy(ptr, net.hidden_b.data(), kHiddenWidth * sizeof(double));
  ptr += kHiddenWidth;
  std::memcpy(ptr, net.out_w.data(), kHiddenWidth * sizeof(double));
  ptr += kHiddenWidth;
  *ptr = net.out_b;
}

double NetProblem::loss_at(std::span<const double> params) const {
  const double* theta = params.data();
  const double alpha = joint() ? params[d_] : 0.0;
  const double* hw = params.data() + d_ + (joint() ? 1 : 0);
  const double* hb = hw + kHiddenWidth;
  const double* ow = hb + kHiddenWidth;
  const double ob = ow[kHiddenWidth];

  std::vector<double> index(n_), pred(n_);
  kernels::affine_index(X_.data(), joint() ? tcol_.data() : nullptr,
                        static_cast<int>(n_), static_cast<int>(d_), theta,
                        alpha, index.data());
  const kernels::HiddenLayer layer{hw, hb, ow, ob, kHiddenWidth};
  kernels::net_batch_predict(index.data(), static_cast<int>(n_), layer,
                             loss_ == NetLoss::bce, pred.data());
  const double inv_n = 1.0 / static_cast<double>(n_);
  double loss = 0.0;
  for (std::size_t i = 0; i < n_; ++i) {
    if (loss_ == NetLoss::mse) {
      const double r = pred[i] - y_[i];
      loss += r * r * inv_n;
    } else {
      const double pc = std::clamp(pred[i], 1e-12, 1.0 - 1e-12);
      loss += -(y_[i] * std::log(pc) + (1.0 - y_[i]) * std::log(1.0 - pc)) * inv_n;
    }
  }
  return loss;
}

double NetProblem::loss_and_grad(std::span<const double> params,
                                 std::span<double> grad) const {
  if (params.size() != dim() || grad.size() != dim())
    throw DimensionMismatch("NetProblem parameter vector size");
  std::fill(grad.begin(), grad.end(), 0.0);

  const double* theta = params.data();
  const double alpha = joint() ? params[d_] : 0.0;
  const std::size_t off = d_ + (joint() ? 1 : 0);
  const double* hw = params.data() + off;
  const double* hb = hw + kHiddenWidth;
  const double* ow = hb + kHiddenWidth;
  const double ob = ow[kHiddenWidth];

  double* gtheta = grad.data();
  double* galpha = joint() ? grad.data() + d_ : nullptr;
  double* ghw = grad.data() + off;
  double* ghb = ghw + kHiddenWidth;
  double* gow = ghb + kHiddenWidth;
  double* gob = gow + kHiddenWidth;

  index_scratch_.resize(n_);
  dindex_scratch_.resize(n_);
  std::vector<double>& index = index_scratch_;
  std::vector<double>& dindex = dindex_scratch_;
  kernels::affine_index(X_.data(), joint() ? tcol_.data() : nullptr,
                        static_cast<int>(n_), static_cast<int>(d_), theta,
                        alpha, index.data());
  const kernels::HiddenLayer layer{hw, hb, ow, ob, kHiddenWidth};
  const kernels::HiddenGrads grads{ghw, ghb, gow, gob};
  const double loss = kernels::net_batch_pass(
      index.data(), y_.data(), static_cast<int>(n_),
      loss_ == NetLoss::bce ? kernels::LossKind::bce : kernels::LossKind::mse,
      layer, grads, dindex.data());
  kernels::affine_index_backward(X_.data(), joint() ? tcol_.data() : nullptr,
                                 dindex.data(), static_cast<int>(n_),
                                 static_cast<int>(d_), gtheta, galpha);
  return loss;
}

SingleIndexNet train_net(const NetProblem& problem, const TrainConfig& cfg,
                         RegressionMode mode_tag) {
  cfg.validate();
  const std::size_t dim = problem.dim();
  std::vector<double> params(dim, 0.0);

  // init: bottleneck weights N(0, 0.1^2); hidden/output weights
  // Glorot-uniform; biases zero. Draw order is part of the determinism
  // contract: theta, [alpha], hidden_w, out_w.
  Rng rng(cfg.seed);
  const std::size_t d = problem.d();
  for (std::size_t j = 0; j < d; ++j) params[j] = rng.normal(0.0, 0.1);
  std::size_t off = d;
  if (problem.joint()) params[off++] = rng.normal(0.0, 0.1);
  const double glorot = std::sqrt(6.0 / (1.0 + kHiddenWidth));
  for (int j = 0; j < kHiddenWidth; ++j)
    params[off + j] = rng.uniform(-glorot, glorot);
  for (int j = 0; j < kHiddenWidth; ++j)
    params[off + 2 * kHiddenWidth + j] = rng.uniform(-glorot, glorot);

  std::vector<double> grad(dim), m(dim, 0.0), v(dim, 0.0);
  std::vector<double> losses;
  losses.reserve(cfg.iterations);
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double b1t = 1.0, b2t = 1.0;
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const double loss = problem.loss_and_grad(params, grad);
    losses.push_back(loss);
    b1t *= beta1;
    b2t *= beta2;
    const double corr1 = 1.0 / (1.0 - b1t);
    const double corr2 = 1.0 / (1.0 - b2t);
    for (std::size_t j = 0; j < dim; ++j) {
      m[j] = beta1 * m[j] + (1.0 - beta1) * grad[j];
      v[j] = beta2 * v[j] + (1.0 - beta2) * grad[j] * grad[j];
      params[j] -= cfg.learning_rate * (m[j] * corr1) /
                   (std::sqrt(v[j] * corr2) + eps);
    }
  }

  SingleIndexNet net;
  net.mode = mode_tag;
  problem.unpack(params, net);
  net.loss_curve = std::move(losses);
  return net;
}

SingleIndexOutcome::SingleIndexOutcome(std::vector<SingleIndexNet> nets,
                                       RegressionMode mode)
    : nets_(std::move(nets)), mode_(mode) {}

double SingleIndexOutcome::predict(int t, std::span<const double> w) const {
  if (mode_ == RegressionMode::joint)
    return nets_[0].predict(static_cast<double>(t), w);
  if (t < 0 || static_cast<std::size_t>(t) >= nets_.size())
    throw Error("no fitted network for treatment id " + std::to_string(t));
  return nets_[static_cast<std::size_t>(t)].predict(0.0, w);
}

void SingleIndexOutcome::representation(std::span<const double> w,
                                        std::span<double> out) const {
  if (out.size() != static_cast<std::size_t>(representation_dim()))
    throw DimensionMismatch("representation output size");
  if (mode_ == RegressionMode::joint) {
    out[0] = nets_[0].index_of(w, 0.0);  // theta'w, excluding the alpha*t part
  } else {
    for (std::size_t a = 0; a < nets_.size(); ++a)
      out[a] = nets_[a].index_of(w, 0.0);
  }
}

int SingleIndexOutcome::representation_dim() const {
  return mode_ == RegressionMode::joint ? 1 : static_cast<int>(nets_.size());
}

std::vector<std::vector<double>> SingleIndexOutcome::index_weights() const {
  std::vector<std::vector<double>> weights;
  for (const auto& net : nets_) weights.push_back(net.theta);
  return weights;
}

std::unique_ptr<SingleIndexOutcome> fit_single_index_net(
    const ObservationTable& table, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.loss == NetLoss::bce)
    for (double y : table.outcomes)
      if (y != 0.0 && y != 1.0)
        throw Error("bce loss requires outcomes in {0,1}");

  const std::size_t d = table.k();
  std::vector<SingleIndexNet> nets;
  if (cfg.mode == RegressionMode::joint) {
    std::vector<double> tcol(table.n());
    for (std::size_t i = 0; i < table.n(); ++i)
      tcol[i] = static_cast<double>(table.treatments[i]);
    NetProblem problem(table.covariates, tcol, table.outcomes, d, cfg.loss);
    nets.push_back(train_net(problem, cfg, RegressionMode::joint));
  } else {
    const int arms = table.labels.count();
    for (int t = 0; t < arms; ++t) {
      const auto rows = stratum_rows(table, t);
      if (rows.empty()) throw EmptyStratum(t);
      const ObservationTable sub = table.subset(rows);
      NetProblem problem(sub.covariates, {}, sub.outcomes, d, cfg.loss);
      TrainConfig arm_cfg = cfg;
      arm_cfg.seed = child_seed(cfg.seed, 0x6e6574, static_cast<std::uint64_t>(t));
      nets.push_back(train_net(problem, arm_cfg, RegressionMode::stratified));
    }
  }
  return std::make_unique<SingleIndexOutcome>(std::move(nets), cfg.mode);
}

// ---------------------------------------------------------------------------
// Linear outcome family

LinearOutcome::LinearOutcome(std::vector<LinearModel> models, RegressionMode mode,
                             double joint_t_coef)
    : models_(std::move(models)), mode_(mode), joint_t_coef_(joint_t_coef) {}

double LinearOutcome::predict(int t, std::span<const double> w) const {
  if (mode_ == RegressionMode::joint)
    return models_[0].predict(w) + joint_t_coef_ * static_cast<double>(t);
  if (t < 0 || static_cast<std::size_t>(t) >= models_.size())
    throw Error("no fitted model for treatment id " + std::to_string(t));
  return models_[static_cast<std::size_t>(t)].predict(w);
}

void LinearOutcome::representation(std::span<const double> w,
                                   std::span<double> out) const {
  if (out.size() != static_cast<std::size_t>(representation_dim()))
    throw DimensionMismatch("representation output size");
  if (mode_ == RegressionMode::joint) {
    const auto& c = models_[0].coefficients;
    out[0] = kernels::dot(c.data(), w.data(), static_cast<int>(w.size()));
  } else {
    for (std::size_t a = 0; a < models_.size(); ++a) {
      const auto& c = models_[a].coefficients;
      out[a] = kernels::dot(c.data(), w.data(), static_cast<int>(w.size()));
    }
  }
}

int LinearOutcome::representation_dim() const {
  return mode_ == RegressionMode::joint ? 1 : static_cast<int>(models_.size());
}

std::vector<std::vector<double>> LinearOutcome::index_weights() const {
  std::vector<std::vector<double>> weights;
  for (const auto& lm : models_) weights.push_back(lm.coefficients);
  return weights;
}

std::unique_ptr<LinearOutcome> fit_linear_outcome(const ObservationTable& table,
                                                  RegressionMode mode) {
  const std::size_t d = table.k();
  std::vector<LinearModel> models;
  double t_coef = 0.0;
  if (mode == RegressionMode::joint) {
    // design = [t, w]; the t coefficient is peeled off after the fit
    const std::size_t n = table.n();
    std::vector<double> design(n * (d + 1));
    for (std::size_t i = 0; i < n; ++i) {
      design[i * (d + 1)] = static_cast<double>(table.treatments[i]);
      const auto r = table.row(i);
      std::copy(r.begin(), r.end(), design.begin() + i * (d + 1) + 1);
    }
    LinearModel full = fit_ols(design, d + 1, table.outcomes);
    t_coef = full.coefficients[0];
    LinearModel wpart;
    wpart.intercept = full.intercept;
    wpart.coefficients.assign(full.coefficients.begin() + 1,
                              full.coefficients.end());
    models.push_back(std::move(wpart));
  } else {
    const int arms = table.labels.count();
    for (int t = 0; t < arms; ++t) {
      const auto rows = stratum_rows(table, t);
      if (rows.empty()) throw EmptyStratum(t);
      const ObservationTable sub = table.subset(rows);
      models.push_back(fit_ols(sub.covariates, d, sub.outcomes));
    }
  }
  return std::make_unique<LinearOutcome>(std::move(models), mode, t_coef);
}

}  // namespace dope
