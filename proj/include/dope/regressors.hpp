#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dope/data_model.hpp"

namespace dope {

// ---------------------------------------------------------------------------
// Linear least squares

struct LinearModel {
  std::vector<double> coefficients;  // k
  double intercept = 0.0;
  double predict(std::span<const double> w) const;
};

/// Minimizes mean squared error with an intercept always included.
/// `design` is n x p row-major without the intercept column.
LinearModel fit_ols(std::span<const double> design, std::size_t p,
                    std::span<const double> targets);

// ---------------------------------------------------------------------------
// Logistic regression by Newton/IRLS

struct LogisticModel {
  std::vector<double> coefficients;  // p
  double intercept = 0.0;
  bool converged = false;
  int iterations = 0;
  /// Linear predictor capped to |.| <= 30 before the sigmoid.
  double linear_predictor(std::span<const double> x) const;
  double predict(std::span<const double> x) const;  // probability in (0,1)
};

inline constexpr double kLinearPredictorCap = 30.0;

/// Newton iterations with step-halving until the score (log-likelihood
/// gradient) norm drops below 1e-8 or 100 iterations. One-class label
/// vectors yield the degenerate capped-intercept model with
/// converged=false rather than an error.
LogisticModel fit_logistic_irls(std::span<const double> design, std::size_t p,
                                std::span<const double> labels);

double predict_propensity(const LogisticModel& model, std::span<const double> x);

// ---------------------------------------------------------------------------
// Single-index bottleneck network

enum class NetLoss { mse, bce };
enum class RegressionMode { stratified, joint };

struct TrainConfig {
  double learning_rate = 1e-3;
  int iterations = 1200;
  std::uint64_t seed = 0;
  NetLoss loss = NetLoss::mse;
  RegressionMode mode = RegressionMode::stratified;
  void validate() const;
};

inline constexpr int kHiddenWidth = 100;

/// One bottleneck network: index = theta'w (+ alpha*t in joint mode), then
/// a 100-unit ReLU layer and a linear readout (sigmoid readout for bce).
struct SingleIndexNet {
  std::vector<double> theta;             // d
  double alpha = 0.0;                    // joint mode only
  std::vector<double> hidden_w;          // kHiddenWidth
  std::vector<double> hidden_b;          // kHiddenWidth
  std::vector<double> out_w;             // kHiddenWidth
  double out_b = 0.0;
  bool sigmoid_output = false;
  RegressionMode mode = RegressionMode::stratified;
  std::vector<double> loss_curve;        // training loss per iteration

  std::size_t parameter_count() const;
  double index_of(std::span<const double> w, double t) const;
  double forward_from_index(double index) const;
  double predict(double t, std::span<const double> w) const;
  /// Unit-norm theta with the first nonzero coordinate positive.
  std::vector<double> normalized_theta() const;
};

/// Fitted outcome regression exposing the representation map phi_hat.
class OutcomeModel {
 public:
  virtual ~OutcomeModel() = default;
  virtual double predict(int t, std::span<const double> w) const = 0;
  virtual void representation(std::span<const double> w,
                              std::span<double> out) const = 0;
  virtual int representation_dim() const = 0;
  /// The raw linear index weights behind the representation, one vector per
  /// representation coordinate (used for canonicalization and reporting).
  virtual std::vector<std::vector<double>> index_weights() const = 0;
};

/// Single-index network outcome model. Stratified mode fits one net per
/// treatment arm (representation = per-arm indexes); joint mode fits one
/// net on (t, w) (1-dim representation).
class SingleIndexOutcome final : public OutcomeModel {
 public:
  SingleIndexOutcome(std::vector<SingleIndexNet> nets, RegressionMode mode);
  double predict(int t, std::span<const double> w) const override;
  void representation(std::span<const double> w, std::span<double> out) const override;
  int representation_dim() const override;
  std::vector<std::vector<double>> index_weights() const override;
  const std::vector<SingleIndexNet>& nets() const { return nets_; }

 private:
  std::vector<SingleIndexNet> nets_;  // one per arm, or a single joint net
  RegressionMode mode_;
};

std::unique_ptr<SingleIndexOutcome> fit_single_index_net(
    const ObservationTable& table, const TrainConfig& cfg);

/// Linear-family outcome model (OLS per arm or jointly); the representation
/// is the fitted linear index per arm (stratified) or the covariate part of
/// the joint fit.
class LinearOutcome final : public OutcomeModel {
 public:
  LinearOutcome(std::vector<LinearModel> models, RegressionMode mode,
                double joint_t_coef);
  double predict(int t, std::span<const double> w) const override;
  void representation(std::span<const double> w, std::span<double> out) const override;
  int representation_dim() const override;
  std::vector<std::vector<double>> index_weights() const override;
  const std::vector<LinearModel>& models() const { return models_; }

 private:
  std::vector<LinearModel> models_;
  RegressionMode mode_;
  double joint_t_coef_ = 0.0;
};

std::unique_ptr<LinearOutcome> fit_linear_outcome(const ObservationTable& table,
                                                  RegressionMode mode);

// ---------------------------------------------------------------------------
// Training internals exposed for the finite-difference gradient oracle.

/// Flat-parameter view of one net fit: packs (theta, [alpha], hidden_w,
/// hidden_b, out_w, out_b) and evaluates full-batch loss and gradient with
/// the manual backward pass.
class NetProblem {
 public:
  /// X row-major n x d; tcol may be empty (stratified mode).
  NetProblem(std::span<const double> X, std::span<const double> tcol,
             std::span<const double> y, std::size_t d, NetLoss loss);
  std::size_t dim() const;  // number of packed parameters
  double loss_at(std::span<const double> params) const;
  double loss_and_grad(std::span<const double> params, std::span<double> grad) const;
  void unpack(std::span<const double> params, SingleIndexNet& net) const;
  void pack(const SingleIndexNet& net, std::span<double> params) const;
  std::size_t d() const { return d_; }
  bool joint() const { return !tcol_.empty(); }

 private:
  std::vector<double> X_, tcol_, y_;
  std::size_t n_, d_;
  NetLoss loss_;
  // per-iteration scratch; a NetProblem is used by one fit at a time
  mutable std::vector<double> index_scratch_, dindex_scratch_;
};

/// Full-batch ADAM (beta1=0.9, beta2=0.999, eps=1e-8).
SingleIndexNet train_net(const NetProblem& problem, const TrainConfig& cfg,
                         RegressionMode mode_tag);

}  // namespace dope
