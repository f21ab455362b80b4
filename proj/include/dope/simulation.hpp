#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dope/data_model.hpp"
#include "dope/estimators.hpp"
#include "dope/inference.hpp"
#include "dope/rng.hpp"
#include "dope/thread_pool.hpp"

namespace dope {

enum class LinkKind { lin, square, cbrt, sin_link };

double link_value(LinkKind link, double t, double z);
std::string link_name(LinkKind link);
LinkKind link_from_name(const std::string& name);

enum class BetaMode { random, fixed };

struct SimConfig {
  std::size_t n = 900;
  int d = 12;
  LinkKind link = LinkKind::lin;
  int N = 900;                     // replicate count
  std::uint64_t seed = 0;
  long ground_truth_draws = 1'000'000;
  BetaMode beta_mode = BetaMode::random;
  std::vector<double> beta_fixed;  // used when beta_mode == fixed
  void validate() const;
};

/// beta[0] = 1, remaining d-1 coordinates iid N(0, 1/(d-1)) in random mode.
std::vector<double> sample_beta(int d, BetaMode mode,
                                const std::vector<double>& fixed, Rng& rng);

/// W ~ Unif[0,1]^d; T|W ~ Bern(0.01 + 0.98 * 1(W1 > 0.5));
/// Y | T,W ~ N(h(T, W'beta), 1).
ObservationTable sample_dataset(std::size_t n, int d, LinkKind link,
                                const std::vector<double>& beta, Rng& rng);

struct GroundTruth {
  double value = 0.0;
  double mc_se = 0.0;
};
GroundTruth ground_truth_mu1(LinkKind link, const std::vector<double>& beta,
                             long draws, Rng& rng);

// ---------------------------------------------------------------------------
// Method suite shared by the experiment drivers and the CLI

struct MethodOptions {
  ClipRange clip;
  TrainConfig train;  // net hyperparameters; seed is set per call site
  RegressionMode mode = RegressionMode::stratified;
  int crossfit_K = 3;
  int crossfit_m = 1;
  CrossfitVariant crossfit_variant = CrossfitVariant::three_fold;
};

/// Method names accepted everywhere: naive, reg-ols, reg-nn, ipw, aipw-ols,
/// aipw-nn, dope-idx, dope-bcl, crossfit-dope.
bool is_known_method(const std::string& method);
const std::vector<std::string>& all_methods();

struct MethodOutput {
  double estimate = 0.0;               // mu_t or contrast, per target
  std::optional<double> v_hat;         // influence variance when defined
  std::optional<std::size_t> n_eff;
  std::optional<std::vector<double>> per_row_terms;
};

/// Evaluates the requested methods on one table, sharing nuisance fits
/// (one network fit serves reg-nn / aipw-nn / dope-idx / dope-bcl).
/// target_arm: the t whose mu_t is estimated. When contrast_arm is set,
/// estimates are mu_{target} - mu_{contrast} (naive always uses this form).
std::map<std::string, MethodOutput> evaluate_methods(
    const ObservationTable& table, const std::vector<std::string>& methods,
    const MethodOptions& options, std::uint64_t seed, int target_arm = 1,
    std::optional<int> contrast_arm = std::nullopt);

// ---------------------------------------------------------------------------
// Experiment drivers

struct RmseCell {
  std::string method;
  LinkKind link = LinkKind::lin;
  std::size_t n = 0;
  RegressionMode mode = RegressionMode::stratified;
  double sqrt_n_rmse = 0.0;
  double clt_halfwidth = 0.0;  // for sqrt(n)*RMSE, delta method over sq errors
  int n_replicates = 0;
  int n_failures = 0;
};

struct RmseGrid {
  std::vector<std::size_t> sample_sizes;
  std::vector<LinkKind> links;
  std::vector<RegressionMode> modes;
  std::vector<std::string> methods;
};

struct RmseTable {
  std::vector<RmseCell> rows;
};

/// Aggregates one cell from per-replicate estimates and truths (entries
/// with failed[r] set are skipped).
RmseCell aggregate_rmse_cell(const std::string& method, LinkKind link,
                             std::size_t n, RegressionMode mode,
                             std::span<const double> estimates,
                             std::span<const double> truths,
                             std::span<const char> failed);

RmseTable run_rmse_experiment(const RmseGrid& grid, const SimConfig& cfg,
                              const MethodOptions& options, ThreadPool* pool);

struct CoverageRow {
  std::string method;
  std::string interval_kind;  // "asymptotic" or "bootstrap_normal"
  double coverage = 0.0;
  double median_length = 0.0;
  double mean_estimate = 0.0;
  int n_replicates = 0;
};

struct CoverageTable {
  std::vector<CoverageRow> rows;
  double truth = 0.0;
  double truth_mc_se = 0.0;
};

/// Fixed-beta coverage study: per replicate both the plug-in interval and
/// the bootstrap-SE interval (normal kind) for each method.
CoverageTable run_coverage_experiment(const SimConfig& cfg,
                                      const std::vector<std::string>& methods,
                                      const MethodOptions& options,
                                      std::size_t B, double level,
                                      ThreadPool* pool);

}  // namespace dope
