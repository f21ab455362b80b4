#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dope/data_model.hpp"
#include "dope/regressors.hpp"

namespace dope {

struct ClipRange {
  double lo = 0.01;
  double hi = 0.99;
  void validate() const {
    if (!(0.0 < lo && lo < hi && hi < 1.0)) throw Error("invalid clip range");
  }
  double clip(double p) const { return p < lo ? lo : (p > hi ? hi : p); }
};

struct IndexSets {
  std::vector<std::size_t> I1, I2, I3;
  static IndexSets full_sample(std::size_t n);
  /// Nonempty sets within range; strict additionally requires a disjoint
  /// partition of [n].
  void validate(std::size_t n, bool strict) const;
  bool fused() const { return I1 == I2; }
};

struct PointEstimate {
  double value = 0.0;
  std::vector<double> per_row_terms;  // the u_i over I3
  std::string method;
  IndexSets index_sets;
  int representation_dim = 0;
};

/// Per-row nuisance accessors for a fixed table; propensity values are
/// pre-clip.
using RowPropensity = std::function<double(int t, std::size_t i)>;
using RowOutcome = std::function<double(int t, std::size_t i)>;

double naive_contrast(const ObservationTable& table, int t1, int t0);

PointEstimate regression_estimate(const OutcomeModel& g,
                                  const ObservationTable& table, int t);
PointEstimate regression_estimate(const RowOutcome& g,
                                  const ObservationTable& table, int t);

PointEstimate ipw_estimate(const RowPropensity& m, const ObservationTable& table,
                           int t, const ClipRange& clip);

PointEstimate aipw_estimate(const RowPropensity& m, const RowOutcome& g,
                            const ObservationTable& table, int t,
                            const ClipRange& clip);
/// AIPW restricted to the rows in I3 (per_row_terms follow I3 order).
PointEstimate aipw_estimate(const RowPropensity& m, const RowOutcome& g,
                            const ObservationTable& table, int t,
                            const ClipRange& clip,
                            std::span<const std::size_t> I3);

/// Per-arm propensity over arbitrary features: binary treatment fits arm 1
/// once and complements; multi-arm fits one-vs-rest and renormalizes to sum
/// to 1 (values are pre-clip).
struct ArmPropensity {
  std::vector<LogisticModel> models;  // one entry for binary
  int arms = 0;
  double value(int t, std::span<const double> features) const;
};
ArmPropensity fit_arm_propensity(std::span<const double> design, std::size_t dim,
                                 std::span<const int> treatments, int arms);

enum class OutcomeFamily { linear, single_index_net };

struct DopeOptions {
  OutcomeFamily family = OutcomeFamily::single_index_net;
  TrainConfig train;  // seed/lr/iterations/loss and the regression mode
  ClipRange clip;
  bool strict_splitting = false;
};

/// One DOPE pipeline run; all arms share the representation, propensity and
/// outcome-head fits.
struct DopeResult {
  std::map<int, PointEstimate> by_arm;
  int representation_dim = 0;
  /// Propensity of arm 1 given the representation, clipped, per I3 row
  /// (binary treatment only; diagnostic).
  std::vector<double> fitted_propensity;
};

DopeResult dope_all(const ObservationTable& table, const IndexSets& idx,
                    const DopeOptions& options);
PointEstimate dope(const ObservationTable& table, const IndexSets& idx,
                   const DopeOptions& options, int t);

DopeResult dope_bcl_all(const ObservationTable& table, const IndexSets& idx,
                        const DopeOptions& options);
PointEstimate dope_bcl(const ObservationTable& table, const IndexSets& idx,
                       const DopeOptions& options, int t);

/// DOPE stages downstream of an already-fitted outcome model, for callers
/// that share one fit across estimators. Requires I1 == I2 (the model is
/// the fused head and must come from a fit on I1).
DopeResult dope_with_model(const ObservationTable& table, const IndexSets& idx,
                           const OutcomeModel& model, const DopeOptions& options);
DopeResult dope_bcl_with_model(const ObservationTable& table, const IndexSets& idx,
                               const OutcomeModel& model,
                               const DopeOptions& options);

/// Low-level entry used by dope_all and by recomposition tests: run the
/// propensity/head/AIPW stages on a caller-supplied representation.
/// `rep` maps any covariate row to its representation values. When
/// `head_override` is non-null it is used as h(t, z) directly and no head
/// is fitted.
using RepFn = std::function<void(std::span<const double> w, std::span<double> out)>;
using HeadFn = std::function<double(int t, std::span<const double> z)>;
DopeResult dope_from_representation(const ObservationTable& table,
                                    const IndexSets& idx, const RepFn& rep,
                                    int rep_dim, const DopeOptions& options,
                                    const HeadFn* head_override);

enum class CrossfitVariant { algorithm_a1, three_fold };

struct CrossfitResult {
  std::map<int, double> estimate;  // mean of fold estimates
  std::map<int, double> v_hat;     // mean of fold variance estimates
  std::map<int, std::vector<double>> fold_estimates;
  std::map<int, std::vector<double>> fold_vhats;
  /// Full-length per-row terms; row i carries the u_i from the fold whose
  /// hold-out set contains i.
  std::map<int, std::vector<double>> per_row_terms;
  std::vector<IndexSets> fold_index_sets;
  FoldAssignment folds;
  int K = 0;
  int m = 0;
};

CrossfitResult crossfit_dope(const ObservationTable& table, int K, int m,
                             const DopeOptions& options, std::uint64_t seed,
                             CrossfitVariant variant = CrossfitVariant::algorithm_a1);

double adjusted_contrast(const std::map<int, PointEstimate>& estimates,
                         const ContrastSpec& spec);

}  // namespace dope
