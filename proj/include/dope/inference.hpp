#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "dope/data_model.hpp"
#include "dope/thread_pool.hpp"

namespace dope {

struct VarianceEstimate {
  double v_hat = 0.0;          // per-observation influence variance
  std::size_t n_effective = 0; // |I3|
};

enum class IntervalKind { wald_asymptotic, bootstrap_normal, bootstrap_percentile };

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double level = 0.95;
  IntervalKind kind = IntervalKind::wald_asymptotic;
  double length() const { return hi - lo; }
  bool covers(double x) const { return lo <= x && x <= hi; }
};

struct BootstrapResult {
  std::vector<double> replicate_values;  // successes only, in replicate order
  double se = 0.0;                       // sample sd of replicate_values
  std::uint64_t seed = 0;
  std::size_t requested = 0;
  std::size_t failures = 0;
};

/// Standard normal quantile (Wichura's AS241 PPND16).
double normal_quantile(double p);
/// Standard normal CDF.
double normal_cdf(double x);

/// V-hat = mean(u^2) - mean(u)^2 with population-style divisor.
VarianceEstimate influence_variance(std::span<const double> per_row_terms);

Interval wald_interval(double estimate, const VarianceEstimate& v, double level);

/// Type-7 quantile: linear interpolation between order statistics,
/// h = (n-1)p + 1.
double interpolated_quantile(std::vector<double> values, double p);

/// `estimator` refits the entire pipeline on the resampled table; it gets a
/// deterministic child seed per replicate. Failing replicates are excluded;
/// more than 2% failures is an error.
BootstrapResult bootstrap(
    const ObservationTable& table,
    const std::function<double(const ObservationTable&, std::uint64_t)>& estimator,
    std::size_t B, std::uint64_t seed, ThreadPool* pool = nullptr);

/// Shared-resample variant: one closure returns estimates for several
/// methods computed on the same resample (so expensive fits are shared).
/// Result r holds the replicate series for method r.
std::vector<BootstrapResult> bootstrap_multi(
    const ObservationTable& table,
    const std::function<std::vector<double>(const ObservationTable&, std::uint64_t)>&
        estimators,
    std::size_t n_methods, std::size_t B, std::uint64_t seed,
    ThreadPool* pool = nullptr);

Interval bootstrap_interval(double estimate, const BootstrapResult& result,
                            double level, IntervalKind kind);

}  // namespace dope
