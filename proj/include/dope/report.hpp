#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dope/inference.hpp"
#include "dope/oracle.hpp"
#include "dope/simulation.hpp"

namespace dope {

struct ReportRow {
  std::string estimator;
  double estimate = 0.0;
  std::optional<double> bs_se;
  std::optional<Interval> bs_ci;
  std::optional<double> asym_se;
};

struct EstimateOptions {
  std::vector<std::string> methods;
  std::size_t bootstrap = 1000;
  IntervalKind ci_kind = IntervalKind::bootstrap_percentile;
  double level = 0.95;
  MethodOptions method_options;
  std::uint64_t seed = 0;
  int target_arm = 1;
  std::optional<int> contrast_arm = 0;  // default: mu_1 - mu_0
};

/// Shared by cmd_estimate and the CLI equivalence tests: rows sorted by
/// bootstrap SE (input order when bootstrap == 0).
std::vector<ReportRow> build_report(const ObservationTable& table,
                                    const EstimateOptions& options,
                                    ThreadPool* pool);

// ---------------------------------------------------------------------------
// Oracle verification suites (drives cmd_oracle_check)

struct SuiteResult {
  std::string suite;
  int trials = 0;
  double max_discrepancy = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::vector<std::string> notes;
};

/// suite: one of lemma1, lemma2, projection, symmetric, si-gradient, all.
std::vector<SuiteResult> run_oracle_suites(const std::string& suite, int trials,
                                           std::uint64_t seed);

// ---------------------------------------------------------------------------
// Serialization

std::string format_double(double v);  // %.17g, round-trippable

std::string rmse_table_csv(const RmseTable& table);
std::string rmse_table_json(const RmseTable& table, const std::string& config_json);
std::string coverage_table_csv(const CoverageTable& table);
std::string coverage_table_json(const CoverageTable& table,
                                const std::string& config_json);
std::string report_csv(const std::vector<ReportRow>& rows);
std::string report_json(const std::vector<ReportRow>& rows,
                        const std::string& config_json);
std::string suites_json(const std::vector<SuiteResult>& suites,
                        const std::string& config_json);

/// SHA-256 hex digest (content hash for config manifests).
std::string sha256_hex(const std::string& bytes);

/// Fitted model parameters as JSON, for audit trails.
std::string model_parameters_json(const LinearModel& model);
std::string model_parameters_json(const LogisticModel& model);
std::string model_parameters_json(const SingleIndexNet& net);

}  // namespace dope
