#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dope/errors.hpp"

namespace dope {

/// Bijection between contiguous treatment ids 0..K-1 and the original text
/// labels, in first-appearance order unless an explicit order is given.
class TreatmentLabels {
 public:
  int id_of(const std::string& display) const;
  const std::string& display_of(int id) const;
  int count() const { return static_cast<int>(displays_.size()); }
  int intern(const std::string& display);  // existing id or a fresh one
  const std::vector<std::string>& displays() const { return displays_; }

 private:
  std::vector<std::string> displays_;
  std::map<std::string, int> ids_;
};

/// The sample every estimator consumes. Immutable after construction.
struct ObservationTable {
  std::vector<int> treatments;      // n treatment ids
  std::vector<double> covariates;   // n x k, row-major
  std::vector<double> outcomes;     // n
  std::vector<std::string> column_names;  // k
  TreatmentLabels labels;

  std::size_t n() const { return outcomes.size(); }
  std::size_t k() const { return column_names.size(); }
  std::span<const double> row(std::size_t i) const {
    return {covariates.data() + i * k(), k()};
  }
  void validate() const;  // length agreement, finiteness, n>=1, k>=1

  ObservationTable subset(std::span<const std::size_t> rows) const;
};

struct ContrastSpec {
  std::map<int, double> coefficients;  // treatment id -> c_t
  void validate(const TreatmentLabels& labels) const;
  static ContrastSpec difference(int t1, int t0);  // c_{t1}=+1, c_{t0}=-1
  static ContrastSpec single(int t);
};

enum class MissingPolicy { mean_impute, drop_then_impute };

struct IngestionOptions {
  std::string treatment_column;
  std::string outcome_column;
  MissingPolicy missing_policy = MissingPolicy::mean_impute;
  double drop_threshold = 0.5;  // used by drop_then_impute; in (0,1)
  std::optional<std::vector<std::string>> treatment_order;  // explicit id order
};

struct FoldAssignment {
  std::vector<int> fold_of;  // n fold indices in 0..K-1
  int K = 0;
  std::vector<std::vector<std::size_t>> folds() const;
};

ObservationTable load_csv(const std::string& path, const IngestionOptions& opts);

/// Writes the table back out in the same CSV dialect load_csv reads, with
/// round-trippable numeric formatting; loading the result reproduces the
/// table exactly.
void save_csv(const ObservationTable& table, const std::string& path,
              const std::string& treatment_column = "treatment",
              const std::string& outcome_column = "outcome");

FoldAssignment assign_folds(std::size_t n, int K, std::uint64_t seed);

ObservationTable strata(const ObservationTable& table, int t);

/// Row indices with treatment == t, order preserved.
std::vector<std::size_t> stratum_rows(const ObservationTable& table, int t);

}  // namespace dope
