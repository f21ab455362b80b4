#pragma once

#include <stdexcept>
#include <string>

namespace dope {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// data_model
struct MissingColumn : Error {
  explicit MissingColumn(const std::string& name)
      : Error("missing column: " + name), column(name) {}
  std::string column;
};
struct NonNumericCell : Error {
  NonNumericCell(std::size_t row, std::size_t col, const std::string& text)
      : Error("non-numeric cell at row " + std::to_string(row) + ", col " +
              std::to_string(col) + ": '" + text + "'"),
        row(row), col(col) {}
  std::size_t row, col;
};
struct EmptyAfterDrop : Error {
  EmptyAfterDrop() : Error("drop policy removed every covariate column") {}
};
struct TooFewRows : Error {
  explicit TooFewRows(const std::string& what) : Error(what) {}
};
struct EmptyStratum : Error {
  explicit EmptyStratum(int treatment)
      : Error("no rows with treatment id " + std::to_string(treatment)),
        treatment(treatment) {}
  int treatment;
};

// regressors
struct RankDeficient : Error {
  RankDeficient() : Error("design matrix is rank deficient") {}
};
struct DimensionMismatch : Error {
  explicit DimensionMismatch(const std::string& what) : Error(what) {}
};

// estimators
struct EmptyIndexSet : Error {
  explicit EmptyIndexSet(const std::string& which)
      : Error("empty index set " + which) {}
};
struct IndexSetOverlap : Error {
  IndexSetOverlap() : Error("index sets overlap or do not cover [n] in strict mode") {}
};
struct NonBinaryTreatment : Error {
  NonBinaryTreatment() : Error("operation requires a binary treatment") {}
};
struct BadFoldConfig : Error {
  explicit BadFoldConfig(const std::string& what) : Error(what) {}
};
struct MissingArmEstimate : Error {
  explicit MissingArmEstimate(int treatment)
      : Error("no estimate for treatment id " + std::to_string(treatment)) {}
};

// inference
struct BootstrapFailure : Error {
  explicit BootstrapFailure(const std::string& what) : Error(what) {}
};

// oracle
struct PositivityViolation : Error {
  explicit PositivityViolation(const std::string& what) : Error(what) {}
};
struct NotARefinement : Error {
  NotARefinement() : Error("partition is not a refinement") {}
};
struct CIViolated : Error {
  explicit CIViolated(const std::string& what) : Error(what) {}
};
struct AsymmetricGrid : Error {
  AsymmetricGrid() : Error("covariate grid is not symmetric about 1/2") {}
};
struct QuadratureNonConvergence : Error {
  explicit QuadratureNonConvergence(const std::string& what) : Error(what) {}
};
struct InfeasibleSizes : Error {
  explicit InfeasibleSizes(const std::string& what) : Error(what) {}
};

}  // namespace dope
