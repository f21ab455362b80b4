#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dope/data_model.hpp"

namespace dope::oracle {

/// Exact finite probability space over (T, W, Y): K treatment ids, M
/// covariate atoms, L outcome levels. Everything downstream is computed by
/// enumeration with compensated summation.
struct FiniteJointDistribution {
  int K = 0, M = 0, L = 0;
  std::vector<double> y_support;  // L
  std::vector<double> pmf;        // K*M*L, p(t, w, y)

  double& p(int t, int m, int l) {
    return pmf[(static_cast<std::size_t>(t) * M + m) * L + l];
  }
  double p(int t, int m, int l) const {
    return pmf[(static_cast<std::size_t>(t) * M + m) * L + l];
  }
  double atom_mass(int m) const;      // P(W = w_m)
  double treat_mass(int t) const;     // P(T = t)
  void validate() const;              // pmf sums to 1; positivity on atoms
  /// Removes zero-mass atoms (convention for partition comparisons).
  FiniteJointDistribution without_null_atoms() const;
};

/// Partition of the atom index set; the finite-scale form of a description.
struct Partition {
  std::vector<int> cell_of;  // M entries in 0..cells-1
  int cells = 0;

  static Partition trivial(int M);
  static Partition finest(int M);
  static Partition from_cells(std::vector<int> cell_of);
};

/// True iff `fine` refines `coarse` (each fine cell sits inside one coarse
/// cell).
bool refines(const Partition& coarse, const Partition& fine, int M);

/// Groups atoms whose key vectors agree within `tol` componentwise.
Partition partition_by_keys(const std::vector<std::vector<double>>& keys,
                            double tol);

struct AdjustedFunctionals {
  std::vector<double> pi;   // per cell: P(T=t | cell)
  std::vector<double> b;    // per cell: E[Y | T=t, cell]
  double mu = 0.0;          // sum_cells P(cell) b_t(cell)
  /// psi_t per support triple, indexed like pmf.
  std::vector<double> psi;
  double v = 0.0;           // E[psi^2]
};

AdjustedFunctionals exact_functionals(const FiniteJointDistribution& dist,
                                      const Partition& partition, int t);

/// Variance of the contrast influence function sum_t c_t psi_t.
double contrast_variance(const FiniteJointDistribution& dist,
                         const Partition& partition, const ContrastSpec& contrast);

/// |V_D(Z2) - V_D(Z1) - sum_t c_t^2 D_t| with the D_t conditional-variance
/// form, all terms exact. Requires Z1 coarser than Z2 and Y ⟂ Z2 | (T, Z1).
struct DeletionReport {
  double lhs_gap = 0.0;          // V_D(Z2) - V_D(Z1)
  std::vector<double> d_t;       // per arm
  double discrepancy = 0.0;      // |gap - sum c_t^2 D_t|
  double mu_shift = 0.0;         // max_t |mu_t(Z2) - mu_t(Z1)|
};
DeletionReport check_deletion_identity(const FiniteJointDistribution& dist,
                                       const Partition& Z1, const Partition& Z2,
                                       const ContrastSpec& contrast);

/// V_D(Z1) - V_D(Z2) = c' Var[R] c with R_t = (1(T=t)/pi_t(Z2) - 1)
/// (b_t(Z2) - b_t(Z1)), plus the Var/Cov component formulas, each computed
/// both by enumeration and by the conditional formulas.
struct SupplementationReport {
  double lhs_gap = 0.0;     // V_D(Z1) - V_D(Z2)
  double quad_form = 0.0;   // c' Var[R] c (enumerated)
  double discrepancy = 0.0; // |lhs_gap - quad_form|
  double max_var_component_error = 0.0;
  double max_cov_component_error = 0.0;
  double mu_shift = 0.0;
};
SupplementationReport check_supplementation_identity(
    const FiniteJointDistribution& dist, const Partition& Z1, const Partition& Z2,
    const ContrastSpec& contrast);

/// Cell-wise check of E[pi_t(Z2)^{-1} | T=t, Z1] = pi_t(Z1)^{-1}.
double check_inverse_propensity_projection(const FiniteJointDistribution& dist,
                                           const Partition& Z1, const Partition& Z2,
                                           int t);

/// Builds Pi_P (partition induced by the propensity vector), verifies
/// mu_t(Pi_P) = mu_t(W) for all t, and the ordering V_D(Pi_P) >= V_D(Z)
/// for a refinement Z of Pi_P.
struct PropensityDescriptionReport {
  Partition pi_partition;
  double max_mu_error = 0.0;
  double v_pi = 0.0;
  double v_fine = 0.0;
  bool ordering_holds = false;
};
PropensityDescriptionReport check_propensity_description(
    const FiniteJointDistribution& dist, const ContrastSpec& contrast,
    const Partition& refinement);

// ---------------------------------------------------------------------------
// Symmetric example (closed-form variance formulas)

struct SymmetricExampleSpec {
  double delta = 0.1;
  int grid_size = 101;  // odd
  std::function<double(double)> g;  // on [0, 1/2 - delta]
  std::function<double(double)> v;  // on [delta, 1 - delta], nonnegative
  int t = 1;
};

struct SymmetricRow {
  std::string quantity;
  double closed_form = 0.0;   // general-v closed form (exact derivation)
  double printed_form = 0.0;  // symmetric-v special case as printed
  double exact_value = 0.0;   // enumeration
  double abs_error = 0.0;     // |closed_form - exact_value|
};

struct SymmetricExampleReport {
  std::vector<SymmetricRow> rows;      // V_t(0), V_t(Z), V_t(W)
  bool v_is_symmetric = false;         // printed forms valid iff true
  double moment_algebra_error = 0.0;   // uniform-moment identities for v=w^2
  bool reversal = false;               // V_t(Z) > V_t(W)
};
SymmetricExampleReport symmetric_example_check(const SymmetricExampleSpec& spec);

// ---------------------------------------------------------------------------
// Gradient of the single-index adjusted mean (d = 2, quadrature)

struct SmoothDgp2D {
  std::function<double(double)> h;        // h_t
  std::function<double(double)> h_prime;  // h_t'
  /// m(t | w) for the target arm; continuous, bounded inside (0,1).
  std::function<double(double, double)> m;
  std::array<double, 2> theta;            // theta_P, both entries > 0
};

struct GradientCheckReport {
  std::array<double, 2> fd_gradient{};
  std::array<double, 2> formula_gradient{};
  double rel_error = 0.0;
  double richardson_deviation = 0.0;  // fd step consistency check
};
GradientCheckReport si_gradient_check(const SmoothDgp2D& dgp, double fd_step = 1e-3,
                                      double quad_tol = 1e-8);

/// u(theta) = mu_t(W' theta) for the DGP, by nested quadrature (exposed for
/// tests).
double adjusted_mean_of_index(const SmoothDgp2D& dgp, std::array<double, 2> theta,
                              double quad_tol = 1e-8);

// ---------------------------------------------------------------------------
// Compliant-distribution generator for the identity suites

enum class CompliantKind { ods_pair, precision_pair };

struct CompliantSizes {
  int z1_cells = 3;
  int z2_per_z1 = 2;
  int atoms_per_z2 = 2;
  int treatments = 2;
  int y_levels = 3;
};

struct CompliantTriple {
  FiniteJointDistribution dist;
  Partition Z1, Z2;
};

/// ods_pair: p(y | t, atom) constant within Z1 cells, so Y ⟂ Z2 | (T, Z1).
/// precision_pair: p(t | atom) constant within Z1 cells, so T ⟂ Z2 | Z1.
/// All conditional probabilities kept inside [0.05, 0.95].
CompliantTriple generate_compliant_distribution(CompliantKind kind,
                                                const CompliantSizes& sizes,
                                                std::uint64_t seed);

/// Random distribution with interior propensities (for projection checks).
FiniteJointDistribution random_distribution(int K, int M, int L, std::uint64_t seed);

/// Random coarsening of the finest partition into `cells` cells (each
/// nonempty).
Partition random_coarsening(int M, int cells, std::uint64_t seed);

}  // namespace dope::oracle
