#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "dope/oracle.hpp"
#include "dope/rng.hpp"
#include "test_util.hpp"

using namespace dope;
using namespace dope::oracle;

namespace {

// Independent brute-force enumeration of the adjusted functionals: plain
// loops, no shared code with the oracle module.
struct BruteForce {
  std::vector<double> pi, b;
  double mu = 0.0, v = 0.0;
};

BruteForce brute_force(const FiniteJointDistribution& dist, const Partition& part,
                       int t) {
  const int C = part.cells;
  BruteForce out;
  out.pi.assign(C, 0.0);
  out.b.assign(C, 0.0);
  std::vector<double> cell_mass(C, 0.0), cell_t_mass(C, 0.0), cell_ty(C, 0.0);
  for (int m = 0; m < dist.M; ++m) {
    const int c = part.cell_of[m];
    for (int tt = 0; tt < dist.K; ++tt)
      for (int l = 0; l < dist.L; ++l) {
        cell_mass[c] += dist.p(tt, m, l);
        if (tt == t) {
          cell_t_mass[c] += dist.p(tt, m, l);
          cell_ty[c] += dist.p(tt, m, l) * dist.y_support[l];
        }
      }
  }
  for (int c = 0; c < C; ++c) {
    out.pi[c] = cell_t_mass[c] / cell_mass[c];
    out.b[c] = cell_ty[c] / cell_t_mass[c];
    out.mu += cell_mass[c] * out.b[c];
  }
  for (int m = 0; m < dist.M; ++m) {
    const int c = part.cell_of[m];
    for (int tt = 0; tt < dist.K; ++tt)
      for (int l = 0; l < dist.L; ++l) {
        double psi = out.b[c] - out.mu;
        if (tt == t) psi += (dist.y_support[l] - out.b[c]) / out.pi[c];
        out.v += dist.p(tt, m, l) * psi * psi;
      }
  }
  return out;
}

}  // namespace

TEST_CASE("trivial partition reduces the adjusted mean to the marginal ratio") {
  const FiniteJointDistribution dist = random_distribution(2, 5, 3, 1);
  const Partition trivial = Partition::trivial(dist.M);
  const AdjustedFunctionals fn = exact_functionals(dist, trivial, 1);
  // E[1(T=1) Y] / P(T=1)
  double num = 0.0;
  for (int m = 0; m < dist.M; ++m)
    for (int l = 0; l < dist.L; ++l) num += dist.p(1, m, l) * dist.y_support[l];
  CHECK(fn.mu == doctest::Approx(num / dist.treat_mass(1)).epsilon(1e-13));
}

TEST_CASE("finest partition conditions on W itself") {
  const FiniteJointDistribution dist = random_distribution(2, 6, 3, 2);
  const Partition finest = Partition::finest(dist.M);
  const AdjustedFunctionals fn = exact_functionals(dist, finest, 0);
  for (int m = 0; m < dist.M; ++m) {
    double tm = 0.0, ty = 0.0, mass = 0.0;
    for (int tt = 0; tt < dist.K; ++tt)
      for (int l = 0; l < dist.L; ++l) {
        mass += dist.p(tt, m, l);
        if (tt == 0) {
          tm += dist.p(tt, m, l);
          ty += dist.p(tt, m, l) * dist.y_support[l];
        }
      }
    CHECK(fn.pi[static_cast<std::size_t>(m)] == doctest::Approx(tm / mass).epsilon(1e-13));
    CHECK(fn.b[static_cast<std::size_t>(m)] == doctest::Approx(ty / tm).epsilon(1e-13));
  }
}

TEST_CASE("exact functionals match independent brute force on random 3-cell partitions") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const FiniteJointDistribution dist = random_distribution(2, 7, 4, 100 + seed);
    const Partition part = random_coarsening(dist.M, 3, seed);
    for (int t : {0, 1}) {
      const AdjustedFunctionals fn = exact_functionals(dist, part, t);
      const BruteForce bf = brute_force(dist, part, t);
      CHECK(std::abs(fn.mu - bf.mu) < 1e-12);
      CHECK(std::abs(fn.v - bf.v) < 1e-12);
      for (int c = 0; c < part.cells; ++c) {
        CHECK(std::abs(fn.pi[static_cast<std::size_t>(c)] - bf.pi[static_cast<std::size_t>(c)]) < 1e-13);
        CHECK(std::abs(fn.b[static_cast<std::size_t>(c)] - bf.b[static_cast<std::size_t>(c)]) < 1e-13);
      }
    }
  }
}

TEST_CASE("psi has mean zero and V_t = E[psi^2] >= 0 for every partition") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const FiniteJointDistribution dist = random_distribution(3, 6, 3, 300 + seed);
    for (int cells : {1, 2, 6}) {
      const Partition part = random_coarsening(dist.M, cells, seed + 17);
      for (int t = 0; t < dist.K; ++t) {
        const AdjustedFunctionals fn = exact_functionals(dist, part, t);
        double mean_psi = 0.0;
        for (std::size_t i = 0; i < dist.pmf.size(); ++i)
          mean_psi += dist.pmf[i] * fn.psi[i];
        CHECK(std::abs(mean_psi) < 1e-12);
        CHECK(fn.v >= 0.0);
      }
    }
  }
}

TEST_CASE("positivity violations are detected") {
  FiniteJointDistribution dist = random_distribution(2, 3, 2, 7);
  // zero out treatment 1 on atom 0
  for (int l = 0; l < dist.L; ++l) dist.p(1, 0, l) = 0.0;
  double total = 0.0;
  for (double v : dist.pmf) total += v;
  for (double& v : dist.pmf) v /= total;
  CHECK_THROWS_AS(dist.validate(), PositivityViolation);
}

TEST_CASE("refinement predicate") {
  const Partition z1 = Partition::from_cells({0, 0, 1, 1, 2, 2});
  const Partition z2 = Partition::from_cells({0, 1, 2, 2, 3, 4});
  CHECK(refines(z1, z2, 6));
  CHECK_FALSE(refines(z2, z1, 6));
  const Partition cross = Partition::from_cells({0, 1, 0, 1, 0, 1});
  CHECK_FALSE(refines(z1, cross, 6));
  CHECK(refines(Partition::trivial(6), cross, 6));
}

TEST_CASE("deletion identity: degenerate refinement gives zero D_t") {
  const auto triple = generate_compliant_distribution(CompliantKind::ods_pair,
                                                      CompliantSizes{}, 5);
  const ContrastSpec contrast = ContrastSpec::difference(1, 0);
  const DeletionReport report =
      check_deletion_identity(triple.dist, triple.Z1, triple.Z1, contrast);
  CHECK(report.discrepancy < 1e-14);
  CHECK(std::abs(report.lhs_gap) < 1e-14);
  for (double d : report.d_t) CHECK(std::abs(d) < 1e-14);
}

TEST_CASE("deletion identity holds on 100 generated compliant triples") {
  const ContrastSpec contrast = ContrastSpec::difference(1, 0);
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    CompliantSizes sizes;
    sizes.z1_cells = 2 + static_cast<int>(seed % 3);
    sizes.y_levels = 2 + static_cast<int>(seed % 3);
    const auto triple =
        generate_compliant_distribution(CompliantKind::ods_pair, sizes, seed);
    const DeletionReport report =
        check_deletion_identity(triple.dist, triple.Z1, triple.Z2, contrast);
    worst = std::max({worst, report.discrepancy, report.mu_shift});
    CHECK(report.lhs_gap >= -1e-12);  // Theorem 1(iii) ordering at finite scale
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("deletion identity on a hand-expanded 2x2x2 example") {
  // two Z1 cells, each split into two Z2 cells, one atom per Z2 cell
  FiniteJointDistribution dist;
  dist.K = 2;
  dist.M = 4;
  dist.L = 2;
  dist.y_support = {0.0, 1.0};
  const double mass[4] = {0.3, 0.2, 0.25, 0.25};
  const double pt1[4] = {0.4, 0.7, 0.3, 0.6};     // varies within Z1 cells
  const double py1[2][2] = {{0.2, 0.8}, {0.5, 0.4}};  // p(y=1 | t, z1 cell)
  dist.pmf.assign(16, 0.0);
  for (int m = 0; m < 4; ++m) {
    const int z1 = m / 2;
    for (int t = 0; t < 2; ++t) {
      const double pt = t == 1 ? pt1[m] : 1.0 - pt1[m];
      const double p1 = py1[t][z1];
      dist.p(t, m, 0) = mass[m] * pt * (1.0 - p1);
      dist.p(t, m, 1) = mass[m] * pt * p1;
    }
  }
  dist.validate();
  const Partition Z1 = Partition::from_cells({0, 0, 1, 1});
  const Partition Z2 = Partition::finest(4);
  const ContrastSpec contrast = ContrastSpec::difference(1, 0);
  const DeletionReport report = check_deletion_identity(dist, Z1, Z2, contrast);
  CHECK(report.discrepancy < 1e-12);

  // hand expansion of D_1: per z1 cell, pi_1 Var(Y | T=1, z1) Var(1/pi_1(Z2) | T=1, z1)
  double d1_hand = 0.0;
  for (int c = 0; c < 2; ++c) {
    const int m0 = 2 * c, m1 = 2 * c + 1;
    const double w0 = mass[m0] * pt1[m0], w1 = mass[m1] * pt1[m1];
    const double cell_mass = mass[m0] + mass[m1];
    const double pi1 = (w0 + w1) / cell_mass;
    const double py = py1[1][c];
    const double var_y = py * (1.0 - py);
    const double q0 = w0 / (w0 + w1), q1 = w1 / (w0 + w1);
    const double e1 = q0 / pt1[m0] + q1 / pt1[m1];
    const double e2 = q0 / (pt1[m0] * pt1[m0]) + q1 / (pt1[m1] * pt1[m1]);
    d1_hand += cell_mass * pi1 * var_y * (e2 - e1 * e1);
  }
  CHECK(report.d_t[1] == doctest::Approx(d1_hand).epsilon(1e-12));
}

TEST_CASE("deletion check rejects non-refinements and CI violations") {
  const auto triple = generate_compliant_distribution(CompliantKind::ods_pair,
                                                      CompliantSizes{}, 9);
  const ContrastSpec contrast = ContrastSpec::difference(1, 0);
  CHECK_THROWS_AS(
      check_deletion_identity(triple.dist, triple.Z2, triple.Z1, contrast),
      NotARefinement);
  // a generic random distribution violates Y-CI for a genuine coarsening
  const FiniteJointDistribution bad = random_distribution(2, 8, 3, 11);
  const Partition z1 = Partition::from_cells({0, 0, 0, 0, 1, 1, 1, 1});
  const Partition z2 = Partition::finest(8);
  CHECK_THROWS_AS(check_deletion_identity(bad, z1, z2, contrast), CIViolated);
}

TEST_CASE("supplementation identity: Z1 == Z2 gives zero on both sides") {
  const auto triple = generate_compliant_distribution(
      CompliantKind::precision_pair, CompliantSizes{}, 13);
  const ContrastSpec contrast = ContrastSpec::difference(1, 0);
  const SupplementationReport report = check_supplementation_identity(
      triple.dist, triple.Z1, triple.Z1, contrast);
  CHECK(std::abs(report.lhs_gap) < 1e-13);
  CHECK(std::abs(report.quad_form) < 1e-13);
}

TEST_CASE("supplementation identity holds on 100 generated compliant triples") {
  const ContrastSpec contrast = ContrastSpec::difference(1, 0);
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    CompliantSizes sizes;
    sizes.z1_cells = 2 + static_cast<int>(seed % 2);
    sizes.z2_per_z1 = 2 + static_cast<int>(seed % 3);
    sizes.y_levels = 2 + static_cast<int>(seed % 4);
    const auto triple = generate_compliant_distribution(
        CompliantKind::precision_pair, sizes, 500 + seed);
    const SupplementationReport report = check_supplementation_identity(
        triple.dist, triple.Z1, triple.Z2, contrast);
    worst = std::max({worst, report.discrepancy, report.max_var_component_error,
                      report.max_cov_component_error, report.mu_shift});
    CHECK(report.lhs_gap >= -1e-12);  // supplementation never hurts
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("supplementation with cell-wise constant b gives zero Var R") {
  // p(y | t, atom) constant per z1 cell AND p(t | z1): then b_t(Z2) = b_t(Z1)
  FiniteJointDistribution dist;
  dist.K = 2;
  dist.M = 4;
  dist.L = 2;
  dist.y_support = {0.0, 1.0};
  const double mass[4] = {0.3, 0.2, 0.25, 0.25};
  const double pt_cell[2] = {0.35, 0.65};
  const double py_cell[2][2] = {{0.3, 0.6}, {0.8, 0.2}};  // [t][z1]
  dist.pmf.assign(16, 0.0);
  for (int m = 0; m < 4; ++m) {
    const int c = m / 2;
    for (int t = 0; t < 2; ++t) {
      const double pt = t == 1 ? pt_cell[c] : 1.0 - pt_cell[c];
      dist.p(t, m, 1) = mass[m] * pt * py_cell[t][c];
      dist.p(t, m, 0) = mass[m] * pt * (1.0 - py_cell[t][c]);
    }
  }
  dist.validate();
  const Partition Z1 = Partition::from_cells({0, 0, 1, 1});
  const Partition Z2 = Partition::finest(4);
  const ContrastSpec contrast = ContrastSpec::difference(1, 0);
  const SupplementationReport report =
      check_supplementation_identity(dist, Z1, Z2, contrast);
  CHECK(std::abs(report.quad_form) < 1e-13);
  CHECK(std::abs(report.lhs_gap) < 1e-13);
}

TEST_CASE("inverse propensity projection identity") {
  // Z1 == Z2: exact equality trivially
  const FiniteJointDistribution dist = random_distribution(2, 6, 3, 17);
  const Partition finest = Partition::finest(dist.M);
  CHECK(check_inverse_propensity_projection(dist, finest, finest, 1) < 1e-15);

  // trivial Z1: E[pi_t(Z2)^{-1} | T=t] = 1 / P(T=t)
  const Partition trivial = Partition::trivial(dist.M);
  CHECK(check_inverse_propensity_projection(dist, trivial, finest, 1) < 1e-12);

  // random refinements, no CI needed (Lemma holds for any nesting)
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const FiniteJointDistribution d2 = random_distribution(2, 9, 3, 700 + seed);
    const Partition z1 = random_coarsening(9, 1 + static_cast<int>(seed % 4), seed);
    const Partition z2 = Partition::finest(9);
    for (int t : {0, 1})
      worst = std::max(worst, check_inverse_propensity_projection(d2, z1, z2, t));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("propensity description is valid and coarser-or-equal in variance") {
  const ContrastSpec contrast = ContrastSpec::difference(1, 0);

  // constant propensity in w: Pi_P is trivial
  FiniteJointDistribution flat;
  flat.K = 2;
  flat.M = 3;
  flat.L = 2;
  flat.y_support = {0.0, 1.0};
  flat.pmf.assign(12, 0.0);
  const double mass[3] = {0.5, 0.3, 0.2};
  const double py[3] = {0.2, 0.6, 0.9};
  for (int m = 0; m < 3; ++m)
    for (int t = 0; t < 2; ++t) {
      const double pt = t == 1 ? 0.4 : 0.6;
      flat.p(t, m, 1) = mass[m] * pt * py[m];
      flat.p(t, m, 0) = mass[m] * pt * (1.0 - py[m]);
    }
  flat.validate();
  const auto flat_report =
      check_propensity_description(flat, contrast, Partition::finest(3));
  CHECK(flat_report.pi_partition.cells == 1);
  CHECK(flat_report.max_mu_error < 1e-12);
  CHECK(flat_report.ordering_holds);

  // random distributions: finest partition refines Pi_P; validity + ordering
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const FiniteJointDistribution dist = random_distribution(2, 6, 3, 900 + seed);
    const auto report =
        check_propensity_description(dist, contrast, Partition::finest(6));
    CHECK(report.max_mu_error < 1e-12);
    CHECK(report.ordering_holds);
  }

  // Y independent of W given T: equality case V(Pi_P) == V(W)
  FiniteJointDistribution indep;
  indep.K = 2;
  indep.M = 4;
  indep.L = 2;
  indep.y_support = {0.0, 1.0};
  indep.pmf.assign(16, 0.0);
  const double mass4[4] = {0.25, 0.25, 0.3, 0.2};
  const double pt4[4] = {0.3, 0.45, 0.6, 0.75};
  const double py_t[2] = {0.35, 0.7};  // depends on t only
  for (int m = 0; m < 4; ++m)
    for (int t = 0; t < 2; ++t) {
      const double pt = t == 1 ? pt4[m] : 1.0 - pt4[m];
      indep.p(t, m, 1) = mass4[m] * pt * py_t[t];
      indep.p(t, m, 0) = mass4[m] * pt * (1.0 - py_t[t]);
    }
  indep.validate();
  const auto indep_report =
      check_propensity_description(indep, contrast, Partition::finest(4));
  const double v_w = contrast_variance(indep, Partition::finest(4), contrast);
  CHECK(indep_report.v_pi == doctest::Approx(v_w).epsilon(1e-12));
}

TEST_CASE("binary outcomes: b_t partition matches the conditional-law partition") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(child_seed(2000, seed));
    FiniteJointDistribution dist;
    dist.K = 2;
    dist.M = 6;
    dist.L = 2;
    dist.y_support = {0.0, 1.0};
    dist.pmf.assign(24, 0.0);
    std::vector<double> mass(6);
    double total = 0.0;
    for (double& x : mass) {
      x = rng.uniform(0.5, 1.5);
      total += x;
    }
    // force two pairs of atoms to share the full conditional law
    std::vector<double> pt(6), py1(6), py0(6);
    for (int m = 0; m < 6; ++m) {
      pt[static_cast<std::size_t>(m)] = rng.uniform(0.2, 0.8);
      py1[static_cast<std::size_t>(m)] = rng.uniform(0.1, 0.9);
      py0[static_cast<std::size_t>(m)] = rng.uniform(0.1, 0.9);
    }
    py1[3] = py1[0];
    py0[3] = py0[0];
    for (int m = 0; m < 6; ++m)
      for (int t = 0; t < 2; ++t) {
        const double w = mass[static_cast<std::size_t>(m)] / total;
        const double ptm = t == 1 ? pt[static_cast<std::size_t>(m)]
                                  : 1.0 - pt[static_cast<std::size_t>(m)];
        const double py = t == 1 ? py1[static_cast<std::size_t>(m)]
                                 : py0[static_cast<std::size_t>(m)];
        dist.p(t, m, 1) = w * ptm * py;
        dist.p(t, m, 0) = w * ptm * (1.0 - py);
      }
    dist.validate();

    // partition by (b_0, b_1) vs partition by the full conditional law
    std::vector<std::vector<double>> bkeys(6), lawkeys(6);
    for (int m = 0; m < 6; ++m) {
      bkeys[static_cast<std::size_t>(m)] = {py0[static_cast<std::size_t>(m)],
                                            py1[static_cast<std::size_t>(m)]};
      lawkeys[static_cast<std::size_t>(m)] = {
          py0[static_cast<std::size_t>(m)], 1.0 - py0[static_cast<std::size_t>(m)],
          py1[static_cast<std::size_t>(m)], 1.0 - py1[static_cast<std::size_t>(m)]};
    }
    const Partition r_part = partition_by_keys(bkeys, 1e-12);
    const Partition q_part = partition_by_keys(lawkeys, 1e-12);
    const ContrastSpec contrast = ContrastSpec::difference(1, 0);
    CHECK(contrast_variance(dist, r_part, contrast) ==
          doctest::Approx(contrast_variance(dist, q_part, contrast)).epsilon(1e-12));
  }
}

// ---------------------------------------------------------------------------
// symmetric example

TEST_CASE("symmetric example: homoscedastic case collapses to printed forms") {
  SymmetricExampleSpec spec;
  spec.delta = 0.1;
  spec.grid_size = 51;
  spec.g = [](double) { return 0.0; };
  spec.v = [](double) { return 1.0; };
  const auto report = symmetric_example_check(spec);
  REQUIRE(report.rows.size() == 3);
  CHECK(report.v_is_symmetric);
  // V_t(Z) = 2, V_t(W) = E[1/W] with E[eps^2] = 1
  CHECK(report.rows[1].exact_value == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(report.rows[1].printed_form == doctest::Approx(2.0).epsilon(1e-12));
  double einv = 0.0;
  const int m = spec.grid_size;
  for (int i = 0; i < m; ++i) {
    const double w = 0.1 + 0.8 * i / (m - 1);
    einv += 1.0 / w / m;
  }
  CHECK(report.rows[2].exact_value == doctest::Approx(einv).epsilon(1e-12));
  for (const auto& row : report.rows) {
    CHECK(row.abs_error < 1e-12);
    // printed forms are exact when v is symmetric
    CHECK(std::abs(row.printed_form - row.exact_value) < 1e-12);
  }
}

TEST_CASE("symmetric example: v = w^2 matches the general closed forms exactly") {
  SymmetricExampleSpec spec;
  spec.delta = 0.1;
  spec.grid_size = 101;
  spec.g = [](double z) { return z; };
  spec.v = [](double w) { return w * w; };
  const auto report = symmetric_example_check(spec);
  CHECK_FALSE(report.v_is_symmetric);
  for (const auto& row : report.rows) CHECK(row.abs_error < 1e-12);
  // V_t(W) printed form is valid for any v
  CHECK(std::abs(report.rows[2].printed_form - report.rows[2].exact_value) < 1e-12);
  CHECK(report.moment_algebra_error < 1e-10);

  SymmetricExampleSpec small = spec;
  small.delta = 0.01;
  small.grid_size = 201;
  const auto small_report = symmetric_example_check(small);
  CHECK(small_report.reversal);  // V_t(Z) > V_t(W) at small delta
}

TEST_CASE("symmetric example grid validation") {
  SymmetricExampleSpec spec;
  spec.grid_size = 100;  // even
  spec.g = [](double z) { return z; };
  spec.v = [](double) { return 1.0; };
  CHECK_THROWS_AS(symmetric_example_check(spec), AsymmetricGrid);
}

// ---------------------------------------------------------------------------
// gradient check

TEST_CASE("gradient is zero when the propensity factors through the index") {
  SmoothDgp2D dgp;
  dgp.theta = {1.0, 0.5};
  dgp.h = [](double s) { return s * s; };
  dgp.h_prime = [](double s) { return 2.0 * s; };
  dgp.m = [&](double w1, double w2) { return 0.25 + 0.5 / (1.0 + std::exp(-(w1 + 0.5 * w2))); };
  const auto report = si_gradient_check(dgp, 1e-3, 1e-8);
  CHECK(std::abs(report.formula_gradient[0]) < 1e-8);
  CHECK(std::abs(report.formula_gradient[1]) < 1e-8);
  CHECK(std::abs(report.fd_gradient[0]) < 1e-5);
  CHECK(std::abs(report.fd_gradient[1]) < 1e-5);
}

TEST_CASE("gradient is zero for constant h") {
  SmoothDgp2D dgp;
  dgp.theta = {1.0, 0.5};
  dgp.h = [](double) { return 2.0; };
  dgp.h_prime = [](double) { return 0.0; };
  dgp.m = [](double w1, double) { return 0.2 + 0.6 * w1; };
  const auto report = si_gradient_check(dgp, 1e-3, 1e-8);
  CHECK(std::abs(report.formula_gradient[0]) < 1e-10);
  CHECK(std::abs(report.fd_gradient[0]) < 1e-6);
}

TEST_CASE("quadratic h with linear propensity: formula matches finite differences") {
  SmoothDgp2D dgp;
  dgp.theta = {1.0, 0.5};
  dgp.h = [](double s) { return s * s; };
  dgp.h_prime = [](double s) { return 2.0 * s; };
  dgp.m = [](double w1, double) { return 0.2 + 0.6 * w1; };
  const auto report = si_gradient_check(dgp, 1e-3, 1e-8);
  CHECK(report.rel_error < 1e-3);
  CHECK(report.richardson_deviation < 1e-4);
}

TEST_CASE("adjusted mean of the true index direction recovers E[h]") {
  // with theta = theta_P, u(theta_P) = E[E[h(s) m | s] / E[m | s] * q(s)] = E[h]
  SmoothDgp2D dgp;
  dgp.theta = {1.0, 0.5};
  dgp.h = [](double s) { return s * s; };
  dgp.h_prime = [](double s) { return 2.0 * s; };
  dgp.m = [](double w1, double) { return 0.2 + 0.6 * w1; };
  const double u = adjusted_mean_of_index(dgp, dgp.theta, 1e-9);
  // E[(w1 + 0.5 w2)^2] = E[w1^2] + 2 E[w1] E[0.5 w2] + E[0.25 w2^2]
  //                    = 1/3 + 1/4 + 1/12 = 2/3
  const double expected = 2.0 / 3.0;
  CHECK(u == doctest::Approx(expected).epsilon(1e-7));
}

// ---------------------------------------------------------------------------
// generators

TEST_CASE("generated compliant triples satisfy their CI property by construction") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto ods = generate_compliant_distribution(CompliantKind::ods_pair,
                                                     CompliantSizes{}, seed);
    CHECK_NOTHROW(check_deletion_identity(ods.dist, ods.Z1, ods.Z2,
                                          ContrastSpec::difference(1, 0)));
    const auto prec = generate_compliant_distribution(CompliantKind::precision_pair,
                                                      CompliantSizes{}, seed);
    CHECK_NOTHROW(check_supplementation_identity(prec.dist, prec.Z1, prec.Z2,
                                                 ContrastSpec::difference(1, 0)));
  }
}

TEST_CASE("generator produces distinct distributions across seeds") {
  std::set<std::size_t> hashes;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto triple = generate_compliant_distribution(CompliantKind::ods_pair,
                                                        CompliantSizes{}, seed);
    std::size_t h = 1469598103934665603ull;
    for (double v : triple.dist.pmf) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      h = (h ^ bits) * 1099511628211ull;
    }
    hashes.insert(h);
  }
  CHECK(hashes.size() == 100);
}

TEST_CASE("generator rejects infeasible sizes") {
  CompliantSizes sizes;
  sizes.y_levels = 1;
  CHECK_THROWS_AS(
      generate_compliant_distribution(CompliantKind::ods_pair, sizes, 0),
      InfeasibleSizes);
}
