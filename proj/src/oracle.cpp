#include "dope/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dope/quadrature.hpp"
#include "dope/rng.hpp"
#include "dope/summation.hpp"

namespace dope::oracle {

double FiniteJointDistribution::atom_mass(int m) const {
  KahanSum s;
  for (int t = 0; t < K; ++t)
    for (int l = 0; l < L; ++l) s.add(p(t, m, l));
  return s.value();
}

double FiniteJointDistribution::treat_mass(int t) const {
  KahanSum s;
  for (int m = 0; m < M; ++m)
    for (int l = 0; l < L; ++l) s.add(p(t, m, l));
  return s.value();
}

void FiniteJointDistribution::validate() const {
  if (K < 2 || M < 1 || L < 1) throw Error("degenerate distribution shape");
  if (pmf.size() != static_cast<std::size_t>(K) * M * L ||
      y_support.size() != static_cast<std::size_t>(L))
    throw DimensionMismatch("pmf/support size");
  KahanSum total;
  for (double v : pmf) {
    if (v < 0.0) throw Error("negative pmf entry");
    total.add(v);
  }
  if (std::abs(total.value() - 1.0) > 1e-14)
    throw Error("pmf does not sum to 1");
  for (int m = 0; m < M; ++m) {
    const double mass = atom_mass(m);
    if (mass <= 0.0) continue;  // null atoms are allowed pre-cleanup
    for (int t = 0; t < K; ++t) {
      KahanSum s;
      for (int l = 0; l < L; ++l) s.add(p(t, m, l));
      const double cond = s.value() / mass;
      if (!(cond > 0.0 && cond < 1.0))
        throw PositivityViolation("P(T=" + std::to_string(t) + " | atom " +
                                  std::to_string(m) + ") = " +
                                  std::to_string(cond));
    }
  }
}

FiniteJointDistribution FiniteJointDistribution::without_null_atoms() const {
  std::vector<int> keep;
  for (int m = 0; m < M; ++m)
    if (atom_mass(m) > 0.0) keep.push_back(m);
  if (static_cast<int>(keep.size()) == M) return *this;
  FiniteJointDistribution out;
  out.K = K;
  out.M = static_cast<int>(keep.size());
  out.L = L;
  out.y_support = y_support;
  out.pmf.resize(static_cast<std::size_t>(out.K) * out.M * out.L);
  for (int t = 0; t < K; ++t)
    for (int mi = 0; mi < out.M; ++mi)
      for (int l = 0; l < L; ++l) out.p(t, mi, l) = p(t, keep[mi], l);
  return out;
}

Partition Partition::trivial(int M) {
  Partition p;
  p.cell_of.assign(static_cast<std::size_t>(M), 0);
  p.cells = 1;
  return p;
}

Partition Partition::finest(int M) {
  Partition p;
  p.cell_of.resize(static_cast<std::size_t>(M));
  std::iota(p.cell_of.begin(), p.cell_of.end(), 0);
  p.cells = M;
  return p;
}

Partition Partition::from_cells(std::vector<int> cell_of) {
  Partition p;
  p.cell_of = std::move(cell_of);
  p.cells = p.cell_of.empty()
                ? 0
                : *std::max_element(p.cell_of.begin(), p.cell_of.end()) + 1;
  for (int c : p.cell_of)
    if (c < 0 || c >= p.cells) throw Error("bad cell id");
  return p;
}

bool refines(const Partition& coarse, const Partition& fine, int M) {
  if (coarse.cell_of.size() != static_cast<std::size_t>(M) ||
      fine.cell_of.size() != static_cast<std::size_t>(M))
    throw DimensionMismatch("partition size");
  std::vector<int> image(static_cast<std::size_t>(fine.cells), -1);
  for (int m = 0; m < M; ++m) {
    const int f = fine.cell_of[static_cast<std::size_t>(m)];
    const int c = coarse.cell_of[static_cast<std::size_t>(m)];
    if (image[static_cast<std::size_t>(f)] == -1)
      image[static_cast<std::size_t>(f)] = c;
    else if (image[static_cast<std::size_t>(f)] != c)
      return false;
  }
  return true;
}

namespace {

struct CellStats {
  std::vector<double> mass;     // P(cell)
  std::vector<double> tmass;    // P(T=t, cell)
  std::vector<double> ty_sum;   // E[1(T=t) Y ; cell]
  std::vector<double> tyy_sum;  // E[1(T=t) Y^2 ; cell]
};

CellStats cell_stats(const FiniteJointDistribution& dist, const Partition& part,
                     int t) {
  CellStats cs;
  const std::size_t C = static_cast<std::size_t>(part.cells);
  cs.mass.assign(C, 0.0);
  cs.tmass.assign(C, 0.0);
  cs.ty_sum.assign(C, 0.0);
  cs.tyy_sum.assign(C, 0.0);
  std::vector<KahanSum> mass(C), tmass(C), ty(C), tyy(C);
  for (int m = 0; m < dist.M; ++m) {
    const std::size_t c = static_cast<std::size_t>(part.cell_of[m]);
    for (int tt = 0; tt < dist.K; ++tt)
      for (int l = 0; l < dist.L; ++l) {
        const double pr = dist.p(tt, m, l);
        mass[c].add(pr);
        if (tt == t) {
          tmass[c].add(pr);
          ty[c].add(pr * dist.y_support[l]);
          tyy[c].add(pr * dist.y_support[l] * dist.y_support[l]);
        }
      }
  }
  for (std::size_t c = 0; c < C; ++c) {
    cs.mass[c] = mass[c].value();
    cs.tmass[c] = tmass[c].value();
    cs.ty_sum[c] = ty[c].value();
    cs.tyy_sum[c] = tyy[c].value();
  }
  return cs;
}

}  // namespace

AdjustedFunctionals exact_functionals(const FiniteJointDistribution& dist,
                                      const Partition& part, int t) {
  if (t < 0 || t >= dist.K) throw Error("treatment id out of range");
  const CellStats cs = cell_stats(dist, part, t);
  const std::size_t C = static_cast<std::size_t>(part.cells);

  AdjustedFunctionals fn;
  fn.pi.resize(C);
  fn.b.resize(C);
  KahanSum mu;
  for (std::size_t c = 0; c < C; ++c) {
    if (cs.mass[c] <= 0.0) {
      fn.pi[c] = 0.5;  // unreachable cell; never referenced by psi
      fn.b[c] = 0.0;
      continue;
    }
    fn.pi[c] = cs.tmass[c] / cs.mass[c];
    if (!(fn.pi[c] > 0.0 && fn.pi[c] < 1.0))
      throw PositivityViolation("cell propensity outside (0,1)");
    fn.b[c] = cs.ty_sum[c] / cs.tmass[c];
    mu.add(cs.mass[c] * fn.b[c]);
  }
  fn.mu = mu.value();

  fn.psi.resize(dist.pmf.size());
  KahanSum v;
  for (int tt = 0; tt < dist.K; ++tt)
    for (int m = 0; m < dist.M; ++m) {
      const std::size_t c = static_cast<std::size_t>(part.cell_of[m]);
      for (int l = 0; l < dist.L; ++l) {
        const double y = dist.y_support[l];
        double psi = fn.b[c] - fn.mu;
        if (tt == t) psi += (y - fn.b[c]) / fn.pi[c];
        const std::size_t idx =
            (static_cast<std::size_t>(tt) * dist.M + m) * dist.L + l;
        fn.psi[idx] = psi;
        v.add(dist.pmf[idx] * psi * psi);
      }
    }
  fn.v = v.value();
  return fn;
}

double contrast_variance(const FiniteJointDistribution& dist,
                         const Partition& part, const ContrastSpec& contrast) {
  std::vector<std::pair<double, AdjustedFunctionals>> arms;
  for (const auto& [t, c] : contrast.coefficients) {
    if (c == 0.0) continue;
    arms.emplace_back(c, exact_functionals(dist, part, t));
  }
  if (arms.empty()) throw Error("contrast has no nonzero coefficient");
  KahanSum v;
  for (std::size_t idx = 0; idx < dist.pmf.size(); ++idx) {
    double psi = 0.0;
    for (const auto& [c, fn] : arms) psi += c * fn.psi[idx];
    v.add(dist.pmf[idx] * psi * psi);
  }
  return v.value();
}

namespace {

/// q(y = l | T=t, cell) for every (t, cell, l).
std::vector<double> conditional_outcome_law(const FiniteJointDistribution& dist,
                                            const Partition& part) {
  const std::size_t C = static_cast<std::size_t>(part.cells);
  std::vector<KahanSum> joint(static_cast<std::size_t>(dist.K) * C * dist.L);
  std::vector<KahanSum> tmass(static_cast<std::size_t>(dist.K) * C);
  for (int t = 0; t < dist.K; ++t)
    for (int m = 0; m < dist.M; ++m) {
      const std::size_t c = static_cast<std::size_t>(part.cell_of[m]);
      for (int l = 0; l < dist.L; ++l) {
        const double pr = dist.p(t, m, l);
        joint[(static_cast<std::size_t>(t) * C + c) * dist.L + l].add(pr);
        tmass[static_cast<std::size_t>(t) * C + c].add(pr);
      }
    }
  std::vector<double> law(joint.size(), 0.0);
  for (int t = 0; t < dist.K; ++t)
    for (std::size_t c = 0; c < C; ++c) {
      const double denom = tmass[static_cast<std::size_t>(t) * C + c].value();
      if (denom <= 0.0) continue;
      for (int l = 0; l < dist.L; ++l) {
        const std::size_t i = (static_cast<std::size_t>(t) * C + c) * dist.L + l;
        law[i] = joint[i].value() / denom;
      }
    }
  return law;
}

}  // namespace

DeletionReport check_deletion_identity(const FiniteJointDistribution& dist,
                                       const Partition& Z1, const Partition& Z2,
                                       const ContrastSpec& contrast) {
  if (!refines(Z1, Z2, dist.M)) throw NotARefinement();

  // exact CI check: law(y | t, Z2 cell) must match law(y | t, owning Z1 cell)
  const std::vector<double> law_fine = conditional_outcome_law(dist, Z2);
  const std::vector<double> law_coarse = conditional_outcome_law(dist, Z1);
  std::vector<int> owner(static_cast<std::size_t>(Z2.cells), -1);
  for (int m = 0; m < dist.M; ++m)
    owner[static_cast<std::size_t>(Z2.cell_of[m])] = Z1.cell_of[m];
  const std::size_t Cf = static_cast<std::size_t>(Z2.cells);
  const std::size_t Cc = static_cast<std::size_t>(Z1.cells);
  double ci_gap = 0.0;
  for (int t = 0; t < dist.K; ++t)
    for (std::size_t f = 0; f < Cf; ++f) {
      if (owner[f] < 0) continue;
      for (int l = 0; l < dist.L; ++l) {
        const double qf = law_fine[(static_cast<std::size_t>(t) * Cf + f) * dist.L + l];
        const double qc =
            law_coarse[(static_cast<std::size_t>(t) * Cc +
                        static_cast<std::size_t>(owner[f])) * dist.L + l];
        ci_gap = std::max(ci_gap, std::abs(qf - qc));
      }
    }
  if (ci_gap > 1e-12)
    throw CIViolated("Y-CI gap " + std::to_string(ci_gap));

  DeletionReport report;
  report.lhs_gap = contrast_variance(dist, Z2, contrast) -
                   contrast_variance(dist, Z1, contrast);

  KahanSum rhs;
  double mu_shift = 0.0;
  report.d_t.assign(static_cast<std::size_t>(dist.K), 0.0);
  for (int t = 0; t < dist.K; ++t) {
    const AdjustedFunctionals fn1 = exact_functionals(dist, Z1, t);
    const AdjustedFunctionals fn2 = exact_functionals(dist, Z2, t);
    mu_shift = std::max(mu_shift, std::abs(fn2.mu - fn1.mu));

    const CellStats cs1 = cell_stats(dist, Z1, t);
    const CellStats cs2 = cell_stats(dist, Z2, t);
    KahanSum dt;
    for (std::size_t c1 = 0; c1 < static_cast<std::size_t>(Z1.cells); ++c1) {
      if (cs1.mass[c1] <= 0.0) continue;
      const double var_y =
          cs1.tyy_sum[c1] / cs1.tmass[c1] - fn1.b[c1] * fn1.b[c1];
      // Var(pi_t(Z2)^{-1} | T=t, Z1): fine cells weighted by P(f | T=t, c1)
      KahanSum e1, e2;
      for (std::size_t f = 0; f < Cf; ++f) {
        if (owner[f] != static_cast<int>(c1) || cs2.mass[f] <= 0.0) continue;
        const double w = cs2.tmass[f] / cs1.tmass[c1];
        const double inv = 1.0 / fn2.pi[f];
        e1.add(w * inv);
        e2.add(w * inv * inv);
      }
      const double var_inv = e2.value() - e1.value() * e1.value();
      dt.add(cs1.mass[c1] * fn1.pi[c1] * var_y * var_inv);
    }
    report.d_t[static_cast<std::size_t>(t)] = dt.value();
    auto it = contrast.coefficients.find(t);
    const double c = it == contrast.coefficients.end() ? 0.0 : it->second;
    rhs.add(c * c * dt.value());
  }
  report.mu_shift = mu_shift;
  report.discrepancy = std::abs(report.lhs_gap - rhs.value());
  return report;
}

SupplementationReport check_supplementation_identity(
    const FiniteJointDistribution& dist, const Partition& Z1, const Partition& Z2,
    const ContrastSpec& contrast) {
  if (!refines(Z1, Z2, dist.M)) throw NotARefinement();

  // exact T-CI check: pi_t must agree between fine cells and their owners
  std::vector<AdjustedFunctionals> fn1(static_cast<std::size_t>(dist.K));
  std::vector<AdjustedFunctionals> fn2(static_cast<std::size_t>(dist.K));
  for (int t = 0; t < dist.K; ++t) {
    fn1[static_cast<std::size_t>(t)] = exact_functionals(dist, Z1, t);
    fn2[static_cast<std::size_t>(t)] = exact_functionals(dist, Z2, t);
  }
  double ci_gap = 0.0;
  for (int m = 0; m < dist.M; ++m)
    for (int t = 0; t < dist.K; ++t)
      ci_gap = std::max(
          ci_gap,
          std::abs(fn2[static_cast<std::size_t>(t)]
                       .pi[static_cast<std::size_t>(Z2.cell_of[m])] -
                   fn1[static_cast<std::size_t>(t)]
                       .pi[static_cast<std::size_t>(Z1.cell_of[m])]));
  if (ci_gap > 1e-12) throw CIViolated("T-CI gap " + std::to_string(ci_gap));

  SupplementationReport report;
  report.lhs_gap = contrast_variance(dist, Z1, contrast) -
                   contrast_variance(dist, Z2, contrast);

  // R_t depends on (T, atom) only; enumerate its exact covariance
  const int K = dist.K;
  auto r_value = [&](int t, int tt, int m) {
    const std::size_t f = static_cast<std::size_t>(Z2.cell_of[m]);
    const std::size_t c = static_cast<std::size_t>(Z1.cell_of[m]);
    const double indicator = tt == t ? 1.0 : 0.0;
    return (indicator / fn2[static_cast<std::size_t>(t)].pi[f] - 1.0) *
           (fn2[static_cast<std::size_t>(t)].b[f] -
            fn1[static_cast<std::size_t>(t)].b[c]);
  };
  std::vector<double> atom_treat_mass(static_cast<std::size_t>(K) * dist.M, 0.0);
  for (int tt = 0; tt < K; ++tt)
    for (int m = 0; m < dist.M; ++m) {
      KahanSum s;
      for (int l = 0; l < dist.L; ++l) s.add(dist.p(tt, m, l));
      atom_treat_mass[static_cast<std::size_t>(tt) * dist.M + m] = s.value();
    }
  std::vector<double> mean_r(static_cast<std::size_t>(K), 0.0);
  for (int t = 0; t < K; ++t) {
    KahanSum s;
    for (int tt = 0; tt < K; ++tt)
      for (int m = 0; m < dist.M; ++m)
        s.add(atom_treat_mass[static_cast<std::size_t>(tt) * dist.M + m] *
              r_value(t, tt, m));
    mean_r[static_cast<std::size_t>(t)] = s.value();
  }
  std::vector<double> cov(static_cast<std::size_t>(K) * K, 0.0);
  for (int s = 0; s < K; ++s)
    for (int t = s; t < K; ++t) {
      KahanSum acc;
      for (int tt = 0; tt < K; ++tt)
        for (int m = 0; m < dist.M; ++m)
          acc.add(atom_treat_mass[static_cast<std::size_t>(tt) * dist.M + m] *
                  r_value(s, tt, m) * r_value(t, tt, m));
      const double c = acc.value() - mean_r[static_cast<std::size_t>(s)] *
                                         mean_r[static_cast<std::size_t>(t)];
      cov[static_cast<std::size_t>(s) * K + t] = c;
      cov[static_cast<std::size_t>(t) * K + s] = c;
    }

  KahanSum quad;
  for (const auto& [s, cs] : contrast.coefficients)
    for (const auto& [t, ct] : contrast.coefficients)
      quad.add(cs * ct * cov[static_cast<std::size_t>(s) * K + t]);
  report.quad_form = quad.value();
  report.discrepancy = std::abs(report.lhs_gap - report.quad_form);

  // component formulas: Var(R_t) and Cov(R_s, R_t) via conditional moments
  // of b_t(Z2) given Z1 (weights P(f | c1), unconditional on T)
  const std::size_t Cf = static_cast<std::size_t>(Z2.cells);
  const std::size_t Cc = static_cast<std::size_t>(Z1.cells);
  std::vector<double> fine_mass(Cf, 0.0), coarse_mass(Cc, 0.0);
  std::vector<int> owner(Cf, -1);
  for (int m = 0; m < dist.M; ++m) {
    owner[static_cast<std::size_t>(Z2.cell_of[m])] = Z1.cell_of[m];
  }
  {
    std::vector<KahanSum> fmass(Cf), cmass(Cc);
    for (int m = 0; m < dist.M; ++m) {
      const double mass = dist.atom_mass(m);
      fmass[static_cast<std::size_t>(Z2.cell_of[m])].add(mass);
      cmass[static_cast<std::size_t>(Z1.cell_of[m])].add(mass);
    }
    for (std::size_t f = 0; f < Cf; ++f) fine_mass[f] = fmass[f].value();
    for (std::size_t c = 0; c < Cc; ++c) coarse_mass[c] = cmass[c].value();
  }
  auto cond_cov_b = [&](int s, int t, std::size_t c1) {
    KahanSum es, et, est;
    for (std::size_t f = 0; f < Cf; ++f) {
      if (owner[f] != static_cast<int>(c1) || fine_mass[f] <= 0.0) continue;
      const double w = fine_mass[f] / coarse_mass[c1];
      const double bs = fn2[static_cast<std::size_t>(s)].b[f];
      const double bt = fn2[static_cast<std::size_t>(t)].b[f];
      es.add(w * bs);
      et.add(w * bt);
      est.add(w * bs * bt);
    }
    return est.value() - es.value() * et.value();
  };
  double max_var_err = 0.0, max_cov_err = 0.0;
  for (const auto& [t, ct] : contrast.coefficients) {
    if (ct == 0.0) continue;
    KahanSum formula;
    for (std::size_t c1 = 0; c1 < Cc; ++c1) {
      if (coarse_mass[c1] <= 0.0) continue;
      formula.add(coarse_mass[c1] *
                  (1.0 / fn1[static_cast<std::size_t>(t)].pi[c1] - 1.0) *
                  cond_cov_b(t, t, c1));
    }
    max_var_err = std::max(
        max_var_err,
        std::abs(formula.value() - cov[static_cast<std::size_t>(t) * K + t]));
  }
  for (const auto& [s, cs] : contrast.coefficients)
    for (const auto& [t, ct] : contrast.coefficients) {
      if (s >= t || cs == 0.0 || ct == 0.0) continue;
      KahanSum formula;
      for (std::size_t c1 = 0; c1 < Cc; ++c1) {
        if (coarse_mass[c1] <= 0.0) continue;
        formula.add(coarse_mass[c1] * cond_cov_b(s, t, c1));
      }
      max_cov_err = std::max(
          max_cov_err,
          std::abs(-formula.value() - cov[static_cast<std::size_t>(s) * K + t]));
    }
  report.max_var_component_error = max_var_err;
  report.max_cov_component_error = max_cov_err;

  double mu_shift = 0.0;
  for (int t = 0; t < K; ++t)
    mu_shift = std::max(mu_shift, std::abs(fn2[static_cast<std::size_t>(t)].mu -
                                           fn1[static_cast<std::size_t>(t)].mu));
  report.mu_shift = mu_shift;
  return report;
}

double check_inverse_propensity_projection(const FiniteJointDistribution& dist,
                                           const Partition& Z1, const Partition& Z2,
                                           int t) {
  if (!refines(Z1, Z2, dist.M)) throw NotARefinement();
  const AdjustedFunctionals fn1 = exact_functionals(dist, Z1, t);
  const AdjustedFunctionals fn2 = exact_functionals(dist, Z2, t);
  const CellStats cs1 = cell_stats(dist, Z1, t);
  const CellStats cs2 = cell_stats(dist, Z2, t);
  std::vector<int> owner(static_cast<std::size_t>(Z2.cells), -1);
  for (int m = 0; m < dist.M; ++m)
    owner[static_cast<std::size_t>(Z2.cell_of[m])] = Z1.cell_of[m];

  double max_err = 0.0;
  for (std::size_t c1 = 0; c1 < static_cast<std::size_t>(Z1.cells); ++c1) {
    if (cs1.mass[c1] <= 0.0) continue;
    KahanSum lhs;
    for (std::size_t f = 0; f < static_cast<std::size_t>(Z2.cells); ++f) {
      if (owner[f] != static_cast<int>(c1) || cs2.mass[f] <= 0.0) continue;
      lhs.add(cs2.tmass[f] / cs1.tmass[c1] / fn2.pi[f]);
    }
    max_err = std::max(max_err, std::abs(lhs.value() - 1.0 / fn1.pi[c1]));
  }
  return max_err;
}

Partition partition_by_keys(const std::vector<std::vector<double>>& keys,
                            double tol) {
  const int M = static_cast<int>(keys.size());
  std::vector<int> order(static_cast<std::size_t>(M));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return keys[static_cast<std::size_t>(a)] < keys[static_cast<std::size_t>(b)];
  });
  auto close = [&](const std::vector<double>& a, const std::vector<double>& b) {
    for (std::size_t j = 0; j < a.size(); ++j)
      if (std::abs(a[j] - b[j]) > tol) return false;
    return true;
  };
  std::vector<int> cell_of(static_cast<std::size_t>(M), -1);
  int next_cell = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (r > 0 && close(keys[static_cast<std::size_t>(order[r])],
                       keys[static_cast<std::size_t>(order[r - 1])])) {
      cell_of[static_cast<std::size_t>(order[r])] =
          cell_of[static_cast<std::size_t>(order[r - 1])];
    } else {
      cell_of[static_cast<std::size_t>(order[r])] = next_cell++;
    }
  }
  Partition p;
  p.cell_of = std::move(cell_of);
  p.cells = next_cell;
  return p;
}

PropensityDescriptionReport check_propensity_description(
    const FiniteJointDistribution& dist, const ContrastSpec& contrast,
    const Partition& refinement) {
  std::vector<std::vector<double>> keys(static_cast<std::size_t>(dist.M));
  for (int m = 0; m < dist.M; ++m) {
    const double mass = dist.atom_mass(m);
    for (int t = 0; t < dist.K; ++t) {
      KahanSum s;
      for (int l = 0; l < dist.L; ++l) s.add(dist.p(t, m, l));
      keys[static_cast<std::size_t>(m)].push_back(s.value() / mass);
    }
  }
  PropensityDescriptionReport report;
  report.pi_partition = partition_by_keys(keys, 1e-12);
  if (!refines(report.pi_partition, refinement, dist.M)) throw NotARefinement();

  const Partition finest = Partition::finest(dist.M);
  double mu_err = 0.0;
  for (int t = 0; t < dist.K; ++t) {
    const double mu_pi = exact_functionals(dist, report.pi_partition, t).mu;
    const double mu_w = exact_functionals(dist, finest, t).mu;
    mu_err = std::max(mu_err, std::abs(mu_pi - mu_w));
  }
  report.max_mu_error = mu_err;
  report.v_pi = contrast_variance(dist, report.pi_partition, contrast);
  report.v_fine = contrast_variance(dist, refinement, contrast);
  report.ordering_holds = report.v_pi >= report.v_fine - 1e-12;
  return report;
}

// ---------------------------------------------------------------------------
// Symmetric example

SymmetricExampleReport symmetric_example_check(const SymmetricExampleSpec& spec) {
  if (!(spec.delta > 0.0 && spec.delta < 0.5)) throw Error("delta outside (0, 1/2)");
  const int m = spec.grid_size;
  if (m < 3 || m % 2 == 0) throw AsymmetricGrid();
  std::vector<double> w(static_cast<std::size_t>(m));
  const double h = (1.0 - 2.0 * spec.delta) / static_cast<double>(m - 1);
  for (int i = 0; i < m; ++i) w[static_cast<std::size_t>(i)] = spec.delta + h * i;
  for (int i = 0; i < m; ++i)
    if (std::abs(w[static_cast<std::size_t>(i)] +
                 w[static_cast<std::size_t>(m - 1 - i)] - 1.0) > 1e-12)
      throw AsymmetricGrid();

  // discrete distribution: W uniform on the grid, T|W ~ Bern(W),
  // eps in {-1,+1} equal mass, Y = T + g(|W - 1/2|) + v(W) eps
  const double pw = 1.0 / static_cast<double>(m);
  std::vector<double> z(static_cast<std::size_t>(m)), gv(static_cast<std::size_t>(m)),
      vv(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    z[static_cast<std::size_t>(i)] = std::abs(w[static_cast<std::size_t>(i)] - 0.5);
    gv[static_cast<std::size_t>(i)] = spec.g(z[static_cast<std::size_t>(i)]);
    vv[static_cast<std::size_t>(i)] = spec.v(w[static_cast<std::size_t>(i)]);
  }
  // y support: one level per (t, atom, eps) combination, merged on equality
  std::vector<double> levels;
  auto level_of = [&](double y) {
    for (std::size_t l = 0; l < levels.size(); ++l)
      if (levels[l] == y) return static_cast<int>(l);
    levels.push_back(y);
    return static_cast<int>(levels.size() - 1);
  };
  struct Entry {
    int t, m, l;
    double p;
  };
  std::vector<Entry> entries;
  for (int t = 0; t < 2; ++t)
    for (int i = 0; i < m; ++i) {
      const double pt = t == 1 ? w[static_cast<std::size_t>(i)]
                               : 1.0 - w[static_cast<std::size_t>(i)];
      for (double eps : {-1.0, 1.0}) {
        const double y = t + gv[static_cast<std::size_t>(i)] +
                         vv[static_cast<std::size_t>(i)] * eps;
        entries.push_back({t, i, level_of(y), pw * pt * 0.5});
      }
    }
  FiniteJointDistribution dist;
  dist.K = 2;
  dist.M = m;
  dist.L = static_cast<int>(levels.size());
  dist.y_support = levels;
  dist.pmf.assign(static_cast<std::size_t>(dist.K) * dist.M * dist.L, 0.0);
  for (const Entry& e : entries) dist.p(e.t, e.m, e.l) += e.p;
  dist.validate();

  const Partition trivial = Partition::trivial(m);
  const Partition finest = Partition::finest(m);
  std::vector<std::vector<double>> zkeys(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) zkeys[static_cast<std::size_t>(i)] = {z[static_cast<std::size_t>(i)]};
  const Partition zpart = partition_by_keys(zkeys, 1e-13);

  const int t = spec.t;
  const double exact_v0 = exact_functionals(dist, trivial, t).v;
  const double exact_vz = exact_functionals(dist, zpart, t).v;
  const double exact_vw = exact_functionals(dist, finest, t).v;

  // grid moments for the closed forms (E[eps^2] = 1 by the two-point law)
  KahanSum eg, eg2, ev2, epitv2, einv;
  for (int i = 0; i < m; ++i) {
    const double pit = t == 1 ? w[static_cast<std::size_t>(i)]
                              : 1.0 - w[static_cast<std::size_t>(i)];
    eg.add(pw * gv[static_cast<std::size_t>(i)]);
    eg2.add(pw * gv[static_cast<std::size_t>(i)] * gv[static_cast<std::size_t>(i)]);
    ev2.add(pw * vv[static_cast<std::size_t>(i)] * vv[static_cast<std::size_t>(i)]);
    epitv2.add(pw * pit * vv[static_cast<std::size_t>(i)] * vv[static_cast<std::size_t>(i)]);
    einv.add(pw * vv[static_cast<std::size_t>(i)] * vv[static_cast<std::size_t>(i)] / pit);
  }
  const double var_g = eg2.value() - eg.value() * eg.value();

  SymmetricExampleReport report;
  auto push = [&](const std::string& name, double closed, double printed,
                  double exact) {
    report.rows.push_back(
        {name, closed, printed, exact, std::abs(closed - exact)});
  };
  push("V_t(0)", 2.0 * var_g + 4.0 * epitv2.value(),
       2.0 * var_g + 2.0 * ev2.value(), exact_v0);
  push("V_t(Z)", var_g + 4.0 * epitv2.value(), var_g + 2.0 * ev2.value(),
       exact_vz);
  push("V_t(W)", var_g + einv.value(), var_g + einv.value(), exact_vw);

  double vsym = 0.0;
  for (int i = 0; i < m; ++i) {
    const double a = vv[static_cast<std::size_t>(i)];
    const double b = vv[static_cast<std::size_t>(m - 1 - i)];
    vsym = std::max(vsym, std::abs(a * a - b * b));
  }
  report.v_is_symmetric = vsym < 1e-12;
  report.reversal = exact_vz > exact_vw;

  // displayed uniform-moment algebra for v(w) = w^2, against quadrature
  const double d = spec.delta;
  const double disp_2ew4 =
      2.0 * (std::pow(1.0 - d, 5) - std::pow(d, 5)) / (5.0 * (1.0 - 2.0 * d));
  const double disp_ew3 =
      (std::pow(1.0 - d, 4) - std::pow(d, 4)) / (4.0 * (1.0 - 2.0 * d));
  const double quad_2ew4 =
      2.0 / (1.0 - 2.0 * d) *
      adaptive_simpson([](double x) { return x * x * x * x; }, d, 1.0 - d, 1e-13);
  const double quad_ew3 =
      1.0 / (1.0 - 2.0 * d) *
      adaptive_simpson([](double x) { return x * x * x; }, d, 1.0 - d, 1e-13);
  report.moment_algebra_error = std::max(std::abs(disp_2ew4 - quad_2ew4),
                                         std::abs(disp_ew3 - quad_ew3));
  return report;
}

// ---------------------------------------------------------------------------
// Single-index gradient check (d = 2, W uniform on the unit square)

namespace {

struct FiberIntegrals {
  double np = 0.0;  // density of W'theta at s
  double nm = 0.0;  // E[m(W) ; fiber]
  double nh = 0.0;  // E[h(W'theta_P) m(W) ; fiber]
};

struct FiberEngine {
  const SmoothDgp2D& dgp;
  std::array<double, 2> theta;  // fiber direction (may differ from theta_P)
  double tol;

  FiberIntegrals at(double s) const {
    const double t1 = theta[0], t2 = theta[1];
    const double lo = std::max(0.0, (s - t2) / t1);
    const double hi = std::min(1.0, s / t1);
    FiberIntegrals out;
    if (hi <= lo) return out;
    auto integrand = [&](double w1) {
      const double w2 = (s - t1 * w1) / t2;
      const double mval = dgp.m(w1, w2);
      const double hval =
          dgp.h(dgp.theta[0] * w1 + dgp.theta[1] * w2);
      return std::vector<double>{1.0, mval, hval * mval};
    };
    const std::vector<double> vals =
        adaptive_simpson_vec(integrand, lo, hi, 3, tol);
    out.np = vals[0] / t2;
    out.nm = vals[1] / t2;
    out.nh = vals[2] / t2;
    return out;
  }

  /// P(T=t | W'theta = s) with corner limits.
  double f(double s) const {
    const FiberIntegrals fi = at(s);
    if (fi.np <= 0.0) {
      const double total = theta[0] + theta[1];
      const double frac = std::clamp(s / total, 0.0, 1.0);
      return dgp.m(frac, frac);  // degenerate fiber: corner limit
    }
    return fi.nm / fi.np;
  }
};

std::vector<double> fiber_breakpoints(std::array<double, 2> theta) {
  return {0.0, std::min(theta[0], theta[1]), std::max(theta[0], theta[1]),
          theta[0] + theta[1]};
}

}  // namespace

double adjusted_mean_of_index(const SmoothDgp2D& dgp, std::array<double, 2> theta,
                              double quad_tol) {
  if (!(theta[0] > 0.0 && theta[1] > 0.0))
    throw Error("gradient DGP requires positive theta components");
  FiberEngine fibers{dgp, theta, quad_tol * 1e-2};
  auto integrand = [&](double s) {
    const FiberIntegrals fi = fibers.at(s);
    if (fi.np <= 0.0 || fi.nm <= 0.0) return 0.0;
    return fi.nh / fi.nm * fi.np;  // b_t(s) q(s)
  };
  return adaptive_simpson_pieces(integrand, fiber_breakpoints(theta), quad_tol);
}

GradientCheckReport si_gradient_check(const SmoothDgp2D& dgp, double fd_step,
                                      double quad_tol) {
  GradientCheckReport report;

  auto central = [&](double step) {
    std::array<double, 2> grad{};
    for (int j = 0; j < 2; ++j) {
      std::array<double, 2> up = dgp.theta, down = dgp.theta;
      up[static_cast<std::size_t>(j)] += step;
      down[static_cast<std::size_t>(j)] -= step;
      grad[static_cast<std::size_t>(j)] =
          (adjusted_mean_of_index(dgp, up, quad_tol) -
           adjusted_mean_of_index(dgp, down, quad_tol)) /
          (2.0 * step);
    }
    return grad;
  };
  report.fd_gradient = central(fd_step);
  const std::array<double, 2> fd_half = central(fd_step * 0.5);
  report.richardson_deviation =
      std::max(std::abs(report.fd_gradient[0] - fd_half[0]),
               std::abs(report.fd_gradient[1] - fd_half[1]));

  // formula: E[h'(W'theta_P) (1 - m(W)/f(W'theta_P)) W]
  FiberEngine fibers{dgp, dgp.theta, quad_tol * 1e-2};
  const std::vector<double> breaks = fiber_breakpoints(dgp.theta);
  auto inner = [&](double w1) {
    // kinks of f along w2 for this w1
    std::vector<double> w2_breaks{0.0, 1.0};
    for (double sb : breaks) {
      const double w2 = (sb - dgp.theta[0] * w1) / dgp.theta[1];
      if (w2 > 0.0 && w2 < 1.0) w2_breaks.push_back(w2);
    }
    std::sort(w2_breaks.begin(), w2_breaks.end());
    std::vector<double> acc(2, 0.0);
    for (std::size_t b = 0; b + 1 < w2_breaks.size(); ++b) {
      auto integrand = [&](double w2) {
        const double s = dgp.theta[0] * w1 + dgp.theta[1] * w2;
        const double ratio = dgp.m(w1, w2) / fibers.f(s);
        const double common = dgp.h_prime(s) * (1.0 - ratio);
        return std::vector<double>{common * w1, common * w2};
      };
      const std::vector<double> piece = adaptive_simpson_vec(
          integrand, w2_breaks[b], w2_breaks[b + 1], 2, quad_tol * 1e-1);
      acc[0] += piece[0];
      acc[1] += piece[1];
    }
    return acc;
  };
  const std::vector<double> grad =
      adaptive_simpson_vec([&](double w1) { return inner(w1); }, 0.0, 1.0, 2,
                           quad_tol);
  report.formula_gradient = {grad[0], grad[1]};

  double num = 0.0, den = 0.0;
  for (int j = 0; j < 2; ++j) {
    num = std::max(num, std::abs(report.fd_gradient[static_cast<std::size_t>(j)] -
                                 report.formula_gradient[static_cast<std::size_t>(j)]));
    den = std::max(den, std::abs(report.formula_gradient[static_cast<std::size_t>(j)]));
  }
  report.rel_error = den > 0.0 ? num / den : num;
  return report;
}

// ---------------------------------------------------------------------------
// Generators

namespace {

std::vector<double> bounded_simplex(Rng& rng, int k) {
  // entries in [1/(2k-1), 2/(k+... )]; all conditionals stay inside [0.05, 0.95]
  std::vector<double> u(static_cast<std::size_t>(k));
  double total = 0.0;
  for (double& x : u) {
    x = rng.uniform(1.0, 2.0);
    total += x;
  }
  for (double& x : u) x /= total;
  return u;
}

}  // namespace

CompliantTriple generate_compliant_distribution(CompliantKind kind,
                                                const CompliantSizes& sizes,
                                                std::uint64_t seed) {
  if (sizes.z1_cells < 1 || sizes.z2_per_z1 < 1 || sizes.atoms_per_z2 < 1 ||
      sizes.treatments < 2 || sizes.y_levels < 2)
    throw InfeasibleSizes("all sizes must be positive (K >= 2, L >= 2)");
  if (sizes.treatments > 9 || sizes.y_levels > 9)
    throw InfeasibleSizes("bounded-simplex construction needs K, L <= 9");

  const int M = sizes.z1_cells * sizes.z2_per_z1 * sizes.atoms_per_z2;
  const int K = sizes.treatments;
  const int L = sizes.y_levels;
  Rng rng(child_seed(seed, 0x67656e));

  CompliantTriple out;
  out.Z1.cell_of.resize(static_cast<std::size_t>(M));
  out.Z2.cell_of.resize(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    out.Z2.cell_of[static_cast<std::size_t>(m)] = m / sizes.atoms_per_z2;
    out.Z1.cell_of[static_cast<std::size_t>(m)] =
        m / (sizes.atoms_per_z2 * sizes.z2_per_z1);
  }
  out.Z1.cells = sizes.z1_cells;
  out.Z2.cells = sizes.z1_cells * sizes.z2_per_z1;

  std::vector<double> atom_mass(static_cast<std::size_t>(M));
  double total = 0.0;
  for (double& x : atom_mass) {
    x = rng.uniform(0.5, 1.5);
    total += x;
  }
  for (double& x : atom_mass) x /= total;

  // treatment law: per Z2 cell (ods) or per Z1 cell (precision)
  const int treat_groups =
      kind == CompliantKind::ods_pair ? out.Z2.cells : out.Z1.cells;
  std::vector<std::vector<double>> treat_law(static_cast<std::size_t>(treat_groups));
  for (auto& law : treat_law) law = bounded_simplex(rng, K);

  // outcome law: per (t, Z1 cell) (ods) or per (t, atom) (precision)
  const int outcome_groups =
      kind == CompliantKind::ods_pair ? sizes.z1_cells : M;
  std::vector<std::vector<std::vector<double>>> outcome_law(
      static_cast<std::size_t>(K));
  for (int t = 0; t < K; ++t) {
    outcome_law[static_cast<std::size_t>(t)].resize(
        static_cast<std::size_t>(outcome_groups));
    for (auto& law : outcome_law[static_cast<std::size_t>(t)])
      law = bounded_simplex(rng, L);
  }

  FiniteJointDistribution& dist = out.dist;
  dist.K = K;
  dist.M = M;
  dist.L = L;
  dist.y_support.resize(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l)
    dist.y_support[static_cast<std::size_t>(l)] = l + rng.uniform(-0.3, 0.3);
  dist.pmf.assign(static_cast<std::size_t>(K) * M * L, 0.0);
  for (int m = 0; m < M; ++m) {
    const int tg = kind == CompliantKind::ods_pair
                       ? out.Z2.cell_of[static_cast<std::size_t>(m)]
                       : out.Z1.cell_of[static_cast<std::size_t>(m)];
    for (int t = 0; t < K; ++t) {
      const int og = kind == CompliantKind::ods_pair
                         ? out.Z1.cell_of[static_cast<std::size_t>(m)]
                         : m;
      for (int l = 0; l < L; ++l)
        dist.p(t, m, l) =
            atom_mass[static_cast<std::size_t>(m)] *
            treat_law[static_cast<std::size_t>(tg)][static_cast<std::size_t>(t)] *
            outcome_law[static_cast<std::size_t>(t)]
                       [static_cast<std::size_t>(og)][static_cast<std::size_t>(l)];
    }
  }
  dist.validate();
  return out;
}

FiniteJointDistribution random_distribution(int K, int M, int L,
                                            std::uint64_t seed) {
  Rng rng(child_seed(seed, 0x726e64));
  FiniteJointDistribution dist;
  dist.K = K;
  dist.M = M;
  dist.L = L;
  dist.y_support.resize(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l)
    dist.y_support[static_cast<std::size_t>(l)] = l + rng.uniform(-0.3, 0.3);
  dist.pmf.resize(static_cast<std::size_t>(K) * M * L);
  double total = 0.0;
  for (double& x : dist.pmf) {
    x = rng.uniform(0.5, 1.5);
    total += x;
  }
  for (double& x : dist.pmf) x /= total;
  dist.validate();
  return dist;
}

Partition random_coarsening(int M, int cells, std::uint64_t seed) {
  if (cells < 1 || cells > M) throw InfeasibleSizes("cells must be in [1, M]");
  Rng rng(child_seed(seed, 0x636f6172));
  std::vector<int> order(static_cast<std::size_t>(M));
  std::iota(order.begin(), order.end(), 0);
  for (int i = M; i > 1; --i) {
    const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i)));
    std::swap(order[static_cast<std::size_t>(i - 1)], order[static_cast<std::size_t>(j)]);
  }
  Partition p;
  p.cells = cells;
  p.cell_of.assign(static_cast<std::size_t>(M), 0);
  for (int r = 0; r < M; ++r) {
    const int cell = r < cells ? r : static_cast<int>(rng.below(static_cast<std::uint64_t>(cells)));
    p.cell_of[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = cell;
  }
  return p;
}

}  // namespace dope::oracle
