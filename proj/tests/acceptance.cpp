// Acceptance suite: one test case per criterion, each printing a PASS/FAIL
// line with the measured quantities.

#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dope/estimators.hpp"
#include "dope/inference.hpp"
#include "dope/oracle.hpp"
#include "dope/report.hpp"
#include "dope/simulation.hpp"
#include "test_util.hpp"

using namespace dope;
namespace fs = std::filesystem;

namespace {

std::string g_binary;

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
        .count();
  }
};

void report_line(int criterion, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", criterion,
              detail.c_str());
  std::fflush(stdout);
}

// ---------------------------------------------------------------------------
// Discrete DGP with an exactly computable V_t over a frozen 3-cell
// representation (criterion 6).

struct DiscreteDgp {
  oracle::FiniteJointDistribution dist;
  oracle::Partition cells;  // frozen coarsening: atom m -> m / 2
  double mu_exact = 0.0;
  double v_exact = 0.0;

  DiscreteDgp() {
    dist.K = 2;
    dist.M = 6;
    dist.L = 4;
    dist.y_support = {0.0, 1.0, 2.0, 3.0};
    const double mass[6] = {0.10, 0.20, 0.15, 0.25, 0.12, 0.18};
    const double p1[6] = {0.35, 0.55, 0.45, 0.65, 0.30, 0.70};
    dist.pmf.assign(48, 0.0);
    Rng law_rng(424242);
    for (int m = 0; m < 6; ++m) {
      for (int t = 0; t < 2; ++t) {
        double q[4];
        double total = 0.0;
        for (double& x : q) {
          x = law_rng.uniform(0.5, 1.5);
          total += x;
        }
        const double pt = t == 1 ? p1[m] : 1.0 - p1[m];
        for (int l = 0; l < 4; ++l)
          dist.p(t, m, l) = mass[m] * pt * q[l] / total;
      }
    }
    dist.validate();
    cells = oracle::Partition::from_cells({0, 0, 1, 1, 2, 2});
    const auto fn = oracle::exact_functionals(dist, cells, 1);
    mu_exact = fn.mu;
    v_exact = fn.v;
  }

  /// Samples a table whose covariates are the one-hot cell dummies.
  ObservationTable sample(std::size_t n, std::uint64_t seed) const {
    std::vector<double> cdf(dist.pmf.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < dist.pmf.size(); ++i) {
      acc += dist.pmf[i];
      cdf[i] = acc;
    }
    Rng rng(seed);
    ObservationTable table;
    table.labels.intern("0");
    table.labels.intern("1");
    table.column_names = {"c1", "c2"};
    for (std::size_t i = 0; i < n; ++i) {
      const double u = rng.uniform();
      const std::size_t idx =
          std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin();
      const int t = static_cast<int>(idx / (6 * 4));
      const int m = static_cast<int>((idx / 4) % 6);
      const int l = static_cast<int>(idx % 4);
      const int cell = cells.cell_of[static_cast<std::size_t>(m)];
      table.treatments.push_back(t);
      table.outcomes.push_back(dist.y_support[static_cast<std::size_t>(l)]);
      table.covariates.push_back(cell == 1 ? 1.0 : 0.0);
      table.covariates.push_back(cell == 2 ? 1.0 : 0.0);
    }
    return table;
  }
};

/// Saturated DOPE over the frozen representation: logistic and per-arm OLS
/// on the cell dummies, then AIPW with the default clipping.
struct FrozenRepFit {
  double mu_hat = 0.0;
  double v_hat = 0.0;
};

FrozenRepFit frozen_rep_dope(const ObservationTable& table) {
  std::vector<double> t01(table.n());
  for (std::size_t i = 0; i < table.n(); ++i)
    t01[i] = table.treatments[i] == 1 ? 1.0 : 0.0;
  const LogisticModel prop = fit_logistic_irls(table.covariates, 2, t01);

  std::vector<std::unique_ptr<LinearModel>> heads(2);
  for (int t = 0; t < 2; ++t) {
    const auto rows = stratum_rows(table, t);
    const ObservationTable sub = table.subset(rows);
    heads[static_cast<std::size_t>(t)] =
        std::make_unique<LinearModel>(fit_ols(sub.covariates, 2, sub.outcomes));
  }
  const RowPropensity m = [&](int t, std::size_t i) {
    const double p1 = prop.predict(table.row(i));
    return t == 1 ? p1 : 1.0 - p1;
  };
  const RowOutcome g = [&](int t, std::size_t i) {
    return heads[static_cast<std::size_t>(t)]->predict(table.row(i));
  };
  const PointEstimate est = aipw_estimate(m, g, table, 1, ClipRange{});
  FrozenRepFit fit;
  fit.mu_hat = est.value;
  fit.v_hat = influence_variance(est.per_row_terms).v_hat;
  return fit;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("criterion 1: deletion-of-overadjustment identity suite") {
  Timer timer;
  const auto suites = run_oracle_suites("lemma1", 500, 20240801);
  const double elapsed = timer.seconds();
  REQUIRE(suites.size() == 1);
  const bool pass = suites[0].pass && suites[0].max_discrepancy < 1e-10 &&
                    elapsed < 30.0;
  report_line(1, pass,
              "500 triples, max discrepancy " +
                  format_double(suites[0].max_discrepancy) + " (< 1e-10), " +
                  format_double(elapsed) + " s (< 30)");
  CHECK(suites[0].max_discrepancy < 1e-10);
  CHECK(suites[0].pass);
  CHECK(elapsed < 30.0);
}

TEST_CASE("criterion 2: supplementation-with-precision identity suite") {
  Timer timer;
  const auto suites = run_oracle_suites("lemma2", 500, 20240802);
  const double elapsed = timer.seconds();
  REQUIRE(suites.size() == 1);
  const bool pass = suites[0].pass && suites[0].max_discrepancy < 1e-10 &&
                    elapsed < 30.0;
  report_line(2, pass,
              "500 triples, decomposition + components max discrepancy " +
                  format_double(suites[0].max_discrepancy) + " (< 1e-10), " +
                  format_double(elapsed) + " s (< 30)");
  CHECK(suites[0].max_discrepancy < 1e-10);
  CHECK(suites[0].pass);
  CHECK(elapsed < 30.0);
}

TEST_CASE("criterion 3: inverse-propensity projection identity") {
  double worst = 0.0;
  for (std::uint64_t r = 0; r < 500; ++r) {
    const int M = 4 + static_cast<int>(r % 6);
    const auto dist = oracle::random_distribution(2, M, 2 + (r % 3),
                                                  child_seed(20240803, r));
    const auto z1 = oracle::random_coarsening(M, 1 + static_cast<int>(r % 4),
                                              child_seed(20240804, r));
    const auto z2 = oracle::Partition::finest(M);
    for (int t : {0, 1})
      worst = std::max(worst,
                       oracle::check_inverse_propensity_projection(dist, z1, z2, t));
  }
  const bool pass = worst < 1e-12;
  report_line(3, pass,
              "500 refinement pairs, cell-wise max discrepancy " +
                  format_double(worst) + " (< 1e-12)");
  CHECK(worst < 1e-12);
}

TEST_CASE("criterion 4: symmetric-example closed forms and reversal") {
  oracle::SymmetricExampleSpec spec;
  spec.delta = 0.1;
  spec.grid_size = 101;
  spec.g = [](double z) { return z; };
  spec.v = [](double w) { return w * w; };
  const auto report = oracle::symmetric_example_check(spec);

  double worst = 0.0;
  for (const auto& row : report.rows) worst = std::max(worst, row.abs_error);
  // the printed form for V_t(W) holds for any v; for v = w^2 the printed
  // V_t(0), V_t(Z) forms require symmetric v (see the oracle-check notes),
  // so the general-v closed forms carry the 1e-12 check
  const double printed_vw_err =
      std::abs(report.rows[2].printed_form - report.rows[2].exact_value);

  // printed forms verified exactly in the symmetric-v case
  oracle::SymmetricExampleSpec hom = spec;
  hom.g = [](double z) { return z; };
  hom.v = [](double) { return 1.0; };
  const auto hom_report = oracle::symmetric_example_check(hom);
  double printed_hom_err = 0.0;
  for (const auto& row : hom_report.rows)
    printed_hom_err =
        std::max(printed_hom_err, std::abs(row.printed_form - row.exact_value));

  oracle::SymmetricExampleSpec small = spec;
  small.delta = 0.01;
  small.grid_size = 201;
  const auto small_report = oracle::symmetric_example_check(small);

  const bool pass = worst < 1e-12 && printed_vw_err < 1e-12 &&
                    printed_hom_err < 1e-12 &&
                    report.moment_algebra_error < 1e-10 && small_report.reversal;
  report_line(4, pass,
              "closed-form max |error| " + format_double(worst) +
                  " (< 1e-12), printed V_t(W) err " + format_double(printed_vw_err) +
                  ", moment algebra err " +
                  format_double(report.moment_algebra_error) +
                  ", reversal at delta=0.01: " +
                  (small_report.reversal ? "yes" : "no"));
  CHECK(worst < 1e-12);
  CHECK(printed_vw_err < 1e-12);
  CHECK(printed_hom_err < 1e-12);
  CHECK(small_report.reversal);
}

TEST_CASE("criterion 5: single-index gradient formula vs finite differences") {
  Timer timer;
  oracle::SmoothDgp2D dgp;
  dgp.theta = {1.0, 0.5};
  dgp.h = [](double s) { return s * s; };
  dgp.h_prime = [](double s) { return 2.0 * s; };
  dgp.m = [](double w1, double) { return 0.2 + 0.6 * w1; };
  const auto report = oracle::si_gradient_check(dgp, 1e-3, 1e-8);
  const double elapsed = timer.seconds();
  const bool pass = report.rel_error < 1e-3 && elapsed < 60.0;
  report_line(5, pass,
              "relative error " + format_double(report.rel_error) +
                  " (< 1e-3), " + format_double(elapsed) + " s (< 60)");
  CHECK(report.rel_error < 1e-3);
  CHECK(elapsed < 60.0);
}

TEST_CASE("criterion 6: plug-in variance consistency and asymptotic normality") {
  const DiscreteDgp dgp;

  // (a) plug-in V-hat within 5% of the exact value in >= 45 of 50 runs
  int hits = 0;
  for (std::uint64_t r = 0; r < 50; ++r) {
    const ObservationTable table = dgp.sample(20000, child_seed(20240806, r));
    const FrozenRepFit fit = frozen_rep_dope(table);
    if (std::abs(fit.v_hat / dgp.v_exact - 1.0) < 0.05) ++hits;
  }

  // (b) KS distance of the standardized statistic over 500 replicates
  std::vector<double> stats;
  stats.reserve(500);
  for (std::uint64_t r = 0; r < 500; ++r) {
    const ObservationTable table = dgp.sample(2000, child_seed(20240807, r));
    const FrozenRepFit fit = frozen_rep_dope(table);
    stats.push_back(std::sqrt(2000.0) * (fit.mu_hat - dgp.mu_exact) /
                    std::sqrt(fit.v_hat));
  }
  const double ks = testutil::ks_distance(stats, normal_cdf);

  const bool pass = hits >= 45 && ks < 0.08;
  report_line(6, pass,
              "V-hat within 5% in " + std::to_string(hits) +
                  "/50 runs (>= 45), KS distance " + format_double(ks) +
                  " (< 0.08)");
  CHECK(hits >= 45);
  CHECK(ks < 0.08);
}

TEST_CASE("criterion 7: RMSE orderings at desk scale") {
  Timer timer;
  MethodOptions options;  // paper hyperparameters: lr 1e-3, 1200 iterations
  SimConfig cfg;
  cfg.N = 200;
  cfg.seed = 20240717;  // documented acceptance seed
  cfg.d = 12;
  cfg.ground_truth_draws = 1'000'000;

  RmseGrid lin_grid;
  lin_grid.sample_sizes = {900};
  lin_grid.links = {LinkKind::lin};
  lin_grid.modes = {RegressionMode::stratified};
  lin_grid.methods = {"reg-ols", "aipw-ols"};
  const RmseTable lin = run_rmse_experiment(lin_grid, cfg, options, nullptr);

  // cbrt link with the network: stratified regression (Fig 4 ordering for
  // DOPE-IDX) and joint regression (Fig 5 ordering for both DOPE variants)
  RmseGrid cbrt_strat;
  cbrt_strat.sample_sizes = {900};
  cbrt_strat.links = {LinkKind::cbrt};
  cbrt_strat.modes = {RegressionMode::stratified};
  cbrt_strat.methods = {"aipw-nn", "dope-idx"};
  const RmseTable strat = run_rmse_experiment(cbrt_strat, cfg, options, nullptr);

  RmseGrid cbrt_joint = cbrt_strat;
  cbrt_joint.modes = {RegressionMode::joint};
  cbrt_joint.methods = {"aipw-nn", "dope-idx", "dope-bcl"};
  const RmseTable joint = run_rmse_experiment(cbrt_joint, cfg, options, nullptr);

  auto rmse_of = [](const RmseTable& table, const std::string& method) {
    for (const auto& row : table.rows)
      if (row.method == method) return row.sqrt_n_rmse;
    throw Error("method missing from table: " + method);
  };
  const double reg_ols = rmse_of(lin, "reg-ols");
  const double aipw_ols = rmse_of(lin, "aipw-ols");
  const double s_aipw = rmse_of(strat, "aipw-nn");
  const double s_idx = rmse_of(strat, "dope-idx");
  const double j_aipw = rmse_of(joint, "aipw-nn");
  const double j_idx = rmse_of(joint, "dope-idx");
  const double j_bcl = rmse_of(joint, "dope-bcl");
  const double elapsed = timer.seconds();

  const bool pass = reg_ols < aipw_ols && s_idx < s_aipw && j_idx < j_aipw &&
                    j_bcl < j_aipw;
  report_line(7, pass,
              "lin/OLS: reg " + format_double(reg_ols) + " < aipw " +
                  format_double(aipw_ols) + "; cbrt/NN stratified: dope-idx " +
                  format_double(s_idx) + " < aipw " + format_double(s_aipw) +
                  "; joint: dope-idx " + format_double(j_idx) + ", dope-bcl " +
                  format_double(j_bcl) + " < aipw " + format_double(j_aipw) +
                  "; " + format_double(elapsed) + " s");
  CHECK(reg_ols < aipw_ols);
  CHECK(s_idx < s_aipw);
  CHECK(j_idx < j_aipw);
  CHECK(j_bcl < j_aipw);
  CHECK(elapsed < 2700.0);
}

TEST_CASE("criterion 8: bootstrap coverage at desk scale") {
  Timer timer;
  SimConfig cfg;
  cfg.n = 2700;
  cfg.d = 12;
  cfg.link = LinkKind::cbrt;
  cfg.N = 50;
  cfg.seed = 20240718;
  cfg.ground_truth_draws = 10'000'000;
  cfg.beta_mode = BetaMode::fixed;
  cfg.beta_fixed = {1, -2, 3, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  MethodOptions options;
  options.mode = RegressionMode::joint;

  const CoverageTable table = run_coverage_experiment(
      cfg, {"reg-nn", "aipw-nn", "dope-idx"}, options, 200, 0.95, nullptr);
  const double elapsed = timer.seconds();

  auto row_of = [&](const std::string& method, const std::string& kind) {
    for (const auto& row : table.rows)
      if (row.method == method && row.interval_kind == kind) return row;
    throw Error("row missing: " + method + "/" + kind);
  };
  const CoverageRow dope_bs = row_of("dope-idx", "bootstrap_normal");
  const CoverageRow reg_bs = row_of("reg-nn", "bootstrap_normal");
  const CoverageRow aipw_bs = row_of("aipw-nn", "bootstrap_normal");

  const int dope_hits =
      static_cast<int>(std::lround(dope_bs.coverage * dope_bs.n_replicates));
  const int reg_hits =
      static_cast<int>(std::lround(reg_bs.coverage * reg_bs.n_replicates));
  const bool pass = dope_hits >= 42 && reg_hits >= 42 &&
                    aipw_bs.median_length > dope_bs.median_length;
  report_line(8, pass,
              "bootstrap coverage dope-idx " + std::to_string(dope_hits) +
                  "/50, reg-nn " + std::to_string(reg_hits) +
                  "/50 (>= 42); median length aipw " +
                  format_double(aipw_bs.median_length) + " > dope-idx " +
                  format_double(dope_bs.median_length) + "; " +
                  format_double(elapsed) + " s");
  CHECK(dope_hits >= 42);
  CHECK(reg_hits >= 42);
  CHECK(aipw_bs.median_length > dope_bs.median_length);
}

TEST_CASE("criterion 9: numerics (backprop, OLS orthogonality, IRLS score)") {
  // backprop vs central finite differences
  Rng rng(20240809);
  const std::size_t n = 60, d = 6;
  std::vector<double> X(n * d), tcol(n), y(n);
  for (auto& v : X) v = rng.uniform(-1.0, 1.0);
  for (auto& v : tcol) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  for (auto& v : y) v = rng.normal(0.0, 1.0);
  NetProblem problem(X, tcol, y, d, NetLoss::mse);
  std::vector<double> params(problem.dim()), grad(problem.dim());
  for (auto& v : params) v = rng.normal(0.0, 0.4);
  problem.loss_and_grad(params, grad);
  double fd_err = 0.0;
  for (std::size_t j = 0; j < params.size(); ++j) {
    std::vector<double> up = params, dn = params;
    up[j] += 1e-6;
    dn[j] -= 1e-6;
    const double fd = (problem.loss_at(up) - problem.loss_at(dn)) / 2e-6;
    fd_err = std::max(fd_err, std::abs(fd - grad[j]) /
                                  std::max({std::abs(fd), std::abs(grad[j]), 1e-3}));
  }

  // OLS residual orthogonality
  std::vector<double> design(80 * 4), targets(80);
  for (auto& v : design) v = rng.normal(0.0, 1.0);
  for (auto& v : targets) v = rng.normal(0.0, 2.0);
  const LinearModel ols = fit_ols(design, 4, targets);
  double ortho = 0.0;
  std::vector<double> resid(80);
  for (std::size_t i = 0; i < 80; ++i)
    resid[i] = targets[i] - ols.predict({design.data() + i * 4, 4});
  double sum_r = 0.0;
  for (double r : resid) sum_r += r;
  ortho = std::abs(sum_r);
  for (std::size_t j = 0; j < 4; ++j) {
    double dj = 0.0;
    for (std::size_t i = 0; i < 80; ++i) dj += design[i * 4 + j] * resid[i];
    ortho = std::max(ortho, std::abs(dj));
  }

  // IRLS score at convergence
  const std::size_t nl = 500, pl = 3;
  std::vector<double> ldesign(nl * pl), labels(nl);
  for (auto& v : ldesign) v = rng.normal(0.0, 1.0);
  for (std::size_t i = 0; i < nl; ++i) {
    double eta = 0.3;
    for (std::size_t j = 0; j < pl; ++j) eta += 0.6 * ldesign[i * pl + j];
    labels[i] = rng.bernoulli(1.0 / (1.0 + std::exp(-eta))) ? 1.0 : 0.0;
  }
  const LogisticModel logit = fit_logistic_irls(ldesign, pl, labels);
  double score = 0.0;
  {
    std::vector<double> s(pl + 1, 0.0);
    for (std::size_t i = 0; i < nl; ++i) {
      const double mu = logit.predict({ldesign.data() + i * pl, pl});
      s[0] += labels[i] - mu;
      for (std::size_t j = 0; j < pl; ++j)
        s[j + 1] += (labels[i] - mu) * ldesign[i * pl + j];
    }
    for (double v : s) score = std::max(score, std::abs(v));
  }

  const bool pass = fd_err < 1e-5 && ortho < 1e-8 && logit.converged && score < 1e-8;
  report_line(9, pass,
              "backprop FD max rel err " + format_double(fd_err) +
                  " (< 1e-5), OLS orthogonality " + format_double(ortho) +
                  " (< 1e-8), IRLS score " + format_double(score) + " (< 1e-8)");
  CHECK(fd_err < 1e-5);
  CHECK(ortho < 1e-8);
  CHECK(logit.converged);
  CHECK(score < 1e-8);
}

TEST_CASE("criterion 10: paper-rmse preset is byte-identical serial vs 8 threads") {
  REQUIRE_FALSE(g_binary.empty());
  const fs::path dir1 = fs::temp_directory_path() / "acc_det_serial";
  const fs::path dir2 = fs::temp_directory_path() / "acc_det_threads";
  fs::remove_all(dir1);
  fs::remove_all(dir2);
  const std::string args =
      " simulate --preset paper-rmse --n-replicates 2 "
      "--ground-truth-draws 100000 --nn-iters 200 "
      "--methods reg-ols,reg-nn,aipw-ols,aipw-nn,dope-idx,dope-bcl";
  const std::string run1 = g_binary + " --seed 4242 --threads 1 --out-dir " +
                           dir1.string() + args + " > /dev/null 2>&1";
  const std::string run2 = g_binary + " --seed 4242 --threads 8 --out-dir " +
                           dir2.string() + args + " > /dev/null 2>&1";
  REQUIRE(std::system(run1.c_str()) == 0);
  REQUIRE(std::system(run2.c_str()) == 0);

  const std::string csv1 = read_file(dir1 / "rmse.csv");
  const std::string csv2 = read_file(dir2 / "rmse.csv");
  const std::string json1 = read_file(dir1 / "rmse.json");
  const std::string json2 = read_file(dir2 / "rmse.json");

  // the preset grid covers n in {300, 900, 2700} x the four links
  bool grid_ok = true;
  for (const std::string link : {"lin", "square", "cbrt", "sin"})
    for (const std::string n : {"300", "900", "2700"})
      grid_ok = grid_ok &&
                csv1.find("reg-ols," + link + "," + n + ",") != std::string::npos;

  const bool pass = !csv1.empty() && csv1 == csv2 && json1 == json2 && grid_ok;
  report_line(10, pass,
              std::string("serial vs 8-thread tables byte-identical: ") +
                  (csv1 == csv2 && json1 == json2 ? "yes" : "no") + " (" +
                  std::to_string(csv1.size()) + " bytes); preset grid " +
                  (grid_ok ? "complete" : "incomplete"));
  CHECK(!csv1.empty());
  CHECK(csv1 == csv2);
  CHECK(json1 == json2);
  CHECK(grid_ok);
}

int main(int argc, char** argv) {
  doctest::Context context;
  context.applyCommandLine(argc, argv);
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (!arg.empty() && arg[0] != '-') g_binary = arg;
  }
  return context.run();
}
