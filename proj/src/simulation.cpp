#include "dope/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dope/summation.hpp"

namespace dope {

double link_value(LinkKind link, double t, double z) {
  switch (link) {
    case LinkKind::lin:
      return t + 3.0 * z;
    case LinkKind::square:
      return t < 0.5 ? z : z * z;  // z^(1+t) for binary t
    case LinkKind::cbrt:
      return (2.0 + t) * std::cbrt(z);  // signed cube root
    case LinkKind::sin_link:
      return (3.0 + t) * std::sin(3.14159265358979323846 * z);
  }
  throw Error("unknown link");
}

std::string link_name(LinkKind link) {
  switch (link) {
    case LinkKind::lin: return "lin";
    case LinkKind::square: return "square";
    case LinkKind::cbrt: return "cbrt";
    case LinkKind::sin_link: return "sin";
  }
  throw Error("unknown link");
}

LinkKind link_from_name(const std::string& name) {
  if (name == "lin") return LinkKind::lin;
  if (name == "square") return LinkKind::square;
  if (name == "cbrt") return LinkKind::cbrt;
  if (name == "sin") return LinkKind::sin_link;
  throw Error("unknown link name: " + name);
}

void SimConfig::validate() const {
  if (n < 30) throw Error("SimConfig: n must be >= 30");
  if (d < 2) throw Error("SimConfig: d must be >= 2");
  if (N < 1) throw Error("SimConfig: N must be >= 1");
  if (ground_truth_draws < 100'000)
    throw Error("SimConfig: ground_truth_draws must be >= 1e5");
  if (beta_mode == BetaMode::fixed &&
      beta_fixed.size() != static_cast<std::size_t>(d))
    throw DimensionMismatch("SimConfig: fixed beta has wrong dimension");
}

std::vector<double> sample_beta(int d, BetaMode mode,
                                const std::vector<double>& fixed, Rng& rng) {
  if (d < 2) throw Error("sample_beta: d must be >= 2");
  if (mode == BetaMode::fixed) {
    if (fixed.size() != static_cast<std::size_t>(d))
      throw DimensionMismatch("sample_beta: fixed beta has wrong dimension");
    return fixed;
  }
  std::vector<double> beta(static_cast<std::size_t>(d));
  beta[0] = 1.0;
  const double sd = std::sqrt(1.0 / static_cast<double>(d - 1));
  for (int j = 1; j < d; ++j) beta[static_cast<std::size_t>(j)] = rng.normal(0.0, sd);
  return beta;
}

ObservationTable sample_dataset(std::size_t n, int d, LinkKind link,
                                const std::vector<double>& beta, Rng& rng) {
  if (beta.size() != static_cast<std::size_t>(d))
    throw DimensionMismatch("sample_dataset: beta dimension");
  ObservationTable table;
  table.labels.intern("0");
  table.labels.intern("1");
  table.column_names.resize(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j)
    table.column_names[static_cast<std::size_t>(j)] = "w" + std::to_string(j + 1);
  table.covariates.resize(n * static_cast<std::size_t>(d));
  table.treatments.resize(n);
  table.outcomes.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double* w = table.covariates.data() + i * static_cast<std::size_t>(d);
    for (int j = 0; j < d; ++j) w[j] = rng.uniform();
    const double prop = 0.01 + 0.98 * (w[0] > 0.5 ? 1.0 : 0.0);
    const int t = rng.bernoulli(prop) ? 1 : 0;
    double index = 0.0;
    for (int j = 0; j < d; ++j) index += w[j] * beta[static_cast<std::size_t>(j)];
    table.treatments[i] = t;
    table.outcomes[i] =
        rng.normal(link_value(link, static_cast<double>(t), index), 1.0);
  }
  return table;
}

GroundTruth ground_truth_mu1(LinkKind link, const std::vector<double>& beta,
                             long draws, Rng& rng) {
  if (draws < 1) throw Error("ground_truth_mu1: draws must be positive");
  const int d = static_cast<int>(beta.size());
  KahanSum sum, sumsq;
  std::vector<double> w(static_cast<std::size_t>(d));
  for (long r = 0; r < draws; ++r) {
    double index = 0.0;
    for (int j = 0; j < d; ++j) index += rng.uniform() * beta[static_cast<std::size_t>(j)];
    const double h = link_value(link, 1.0, index);
    sum.add(h);
    sumsq.add(h * h);
  }
  GroundTruth gt;
  const double nd = static_cast<double>(draws);
  gt.value = sum.value() / nd;
  const double var = std::max(0.0, sumsq.value() / nd - gt.value * gt.value);
  gt.mc_se = std::sqrt(var / nd);
  return gt;
}

// ---------------------------------------------------------------------------
// Method suite

const std::vector<std::string>& all_methods() {
  static const std::vector<std::string> methods{
      "naive",   "reg-ols", "reg-nn",   "ipw",          "aipw-ols",
      "aipw-nn", "dope-idx", "dope-bcl", "crossfit-dope"};
  return methods;
}

bool is_known_method(const std::string& method) {
  const auto& all = all_methods();
  return std::find(all.begin(), all.end(), method) != all.end();
}

namespace {

bool wants(const std::vector<std::string>& methods, const std::string& name) {
  return std::find(methods.begin(), methods.end(), name) != methods.end();
}

std::vector<double> arm_difference(const std::vector<double>& a,
                                   const std::vector<double>& b) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

MethodOutput from_terms(std::vector<double> terms) {
  MethodOutput out;
  out.estimate = compensated_mean(terms);
  const VarianceEstimate v = influence_variance(terms);
  out.v_hat = v.v_hat;
  out.n_eff = v.n_effective;
  out.per_row_terms = std::move(terms);
  return out;
}

}  // namespace

std::map<std::string, MethodOutput> evaluate_methods(
    const ObservationTable& table, const std::vector<std::string>& methods,
    const MethodOptions& options, std::uint64_t seed, int target_arm,
    std::optional<int> contrast_arm) {
  for (const auto& m : methods)
    if (!is_known_method(m)) throw Error("unknown method: " + m);
  const std::size_t n = table.n();
  const bool contrast = contrast_arm.has_value();
  const int t1 = target_arm;
  const int t0 = contrast ? *contrast_arm : -1;

  std::map<std::string, MethodOutput> results;

  const bool needs_nn = wants(methods, "reg-nn") || wants(methods, "aipw-nn") ||
                        wants(methods, "dope-idx") || wants(methods, "dope-bcl");
  const bool needs_ols = wants(methods, "reg-ols") || wants(methods, "aipw-ols");
  const bool needs_wprop =
      wants(methods, "ipw") || wants(methods, "aipw-ols") || wants(methods, "aipw-nn");

  std::unique_ptr<SingleIndexOutcome> nn_model;
  if (needs_nn) {
    TrainConfig cfg = options.train;
    cfg.mode = options.mode;
    cfg.seed = child_seed(seed, 0x6e6e666974);
    nn_model = fit_single_index_net(table, cfg);
  }
  std::unique_ptr<LinearOutcome> ols_model;
  if (needs_ols) ols_model = fit_linear_outcome(table, options.mode);

  ArmPropensity wprop;
  if (needs_wprop)
    wprop = fit_arm_propensity(table.covariates, table.k(), table.treatments,
                               table.labels.count());
  const RowPropensity wprop_fn = [&](int t, std::size_t i) {
    return wprop.value(t, table.row(i));
  };

  auto regression_terms = [&](const OutcomeModel& model) {
    std::vector<double> terms(n);
    for (std::size_t i = 0; i < n; ++i) terms[i] = model.predict(t1, table.row(i));
    if (contrast)
      for (std::size_t i = 0; i < n; ++i) terms[i] -= model.predict(t0, table.row(i));
    return terms;
  };
  auto aipw_terms = [&](const OutcomeModel& model) {
    const RowOutcome g = [&](int t, std::size_t i) {
      return model.predict(t, table.row(i));
    };
    PointEstimate e1 = aipw_estimate(wprop_fn, g, table, t1, options.clip);
    if (!contrast) return std::move(e1.per_row_terms);
    PointEstimate e0 = aipw_estimate(wprop_fn, g, table, t0, options.clip);
    return arm_difference(e1.per_row_terms, e0.per_row_terms);
  };

  for (const auto& name : methods) {
    if (name == "naive") {
      MethodOutput out;
      if (contrast) {
        out.estimate = naive_contrast(table, t1, t0);
      } else {
        const auto rows = stratum_rows(table, t1);
        if (rows.empty()) throw EmptyStratum(t1);
        KahanSum s;
        for (std::size_t i : rows) s.add(table.outcomes[i]);
        out.estimate = s.value() / static_cast<double>(rows.size());
      }
      results.emplace(name, std::move(out));
    } else if (name == "reg-ols") {
      results.emplace(name, from_terms(regression_terms(*ols_model)));
    } else if (name == "reg-nn") {
      results.emplace(name, from_terms(regression_terms(*nn_model)));
    } else if (name == "ipw") {
      PointEstimate e1 = ipw_estimate(wprop_fn, table, t1, options.clip);
      std::vector<double> terms = std::move(e1.per_row_terms);
      if (contrast) {
        PointEstimate e0 = ipw_estimate(wprop_fn, table, t0, options.clip);
        terms = arm_difference(terms, e0.per_row_terms);
      }
      results.emplace(name, from_terms(std::move(terms)));
    } else if (name == "aipw-ols") {
      results.emplace(name, from_terms(aipw_terms(*ols_model)));
    } else if (name == "aipw-nn") {
      results.emplace(name, from_terms(aipw_terms(*nn_model)));
    } else if (name == "dope-idx" || name == "dope-bcl") {
      DopeOptions dopts;
      dopts.family = OutcomeFamily::single_index_net;
      dopts.train = options.train;
      dopts.train.mode = options.mode;
      dopts.clip = options.clip;
      const IndexSets idx = IndexSets::full_sample(n);
      // full-sample fused pipeline on the shared network fit
      DopeResult res = name == "dope-idx"
                           ? dope_with_model(table, idx, *nn_model, dopts)
                           : dope_bcl_with_model(table, idx, *nn_model, dopts);
      std::vector<double> terms = std::move(res.by_arm.at(t1).per_row_terms);
      if (contrast)
        terms = arm_difference(terms, res.by_arm.at(t0).per_row_terms);
      results.emplace(name, from_terms(std::move(terms)));
    } else if (name == "crossfit-dope") {
      DopeOptions dopts;
      dopts.family = OutcomeFamily::single_index_net;
      dopts.train = options.train;
      dopts.train.mode = options.mode;
      dopts.train.seed = child_seed(seed, 0x78666e6e);
      dopts.clip = options.clip;
      const CrossfitResult res =
          crossfit_dope(table, options.crossfit_K, options.crossfit_m, dopts,
                        child_seed(seed, 0x63666f6c64), options.crossfit_variant);
      MethodOutput out;
      out.estimate = contrast ? res.estimate.at(t1) - res.estimate.at(t0)
                              : res.estimate.at(t1);
      // mean of per-fold variance estimates; SE uses the full hold-out size n
      std::vector<double> fold_vs;
      const auto folds = res.folds.folds();
      for (int k = 0; k < res.K; ++k) {
        if (contrast) {
          std::vector<double> terms;
          terms.reserve(folds[static_cast<std::size_t>(k)].size());
          for (std::size_t i : folds[static_cast<std::size_t>(k)])
            terms.push_back(res.per_row_terms.at(t1)[i] -
                            res.per_row_terms.at(t0)[i]);
          fold_vs.push_back(influence_variance(terms).v_hat);
        } else {
          fold_vs.push_back(res.fold_vhats.at(t1)[static_cast<std::size_t>(k)]);
        }
      }
      out.v_hat = compensated_mean(fold_vs);
      out.n_eff = n;
      results.emplace(name, std::move(out));
    }
  }
  return results;
}

// ---------------------------------------------------------------------------
// RMSE experiment

RmseCell aggregate_rmse_cell(const std::string& method, LinkKind link,
                             std::size_t n, RegressionMode mode,
                             std::span<const double> estimates,
                             std::span<const double> truths,
                             std::span<const char> failed) {
  RmseCell row;
  row.method = method;
  row.link = link;
  row.n = n;
  row.mode = mode;
  std::vector<double> sqerr;
  sqerr.reserve(estimates.size());
  int failures = 0;
  for (std::size_t r = 0; r < estimates.size(); ++r) {
    if (failed[r]) {
      ++failures;
      continue;
    }
    const double e = estimates[r] - truths[r];
    sqerr.push_back(e * e);
  }
  row.n_replicates = static_cast<int>(sqerr.size());
  row.n_failures = failures;
  if (sqerr.size() >= 2) {
    const double mse = compensated_mean(sqerr);
    const double rmse = std::sqrt(mse);
    row.sqrt_n_rmse = std::sqrt(static_cast<double>(n)) * rmse;
    KahanSum ss;
    for (double s : sqerr) ss.add((s - mse) * (s - mse));
    const double count = static_cast<double>(sqerr.size());
    const double sd_mse = std::sqrt(ss.value() / (count * (count - 1.0)));
    // delta method: hw(sqrt(n) rmse) = sqrt(n) * hw(mse) / (2 rmse)
    row.clt_halfwidth = rmse > 0.0
                            ? std::sqrt(static_cast<double>(n)) *
                                  1.959963984540054 * sd_mse / (2.0 * rmse)
                            : 0.0;
  }
  return row;
}

RmseTable run_rmse_experiment(const RmseGrid& grid, const SimConfig& cfg,
                              const MethodOptions& options, ThreadPool* pool) {
  cfg.validate();
  if (grid.sample_sizes.empty() || grid.links.empty() || grid.modes.empty() ||
      grid.methods.empty())
    throw Error("empty experiment grid");

  RmseTable table;
  std::uint64_t cell_id = 0;
  for (LinkKind link : grid.links)
    for (std::size_t n : grid.sample_sizes)
      for (RegressionMode mode : grid.modes) {
        const std::uint64_t cell = cell_id++;
        const int N = cfg.N;
        // slot-per-replicate storage: deterministic under any scheduling
        std::vector<std::map<std::string, double>> estimates(
            static_cast<std::size_t>(N));
        std::vector<double> truths(static_cast<std::size_t>(N));
        std::vector<char> failed(static_cast<std::size_t>(N), 0);

        auto run_replicate = [&](std::size_t r) {
          Rng data_rng(child_seed(cfg.seed, cell, r, 1));
          const std::vector<double> beta =
              sample_beta(cfg.d, cfg.beta_mode, cfg.beta_fixed, data_rng);
          const ObservationTable data =
              sample_dataset(n, cfg.d, link, beta, data_rng);
          Rng gt_rng(child_seed(cfg.seed, cell, r, 2));
          const GroundTruth gt =
              ground_truth_mu1(link, beta, cfg.ground_truth_draws, gt_rng);
          truths[r] = gt.value;
          MethodOptions mopts = options;
          mopts.mode = mode;
          try {
            const auto evals = evaluate_methods(
                data, grid.methods, mopts, child_seed(cfg.seed, cell, r, 3), 1);
            for (const auto& [name, out] : evals) estimates[r][name] = out.estimate;
          } catch (const Error&) {
            failed[r] = 1;
          }
        };
        if (pool != nullptr) {
          pool->parallel_for(static_cast<std::size_t>(N), run_replicate);
        } else {
          for (std::size_t r = 0; r < static_cast<std::size_t>(N); ++r)
            run_replicate(r);
        }

        for (const std::string& method : grid.methods) {
          std::vector<double> per_method(static_cast<std::size_t>(N), 0.0);
          for (std::size_t r = 0; r < static_cast<std::size_t>(N); ++r)
            if (!failed[r]) per_method[r] = estimates[r].at(method);
          table.rows.push_back(
              aggregate_rmse_cell(method, link, n, mode, per_method, truths, failed));
        }
      }
  return table;
}

// ---------------------------------------------------------------------------
// Coverage experiment

CoverageTable run_coverage_experiment(const SimConfig& cfg,
                                      const std::vector<std::string>& methods,
                                      const MethodOptions& options,
                                      std::size_t B, double level,
                                      ThreadPool* pool) {
  cfg.validate();
  if (cfg.beta_mode != BetaMode::fixed)
    throw Error("coverage experiment requires fixed beta");
  if (!(level > 0.0 && level < 1.0)) throw Error("level must be in (0,1)");

  Rng truth_rng(child_seed(cfg.seed, 0x747275746821));
  const GroundTruth gt = ground_truth_mu1(cfg.link, cfg.beta_fixed,
                                          cfg.ground_truth_draws, truth_rng);

  const int N = cfg.N;
  struct RepOutcome {
    std::map<std::string, Interval> asymptotic, bootstrap;
    std::map<std::string, double> estimate;
    bool ok = false;
  };
  std::vector<RepOutcome> reps(static_cast<std::size_t>(N));

  auto run_replicate = [&](std::size_t r) {
    Rng data_rng(child_seed(cfg.seed, 0x636f76, r));
    const ObservationTable data =
        sample_dataset(cfg.n, cfg.d, cfg.link, cfg.beta_fixed, data_rng);
    MethodOptions mopts = options;
    try {
      const auto evals = evaluate_methods(data, methods, mopts,
                                          child_seed(cfg.seed, 0x666974, r), 1);
      RepOutcome& out = reps[r];
      for (const auto& name : methods) {
        const MethodOutput& mo = evals.at(name);
        out.estimate[name] = mo.estimate;
        if (mo.v_hat && mo.n_eff) {
          VarianceEstimate v{*mo.v_hat, *mo.n_eff};
          out.asymptotic.emplace(name, wald_interval(mo.estimate, v, level));
        }
      }
      // bootstrap with full pipeline refits; resamples shared across methods
      auto closure = [&](const ObservationTable& resample, std::uint64_t s) {
        const auto boot_evals = evaluate_methods(resample, methods, mopts, s, 1);
        std::vector<double> values;
        values.reserve(methods.size());
        for (const auto& name : methods)
          values.push_back(boot_evals.at(name).estimate);
        return values;
      };
      const std::vector<BootstrapResult> boot = bootstrap_multi(
          data, closure, methods.size(), B, child_seed(cfg.seed, 0x6273, r),
          nullptr);
      for (std::size_t mi = 0; mi < methods.size(); ++mi)
        out.bootstrap.emplace(
            methods[mi],
            bootstrap_interval(out.estimate.at(methods[mi]), boot[mi], level,
                               IntervalKind::bootstrap_normal));
      out.ok = true;
    } catch (const Error&) {
      reps[r].ok = false;
    }
  };
  if (pool != nullptr) {
    pool->parallel_for(static_cast<std::size_t>(N), run_replicate);
  } else {
    for (std::size_t r = 0; r < static_cast<std::size_t>(N); ++r) run_replicate(r);
  }

  CoverageTable table;
  table.truth = gt.value;
  table.truth_mc_se = gt.mc_se;
  for (const auto& name : methods) {
    for (const bool use_bootstrap : {false, true}) {
      CoverageRow row;
      row.method = name;
      row.interval_kind = use_bootstrap ? "bootstrap_normal" : "asymptotic";
      std::vector<double> lengths;
      KahanSum est_sum;
      int hits = 0, count = 0;
      for (const RepOutcome& rep : reps) {
        if (!rep.ok) continue;
        const auto& intervals = use_bootstrap ? rep.bootstrap : rep.asymptotic;
        auto it = intervals.find(name);
        if (it == intervals.end()) continue;
        ++count;
        if (it->second.covers(gt.value)) ++hits;
        lengths.push_back(it->second.length());
        est_sum.add(rep.estimate.at(name));
      }
      if (count == 0) continue;
      row.coverage = static_cast<double>(hits) / static_cast<double>(count);
      row.median_length = interpolated_quantile(lengths, 0.5);
      row.mean_estimate = est_sum.value() / static_cast<double>(count);
      row.n_replicates = count;
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

}  // namespace dope
