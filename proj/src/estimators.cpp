#include "dope/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dope/inference.hpp"
#include "dope/rng.hpp"
#include "dope/summation.hpp"

namespace dope {

IndexSets IndexSets::full_sample(std::size_t n) {
  IndexSets idx;
  idx.I1.resize(n);
  std::iota(idx.I1.begin(), idx.I1.end(), 0);
  idx.I2 = idx.I1;
  idx.I3 = idx.I1;
  return idx;
}

void IndexSets::validate(std::size_t n, bool strict) const {
  auto check = [&](const std::vector<std::size_t>& set, const char* name) {
    if (set.empty()) throw EmptyIndexSet(name);
    for (std::size_t i : set)
      if (i >= n) throw Error("index out of range in index set");
  };
  check(I1, "I1");
  check(I2, "I2");
  check(I3, "I3");
  if (strict) {
    std::vector<int> hits(n, 0);
    for (std::size_t i : I1) ++hits[i];
    for (std::size_t i : I2) ++hits[i];
    for (std::size_t i : I3) ++hits[i];
    for (int h : hits)
      if (h != 1) throw IndexSetOverlap();
  }
}

double naive_contrast(const ObservationTable& table, int t1, int t0) {
  auto arm_mean = [&](int t) {
    const auto rows = stratum_rows(table, t);
    if (rows.empty()) throw EmptyStratum(t);
    KahanSum sum;
    for (std::size_t i : rows) sum.add(table.outcomes[i]);
    return sum.value() / static_cast<double>(rows.size());
  };
  return arm_mean(t1) - arm_mean(t0);
}

namespace {

PointEstimate finish(std::vector<double> terms, std::string method,
                     IndexSets idx, int rep_dim) {
  PointEstimate est;
  est.value = compensated_mean(terms);
  est.per_row_terms = std::move(terms);
  est.method = std::move(method);
  est.index_sets = std::move(idx);
  est.representation_dim = rep_dim;
  return est;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

}  // namespace

PointEstimate regression_estimate(const RowOutcome& g,
                                  const ObservationTable& table, int t) {
  std::vector<double> terms(table.n());
  for (std::size_t i = 0; i < table.n(); ++i) terms[i] = g(t, i);
  return finish(std::move(terms), "regression", {}, 0);
}

PointEstimate regression_estimate(const OutcomeModel& g,
                                  const ObservationTable& table, int t) {
  RowOutcome fn = [&](int tt, std::size_t i) { return g.predict(tt, table.row(i)); };
  PointEstimate est = regression_estimate(fn, table, t);
  est.representation_dim = g.representation_dim();
  return est;
}

PointEstimate ipw_estimate(const RowPropensity& m, const ObservationTable& table,
                           int t, const ClipRange& clip) {
  clip.validate();
  std::vector<double> terms(table.n(), 0.0);
  for (std::size_t i = 0; i < table.n(); ++i)
    if (table.treatments[i] == t)
      terms[i] = table.outcomes[i] / clip.clip(m(t, i));
  return finish(std::move(terms), "ipw", {}, 0);
}

PointEstimate aipw_estimate(const RowPropensity& m, const RowOutcome& g,
                            const ObservationTable& table, int t,
                            const ClipRange& clip) {
  return aipw_estimate(m, g, table, t, clip, all_rows(table.n()));
}

PointEstimate aipw_estimate(const RowPropensity& m, const RowOutcome& g,
                            const ObservationTable& table, int t,
                            const ClipRange& clip,
                            std::span<const std::size_t> I3) {
  clip.validate();
  if (I3.empty()) throw EmptyIndexSet("I3");
  std::vector<double> terms;
  terms.reserve(I3.size());
  for (std::size_t i : I3) {
    const double ghat = g(t, i);
    double u = ghat;
    if (table.treatments[i] == t)
      u += (table.outcomes[i] - ghat) / clip.clip(m(t, i));
    terms.push_back(u);
  }
  return finish(std::move(terms), "aipw", {}, 0);
}

double ArmPropensity::value(int t, std::span<const double> features) const {
  if (arms == 2) {
    const double p1 = models[0].predict(features);
    return t == 1 ? p1 : 1.0 - p1;
  }
  double total = 0.0;
  double pt = 0.0;
  for (int a = 0; a < arms; ++a) {
    const double p = models[static_cast<std::size_t>(a)].predict(features);
    total += p;
    if (a == t) pt = p;
  }
  return pt / total;
}

ArmPropensity fit_arm_propensity(std::span<const double> design, std::size_t dim,
                                 std::span<const int> treatments, int arms) {
  if (arms < 2) throw Error("propensity needs at least two treatment arms");
  ArmPropensity prop;
  prop.arms = arms;
  auto fit_arm = [&](int arm) {
    std::vector<double> labels(treatments.size());
    for (std::size_t r = 0; r < treatments.size(); ++r)
      labels[r] = treatments[r] == arm ? 1.0 : 0.0;
    return fit_logistic_irls(design, dim, labels);
  };
  if (arms == 2) {
    prop.models.push_back(fit_arm(1));
  } else {
    for (int a = 0; a < arms; ++a) prop.models.push_back(fit_arm(a));
  }
  return prop;
}

// ---------------------------------------------------------------------------
// DOPE internals

namespace {

struct RepMatrix {
  int dim = 0;
  std::vector<double> flat;  // n x dim
  std::span<const double> row(std::size_t i) const {
    return {flat.data() + i * static_cast<std::size_t>(dim),
            static_cast<std::size_t>(dim)};
  }
};

RepMatrix materialize(const RepFn& rep, int dim, const ObservationTable& table) {
  RepMatrix m;
  m.dim = dim;
  m.flat.resize(table.n() * static_cast<std::size_t>(dim));
  for (std::size_t i = 0; i < table.n(); ++i)
    rep(table.row(i), {m.flat.data() + i * static_cast<std::size_t>(dim),
                       static_cast<std::size_t>(dim)});
  return m;
}

ArmPropensity fit_rep_propensity(const ObservationTable& table,
                                 const RepMatrix& rep,
                                 std::span<const std::size_t> I2) {
  const std::size_t dim = static_cast<std::size_t>(rep.dim);
  std::vector<double> design(I2.size() * dim);
  std::vector<int> treatments(I2.size());
  for (std::size_t r = 0; r < I2.size(); ++r) {
    const auto z = rep.row(I2[r]);
    std::copy(z.begin(), z.end(), design.begin() + r * dim);
    treatments[r] = table.treatments[I2[r]];
  }
  return fit_arm_propensity(design, dim, treatments, table.labels.count());
}

/// Column-standardized view of the representation used when re-fitting a
/// network head: centering/scale make the fit invariant to rescalings of
/// the index, and the sign is pinned by the covariance with the outcome.
struct ZStandardizer {
  std::vector<double> mean, scale, sign;
  void apply(std::span<const double> z, std::span<double> out) const {
    for (std::size_t j = 0; j < mean.size(); ++j)
      out[j] = sign[j] * (z[j] - mean[j]) / scale[j];
  }
};

ZStandardizer fit_standardizer(const RepMatrix& rep,
                               std::span<const std::size_t> rows,
                               const std::vector<double>& outcomes) {
  const std::size_t dim = static_cast<std::size_t>(rep.dim);
  ZStandardizer st;
  st.mean.assign(dim, 0.0);
  st.scale.assign(dim, 1.0);
  st.sign.assign(dim, 1.0);
  KahanSum ysum;
  for (std::size_t i : rows) ysum.add(outcomes[i]);
  const double ymean = ysum.value() / static_cast<double>(rows.size());
  for (std::size_t j = 0; j < dim; ++j) {
    KahanSum sum;
    for (std::size_t i : rows) sum.add(rep.row(i)[j]);
    st.mean[j] = sum.value() / static_cast<double>(rows.size());
    KahanSum ss, cov;
    for (std::size_t i : rows) {
      const double d = rep.row(i)[j] - st.mean[j];
      ss.add(d * d);
      cov.add(d * (outcomes[i] - ymean));
    }
    const double sd = std::sqrt(ss.value() / static_cast<double>(rows.size()));
    st.scale[j] = sd > 0.0 ? sd : 1.0;
    st.sign[j] = cov.value() >= 0.0 ? 1.0 : -1.0;
  }
  return st;
}

/// Fits h(t, z) on (T_i, Z_i, Y_i) over I2 and returns it as a HeadFn.
HeadFn fit_head(const ObservationTable& table, const RepMatrix& rep,
                std::span<const std::size_t> I2, const DopeOptions& options) {
  const std::size_t dim = static_cast<std::size_t>(rep.dim);
  const ObservationTable sub = [&] {
    ObservationTable s;
    s.labels = table.labels;
    s.column_names.resize(dim);
    for (std::size_t j = 0; j < dim; ++j)
      s.column_names[j] = "z" + std::to_string(j);
    for (std::size_t i : I2) {
      s.treatments.push_back(table.treatments[i]);
      s.outcomes.push_back(table.outcomes[i]);
      const auto z = rep.row(i);
      s.covariates.insert(s.covariates.end(), z.begin(), z.end());
    }
    return s;
  }();

  if (options.family == OutcomeFamily::linear) {
    auto model = std::shared_ptr<LinearOutcome>(
        fit_linear_outcome(sub, options.train.mode));
    return [model](int t, std::span<const double> z) {
      return model->predict(t, z);
    };
  }

  // network head: standardize the index columns first
  ZStandardizer st = fit_standardizer(rep, I2, table.outcomes);
  ObservationTable std_sub = sub;
  for (std::size_t r = 0; r < std_sub.n(); ++r) {
    std::span<double> z{std_sub.covariates.data() + r * dim, dim};
    st.apply(std::span<const double>(sub.covariates.data() + r * dim, dim), z);
  }
  TrainConfig head_cfg = options.train;
  head_cfg.seed = child_seed(options.train.seed, 0x68656164);
  auto net = std::shared_ptr<SingleIndexOutcome>(
      fit_single_index_net(std_sub, head_cfg));
  auto stc = std::make_shared<ZStandardizer>(std::move(st));
  return [net, stc, dim](int t, std::span<const double> z) {
    std::vector<double> zs(dim);
    stc->apply(z, zs);
    return net->predict(t, zs);
  };
}

DopeResult dope_assemble(const ObservationTable& table, const IndexSets& idx,
                         const RepMatrix& rep,
                         const std::function<double(int, std::size_t)>& ghat,
                         const DopeOptions& options, const std::string& tag) {
  options.clip.validate();
  const ArmPropensity prop = fit_rep_propensity(table, rep, idx.I2);

  DopeResult result;
  result.representation_dim = rep.dim;
  const int arms = table.labels.count();
  for (int t = 0; t < arms; ++t) {
    std::vector<double> terms;
    terms.reserve(idx.I3.size());
    for (std::size_t i : idx.I3) {
      const double g = ghat(t, i);
      double u = g;
      if (table.treatments[i] == t) {
        const double f = options.clip.clip(prop.value(t, rep.row(i)));
        u += (table.outcomes[i] - g) / f;
      }
      terms.push_back(u);
    }
    result.by_arm.emplace(t, finish(std::move(terms), tag, idx, rep.dim));
  }
  if (arms == 2) {
    result.fitted_propensity.reserve(idx.I3.size());
    for (std::size_t i : idx.I3)
      result.fitted_propensity.push_back(
          options.clip.clip(prop.value(1, rep.row(i))));
  }
  return result;
}

/// Canonical index map of a fitted outcome model: per-arm (or joint) theta
/// scaled to unit norm with the first nonzero coordinate positive, then
/// applied to w. Rescaling the fitted index leaves this map unchanged up
/// to ulps (exactly, for sign flips).
RepFn canonical_rep(const std::vector<std::vector<double>>& thetas) {
  auto normalized = std::make_shared<std::vector<std::vector<double>>>();
  for (const auto& theta : thetas) {
    double norm2 = 0.0;
    for (double v : theta) norm2 += v * v;
    const double norm = std::sqrt(norm2);
    double sign = 1.0;
    for (double v : theta) {
      if (v != 0.0) {
        sign = v > 0.0 ? 1.0 : -1.0;
        break;
      }
    }
    std::vector<double> canon(theta);
    if (norm > 0.0)
      for (double& v : canon) v = v * sign / norm;
    normalized->push_back(std::move(canon));
  }
  return [normalized](std::span<const double> w, std::span<double> out) {
    for (std::size_t a = 0; a < normalized->size(); ++a) {
      const auto& th = (*normalized)[a];
      double acc = 0.0;
      for (std::size_t j = 0; j < th.size(); ++j) acc += th[j] * w[j];
      out[a] = acc;
    }
  };
}

std::unique_ptr<OutcomeModel> fit_outcome_family(const ObservationTable& table,
                                                 const DopeOptions& options) {
  if (options.family == OutcomeFamily::linear)
    return fit_linear_outcome(table, options.train.mode);
  return fit_single_index_net(table, options.train);
}

}  // namespace

DopeResult dope_from_representation(const ObservationTable& table,
                                    const IndexSets& idx, const RepFn& rep,
                                    int rep_dim, const DopeOptions& options,
                                    const HeadFn* head_override) {
  idx.validate(table.n(), options.strict_splitting);
  const RepMatrix values = materialize(rep, rep_dim, table);
  HeadFn head = head_override != nullptr
                    ? *head_override
                    : fit_head(table, values, idx.I2, options);
  auto ghat = [&](int t, std::size_t i) { return head(t, values.row(i)); };
  return dope_assemble(table, idx, values, ghat, options,
                       head_override != nullptr ? "dope-fixed-head" : "dope-idx");
}

DopeResult dope_with_model(const ObservationTable& table, const IndexSets& idx,
                           const OutcomeModel& model, const DopeOptions& options) {
  idx.validate(table.n(), options.strict_splitting);
  if (!idx.fused())
    throw Error("dope_with_model requires I1 == I2 (fused head)");
  const RepFn rep = canonical_rep(model.index_weights());
  const RepMatrix values = materialize(rep, model.representation_dim(), table);
  auto ghat = [&](int t, std::size_t i) { return model.predict(t, table.row(i)); };
  return dope_assemble(table, idx, values, ghat, options, "dope-idx");
}

DopeResult dope_all(const ObservationTable& table, const IndexSets& idx,
                    const DopeOptions& options) {
  idx.validate(table.n(), options.strict_splitting);
  const ObservationTable fit_table = table.subset(idx.I1);
  const std::unique_ptr<OutcomeModel> model = fit_outcome_family(fit_table, options);
  if (idx.fused()) {
    // lines 4-6 fused: the fitted network/linear model IS h \circ phi
    return dope_with_model(table, idx, *model, options);
  }
  const RepFn rep = canonical_rep(model->index_weights());
  return dope_from_representation(table, idx, rep, model->representation_dim(),
                                  options, nullptr);
}

PointEstimate dope(const ObservationTable& table, const IndexSets& idx,
                   const DopeOptions& options, int t) {
  DopeResult result = dope_all(table, idx, options);
  auto it = result.by_arm.find(t);
  if (it == result.by_arm.end()) throw MissingArmEstimate(t);
  return std::move(it->second);
}

DopeResult dope_bcl_with_model(const ObservationTable& table, const IndexSets& idx,
                               const OutcomeModel& model,
                               const DopeOptions& options) {
  if (table.labels.count() != 2) throw NonBinaryTreatment();
  idx.validate(table.n(), options.strict_splitting);
  RepFn rep = [&model](std::span<const double> w, std::span<double> out) {
    out[0] = model.predict(0, w);
    out[1] = model.predict(1, w);
  };
  const HeadFn head = [](int t, std::span<const double> z) {
    return z[static_cast<std::size_t>(t)];
  };
  DopeResult result = dope_from_representation(table, idx, rep, 2, options, &head);
  for (auto& [t, est] : result.by_arm) est.method = "dope-bcl";
  return result;
}

DopeResult dope_bcl_all(const ObservationTable& table, const IndexSets& idx,
                        const DopeOptions& options) {
  if (table.labels.count() != 2) throw NonBinaryTreatment();
  idx.validate(table.n(), options.strict_splitting);
  const ObservationTable fit_table = table.subset(idx.I1);
  const std::unique_ptr<OutcomeModel> model = fit_outcome_family(fit_table, options);
  return dope_bcl_with_model(table, idx, *model, options);
}

PointEstimate dope_bcl(const ObservationTable& table, const IndexSets& idx,
                       const DopeOptions& options, int t) {
  DopeResult result = dope_bcl_all(table, idx, options);
  auto it = result.by_arm.find(t);
  if (it == result.by_arm.end()) throw MissingArmEstimate(t);
  return std::move(it->second);
}

CrossfitResult crossfit_dope(const ObservationTable& table, int K, int m,
                             const DopeOptions& options, std::uint64_t seed,
                             CrossfitVariant variant) {
  const std::size_t n = table.n();
  if (variant == CrossfitVariant::algorithm_a1 && (m < 1 || m > K - 2))
    throw BadFoldConfig("need 1 <= m <= K-2");
  CrossfitResult result;
  result.folds = assign_folds(n, K, seed);
  result.K = K;
  result.m = m;
  const auto folds = result.folds.folds();

  const int arms = table.labels.count();
  for (int t = 0; t < arms; ++t) {
    result.per_row_terms[t].assign(n, 0.0);
    result.fold_estimates[t].clear();
    result.fold_vhats[t].clear();
  }

  for (int k = 0; k < K; ++k) {
    IndexSets idx;
    idx.I3 = folds[static_cast<std::size_t>(k)];
    if (variant == CrossfitVariant::algorithm_a1) {
      std::vector<char> in_i1(n, 0);
      for (int l = 1; l <= m; ++l) {
        const int fold = (k + l) % K;
        for (std::size_t i : folds[static_cast<std::size_t>(fold)]) {
          idx.I1.push_back(i);
          in_i1[i] = 1;
        }
      }
      std::vector<char> in_i3(n, 0);
      for (std::size_t i : idx.I3) in_i3[i] = 1;
      for (std::size_t i = 0; i < n; ++i)
        if (!in_i1[i] && !in_i3[i]) idx.I2.push_back(i);
    } else {
      std::vector<char> in_i3(n, 0);
      for (std::size_t i : idx.I3) in_i3[i] = 1;
      for (std::size_t i = 0; i < n; ++i)
        if (!in_i3[i]) idx.I1.push_back(i);
      idx.I2 = idx.I1;
    }

    DopeOptions fold_options = options;
    fold_options.train.seed =
        child_seed(options.train.seed, 0x78666974, static_cast<std::uint64_t>(k));
    result.fold_index_sets.push_back(idx);
    DopeResult fold_result = dope_all(table, idx, fold_options);
    for (int t = 0; t < arms; ++t) {
      const PointEstimate& est = fold_result.by_arm.at(t);
      result.fold_estimates[t].push_back(est.value);
      result.fold_vhats[t].push_back(influence_variance(est.per_row_terms).v_hat);
      for (std::size_t r = 0; r < idx.I3.size(); ++ r)
        result.per_row_terms[t][idx.I3[r]] = est.per_row_terms[r];
    }
  }

  for (int t = 0; t < arms; ++t) {
    result.estimate[t] = compensated_mean(result.fold_estimates[t]);
    result.v_hat[t] = compensated_mean(result.fold_vhats[t]);
  }
  return result;
}

double adjusted_contrast(const std::map<int, PointEstimate>& estimates,
                         const ContrastSpec& spec) {
  KahanSum sum;
  for (const auto& [t, c] : spec.coefficients) {
    if (c == 0.0) continue;
    auto it = estimates.find(t);
    if (it == estimates.end()) throw MissingArmEstimate(t);
    sum.add(c * it->second.value);
  }
  return sum.value();
}

}  // namespace dope
