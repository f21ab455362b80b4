#include "dope/inference.hpp"

#include <algorithm>
#include <cmath>

#include "dope/rng.hpp"
#include "dope/summation.hpp"

namespace dope {

// AS241 (PPND16): normal quantile accurate to ~1e-16.
double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error("normal_quantile: p must be in (0,1)");
  const double q = p - 0.5;
  double r;
  if (std::abs(q) <= 0.425) {
    r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
               1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
             1.3314166789178437745e2) * r + 3.3871328727963666080e0) /
           (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
               5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
             4.2313330701600911252e1) * r + 1.0);
  }
  r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double value;
  if (r <= 5.0) {
    r -= 1.6;
    value = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                  2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
                3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
              4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
            (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                  1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
              2.05319162663775882187e0) * r + 1.0);
  } else {
    r -= 5.0;
    value = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                  1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
              5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
            (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                  1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
                1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
              5.99832206555887937690e-1) * r + 1.0);
  }
  return q < 0.0 ? -value : value;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

VarianceEstimate influence_variance(std::span<const double> per_row_terms) {
  const std::size_t n = per_row_terms.size();
  if (n < 2) throw TooFewRows("influence_variance: need at least 2 terms");
  // mean(u^2) - mean(u)^2, evaluated around the centered values so a common
  // shift of the terms cannot cancel catastrophically
  KahanSum sum;
  for (double u : per_row_terms) sum.add(u);
  const double center = sum.value() / static_cast<double>(n);
  KahanSum dev, devsq;
  for (double u : per_row_terms) {
    const double d = u - center;
    dev.add(d);
    devsq.add(d * d);
  }
  const double mean_dev = dev.value() / static_cast<double>(n);
  const double meansq_dev = devsq.value() / static_cast<double>(n);
  VarianceEstimate v;
  v.v_hat = std::max(0.0, meansq_dev - mean_dev * mean_dev);
  v.n_effective = n;
  return v;
}

Interval wald_interval(double estimate, const VarianceEstimate& v, double level) {
  if (!(level > 0.0 && level < 1.0)) throw Error("level must be in (0,1)");
  if (v.v_hat < 0.0 || v.n_effective == 0)
    throw Error("invalid variance estimate");
  const double z = normal_quantile(0.5 * (1.0 + level));
  const double half = z * std::sqrt(v.v_hat / static_cast<double>(v.n_effective));
  return Interval{estimate - half, estimate + half, level,
                  IntervalKind::wald_asymptotic};
}

double interpolated_quantile(std::vector<double> values, double p) {
  if (values.empty()) throw Error("quantile of empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n == 1) return values[0];
  const double h = (static_cast<double>(n) - 1.0) * p;
  const double lo = std::floor(std::clamp(h, 0.0, static_cast<double>(n - 1)));
  const std::size_t i = static_cast<std::size_t>(lo);
  if (i + 1 >= n) return values[n - 1];
  const double frac = h - lo;
  return values[i] + frac * (values[i + 1] - values[i]);
}

namespace {

ObservationTable resample_rows(const ObservationTable& table, Rng& rng) {
  const std::size_t n = table.n();
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = rng.below(n);
  return table.subset(rows);
}

double sample_sd(std::span<const double> xs) {
  const std::size_t n = xs.size();
  if (n < 2) return 0.0;
  KahanSum sum;
  for (double x : xs) sum.add(x);
  const double mean = sum.value() / static_cast<double>(n);
  KahanSum ss;
  for (double x : xs) ss.add((x - mean) * (x - mean));
  return std::sqrt(ss.value() / static_cast<double>(n - 1));
}

}  // namespace

std::vector<BootstrapResult> bootstrap_multi(
    const ObservationTable& table,
    const std::function<std::vector<double>(const ObservationTable&, std::uint64_t)>&
        estimators,
    std::size_t n_methods, std::size_t B, std::uint64_t seed, ThreadPool* pool) {
  if (B < 2) throw Error("bootstrap: B must be >= 2");
  // slot-per-replicate storage keeps aggregation independent of scheduling
  std::vector<std::vector<double>> values(B);
  std::vector<char> ok(B, 0);

  auto run_one = [&](std::size_t r) {
    const std::uint64_t rep_seed = child_seed(seed, 0x62736f6f74, r);
    Rng rng(rep_seed);
    const ObservationTable resample = resample_rows(table, rng);
    try {
      std::vector<double> est =
          estimators(resample, child_seed(seed, 0x62666974, r));
      if (est.size() != n_methods) throw Error("bootstrap closure arity");
      for (double v : est)
        if (!std::isfinite(v)) throw Error("non-finite bootstrap estimate");
      values[r] = std::move(est);
      ok[r] = 1;
    } catch (const Error&) {
      ok[r] = 0;  // recorded as a failed replicate
    }
  };

  if (pool != nullptr) {
    pool->parallel_for(B, run_one);
  } else {
    for (std::size_t r = 0; r < B; ++r) run_one(r);
  }

  std::size_t failures = 0;
  for (std::size_t r = 0; r < B; ++r)
    if (!ok[r]) ++failures;
  if (static_cast<double>(failures) > 0.02 * static_cast<double>(B))
    throw BootstrapFailure(std::to_string(failures) + " of " + std::to_string(B) +
                           " bootstrap replicates failed");

  std::vector<BootstrapResult> results(n_methods);
  for (std::size_t m = 0; m < n_methods; ++m) {
    BootstrapResult& res = results[m];
    res.seed = seed;
    res.requested = B;
    res.failures = failures;
    res.replicate_values.reserve(B - failures);
    for (std::size_t r = 0; r < B; ++r)
      if (ok[r]) res.replicate_values.push_back(values[r][m]);
    res.se = sample_sd(res.replicate_values);
  }
  return results;
}

BootstrapResult bootstrap(
    const ObservationTable& table,
    const std::function<double(const ObservationTable&, std::uint64_t)>& estimator,
    std::size_t B, std::uint64_t seed, ThreadPool* pool) {
  auto wrapped = [&estimator](const ObservationTable& t, std::uint64_t s) {
    return std::vector<double>{estimator(t, s)};
  };
  return bootstrap_multi(table, wrapped, 1, B, seed, pool)[0];
}

Interval bootstrap_interval(double estimate, const BootstrapResult& result,
                            double level, IntervalKind kind) {
  if (!(level > 0.0 && level < 1.0)) throw Error("level must be in (0,1)");
  if (kind == IntervalKind::bootstrap_normal) {
    const double z = normal_quantile(0.5 * (1.0 + level));
    return Interval{estimate - z * result.se, estimate + z * result.se, level, kind};
  }
  if (kind != IntervalKind::bootstrap_percentile)
    throw Error("bootstrap_interval: kind must be a bootstrap kind");
  const double alpha = 1.0 - level;
  return Interval{interpolated_quantile(result.replicate_values, alpha / 2.0),
                  interpolated_quantile(result.replicate_values, 1.0 - alpha / 2.0),
                  level, kind};
}

}  // namespace dope
