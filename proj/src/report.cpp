#include "dope/report.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dope/rng.hpp"

namespace dope {

using nlohmann::json;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Estimate report

std::vector<ReportRow> build_report(const ObservationTable& table,
                                    const EstimateOptions& options,
                                    ThreadPool* pool) {
  if (options.methods.empty()) throw Error("no methods requested");
  for (const auto& m : options.methods)
    if (!is_known_method(m)) throw Error("unknown method: " + m);

  const auto evals =
      evaluate_methods(table, options.methods, options.method_options,
                       options.seed, options.target_arm, options.contrast_arm);

  std::vector<ReportRow> rows;
  for (const auto& name : options.methods) {
    const MethodOutput& out = evals.at(name);
    ReportRow row;
    row.estimator = name;
    row.estimate = out.estimate;
    if (out.v_hat && out.n_eff)
      row.asym_se = std::sqrt(*out.v_hat / static_cast<double>(*out.n_eff));
    rows.push_back(std::move(row));
  }

  if (options.bootstrap > 0) {
    auto closure = [&](const ObservationTable& resample, std::uint64_t s) {
      const auto boot = evaluate_methods(resample, options.methods,
                                         options.method_options, s,
                                         options.target_arm, options.contrast_arm);
      std::vector<double> values;
      values.reserve(options.methods.size());
      for (const auto& name : options.methods)
        values.push_back(boot.at(name).estimate);
      return values;
    };
    const std::vector<BootstrapResult> boot =
        bootstrap_multi(table, closure, options.methods.size(), options.bootstrap,
                        child_seed(options.seed, 0x7265706f7274), pool);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      rows[i].bs_se = boot[i].se;
      rows[i].bs_ci = bootstrap_interval(rows[i].estimate, boot[i], options.level,
                                         options.ci_kind);
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const ReportRow& a, const ReportRow& b) {
                       return *a.bs_se < *b.bs_se;
                     });
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Oracle suites

namespace {

SuiteResult run_lemma1(int trials, std::uint64_t seed) {
  SuiteResult res{"lemma1", trials, 0.0, 1e-10, false, {}};
  const ContrastSpec contrast = ContrastSpec::difference(1, 0);
  for (int r = 0; r < trials; ++r) {
    oracle::CompliantSizes sizes;
    sizes.z1_cells = 2 + static_cast<int>(r % 3);
    sizes.z2_per_z1 = 2 + static_cast<int>(r % 2);
    sizes.atoms_per_z2 = 1 + static_cast<int>(r % 2);
    sizes.y_levels = 2 + static_cast<int>(r % 3);
    const auto triple = oracle::generate_compliant_distribution(
        oracle::CompliantKind::ods_pair, sizes, child_seed(seed, 1, r));
    const auto report = oracle::check_deletion_identity(triple.dist, triple.Z1,
                                                        triple.Z2, contrast);
    res.max_discrepancy = std::max(res.max_discrepancy, report.discrepancy);
    res.max_discrepancy = std::max(res.max_discrepancy, report.mu_shift);
    if (report.lhs_gap < -1e-10)
      res.notes.push_back("variance ordering violated at trial " +
                          std::to_string(r));
  }
  res.pass = res.max_discrepancy < res.tolerance && res.notes.empty();
  return res;
}

SuiteResult run_lemma2(int trials, std::uint64_t seed) {
  SuiteResult res{"lemma2", trials, 0.0, 1e-10, false, {}};
  const ContrastSpec contrast = ContrastSpec::difference(1, 0);
  for (int r = 0; r < trials; ++r) {
    oracle::CompliantSizes sizes;
    sizes.z1_cells = 2 + static_cast<int>(r % 3);
    sizes.z2_per_z1 = 2 + static_cast<int>(r % 2);
    sizes.atoms_per_z2 = 1 + static_cast<int>(r % 2);
    sizes.y_levels = 2 + static_cast<int>(r % 3);
    const auto triple = oracle::generate_compliant_distribution(
        oracle::CompliantKind::precision_pair, sizes, child_seed(seed, 2, r));
    const auto report = oracle::check_supplementation_identity(
        triple.dist, triple.Z1, triple.Z2, contrast);
    res.max_discrepancy = std::max(
        {res.max_discrepancy, report.discrepancy, report.max_var_component_error,
         report.max_cov_component_error, report.mu_shift});
    if (report.lhs_gap < -1e-10)
      res.notes.push_back("variance ordering violated at trial " +
                          std::to_string(r));
  }
  res.pass = res.max_discrepancy < res.tolerance && res.notes.empty();
  return res;
}

SuiteResult run_projection(int trials, std::uint64_t seed) {
  SuiteResult res{"projection", trials, 0.0, 1e-12, false, {}};
  for (int r = 0; r < trials; ++r) {
    const int M = 4 + static_cast<int>(r % 5);
    const int cells = 1 + static_cast<int>(r % 3);
    const auto dist =
        oracle::random_distribution(2, M, 2 + (r % 3), child_seed(seed, 3, r));
    const auto z1 = oracle::random_coarsening(M, cells, child_seed(seed, 4, r));
    const auto z2 = oracle::Partition::finest(M);
    for (int t = 0; t < 2; ++t)
      res.max_discrepancy =
          std::max(res.max_discrepancy,
                   oracle::check_inverse_propensity_projection(dist, z1, z2, t));
  }
  res.pass = res.max_discrepancy < res.tolerance;
  return res;
}

SuiteResult run_symmetric(std::uint64_t /*seed*/) {
  SuiteResult res{"symmetric", 1, 0.0, 1e-12, false, {}};
  oracle::SymmetricExampleSpec spec;
  spec.delta = 0.1;
  spec.grid_size = 101;
  spec.g = [](double z) { return z; };
  spec.v = [](double w) { return w * w; };
  const auto report = oracle::symmetric_example_check(spec);
  for (const auto& row : report.rows) {
    res.max_discrepancy = std::max(res.max_discrepancy, row.abs_error);
    res.notes.push_back(row.quantity + ": exact=" + format_double(row.exact_value) +
                        " closed=" + format_double(row.closed_form) +
                        " printed=" + format_double(row.printed_form));
  }
  res.max_discrepancy = std::max(res.max_discrepancy, report.moment_algebra_error);
  if (!report.v_is_symmetric)
    res.notes.push_back(
        "v(w)=w^2 is not symmetric about 1/2: the printed closed forms for "
        "V_t(0), V_t(Z) apply only to symmetric v; the general forms are "
        "checked instead");
  // reversal at small delta
  oracle::SymmetricExampleSpec small = spec;
  small.delta = 0.01;
  const auto small_report = oracle::symmetric_example_check(small);
  if (!small_report.reversal)
    res.notes.push_back("expected reversal V_t(Z) > V_t(W) missing at delta=0.01");
  res.pass = res.max_discrepancy < res.tolerance && small_report.reversal;
  return res;
}

SuiteResult run_si_gradient(std::uint64_t /*seed*/) {
  SuiteResult res{"si-gradient", 1, 0.0, 1e-3, false, {}};
  oracle::SmoothDgp2D dgp;
  dgp.h = [](double s) { return s * s; };
  dgp.h_prime = [](double s) { return 2.0 * s; };
  dgp.m = [](double w1, double) { return 0.2 + 0.6 * w1; };
  dgp.theta = {1.0, 0.5};
  const auto report = oracle::si_gradient_check(dgp);
  res.max_discrepancy = report.rel_error;
  res.notes.push_back("fd=(" + format_double(report.fd_gradient[0]) + "," +
                      format_double(report.fd_gradient[1]) + ") formula=(" +
                      format_double(report.formula_gradient[0]) + "," +
                      format_double(report.formula_gradient[1]) + ")");
  res.pass = res.max_discrepancy < res.tolerance;
  return res;
}

}  // namespace

std::vector<SuiteResult> run_oracle_suites(const std::string& suite, int trials,
                                           std::uint64_t seed) {
  if (trials < 1) throw Error("oracle-check: trials must be >= 1");
  std::vector<SuiteResult> out;
  const bool all = suite == "all";
  if (all || suite == "lemma1") out.push_back(run_lemma1(trials, seed));
  if (all || suite == "lemma2") out.push_back(run_lemma2(trials, seed));
  if (all || suite == "projection") out.push_back(run_projection(trials, seed));
  if (all || suite == "symmetric") out.push_back(run_symmetric(seed));
  if (all || suite == "si-gradient") out.push_back(run_si_gradient(seed));
  if (out.empty()) throw Error("unknown suite: " + suite);
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {
std::string mode_name(RegressionMode mode) {
  return mode == RegressionMode::joint ? "joint" : "stratified";
}
}  // namespace

std::string rmse_table_csv(const RmseTable& table) {
  std::ostringstream out;
  out << "method,link,n,regression_mode,sqrt_n_rmse,clt_halfwidth,n_replicates\n";
  for (const auto& row : table.rows) {
    out << row.method << ',' << link_name(row.link) << ',' << row.n << ','
        << mode_name(row.mode) << ',' << format_double(row.sqrt_n_rmse) << ','
        << format_double(row.clt_halfwidth) << ',' << row.n_replicates << '\n';
  }
  return out.str();
}

std::string rmse_table_json(const RmseTable& table, const std::string& config_json) {
  json j;
  j["config"] = json::parse(config_json);
  j["rows"] = json::array();
  for (const auto& row : table.rows) {
    j["rows"].push_back({{"method", row.method},
                         {"link", link_name(row.link)},
                         {"n", row.n},
                         {"regression_mode", mode_name(row.mode)},
                         {"sqrt_n_rmse", row.sqrt_n_rmse},
                         {"clt_halfwidth", row.clt_halfwidth},
                         {"n_replicates", row.n_replicates},
                         {"n_failures", row.n_failures}});
  }
  return j.dump(2) + "\n";
}

std::string coverage_table_csv(const CoverageTable& table) {
  std::ostringstream out;
  out << "method,interval_kind,coverage,median_length,mean_estimate,n_replicates\n";
  for (const auto& row : table.rows) {
    out << row.method << ',' << row.interval_kind << ','
        << format_double(row.coverage) << ',' << format_double(row.median_length)
        << ',' << format_double(row.mean_estimate) << ',' << row.n_replicates
        << '\n';
  }
  return out.str();
}

std::string coverage_table_json(const CoverageTable& table,
                                const std::string& config_json) {
  json j;
  j["config"] = json::parse(config_json);
  j["truth"] = table.truth;
  j["truth_mc_se"] = table.truth_mc_se;
  j["rows"] = json::array();
  for (const auto& row : table.rows) {
    j["rows"].push_back({{"method", row.method},
                         {"interval_kind", row.interval_kind},
                         {"coverage", row.coverage},
                         {"median_length", row.median_length},
                         {"mean_estimate", row.mean_estimate},
                         {"n_replicates", row.n_replicates}});
  }
  return j.dump(2) + "\n";
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  out << "estimator,estimate,bs_se,bs_ci_lo,bs_ci_hi,asym_se\n";
  for (const auto& row : rows) {
    out << row.estimator << ',' << format_double(row.estimate) << ',';
    out << (row.bs_se ? format_double(*row.bs_se) : "") << ',';
    out << (row.bs_ci ? format_double(row.bs_ci->lo) : "") << ',';
    out << (row.bs_ci ? format_double(row.bs_ci->hi) : "") << ',';
    out << (row.asym_se ? format_double(*row.asym_se) : "") << '\n';
  }
  return out.str();
}

std::string report_json(const std::vector<ReportRow>& rows,
                        const std::string& config_json) {
  json j;
  j["config"] = json::parse(config_json);
  j["rows"] = json::array();
  for (const auto& row : rows) {
    json r{{"estimator", row.estimator}, {"estimate", row.estimate}};
    r["bs_se"] = row.bs_se ? json(*row.bs_se) : json(nullptr);
    if (row.bs_ci) {
      r["bs_ci_lo"] = row.bs_ci->lo;
      r["bs_ci_hi"] = row.bs_ci->hi;
    } else {
      r["bs_ci_lo"] = nullptr;
      r["bs_ci_hi"] = nullptr;
    }
    r["asym_se"] = row.asym_se ? json(*row.asym_se) : json(nullptr);
    j["rows"].push_back(std::move(r));
  }
  return j.dump(2) + "\n";
}

std::string suites_json(const std::vector<SuiteResult>& suites,
                        const std::string& config_json) {
  json j;
  j["config"] = json::parse(config_json);
  j["suites"] = json::array();
  bool all_pass = true;
  for (const auto& s : suites) {
    all_pass = all_pass && s.pass;
    j["suites"].push_back({{"suite", s.suite},
                           {"trials", s.trials},
                           {"max_discrepancy", s.max_discrepancy},
                           {"tolerance", s.tolerance},
                           {"pass", s.pass},
                           {"notes", s.notes}});
  }
  j["pass"] = all_pass;
  return j.dump(2) + "\n";
}

std::string model_parameters_json(const LinearModel& model) {
  json j{{"kind", "linear"},
         {"intercept", model.intercept},
         {"coefficients", model.coefficients}};
  return j.dump();
}

std::string model_parameters_json(const LogisticModel& model) {
  json j{{"kind", "logistic"},
         {"intercept", model.intercept},
         {"coefficients", model.coefficients},
         {"converged", model.converged},
         {"iterations", model.iterations}};
  return j.dump();
}

std::string model_parameters_json(const SingleIndexNet& net) {
  json j{{"kind", "single_index_net"},
         {"mode", net.mode == RegressionMode::joint ? "joint" : "stratified"},
         {"theta", net.theta},
         {"theta_normalized", net.normalized_theta()},
         {"hidden_w", net.hidden_w},
         {"hidden_b", net.hidden_b},
         {"out_w", net.out_w},
         {"out_b", net.out_b},
         {"sigmoid_output", net.sigmoid_output},
         {"parameter_count", net.parameter_count()}};
  if (net.mode == RegressionMode::joint) j["alpha"] = net.alpha;
  return j.dump();
}

// ---------------------------------------------------------------------------
// SHA-256 (compact implementation for config content hashes)

namespace {
constexpr std::uint32_t kSha256K[64] = {
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1,
    0x923f82a4, 0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3,
    0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786,
    0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147,
    0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13,
    0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
    0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a,
    0x5b9cca4f, 0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208,
    0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};

inline std::uint32_t rotr(std::uint32_t x, int n) {
  return (x >> n) | (x << (32 - n));
}
}  // namespace

std::string sha256_hex(const std::string& bytes) {
  std::uint32_t h[8] = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                        0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
  std::string msg = bytes;
  const std::uint64_t bitlen = static_cast<std::uint64_t>(msg.size()) * 8;
  msg.push_back(static_cast<char>(0x80));
  while (msg.size() % 64 != 56) msg.push_back('\0');
  for (int i = 7; i >= 0; --i)
    msg.push_back(static_cast<char>((bitlen >> (8 * i)) & 0xff));

  for (std::size_t off = 0; off < msg.size(); off += 64) {
    std::uint32_t w[64];
    for (int i = 0; i < 16; ++i) {
      w[i] = (static_cast<std::uint32_t>(static_cast<unsigned char>(msg[off + 4 * i])) << 24) |
             (static_cast<std::uint32_t>(static_cast<unsigned char>(msg[off + 4 * i + 1])) << 16) |
             (static_cast<std::uint32_t>(static_cast<unsigned char>(msg[off + 4 * i + 2])) << 8) |
             static_cast<std::uint32_t>(static_cast<unsigned char>(msg[off + 4 * i + 3]));
    }
    for (int i = 16; i < 64; ++i) {
      const std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
      const std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
      w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3];
    std::uint32_t e = h[4], f = h[5], g = h[6], hh = h[7];
    for (int i = 0; i < 64; ++i) {
      const std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
      const std::uint32_t ch = (e & f) ^ (~e & g);
      const std::uint32_t t1 = hh + s1 + ch + kSha256K[i] + w[i];
      const std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
      const std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
      const std::uint32_t t2 = s0 + maj;
      hh = g; g = f; f = e; e = d + t1;
      d = c; c = b; b = a; a = t1 + t2;
    }
    h[0] += a; h[1] += b; h[2] += c; h[3] += d;
    h[4] += e; h[5] += f; h[6] += g; h[7] += hh;
  }
  std::ostringstream out;
  char buf[12];
  for (std::uint32_t v : h) {
    std::snprintf(buf, sizeof buf, "%08x", v);
    out << buf;
  }
  return out.str();
}

}  // namespace dope
