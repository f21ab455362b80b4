// dope: covariate-adjusted treatment effect estimation.
// Subcommands: simulate | estimate | oracle-check.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dope/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitSuiteFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

void emit_error(const std::string& kind, const std::string& message) {
  json err{{"error", kind}, {"message", message}};
  std::cerr << err.dump() << "\n";
}

bool is_data_error(const dope::Error& e) {
  return dynamic_cast<const dope::MissingColumn*>(&e) != nullptr ||
         dynamic_cast<const dope::NonNumericCell*>(&e) != nullptr ||
         dynamic_cast<const dope::EmptyAfterDrop*>(&e) != nullptr ||
         dynamic_cast<const dope::TooFewRows*>(&e) != nullptr ||
         dynamic_cast<const dope::EmptyStratum*>(&e) != nullptr;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw dope::Error("cannot write " + path.string());
  out << content;
}

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

struct CommonFlags {
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::string out_dir = ".";
  std::string format = "both";  // csv | json | both
};

dope::RegressionMode mode_from_name(const std::string& name) {
  if (name == "stratified") return dope::RegressionMode::stratified;
  if (name == "joint") return dope::RegressionMode::joint;
  throw dope::Error("unknown regression mode: " + name);
}

// ---------------------------------------------------------------------------
// estimate

struct EstimateFlags {
  std::string data;
  std::string treatment_col, outcome_col;
  std::string methods = "naive,reg-ols,reg-nn,ipw,aipw-ols,aipw-nn,dope-idx,dope-bcl";
  std::size_t bootstrap = 1000;
  std::string ci = "percentile";
  std::string clip = "0.01,0.99";
  std::string impute = "mean";
  std::string mode = "joint";
  std::string nn_loss = "mse";
  int nn_iters = 1200;
  double nn_lr = 1e-3;
  std::string treatment_order;
  std::string target_arm, contrast_arm;
  std::string out_file;
};

int run_estimate(const CommonFlags& common, const EstimateFlags& flags) {
  dope::IngestionOptions ingest;
  ingest.treatment_column = flags.treatment_col;
  ingest.outcome_column = flags.outcome_col;
  if (flags.impute == "mean") {
    ingest.missing_policy = dope::MissingPolicy::mean_impute;
  } else if (flags.impute == "drop50") {
    ingest.missing_policy = dope::MissingPolicy::drop_then_impute;
    ingest.drop_threshold = 0.5;
  } else {
    emit_error("config", "unknown imputation policy: " + flags.impute);
    return kExitConfig;
  }
  if (!flags.treatment_order.empty())
    ingest.treatment_order = split_list(flags.treatment_order);

  dope::EstimateOptions options;
  options.methods = split_list(flags.methods);
  options.bootstrap = flags.bootstrap;
  options.level = 0.95;
  if (flags.ci == "percentile") {
    options.ci_kind = dope::IntervalKind::bootstrap_percentile;
  } else if (flags.ci == "normal") {
    options.ci_kind = dope::IntervalKind::bootstrap_normal;
  } else {
    emit_error("config", "unknown ci kind: " + flags.ci);
    return kExitConfig;
  }
  const auto clip_parts = split_list(flags.clip);
  if (clip_parts.size() != 2) {
    emit_error("config", "--clip expects lo,hi");
    return kExitConfig;
  }
  options.method_options.clip = {std::stod(clip_parts[0]), std::stod(clip_parts[1])};
  options.method_options.mode = mode_from_name(flags.mode);
  options.method_options.train.loss =
      flags.nn_loss == "bce" ? dope::NetLoss::bce : dope::NetLoss::mse;
  options.method_options.train.iterations = flags.nn_iters;
  options.method_options.train.learning_rate = flags.nn_lr;
  options.seed = common.seed;
  for (const auto& m : options.methods)
    if (!dope::is_known_method(m)) {
      emit_error("config", "unknown method: " + m);
      return kExitConfig;
    }

  dope::ObservationTable table;
  try {
    table = dope::load_csv(flags.data, ingest);
  } catch (const dope::Error& e) {
    emit_error("data", e.what());
    return kExitData;
  }

  // default contrast: mu_1 - mu_0 on label ids; overridable by display label
  try {
    if (!flags.target_arm.empty())
      options.target_arm = table.labels.id_of(flags.target_arm);
    if (!flags.contrast_arm.empty())
      options.contrast_arm = table.labels.id_of(flags.contrast_arm);
    else if (flags.contrast_arm.empty() && table.labels.count() == 2)
      options.contrast_arm = options.target_arm == 1 ? 0 : 1;
    else if (table.labels.count() != 2)
      options.contrast_arm = std::nullopt;
  } catch (const dope::Error& e) {
    emit_error("config", e.what());
    return kExitConfig;
  }

  json config{{"command", "estimate"},
              {"data", flags.data},
              {"treatment_col", flags.treatment_col},
              {"outcome_col", flags.outcome_col},
              {"methods", options.methods},
              {"bootstrap", options.bootstrap},
              {"ci", flags.ci},
              {"clip", {options.method_options.clip.lo, options.method_options.clip.hi}},
              {"impute", flags.impute},
              {"mode", flags.mode},
              {"nn_loss", flags.nn_loss},
              {"nn_iters", flags.nn_iters},
              {"nn_lr", flags.nn_lr},
              {"seed", common.seed},
              {"threads", common.threads},
              {"target_arm", options.target_arm},
              {"contrast_arm", options.contrast_arm
                                   ? json(*options.contrast_arm)
                                   : json(nullptr)}};

  try {
    dope::ThreadPool pool(common.threads);
    const auto rows = dope::build_report(table, options, &pool);
    const std::string out_json = dope::report_json(rows, config.dump());
    std::cout << out_json;
    if (!flags.out_file.empty()) {
      if (common.format == "csv") {
        write_file(flags.out_file, dope::report_csv(rows));
      } else if (common.format == "json") {
        write_file(flags.out_file, out_json);
      } else {
        write_file(flags.out_file + ".json", out_json);
        write_file(flags.out_file + ".csv", dope::report_csv(rows));
      }
    }
  } catch (const dope::Error& e) {
    if (is_data_error(e)) {
      emit_error("data", e.what());
      return kExitData;
    }
    emit_error("config", e.what());
    return kExitConfig;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateFlags {
  std::string experiment = "rmse";  // rmse | coverage
  std::string preset;
  std::string config_path;
  std::string grid_n = "300,900,2700";
  std::string links = "lin,cbrt";
  std::string modes = "stratified,joint";
  std::string methods = "reg-ols,reg-nn,aipw-ols,aipw-nn,dope-idx,dope-bcl";
  int n_replicates = 0;  // 0: use preset/default
  long ground_truth_draws = 1'000'000;
  int d = 12;
  // coverage settings
  std::size_t cov_n = 2700;
  std::size_t bootstrap = 200;
  std::string beta_fixed = "1,-2,3,0,0,0,0,0,0,0,0,0";
  std::string cov_link = "cbrt";
  std::string cov_methods = "reg-nn,aipw-nn,dope-idx,dope-bcl";
  int nn_iters = 1200;
  double nn_lr = 1e-3;
};

json simulate_config_json(const CommonFlags& common, const SimulateFlags& flags) {
  return json{{"command", "simulate"},
              {"experiment", flags.experiment},
              {"preset", flags.preset},
              {"grid_n", flags.grid_n},
              {"links", flags.links},
              {"modes", flags.modes},
              {"methods", flags.methods},
              {"n_replicates", flags.n_replicates},
              {"ground_truth_draws", flags.ground_truth_draws},
              {"d", flags.d},
              {"cov_n", flags.cov_n},
              {"bootstrap", flags.bootstrap},
              {"beta_fixed", flags.beta_fixed},
              {"cov_link", flags.cov_link},
              {"cov_methods", flags.cov_methods},
              {"nn_iters", flags.nn_iters},
              {"nn_lr", flags.nn_lr},
              {"seed", common.seed},
              {"format", common.format}};
}

void apply_config_json(const json& j, CommonFlags& common, SimulateFlags& flags) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("experiment", flags.experiment);
  get("preset", flags.preset);
  get("grid_n", flags.grid_n);
  get("links", flags.links);
  get("modes", flags.modes);
  get("methods", flags.methods);
  get("n_replicates", flags.n_replicates);
  get("ground_truth_draws", flags.ground_truth_draws);
  get("d", flags.d);
  get("cov_n", flags.cov_n);
  get("bootstrap", flags.bootstrap);
  get("beta_fixed", flags.beta_fixed);
  get("cov_link", flags.cov_link);
  get("cov_methods", flags.cov_methods);
  get("nn_iters", flags.nn_iters);
  get("nn_lr", flags.nn_lr);
  get("seed", common.seed);
  get("format", common.format);
}

int run_simulate(CommonFlags common, SimulateFlags flags) {
  if (!flags.config_path.empty()) {
    std::ifstream in(flags.config_path);
    if (!in) {
      emit_error("config", "cannot open config: " + flags.config_path);
      return kExitConfig;
    }
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) {
      emit_error("config", "invalid JSON config");
      return kExitConfig;
    }
    if (j.contains("config")) j = j.at("config");  // accept manifests
    apply_config_json(j, common, flags);
  }
  if (flags.preset == "paper-rmse") {
    flags.experiment = "rmse";
    flags.grid_n = "300,900,2700";
    flags.links = "lin,square,cbrt,sin";
    flags.modes = "stratified,joint";
    if (flags.n_replicates == 0) flags.n_replicates = 900;
  } else if (flags.preset == "paper-coverage") {
    flags.experiment = "coverage";
    flags.cov_n = 2700;
    flags.bootstrap = 200;
    if (flags.n_replicates == 0) flags.n_replicates = 100;
  } else if (!flags.preset.empty()) {
    emit_error("config", "unknown preset: " + flags.preset);
    return kExitConfig;
  }
  if (flags.n_replicates == 0) flags.n_replicates = 100;

  const json config = simulate_config_json(common, flags);
  const std::string config_str = config.dump(2);
  const auto t0 = std::chrono::steady_clock::now();

  fs::create_directories(common.out_dir);
  const fs::path out_dir(common.out_dir);

  dope::MethodOptions mopts;
  mopts.train.iterations = flags.nn_iters;
  mopts.train.learning_rate = flags.nn_lr;

  std::vector<std::string> outputs;
  try {
    dope::ThreadPool pool(common.threads);
    if (flags.experiment == "rmse") {
      dope::RmseGrid grid;
      for (const auto& s : split_list(flags.grid_n))
        grid.sample_sizes.push_back(static_cast<std::size_t>(std::stoul(s)));
      for (const auto& s : split_list(flags.links))
        grid.links.push_back(dope::link_from_name(s));
      for (const auto& s : split_list(flags.modes))
        grid.modes.push_back(mode_from_name(s));
      grid.methods = split_list(flags.methods);

      dope::SimConfig cfg;
      cfg.d = flags.d;
      cfg.N = flags.n_replicates;
      cfg.seed = common.seed;
      cfg.ground_truth_draws = flags.ground_truth_draws;
      cfg.beta_mode = dope::BetaMode::random;
      cfg.n = 300;  // overridden per cell by the grid

      const dope::RmseTable table = dope::run_rmse_experiment(grid, cfg, mopts, &pool);
      if (common.format != "json") {
        write_file(out_dir / "rmse.csv", dope::rmse_table_csv(table));
        outputs.push_back("rmse.csv");
      }
      if (common.format != "csv") {
        write_file(out_dir / "rmse.json",
                   dope::rmse_table_json(table, config.dump()));
        outputs.push_back("rmse.json");
      }
    } else if (flags.experiment == "coverage") {
      dope::SimConfig cfg;
      cfg.n = flags.cov_n;
      cfg.d = flags.d;
      cfg.link = dope::link_from_name(flags.cov_link);
      cfg.N = flags.n_replicates;
      cfg.seed = common.seed;
      cfg.ground_truth_draws = flags.ground_truth_draws;
      cfg.beta_mode = dope::BetaMode::fixed;
      for (const auto& s : split_list(flags.beta_fixed))
        cfg.beta_fixed.push_back(std::stod(s));
      if (cfg.beta_fixed.size() != static_cast<std::size_t>(flags.d)) {
        emit_error("config", "--beta-fixed needs exactly --d values");
        return kExitConfig;
      }
      mopts.mode = dope::RegressionMode::joint;

      const dope::CoverageTable table = dope::run_coverage_experiment(
          cfg, split_list(flags.cov_methods), mopts, flags.bootstrap, 0.95, &pool);
      if (common.format != "json") {
        write_file(out_dir / "coverage.csv", dope::coverage_table_csv(table));
        outputs.push_back("coverage.csv");
      }
      if (common.format != "csv") {
        write_file(out_dir / "coverage.json",
                   dope::coverage_table_json(table, config.dump()));
        outputs.push_back("coverage.json");
      }
    } else {
      emit_error("config", "unknown experiment: " + flags.experiment);
      return kExitConfig;
    }
  } catch (const dope::Error& e) {
    emit_error(is_data_error(e) ? "data" : "config", e.what());
    return is_data_error(e) ? kExitData : kExitConfig;
  }

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json manifest{{"config", config},
                {"config_sha256", dope::sha256_hex(config_str)},
                {"seed", common.seed},
                {"outputs", outputs},
                {"wall_seconds", wall}};
  write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
  std::cout << manifest.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// oracle-check

int run_oracle_check(const CommonFlags& common, const std::string& suite,
                     int trials, const std::string& out_file) {
  if (trials <= 0) {
    emit_error("config", "--trials must be positive");
    return kExitConfig;
  }
  json config{{"command", "oracle-check"},
              {"suite", suite},
              {"trials", trials},
              {"seed", common.seed}};
  try {
    const auto suites = dope::run_oracle_suites(suite, trials, common.seed);
    const std::string out = dope::suites_json(suites, config.dump());
    std::cout << out;
    if (!out_file.empty()) write_file(out_file, out);
    for (const auto& s : suites)
      if (!s.pass) return kExitSuiteFailure;
  } catch (const dope::Error& e) {
    emit_error("config", e.what());
    return kExitConfig;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Covariate-adjusted treatment effect estimation"};
  app.require_subcommand(1);

  CommonFlags common;
  app.add_option("--seed", common.seed, "base RNG seed");
  app.add_option("--threads", common.threads, "worker thread cap");
  app.add_option("--out-dir", common.out_dir, "output directory");
  app.add_option("--format", common.format, "csv | json | both");

  EstimateFlags est;
  CLI::App* estimate = app.add_subcommand("estimate", "estimate effects from a CSV");
  estimate->add_option("--data", est.data, "input CSV")->required();
  estimate->add_option("--treatment-col", est.treatment_col)->required();
  estimate->add_option("--outcome-col", est.outcome_col)->required();
  estimate->add_option("--methods", est.methods);
  estimate->add_option("--bootstrap", est.bootstrap);
  estimate->add_option("--ci", est.ci, "normal | percentile");
  estimate->add_option("--clip", est.clip, "lo,hi");
  estimate->add_option("--impute", est.impute, "mean | drop50");
  estimate->add_option("--mode", est.mode, "stratified | joint");
  estimate->add_option("--nn-loss", est.nn_loss, "mse | bce");
  estimate->add_option("--nn-iters", est.nn_iters);
  estimate->add_option("--nn-lr", est.nn_lr);
  estimate->add_option("--treatment-order", est.treatment_order);
  estimate->add_option("--target-arm", est.target_arm);
  estimate->add_option("--contrast-arm", est.contrast_arm);
  estimate->add_option("--out-file", est.out_file);

  SimulateFlags sim;
  CLI::App* simulate = app.add_subcommand("simulate", "run experiment grids");
  simulate->add_option("--experiment", sim.experiment, "rmse | coverage");
  simulate->add_option("--preset", sim.preset, "paper-rmse | paper-coverage");
  simulate->add_option("--config", sim.config_path, "JSON config or manifest");
  simulate->add_option("--grid-n", sim.grid_n);
  simulate->add_option("--links", sim.links);
  simulate->add_option("--modes", sim.modes);
  simulate->add_option("--methods", sim.methods);
  simulate->add_option("--n-replicates", sim.n_replicates);
  simulate->add_option("--ground-truth-draws", sim.ground_truth_draws);
  simulate->add_option("--d", sim.d);
  simulate->add_option("--cov-n", sim.cov_n);
  simulate->add_option("--bootstrap", sim.bootstrap);
  simulate->add_option("--beta-fixed", sim.beta_fixed);
  simulate->add_option("--cov-link", sim.cov_link);
  simulate->add_option("--cov-methods", sim.cov_methods);
  simulate->add_option("--nn-iters", sim.nn_iters);
  simulate->add_option("--nn-lr", sim.nn_lr);

  std::string suite = "all";
  int trials = 100;
  std::string oracle_out;
  CLI::App* oracle = app.add_subcommand("oracle-check", "run exact identity suites");
  oracle->add_option("--suite", suite,
                     "lemma1 | lemma2 | projection | symmetric | si-gradient | all");
  oracle->add_option("--trials", trials);
  oracle->add_option("--out-file", oracle_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    emit_error("config", e.what());
    return kExitConfig;
  }

  try {
    if (estimate->parsed()) return run_estimate(common, est);
    if (simulate->parsed()) return run_simulate(common, sim);
    if (oracle->parsed()) return run_oracle_check(common, suite, trials, oracle_out);
  } catch (const std::exception& e) {
    emit_error("internal", e.what());
    return kExitConfig;
  }
  emit_error("config", "no subcommand");
  return kExitConfig;
}
