#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "dope/data_model.hpp"
#include "test_util.hpp"

using namespace dope;
namespace fs = std::filesystem;

namespace {

fs::path write_temp_csv(const std::string& name, const std::string& content) {
  const fs::path path = fs::temp_directory_path() / name;
  std::ofstream out(path, std::ios::binary);
  out << content;
  return path;
}

IngestionOptions basic_opts() {
  IngestionOptions opts;
  opts.treatment_column = "t";
  opts.outcome_column = "y";
  return opts;
}

}  // namespace

TEST_CASE("load_csv passes a clean 3-row file through unchanged") {
  const auto path = write_temp_csv("dm_clean.csv",
                                   "t,y,a,b\n"
                                   "0,1.5,0.25,2\n"
                                   "1,2.5,0.5,3\n"
                                   "0,3.5,0.75,4\n");
  const ObservationTable table = load_csv(path.string(), basic_opts());
  CHECK(table.n() == 3);
  CHECK(table.k() == 2);
  CHECK(table.column_names == std::vector<std::string>{"a", "b"});
  CHECK(table.outcomes == std::vector<double>{1.5, 2.5, 3.5});
  CHECK(table.treatments == std::vector<int>{0, 1, 0});
  CHECK(table.row(1)[0] == 0.5);
  CHECK(table.row(2)[1] == 4.0);
}

TEST_CASE("mean imputation fills missing cells with the observed-cell mean") {
  const auto path = write_temp_csv("dm_impute.csv",
                                   "t,y,a\n"
                                   "0,1,1\n"
                                   "1,2,NA\n"
                                   "0,3,3\n");
  const ObservationTable table = load_csv(path.string(), basic_opts());
  // independent one-pass oracle over observed cells: (1 + 3) / 2
  CHECK(table.row(1)[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(table.row(0)[0] == 1.0);
  CHECK(table.row(2)[0] == 3.0);
}

TEST_CASE("drop_then_impute removes columns above the missing threshold") {
  // column 'a': 3/5 = 60% missing -> dropped at threshold 0.5;
  // column 'b': 1/5 missing -> kept, imputed with mean of observed
  const auto path = write_temp_csv("dm_drop.csv",
                                   "t,y,a,b\n"
                                   "0,1,NA,2\n"
                                   "1,2,1,na\n"
                                   "0,3,NA,4\n"
                                   "1,4,NA,6\n"
                                   "0,5,2,8\n");
  IngestionOptions opts = basic_opts();
  opts.missing_policy = MissingPolicy::drop_then_impute;
  opts.drop_threshold = 0.5;
  const ObservationTable table = load_csv(path.string(), opts);
  CHECK(table.column_names == std::vector<std::string>{"b"});
  CHECK(table.row(1)[0] == doctest::Approx(5.0).epsilon(1e-15));  // (2+4+6+8)/4
}

TEST_CASE("drop policy removing every covariate raises EmptyAfterDrop") {
  const auto path = write_temp_csv("dm_all_drop.csv",
                                   "t,y,a\n"
                                   "0,1,NA\n"
                                   "1,2,NA\n"
                                   "0,3,7\n");
  IngestionOptions opts = basic_opts();
  opts.missing_policy = MissingPolicy::drop_then_impute;
  opts.drop_threshold = 0.5;
  CHECK_THROWS_AS(load_csv(path.string(), opts), EmptyAfterDrop);
}

TEST_CASE("named column errors") {
  const auto path = write_temp_csv("dm_cols.csv", "t,y,a\n0,1,2\n");
  IngestionOptions opts = basic_opts();
  opts.treatment_column = "missing";
  CHECK_THROWS_AS(load_csv(path.string(), opts), MissingColumn);

  const auto bad = write_temp_csv("dm_bad_cell.csv", "t,y,a\n0,1,abc\n");
  CHECK_THROWS_AS(load_csv(bad.string(), basic_opts()), NonNumericCell);
}

TEST_CASE("treatment labels map in first-appearance order with override") {
  const auto path = write_temp_csv("dm_labels.csv",
                                   "t,y,a\n"
                                   "ctrl,1,1\n"
                                   "treat,2,2\n"
                                   "ctrl,3,3\n");
  const ObservationTable table = load_csv(path.string(), basic_opts());
  CHECK(table.labels.display_of(0) == "ctrl");
  CHECK(table.labels.display_of(1) == "treat");
  CHECK(table.treatments == std::vector<int>{0, 1, 0});

  IngestionOptions opts = basic_opts();
  opts.treatment_order = std::vector<std::string>{"treat", "ctrl"};
  const ObservationTable flipped = load_csv(path.string(), opts);
  CHECK(flipped.labels.display_of(0) == "treat");
  CHECK(flipped.treatments == std::vector<int>{1, 0, 1});
}

TEST_CASE("quoted fields and CRLF are handled") {
  const auto path = write_temp_csv("dm_quotes.csv",
                                   "t,y,\"a,x\"\r\n"
                                   "0,1,2\r\n"
                                   "1,2,3\r\n");
  const ObservationTable table = load_csv(path.string(), basic_opts());
  CHECK(table.column_names == std::vector<std::string>{"a,x"});
  CHECK(table.n() == 2);
}

TEST_CASE("ingestion round-trips: load, save, reload is identical") {
  Rng rng(123);
  const auto path = write_temp_csv("dm_round.csv", [&] {
    std::string s = "t,y,a,b\n";
    for (int i = 0; i < 20; ++i) {
      s += std::to_string(i % 2) + "," + std::to_string(rng.normal(0, 1)) + "," +
           std::to_string(rng.uniform()) + "," + std::to_string(rng.uniform()) + "\n";
    }
    return s;
  }());
  IngestionOptions opts = basic_opts();
  const ObservationTable first = load_csv(path.string(), opts);
  const fs::path out = fs::temp_directory_path() / "dm_round_out.csv";
  save_csv(first, out.string(), "t", "y");
  const ObservationTable second = load_csv(out.string(), opts);
  CHECK(first.treatments == second.treatments);
  CHECK(first.outcomes == second.outcomes);
  CHECK(first.covariates == second.covariates);
  CHECK(first.column_names == second.column_names);
}

TEST_CASE("mean_impute leaves fully observed columns bitwise unchanged") {
  std::string content = "t,y,a\n";
  Rng rng(5);
  std::vector<double> values;
  char buf[40];
  for (int i = 0; i < 10; ++i) {
    const double v = rng.normal(0.0, 1.0);
    values.push_back(v);
    std::snprintf(buf, sizeof buf, "%.17g", v);
    content += std::to_string(i % 2) + ",1," + buf + "\n";
  }
  const auto path = write_temp_csv("dm_bitwise.csv", content);
  const ObservationTable table = load_csv(path.string(), basic_opts());
  for (int i = 0; i < 10; ++i)
    CHECK(table.row(static_cast<std::size_t>(i))[0] ==
          values[static_cast<std::size_t>(i)]);
}

TEST_CASE("assign_folds balances and is deterministic") {
  {
    const FoldAssignment fa = assign_folds(8, 4, 1);
    std::map<int, int> sizes;
    for (int f : fa.fold_of) ++sizes[f];
    for (const auto& [fold, size] : sizes) CHECK(size == 2);
  }
  {
    const FoldAssignment fa = assign_folds(7, 3, 2);
    std::multiset<int> sizes;
    std::map<int, int> counter;
    for (int f : fa.fold_of) ++counter[f];
    for (const auto& [fold, size] : counter) sizes.insert(size);
    CHECK(sizes == std::multiset<int>{2, 2, 3});
  }
  const FoldAssignment a = assign_folds(100, 3, 7);
  const FoldAssignment b = assign_folds(100, 3, 7);
  CHECK(a.fold_of == b.fold_of);
  CHECK_THROWS_AS(assign_folds(2, 3, 0), TooFewRows);
}

TEST_CASE("every index lands in exactly one fold with balance <= 1") {
  const std::vector<std::tuple<std::size_t, int, std::uint64_t>> cases{
      {37, 5, 3}, {100, 7, 9}, {12, 2, 11}};
  for (const auto& [n, K, seed] : cases) {
    const FoldAssignment fa = assign_folds(n, K, seed);
    REQUIRE(fa.fold_of.size() == n);
    std::vector<int> counts(static_cast<std::size_t>(K), 0);
    for (int f : fa.fold_of) {
      REQUIRE(f >= 0);
      REQUIRE(f < K);
      ++counts[static_cast<std::size_t>(f)];
    }
    const auto [mn, mx] = std::minmax_element(counts.begin(), counts.end());
    CHECK(*mx - *mn <= 1);
    CHECK(*mn >= 1);
  }
}

TEST_CASE("strata filters rows preserving order; union restores the table") {
  const ObservationTable table = testutil::make_table(60, 3, 17);
  const ObservationTable s1 = strata(table, 1);
  for (int t : s1.treatments) CHECK(t == 1);

  // multiset of rows across strata equals the original (comparison oracle:
  // sort all (t, y, w...) tuples)
  const ObservationTable s0 = strata(table, 0);
  std::multiset<std::vector<double>> original, recombined;
  for (std::size_t i = 0; i < table.n(); ++i) {
    std::vector<double> row{static_cast<double>(table.treatments[i]),
                            table.outcomes[i]};
    for (double v : table.row(i)) row.push_back(v);
    original.insert(row);
  }
  for (const ObservationTable* part : {&s0, &s1})
    for (std::size_t i = 0; i < part->n(); ++i) {
      std::vector<double> row{static_cast<double>(part->treatments[i]),
                              part->outcomes[i]};
      for (double v : part->row(i)) row.push_back(v);
      recombined.insert(row);
    }
  CHECK(original == recombined);

  ObservationTable all_treated = table;
  for (auto& t : all_treated.treatments) t = 1;
  CHECK_THROWS_AS(strata(all_treated, 0), EmptyStratum);
}
