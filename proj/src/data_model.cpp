#include "dope/data_model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>

#include "dope/rng.hpp"
#include "dope/summation.hpp"

namespace dope {

int TreatmentLabels::id_of(const std::string& display) const {
  auto it = ids_.find(display);
  if (it == ids_.end()) throw Error("unknown treatment label '" + display + "'");
  return it->second;
}

const std::string& TreatmentLabels::display_of(int id) const {
  if (id < 0 || id >= count()) throw Error("treatment id out of range");
  return displays_[static_cast<std::size_t>(id)];
}

int TreatmentLabels::intern(const std::string& display) {
  auto it = ids_.find(display);
  if (it != ids_.end()) return it->second;
  const int id = count();
  displays_.push_back(display);
  ids_.emplace(display, id);
  return id;
}

void ObservationTable::validate() const {
  const std::size_t rows = outcomes.size();
  if (rows == 0) throw TooFewRows("table has no rows");
  if (column_names.empty()) throw Error("table has no covariate columns");
  if (treatments.size() != rows || covariates.size() != rows * k())
    throw DimensionMismatch("table field lengths disagree");
  for (double v : covariates)
    if (!std::isfinite(v)) throw Error("non-finite covariate after ingestion");
  for (double v : outcomes)
    if (!std::isfinite(v)) throw Error("non-finite outcome");
}

ObservationTable ObservationTable::subset(std::span<const std::size_t> rows) const {
  ObservationTable out;
  out.column_names = column_names;
  out.labels = labels;
  out.treatments.reserve(rows.size());
  out.outcomes.reserve(rows.size());
  out.covariates.reserve(rows.size() * k());
  for (std::size_t i : rows) {
    out.treatments.push_back(treatments[i]);
    out.outcomes.push_back(outcomes[i]);
    const auto r = row(i);
    out.covariates.insert(out.covariates.end(), r.begin(), r.end());
  }
  return out;
}

void ContrastSpec::validate(const TreatmentLabels& labels) const {
  bool any_nonzero = false;
  for (const auto& [t, c] : coefficients) {
    if (t < 0 || t >= labels.count()) throw Error("contrast names an invalid treatment id");
    if (c != 0.0) any_nonzero = true;
  }
  if (!any_nonzero) throw Error("contrast has no nonzero coefficient");
}

ContrastSpec ContrastSpec::difference(int t1, int t0) {
  ContrastSpec spec;
  spec.coefficients[t1] = 1.0;
  spec.coefficients[t0] = -1.0;
  return spec;
}

ContrastSpec ContrastSpec::single(int t) {
  ContrastSpec spec;
  spec.coefficients[t] = 1.0;
  return spec;
}

namespace {

// RFC-4180-ish: quoted fields may contain commas, quotes doubled. Accepts
// both \n and \r\n line endings.
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (in_quotes) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(ch);
      }
    } else if (ch == '"') {
      in_quotes = true;
    } else if (ch == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(ch);
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

bool is_missing_marker(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.empty()) return true;
  if (s.size() == 2 && (s[0] == 'N' || s[0] == 'n') && (s[1] == 'A' || s[1] == 'a'))
    return true;
  return false;
}

std::optional<double> parse_number(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return std::nullopt;
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace

ObservationTable load_csv(const std::string& path, const IngestionOptions& opts) {
  if (opts.missing_policy == MissingPolicy::drop_then_impute &&
      !(opts.drop_threshold > 0.0 && opts.drop_threshold < 1.0))
    throw Error("drop threshold must be in (0,1)");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open file: " + path);

  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.size() < 2) throw TooFewRows("CSV needs a header and at least one data row");

  const std::vector<std::string> header = split_csv_line(lines[0]);
  auto col_index = [&](const std::string& name) -> std::size_t {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (trim(header[j]) == name) return j;
    throw MissingColumn(name);
  };
  const std::size_t treat_col = col_index(opts.treatment_column);
  const std::size_t out_col = col_index(opts.outcome_column);
  if (treat_col == out_col) throw Error("treatment and outcome must be distinct columns");

  std::vector<std::size_t> cov_cols;
  for (std::size_t j = 0; j < header.size(); ++j)
    if (j != treat_col && j != out_col) cov_cols.push_back(j);
  if (cov_cols.empty()) throw Error("CSV has no covariate columns");

  ObservationTable table;
  if (opts.treatment_order)
    for (const auto& label : *opts.treatment_order) table.labels.intern(label);

  const std::size_t n = lines.size() - 1;
  const std::size_t k_all = cov_cols.size();
  // NaN marks a missing covariate cell until imputation resolves it.
  std::vector<double> cells(n * k_all);
  std::vector<std::size_t> missing_count(k_all, 0);

  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<std::string> fields = split_csv_line(lines[i + 1]);
    if (fields.size() != header.size())
      throw Error("row " + std::to_string(i + 1) + " has " +
                  std::to_string(fields.size()) + " fields, header has " +
                  std::to_string(header.size()));

    const std::string treat_text = trim(fields[treat_col]);
    if (is_missing_marker(treat_text))
      throw NonNumericCell(i + 1, treat_col, "(missing treatment)");
    if (opts.treatment_order) {
      // explicit order: unknown labels are an error
      table.treatments.push_back(table.labels.id_of(treat_text));
    } else {
      table.treatments.push_back(table.labels.intern(treat_text));
    }

    const auto y = parse_number(fields[out_col]);
    if (!y) throw NonNumericCell(i + 1, out_col, fields[out_col]);
    table.outcomes.push_back(*y);

    for (std::size_t c = 0; c < k_all; ++c) {
      const std::string& raw = fields[cov_cols[c]];
      if (is_missing_marker(raw)) {
        cells[i * k_all + c] = std::numeric_limits<double>::quiet_NaN();
        ++missing_count[c];
      } else {
        const auto v = parse_number(raw);
        if (!v) throw NonNumericCell(i + 1, cov_cols[c], raw);
        cells[i * k_all + c] = *v;
      }
    }
  }

  // which covariate columns survive
  std::vector<std::size_t> kept;
  for (std::size_t c = 0; c < k_all; ++c) {
    if (opts.missing_policy == MissingPolicy::drop_then_impute) {
      const double frac = static_cast<double>(missing_count[c]) / static_cast<double>(n);
      if (frac > opts.drop_threshold) continue;
    }
    kept.push_back(c);
  }
  if (kept.empty()) throw EmptyAfterDrop();

  // column means over observed cells only
  std::vector<double> means(kept.size(), 0.0);
  for (std::size_t j = 0; j < kept.size(); ++j) {
    const std::size_t c = kept[j];
    KahanSum sum;
    std::size_t observed = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = cells[i * k_all + c];
      if (!std::isnan(v)) {
        sum.add(v);
        ++observed;
      }
    }
    if (observed == 0)
      throw Error("column '" + trim(header[cov_cols[c]]) + "' has no observed values");
    means[j] = sum.value() / static_cast<double>(observed);
  }

  table.column_names.reserve(kept.size());
  for (std::size_t c : kept) table.column_names.push_back(trim(header[cov_cols[c]]));
  table.covariates.resize(n * kept.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < kept.size(); ++j) {
      const double v = cells[i * k_all + kept[j]];
      table.covariates[i * kept.size() + j] = std::isnan(v) ? means[j] : v;
    }

  table.validate();
  return table;
}

void save_csv(const ObservationTable& table, const std::string& path,
              const std::string& treatment_column,
              const std::string& outcome_column) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write file: " + path);
  out << treatment_column << ',' << outcome_column;
  for (const auto& name : table.column_names) out << ',' << name;
  out << '\n';
  char buf[40];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf;
  };
  for (std::size_t i = 0; i < table.n(); ++i) {
    out << table.labels.display_of(table.treatments[i]) << ',';
    put(table.outcomes[i]);
    for (double v : table.row(i)) {
      out << ',';
      put(v);
    }
    out << '\n';
  }
}

FoldAssignment assign_folds(std::size_t n, int K, std::uint64_t seed) {
  if (K < 2) throw BadFoldConfig("K must be >= 2");
  if (n < static_cast<std::size_t>(K))
    throw TooFewRows("n < K: cannot form nonempty folds");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(child_seed(seed, 0x666f6c64, n, static_cast<std::uint64_t>(K)));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(order[i - 1], order[j]);
  }
  FoldAssignment fa;
  fa.K = K;
  fa.fold_of.resize(n);
  for (std::size_t pos = 0; pos < n; ++pos)
    fa.fold_of[order[pos]] = static_cast<int>(pos % static_cast<std::size_t>(K));
  return fa;
}

std::vector<std::vector<std::size_t>> FoldAssignment::folds() const {
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(K));
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    out[static_cast<std::size_t>(fold_of[i])].push_back(i);
  return out;
}

std::vector<std::size_t> stratum_rows(const ObservationTable& table, int t) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < table.n(); ++i)
    if (table.treatments[i] == t) rows.push_back(i);
  return rows;
}

ObservationTable strata(const ObservationTable& table, int t) {
  if (t < 0 || t >= table.labels.count()) throw Error("invalid treatment id");
  const auto rows = stratum_rows(table, t);
  if (rows.empty()) throw EmptyStratum(t);
  return table.subset(rows);
}

}  // namespace dope
