#pragma once

// Firm-year panel storage, CSV ingestion and the row/column transformations
// that precede estimation: winsorization, treatment-measure variants and
// design-matrix expansion.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cfdml/csv.hpp"
#include "cfdml/error.hpp"
#include "cfdml/stats.hpp"

namespace cfdml {

enum class Role { outcome, treatment, control, fixed_effect_key, mediator, auxiliary };

inline std::string to_string(Role r) {
  switch (r) {
    case Role::outcome: return "outcome";
    case Role::treatment: return "treatment";
    case Role::control: return "control";
    case Role::fixed_effect_key: return "fixed_effect_key";
    case Role::mediator: return "mediator";
    case Role::auxiliary: return "auxiliary";
  }
  return "auxiliary";
}

inline Role parse_role(const std::string& s) {
  if (s == "outcome") return Role::outcome;
  if (s == "treatment") return Role::treatment;
  if (s == "control") return Role::control;
  if (s == "fixed_effect_key" || s == "fe") return Role::fixed_effect_key;
  if (s == "mediator") return Role::mediator;
  if (s == "auxiliary") return Role::auxiliary;
  fail(Errc::schema, "unknown role '" + s + "'");
}

inline constexpr const char* kProvenanceReal = "real";
inline constexpr const char* kProvenanceGenerated = "generated";

/// Column-major firm-year table. Identifiers live outside the numeric
/// columns; every numeric column carries a role.
class PanelTable {
 public:
  PanelTable() = default;
  PanelTable(std::vector<std::string> firm_ids, std::vector<int> years)
      : firm_ids_(std::move(firm_ids)), years_(std::move(years)) {
    require(firm_ids_.size() == years_.size(), Errc::shape, "firm and year vectors differ in length");
  }

  std::size_t rows() const { return firm_ids_.size(); }
  const std::vector<std::string>& firm_ids() const { return firm_ids_; }
  const std::vector<int>& years() const { return years_; }
  const std::vector<std::string>& column_names() const { return names_; }

  bool has_column(const std::string& name) const { return index_.count(name) > 0; }

  std::span<const double> column(const std::string& name) const { return columns_[locate(name)]; }
  std::vector<double>& mutable_column(const std::string& name) { return columns_[locate(name)]; }

  Role role(const std::string& name) const { return roles_[locate(name)]; }
  void set_role(const std::string& name, Role r) { roles_[locate(name)] = r; }

  void add_column(const std::string& name, Role r, std::vector<double> values) {
    require(!has_column(name), Errc::schema, "column '" + name + "' already present");
    require(values.size() == rows(), Errc::shape,
            "column '" + name + "' has " + std::to_string(values.size()) + " values for " +
                std::to_string(rows()) + " rows");
    index_[name] = names_.size();
    names_.push_back(name);
    roles_.push_back(r);
    columns_.push_back(std::move(values));
  }

  void drop_column(const std::string& name) {
    const std::size_t k = locate(name);
    names_.erase(names_.begin() + static_cast<std::ptrdiff_t>(k));
    roles_.erase(roles_.begin() + static_cast<std::ptrdiff_t>(k));
    columns_.erase(columns_.begin() + static_cast<std::ptrdiff_t>(k));
    reindex();
  }

  std::vector<std::string> names_with_role(Role r) const {
    std::vector<std::string> out;
    for (std::size_t k = 0; k < names_.size(); ++k)
      if (roles_[k] == r) out.push_back(names_[k]);
    return out;
  }

  // Provenance is optional; an empty vector means every row is real.
  bool has_provenance() const { return !provenance_.empty(); }
  const std::vector<std::string>& provenance() const { return provenance_; }
  void set_provenance(std::vector<std::string> p) {
    require(p.empty() || p.size() == rows(), Errc::shape, "provenance length mismatch");
    provenance_ = std::move(p);
  }
  bool is_generated(std::size_t row) const {
    return has_provenance() && provenance_[row] == kProvenanceGenerated;
  }

  PanelTable select_rows(std::span<const std::size_t> idx) const {
    PanelTable out;
    out.names_ = names_;
    out.roles_ = roles_;
    out.index_ = index_;
    out.firm_ids_.reserve(idx.size());
    out.years_.reserve(idx.size());
    for (std::size_t i : idx) {
      require(i < rows(), Errc::size, "row index out of range");
      out.firm_ids_.push_back(firm_ids_[i]);
      out.years_.push_back(years_[i]);
    }
    out.columns_.resize(columns_.size());
    for (std::size_t k = 0; k < columns_.size(); ++k) {
      out.columns_[k].reserve(idx.size());
      for (std::size_t i : idx) out.columns_[k].push_back(columns_[k][i]);
    }
    if (has_provenance()) {
      for (std::size_t i : idx) out.provenance_.push_back(provenance_[i]);
    }
    return out;
  }

  /// Appends rows of `other`, which must carry the same columns in the same order.
  void append(const PanelTable& other) {
    require(other.names_ == names_, Errc::schema, "cannot append tables with different columns");
    firm_ids_.insert(firm_ids_.end(), other.firm_ids_.begin(), other.firm_ids_.end());
    years_.insert(years_.end(), other.years_.begin(), other.years_.end());
    for (std::size_t k = 0; k < columns_.size(); ++k)
      columns_[k].insert(columns_[k].end(), other.columns_[k].begin(), other.columns_[k].end());
    if (has_provenance() || other.has_provenance()) {
      std::vector<std::string> p = has_provenance() ? provenance_
                                                    : std::vector<std::string>(rows() - other.rows(), kProvenanceReal);
      if (other.has_provenance()) p.insert(p.end(), other.provenance_.begin(), other.provenance_.end());
      else p.insert(p.end(), other.rows(), kProvenanceReal);
      provenance_ = std::move(p);
    }
  }

  /// Throws a duplicate error listing every repeated (firm, year) pair.
  void check_unique_keys() const {
    std::map<std::pair<std::string, int>, int> seen;
    for (std::size_t i = 0; i < rows(); ++i) ++seen[{firm_ids_[i], years_[i]}];
    std::string offenders;
    for (const auto& [key, count] : seen) {
      if (count > 1) {
        if (!offenders.empty()) offenders += "; ";
        offenders += "(" + key.first + ", " + std::to_string(key.second) + ") x" + std::to_string(count);
      }
    }
    require(offenders.empty(), Errc::duplicate, "repeated firm-year keys: " + offenders);
  }

 private:
  std::size_t locate(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), Errc::lookup, "unknown column '" + name + "'");
    return it->second;
  }
  void reindex() {
    index_.clear();
    for (std::size_t k = 0; k < names_.size(); ++k) index_[names_[k]] = k;
  }

  std::vector<std::string> firm_ids_;
  std::vector<int> years_;
  std::vector<std::string> names_;
  std::vector<Role> roles_;
  std::vector<std::vector<double>> columns_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::string> provenance_;
};

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

struct Schema {
  std::string firm_column = "firm_id";
  std::string year_column = "year";
  std::vector<std::pair<std::string, Role>> columns;
};

/// {"firm_column": "...", "year_column": "...", "roles": {"col": "role", ...}}
/// Role keys are taken in document order.
inline Schema schema_from_json(const nlohmann::ordered_json& j) {
  Schema s;
  if (j.contains("firm_column")) s.firm_column = j.at("firm_column").get<std::string>();
  if (j.contains("year_column")) s.year_column = j.at("year_column").get<std::string>();
  require(j.contains("roles") && j.at("roles").is_object(), Errc::schema, "schema lacks a 'roles' object");
  for (const auto& [name, role] : j.at("roles").items()) s.columns.emplace_back(name, parse_role(role.get<std::string>()));
  return s;
}

inline nlohmann::ordered_json schema_to_json(const Schema& s) {
  nlohmann::ordered_json j;
  j["firm_column"] = s.firm_column;
  j["year_column"] = s.year_column;
  j["roles"] = nlohmann::ordered_json::object();
  for (const auto& [name, role] : s.columns) j["roles"][name] = to_string(role);
  return j;
}

inline Schema schema_of(const PanelTable& t) {
  Schema s;
  for (const auto& name : t.column_names()) s.columns.emplace_back(name, t.role(name));
  return s;
}

struct IngestReport {
  std::size_t rows_read = 0;
  std::size_t rows_dropped = 0;
  std::vector<std::string> warnings;

  nlohmann::ordered_json to_json() const {
    return {{"rows_read", rows_read}, {"rows_dropped", rows_dropped}, {"warnings", warnings}};
  }
};

struct IngestResult {
  PanelTable table;
  IngestReport report;
};

inline IngestResult ingest_document(const csv::Document& doc, const Schema& schema) {
  auto column_index = [&](const std::string& name) -> std::size_t {
    auto it = std::find(doc.header.begin(), doc.header.end(), name);
    require(it != doc.header.end(), Errc::schema, "missing column '" + name + "'");
    return static_cast<std::size_t>(it - doc.header.begin());
  };
  const std::size_t firm_col = column_index(schema.firm_column);
  const std::size_t year_col = column_index(schema.year_column);
  std::vector<std::size_t> value_cols;
  for (const auto& [name, role] : schema.columns) value_cols.push_back(column_index(name));
  std::optional<std::size_t> prov_col;
  if (auto it = std::find(doc.header.begin(), doc.header.end(), "provenance"); it != doc.header.end())
    prov_col = static_cast<std::size_t>(it - doc.header.begin());

  IngestReport report;
  std::vector<std::string> firms;
  std::vector<int> years;
  std::vector<std::vector<double>> values(schema.columns.size());
  std::vector<std::string> provenance;

  for (std::size_t r = 0; r < doc.rows.size(); ++r) {
    const auto& row = doc.rows[r];
    ++report.rows_read;
    const std::size_t line = r + 2;  // header is line 1
    auto cell = [&](std::size_t c) -> std::string_view {
      return c < row.size() ? std::string_view(row[c]) : std::string_view();
    };
    bool missing = csv::is_missing(cell(firm_col)) || csv::is_missing(cell(year_col));
    for (std::size_t c : value_cols) missing = missing || csv::is_missing(cell(c));
    if (missing) {
      ++report.rows_dropped;
      continue;
    }
    const auto year = csv::parse_double(cell(year_col));
    require(year.has_value() && *year == std::floor(*year), Errc::parse,
            "row " + std::to_string(line) + ", column '" + schema.year_column + "': not an integer year");
    std::vector<double> parsed;
    for (std::size_t k = 0; k < value_cols.size(); ++k) {
      const auto v = csv::parse_double(cell(value_cols[k]));
      require(v.has_value(), Errc::parse,
              "row " + std::to_string(line) + ", column '" + schema.columns[k].first + "': cannot parse '" +
                  std::string(cell(value_cols[k])) + "'");
      parsed.push_back(*v);
    }
    firms.emplace_back(cell(firm_col));
    years.push_back(static_cast<int>(*year));
    for (std::size_t k = 0; k < parsed.size(); ++k) values[k].push_back(parsed[k]);
    if (prov_col) provenance.emplace_back(cell(*prov_col));
  }
  if (report.rows_dropped > 0)
    report.warnings.push_back(std::to_string(report.rows_dropped) + " row(s) dropped for missing required fields");

  PanelTable table(std::move(firms), std::move(years));
  for (std::size_t k = 0; k < schema.columns.size(); ++k)
    table.add_column(schema.columns[k].first, schema.columns[k].second, std::move(values[k]));
  if (prov_col) table.set_provenance(std::move(provenance));
  table.check_unique_keys();
  return {std::move(table), std::move(report)};
}

inline IngestResult ingest_csv(const std::string& path, const Schema& schema) {
  return ingest_document(csv::read_file(path), schema);
}

inline void write_csv(std::ostream& out, const PanelTable& t) {
  csv::Row header{"firm_id", "year"};
  for (const auto& n : t.column_names()) header.push_back(n);
  if (t.has_provenance()) header.push_back("provenance");
  csv::write_record(out, header);
  for (std::size_t i = 0; i < t.rows(); ++i) {
    csv::Row row{t.firm_ids()[i], std::to_string(t.years()[i])};
    for (const auto& n : t.column_names()) row.push_back(csv::format_double(t.column(n)[i]));
    if (t.has_provenance()) row.push_back(t.provenance()[i]);
    csv::write_record(out, row);
  }
}

// ---------------------------------------------------------------------------
// Transformations
// ---------------------------------------------------------------------------

/// Clamps each named column to its pooled nearest-rank [lower, upper] quantiles.
inline PanelTable winsorize(const PanelTable& table, double lower_pct, double upper_pct,
                            const std::vector<std::string>& columns) {
  require(lower_pct >= 0.0 && lower_pct < upper_pct && upper_pct <= 1.0, Errc::domain,
          "winsorize needs 0 <= lower < upper <= 1");
  PanelTable out = table;
  if (out.rows() == 0) return out;
  for (const auto& name : columns) {
    auto& col = out.mutable_column(name);
    std::vector<double> sorted = col;
    std::sort(sorted.begin(), sorted.end());
    const double lo = stats::lower_quantile_sorted(sorted, lower_pct);
    const double hi = stats::upper_quantile_sorted(sorted, upper_pct);
    for (double& v : col) v = std::clamp(v, lo, hi);
  }
  return out;
}

enum class TreatmentVariant { top2to10_over_top1, top2to5_over_top1, second_over_first };

inline TreatmentVariant parse_treatment_variant(const std::string& s) {
  if (s == "top2to10_over_top1") return TreatmentVariant::top2to10_over_top1;
  if (s == "top2to5_over_top1") return TreatmentVariant::top2to5_over_top1;
  if (s == "second_over_first") return TreatmentVariant::second_over_first;
  fail(Errc::schema, "unknown treatment variant '" + s + "'");
}

inline std::string to_string(TreatmentVariant v) {
  switch (v) {
    case TreatmentVariant::top2to10_over_top1: return "top2to10_over_top1";
    case TreatmentVariant::top2to5_over_top1: return "top2to5_over_top1";
    case TreatmentVariant::second_over_first: return "second_over_first";
  }
  return "";
}

struct TreatmentColumn {
  std::vector<double> values;
  std::vector<std::string> warnings;
};

/// Ownership-balance ratios from descending top-10 stakes (one vector per
/// firm-year; shorter vectors are padded with zeros).
inline TreatmentColumn derive_treatment(std::span<const std::vector<double>> stakes, TreatmentVariant variant) {
  std::size_t last = 10;
  if (variant == TreatmentVariant::top2to5_over_top1) last = 5;
  if (variant == TreatmentVariant::second_over_first) last = 2;
  TreatmentColumn out;
  out.values.reserve(stakes.size());
  for (std::size_t r = 0; r < stakes.size(); ++r) {
    const auto& s = stakes[r];
    require(!s.empty() && s[0] > 0.0, Errc::domain,
            "row " + std::to_string(r) + ": largest stake must be positive");
    require(s.size() <= 10, Errc::domain, "row " + std::to_string(r) + ": more than ten stakes");
    for (std::size_t k = 1; k < s.size(); ++k)
      require(s[k] <= s[k - 1] && s[k] >= 0.0, Errc::domain,
              "row " + std::to_string(r) + ": stakes must be nonnegative and ordered descending");
    double others = 0.0;
    for (std::size_t k = 1; k < std::min(last, s.size()); ++k) others += s[k];
    const double ratio = others / s[0];
    if (ratio >= 1.0)
      out.warnings.push_back("row " + std::to_string(r) + ": " + to_string(variant) + " ratio " +
                             csv::format_double(ratio) + " outside [0, 1)");
    out.values.push_back(ratio);
  }
  return out;
}

enum class ColumnOrigin { continuous, square, binary, fe_dummy };

struct ColumnDescriptor {
  std::string name;
  ColumnOrigin origin;
  std::string source;
  double level = 0.0;  // only for fe_dummy
};

struct Design {
  Eigen::MatrixXd X;
  std::vector<ColumnDescriptor> columns;
};

inline bool is_binary(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return v == 0.0 || v == 1.0; });
}

/// Sorted distinct levels of a fixed-effect key.
inline std::vector<double> levels_of(std::span<const double> key) {
  std::set<double> s(key.begin(), key.end());
  return {s.begin(), s.end()};
}

/// Controls (optionally with squares of the non-binary ones) followed by
/// one-hot dummies for every fixed-effect key, reference level = smallest.
/// The identifiers "year" and "firm" may be used as keys unless a column
/// of that name exists.
inline Design expand_design(const PanelTable& table, const std::vector<std::string>& controls, bool add_quadratics,
                            const std::vector<std::string>& fe_keys) {
  const std::size_t n = table.rows();
  std::vector<ColumnDescriptor> desc;
  std::vector<std::vector<double>> cols;
  for (const auto& name : controls) {
    auto x = table.column(name);
    const bool binary = is_binary(x);
    desc.push_back({name, binary ? ColumnOrigin::binary : ColumnOrigin::continuous, name});
    cols.emplace_back(x.begin(), x.end());
  }
  if (add_quadratics) {
    for (const auto& name : controls) {
      auto x = table.column(name);
      if (is_binary(x)) continue;
      std::vector<double> sq(n);
      for (std::size_t i = 0; i < n; ++i) sq[i] = x[i] * x[i];
      desc.push_back({name + "^2", ColumnOrigin::square, name});
      cols.push_back(std::move(sq));
    }
  }
  for (const auto& key : fe_keys) {
    if (!table.has_column(key) && key == "firm") {
      // firm identifiers are opaque strings; levels in lexicographic order
      std::set<std::string> levels(table.firm_ids().begin(), table.firm_ids().end());
      for (auto it = std::next(levels.begin()); it != levels.end(); ++it) {
        std::vector<double> d(n);
        for (std::size_t i = 0; i < n; ++i) d[i] = table.firm_ids()[i] == *it ? 1.0 : 0.0;
        desc.push_back({key + "=" + *it, ColumnOrigin::fe_dummy, key});
        cols.push_back(std::move(d));
      }
      continue;
    }
    std::vector<double> x;
    if (!table.has_column(key) && key == "year") {
      x.assign(table.years().begin(), table.years().end());
    } else {
      require(table.role(key) == Role::fixed_effect_key, Errc::schema,
              "column '" + key + "' is not a fixed_effect_key");
      x.assign(table.column(key).begin(), table.column(key).end());
    }
    const auto levels = levels_of(x);
    for (std::size_t l = 1; l < levels.size(); ++l) {
      std::vector<double> d(n);
      for (std::size_t i = 0; i < n; ++i) d[i] = x[i] == levels[l] ? 1.0 : 0.0;
      desc.push_back({key + "=" + csv::format_double(levels[l]), ColumnOrigin::fe_dummy, key, levels[l]});
      cols.push_back(std::move(d));
    }
  }
  Design out;
  out.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k)
    for (std::size_t i = 0; i < n; ++i) out.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = cols[k][i];
  out.columns = std::move(desc);
  return out;
}

inline Design expand_design(const PanelTable& table, bool add_quadratics, const std::vector<std::string>& fe_keys) {
  return expand_design(table, table.names_with_role(Role::control), add_quadratics, fe_keys);
}

struct ColumnSummary {
  std::string name;
  std::size_t n = 0;
  double mean = 0, median = 0, sd = 0, min = 0, max = 0;
};

inline std::vector<ColumnSummary> describe(const PanelTable& t, const std::vector<std::string>& columns) {
  std::vector<ColumnSummary> out;
  for (const auto& name : columns) {
    auto x = t.column(name);
    ColumnSummary s{name, x.size()};
    if (!x.empty()) {
      s.mean = stats::mean(x);
      s.median = stats::median({x.begin(), x.end()});
      s.sd = stats::sample_sd(x);
      s.min = *std::min_element(x.begin(), x.end());
      s.max = *std::max_element(x.begin(), x.end());
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace cfdml
