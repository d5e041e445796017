#pragma once

// Shared estimate-row CSV schema and Markdown regression tables in the usual
// "coefficient-stars-(SE)" layout.

#include <algorithm>
#include <cctype>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cfdml/baselines.hpp"
#include "cfdml/csv.hpp"
#include "cfdml/dml.hpp"
#include "cfdml/error.hpp"
#include "cfdml/fixed_effects.hpp"
#include "cfdml/stats.hpp"

namespace cfdml::report {

/// One reported coefficient. `fixed_effects` lists the absorbed keys.
struct EstimateRow {
  std::string variable;
  std::string label;
  double theta = 0.0;
  double se = 0.0;
  double p_value = 1.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t n = 0;
  int folds = 0;
  bool controls = true;
  std::vector<std::string> fixed_effects;

  std::string stars() const { return stats::stars(p_value); }
};

inline const std::vector<std::string>& estimate_columns() {
  static const std::vector<std::string> cols{"variable", "label",   "theta", "se",       "p_value",      "stars",
                                             "ci_low",   "ci_high", "n",     "folds",    "controls",     "fixed_effects"};
  return cols;
}

inline EstimateRow from_dml(const dml::DmlEstimate& e, const dml::DmlConfig& config, const std::string& variable) {
  return {variable, e.label,  e.theta, e.se, e.p_value, e.ci_low, e.ci_high,
          e.n,      e.folds,  true,    config.fe_keys};
}

inline EstimateRow from_mediation(const fe::MediationResult& r, const fe::FixedEffects& fx) {
  std::vector<std::string> keys;
  if (fx.firm) keys.push_back("firm");
  if (fx.year) keys.push_back("year");
  return {r.treatment, r.mediator, r.coefficient, r.robust_se, r.p_value, r.ci_low(), r.ci_high(),
          r.n,         0,          true,          keys};
}

inline EstimateRow from_psm(const baseline::PsmResult& r, const std::string& variable, std::size_t n,
                            const std::vector<std::string>& fe_keys) {
  return {variable, "PSM (ATT)", r.att, r.se, r.p_value, r.att - 1.96 * r.se, r.att + 1.96 * r.se, n, 0, true, fe_keys};
}

inline EstimateRow from_ipw(const baseline::IpwResult& r, const std::string& variable, std::size_t n,
                            const std::vector<std::string>& fe_keys) {
  return {variable, "IPW (ATE)", r.ate, r.se, r.p_value, r.ate - 1.96 * r.se, r.ate + 1.96 * r.se, n, 0, true, fe_keys};
}

inline std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

inline void write_estimates(std::ostream& out, const std::vector<EstimateRow>& rows) {
  csv::write_record(out, estimate_columns());
  for (const auto& r : rows)
    csv::write_record(out, {r.variable, r.label, csv::format_double(r.theta), csv::format_double(r.se),
                            csv::format_double(r.p_value), r.stars(), csv::format_double(r.ci_low),
                            csv::format_double(r.ci_high), std::to_string(r.n), std::to_string(r.folds),
                            r.controls ? "YES" : "NO", join(r.fixed_effects, ";")});
}

inline std::string estimates_csv(const std::vector<EstimateRow>& rows) {
  std::ostringstream s;
  write_estimates(s, rows);
  return s.str();
}

/// Parses an estimate CSV; missing or malformed columns are render errors.
inline std::vector<EstimateRow> read_estimates(const csv::Document& doc) {
  std::vector<std::size_t> at;
  for (const auto& name : estimate_columns()) {
    auto it = std::find(doc.header.begin(), doc.header.end(), name);
    require(it != doc.header.end(), Errc::render, "estimate table lacks column '" + name + "'");
    at.push_back(static_cast<std::size_t>(it - doc.header.begin()));
  }
  std::vector<EstimateRow> out;
  for (std::size_t r = 0; r < doc.rows.size(); ++r) {
    const auto& row = doc.rows[r];
    auto cell = [&](std::size_t k) -> const std::string& {
      require(at[k] < row.size(), Errc::render,
              "row " + std::to_string(r + 1) + " lacks column '" + estimate_columns()[k] + "'");
      return row[at[k]];
    };
    auto number = [&](std::size_t k) {
      const auto v = csv::parse_double(cell(k));
      require(v.has_value(), Errc::render,
              "column '" + estimate_columns()[k] + "' row " + std::to_string(r + 1) + ": not a number");
      return *v;
    };
    EstimateRow e;
    e.variable = cell(0);
    e.label = cell(1);
    e.theta = number(2);
    e.se = number(3);
    e.p_value = number(4);
    e.ci_low = number(6);
    e.ci_high = number(7);
    const double n = number(8), folds = number(9);
    require(n >= 0 && n == std::floor(n) && folds >= 0 && folds == std::floor(folds), Errc::render,
            "row " + std::to_string(r + 1) + ": n and folds must be nonnegative integers");
    e.n = static_cast<std::size_t>(n);
    e.folds = static_cast<int>(folds);
    const auto& c = cell(10);
    require(c == "YES" || c == "NO", Errc::render, "column 'controls' must be YES or NO");
    e.controls = c == "YES";
    std::string fx = cell(11), part;
    std::istringstream parts(fx);
    while (std::getline(parts, part, ';'))
      if (!part.empty()) e.fixed_effects.push_back(part);
    out.push_back(std::move(e));
  }
  return out;
}

/// "-0.3726***(0.1036)"
inline std::string cell(const EstimateRow& r, int digits = 4) {
  return csv::format_fixed(r.theta, digits) + r.stars() + "(" + csv::format_fixed(r.se, digits) + ")";
}

enum class Section { main, robustness, heterogeneity, temporal, mediation, baseline };

inline std::string title(Section s) {
  switch (s) {
    case Section::main: return "Baseline estimates";
    case Section::robustness: return "Robustness checks";
    case Section::heterogeneity: return "Heterogeneity";
    case Section::temporal: return "Dynamic effects";
    case Section::mediation: return "Mechanism tests";
    case Section::baseline: return "Propensity-score baselines";
  }
  return "";
}

inline Section parse_section(const std::string& s) {
  if (s == "main") return Section::main;
  if (s == "robustness") return Section::robustness;
  if (s == "heterogeneity") return Section::heterogeneity;
  if (s == "temporal") return Section::temporal;
  if (s == "mediation") return Section::mediation;
  if (s == "baseline") return Section::baseline;
  fail(Errc::schema, "unknown report section '" + s + "'");
}

inline std::string fe_row_name(std::string key) {
  if (!key.empty()) key[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(key[0])));
  return key + " FE";
}

/// One column per estimate, one coefficient row per distinct variable,
/// then Controls / fixed-effect YES-NO rows and observation counts.
inline std::string render_table(const std::vector<EstimateRow>& rows, Section section) {
  require(!rows.empty(), Errc::render, "no estimates to render");
  std::vector<std::string> variables, keys;
  for (const auto& r : rows) {
    if (std::find(variables.begin(), variables.end(), r.variable) == variables.end()) variables.push_back(r.variable);
    for (const auto& k : r.fixed_effects)
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  }
  std::ostringstream md;
  md << "### " << title(section) << "\n\n|  |";
  for (std::size_t c = 0; c < rows.size(); ++c) md << " (" << c + 1 << ") " << rows[c].label << " |";
  md << "\n|---|";
  for (std::size_t c = 0; c < rows.size(); ++c) md << "---|";
  md << "\n";
  for (const auto& v : variables) {
    md << "| " << v << " |";
    for (const auto& r : rows) md << " " << (r.variable == v ? cell(r) : "") << " |";
    md << "\n";
  }
  md << "| Controls |";
  for (const auto& r : rows) md << " " << (r.controls ? "YES" : "NO") << " |";
  md << "\n";
  for (const auto& k : keys) {
    md << "| " << fe_row_name(k) << " |";
    for (const auto& r : rows) {
      const bool has = std::find(r.fixed_effects.begin(), r.fixed_effects.end(), k) != r.fixed_effects.end();
      md << " " << (has ? "YES" : "NO") << " |";
    }
    md << "\n";
  }
  md << "| Observations |";
  for (const auto& r : rows) md << " " << r.n << " |";
  md << "\n\nNotes: *** p<0.01, ** p<0.05, * p<0.1; robust standard errors in parentheses.\n";
  return md.str();
}

struct ReportPart {
  Section section;
  std::vector<EstimateRow> rows;
};

inline std::string render_report(const std::vector<ReportPart>& parts, const std::string& heading = "Results") {
  require(!parts.empty(), Errc::render, "empty estimate set");
  std::string out = "# " + heading + "\n";
  for (const auto& p : parts) out += "\n" + render_table(p.rows, p.section);
  return out;
}

}  // namespace cfdml::report
