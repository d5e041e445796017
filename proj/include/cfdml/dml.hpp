#pragma once

// Cross-fitted partially linear double machine learning:
//   Y = theta * D + g(X) + U,   D = m(X) + V.
// Nuisances E[Y|X] and E[D|X] are predicted out of fold, then theta comes
// from the residual-on-residual regression with an HC1 sandwich SE.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cfdml/error.hpp"
#include "cfdml/learners.hpp"
#include "cfdml/panel.hpp"
#include "cfdml/rng.hpp"
#include "cfdml/stats.hpp"

namespace cfdml::dml {

/// "a:b" -> K = (a+b)/a; a must divide a+b and K must be at least 2.
inline int folds_from_ratio(const std::string& ratio) {
  const auto colon = ratio.find(':');
  require(colon != std::string::npos, Errc::parse, "split ratio '" + ratio + "' is not of the form a:b");
  long a = 0, b = 0;
  try {
    std::size_t used = 0;
    a = std::stol(ratio.substr(0, colon), &used);
    require(used == colon, Errc::parse, "split ratio '" + ratio + "' is not of the form a:b");
    const std::string rhs = ratio.substr(colon + 1);
    b = std::stol(rhs, &used);
    require(used == rhs.size(), Errc::parse, "split ratio '" + ratio + "' is not of the form a:b");
  } catch (const std::logic_error&) {
    fail(Errc::parse, "split ratio '" + ratio + "' is not of the form a:b");
  }
  require(a > 0 && b > 0, Errc::domain, "split ratio parts must be positive");
  require((a + b) % a == 0, Errc::domain, "split ratio " + ratio + ": a must divide a+b");
  return static_cast<int>((a + b) / a);
}

struct DmlConfig {
  std::string outcome;             // empty: the unique outcome-role column
  std::string treatment;           // empty: the unique treatment-role column
  std::vector<std::string> controls;  // empty: every control-role column
  bool add_quadratics = false;
  std::vector<std::string> fe_keys;
  std::string split_ratio = "1:4";
  LearnerSpec outcome_learner = LearnerSpec::make(LearnerKind::gbdt);
  LearnerSpec treatment_learner = LearnerSpec::make(LearnerKind::gbdt);
  std::uint64_t seed = 0;
  int repetitions = 5;
  bool keep_residuals = false;

  int folds() const { return folds_from_ratio(split_ratio); }

  nlohmann::ordered_json to_json() const {
    return {{"outcome", outcome},
            {"treatment", treatment},
            {"controls", controls},
            {"add_quadratics", add_quadratics},
            {"fe_keys", fe_keys},
            {"split_ratio", split_ratio},
            {"outcome_learner", outcome_learner.to_json()},
            {"treatment_learner", treatment_learner.to_json()},
            {"seed", seed},
            {"repetitions", repetitions},
            {"keep_residuals", keep_residuals}};
  }

  /// Missing keys keep their defaults; a "learner" key sets both stages.
  static DmlConfig from_json(const nlohmann::ordered_json& j) {
    static const std::set<std::string> known{"outcome",        "treatment",       "controls",
                                             "add_quadratics", "fe_keys",         "split_ratio",
                                             "learner",        "outcome_learner", "treatment_learner",
                                             "seed",           "repetitions",     "keep_residuals"};
    require(j.is_object(), Errc::schema, "DML config must be a JSON object");
    for (const auto& [key, value] : j.items())
      require(known.count(key) > 0, Errc::schema, "unknown DML config key '" + key + "'");
    DmlConfig c;
    try {
      c.outcome = j.value("outcome", c.outcome);
      c.treatment = j.value("treatment", c.treatment);
      c.controls = j.value("controls", c.controls);
      c.add_quadratics = j.value("add_quadratics", c.add_quadratics);
      c.fe_keys = j.value("fe_keys", c.fe_keys);
      c.split_ratio = j.value("split_ratio", c.split_ratio);
      c.seed = j.value("seed", c.seed);
      c.repetitions = j.value("repetitions", c.repetitions);
      c.keep_residuals = j.value("keep_residuals", c.keep_residuals);
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::schema, std::string("DML config: ") + e.what());
    }
    auto learner = [](const nlohmann::ordered_json& v) {
      return v.is_string() ? LearnerSpec::make(parse_learner_kind(v.get<std::string>())) : LearnerSpec::from_json(v);
    };
    if (j.contains("learner")) c.outcome_learner = c.treatment_learner = learner(j["learner"]);
    if (j.contains("outcome_learner")) c.outcome_learner = learner(j["outcome_learner"]);
    if (j.contains("treatment_learner")) c.treatment_learner = learner(j["treatment_learner"]);
    require(c.repetitions >= 1, Errc::domain, "repetitions must be at least 1");
    (void)c.folds();
    return c;
  }
};

struct FoldDiagnostics {
  int fold = 0;
  std::size_t n = 0;
  double r2_outcome = 0.0;
  double r2_treatment = 0.0;
};

struct DmlEstimate {
  std::string label;
  double theta = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
  int folds = 0;
  int repetitions = 0;
  std::vector<double> theta_by_repetition;
  std::vector<double> se_by_repetition;
  std::vector<FoldDiagnostics> diagnostics;  // first repetition
  Eigen::VectorXd y_residual;                // first repetition, when kept
  Eigen::VectorXd d_residual;
  std::vector<std::string> warnings;

  std::string stars() const { return stats::stars(p_value); }
};

/// theta and HC1 SE from residual vectors. Throws when the treatment
/// residual carries no variation relative to var(D).
struct FinalStage {
  double theta;
  double se;
};

inline FinalStage final_stage(const Eigen::VectorXd& y_res, const Eigen::VectorXd& d_res, double var_d) {
  const double n = static_cast<double>(d_res.size());
  const double sdd = d_res.squaredNorm();
  require(sdd >= 1e-12 * n * var_d && sdd > 0.0, Errc::degenerate,
          "treatment is fully explained by the controls (sum of squared residuals " + csv::format_double(sdd) + ")");
  const double theta = d_res.dot(y_res) / sdd;
  const Eigen::ArrayXd psi = d_res.array() * (y_res.array() - theta * d_res.array());
  const double se = std::sqrt(n / (n - 1.0) * psi.square().sum()) / sdd;
  return {theta, se};
}

inline double oof_r2(const Eigen::VectorXd& y, const Eigen::VectorXd& pred) {
  const double tss = (y.array() - y.mean()).square().sum();
  return tss > 0.0 ? 1.0 - (y - pred).squaredNorm() / tss : 0.0;
}

struct ResolvedRoles {
  std::string outcome;
  std::string treatment;
  std::vector<std::string> controls;
};

inline ResolvedRoles resolve_roles(const PanelTable& table, const DmlConfig& c) {
  auto unique_role = [&](Role r, const std::string& given) {
    if (!given.empty()) {
      require(table.has_column(given), Errc::schema, "column '" + given + "' not in table");
      return given;
    }
    const auto names = table.names_with_role(r);
    require(names.size() == 1, Errc::schema,
            "expected exactly one " + to_string(r) + " column, found " + std::to_string(names.size()));
    return names.front();
  };
  ResolvedRoles out{unique_role(Role::outcome, c.outcome), unique_role(Role::treatment, c.treatment), c.controls};
  if (out.controls.empty()) out.controls = table.names_with_role(Role::control);
  for (const auto& name : out.controls)
    require(table.has_column(name), Errc::schema, "control '" + name + "' not in table");
  return out;
}

inline Eigen::VectorXd column_vector(const PanelTable& t, const std::string& name) {
  auto c = t.column(name);
  Eigen::VectorXd v(static_cast<Eigen::Index>(c.size()));
  for (std::size_t i = 0; i < c.size(); ++i) v(static_cast<Eigen::Index>(i)) = c[i];
  return v;
}

/// Cross-fitted estimate. Learner seeds are derived from config.seed (the
/// seeds inside the learner specs are ignored) so one master seed drives
/// the whole run; with repetitions > 1 theta and SE are medians across
/// independent re-splits.
inline DmlEstimate estimate(const PanelTable& table, const DmlConfig& config) {
  const auto roles = resolve_roles(table, config);
  const int K = config.folds();
  require(config.repetitions >= 1, Errc::domain, "repetitions must be at least 1");
  const std::size_t n = table.rows();
  require(n >= static_cast<std::size_t>(10 * K), Errc::size,
          "need at least " + std::to_string(10 * K) + " rows for " + std::to_string(K) + " folds, have " +
              std::to_string(n));
  const Design design = expand_design(table, roles.controls, config.add_quadratics, config.fe_keys);
  const Eigen::VectorXd y = column_vector(table, roles.outcome);
  const Eigen::VectorXd d = column_vector(table, roles.treatment);
  require(y.allFinite() && d.allFinite() && design.X.allFinite(), Errc::numeric, "non-finite values in DML inputs");
  const double var_d = (d.array() - d.mean()).square().mean();

  DmlEstimate est;
  est.n = n;
  est.folds = K;
  est.repetitions = config.repetitions;
  for (int r = 0; r < config.repetitions; ++r) {
    const auto rr = static_cast<std::uint64_t>(r);
    const auto fold_of = assign_folds(n, K, mix_seed(config.seed, seed_offset::repetition + rr));
    LearnerSpec ls = config.outcome_learner, ms = config.treatment_learner;
    ls.seed = mix_seed(config.seed, seed_offset::learner_outcome + rr);
    ms.seed = mix_seed(config.seed, seed_offset::learner_treatment + rr);
    auto l_hat = kfold_oof_predict(ls, design.X, y, fold_of);
    auto m_hat = kfold_oof_predict(ms, design.X, d, fold_of);
    const Eigen::VectorXd y_res = y - l_hat.predictions;
    const Eigen::VectorXd d_res = d - m_hat.predictions;
    const auto fs = final_stage(y_res, d_res, var_d);
    est.theta_by_repetition.push_back(fs.theta);
    est.se_by_repetition.push_back(fs.se);
    if (r == 0) {
      for (auto& w : l_hat.warnings) est.warnings.push_back("outcome learner " + w);
      for (auto& w : m_hat.warnings) est.warnings.push_back("treatment learner " + w);
      for (int f = 0; f < K; ++f) {
        std::vector<Eigen::Index> idx;
        for (std::size_t i = 0; i < n; ++i)
          if (fold_of[i] == f) idx.push_back(static_cast<Eigen::Index>(i));
        est.diagnostics.push_back({f, idx.size(), oof_r2(take_rows(y, idx), take_rows(l_hat.predictions, idx)),
                                   oof_r2(take_rows(d, idx), take_rows(m_hat.predictions, idx))});
      }
      if (config.keep_residuals) {
        est.y_residual = y_res;
        est.d_residual = d_res;
      }
    }
  }
  est.theta = stats::median(est.theta_by_repetition);
  est.se = stats::median(est.se_by_repetition);
  est.ci_low = est.theta - 1.96 * est.se;
  est.ci_high = est.theta + 1.96 * est.se;
  est.p_value = est.se > 0.0 ? stats::two_sided_p(est.theta / est.se) : 0.0;
  return est;
}

// ---------------------------------------------------------------------------
// Robustness grid: one factor varied at a time from the base configuration.
// ---------------------------------------------------------------------------

struct AlternativeTreatment {
  std::string label;
  std::string column;
};

struct Winsorization {
  double lower = 0.01;
  double upper = 0.99;
};

struct RobustnessGrid {
  std::vector<LearnerSpec> learners;
  std::vector<std::string> split_ratios;
  std::optional<Winsorization> winsorize;
  std::vector<AlternativeTreatment> treatments;

  bool empty() const { return learners.empty() && split_ratios.empty() && !winsorize && treatments.empty(); }

  static RobustnessGrid from_json(const nlohmann::ordered_json& j) {
    static const std::set<std::string> known{"learners", "split_ratios", "winsorize", "treatments"};
    for (const auto& [key, value] : j.items())
      require(known.count(key) > 0, Errc::schema, "unknown robustness grid key '" + key + "'");
    RobustnessGrid g;
    try {
      for (const auto& l : j.value("learners", nlohmann::ordered_json::array()))
        g.learners.push_back(l.is_string() ? LearnerSpec::make(parse_learner_kind(l.get<std::string>()))
                                           : LearnerSpec::from_json(l));
      g.split_ratios = j.value("split_ratios", g.split_ratios);
      if (j.contains("winsorize")) {
        const auto& w = j["winsorize"];
        if (w.is_boolean()) {
          if (w.get<bool>()) g.winsorize = Winsorization{};
        } else {
          g.winsorize = Winsorization{w.value("lower", 0.01), w.value("upper", 0.99)};
        }
      }
      for (const auto& t : j.value("treatments", nlohmann::ordered_json::array())) {
        if (t.is_string()) g.treatments.push_back({t.get<std::string>(), t.get<std::string>()});
        else g.treatments.push_back({t.at("label").get<std::string>(), t.at("column").get<std::string>()});
      }
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::schema, std::string("robustness grid: ") + e.what());
    }
    for (const auto& r : g.split_ratios) (void)folds_from_ratio(r);
    return g;
  }
};

struct CellResult {
  std::string label;
  std::string factor;  // learner, split_ratio, winsorize, treatment
  std::optional<DmlEstimate> estimate;
  std::string error;
  bool failed() const { return !estimate.has_value(); }
};

/// Every cell reuses the base seed, so cells differ only in the varied factor.
inline std::vector<CellResult> robustness_grid(const PanelTable& table, const DmlConfig& base,
                                               const RobustnessGrid& grid) {
  require(!grid.empty(), Errc::domain, "robustness grid is empty");
  std::vector<CellResult> cells;
  auto run = [&](const std::string& factor, const std::string& label, auto&& make) {
    CellResult cell{label, factor, std::nullopt, {}};
    try {
      auto [t, cfg] = make();
      cell.estimate = estimate(t, cfg);
      cell.estimate->label = label;
    } catch (const Error& e) {
      cell.error = e.what();
    }
    cells.push_back(std::move(cell));
  };
  for (const auto& l : grid.learners) {
    run("learner", to_string(l.kind), [&] {
      DmlConfig c = base;
      c.outcome_learner = c.treatment_learner = l;
      return std::pair{table, c};
    });
  }
  for (const auto& ratio : grid.split_ratios) {
    run("split_ratio", ratio, [&] {
      DmlConfig c = base;
      c.split_ratio = ratio;
      return std::pair{table, c};
    });
  }
  if (grid.winsorize) {
    run("winsorize", "winsorized", [&] {
      const auto roles = resolve_roles(table, base);
      std::vector<std::string> cols{roles.outcome, roles.treatment};
      for (const auto& c : roles.controls)
        if (!is_binary(table.column(c))) cols.push_back(c);
      return std::pair{winsorize(table, grid.winsorize->lower, grid.winsorize->upper, cols), base};
    });
  }
  for (const auto& alt : grid.treatments) {
    run("treatment", alt.label, [&] {
      require(table.has_column(alt.column), Errc::lookup, "alternative treatment '" + alt.column + "' not in table");
      DmlConfig c = base;
      c.treatment = alt.column;
      return std::pair{table, c};
    });
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Subgroup heterogeneity
// ---------------------------------------------------------------------------

struct Group {
  std::string label;
  std::vector<double> values;  // rows whose split column takes any of these
};

struct SubgroupResult {
  std::string label;
  std::size_t rows = 0;
  std::optional<DmlEstimate> estimate;
  std::string warning;
};

/// Runs estimate() independently inside each group. Groups smaller than
/// 10*K rows are skipped with a warning; an empty group list means one group
/// per distinct value of the split column.
inline std::vector<SubgroupResult> subgroup_estimates(const PanelTable& table, const DmlConfig& config,
                                                      const std::string& split_column, std::vector<Group> groups) {
  const auto key = table.column(split_column);
  if (groups.empty())
    for (double v : levels_of(key)) groups.push_back({csv::format_double(v), {v}});
  const std::size_t min_rows = static_cast<std::size_t>(10 * config.folds());
  std::vector<SubgroupResult> out;
  for (const auto& g : groups) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < key.size(); ++i)
      if (std::find(g.values.begin(), g.values.end(), key[i]) != g.values.end()) idx.push_back(i);
    SubgroupResult r{g.label, idx.size(), std::nullopt, {}};
    if (idx.empty()) {
      r.warning = "group '" + g.label + "' is empty; skipped";
    } else if (idx.size() < min_rows) {
      r.warning = "group '" + g.label + "' has " + std::to_string(idx.size()) + " rows, below the minimum of " +
                  std::to_string(min_rows) + "; skipped";
    } else {
      r.estimate = estimate(table.select_rows(idx), config);
      r.estimate->label = g.label;
    }
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Temporal effects
// ---------------------------------------------------------------------------

/// Treatment value of the same firm k years earlier, if that row exists.
inline std::vector<std::optional<double>> lagged(const PanelTable& t, const std::string& column, int k) {
  std::map<std::pair<std::string, int>, double> at;
  const auto c = t.column(column);
  for (std::size_t i = 0; i < t.rows(); ++i) at[{t.firm_ids()[i], t.years()[i]}] = c[i];
  std::vector<std::optional<double>> out(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) {
    auto it = at.find({t.firm_ids()[i], t.years()[i] - k});
    if (it != at.end()) out[i] = it->second;
  }
  return out;
}

struct TemporalOptions {
  int max_lag = 2;
  bool use_generated = true;  // generated rows lag within their synthetic firm
};

/// Estimates for the current treatment, each lag 1..max_lag (rows without
/// that history dropped) and the cumulative effect, where D is replaced by
/// the firm's mean treatment over t-max_lag..t.
inline std::vector<DmlEstimate> temporal_effects(const PanelTable& input, const DmlConfig& config,
                                                 TemporalOptions opt) {
  require(opt.max_lag >= 0, Errc::domain, "max_lag must be nonnegative");
  PanelTable table = input;
  if (!opt.use_generated && input.has_provenance()) {
    std::vector<std::size_t> real;
    for (std::size_t i = 0; i < input.rows(); ++i)
      if (!input.is_generated(i)) real.push_back(i);
    table = input.select_rows(real);
  }
  const std::set<int> years(table.years().begin(), table.years().end());
  require(opt.max_lag < static_cast<int>(years.size()), Errc::span,
          "max_lag " + std::to_string(opt.max_lag) + " is not below the panel span of " +
              std::to_string(years.size()) + " years");
  const auto roles = resolve_roles(table, config);
  DmlConfig cfg = config;
  cfg.treatment = roles.treatment;

  std::vector<DmlEstimate> out;
  out.push_back(estimate(table, cfg));
  out.back().label = "current";

  auto with_treatment = [&](const std::vector<std::optional<double>>& value) {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < value.size(); ++i)
      if (value[i]) keep.push_back(i);
    PanelTable sub = table.select_rows(keep);
    auto& col = sub.mutable_column(roles.treatment);
    for (std::size_t k = 0; k < keep.size(); ++k) col[k] = *value[keep[k]];
    return sub;
  };

  std::vector<std::vector<std::optional<double>>> history{lagged(table, roles.treatment, 0)};
  for (int k = 1; k <= opt.max_lag; ++k) {
    history.push_back(lagged(table, roles.treatment, k));
    out.push_back(estimate(with_treatment(history.back()), cfg));
    out.back().label = "lag" + std::to_string(k);
  }
  std::vector<std::optional<double>> cumulative(table.rows());
  for (std::size_t i = 0; i < table.rows(); ++i) {
    double sum = 0.0;
    bool complete = true;
    for (const auto& h : history) {
      if (!h[i]) {
        complete = false;
        break;
      }
      sum += *h[i];
    }
    if (complete) cumulative[i] = sum / static_cast<double>(history.size());
  }
  out.push_back(estimate(with_treatment(cumulative), cfg));
  out.back().label = "cumulative";
  return out;
}

}  // namespace cfdml::dml
