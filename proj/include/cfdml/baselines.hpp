#pragma once

// Propensity-score baselines on a binarized treatment: nearest-neighbour
// matching for the ATT and normalized inverse probability weighting for the ATE.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cfdml/error.hpp"
#include "cfdml/linear.hpp"
#include "cfdml/panel.hpp"
#include "cfdml/stats.hpp"

namespace cfdml::baseline {

enum class BinarizeRule { median_split, threshold };

struct BinarizedTreatment {
  BinarizeRule rule = BinarizeRule::median_split;
  double cut = 0.0;
  Eigen::VectorXd values;  // 0/1
  std::size_t treated = 0;
};

/// Units strictly above the cut are treated. The median split uses the
/// sample median; an already-binary column is returned unchanged (cut 0.5).
inline BinarizedTreatment binarize(std::span<const double> d, BinarizeRule rule, double threshold = 0.0) {
  BinarizedTreatment out;
  out.rule = rule;
  if (rule == BinarizeRule::threshold) out.cut = threshold;
  else out.cut = is_binary(d) ? 0.5 : stats::median({d.begin(), d.end()});
  out.values.resize(static_cast<Eigen::Index>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i) {
    out.values(static_cast<Eigen::Index>(i)) = d[i] > out.cut ? 1.0 : 0.0;
    out.treated += d[i] > out.cut ? 1 : 0;
  }
  require(out.treated > 0 && out.treated < d.size(), Errc::no_variation,
          "binarized treatment has an empty arm (cut " + csv::format_double(out.cut) + ")");
  return out;
}

inline constexpr double kPropensityFloor = 0.01;
inline constexpr double kPropensityCeiling = 0.99;
inline constexpr double kFallbackRidge = 1e-2;

struct PropensityFit {
  Eigen::VectorXd probabilities;
  bool ridge_fallback = false;
  std::vector<std::string> warnings;
};

/// Logistic propensities on standardized features, clipped to [0.01, 0.99].
/// Constant features are dropped; if the plain fit separates the classes a
/// ridge-penalized fit is used instead.
inline PropensityFit propensity_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& t) {
  require(X.rows() == t.size(), Errc::shape, "feature rows differ from treatment length");
  const double treated = t.sum();
  const double n = static_cast<double>(t.size());
  require(treated >= 10.0 && n - treated >= 10.0, Errc::size, "each treatment arm needs at least 10 rows");

  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < X.cols(); ++j)
    if (X.col(j).maxCoeff() > X.col(j).minCoeff()) keep.push_back(j);
  Eigen::MatrixXd Z(X.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const auto col = X.col(keep[k]);
    const double mu = col.mean();
    const double sd = std::sqrt((col.array() - mu).square().mean());
    Z.col(static_cast<Eigen::Index>(k)) = (col.array() - mu) / sd;
  }

  PropensityFit out;
  linear::LogisticModel model;
  try {
    model = linear::fit_logistic(Z, t, {});
  } catch (const Error& e) {
    if (e.code() != Errc::convergence) throw;
    out.ridge_fallback = true;
    out.warnings.push_back(std::string("propensity model did not converge (") + e.what() +
                           "); refitted with ridge penalty " + csv::format_double(kFallbackRidge));
    model = linear::fit_logistic(Z, t, {.ridge = kFallbackRidge});
  }
  out.probabilities = model.predict_proba(Z).cwiseMax(kPropensityFloor).cwiseMin(kPropensityCeiling);
  const auto at_bounds = (out.probabilities.array() <= kPropensityFloor || out.probabilities.array() >= kPropensityCeiling).count();
  if (at_bounds > 0)
    out.warnings.push_back(std::to_string(at_bounds) + " propensities clipped to [" +
                           csv::format_double(kPropensityFloor) + ", " + csv::format_double(kPropensityCeiling) + "]");
  return out;
}

inline void check_inputs(const Eigen::VectorXd& y, const Eigen::VectorXd& t, const Eigen::VectorXd& p) {
  require(y.size() == t.size() && t.size() == p.size(), Errc::shape, "outcome, treatment and propensity lengths differ");
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    require(p(i) > 0.0 && p(i) < 1.0, Errc::domain, "propensity at row " + std::to_string(i) + " outside (0, 1)");
    require(t(i) == 0.0 || t(i) == 1.0, Errc::domain, "treatment must be 0/1");
  }
}

struct PsmResult {
  double att = 0.0;
  double se = 0.0;
  double p_value = 1.0;
  std::size_t treated = 0;
  std::size_t matched = 0;
  double caliper = 0.0;  // on the logit scale
  std::vector<Eigen::Index> match_of;  // per treated unit in row order; -1 if unmatched
  std::string stars() const { return stats::stars(p_value); }
};

/// 1-nearest-neighbour matching with replacement on the propensity logit.
/// A treated unit is matched when its nearest control lies strictly within
/// caliper_sd * SD(logit); equidistant controls resolve to the lowest row.
/// SE is the matched-pair estimator sd(differences) / sqrt(matched).
inline PsmResult psm_att(const Eigen::VectorXd& y, const Eigen::VectorXd& t, const Eigen::VectorXd& p,
                         double caliper_sd = 0.2) {
  check_inputs(y, t, p);
  require(caliper_sd >= 0.0, Errc::domain, "caliper must be nonnegative");
  const Eigen::ArrayXd logit = (p.array() / (1.0 - p.array())).log();
  std::vector<double> lv(logit.begin(), logit.end());
  PsmResult r;
  r.caliper = std::isinf(caliper_sd) ? caliper_sd : caliper_sd * stats::sample_sd(lv);

  // controls sorted by (logit, row)
  std::vector<std::pair<double, Eigen::Index>> controls;
  for (Eigen::Index i = 0; i < t.size(); ++i)
    if (t(i) == 0.0) controls.emplace_back(logit(i), i);
  std::sort(controls.begin(), controls.end());
  require(!controls.empty(), Errc::no_match, "no control units");

  std::vector<double> diffs;
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    if (t(i) != 1.0) continue;
    ++r.treated;
    const double li = logit(i);
    auto it = std::lower_bound(controls.begin(), controls.end(), std::pair{li, Eigen::Index{-1}});
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index best_row = -1;
    auto consider = [&](double value) {
      // first entry of the run with this logit value has the lowest row
      auto run = std::lower_bound(controls.begin(), controls.end(), std::pair{value, Eigen::Index{-1}});
      const double dist = std::fabs(run->first - li);
      if (dist < best || (dist == best && run->second < best_row)) {
        best = dist;
        best_row = run->second;
      }
    };
    if (it != controls.end()) consider(it->first);
    if (it != controls.begin()) consider(std::prev(it)->first);
    const bool ok = best_row >= 0 && best < r.caliper;
    r.match_of.push_back(ok ? best_row : -1);
    if (ok) diffs.push_back(y(i) - y(best_row));
  }
  r.matched = diffs.size();
  require(r.matched > 0, Errc::no_match, "no treated unit has a control within the caliper");
  r.att = stats::mean(diffs);
  r.se = r.matched > 1 ? stats::sample_sd(diffs) / std::sqrt(static_cast<double>(r.matched)) : 0.0;
  r.p_value = r.se > 0.0 ? stats::two_sided_p(r.att / r.se) : (r.att == 0.0 ? 1.0 : 0.0);
  return r;
}

struct IpwResult {
  double ate = 0.0;
  double se = 0.0;
  double p_value = 1.0;
  double mean_treated = 0.0;
  double mean_control = 0.0;
  double ess_treated = 0.0;
  double ess_control = 0.0;
  std::vector<std::string> warnings;
  std::string stars() const { return stats::stars(p_value); }
};

inline constexpr double kMinEffectiveSampleSize = 10.0;

/// Hajek estimator with the plug-in influence-function SE (propensities
/// treated as known).
inline IpwResult ipw_ate(const Eigen::VectorXd& y, const Eigen::VectorXd& t, const Eigen::VectorXd& p) {
  check_inputs(y, t, p);
  const Eigen::ArrayXd w1 = t.array() / p.array();
  const Eigen::ArrayXd w0 = (1.0 - t.array()) / (1.0 - p.array());
  const double s1 = w1.sum(), s0 = w0.sum();
  require(s1 > 0.0 && s0 > 0.0, Errc::no_variation, "a treatment arm is empty");
  IpwResult r;
  r.mean_treated = (w1 * y.array()).sum() / s1;
  r.mean_control = (w0 * y.array()).sum() / s0;
  r.ate = r.mean_treated - r.mean_control;
  const double n = static_cast<double>(y.size());
  const Eigen::ArrayXd phi =
      w1 * (y.array() - r.mean_treated) / (s1 / n) - w0 * (y.array() - r.mean_control) / (s0 / n);
  r.se = std::sqrt(phi.square().sum()) / n;
  r.p_value = r.se > 0.0 ? stats::two_sided_p(r.ate / r.se) : (r.ate == 0.0 ? 1.0 : 0.0);
  r.ess_treated = s1 * s1 / w1.square().sum();
  r.ess_control = s0 * s0 / w0.square().sum();
  if (r.ess_treated < kMinEffectiveSampleSize)
    r.warnings.push_back("unstable weights: treated-arm effective sample size " + csv::format_fixed(r.ess_treated, 2));
  if (r.ess_control < kMinEffectiveSampleSize)
    r.warnings.push_back("unstable weights: control-arm effective sample size " + csv::format_fixed(r.ess_control, 2));
  return r;
}

}  // namespace cfdml::baseline
