#pragma once

// Two-way fixed-effects regression by within-transformation, used for the
// mechanism (mediator) regressions.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cfdml/error.hpp"
#include "cfdml/panel.hpp"
#include "cfdml/stats.hpp"

namespace cfdml::fe {

/// Dense 0..G-1 codes for a grouping, in order of first appearance.
template <typename Key>
std::vector<int> group_codes(const std::vector<Key>& keys, int* count = nullptr) {
  std::map<Key, int> code;
  std::vector<int> out(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    auto [it, inserted] = code.try_emplace(keys[i], static_cast<int>(code.size()));
    out[i] = it->second;
  }
  if (count) *count = static_cast<int>(code.size());
  return out;
}

/// Subtracts group means in place, one grouping at a time.
inline void demean_by(Eigen::MatrixXd& m, const std::vector<int>& codes, int groups) {
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(groups, m.cols());
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(groups);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    sums.row(codes[static_cast<std::size_t>(i)]) += m.row(i);
    counts(codes[static_cast<std::size_t>(i)]) += 1.0;
  }
  for (int g = 0; g < groups; ++g) sums.row(g) /= counts(g);
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i) -= sums.row(codes[static_cast<std::size_t>(i)]);
}

/// Projects out every grouping by alternating projections (exact in one
/// pass for balanced two-way panels, iterated to convergence otherwise).
/// The result has zero mean within every group of every grouping.
inline Eigen::MatrixXd within_transform(Eigen::MatrixXd m, const std::vector<std::vector<int>>& groupings,
                                        double tol = 1e-13, int max_passes = 100000) {
  std::vector<int> counts;
  for (const auto& g : groupings) {
    require(static_cast<Eigen::Index>(g.size()) == m.rows(), Errc::shape, "grouping length mismatch");
    counts.push_back(g.empty() ? 0 : *std::max_element(g.begin(), g.end()) + 1);
  }
  if (groupings.empty()) return m;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  for (int pass = 0; pass < max_passes; ++pass) {
    const Eigen::MatrixXd before = m;
    for (std::size_t k = 0; k < groupings.size(); ++k) demean_by(m, groupings[k], counts[k]);
    if (groupings.size() == 1 || (m - before).cwiseAbs().maxCoeff() <= tol * scale) return m;
  }
  fail(Errc::convergence, "within-transformation did not converge");
}

struct FixedEffects {
  bool firm = true;
  bool year = true;
};

struct MediationResult {
  std::string treatment;
  std::string mediator;
  double coefficient = 0.0;
  double robust_se = 0.0;
  double p_value = 1.0;
  double r2 = 0.0;
  double constant = 0.0;
  std::size_t n = 0;
  std::size_t clusters = 0;
  std::vector<std::pair<std::string, double>> control_coefficients;

  std::string stars() const { return stats::stars(p_value); }
  double ci_low() const { return coefficient - 1.96 * robust_se; }
  double ci_high() const { return coefficient + 1.96 * robust_se; }
};

/// Regresses the mediator on treatment and linear controls after removing
/// firm and year effects (grand means added back). Standard errors are
/// clustered by firm with the usual G/(G-1)*(n-1)/(n-k) correction.
inline MediationResult mediation_regression(const PanelTable& table, const std::string& treatment,
                                            const std::string& mediator, const std::vector<std::string>& controls,
                                            FixedEffects fx = {}) {
  const std::size_t n = table.rows();
  int n_firms = 0, n_years = 0;
  const auto firm_code = group_codes(table.firm_ids(), &n_firms);
  const auto year_code = group_codes(table.years(), &n_years);
  require(n_firms >= 2 && n_years >= 2, Errc::size, "mediation needs at least two firms and two years");

  std::vector<std::string> vars{mediator, treatment};
  vars.insert(vars.end(), controls.begin(), controls.end());
  Eigen::MatrixXd raw(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(vars.size()));
  for (std::size_t k = 0; k < vars.size(); ++k) {
    auto c = table.column(vars[k]);
    for (std::size_t i = 0; i < n; ++i) raw(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = c[i];
  }
  std::vector<std::vector<int>> groupings;
  if (fx.firm) groupings.push_back(firm_code);
  if (fx.year) groupings.push_back(year_code);
  const Eigen::RowVectorXd grand = raw.colwise().mean();
  Eigen::MatrixXd w = within_transform(raw, groupings);
  w.rowwise() += grand;

  const double raw_var = (raw.col(1).array() - grand(1)).square().mean();
  const double within_var = (w.col(1).array() - grand(1)).square().mean();
  require(within_var > 1e-12 * std::max(raw_var, 1e-300), Errc::no_variation,
          "treatment '" + treatment + "' has no variation after removing fixed effects");

  const Eigen::Index k = static_cast<Eigen::Index>(vars.size());  // intercept + treatment + controls
  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), k);
  X.col(0).setOnes();
  X.rightCols(k - 1) = w.rightCols(k - 1);
  const Eigen::VectorXd y = w.col(0);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  require(qr.rank() == k, Errc::no_variation, "mediation design is rank deficient after the within-transformation");
  const Eigen::VectorXd b = qr.solve(y);
  const Eigen::VectorXd e = y - X * b;

  const Eigen::MatrixXd bread = (X.transpose() * X).inverse();
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
  std::vector<Eigen::VectorXd> score(static_cast<std::size_t>(n_firms), Eigen::VectorXd::Zero(k));
  for (std::size_t i = 0; i < n; ++i)
    score[static_cast<std::size_t>(firm_code[i])] += X.row(static_cast<Eigen::Index>(i)).transpose() * e(static_cast<Eigen::Index>(i));
  for (const auto& s : score) meat += s * s.transpose();
  const double G = n_firms, N = static_cast<double>(n);
  const double factor = G / (G - 1.0) * (N - 1.0) / (N - static_cast<double>(k));
  const Eigen::MatrixXd V = factor * bread * meat * bread;

  MediationResult r;
  r.treatment = treatment;
  r.mediator = mediator;
  r.coefficient = b(1);
  r.robust_se = std::sqrt(V(1, 1));
  r.p_value = r.robust_se > 0.0 ? stats::two_sided_p(r.coefficient / r.robust_se) : (r.coefficient == 0.0 ? 1.0 : 0.0);
  const double tss = (y.array() - y.mean()).square().sum();
  r.r2 = tss > 0.0 ? 1.0 - e.squaredNorm() / tss : 0.0;
  r.constant = b(0);
  r.n = n;
  r.clusters = static_cast<std::size_t>(n_firms);
  for (std::size_t c = 0; c < controls.size(); ++c) r.control_coefficients.emplace_back(controls[c], b(static_cast<Eigen::Index>(c) + 2));
  return r;
}

}  // namespace cfdml::fe
