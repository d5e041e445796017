#pragma once

// Derived disclosure, governance and regional indices.

#include <array>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cfdml/error.hpp"
#include "cfdml/stats.hpp"

namespace cfdml::index {

/// Checklist scores for substantive environmental disclosure.
struct DisclosureRubric {
  std::array<int, 5> credibility{};  // GRI, ISO14001, Big Four auditor, third-party assurance, awards: 0/1
  int discharge_compliance = 0;      // 0/1
  int work_safety = 0;               // 0/1
  int negative_events = 0;           // 0..3 (accidents, violations, petitions)
  int social_welfare = 0;            // 0/1
  int emergency_mechanism = 0;       // 0/1
  int three_simultaneities = 0;      // 0/1
  int cleaner_production = 0;        // 0/1
  std::array<int, 6> emissions{};    // 0 none, 1 qualitative, 2 quantitative
  std::array<int, 5> treatment{};    // 0 none, 1 qualitative, 2 quantitative
};

inline constexpr int kMaxSubstantiveScore = 36;

inline int substantive_score(const DisclosureRubric& r) {
  auto check = [](int v, int hi, const std::string& item) {
    require(v >= 0 && v <= hi, Errc::domain,
            "rubric item '" + item + "' = " + std::to_string(v) + " outside [0, " + std::to_string(hi) + "]");
    return v;
  };
  int total = 0;
  static const char* cred_names[5] = {"gri", "iso14001", "big_four", "third_party", "awards"};
  for (std::size_t k = 0; k < 5; ++k) total += check(r.credibility[k], 1, cred_names[k]);
  total += check(r.discharge_compliance, 1, "discharge_compliance");
  total += check(r.work_safety, 1, "work_safety");
  total += check(r.negative_events, 3, "negative_events");
  total += check(r.social_welfare, 1, "social_welfare");
  total += check(r.emergency_mechanism, 1, "emergency_mechanism");
  total += check(r.three_simultaneities, 1, "three_simultaneities");
  total += check(r.cleaner_production, 1, "cleaner_production");
  for (std::size_t k = 0; k < 6; ++k) total += check(r.emissions[k], 2, "emissions[" + std::to_string(k) + "]");
  for (std::size_t k = 0; k < 5; ++k) total += check(r.treatment[k], 2, "treatment[" + std::to_string(k) + "]");
  return total;
}

struct DisclosureRecord {
  std::string firm_id;
  int year = 0;
  long keyword_hits = 0;
  long total_tokens = 1;
  DisclosureRubric rubric;
};

struct GreenwashScore {
  std::string firm_id;
  int year = 0;
  double mws = 0.0;
  double mrs = 0.0;
  double gw = 0.0;
};

/// Standardizes textual volume (keyword share) and substantive score within
/// each year (sample SD) and returns their difference, in input order.
inline std::vector<GreenwashScore> greenwash_index(const std::vector<DisclosureRecord>& records) {
  const std::size_t n = records.size();
  std::vector<double> mw(n), mr(n);
  std::map<int, std::vector<std::size_t>> by_year;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = records[i];
    require(r.total_tokens > 0 && r.keyword_hits >= 0 && r.keyword_hits <= r.total_tokens, Errc::domain,
            "record (" + r.firm_id + ", " + std::to_string(r.year) + "): need 0 <= keyword_hits <= total_tokens, "
            "total_tokens > 0");
    mw[i] = static_cast<double>(r.keyword_hits) / static_cast<double>(r.total_tokens);
    mr[i] = substantive_score(r.rubric);
    by_year[r.year].push_back(i);
  }
  std::vector<GreenwashScore> out(n);
  for (const auto& [year, idx] : by_year) {
    require(idx.size() >= 2, Errc::degenerate, "year " + std::to_string(year) + " has a single record");
    std::vector<double> a, b;
    for (auto i : idx) {
      a.push_back(mw[i]);
      b.push_back(mr[i]);
    }
    const double ma = stats::mean(a), sa = stats::sample_sd(a);
    const double mb = stats::mean(b), sb = stats::sample_sd(b);
    require(sa > 0.0 && sb > 0.0, Errc::degenerate, "year " + std::to_string(year) + " has zero variance");
    for (auto i : idx) {
      const double zs = (mw[i] - ma) / sa;
      const double zr = (mr[i] - mb) / sb;
      out[i] = {records[i].firm_id, year, zs, zr, zs - zr};
    }
  }
  return out;
}

/// Expectation gap scaled by total assets. Callers lag it one period.
inline double performance_pressure(double forecast_mean, double actual, double assets) {
  require(assets > 0.0, Errc::domain, "total assets must be positive");
  return (forecast_mean - actual) / assets;
}

/// Mean of per-analyst forecasts.
inline double forecast_consensus(const std::vector<double>& forecasts) {
  require(!forecasts.empty(), Errc::domain, "no analyst forecasts");
  return stats::mean(forecasts);
}

/// Headcount-weighted retention across two adjacent years; 1 means no turnover.
inline double team_stability(long m_t, long m_t1, long departures, long arrivals) {
  require(m_t >= 1 && m_t1 >= 1, Errc::domain, "team sizes must be at least 1");
  require(departures >= 0 && departures <= m_t, Errc::domain, "departures outside [0, m_t]");
  require(arrivals >= 0 && arrivals <= m_t1, Errc::domain, "arrivals outside [0, m_t1]");
  const double a = static_cast<double>(m_t), b = static_cast<double>(m_t1);
  const double total = a + b;
  return ((a - departures) / a) * (a / total) + ((b - arrivals) / b) * (b / total);
}

struct RosterChange {
  long m_t = 0;
  long m_t1 = 0;
  long departures = 0;
  long arrivals = 0;
};

/// Departures and arrivals by set difference of two executive rosters.
inline RosterChange roster_change(const std::set<std::string>& year_t, const std::set<std::string>& year_t1) {
  RosterChange rc;
  rc.m_t = static_cast<long>(year_t.size());
  rc.m_t1 = static_cast<long>(year_t1.size());
  for (const auto& m : year_t)
    if (!year_t1.count(m)) ++rc.departures;
  for (const auto& m : year_t1)
    if (!year_t.count(m)) ++rc.arrivals;
  return rc;
}

/// Media tone coefficient from positive (e), negative (c) and total (t) report counts.
inline double jf_coefficient(long positive, long negative, long total) {
  require(total > 0, Errc::domain, "total report count must be positive");
  require(positive >= 0 && negative >= 0 && positive + negative <= total, Errc::domain,
          "need 0 <= positive + negative <= total");
  const double e = static_cast<double>(positive), c = static_cast<double>(negative), t = static_cast<double>(total);
  if (e > c) return (e * e - e * c) / (t * t);
  if (e < c) return (e * c - c * c) / (t * t);
  return 0.0;
}

// ---------------------------------------------------------------------------
// Entropy-weight TOPSIS
// ---------------------------------------------------------------------------

/// Column-wise min-max scaling to [0, 1]; constant columns become all zero.
inline Eigen::MatrixXd minmax_normalize(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double lo = m.col(j).minCoeff(), hi = m.col(j).maxCoeff();
    if (hi > lo) out.col(j) = (m.col(j).array() - lo) / (hi - lo);
    else out.col(j).setZero();
  }
  return out;
}

/// Entropy weights of an already normalized matrix. Constant columns get 0.
inline Eigen::VectorXd entropy_weights(const Eigen::MatrixXd& normalized) {
  const Eigen::Index n = normalized.rows();
  const double k = 1.0 / std::log(static_cast<double>(n));
  Eigen::VectorXd divergence = Eigen::VectorXd::Zero(normalized.cols());
  for (Eigen::Index j = 0; j < normalized.cols(); ++j) {
    const double total = normalized.col(j).sum();
    if (total <= 0.0) continue;
    double h = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = normalized(i, j) / total;
      if (p > 0.0) h -= p * std::log(p);
    }
    divergence(j) = 1.0 - k * h;
  }
  const double s = divergence.sum();
  require(s > 0.0, Errc::degenerate, "every indicator is constant across units");
  return divergence / s;
}

/// Relative closeness to the worst-case ideal; 1 = maximal on every weighted indicator.
inline Eigen::VectorXd topsis_closeness(const Eigen::MatrixXd& normalized, const Eigen::VectorXd& weights) {
  require(weights.size() == normalized.cols(), Errc::shape, "weight count differs from indicator count");
  const Eigen::MatrixXd v = normalized * weights.asDiagonal();
  const Eigen::RowVectorXd best = v.colwise().maxCoeff();
  const Eigen::RowVectorXd worst = v.colwise().minCoeff();
  Eigen::VectorXd out(v.rows());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const double d_plus = (v.row(i) - best).norm();
    const double d_minus = (v.row(i) - worst).norm();
    require(d_plus + d_minus > 0.0, Errc::degenerate, "unit coincides with both ideal points");
    out(i) = d_minus / (d_plus + d_minus);
  }
  return out;
}

/// City-by-indicator pollution matrix -> closeness score per city (higher = more polluted).
inline Eigen::VectorXd entropy_topsis(const Eigen::MatrixXd& matrix) {
  require(matrix.rows() >= 2, Errc::size, "entropy-TOPSIS needs at least two units");
  require(matrix.cols() >= 1, Errc::size, "entropy-TOPSIS needs at least one indicator");
  require((matrix.array() >= 0.0).all() && matrix.allFinite(), Errc::domain, "indicator values must be nonnegative");
  const Eigen::MatrixXd normalized = minmax_normalize(matrix);
  return topsis_closeness(normalized, entropy_weights(normalized));
}

}  // namespace cfdml::index
