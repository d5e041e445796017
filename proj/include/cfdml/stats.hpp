#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "cfdml/error.hpp"

namespace cfdml::stats {

inline double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

/// Sample variance with the n-1 denominator. Zero for fewer than two values.
inline double sample_variance(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size() - 1);
}

inline double sample_sd(std::span<const double> x) { return std::sqrt(sample_variance(x)); }

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double two_sided_p(double z) { return std::erfc(std::fabs(z) / std::sqrt(2.0)); }

/// Significance stars: * p<0.1, ** p<0.05, *** p<0.01.
inline std::string stars(double p) {
  if (p < 0.01) return "***";
  if (p < 0.05) return "**";
  if (p < 0.1) return "*";
  return "";
}

// Nearest-rank position (1-based) for the lower tail: ceil(p*n), at least 1.
// The small slack keeps p*n values that are integers in exact arithmetic
// (0.01*200) from rounding up a whole rank.
inline std::size_t nearest_rank(double p, std::size_t n) {
  const double raw = std::ceil(p * static_cast<double>(n) - 1e-9);
  const auto r = static_cast<std::size_t>(std::max(raw, 1.0));
  return std::min(r, n);
}

/// Lower-tail nearest-rank quantile of an already sorted sample.
inline double lower_quantile_sorted(std::span<const double> sorted, double p) {
  require(!sorted.empty(), Errc::size, "quantile of empty sample");
  return sorted[nearest_rank(p, sorted.size()) - 1];
}

/// Upper-tail nearest-rank quantile: ranks counted from the top, so the
/// (1-p) tail mirrors the lower one (0.99 of 1..200 is 199).
inline double upper_quantile_sorted(std::span<const double> sorted, double p) {
  require(!sorted.empty(), Errc::size, "quantile of empty sample");
  const std::size_t from_top = nearest_rank(1.0 - p, sorted.size());
  return sorted[sorted.size() - from_top];
}

inline double median(std::vector<double> x) {
  require(!x.empty(), Errc::size, "median of empty sample");
  std::sort(x.begin(), x.end());
  const std::size_t n = x.size();
  return n % 2 == 1 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
}

}  // namespace cfdml::stats
