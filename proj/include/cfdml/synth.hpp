#pragma once

// Synthetic firm-year panels with planted causal effects. Control marginals
// follow the ranges of a mining-chain listed-firm sample; the outcome and
// treatment nuisances are built so that every quantity an estimator targets
// is known exactly.

#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfdml/error.hpp"
#include "cfdml/fixed_effects.hpp"
#include "cfdml/panel.hpp"
#include "cfdml/rng.hpp"

namespace cfdml::synth {

inline constexpr const char* kOutcome = "gw";
inline constexpr const char* kTreatment = "balance";
inline constexpr const char* kBinaryTreatment = "treated";
inline constexpr double kTreatmentLo = 0.0013;
inline constexpr double kTreatmentHi = 1.0;

struct ControlSpec {
  const char* name;
  double mean;
  double sd;  // for binaries: unused
  double lo;
  double hi;
  bool binary;
};

// size, leverage, ROA, growth, board independence, largest holder, age,
// executive pay, CEO duality, state ownership
inline const std::array<ControlSpec, 10> kControls{{
    {"size", 23.5987, 1.2046, 19.1979, 28.6365, false},
    {"lev", 0.5223, 0.1478, 0.0156, 1.3986, false},
    {"rota", 0.0375, 0.0600, -0.6438, 0.9533, false},
    {"growth", 0.1635, 0.2933, -0.9913, 6.1752, false},
    {"indep", 0.3720, 0.0397, 0.2500, 0.6667, false},
    {"top1", 0.4212, 0.1632, 0.0339, 0.8999, false},
    {"age", 2.9227, 0.2574, 1.3863, 3.6636, false},
    {"incentive", 15.3584, 0.6964, 11.3206, 18.5134, false},
    {"duality", 0.1216, 0.0, 0.0, 1.0, true},
    {"soe", 0.6661, 0.0, 0.0, 1.0, true},
}};

inline std::vector<std::string> control_names() {
  std::vector<std::string> out;
  for (const auto& c : kControls) out.emplace_back(c.name);
  return out;
}

struct DgpSpec {
  int n_firms = 201;
  int n_years = 13;
  int first_year = 2010;
  double theta = -0.3726;
  std::vector<double> region_thetas;  // per region level; empty = homogeneous
  int n_regions = 3;
  std::vector<double> lag_thetas;  // effect of D at t-1, t-2, ...
  double current_weight = 1.0;     // multiplies theta; 0 for a lag-only effect
  bool nonlinear = true;
  double confounding = 1.0;
  double noise_y = 0.15;
  double noise_d = 0.2;
  double firm_sd_y = 0.08;
  double firm_sd_d = 0.03;
  double year_sd = 0.1;
  double drop_fraction = 1.0 / 3.0;
  std::size_t observed_rows = 0;  // overrides drop_fraction when > 0
  std::uint64_t seed = 0;

  void validate() const {
    require(n_firms >= 1 && n_years >= 1 && static_cast<long>(n_firms) * n_years >= 50, Errc::domain,
            "need n_firms * n_years >= 50");
    require(noise_d > 0.0, Errc::domain, "treatment noise SD must be positive");
    require(noise_y >= 0.0 && firm_sd_y >= 0.0 && firm_sd_d >= 0.0 && year_sd >= 0.0, Errc::domain,
            "noise SDs must be nonnegative");
    require(std::isfinite(theta) && std::isfinite(confounding), Errc::domain, "theta and confounding must be finite");
    require(drop_fraction >= 0.0 && drop_fraction < 1.0, Errc::domain, "drop_fraction must lie in [0, 1)");
    require(observed_rows <= static_cast<std::size_t>(n_firms) * static_cast<std::size_t>(n_years), Errc::domain,
            "observed_rows exceeds the full panel");
    require(region_thetas.empty() || static_cast<int>(region_thetas.size()) == n_regions, Errc::domain,
            "region_thetas must have one entry per region");
    require(n_regions >= 1, Errc::domain, "n_regions must be positive");
  }
};

inline void to_json(nlohmann::ordered_json& j, const DgpSpec& s) {
  j = {{"n_firms", s.n_firms},         {"n_years", s.n_years},
       {"first_year", s.first_year},   {"theta", s.theta},
       {"region_thetas", s.region_thetas}, {"n_regions", s.n_regions},
       {"lag_thetas", s.lag_thetas},   {"current_weight", s.current_weight},
       {"nonlinear", s.nonlinear},     {"confounding", s.confounding},
       {"noise_y", s.noise_y},         {"noise_d", s.noise_d},
       {"firm_sd_y", s.firm_sd_y},     {"firm_sd_d", s.firm_sd_d},
       {"year_sd", s.year_sd},         {"drop_fraction", s.drop_fraction},
       {"observed_rows", s.observed_rows}, {"seed", s.seed}};
}

/// Reads the keys present in `j` over the defaults; unknown keys are rejected.
inline DgpSpec dgp_from_json(const nlohmann::ordered_json& j) {
  DgpSpec s;
  nlohmann::ordered_json defaults;
  to_json(defaults, s);
  for (const auto& [key, value] : j.items())
    require(defaults.contains(key), Errc::schema, "unknown DGP key '" + key + "'");
  try {
    s.n_firms = j.value("n_firms", s.n_firms);
    s.n_years = j.value("n_years", s.n_years);
    s.first_year = j.value("first_year", s.first_year);
    s.theta = j.value("theta", s.theta);
    s.region_thetas = j.value("region_thetas", s.region_thetas);
    s.n_regions = j.value("n_regions", s.n_regions);
    s.lag_thetas = j.value("lag_thetas", s.lag_thetas);
    s.current_weight = j.value("current_weight", s.current_weight);
    s.nonlinear = j.value("nonlinear", s.nonlinear);
    s.confounding = j.value("confounding", s.confounding);
    s.noise_y = j.value("noise_y", s.noise_y);
    s.noise_d = j.value("noise_d", s.noise_d);
    s.firm_sd_y = j.value("firm_sd_y", s.firm_sd_y);
    s.firm_sd_d = j.value("firm_sd_d", s.firm_sd_d);
    s.year_sd = j.value("year_sd", s.year_sd);
    s.drop_fraction = j.value("drop_fraction", s.drop_fraction);
    s.observed_rows = j.value("observed_rows", s.observed_rows);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::schema, std::string("DGP config: ") + e.what());
  }
  s.validate();
  return s;
}

/// Everything planted in a generated panel. `m` is E[D | X] and `g` the
/// structural outcome nuisance (controls plus year effect), both per row.
struct GroundTruth {
  std::string kind;
  double theta = 0.0;
  std::vector<double> region_thetas;
  std::vector<double> lag_thetas;
  double current_weight = 1.0;
  double ate = 0.0;
  double att = 0.0;
  double sample_ate = 0.0;
  double sample_att = 0.0;
  std::array<double, 3> gammas{};
  std::vector<double> m;
  std::vector<double> g;
  std::vector<double> tau;  // per-row effect (binary oracle)

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["kind"] = kind;
    if (kind == "binary") {
      j["ate"] = ate;
      j["att"] = att;
      j["sample_ate"] = sample_ate;
      j["sample_att"] = sample_att;
    } else {
      j["theta"] = theta;
      j["current_weight"] = current_weight;
      j["region_thetas"] = region_thetas;
      j["lag_thetas"] = lag_thetas;
    }
    if (kind == "mediated") j["gammas"] = {{"pressure", gammas[0]}, {"tsta", gammas[1]}, {"media", gammas[2]}};
    j["m"] = m;
    j["g"] = g;
    if (!tau.empty()) j["tau"] = tau;
    return j;
  }
};

struct SynthResult {
  PanelTable table;
  GroundTruth truth;
};

namespace detail {

inline double clamp(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

inline double phi(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846); }

/// E[clamp(W, lo, hi)] for W ~ N(mu, s^2).
inline double clipped_normal_mean(double mu, double s, double lo, double hi) {
  if (s <= 0.0) return clamp(mu, lo, hi);
  const double a = (lo - mu) / s, b = (hi - mu) / s;
  const double Pa = stats::normal_cdf(a), Pb = stats::normal_cdf(b);
  return lo * Pa + hi * (1.0 - Pb) + mu * (Pb - Pa) + s * (phi(a) - phi(b));
}

struct Row {
  std::array<double, kControls.size()> x{};
  std::array<double, kControls.size()> z{};  // standardized by the population moments
};

inline Row draw_row(Rng& rng, NormalSampler& normal) {
  Row r;
  for (std::size_t k = 0; k < kControls.size(); ++k) {
    const auto& c = kControls[k];
    if (c.binary) {
      r.x[k] = uniform01(rng) < c.mean ? 1.0 : 0.0;
      r.z[k] = r.x[k] - c.mean;
    } else {
      r.x[k] = clamp(c.mean + c.sd * normal(rng), c.lo, c.hi);
      r.z[k] = (r.x[k] - c.mean) / c.sd;
    }
  }
  return r;
}

// Indices into kControls used by the nuisance functions.
enum : std::size_t { kSize = 0, kLev = 1, kRota = 2, kGrowth = 3, kTop1 = 5, kAge = 6, kSoe = 9 };

// The nonlinear pair pairs an odd function of size in m with an even one in
// g (and a square of leverage in m with a linear leverage term in g), so the
// confounding is real but linear nuisance learners remain unbiased.
inline double m_of(const Row& r, bool nonlinear, double c) {
  if (nonlinear)
    return 0.30 + c * (0.10 * std::sin(1.5 * r.z[kSize]) + 0.04 * (r.z[kLev] * r.z[kLev] - 1.0)) +
           0.03 * r.z[kTop1] - 0.02 * r.z[kSoe];
  return 0.30 + c * (0.08 * r.z[kSize] + 0.04 * r.z[kLev]) + 0.03 * r.z[kTop1] - 0.02 * r.z[kSoe];
}

inline double g_of(const Row& r, bool nonlinear, double c) {
  if (nonlinear)
    return c * (0.5 * std::cos(1.5 * r.z[kSize]) + 0.3 * r.z[kLev]) + 0.2 * r.z[kRota] * r.z[kGrowth] +
           0.1 * r.z[kAge];
  return c * (0.4 * r.z[kSize] + 0.3 * r.z[kLev]) + 0.2 * r.z[kRota] + 0.1 * r.z[kAge];
}

/// Indices of rows kept after the missingness mask, in panel order.
inline std::vector<std::size_t> observed_mask(std::size_t total, double drop_fraction, std::size_t observed_rows,
                                              std::uint64_t seed) {
  std::size_t keep = observed_rows > 0 ? observed_rows
                                       : total - static_cast<std::size_t>(std::llround(drop_fraction * static_cast<double>(total)));
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (keep == total) return idx;
  Rng rng = make_rng(seed, seed_offset::synth + 1);
  shuffle(idx, rng);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline std::string firm_label(int f) {
  std::string s = std::to_string(f + 1);
  return "F" + std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

struct Frame {
  std::vector<std::string> firm;
  std::vector<int> year;
  std::vector<Row> rows;
  std::vector<double> industry, region, d, y, m, g;
};

inline PanelTable frame_to_table(const Frame& f, const std::vector<std::size_t>& keep, const char* treatment) {
  std::vector<std::string> firms;
  std::vector<int> years;
  for (auto i : keep) {
    firms.push_back(f.firm[i]);
    years.push_back(f.year[i]);
  }
  PanelTable t(std::move(firms), std::move(years));
  auto pick = [&](const std::vector<double>& v) {
    std::vector<double> out;
    out.reserve(keep.size());
    for (auto i : keep) out.push_back(v[i]);
    return out;
  };
  t.add_column(kOutcome, Role::outcome, pick(f.y));
  t.add_column(treatment, Role::treatment, pick(f.d));
  for (std::size_t k = 0; k < kControls.size(); ++k) {
    std::vector<double> col;
    for (auto i : keep) col.push_back(f.rows[i].x[k]);
    t.add_column(kControls[k].name, Role::control, std::move(col));
  }
  t.add_column("industry", Role::fixed_effect_key, pick(f.industry));
  t.add_column("region", Role::fixed_effect_key, pick(f.region));
  return t;
}

template <typename T>
std::vector<T> pick_rows(const std::vector<T>& v, const std::vector<std::size_t>& keep) {
  std::vector<T> out;
  for (auto i : keep) out.push_back(v[i]);
  return out;
}

}  // namespace detail

/// Continuous-treatment panel: D = clip(m(X) + firm effect + v) on
/// [0.0013, 1] and Y = theta_region * w * D + sum_k lag_k * D_{t-k} + g(X)
/// + year effect + firm effect + u. Lagged treatments come from burn-in
/// years that are generated but not emitted.
inline SynthResult generate_panel(const DgpSpec& spec) {
  spec.validate();
  Rng rng = make_rng(spec.seed, seed_offset::synth);
  NormalSampler normal;
  const int burn = static_cast<int>(spec.lag_thetas.size());
  const int span = spec.n_years + burn;

  std::vector<double> year_effect(static_cast<std::size_t>(span));
  for (auto& e : year_effect) e = spec.year_sd * normal(rng);

  detail::Frame f;
  const double d_sd = std::hypot(spec.firm_sd_d, spec.noise_d);
  for (int firm = 0; firm < spec.n_firms; ++firm) {
    const double industry = 1.0 + static_cast<double>(uniform_index(rng, 6));
    const auto region = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(spec.n_regions)));
    const double fe_y = spec.firm_sd_y * normal(rng);
    const double fe_d = spec.firm_sd_d * normal(rng);
    const double theta = spec.region_thetas.empty() ? spec.theta : spec.region_thetas[static_cast<std::size_t>(region)];
    std::vector<double> history;
    for (int t = 0; t < span; ++t) {
      const auto row = detail::draw_row(rng, normal);
      const double mx = detail::m_of(row, spec.nonlinear, spec.confounding);
      const double d = detail::clamp(mx + fe_d + spec.noise_d * normal(rng), kTreatmentLo, kTreatmentHi);
      const double gx = detail::g_of(row, spec.nonlinear, spec.confounding) + year_effect[static_cast<std::size_t>(t)];
      double y = spec.current_weight * theta * d + gx + fe_y + spec.noise_y * normal(rng);
      for (int k = 1; k <= burn; ++k)
        if (t - k >= 0) y += spec.lag_thetas[static_cast<std::size_t>(k - 1)] * history[static_cast<std::size_t>(t - k)];
      history.push_back(d);
      if (t < burn) continue;
      f.firm.push_back(detail::firm_label(firm));
      f.year.push_back(spec.first_year + t - burn);
      f.rows.push_back(row);
      f.industry.push_back(industry);
      f.region.push_back(region);
      f.d.push_back(d);
      f.y.push_back(y);
      f.m.push_back(detail::clipped_normal_mean(mx, d_sd, kTreatmentLo, kTreatmentHi));
      f.g.push_back(gx);
    }
  }
  const auto keep = detail::observed_mask(f.firm.size(), spec.drop_fraction, spec.observed_rows, spec.seed);
  SynthResult out{detail::frame_to_table(f, keep, kTreatment), {}};
  out.truth.kind = "panel";
  out.truth.theta = spec.theta;
  out.truth.region_thetas = spec.region_thetas;
  out.truth.lag_thetas = spec.lag_thetas;
  out.truth.current_weight = spec.current_weight;
  out.truth.m = detail::pick_rows(f.m, keep);
  out.truth.g = detail::pick_rows(f.g, keep);
  return out;
}

struct MediationSpec {
  std::array<double, 3> gammas{-0.0066, 0.0057, 0.0117};  // pressure, TMT stability, media tone
  double target_t = 4.0;
  double null_noise = 0.01;  // mediator noise SD when a gamma is zero
  double firm_sd = 0.02;
  double year_sd = 0.01;
};

inline const std::array<const char*, 3> kMediators{"pressure", "tsta", "media"};

/// Panel plus three mediator columns M_k = base_k + gamma_k * D + firm effect
/// + year effect + e. The noise SD is set so that the within-estimator's
/// t-statistic is close to `target_t`.
inline SynthResult generate_mediated(const DgpSpec& spec, const MediationSpec& med) {
  for (double g : med.gammas) require(std::isfinite(g), Errc::domain, "mediator coefficients must be finite");
  require(med.target_t > 0.0, Errc::domain, "target_t must be positive");
  auto out = generate_panel(spec);
  auto& t = out.table;
  const std::size_t n = t.rows();
  int n_firms = 0, n_years = 0;
  const auto firm_code = fe::group_codes(t.firm_ids(), &n_firms);
  const auto year_code = fe::group_codes(t.years(), &n_years);
  auto dcol = t.column(kTreatment);
  Eigen::MatrixXd d(static_cast<Eigen::Index>(n), 1);
  for (std::size_t i = 0; i < n; ++i) d(static_cast<Eigen::Index>(i), 0) = dcol[i];
  const Eigen::MatrixXd dw = fe::within_transform(d, {firm_code, year_code});
  const double sd_within = std::sqrt(dw.squaredNorm() / static_cast<double>(n));

  Rng rng = make_rng(spec.seed, seed_offset::synth + 2);
  NormalSampler normal;
  static constexpr std::array<double, 3> base{0.0, 0.85, -0.2};
  for (std::size_t k = 0; k < 3; ++k) {
    const double gamma = med.gammas[k];
    const double noise = gamma != 0.0 ? std::fabs(gamma) * std::sqrt(static_cast<double>(n)) * sd_within / med.target_t
                                      : med.null_noise;
    std::vector<double> firm_fx(static_cast<std::size_t>(n_firms)), year_fx(static_cast<std::size_t>(n_years));
    for (auto& v : firm_fx) v = med.firm_sd * normal(rng);
    for (auto& v : year_fx) v = med.year_sd * normal(rng);
    std::vector<double> m(n);
    for (std::size_t i = 0; i < n; ++i)
      m[i] = base[k] + gamma * dcol[i] + firm_fx[static_cast<std::size_t>(firm_code[i])] +
             year_fx[static_cast<std::size_t>(year_code[i])] + noise * normal(rng);
    t.add_column(kMediators[k], Role::mediator, std::move(m));
  }
  out.truth.kind = "mediated";
  out.truth.gammas = med.gammas;
  return out;
}

struct BinarySpec {
  int n_firms = 402;
  int n_years = 13;
  int first_year = 2010;
  double ate = -0.3385;
  double att = -0.2934;
  double propensity_slope = 1.0;  // logit of P(T=1) per SD of firm size
  double noise_y = 0.25;
  double year_sd = 0.1;
  std::size_t observed_rows = 3486;
  std::uint64_t seed = 0;
};

/// E[z * sigmoid(a z)] / E[sigmoid(a z)] for z ~ N(0, 1): the mean of z
/// among the treated when the propensity is sigmoid(a z).
inline double treated_mean_shift(double slope) {
  double num = 0.0, den = 0.0;
  const int steps = 20000;
  const double lo = -12.0, h = 24.0 / steps;
  for (int i = 0; i <= steps; ++i) {
    const double z = lo + h * i;
    const double w = (i == 0 || i == steps) ? 0.5 : 1.0;
    const double p = 1.0 / (1.0 + std::exp(-slope * z));
    num += w * z * p * detail::phi(z);
    den += w * p * detail::phi(z);
  }
  return num / den;
}

/// Binary-treatment oracle. Treatment probability is logistic in firm size;
/// the effect tau(X) = tau0 + tau1 * z_size is heterogeneous so that the
/// population ATE (tau0) and ATT (tau0 + tau1 * E[z | T = 1]) differ as planted.
inline SynthResult generate_binary(const BinarySpec& spec) {
  require(spec.n_firms * spec.n_years >= 50, Errc::domain, "need n_firms * n_years >= 50");
  require(spec.noise_y > 0.0, Errc::domain, "noise SD must be positive");
  require(spec.propensity_slope > 0.0, Errc::domain, "propensity slope must be positive");
  const double shift = treated_mean_shift(spec.propensity_slope);
  const double tau0 = spec.ate;
  const double tau1 = (spec.att - spec.ate) / shift;

  Rng rng = make_rng(spec.seed, seed_offset::synth + 3);
  NormalSampler normal;
  std::vector<double> year_effect(static_cast<std::size_t>(spec.n_years));
  for (auto& e : year_effect) e = spec.year_sd * normal(rng);
  detail::Frame f;
  std::vector<double> tau;
  for (int firm = 0; firm < spec.n_firms; ++firm) {
    const double industry = 1.0 + static_cast<double>(uniform_index(rng, 6));
    const double region = static_cast<double>(uniform_index(rng, 3));
    for (int t = 0; t < spec.n_years; ++t) {
      const auto row = detail::draw_row(rng, normal);
      const double zs = row.z[detail::kSize];
      const double p = 1.0 / (1.0 + std::exp(-spec.propensity_slope * zs));
      const double treated = uniform01(rng) < p ? 1.0 : 0.0;
      const double gx = 0.4 * zs + detail::g_of(row, true, 1.0) + year_effect[static_cast<std::size_t>(t)];
      const double effect = tau0 + tau1 * zs;
      f.firm.push_back(detail::firm_label(firm));
      f.year.push_back(spec.first_year + t);
      f.rows.push_back(row);
      f.industry.push_back(industry);
      f.region.push_back(region);
      f.d.push_back(treated);
      f.y.push_back(gx + effect * treated + spec.noise_y * normal(rng));
      f.m.push_back(p);
      f.g.push_back(gx);
      tau.push_back(effect);
    }
  }
  const auto keep = detail::observed_mask(f.firm.size(), 0.0, spec.observed_rows, spec.seed);
  SynthResult out{detail::frame_to_table(f, keep, kBinaryTreatment), {}};
  auto& gt = out.truth;
  gt.kind = "binary";
  gt.ate = spec.ate;
  gt.att = spec.att;
  gt.m = detail::pick_rows(f.m, keep);
  gt.g = detail::pick_rows(f.g, keep);
  gt.tau = detail::pick_rows(tau, keep);
  const auto tcol = out.table.column(kBinaryTreatment);
  double treated_sum = 0.0, treated_n = 0.0;
  for (std::size_t i = 0; i < gt.tau.size(); ++i) {
    gt.sample_ate += gt.tau[i] / static_cast<double>(gt.tau.size());
    if (tcol[i] == 1.0) {
      treated_sum += gt.tau[i];
      treated_n += 1.0;
    }
  }
  gt.sample_att = treated_n > 0 ? treated_sum / treated_n : 0.0;
  return out;
}

}  // namespace cfdml::synth
