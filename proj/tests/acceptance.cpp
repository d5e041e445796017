// End-to-end oracle checks. One PASS/FAIL line per criterion; exits nonzero
// when any criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <unistd.h>

#include "cfdml/baselines.hpp"
#include "cfdml/cli.hpp"
#include "cfdml/dml.hpp"
#include "cfdml/fixed_effects.hpp"
#include "cfdml/index_lab.hpp"
#include "cfdml/synth.hpp"
#include "cfdml/vae.hpp"

using namespace cfdml;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr double kTheta = -0.3726;
constexpr int kSeeds = 20;

struct Verdict {
  bool pass;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

synth::DgpSpec oracle(std::uint64_t seed) {
  synth::DgpSpec s;
  s.n_firms = 402;
  s.observed_rows = 3486;
  s.seed = seed;
  return s;
}

dml::DmlConfig dml_with(LearnerKind kind, std::uint64_t seed, const std::string& ratio = "1:4") {
  dml::DmlConfig c;
  c.fe_keys = {"year", "industry"};
  c.outcome_learner = c.treatment_learner = LearnerSpec::make(kind);
  c.split_ratio = ratio;
  c.repetitions = 1;
  c.seed = seed;
  return c;
}

Verdict theta_recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  double sum = 0.0, worst = 0.0;
  for (int s = 1; s <= kSeeds; ++s) {
    const auto data = synth::generate_panel(oracle(static_cast<std::uint64_t>(s)));
    const auto e = dml::estimate(data.table, dml_with(LearnerKind::gbdt, static_cast<std::uint64_t>(s)));
    sum += e.theta;
    worst = std::max(worst, std::fabs(e.theta - kTheta));
  }
  const double mean = sum / kSeeds, secs = seconds_since(t0);
  return {std::fabs(mean - kTheta) <= 0.02 && worst <= 0.08 && secs < 300.0,
          fmt("mean %.4f (|bias| %.4f <= 0.02), worst seed |err| %.4f <= 0.08, %.0fs < 300s", mean,
              std::fabs(mean - kTheta), worst, secs)};
}

Verdict cross_learner() {
  const auto data = synth::generate_panel(oracle(101));
  bool ok = true;
  std::string detail;
  for (auto kind : {LearnerKind::gbdt, LearnerKind::gbdt_alt, LearnerKind::random_forest, LearnerKind::lasso}) {
    const auto e = dml::estimate(data.table, dml_with(kind, 101));
    ok = ok && e.theta < 0.0 && std::fabs(e.theta - kTheta) <= 0.1;
    detail += to_string(kind) + fmt(" %.4f; ", e.theta);
  }
  return {ok, detail + "each within 0.1 and negative"};
}

Verdict split_stability() {
  const auto data = synth::generate_panel(oracle(102));
  double lo = 1e9, hi = -1e9;
  std::string detail;
  for (const char* ratio : {"1:2", "1:4", "1:7"}) {
    const auto e = dml::estimate(data.table, dml_with(LearnerKind::gbdt, 102, ratio));
    lo = std::min(lo, e.theta);
    hi = std::max(hi, e.theta);
    detail += std::string(ratio) + fmt(" %.4f; ", e.theta);
  }
  return {hi - lo <= 0.05, detail + fmt("spread %.4f <= 0.05", hi - lo)};
}

Verdict null_coverage() {
  int covered = 0;
  for (int s = 1; s <= kSeeds; ++s) {
    auto spec = oracle(static_cast<std::uint64_t>(200 + s));
    spec.theta = 0.0;
    const auto e = dml::estimate(synth::generate_panel(spec).table, dml_with(LearnerKind::gbdt, static_cast<std::uint64_t>(s)));
    covered += e.ci_low <= 0.0 && e.ci_high >= 0.0;
  }
  return {covered >= 18, fmt("%d/20 intervals cover 0 (need 18)", covered)};
}

Verdict vae_gates() {
  synth::DgpSpec spec;
  spec.observed_rows = 1743;
  spec.seed = 7;
  const auto data = synth::generate_panel(spec);
  vae::VaeConfig vc;
  vc.beta = 0.001;
  vc.latent_dim = 12;
  vc.epochs = 500;
  vc.seed = 7;
  const auto trained = vae::train(data.table, vc);
  const auto gen = vae::generate(trained.model, {.mode = vae::GenerationMode::encode_resample, .seed = 7}, &data.table);
  const auto quality = vae::validate(data.table, gen, {.smd = 0.1, .mae = 1e9, .mse = 1e9});
  double max_smd = 0.0;
  for (const auto& f : quality.features) max_smd = std::max(max_smd, std::fabs(f.smd));
  const auto merged = vae::merge(data.table, gen, &quality);
  const auto raw = dml::estimate(data.table, dml_with(LearnerKind::gbdt, 7));
  const auto aug = dml::estimate(merged, dml_with(LearnerKind::gbdt, 7));
  return {max_smd <= 0.1 && merged.rows() == 3486 && std::fabs(aug.theta - kTheta) <= 0.08 && aug.se <= raw.se,
          fmt("max |SMD| %.4f <= 0.1; merged rows %zu; merged theta %.4f (|err| %.4f <= 0.08); SE %.4f <= raw %.4f",
              max_smd, merged.rows(), aug.theta, std::fabs(aug.theta - kTheta), aug.se, raw.se)};
}

Verdict gradients() {
  vae::VaeConfig c;
  c.latent_dim = 4;
  c.hidden = {16, 8};
  c.beta = 1.0;
  c.seed = 3;
  std::vector<vae::FeatureNorm> features;
  for (int j = 0; j < 6; ++j) features.push_back({"x" + std::to_string(j), 0.0, 1.0, false, -1e300, 1e300});
  const auto model = vae::initialize(features, c);
  Rng rng = make_rng(4);
  NormalSampler normal;
  vae::Matrix batch(16, 6), noise(16, 4);
  for (Eigen::Index i = 0; i < 16; ++i) {
    for (Eigen::Index j = 0; j < 6; ++j) batch(i, j) = normal(rng);
    for (Eigen::Index j = 0; j < 4; ++j) noise(i, j) = normal(rng);
  }
  const double rel = vae::grad_check(model, batch, noise, 2000, 5);

  // encoder with a fixed output [mu | log var]
  auto fixed = [&](double mu) {
    vae::VaeModel m;
    m.latent_dim = 1;
    m.features = {features[0]};
    nn::RowVector bias(2);
    bias << mu, 0.0;
    m.encoder = nn::Mlp::from_layers({{vae::Matrix::Zero(1, 2), bias, nn::Activation::identity}});
    m.decoder = nn::Mlp::from_layers({{vae::Matrix::Zero(1, 1), nn::RowVector::Zero(1), nn::Activation::identity}});
    return vae::elbo_loss(m, batch.leftCols(1), noise.leftCols(1)).kl;
  };
  const double kl1 = fixed(1.0), kl0 = fixed(0.0);
  return {rel <= 1e-4 && std::fabs(kl1 - 0.5) <= 1e-12 && std::fabs(kl0) <= 1e-12,
          fmt("max relative gradient error %.2e <= 1e-4; KL(1,1) = %.15f; KL(0,1) = %.1e", rel, kl1, kl0)};
}

Verdict index_oracles() {
  index::DisclosureRubric full;
  full.credibility.fill(1);
  full.discharge_compliance = full.work_safety = full.social_welfare = 1;
  full.emergency_mechanism = full.three_simultaneities = full.cleaner_production = 1;
  full.negative_events = 3;
  full.emissions.fill(2);
  full.treatment.fill(2);
  const int score = index::substantive_score(full);

  const bool jf = index::jf_coefficient(10, 0, 10) == 1.0 && index::jf_coefficient(0, 10, 10) == -1.0 &&
                  index::jf_coefficient(5, 5, 10) == 0.0;
  const bool team = index::team_stability(10, 10, 0, 0) == 1.0;

  Rng rng = make_rng(9);
  std::vector<index::DisclosureRecord> recs;
  for (int year = 2010; year < 2023; ++year)
    for (int f = 0; f < 40; ++f) {
      index::DisclosureRecord r{"F" + std::to_string(f), year, static_cast<long>(uniform_index(rng, 500)), 5000, {}};
      r.rubric.negative_events = static_cast<int>(uniform_index(rng, 4));
      for (auto& e : r.rubric.emissions) e = static_cast<int>(uniform_index(rng, 3));
      recs.push_back(r);
    }
  const auto gw = index::greenwash_index(recs);
  std::map<int, double> sums;
  for (const auto& g : gw) sums[g.year] += g.gw;
  double worst = 0.0;
  for (const auto& [y, s] : sums) worst = std::max(worst, std::fabs(s));
  const double tol = 1e-9 * static_cast<double>(recs.size());

  Eigen::MatrixXd two(2, 1);
  two << 3.0, 8.0;
  const auto c = index::entropy_topsis(two);
  const bool topsis = std::fabs(c(0)) <= 1e-12 && std::fabs(c(1) - 1.0) <= 1e-12;

  return {score == 36 && jf && team && worst <= tol && topsis,
          fmt("score %d; jf cases %s; stability %s; max |sum gw| per year %.1e <= %.1e; topsis {%.3f, %.3f}", score,
              jf ? "ok" : "WRONG", team ? "ok" : "WRONG", worst, tol, c(0), c(1))};
}

Verdict baselines() {
  synth::BinarySpec spec;
  spec.seed = 21;
  const auto r = synth::generate_binary(spec);
  const Design design = expand_design(r.table, false, {"year", "industry"});
  const Eigen::VectorXd y = dml::column_vector(r.table, "gw"), t = dml::column_vector(r.table, "treated");
  const auto p = baseline::propensity_fit(design.X, t);
  const auto psm = baseline::psm_att(y, t, p.probabilities);
  const auto ipw = baseline::ipw_ate(y, t, p.probabilities);
  return {r.table.rows() == 3486 && std::fabs(psm.att + 0.2934) <= 0.05 && std::fabs(ipw.ate + 0.3385) <= 0.05,
          fmt("n %zu; ATT %.4f vs -0.2934; ATE %.4f vs -0.3385 (each within 0.05)", r.table.rows(), psm.att, ipw.ate)};
}

Verdict mediation() {
  const synth::MediationSpec med;
  int hits = 0;
  for (int s = 1; s <= kSeeds; ++s) {
    auto spec = oracle(static_cast<std::uint64_t>(300 + s));
    const auto r = synth::generate_mediated(spec, med);
    bool all = true;
    for (std::size_t k = 0; k < 3; ++k) {
      const auto m = fe::mediation_regression(r.table, "balance", synth::kMediators[k], synth::control_names());
      all = all && (m.coefficient > 0.0) == (med.gammas[k] > 0.0) && m.p_value < 0.05;
    }
    hits += all;
  }
  return {hits >= 16, fmt("%d/20 seeds recover all three mediators (need 16)", hits)};
}

Verdict temporal() {
  int hits = 0;
  for (int s = 1; s <= kSeeds; ++s) {
    auto spec = oracle(static_cast<std::uint64_t>(400 + s));
    spec.current_weight = 0.0;
    spec.lag_thetas = {kTheta};
    spec.firm_sd_d = 0.0;
    spec.observed_rows = 0;
    spec.drop_fraction = 0.0;
    const auto data = synth::generate_panel(spec);
    const auto est = dml::temporal_effects(data.table, dml_with(LearnerKind::lasso, static_cast<std::uint64_t>(s)),
                                           {.max_lag = 1});
    hits += est[1].p_value < 0.01 && est[0].ci_low <= 0.0 && est[0].ci_high >= 0.0;
  }
  return {hits >= 16, fmt("%d/20 seeds: lag 1 significant at 1%% and current CI covers 0 (need 16)", hits)};
}

// Full CLI pipeline into `root`; returns false when any step fails.
bool pipeline(const fs::path& root) {
  fs::remove_all(root);
  fs::create_directories(root);
  auto config = [&](const std::string& name, const json& j) {
    std::ofstream(root / name) << j.dump(2);
    return (root / name).string();
  };
  const json data = {{"input", "s/panel.csv"}, {"schema", "s/schema.json"}};
  const json dml = {{"fe_keys", {"year", "industry"}}, {"repetitions", 2}, {"learner", "gbdt"}};
  auto with = [&](json base, const json& extra) {
    for (const auto& [k, v] : extra.items()) base[k] = v;
    return base;
  };
  const std::vector<std::tuple<std::string, json, std::string>> steps{
      {"synth", {{"kind", "mediated"}, {"dgp", {{"n_firms", 120}}}}, "s"},
      {"synth", {{"kind", "binary"}, {"binary", {{"n_firms", 120}, {"observed_rows", 1000}}}}, "bs"},
      {"vae-train", with(data, {{"vae", {{"latent_dim", 12}, {"beta", 0.001}, {"epochs", 60}}}}), "vt"},
      {"vae-generate", with(data, {{"model", "vt/vae_model.json"}}), "vg"},
      {"vae-validate", with(data, {{"generated", "vg/generated.csv"}, {"gates", {{"smd", 1.0}, {"mae", 1.0}, {"mse", 1.0}}}}), "vv"},
      {"merge", with(data, {{"generated", "vg/generated.csv"}, {"quality_report", "vv/quality_report.json"}}), "mg"},
      {"estimate", with(data, {{"dml", dml}, {"label", "Raw"}}), "e"},
      {"estimate", {{"input", "mg/merged.csv"}, {"schema", "mg/schema.json"}, {"dml", dml}, {"label", "Merged"}}, "em"},
      {"robustness", with(data, {{"dml", with(dml, {{"learner", "lasso"}})}, {"grid", {{"learners", {"ols"}}, {"split_ratios", {"1:2"}}}}}), "rb"},
      {"heterogeneity", with(data, {{"dml", with(dml, {{"learner", "lasso"}})}, {"by", "region"},
                                    {"groups", {{{"label", "East"}, {"values", {0}}}, {{"label", "Other"}, {"values", {1, 2}}}}}}), "ht"},
      {"temporal", with(data, {{"dml", with(dml, {{"learner", "lasso"}})}, {"max_lag", 1}}), "tp"},
      {"mediate", data, "md"},
      {"baseline", {{"input", "bs/panel.csv"}, {"schema", "bs/schema.json"}, {"fe_keys", {"year", "industry"}}}, "bl"},
      {"report", {{"heading", "Pipeline"},
                  {"parts", {{{"section", "main"}, {"estimates", "e/estimates.csv"}},
                             {{"section", "main"}, {"estimates", "em/estimates.csv"}},
                             {{"section", "robustness"}, {"estimates", "rb/robustness.csv"}},
                             {{"section", "heterogeneity"}, {"estimates", "ht/heterogeneity.csv"}},
                             {{"section", "temporal"}, {"estimates", "tp/temporal.csv"}},
                             {{"section", "mediation"}, {"estimates", "md/mediation.csv"}},
                             {{"section", "baseline"}, {"estimates", "bl/baselines.csv"}}}}},
       "rp"},
  };
  int k = 0;
  for (const auto& [cmd, cfg, out] : steps) {
    const auto path = config("step" + std::to_string(k++) + ".json", cfg);
    std::ostringstream sink;
    if (cli::run({cmd, "--config", path, "--seed", "11", "--out", (root / out).string()}, sink, sink) != 0) {
      std::fprintf(stderr, "pipeline step %s failed:\n%s\n", cmd.c_str(), sink.str().c_str());
      return false;
    }
  }
  return true;
}

std::map<std::string, std::string> artifacts(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& f : fs::recursive_directory_iterator(root)) {
    const auto ext = f.path().extension();
    if (f.is_regular_file() && (ext == ".csv" || ext == ".md"))
      out[fs::relative(f.path(), root).string()] = cli::read_file(f.path());
  }
  return out;
}

Verdict determinism() {
  const auto base = fs::temp_directory_path() / ("cfdml_accept_" + std::to_string(::getpid()));
  const bool ok = pipeline(base / "a") && pipeline(base / "b");
  if (!ok) {
    fs::remove_all(base);
    return {false, "pipeline failed"};
  }
  const auto a = artifacts(base / "a"), b = artifacts(base / "b");
  fs::remove_all(base);
  int differing = 0;
  for (const auto& [name, bytes] : a) differing += !b.count(name) || b.at(name) != bytes;
  return {a.size() == b.size() && differing == 0 && a.count("rp/report.md") == 1,
          fmt("%zu CSV/Markdown artifacts per run, %d differ", a.size(), differing)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"oracle theta recovery", theta_recovery},
      {"cross-learner robustness", cross_learner},
      {"split-ratio stability", split_stability},
      {"null coverage", null_coverage},
      {"VAE quality gates and merged DML", vae_gates},
      {"ELBO gradients and KL closed form", gradients},
      {"index oracles", index_oracles},
      {"PSM / IPW baselines", baselines},
      {"mediation recovery", mediation},
      {"temporal separation", temporal},
      {"pipeline determinism", determinism},
  };
  int failed = 0, k = 0;
  for (const auto& [name, check] : criteria) {
    ++k;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s %2d %s: %s [%.1fs]\n", v.pass ? "PASS" : "FAIL", k, name, v.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
