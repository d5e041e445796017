#pragma once

// Command-line front end. Every subcommand reads a JSON config, derives all
// randomness from one seed, writes its artifacts atomically under an output
// directory and records them in manifest.json.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "cfdml/baselines.hpp"
#include "cfdml/csv.hpp"
#include "cfdml/dml.hpp"
#include "cfdml/error.hpp"
#include "cfdml/fixed_effects.hpp"
#include "cfdml/index_lab.hpp"
#include "cfdml/panel.hpp"
#include "cfdml/report.hpp"
#include "cfdml/synth.hpp"
#include "cfdml/vae.hpp"

namespace cfdml::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kOutRootEnv = "CFDML_OUT_ROOT";
inline constexpr const char* kManifestName = "manifest.json";

enum ExitCode { kOk = 0, kValidationFailure = 1, kUsage = 2 };

// ---------------------------------------------------------------------------
// Utilities
// ---------------------------------------------------------------------------

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  require(EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) == 1, Errc::io,
          "SHA-256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(static_cast<bool>(in), Errc::io, "cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Write-to-temporary then rename, so readers never see a partial file.
inline void write_atomic(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), Errc::io, "cannot write " + tmp.string());
    out << content;
    out.flush();
    require(static_cast<bool>(out), Errc::io, "short write to " + tmp.string());
  }
  fs::rename(tmp, p);
}

/// UTC timestamp; SOURCE_DATE_EPOCH pins it for reproducible manifests.
inline std::string timestamp() {
  std::time_t t = std::time(nullptr);
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::atoll(epoch));
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string panel_csv(const PanelTable& t) {
  std::ostringstream s;
  write_csv(s, t);
  return s.str();
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Run context
// ---------------------------------------------------------------------------

class Context {
 public:
  std::string command;
  json config = json::object();
  std::uint64_t seed = 0;
  bool seed_given = false;
  fs::path out_dir;
  std::vector<std::string> warnings;
  std::vector<std::string> notes;  // printed to stderr after the run

  Context(std::string cmd, const std::optional<fs::path>& config_path, std::optional<std::uint64_t> seed_flag,
          fs::path out)
      : command(std::move(cmd)), out_dir(std::move(out)) {
    started_ = timestamp();
    if (config_path) {
      config_path_ = *config_path;
      if (!fs::exists(*config_path)) fail(Errc::usage, "config file not found: " + config_path->string());
      config_text_ = read_file(*config_path);
      try {
        config = json::parse(config_text_);
      } catch (const json::exception& e) {
        fail(Errc::usage, "config " + config_path->string() + " is not valid JSON: " + e.what());
      }
      if (!config.is_object()) fail(Errc::usage, "config must be a JSON object");
      base_ = config_path->parent_path();
    } else {
      config_text_ = "{}";
    }
    seed_given = seed_flag.has_value();
    seed = seed_flag.value_or(config.value("seed", std::uint64_t{0}));
  }

  /// Rejects config keys a command does not understand.
  void allow_keys(std::initializer_list<const char*> keys) const {
    std::set<std::string> ok{"seed"};
    for (const char* k : keys) ok.insert(k);
    for (const auto& [key, value] : config.items())
      require(ok.count(key) > 0, Errc::schema, "unknown key '" + key + "' for " + command);
  }

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() || base_.empty() ? path : base_ / path;
  }

  /// Reads an input file and records its digest.
  std::string input(const fs::path& p) {
    std::string bytes = read_file(p);
    inputs_.push_back({p.string(), sha256_hex(bytes)});
    return bytes;
  }

  std::string required_path(const std::string& key) const {
    require(config.contains(key) && config[key].is_string(), Errc::schema,
            command + " config needs a '" + key + "' path");
    return config[key].get<std::string>();
  }

  PanelTable load_panel() {
    const fs::path data = resolve(required_path("input"));
    Schema schema;
    require(config.contains("schema"), Errc::schema, command + " config needs a 'schema' (path or object)");
    if (config["schema"].is_string()) {
      const fs::path sp = resolve(config["schema"].get<std::string>());
      schema = schema_from_json(parse_json(input(sp), sp.string()));
    } else {
      schema = schema_from_json(config["schema"]);
    }
    std::istringstream in(input(data));
    auto res = ingest_document(csv::parse(in), schema);
    for (const auto& w : res.report.warnings) warnings.push_back(w);
    return std::move(res.table);
  }

  static json parse_json(const std::string& text, const std::string& what) {
    try {
      return json::parse(text);
    } catch (const json::exception& e) {
      fail(Errc::parse, what + " is not valid JSON: " + e.what());
    }
  }

  void write(const std::string& name, const std::string& content) {
    write_atomic(out_dir / name, content);
    outputs_.push_back({name, sha256_hex(content)});
  }

  void write_manifest() {
    json m;
    m["command"] = command;
    m["tool_version"] = kToolVersion;
    m["seed"] = seed;
    m["config"] = {{"path", config_path_.string()}, {"sha256", sha256_hex(config_text_)}};
    m["inputs"] = json::array();
    for (const auto& [p, d] : inputs_) m["inputs"].push_back({{"path", p}, {"sha256", d}});
    m["outputs"] = json::array();
    for (const auto& [p, d] : outputs_) m["outputs"].push_back({{"path", p}, {"sha256", d}});
    m["warnings"] = warnings;
    m["started_at"] = started_;
    m["finished_at"] = timestamp();
    write_atomic(out_dir / kManifestName, dump(m));
  }

 private:
  fs::path config_path_;
  fs::path base_;
  std::string config_text_;
  std::string started_;
  std::vector<std::pair<std::string, std::string>> inputs_, outputs_;
};

// ---------------------------------------------------------------------------
// Config readers
// ---------------------------------------------------------------------------

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  try {
    return j.value(key, fallback);
  } catch (const json::exception& e) {
    fail(Errc::schema, std::string("config key '") + key + "': " + e.what());
  }
}

inline dml::DmlConfig dml_config(const Context& ctx) {
  auto c = dml::DmlConfig::from_json(ctx.config.value("dml", json::object()));
  if (ctx.seed_given || !ctx.config.value("dml", json::object()).contains("seed")) c.seed = ctx.seed;
  return c;
}

inline synth::MediationSpec mediation_spec(const json& j) {
  synth::MediationSpec m;
  static const std::set<std::string> known{"gammas", "target_t", "null_noise", "firm_sd", "year_sd"};
  for (const auto& [key, value] : j.items())
    require(known.count(key) > 0, Errc::schema, "unknown mediation key '" + key + "'");
  if (j.contains("gammas")) {
    const auto g = j["gammas"].get<std::vector<double>>();
    require(g.size() == 3, Errc::schema, "gammas needs three entries (pressure, tsta, media)");
    std::copy(g.begin(), g.end(), m.gammas.begin());
  }
  m.target_t = get_or(j, "target_t", m.target_t);
  m.null_noise = get_or(j, "null_noise", m.null_noise);
  m.firm_sd = get_or(j, "firm_sd", m.firm_sd);
  m.year_sd = get_or(j, "year_sd", m.year_sd);
  return m;
}

inline synth::BinarySpec binary_spec(const json& j, std::uint64_t seed) {
  synth::BinarySpec b;
  static const std::set<std::string> known{"n_firms", "n_years", "first_year", "ate", "att", "propensity_slope",
                                           "noise_y", "year_sd", "observed_rows"};
  for (const auto& [key, value] : j.items())
    require(known.count(key) > 0, Errc::schema, "unknown binary-oracle key '" + key + "'");
  b.n_firms = get_or(j, "n_firms", b.n_firms);
  b.n_years = get_or(j, "n_years", b.n_years);
  b.first_year = get_or(j, "first_year", b.first_year);
  b.ate = get_or(j, "ate", b.ate);
  b.att = get_or(j, "att", b.att);
  b.propensity_slope = get_or(j, "propensity_slope", b.propensity_slope);
  b.noise_y = get_or(j, "noise_y", b.noise_y);
  b.year_sd = get_or(j, "year_sd", b.year_sd);
  b.observed_rows = get_or(j, "observed_rows", b.observed_rows);
  b.seed = seed;
  return b;
}

// ---------------------------------------------------------------------------
// Generated-row files
// ---------------------------------------------------------------------------

inline std::string generated_csv(const vae::GeneratedRows& g, const PanelTable* source) {
  std::ostringstream s;
  csv::Row header{"firm_id", "year", "source_row"};
  header.insert(header.end(), g.columns.begin(), g.columns.end());
  header.push_back("provenance");
  csv::write_record(s, header);
  for (std::size_t i = 0; i < g.rows(); ++i) {
    const auto src = g.source[i];
    const bool keyed = src >= 0 && source != nullptr;
    csv::Row row{keyed ? vae::kGeneratedPrefix + source->firm_ids()[static_cast<std::size_t>(src)]
                       : std::string(vae::kGeneratedPrefix) + "prior_" + std::to_string(i),
                 keyed ? std::to_string(source->years()[static_cast<std::size_t>(src)]) : "NA", std::to_string(src)};
    for (Eigen::Index j = 0; j < g.values.cols(); ++j)
      row.push_back(csv::format_double(g.values(static_cast<Eigen::Index>(i), j)));
    row.push_back(kProvenanceGenerated);
    csv::write_record(s, row);
  }
  return s.str();
}

inline vae::GeneratedRows parse_generated(const std::string& text) {
  std::istringstream in(text);
  const auto doc = csv::parse(in);
  static const std::set<std::string> keys{"firm_id", "year", "source_row", "provenance"};
  vae::GeneratedRows g;
  std::vector<std::size_t> value_at;
  std::optional<std::size_t> source_at;
  for (std::size_t c = 0; c < doc.header.size(); ++c) {
    if (doc.header[c] == "source_row") source_at = c;
    if (keys.count(doc.header[c])) continue;
    g.columns.push_back(doc.header[c]);
    value_at.push_back(c);
  }
  require(source_at.has_value(), Errc::schema, "generated rows lack a 'source_row' column");
  g.values.resize(static_cast<Eigen::Index>(doc.rows.size()), static_cast<Eigen::Index>(value_at.size()));
  for (std::size_t r = 0; r < doc.rows.size(); ++r) {
    const auto& row = doc.rows[r];
    require(row.size() == doc.header.size(), Errc::parse, "generated row " + std::to_string(r + 2) + " has the wrong width");
    const auto src = csv::parse_double(row[*source_at]);
    require(src.has_value(), Errc::parse, "generated row " + std::to_string(r + 2) + ": bad source_row");
    g.source.push_back(static_cast<std::ptrdiff_t>(*src));
    for (std::size_t k = 0; k < value_at.size(); ++k) {
      const auto v = csv::parse_double(row[value_at[k]]);
      require(v.has_value(), Errc::parse,
              "generated row " + std::to_string(r + 2) + ", column '" + g.columns[k] + "': not a number");
      g.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = *v;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

inline int cmd_synth(Context& ctx) {
  ctx.allow_keys({"kind", "dgp", "mediation", "binary"});
  const std::string kind = get_or(ctx.config, "kind", std::string("panel"));
  synth::SynthResult res;
  if (kind == "binary") {
    res = synth::generate_binary(binary_spec(ctx.config.value("binary", json::object()), ctx.seed));
  } else {
    require(kind == "panel" || kind == "mediated", Errc::schema, "unknown synth kind '" + kind + "'");
    json dj = ctx.config.value("dgp", json::object());
    dj["seed"] = ctx.seed;
    const auto spec = synth::dgp_from_json(dj);
    res = kind == "mediated" ? synth::generate_mediated(spec, mediation_spec(ctx.config.value("mediation", json::object())))
                             : synth::generate_panel(spec);
  }
  ctx.write("panel.csv", panel_csv(res.table));
  ctx.write("schema.json", dump(schema_to_json(schema_of(res.table))));
  ctx.write("truth.json", dump(res.truth.to_json()));
  return kOk;
}

inline int cmd_ingest(Context& ctx) {
  ctx.allow_keys({"input", "schema", "winsorize", "derive_treatment"});
  PanelTable t = ctx.load_panel();
  if (ctx.config.contains("derive_treatment")) {
    const auto& d = ctx.config["derive_treatment"];
    const auto name = d.at("name").get<std::string>();
    const auto variant = parse_treatment_variant(d.value("variant", std::string("top2to10_over_top1")));
    const auto cols = d.at("stakes").get<std::vector<std::string>>();
    std::vector<std::vector<double>> stakes(t.rows());
    for (const auto& c : cols) {
      const auto v = t.column(c);
      for (std::size_t i = 0; i < t.rows(); ++i) stakes[i].push_back(v[i]);
    }
    auto tc = derive_treatment(stakes, variant);
    for (const auto& w : tc.warnings) ctx.warnings.push_back(w);
    t.add_column(name, Role::treatment, std::move(tc.values));
  }
  if (ctx.config.contains("winsorize")) {
    const auto& w = ctx.config["winsorize"];
    std::vector<std::string> cols = w.value("columns", std::vector<std::string>{});
    if (cols.empty())
      for (const auto& n : t.column_names())
        if (t.role(n) != Role::fixed_effect_key && !is_binary(t.column(n))) cols.push_back(n);
    t = winsorize(t, w.value("lower", 0.01), w.value("upper", 0.99), cols);
  }
  ctx.write("panel.csv", panel_csv(t));
  ctx.write("schema.json", dump(schema_to_json(schema_of(t))));
  json rep = {{"rows", t.rows()}, {"columns", t.column_names()}, {"warnings", ctx.warnings}};
  ctx.write("ingest_report.json", dump(rep));
  return kOk;
}

inline int cmd_index(Context& ctx) {
  ctx.allow_keys({"kind", "input"});
  const std::string kind = get_or(ctx.config, "kind", std::string("greenwash"));
  const fs::path path = ctx.resolve(ctx.required_path("input"));
  std::istringstream in(ctx.input(path));
  const auto doc = csv::parse(in);
  auto col = [&](const std::string& name) {
    auto it = std::find(doc.header.begin(), doc.header.end(), name);
    require(it != doc.header.end(), Errc::schema, "index input lacks column '" + name + "'");
    return static_cast<std::size_t>(it - doc.header.begin());
  };
  auto num = [&](std::size_t r, std::size_t c) {
    require(c < doc.rows[r].size(), Errc::parse, "row " + std::to_string(r + 2) + " is short");
    const auto v = csv::parse_double(doc.rows[r][c]);
    require(v.has_value(), Errc::parse,
            "row " + std::to_string(r + 2) + ", column '" + doc.header[c] + "': not a number");
    return *v;
  };
  auto integer = [&](std::size_t r, std::size_t c) {
    const double v = num(r, c);
    require(v == std::floor(v), Errc::parse, "row " + std::to_string(r + 2) + ", column '" + doc.header[c] + "': not an integer");
    return static_cast<long>(v);
  };
  std::ostringstream out;
  if (kind == "greenwash") {
    static const char* cred[5] = {"gri", "iso14001", "big_four", "third_party", "awards"};
    std::vector<index::DisclosureRecord> recs;
    const auto f = col("firm_id"), y = col("year"), hits = col("keyword_hits"), tokens = col("total_tokens");
    for (std::size_t r = 0; r < doc.rows.size(); ++r) {
      index::DisclosureRecord d;
      d.firm_id = doc.rows[r][f];
      d.year = static_cast<int>(integer(r, y));
      d.keyword_hits = integer(r, hits);
      d.total_tokens = integer(r, tokens);
      auto& rb = d.rubric;
      for (std::size_t k = 0; k < 5; ++k) rb.credibility[k] = static_cast<int>(integer(r, col(cred[k])));
      rb.discharge_compliance = static_cast<int>(integer(r, col("discharge_compliance")));
      rb.work_safety = static_cast<int>(integer(r, col("work_safety")));
      rb.negative_events = static_cast<int>(integer(r, col("negative_events")));
      rb.social_welfare = static_cast<int>(integer(r, col("social_welfare")));
      rb.emergency_mechanism = static_cast<int>(integer(r, col("emergency_mechanism")));
      rb.three_simultaneities = static_cast<int>(integer(r, col("three_simultaneities")));
      rb.cleaner_production = static_cast<int>(integer(r, col("cleaner_production")));
      for (std::size_t k = 0; k < 6; ++k) rb.emissions[k] = static_cast<int>(integer(r, col("emission_" + std::to_string(k + 1))));
      for (std::size_t k = 0; k < 5; ++k) rb.treatment[k] = static_cast<int>(integer(r, col("treatment_" + std::to_string(k + 1))));
      recs.push_back(d);
    }
    csv::write_record(out, {"firm_id", "year", "mws", "mrs", "gw"});
    for (const auto& s : index::greenwash_index(recs))
      csv::write_record(out, {s.firm_id, std::to_string(s.year), csv::format_double(s.mws), csv::format_double(s.mrs),
                              csv::format_double(s.gw)});
  } else if (kind == "team_stability") {
    const auto f = col("firm_id"), y = col("year"), a = col("m_t"), b = col("m_t1"), d = col("departures"), e = col("arrivals");
    csv::write_record(out, {"firm_id", "year", "tsta"});
    for (std::size_t r = 0; r < doc.rows.size(); ++r)
      csv::write_record(out, {doc.rows[r][f], std::to_string(integer(r, y)),
                              csv::format_double(index::team_stability(integer(r, a), integer(r, b), integer(r, d), integer(r, e)))});
  } else if (kind == "media") {
    const auto f = col("firm_id"), y = col("year"), p = col("positive"), n = col("negative"), t = col("total");
    csv::write_record(out, {"firm_id", "year", "media"});
    for (std::size_t r = 0; r < doc.rows.size(); ++r)
      csv::write_record(out, {doc.rows[r][f], std::to_string(integer(r, y)),
                              csv::format_double(index::jf_coefficient(integer(r, p), integer(r, n), integer(r, t)))});
  } else if (kind == "pollution") {
    const auto u = col("unit");
    std::vector<std::size_t> ind;
    for (std::size_t c = 0; c < doc.header.size(); ++c)
      if (c != u) ind.push_back(c);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(doc.rows.size()), static_cast<Eigen::Index>(ind.size()));
    for (std::size_t r = 0; r < doc.rows.size(); ++r)
      for (std::size_t k = 0; k < ind.size(); ++k) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = num(r, ind[k]);
    const auto score = index::entropy_topsis(m);
    csv::write_record(out, {"unit", "pollution"});
    for (std::size_t r = 0; r < doc.rows.size(); ++r)
      csv::write_record(out, {doc.rows[r][u], csv::format_double(score(static_cast<Eigen::Index>(r)))});
  } else {
    fail(Errc::schema, "unknown index kind '" + kind + "'");
  }
  ctx.write("index.csv", out.str());
  return kOk;
}

inline int cmd_vae_train(Context& ctx) {
  ctx.allow_keys({"input", "schema", "vae"});
  const PanelTable t = ctx.load_panel();
  auto vc = vae::vae_config_from_json(ctx.config.value("vae", json::object()));
  if (ctx.seed_given || !ctx.config.value("vae", json::object()).contains("seed")) vc.seed = ctx.seed;
  const auto res = vae::train(t, vc);
  ctx.write("vae_model.json", dump(vae::to_json(res.model)));
  std::ostringstream trace;
  csv::write_record(trace, {"epoch", "loss", "reconstruction", "kl"});
  for (const auto& e : res.trace)
    csv::write_record(trace, {std::to_string(e.epoch), csv::format_double(e.loss), csv::format_double(e.reconstruction),
                              csv::format_double(e.kl)});
  ctx.write("loss_trace.csv", trace.str());
  return kOk;
}

inline int cmd_vae_generate(Context& ctx) {
  ctx.allow_keys({"input", "schema", "model", "mode", "n", "sigma_scale"});
  const fs::path mp = ctx.resolve(ctx.required_path("model"));
  const auto model = vae::vae_from_json(Context::parse_json(ctx.input(mp), mp.string()));
  vae::GenerateOptions opt;
  opt.mode = vae::parse_generation_mode(get_or(ctx.config, "mode", std::string("encode_resample")));
  if (ctx.config.contains("n")) opt.n = get_or(ctx.config, "n", std::size_t{0});
  opt.seed = ctx.seed;
  opt.sigma_scale = get_or(ctx.config, "sigma_scale", 1.0);
  std::optional<PanelTable> source;
  if (ctx.config.contains("input")) source = ctx.load_panel();
  const auto g = vae::generate(model, opt, source ? &*source : nullptr);
  ctx.write("generated.csv", generated_csv(g, source ? &*source : nullptr));
  return kOk;
}

inline int cmd_vae_validate(Context& ctx) {
  ctx.allow_keys({"input", "schema", "generated", "gates"});
  const PanelTable real = ctx.load_panel();
  const fs::path gp = ctx.resolve(ctx.required_path("generated"));
  const auto gen = parse_generated(ctx.input(gp));
  const auto rep = vae::validate(real, gen, vae::gates_from_json(ctx.config.value("gates", json::object())));
  ctx.write("quality_report.json", dump(rep.to_json()));
  if (!rep.pass) {
    ctx.notes.push_back("quality gates failed; see " + (ctx.out_dir / "quality_report.json").string());
    return kValidationFailure;
  }
  return kOk;
}

inline int cmd_merge(Context& ctx) {
  ctx.allow_keys({"input", "schema", "generated", "quality_report", "force"});
  const PanelTable real = ctx.load_panel();
  const fs::path gp = ctx.resolve(ctx.required_path("generated"));
  const auto gen = parse_generated(ctx.input(gp));
  std::optional<vae::QualityReport> rep;
  if (ctx.config.contains("quality_report")) {
    const fs::path qp = ctx.resolve(ctx.required_path("quality_report"));
    rep.emplace();
    rep->pass = Context::parse_json(ctx.input(qp), qp.string()).at("pass").get<bool>();
  }
  const bool force = get_or(ctx.config, "force", false);
  if (force && !(rep && rep->pass)) ctx.warnings.push_back("merged without a passing quality report");
  const PanelTable merged = vae::merge(real, gen, rep ? &*rep : nullptr, force);
  ctx.write("merged.csv", panel_csv(merged));
  ctx.write("schema.json", dump(schema_to_json(schema_of(merged))));
  return kOk;
}

inline json estimate_details(const dml::DmlEstimate& e) {
  json d = {{"label", e.label}, {"theta_by_repetition", e.theta_by_repetition}, {"se_by_repetition", e.se_by_repetition}};
  d["folds"] = json::array();
  for (const auto& f : e.diagnostics)
    d["folds"].push_back({{"fold", f.fold}, {"n", f.n}, {"r2_outcome", f.r2_outcome}, {"r2_treatment", f.r2_treatment}});
  d["warnings"] = e.warnings;
  return d;
}

inline int cmd_estimate(Context& ctx) {
  ctx.allow_keys({"input", "schema", "dml", "label"});
  const PanelTable t = ctx.load_panel();
  const auto cfg = dml_config(ctx);
  auto e = dml::estimate(t, cfg);
  e.label = get_or(ctx.config, "label", std::string("DML"));
  for (const auto& w : e.warnings) ctx.warnings.push_back(w);
  const auto variable = dml::resolve_roles(t, cfg).treatment;
  ctx.write("estimates.csv", report::estimates_csv({report::from_dml(e, cfg, variable)}));
  ctx.write("diagnostics.json", dump({{"config", cfg.to_json()}, {"estimates", json::array({estimate_details(e)})}}));
  return kOk;
}

inline int cmd_robustness(Context& ctx) {
  ctx.allow_keys({"input", "schema", "dml", "grid"});
  const PanelTable t = ctx.load_panel();
  const auto cfg = dml_config(ctx);
  const auto grid = dml::RobustnessGrid::from_json(ctx.config.value("grid", json::object()));
  const auto cells = dml::robustness_grid(t, cfg, grid);
  const auto base_treatment = dml::resolve_roles(t, cfg).treatment;
  std::vector<report::EstimateRow> rows;
  json details = json::array();
  for (const auto& c : cells) {
    if (c.failed()) {
      ctx.warnings.push_back("cell '" + c.label + "' failed: " + c.error);
      details.push_back({{"label", c.label}, {"factor", c.factor}, {"error", c.error}});
      continue;
    }
    std::string variable = base_treatment;
    if (c.factor == "treatment")
      for (const auto& alt : grid.treatments)
        if (alt.label == c.label) variable = alt.column;
    rows.push_back(report::from_dml(*c.estimate, cfg, variable));
    auto d = estimate_details(*c.estimate);
    d["factor"] = c.factor;
    details.push_back(d);
  }
  require(!rows.empty(), Errc::degenerate, "every robustness cell failed");
  ctx.write("robustness.csv", report::estimates_csv(rows));
  ctx.write("diagnostics.json", dump({{"config", cfg.to_json()}, {"cells", details}}));
  return kOk;
}

inline int cmd_heterogeneity(Context& ctx) {
  ctx.allow_keys({"input", "schema", "dml", "by", "groups"});
  const PanelTable t = ctx.load_panel();
  const auto cfg = dml_config(ctx);
  std::vector<dml::Group> groups;
  for (const auto& g : ctx.config.value("groups", json::array()))
    groups.push_back({g.at("label").get<std::string>(), g.at("values").get<std::vector<double>>()});
  const auto results = dml::subgroup_estimates(t, cfg, ctx.required_path("by"), groups);
  const auto variable = dml::resolve_roles(t, cfg).treatment;
  std::vector<report::EstimateRow> rows;
  json details = json::array();
  for (const auto& r : results) {
    if (!r.warning.empty()) ctx.warnings.push_back(r.warning);
    if (!r.estimate) continue;
    rows.push_back(report::from_dml(*r.estimate, cfg, variable));
    details.push_back(estimate_details(*r.estimate));
  }
  require(!rows.empty(), Errc::size, "no subgroup was large enough to estimate");
  ctx.write("heterogeneity.csv", report::estimates_csv(rows));
  ctx.write("diagnostics.json", dump({{"config", cfg.to_json()}, {"groups", details}}));
  return kOk;
}

inline int cmd_temporal(Context& ctx) {
  ctx.allow_keys({"input", "schema", "dml", "max_lag", "use_generated"});
  const PanelTable t = ctx.load_panel();
  const auto cfg = dml_config(ctx);
  dml::TemporalOptions opt;
  opt.max_lag = get_or(ctx.config, "max_lag", opt.max_lag);
  opt.use_generated = get_or(ctx.config, "use_generated", opt.use_generated);
  const auto res = dml::temporal_effects(t, cfg, opt);
  const auto d = dml::resolve_roles(t, cfg).treatment;
  std::vector<report::EstimateRow> rows;
  json details = json::array();
  for (const auto& e : res) {
    std::string variable = d;
    if (e.label.rfind("lag", 0) == 0) variable = "L" + e.label.substr(3) + "." + d;
    if (e.label == "cumulative") variable = "mean " + d + " (t-" + std::to_string(opt.max_lag) + "..t)";
    rows.push_back(report::from_dml(e, cfg, variable));
    details.push_back(estimate_details(e));
  }
  ctx.write("temporal.csv", report::estimates_csv(rows));
  ctx.write("diagnostics.json", dump({{"config", cfg.to_json()}, {"estimates", details}}));
  return kOk;
}

inline int cmd_mediate(Context& ctx) {
  ctx.allow_keys({"input", "schema", "treatment", "mediators", "controls", "fixed_effects"});
  const PanelTable t = ctx.load_panel();
  std::string treatment = get_or(ctx.config, "treatment", std::string());
  if (treatment.empty()) {
    const auto d = t.names_with_role(Role::treatment);
    require(d.size() == 1, Errc::schema, "set 'treatment': the table has " + std::to_string(d.size()) + " treatment columns");
    treatment = d.front();
  }
  auto mediators = get_or(ctx.config, "mediators", t.names_with_role(Role::mediator));
  require(!mediators.empty(), Errc::schema, "no mediator columns");
  const auto controls = get_or(ctx.config, "controls", t.names_with_role(Role::control));
  fe::FixedEffects fx;
  const json fj = ctx.config.value("fixed_effects", json::object());
  fx.firm = get_or(fj, "firm", true);
  fx.year = get_or(fj, "year", true);
  std::vector<report::EstimateRow> rows;
  json details = json::array();
  for (const auto& m : mediators) {
    const auto r = fe::mediation_regression(t, treatment, m, controls, fx);
    rows.push_back(report::from_mediation(r, fx));
    details.push_back({{"mediator", m}, {"r2", r.r2}, {"constant", r.constant}, {"clusters", r.clusters}});
  }
  ctx.write("mediation.csv", report::estimates_csv(rows));
  ctx.write("diagnostics.json", dump({{"treatment", treatment}, {"regressions", details}}));
  return kOk;
}

inline int cmd_baseline(Context& ctx) {
  ctx.allow_keys({"input", "schema", "outcome", "treatment", "controls", "fe_keys", "rule", "threshold", "caliper"});
  const PanelTable t = ctx.load_panel();
  dml::DmlConfig roles_cfg;
  roles_cfg.outcome = get_or(ctx.config, "outcome", std::string());
  roles_cfg.treatment = get_or(ctx.config, "treatment", std::string());
  roles_cfg.controls = get_or(ctx.config, "controls", std::vector<std::string>{});
  roles_cfg.fe_keys = get_or(ctx.config, "fe_keys", std::vector<std::string>{});
  const auto roles = dml::resolve_roles(t, roles_cfg);
  const std::string rule_name = get_or(ctx.config, "rule", std::string("median_split"));
  require(rule_name == "median_split" || rule_name == "threshold", Errc::schema, "unknown binarize rule '" + rule_name + "'");
  const auto rule = rule_name == "threshold" ? baseline::BinarizeRule::threshold : baseline::BinarizeRule::median_split;
  const auto bin = baseline::binarize(t.column(roles.treatment), rule, get_or(ctx.config, "threshold", 0.0));
  const Design design = expand_design(t, roles.controls, false, roles_cfg.fe_keys);
  const auto p = baseline::propensity_fit(design.X, bin.values);
  for (const auto& w : p.warnings) ctx.warnings.push_back(w);
  const Eigen::VectorXd y = dml::column_vector(t, roles.outcome);
  const double caliper = get_or(ctx.config, "caliper", 0.2);
  const auto psm = baseline::psm_att(y, bin.values, p.probabilities, caliper);
  const auto ipw = baseline::ipw_ate(y, bin.values, p.probabilities);
  for (const auto& w : ipw.warnings) ctx.warnings.push_back(w);
  const std::string variable = is_binary(t.column(roles.treatment))
                                   ? roles.treatment
                                   : roles.treatment + " > " + csv::format_fixed(bin.cut, 4);
  ctx.write("baselines.csv", report::estimates_csv({report::from_psm(psm, variable, t.rows(), roles_cfg.fe_keys),
                                                    report::from_ipw(ipw, variable, t.rows(), roles_cfg.fe_keys)}));
  json d = {{"cut", bin.cut},
            {"treated", bin.treated},
            {"ridge_fallback", p.ridge_fallback},
            {"psm", {{"treated", psm.treated}, {"matched", psm.matched}, {"caliper", psm.caliper}}},
            {"ipw",
             {{"mean_treated", ipw.mean_treated},
              {"mean_control", ipw.mean_control},
              {"ess_treated", ipw.ess_treated},
              {"ess_control", ipw.ess_control}}}};
  ctx.write("diagnostics.json", dump(d));
  return kOk;
}

inline int cmd_report(Context& ctx) {
  ctx.allow_keys({"heading", "parts"});
  require(ctx.config.contains("parts") && ctx.config["parts"].is_array(), Errc::schema, "report config needs a 'parts' array");
  std::vector<report::ReportPart> parts;
  for (const auto& p : ctx.config["parts"]) {
    const fs::path path = ctx.resolve(p.at("estimates").get<std::string>());
    std::istringstream in(ctx.input(path));
    parts.push_back({report::parse_section(p.value("section", std::string("main"))), report::read_estimates(csv::parse(in))});
  }
  ctx.write("report.md", report::render_report(parts, get_or(ctx.config, "heading", std::string("Results"))));
  return kOk;
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

struct Command {
  const char* name;
  const char* help;
  int (*run)(Context&);
};

inline const std::vector<Command>& commands() {
  static const std::vector<Command> all{
      {"ingest", "validate a panel CSV against a schema; optional treatment derivation and winsorizing", cmd_ingest},
      {"index", "compute greenwash, team-stability, media-tone or pollution indices", cmd_index},
      {"synth", "generate a synthetic panel with planted effects", cmd_synth},
      {"vae-train", "train the row VAE", cmd_vae_train},
      {"vae-generate", "generate counterfactual rows from a trained VAE", cmd_vae_generate},
      {"vae-validate", "check generated rows against the real distribution", cmd_vae_validate},
      {"merge", "append generated rows to the real panel", cmd_merge},
      {"estimate", "cross-fitted DML estimate of the treatment effect", cmd_estimate},
      {"robustness", "re-estimate across learners, split ratios, winsorizing and treatments", cmd_robustness},
      {"heterogeneity", "estimate within subgroups", cmd_heterogeneity},
      {"temporal", "current, lagged and cumulative effects", cmd_temporal},
      {"mediate", "two-way fixed-effects mediator regressions", cmd_mediate},
      {"baseline", "propensity-score matching and weighting on a binarized treatment", cmd_baseline},
      {"report", "render estimate CSVs as Markdown tables", cmd_report},
  };
  return all;
}

inline fs::path default_out_root() {
  const char* env = std::getenv(kOutRootEnv);
  return env && *env ? fs::path(env) : fs::path("cfdml-out");
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Counterfactual-augmented double machine learning toolkit", "cfdml"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  struct Flags {
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
  };
  std::map<std::string, Flags> flags;
  std::map<std::string, CLI::App*> subs;
  for (const auto& c : commands()) {
    auto* sub = app.add_subcommand(c.name, c.help);
    auto& f = flags[c.name];
    sub->add_option("--config", f.config, "JSON config file");
    sub->add_option("--seed", f.seed, "master seed (overrides the config)");
    sub->add_option("--out", f.out, std::string("output directory (default $") + kOutRootEnv + "/<command>)");
    subs[c.name] = sub;
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code != 0) err << app.help();
    return code == 0 ? kOk : kUsage;
  }
  for (const auto& c : commands()) {
    auto* sub = subs[c.name];
    if (!sub->parsed()) continue;
    const auto& f = flags[c.name];
    try {
      const fs::path out_dir = f.out.empty() ? default_out_root() / c.name : fs::path(f.out);
      std::optional<fs::path> cfg;
      if (!f.config.empty()) cfg = fs::path(f.config);
      std::optional<std::uint64_t> seed;
      if (sub->count("--seed") > 0) seed = f.seed;
      Context ctx(c.name, cfg, seed, out_dir);
      const int status = c.run(ctx);
      ctx.write_manifest();
      for (const auto& w : ctx.warnings) err << "warning: " << w << "\n";
      for (const auto& n : ctx.notes) err << n << "\n";
      out << c.name << ": wrote " << out_dir.string() << "\n";
      return status;
    } catch (const Error& e) {
      err << "cfdml " << c.name << ": " << e.what() << "\n";
      if (e.code() == Errc::usage) {
        err << sub->help();
        return kUsage;
      }
      return kValidationFailure;
    } catch (const std::exception& e) {
      err << "cfdml " << c.name << ": " << e.what() << "\n";
      return kValidationFailure;
    }
  }
  err << app.help();
  return kUsage;
}

}  // namespace cfdml::cli
