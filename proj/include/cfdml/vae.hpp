#pragma once

// Variational autoencoder over full panel rows (outcome, treatment and
// controls together), used to produce counterfactual rows by re-sampling the
// latent code of each observed row.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cfdml/error.hpp"
#include "cfdml/neural.hpp"
#include "cfdml/panel.hpp"
#include "cfdml/rng.hpp"
#include "cfdml/stats.hpp"

namespace cfdml::vae {

using nn::Matrix;
using nn::Mlp;
using nn::Vector;

struct FeatureNorm {
  std::string name;
  double mean = 0.0;
  double sd = 1.0;  // 1 for constant columns
  bool binary = false;
  double min = 0.0;
  double max = 0.0;
};

struct VaeModel {
  Mlp encoder;  // row -> [mu, log var]
  Mlp decoder;  // latent -> row
  int latent_dim = 0;
  double beta = 1.0;
  std::vector<FeatureNorm> features;
  std::uint64_t seed = 0;

  Eigen::Index width() const { return static_cast<Eigen::Index>(features.size()); }

  std::vector<std::string> column_names() const {
    std::vector<std::string> out;
    for (const auto& f : features) out.push_back(f.name);
    return out;
  }

  void check() const {
    require(latent_dim > 0, Errc::shape, "latent dimension must be positive");
    require(beta > 0.0, Errc::domain, "beta must be positive");
    require(encoder.input_dim() == width() && encoder.output_dim() == 2 * latent_dim, Errc::shape,
            "encoder must map the row width to twice the latent dimension");
    require(decoder.input_dim() == latent_dim && decoder.output_dim() == width(), Errc::shape,
            "decoder must map the latent dimension to the row width");
  }

  Matrix standardize(const Matrix& raw) const {
    require(raw.cols() == width(), Errc::shape, "row width differs from the model");
    Matrix z(raw.rows(), raw.cols());
    for (Eigen::Index j = 0; j < raw.cols(); ++j) {
      const auto& f = features[static_cast<std::size_t>(j)];
      z.col(j) = (raw.col(j).array() - f.mean) / f.sd;
    }
    return z;
  }

  Matrix destandardize(const Matrix& z) const {
    require(z.cols() == width(), Errc::shape, "row width differs from the model");
    Matrix raw(z.rows(), z.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const auto& f = features[static_cast<std::size_t>(j)];
      raw.col(j) = z.col(j).array() * f.sd + f.mean;
    }
    return raw;
  }

  /// Standardized rows of `table` in model column order.
  Matrix encode_input(const PanelTable& table) const {
    Matrix raw(static_cast<Eigen::Index>(table.rows()), width());
    for (Eigen::Index j = 0; j < width(); ++j) {
      const auto col = table.column(features[static_cast<std::size_t>(j)].name);
      for (std::size_t i = 0; i < col.size(); ++i) raw(static_cast<Eigen::Index>(i), j) = col[i];
    }
    return standardize(raw);
  }
};

/// Columns the VAE models by default: every column that is not a fixed-effect key.
inline std::vector<std::string> default_columns(const PanelTable& table) {
  std::vector<std::string> out;
  for (const auto& n : table.column_names())
    if (table.role(n) != Role::fixed_effect_key) out.push_back(n);
  return out;
}

inline std::vector<FeatureNorm> feature_norms(const PanelTable& table, const std::vector<std::string>& columns) {
  std::vector<FeatureNorm> out;
  for (const auto& name : columns) {
    const auto col = table.column(name);
    FeatureNorm f;
    f.name = name;
    f.mean = stats::mean(col);
    const double sd = col.size() > 1 ? stats::sample_sd(col) : 0.0;
    f.sd = sd > 0.0 ? sd : 1.0;
    f.binary = is_binary(col);
    f.min = *std::min_element(col.begin(), col.end());
    f.max = *std::max_element(col.begin(), col.end());
    require(std::isfinite(f.mean) && std::isfinite(f.sd), Errc::numeric, "column '" + name + "' is not finite");
    out.push_back(f);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

struct ElboResult {
  double loss = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
  nn::Gradients encoder_grad;
  nn::Gradients decoder_grad;
};

/// beta-weighted ELBO: element-wise MSE of the reconstruction plus beta times
/// the batch-mean KL divergence to the standard normal prior, with the
/// latent drawn as mu + sigma * noise. Gradients are filled when requested.
inline ElboResult elbo_loss(const VaeModel& model, const Matrix& batch, const Matrix& noise,
                            bool with_gradients = false) {
  const Eigen::Index B = batch.rows(), L = model.latent_dim;
  require(B > 0, Errc::size, "empty batch");
  require(batch.cols() == model.width(), Errc::shape, "batch width differs from the model");
  require(noise.rows() == B && noise.cols() == L, Errc::shape,
          "noise must be batch x latent (" + std::to_string(B) + " x " + std::to_string(L) + ")");
  const auto enc = nn::forward(model.encoder, batch);
  const Matrix mu = enc.back().leftCols(L);
  const Matrix logvar = enc.back().rightCols(L);
  require(logvar.allFinite() && mu.allFinite(), Errc::numeric, "non-finite encoder output (mu / log variance)");
  const Matrix sigma = (0.5 * logvar.array()).exp().matrix();
  require(sigma.allFinite(), Errc::numeric, "non-finite latent scale exp(log variance / 2)");
  const Matrix z = mu + sigma.cwiseProduct(noise);
  const auto dec = nn::forward(model.decoder, z);
  const Matrix diff = dec.back() - batch;

  const double count = static_cast<double>(B * batch.cols());
  ElboResult r;
  r.reconstruction = diff.squaredNorm() / count;
  r.kl = -0.5 * (1.0 + logvar.array() - mu.array().square() - logvar.array().exp()).sum() / static_cast<double>(B);
  require(std::isfinite(r.reconstruction), Errc::numeric, "non-finite reconstruction term");
  require(std::isfinite(r.kl), Errc::numeric, "non-finite KL term");
  r.loss = r.reconstruction + model.beta * r.kl;
  if (!with_gradients) return r;

  r.decoder_grad = nn::backward(model.decoder, dec, 2.0 * diff / count);
  const Matrix& dz = r.decoder_grad.input;
  Matrix dout(B, 2 * L);
  dout.leftCols(L) = dz + model.beta * mu / static_cast<double>(B);
  dout.rightCols(L) = (dz.array() * noise.array() * sigma.array() * 0.5 +
                       model.beta * 0.5 * (logvar.array().exp() - 1.0) / static_cast<double>(B))
                          .matrix();
  r.encoder_grad = nn::backward(model.encoder, enc, dout);
  return r;
}

/// Encoder parameters followed by decoder parameters.
inline Vector flatten(const VaeModel& m) {
  const Vector e = m.encoder.flatten(), d = m.decoder.flatten();
  Vector out(e.size() + d.size());
  out << e, d;
  return out;
}

inline void unflatten(VaeModel& m, const Vector& theta) {
  const auto ne = m.encoder.parameter_count();
  require(theta.size() == ne + m.decoder.parameter_count(), Errc::shape, "parameter vector length mismatch");
  m.encoder.unflatten(theta.head(ne));
  m.decoder.unflatten(theta.tail(theta.size() - ne));
}

/// Worst relative error of the analytic ELBO gradient against central differences.
inline double grad_check(const VaeModel& model, const Matrix& batch, const Matrix& noise, std::size_t samples = 100,
                         std::uint64_t seed = 0) {
  const auto r = elbo_loss(model, batch, noise, true);
  Vector analytic(flatten(model).size());
  analytic << r.encoder_grad.flatten(), r.decoder_grad.flatten();
  VaeModel probe = model;
  auto objective = [&](const Vector& theta) {
    unflatten(probe, theta);
    return elbo_loss(probe, batch, noise).loss;
  };
  return nn::grad_check(objective, flatten(model), analytic, samples, seed);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct VaeConfig {
  int latent_dim = 4;
  double beta = 1.0;
  int epochs = 200;
  int batch_size = 64;
  double learning_rate = 1e-3;
  std::vector<Eigen::Index> hidden{32, 32};
  std::vector<std::string> columns;  // empty: every non-key column
  std::uint64_t seed = 0;

  void validate() const {
    require(latent_dim > 0, Errc::domain, "latent_dim must be positive");
    require(beta > 0.0, Errc::domain, "beta must be positive");
    require(epochs >= 0, Errc::domain, "epochs must be nonnegative");
    require(batch_size > 0, Errc::domain, "batch_size must be positive");
    require(learning_rate > 0.0, Errc::domain, "learning_rate must be positive");
    for (auto h : hidden) require(h > 0, Errc::domain, "hidden widths must be positive");
  }
};

inline nlohmann::ordered_json to_json(const VaeConfig& c) {
  return {{"latent_dim", c.latent_dim}, {"beta", c.beta},     {"epochs", c.epochs},
          {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate}, {"hidden", c.hidden},
          {"columns", c.columns},       {"seed", c.seed}};
}

/// Reads the training keys of a VAE config; generation and gate keys are
/// accepted here and read elsewhere.
inline VaeConfig vae_config_from_json(const nlohmann::ordered_json& j) {
  VaeConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "latent_dim") c.latent_dim = value.get<int>();
    else if (key == "beta") c.beta = value.get<double>();
    else if (key == "epochs") c.epochs = value.get<int>();
    else if (key == "batch_size") c.batch_size = value.get<int>();
    else if (key == "learning_rate") c.learning_rate = value.get<double>();
    else if (key == "hidden") c.hidden = value.get<std::vector<Eigen::Index>>();
    else if (key == "columns") c.columns = value.get<std::vector<std::string>>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "gates" || key == "mode" || key == "n" || key == "force") continue;
    else fail(Errc::schema, "unknown VAE config key '" + key + "'");
  }
  c.validate();
  return c;
}

inline VaeModel initialize(const std::vector<FeatureNorm>& features, const VaeConfig& config) {
  config.validate();
  const auto p = static_cast<Eigen::Index>(features.size());
  require(p > 0, Errc::shape, "no columns to model");
  std::vector<Eigen::Index> ew{p}, dw{config.latent_dim};
  std::vector<nn::Activation> act;
  for (auto h : config.hidden) {
    ew.push_back(h);
    dw.push_back(h);
    act.push_back(nn::Activation::tanh);
  }
  ew.push_back(2 * config.latent_dim);
  dw.push_back(p);
  act.push_back(nn::Activation::identity);
  VaeModel m;
  m.encoder = Mlp::create(ew, act, mix_seed(config.seed, seed_offset::vae_init));
  m.decoder = Mlp::create(dw, act, mix_seed(config.seed, seed_offset::vae_init + 1));
  m.latent_dim = config.latent_dim;
  m.beta = config.beta;
  m.features = features;
  m.seed = config.seed;
  m.check();
  return m;
}

struct EpochLoss {
  int epoch = 0;
  double loss = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
};

struct TrainResult {
  VaeModel model;
  std::vector<EpochLoss> trace;  // per-epoch means over rows
};

inline TrainResult train(const PanelTable& table, const VaeConfig& config) {
  config.validate();
  require(table.rows() >= 2, Errc::size, "VAE training needs at least two rows");
  const auto columns = config.columns.empty() ? default_columns(table) : config.columns;
  TrainResult out{initialize(feature_norms(table, columns), config), {}};
  VaeModel& model = out.model;
  const Matrix data = model.encode_input(table);

  auto adam_enc = nn::AdamState::for_network(model.encoder, {.learning_rate = config.learning_rate});
  auto adam_dec = nn::AdamState::for_network(model.decoder, {.learning_rate = config.learning_rate});
  Rng order_rng = make_rng(config.seed, seed_offset::vae_batches);
  Rng noise_rng = make_rng(config.seed, seed_offset::vae_noise);
  NormalSampler normal;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.rows()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
  const auto bs = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(order, order_rng);
    EpochLoss e{epoch, 0.0, 0.0, 0.0};
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t stop = std::min(order.size(), start + bs);
      const auto B = static_cast<Eigen::Index>(stop - start);
      Matrix batch(B, data.cols());
      for (Eigen::Index r = 0; r < B; ++r) batch.row(r) = data.row(order[start + static_cast<std::size_t>(r)]);
      Matrix noise(B, model.latent_dim);
      for (Eigen::Index r = 0; r < B; ++r)
        for (Eigen::Index c = 0; c < noise.cols(); ++c) noise(r, c) = normal(noise_rng);
      ElboResult res;
      try {
        res = elbo_loss(model, batch, noise, true);
      } catch (const Error& err) {
        fail(Errc::training, "diverged at epoch " + std::to_string(epoch) + ": " + err.what());
      }
      require(std::isfinite(res.loss), Errc::training, "diverged at epoch " + std::to_string(epoch));
      nn::adam_step(model.encoder, res.encoder_grad, adam_enc);
      nn::adam_step(model.decoder, res.decoder_grad, adam_dec);
      const double w = static_cast<double>(B);
      e.loss += w * res.loss;
      e.reconstruction += w * res.reconstruction;
      e.kl += w * res.kl;
    }
    const double n = static_cast<double>(order.size());
    e.loss /= n;
    e.reconstruction /= n;
    e.kl /= n;
    require(std::isfinite(e.loss), Errc::training, "diverged at epoch " + std::to_string(epoch));
    out.trace.push_back(e);
  }
  return out;
}

/// Deterministic reconstruction (latent mean) MSE in standardized units.
inline double reconstruction_mse(const VaeModel& model, const PanelTable& table) {
  const Matrix x = model.encode_input(table);
  const Matrix mu = nn::predict(model.encoder, x).leftCols(model.latent_dim);
  return (nn::predict(model.decoder, mu) - x).squaredNorm() / static_cast<double>(x.size());
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

enum class GenerationMode { encode_resample, prior_sampling };

inline std::string to_string(GenerationMode m) {
  return m == GenerationMode::encode_resample ? "encode_resample" : "prior_sampling";
}

inline GenerationMode parse_generation_mode(const std::string& s) {
  if (s == "encode_resample") return GenerationMode::encode_resample;
  if (s == "prior_sampling") return GenerationMode::prior_sampling;
  fail(Errc::schema, "unknown generation mode '" + s + "'");
}

struct GeneratedRows {
  std::vector<std::string> columns;
  Matrix values;                        // original units
  std::vector<std::ptrdiff_t> source;   // source row per generated row, -1 for prior draws

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::span<const double> column(const std::string& name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    require(it != columns.end(), Errc::lookup, "unknown generated column '" + name + "'");
    return {values.col(it - columns.begin()).data(), rows()};
  }
};

struct GenerateOptions {
  GenerationMode mode = GenerationMode::encode_resample;
  std::optional<std::size_t> n;  // default: every source row
  std::uint64_t seed = 0;
  double sigma_scale = 1.0;  // multiplies the posterior SD; 0 gives plain reconstructions
};

/// Decodes latent draws back to original units, thresholding binary columns
/// at 0.5 and clipping every column to its observed range.
inline GeneratedRows generate(const VaeModel& model, const GenerateOptions& opt, const PanelTable* source = nullptr) {
  model.check();
  require(opt.sigma_scale >= 0.0, Errc::domain, "sigma_scale must be nonnegative");
  Rng rng = make_rng(opt.seed, seed_offset::vae_generate);
  NormalSampler normal;
  const Eigen::Index L = model.latent_dim;
  GeneratedRows out;
  out.columns = model.column_names();
  Matrix z;
  if (opt.mode == GenerationMode::encode_resample) {
    require(source != nullptr && source->rows() >= 1, Errc::size, "resampling needs a nonempty source table");
    const std::size_t n = opt.n.value_or(source->rows());
    require(n <= source->rows(), Errc::size,
            "requested " + std::to_string(n) + " rows from a " + std::to_string(source->rows()) + "-row source");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    const Matrix x = model.encode_input(source->select_rows(idx));
    const Matrix enc = nn::predict(model.encoder, x);
    z.resize(static_cast<Eigen::Index>(n), L);
    for (Eigen::Index r = 0; r < z.rows(); ++r)
      for (Eigen::Index c = 0; c < L; ++c)
        z(r, c) = enc(r, c) + opt.sigma_scale * std::exp(0.5 * enc(r, L + c)) * normal(rng);
    for (std::size_t i = 0; i < n; ++i) out.source.push_back(static_cast<std::ptrdiff_t>(i));
  } else {
    const std::size_t n = opt.n.value_or(source ? source->rows() : 0);
    z.resize(static_cast<Eigen::Index>(n), L);
    for (Eigen::Index r = 0; r < z.rows(); ++r)
      for (Eigen::Index c = 0; c < L; ++c) z(r, c) = normal(rng);
    out.source.assign(n, -1);
  }
  out.values = model.destandardize(nn::predict(model.decoder, z));
  require(out.values.allFinite(), Errc::numeric, "decoder produced non-finite rows");
  for (Eigen::Index j = 0; j < out.values.cols(); ++j) {
    const auto& f = model.features[static_cast<std::size_t>(j)];
    for (Eigen::Index r = 0; r < out.values.rows(); ++r) {
      double& v = out.values(r, j);
      if (f.binary) v = v >= 0.5 ? 1.0 : 0.0;
      else v = std::clamp(v, f.min, f.max);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Quality gates
// ---------------------------------------------------------------------------

struct Gates {
  double smd = 0.1;
  double mae = 0.1;
  double mse = 0.05;
};

struct FeatureQuality {
  std::string name;
  double smd = 0.0;
  double mae = 0.0;
  double mse = 0.0;
};

struct QualityReport {
  std::vector<FeatureQuality> features;
  Gates gates;
  bool pass = true;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["pass"] = pass;
    j["gates"] = {{"smd", gates.smd}, {"mae", gates.mae}, {"mse", gates.mse}};
    j["features"] = nlohmann::ordered_json::array();
    auto num = [](double v) -> nlohmann::ordered_json {
      if (std::isfinite(v)) return v;
      return "inf";
    };
    for (const auto& f : features) j["features"].push_back({{"name", f.name}, {"smd", num(f.smd)}, {"mae", num(f.mae)}, {"mse", num(f.mse)}});
    return j;
  }
};

inline Gates gates_from_json(const nlohmann::ordered_json& j) {
  Gates g;
  for (const auto& [key, value] : j.items()) {
    if (key == "smd") g.smd = value.get<double>();
    else if (key == "mae") g.mae = value.get<double>();
    else if (key == "mse") g.mse = value.get<double>();
    else fail(Errc::schema, "unknown gate '" + key + "'");
  }
  return g;
}

/// (mean_a - mean_b) / sqrt((var_a + var_b) / 2) with sample variances.
inline double smd(std::span<const double> a, std::span<const double> b) {
  const double ma = stats::mean(a), mb = stats::mean(b);
  const double va = a.size() > 1 ? stats::sample_variance(a) : 0.0;
  const double vb = b.size() > 1 ? stats::sample_variance(b) : 0.0;
  const double pooled = std::sqrt((va + vb) / 2.0);
  if (pooled == 0.0) return ma == mb ? 0.0 : std::numeric_limits<double>::infinity();
  return (ma - mb) / pooled;
}

/// Pairs sorted samples rank by rank; the shorter side is read at the
/// nearest rank of the longer one. Returns (MAE, MSE).
inline std::pair<double, double> quantile_matched_errors(std::vector<double> a, std::vector<double> b) {
  require(!a.empty() && !b.empty(), Errc::size, "quantile matching needs nonempty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a.size() < b.size()) std::swap(a, b);
  const std::size_t n = a.size(), m = b.size();
  double mae = 0.0, mse = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t rank = (k + 1) * m;
    const std::size_t j = (rank + n - 1) / n - 1;  // ceil((k+1) m / n) - 1
    const double d = a[k] - b[j];
    mae += std::fabs(d);
    mse += d * d;
  }
  return {mae / static_cast<double>(n), mse / static_cast<double>(n)};
}

/// SMD per column plus MAE / MSE between quantile-matched samples expressed
/// in units of the real column's SD.
inline QualityReport validate(const PanelTable& real, const GeneratedRows& generated, Gates gates = {}) {
  QualityReport rep;
  rep.gates = gates;
  require(generated.rows() > 0 && real.rows() > 0, Errc::size, "validation needs nonempty samples");
  for (const auto& name : generated.columns) {
    require(real.has_column(name), Errc::schema, "generated column '" + name + "' is not in the real table");
    const auto r = real.column(name);
    const auto g = generated.column(name);
    FeatureQuality f;
    f.name = name;
    f.smd = smd(r, g);
    const double sd = r.size() > 1 ? stats::sample_sd(r) : 0.0;
    const double scale = sd > 0.0 ? sd : 1.0;
    std::vector<double> rs(r.begin(), r.end()), gs(g.begin(), g.end());
    for (auto& v : rs) v /= scale;
    for (auto& v : gs) v /= scale;
    std::tie(f.mae, f.mse) = quantile_matched_errors(std::move(rs), std::move(gs));
    rep.pass = rep.pass && std::fabs(f.smd) <= gates.smd && f.mae <= gates.mae && f.mse <= gates.mse;
    rep.features.push_back(f);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Merging
// ---------------------------------------------------------------------------

inline constexpr const char* kGeneratedPrefix = "gen_";

/// Real rows followed by generated rows, with a provenance column. A
/// generated row takes the firm id "gen_<source firm>", the source row's year
/// and the source row's fixed-effect keys.
inline PanelTable merge(const PanelTable& real, const GeneratedRows& generated, const QualityReport* report = nullptr,
                        bool force = false) {
  require(force || (report != nullptr && report->pass), Errc::domain,
          "generated rows have not passed the quality gates (use force to merge anyway)");
  for (const auto& name : generated.columns)
    require(real.has_column(name), Errc::schema, "generated column '" + name + "' is not in the real table");
  for (const auto& name : real.column_names())
    require(real.role(name) == Role::fixed_effect_key ||
                std::find(generated.columns.begin(), generated.columns.end(), name) != generated.columns.end(),
            Errc::schema, "column '" + name + "' is missing from the generated rows");

  PanelTable out = real;
  if (!out.has_provenance()) out.set_provenance(std::vector<std::string>(out.rows(), kProvenanceReal));
  if (generated.rows() == 0) return out;

  std::vector<std::size_t> src;
  for (auto s : generated.source) {
    require(s >= 0 && static_cast<std::size_t>(s) < real.rows(), Errc::domain,
            "generated rows without a source row carry no panel keys and cannot be merged");
    src.push_back(static_cast<std::size_t>(s));
  }
  PanelTable gen = real.select_rows(src);
  std::vector<std::string> firms;
  for (std::size_t s : src) firms.push_back(kGeneratedPrefix + real.firm_ids()[s]);
  PanelTable keyed(firms, gen.years());
  for (const auto& name : real.column_names()) {
    auto it = std::find(generated.columns.begin(), generated.columns.end(), name);
    if (it == generated.columns.end()) {
      const auto c = gen.column(name);
      keyed.add_column(name, real.role(name), {c.begin(), c.end()});
    } else {
      const auto c = generated.column(name);
      keyed.add_column(name, real.role(name), {c.begin(), c.end()});
    }
  }
  keyed.set_provenance(std::vector<std::string>(keyed.rows(), kProvenanceGenerated));
  out.append(keyed);
  out.check_unique_keys();
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const VaeModel& m) {
  nlohmann::ordered_json j;
  j["format"] = "cfdml.vae";
  j["version"] = nn::kCheckpointVersion;
  j["latent_dim"] = m.latent_dim;
  j["beta"] = m.beta;
  j["seed"] = m.seed;
  j["features"] = nlohmann::ordered_json::array();
  for (const auto& f : m.features)
    j["features"].push_back(
        {{"name", f.name}, {"mean", f.mean}, {"sd", f.sd}, {"binary", f.binary}, {"min", f.min}, {"max", f.max}});
  j["encoder"] = nn::to_json(m.encoder);
  j["decoder"] = nn::to_json(m.decoder);
  return j;
}

inline VaeModel vae_from_json(const nlohmann::ordered_json& j) {
  require(j.value("format", "") == "cfdml.vae", Errc::schema, "not a VAE checkpoint");
  require(j.value("version", 0) == nn::kCheckpointVersion, Errc::schema, "unsupported VAE checkpoint version");
  VaeModel m;
  m.latent_dim = j.at("latent_dim").get<int>();
  m.beta = j.at("beta").get<double>();
  m.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& jf : j.at("features")) {
    FeatureNorm f;
    f.name = jf.at("name").get<std::string>();
    f.mean = jf.at("mean").get<double>();
    f.sd = jf.at("sd").get<double>();
    f.binary = jf.at("binary").get<bool>();
    f.min = jf.at("min").get<double>();
    f.max = jf.at("max").get<double>();
    m.features.push_back(f);
  }
  m.encoder = nn::mlp_from_json(j.at("encoder"));
  m.decoder = nn::mlp_from_json(j.at("decoder"));
  m.check();
  return m;
}

}  // namespace cfdml::vae
