#include "cfdml/synth.hpp"
#include "cfdml/vae.hpp"
#include "test_util.hpp"

using namespace cfdml;
using namespace cfdml::vae;
using Catch::Approx;

namespace {

Matrix normal_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  NormalSampler normal;
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = normal(rng);
  return m;
}

std::vector<FeatureNorm> unit_features(int p) {
  std::vector<FeatureNorm> f;
  for (int j = 0; j < p; ++j)
    f.push_back({"x" + std::to_string(j), 0.0, 1.0, false, -std::numeric_limits<double>::infinity(),
                 std::numeric_limits<double>::infinity()});
  return f;
}

// Encoder with zero weights and a fixed output bias [mu, log var].
Mlp constant_encoder(int p, const nn::RowVector& out) {
  return Mlp::from_layers({{Matrix::Zero(p, out.size()), out, nn::Activation::identity}});
}

VaeModel linear_model(int p, int latent, const nn::RowVector& enc_bias) {
  VaeModel m;
  m.latent_dim = latent;
  m.features = unit_features(p);
  m.encoder = constant_encoder(p, enc_bias);
  m.decoder = Mlp::from_layers({{Matrix::Zero(latent, p), nn::RowVector::Zero(p), nn::Activation::identity}});
  m.check();
  return m;
}

PanelTable table_from(const Matrix& x) {
  std::vector<std::string> firms;
  std::vector<int> years;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    firms.push_back("F" + std::to_string(i));
    years.push_back(2010);
  }
  PanelTable t(firms, years);
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    t.add_column("x" + std::to_string(j), Role::control, {x.col(j).data(), x.col(j).data() + x.rows()});
  return t;
}

PanelTable small_panel(std::size_t rows = 1743) {
  synth::DgpSpec spec;
  spec.observed_rows = rows;
  spec.seed = 5;
  return synth::generate_panel(spec).table;
}

}  // namespace

TEST_CASE("KL term: standard-normal posterior and closed form") {
  nn::RowVector zero = nn::RowVector::Zero(6);
  auto m = linear_model(2, 3, zero);
  const Matrix batch = normal_matrix(5, 2, 1), noise = normal_matrix(5, 3, 2);
  CHECK(elbo_loss(m, batch, noise).kl == 0.0);

  nn::RowVector mu1(2);
  mu1 << 1.0, 0.0;  // one latent, mu = 1, log var = 0
  auto m1 = linear_model(2, 1, mu1);
  CHECK(elbo_loss(m1, batch, normal_matrix(5, 1, 3)).kl == Approx(0.5).margin(1e-12));

  nn::RowVector mu3(6);
  mu3 << 1.0, 1.0, 1.0, 0.0, 0.0, 0.0;
  CHECK(elbo_loss(linear_model(2, 3, mu3), batch, noise).kl == Approx(1.5).margin(1e-12));
}

TEST_CASE("KL term is nonnegative for arbitrary encoders") {
  VaeConfig c;
  c.latent_dim = 3;
  for (std::uint64_t s = 0; s < 10; ++s) {
    c.seed = s;
    auto m = initialize(feature_norms(table_from(normal_matrix(4, 5, s)), {"x0", "x1", "x2", "x3", "x4"}), c);
    const auto r = elbo_loss(m, normal_matrix(8, 5, s + 100) * 3.0, normal_matrix(8, 3, s + 200));
    CHECK(r.kl >= 0.0);
    CHECK(r.loss == Approx(r.reconstruction + r.kl));
  }
}

TEST_CASE("reconstruction term vanishes for an exact decoder") {
  VaeModel m;
  m.latent_dim = 2;
  m.features = unit_features(2);
  Matrix w(2, 4);
  w << 1, 0, 0, 0, 0, 1, 0, 0;
  m.encoder = Mlp::from_layers({{w, nn::RowVector::Zero(4), nn::Activation::identity}});
  m.decoder = Mlp::from_layers({{Matrix::Identity(2, 2), nn::RowVector::Zero(2), nn::Activation::identity}});
  const Matrix batch = normal_matrix(7, 2, 9);
  const auto r = elbo_loss(m, batch, Matrix::Zero(7, 2));
  CHECK(r.reconstruction == 0.0);
  CHECK(r.kl == Approx(0.5 * batch.squaredNorm() / 7.0));
}

TEST_CASE("ELBO gradient matches central differences") {
  VaeConfig c;
  c.latent_dim = 3;
  c.hidden = {6, 5};
  c.beta = 0.7;
  c.seed = 11;
  auto m = initialize(unit_features(4), c);
  const Matrix batch = normal_matrix(9, 4, 12), noise = normal_matrix(9, 3, 13);
  CHECK(grad_check(m, batch, noise, 1000) <= 1e-4);

  c.beta = 1.0;
  c.hidden = {8};
  auto m2 = initialize(unit_features(3), c);
  CHECK(grad_check(m2, normal_matrix(5, 3, 14), normal_matrix(5, 3, 15), 1000) <= 1e-4);
}

TEST_CASE("ELBO input checks and numeric failures") {
  auto m = linear_model(2, 1, nn::RowVector::Zero(2));
  const Matrix batch = normal_matrix(4, 2, 1);
  CHECK_ERRC(elbo_loss(m, batch, Matrix::Zero(4, 2)), Errc::shape);
  CHECK_ERRC(elbo_loss(m, Matrix::Zero(0, 2), Matrix::Zero(0, 1)), Errc::size);
  nn::RowVector huge(2);
  huge << 0.0, 5000.0;
  auto bad = linear_model(2, 1, huge);
  CHECK_ERRC(elbo_loss(bad, batch, Matrix::Zero(4, 1)), Errc::numeric);
  CHECK(error_message_of([&] { elbo_loss(bad, batch, Matrix::Zero(4, 1)); }).find("log variance") != std::string::npos);
}

TEST_CASE("standardization round trip") {
  const auto t = table_from(normal_matrix(50, 3, 4) * 7.0 + Matrix::Constant(50, 3, 3.0));
  VaeModel m = initialize(feature_norms(t, {"x0", "x1", "x2"}), {});
  const Matrix raw = normal_matrix(20, 3, 5) * 100.0;
  CHECK((m.destandardize(m.standardize(raw)) - raw).cwiseAbs().maxCoeff() <= 1e-12 * 100.0);
  CHECK((m.standardize(m.destandardize(raw)) - raw).cwiseAbs().maxCoeff() <= 1e-12 * 100.0);
  const Matrix z = m.encode_input(t);
  for (Eigen::Index j = 0; j < 3; ++j) CHECK(std::fabs(z.col(j).mean()) < 1e-12);
}

TEST_CASE("training fits a correlated Gaussian") {
  Matrix x = normal_matrix(1000, 2, 21);
  x.col(1) = 0.8 * x.col(0) + 0.6 * x.col(1);
  VaeConfig c;
  c.latent_dim = 2;
  c.epochs = 100;
  c.beta = 0.1;
  c.seed = 3;
  const auto res = train(table_from(x), c);
  REQUIRE(res.trace.size() == 100);
  CHECK(reconstruction_mse(res.model, table_from(x)) < 0.2);
  CHECK(res.trace.back().loss < res.trace.front().loss);
}

TEST_CASE("training edge cases") {
  const auto t = table_from(normal_matrix(30, 2, 1));
  VaeConfig c;
  c.epochs = 0;
  c.seed = 8;
  const auto none = train(t, c);
  CHECK(none.trace.empty());
  CHECK(flatten(none.model) == flatten(initialize(feature_norms(t, {"x0", "x1"}), c)));

  Matrix same(40, 3);
  same.rowwise() = nn::RowVector::LinSpaced(3, 1.0, 3.0);
  c.epochs = 200;
  const auto flat = train(table_from(same), c);
  CHECK(reconstruction_mse(flat.model, table_from(same)) < 1e-4);

  CHECK_ERRC(train(table_from(normal_matrix(1, 2, 1)), c), Errc::size);
  c.learning_rate = 1e300;
  c.epochs = 3;
  CHECK_ERRC(train(t, c), Errc::training);
  CHECK(error_message_of([&] { train(t, c); }).find("diverged at epoch ") != std::string::npos);
}

TEST_CASE("training is deterministic given the seed") {
  const auto t = table_from(normal_matrix(120, 3, 6));
  VaeConfig c;
  c.epochs = 5;
  c.seed = 77;
  const auto a = train(t, c), b = train(t, c);
  CHECK(flatten(a.model) == flatten(b.model));
  c.seed = 78;
  CHECK(flatten(train(t, c).model) != flatten(a.model));
}

TEST_CASE("encode_resample generation") {
  const auto panel = small_panel();
  REQUIRE(panel.rows() == 1743);
  VaeConfig c;
  c.epochs = 2;
  c.seed = 1;
  const auto model = train(panel, c).model;

  const auto gen = generate(model, {.seed = 4}, &panel);
  CHECK(gen.rows() == 1743);
  CHECK(gen.columns == default_columns(panel));
  CHECK(gen.source.back() == 1742);

  // zero posterior spread: deterministic reconstructions
  const auto r1 = generate(model, {.seed = 1, .sigma_scale = 0.0}, &panel);
  const auto r2 = generate(model, {.seed = 2, .sigma_scale = 0.0}, &panel);
  CHECK(r1.values == r2.values);
  CHECK(generate(model, {.seed = 4}, &panel).values == gen.values);
  CHECK(generate(model, {.seed = 5}, &panel).values != gen.values);

  for (const auto& f : model.features) {
    const auto col = gen.column(f.name);
    for (double v : col) {
      if (f.binary) CHECK((v == 0.0 || v == 1.0));
      CHECK((v >= f.min && v <= f.max));
    }
  }

  CHECK(generate(model, {.n = 10, .seed = 4}, &panel).rows() == 10);
  CHECK_ERRC(generate(model, {.n = 1744, .seed = 4}, &panel), Errc::size);
  CHECK_ERRC(generate(model, {.seed = 4}), Errc::size);
}

TEST_CASE("prior sampling through an identity decoder is standard normal") {
  VaeModel m;
  m.latent_dim = 3;
  m.features = unit_features(3);
  m.encoder = constant_encoder(3, nn::RowVector::Zero(6));
  m.decoder = Mlp::from_layers({{Matrix::Identity(3, 3), nn::RowVector::Zero(3), nn::Activation::identity}});
  const auto g = generate(m, {.mode = GenerationMode::prior_sampling, .n = 10000, .seed = 3});
  REQUIRE(g.rows() == 10000);
  for (Eigen::Index j = 0; j < 3; ++j) {
    CHECK(std::fabs(g.values.col(j).mean()) < 0.1);
    CHECK(g.values.col(j).squaredNorm() / 10000.0 == Approx(1.0).margin(0.05));
  }
  CHECK(g.source == std::vector<std::ptrdiff_t>(10000, -1));
}

TEST_CASE("binary thresholding and range clipping") {
  VaeModel m;
  m.latent_dim = 1;
  m.features = {{"b", 0.0, 1.0, true, 0.0, 1.0}, {"c", 0.0, 1.0, false, -2.0, 2.0}, {"d", 0.0, 1.0, false, -2.0, 2.0}};
  m.encoder = constant_encoder(3, nn::RowVector::Zero(2));
  nn::RowVector bias(3);
  bias << 0.7, 5.0, -0.25;
  m.decoder = Mlp::from_layers({{Matrix::Zero(1, 3), bias, nn::Activation::identity}});
  const auto g = generate(m, {.mode = GenerationMode::prior_sampling, .n = 4, .seed = 0});
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(g.column("b")[i] == 1.0);
    CHECK(g.column("c")[i] == 2.0);
    CHECK(g.column("d")[i] == -0.25);
  }
}

TEST_CASE("SMD and quantile-matched errors") {
  const double s = 1.0 / std::sqrt(2.0);
  const std::vector<double> a{1.0 - s, 1.0 + s}, b{-s, s};
  CHECK(smd(a, b) == Approx(1.0).epsilon(1e-12));
  const std::vector<double> c{3.0, 3.0}, d{4.0, 4.0};
  CHECK(smd(c, c) == 0.0);
  CHECK(std::isinf(smd(c, d)));

  const auto [mae, mse] = quantile_matched_errors({4.0, 2.0, 1.0, 3.0}, {3.0, 1.0});
  CHECK(mae == Approx(0.5));
  CHECK(mse == Approx(0.5));
  const auto [m2, s2] = quantile_matched_errors({3.0, 1.0}, {4.0, 2.0, 1.0, 3.0});
  CHECK(m2 == Approx(0.5));
  CHECK(s2 == Approx(0.5));
}

TEST_CASE("validation gates") {
  const Matrix x = normal_matrix(4000, 3, 17);
  const auto real = table_from(x);
  GeneratedRows copy{{"x0", "x1", "x2"}, x, std::vector<std::ptrdiff_t>(4000, -1)};
  const auto same = validate(real, copy);
  CHECK(same.pass);
  for (const auto& f : same.features) {
    CHECK(f.smd == 0.0);
    CHECK(f.mae == 0.0);
    CHECK(f.mse == 0.0);
  }

  GeneratedRows shifted = copy;
  shifted.values = normal_matrix(4000, 3, 18);
  shifted.values.col(1).array() += 1.0;
  const auto rep = validate(real, shifted);
  CHECK_FALSE(rep.pass);
  CHECK(rep.features[1].smd == Approx(-1.0).margin(0.08));
  CHECK(std::fabs(rep.features[0].smd) <= 0.1);
  CHECK(rep.to_json()["pass"] == false);

  GeneratedRows constant{{"x0"}, Matrix::Constant(10, 1, 2.0), {}};
  const auto crep = validate(table_from(Matrix::Constant(10, 1, 1.0)), constant);
  CHECK(std::isinf(crep.features[0].smd));
  CHECK_FALSE(crep.pass);

  GeneratedRows alien{{"zz"}, Matrix::Zero(3, 1), {}};
  CHECK_ERRC(validate(real, alien), Errc::schema);
}

TEST_CASE("merging real and generated rows") {
  const auto panel = small_panel();
  VaeConfig c;
  c.epochs = 1;
  const auto model = train(panel, c).model;
  const auto gen = generate(model, {.seed = 2}, &panel);
  const auto rep = validate(panel, gen);

  const auto merged = merge(panel, gen, &rep, true);
  CHECK(merged.rows() == 3486);
  REQUIRE(merged.has_provenance());
  CHECK(std::count(merged.provenance().begin(), merged.provenance().end(), "generated") == 1743);
  CHECK(merged.firm_ids()[1743] == "gen_" + panel.firm_ids()[0]);
  CHECK(merged.years()[1743 + 100] == panel.years()[100]);
  CHECK(merged.column("industry")[1743 + 100] == panel.column("industry")[100]);
  CHECK(merged.column("balance")[1743 + 100] == gen.column("balance")[100]);
  CHECK(merged.column("gw")[5] == panel.column("gw")[5]);

  GeneratedRows empty{gen.columns, Matrix::Zero(0, static_cast<Eigen::Index>(gen.columns.size())), {}};
  const auto alone = merge(panel, empty, nullptr, true);
  CHECK(alone.rows() == 1743);
  CHECK(alone.provenance() == std::vector<std::string>(1743, "real"));

  QualityReport failed;
  failed.pass = false;
  CHECK_ERRC(merge(panel, gen, &failed), Errc::domain);
  CHECK_ERRC(merge(panel, gen), Errc::domain);

  GeneratedRows missing = gen;
  missing.columns.pop_back();
  missing.values = gen.values.leftCols(gen.values.cols() - 1);
  CHECK_ERRC(merge(panel, missing, nullptr, true), Errc::schema);
  GeneratedRows renamed = gen;
  renamed.columns[0] = "other";
  CHECK_ERRC(merge(panel, renamed, nullptr, true), Errc::schema);

  const auto prior = generate(model, {.mode = GenerationMode::prior_sampling, .n = 3, .seed = 1});
  CHECK_ERRC(merge(panel, prior, nullptr, true), Errc::domain);
}

TEST_CASE("checkpoint and config round trips") {
  const auto panel = small_panel(200);
  VaeConfig c;
  c.epochs = 2;
  c.seed = 9;
  c.beta = 0.5;
  const auto model = train(panel, c).model;
  const auto back = vae_from_json(nlohmann::ordered_json::parse(to_json(model).dump()));
  CHECK(flatten(back) == flatten(model));
  CHECK(back.beta == 0.5);
  CHECK(back.column_names() == model.column_names());
  CHECK(generate(back, {.seed = 3}, &panel).values == generate(model, {.seed = 3}, &panel).values);

  auto bad = to_json(model);
  bad["format"] = "other";
  CHECK_ERRC(vae_from_json(bad), Errc::schema);

  const auto cj = vae_config_from_json(to_json(c));
  CHECK(cj.beta == 0.5);
  CHECK(cj.seed == 9);
  CHECK_ERRC(vae_config_from_json({{"latent", 3}}), Errc::schema);
  CHECK_ERRC(vae_config_from_json({{"beta", 0.0}}), Errc::domain);
  CHECK(parse_generation_mode("prior_sampling") == GenerationMode::prior_sampling);
  CHECK_ERRC(parse_generation_mode("flip"), Errc::schema);
  CHECK(gates_from_json({{"smd", 0.2}}).smd == 0.2);
}
