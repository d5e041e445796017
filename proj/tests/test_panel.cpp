#include <filesystem>
#include <fstream>
#include <sstream>

#include "cfdml/panel.hpp"
#include "cfdml/rng.hpp"
#include "test_util.hpp"

using namespace cfdml;
using Catch::Approx;

namespace {

Schema basic_schema() {
  Schema s;
  s.columns = {{"gw", Role::outcome}, {"eb", Role::treatment}, {"size", Role::control}};
  return s;
}

IngestResult ingest_text(const std::string& text, const Schema& schema = basic_schema()) {
  std::istringstream in(text);
  return ingest_document(csv::parse(in), schema);
}

PanelTable column_table(std::vector<double> values) {
  std::vector<std::string> firms;
  std::vector<int> years;
  for (std::size_t i = 0; i < values.size(); ++i) {
    firms.push_back("f" + std::to_string(i));
    years.push_back(2010);
  }
  PanelTable t(firms, years);
  t.add_column("x", Role::control, std::move(values));
  return t;
}

}  // namespace

TEST_CASE("ingest accepts a well-formed panel") {
  auto r = ingest_text("firm_id,year,gw,eb,size\nA,2010,0.1,0.3,23\nA,2011,0.2,0.4,24\nB,2010,-0.5,0.2,22\n");
  CHECK(r.table.rows() == 3);
  CHECK(r.report.rows_read == 3);
  CHECK(r.report.rows_dropped == 0);
  CHECK(r.table.role("eb") == Role::treatment);
  CHECK(r.table.column("size")[2] == 22.0);
  CHECK(r.table.years()[1] == 2011);
}

TEST_CASE("ingest rejects repeated firm-years and lists them") {
  const std::string text = "firm_id,year,gw,eb,size\nA,2010,0.1,0.3,23\nA,2010,0.2,0.4,24\n";
  CHECK_ERRC(ingest_text(text), Errc::duplicate);
  CHECK(error_message_of([&] { ingest_text(text); }).find("(A, 2010)") != std::string::npos);
}

TEST_CASE("ingest drops rows with missing required cells") {
  auto r = ingest_text("firm_id,year,gw,eb,size\nA,2010,,0.3,23\nA,2011,0.2,0.4,24\nB,2010,-0.5,0.2,22\n");
  CHECK(r.table.rows() == 2);
  CHECK(r.report.rows_dropped == 1);
  CHECK(r.report.warnings.size() == 1);
}

TEST_CASE("ingest errors name the column or cell") {
  CHECK_ERRC(ingest_text("firm_id,year,gw,eb\nA,2010,0.1,0.3\n"), Errc::schema);
  CHECK(error_message_of([] { ingest_text("firm_id,year,gw,eb\nA,2010,0.1,0.3\n"); }).find("'size'") !=
        std::string::npos);
  const std::string bad = "firm_id,year,gw,eb,size\nA,2010,0.1,abc,23\n";
  CHECK_ERRC(ingest_text(bad), Errc::parse);
  const auto msg = error_message_of([&] { ingest_text(bad); });
  CHECK(msg.find("row 2") != std::string::npos);
  CHECK(msg.find("'eb'") != std::string::npos);
}

TEST_CASE("ingest reads from disk and round-trips through write_csv") {
  const auto path = std::filesystem::temp_directory_path() / "cfdml_ingest_test.csv";
  {
    std::ofstream out(path);
    out << "firm_id,year,gw,eb,size,extra\nA,2010,0.1,0.3,23,x\nB,2011,0.25,0.125,24,y\n";
  }
  auto r = ingest_csv(path.string(), basic_schema());
  std::ostringstream out;
  write_csv(out, r.table);
  CHECK(out.str() == "firm_id,year,gw,eb,size\nA,2010,0.1,0.3,23\nB,2011,0.25,0.125,24\n");
  std::filesystem::remove(path);

  auto j = schema_to_json(basic_schema());
  auto s = schema_from_json(j);
  CHECK(s.columns.size() == 3);
  CHECK(s.columns[1].second == Role::treatment);
}

TEST_CASE("winsorize clamps to nearest-rank order statistics") {
  std::vector<double> v;
  for (int i = 1; i <= 200; ++i) v.push_back(i);
  auto t = column_table(v);
  auto w = winsorize(t, 0.01, 0.99, {"x"});
  auto x = w.column("x");
  CHECK(x[0] == 2.0);
  CHECK(x[1] == 2.0);
  CHECK(x[2] == 3.0);
  CHECK(x[198] == 199.0);
  CHECK(x[199] == 199.0);
  CHECK(x[197] == 198.0);
  CHECK(w.rows() == 200);
}

TEST_CASE("winsorize identities") {
  auto t = column_table({5, 1, 4, 2, 3});
  auto full = winsorize(t, 0.0, 1.0, {"x"});
  CHECK(std::vector<double>(full.column("x").begin(), full.column("x").end()) ==
        std::vector<double>{5, 1, 4, 2, 3});
  // 5 values: 1% tails sit on the min and max already
  auto inside = winsorize(t, 0.01, 0.99, {"x"});
  CHECK(std::vector<double>(inside.column("x").begin(), inside.column("x").end()) ==
        std::vector<double>{5, 1, 4, 2, 3});
  CHECK_ERRC(winsorize(t, 0.01, 0.99, {"nope"}), Errc::lookup);
  CHECK_ERRC(winsorize(t, 0.5, 0.5, {"x"}), Errc::domain);
}

TEST_CASE("winsorize is idempotent and keeps interior ranks") {
  Rng rng = make_rng(7);
  NormalSampler normal;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 20 + uniform_index(rng, 300);
    std::vector<double> v(n);
    for (auto& x : v) x = normal(rng) * std::exp(normal(rng));
    const double lo = 0.2 * uniform01(rng);
    const double hi = 1.0 - 0.2 * uniform01(rng);
    auto t = column_table(v);
    auto once = winsorize(t, lo, hi, {"x"});
    auto twice = winsorize(once, lo, hi, {"x"});
    auto a = once.column("x");
    auto b = twice.column("x");
    REQUIRE(std::equal(a.begin(), a.end(), b.begin()));
    const double cut_lo = *std::min_element(a.begin(), a.end());
    const double cut_hi = *std::max_element(a.begin(), a.end());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (v[i] > cut_lo && v[i] < cut_hi && v[j] > cut_lo && v[j] < cut_hi) REQUIRE((v[i] < v[j]) == (a[i] < a[j]));
  }
}

TEST_CASE("derive_treatment ratios") {
  std::vector<std::vector<double>> stakes{{0.40, 0.10, 0.05, 0, 0, 0, 0, 0, 0, 0}};
  CHECK(derive_treatment(stakes, TreatmentVariant::top2to10_over_top1).values[0] == Approx(0.375).epsilon(1e-15));

  std::vector<std::vector<double>> lone{{0.50, 0, 0, 0, 0, 0, 0, 0, 0, 0}};
  for (auto v : {TreatmentVariant::top2to10_over_top1, TreatmentVariant::top2to5_over_top1,
                 TreatmentVariant::second_over_first})
    CHECK(derive_treatment(lone, v).values[0] == 0.0);

  std::vector<std::vector<double>> tied{{0.30, 0.30, 0, 0, 0, 0, 0, 0, 0, 0}};
  auto r = derive_treatment(tied, TreatmentVariant::second_over_first);
  CHECK(r.values[0] == 1.0);
  CHECK(r.warnings.size() == 1);

  std::vector<std::vector<double>> many{{0.3, 0.1, 0.08, 0.06, 0.05, 0.04, 0.03, 0.02, 0.01, 0.01}};
  CHECK(derive_treatment(many, TreatmentVariant::top2to5_over_top1).values[0] == Approx(0.29 / 0.3));
  CHECK(derive_treatment(many, TreatmentVariant::top2to10_over_top1).values[0] == Approx(0.40 / 0.3));

  std::vector<std::vector<double>> zero{{0.0, 0.0}};
  CHECK_ERRC(derive_treatment(zero, TreatmentVariant::top2to10_over_top1), Errc::domain);
}

TEST_CASE("derive_treatment is scale invariant") {
  Rng rng = make_rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s(10);
    for (auto& x : s) x = uniform01(rng) * 0.1;
    s[0] = 0.05 + uniform01(rng) * 0.5;
    std::sort(s.begin(), s.end(), std::greater<>());
    const double c = 0.1 + 5.0 * uniform01(rng);
    std::vector<double> scaled = s;
    for (auto& x : scaled) x *= c;
    for (auto v : {TreatmentVariant::top2to10_over_top1, TreatmentVariant::top2to5_over_top1,
                   TreatmentVariant::second_over_first}) {
      std::vector<std::vector<double>> a{s}, b{scaled};
      const double ra = derive_treatment(a, v).values[0];
      const double rb = derive_treatment(b, v).values[0];
      REQUIRE(ra >= 0.0);
      REQUIRE(rb == Approx(ra).epsilon(1e-12));
    }
  }
}

TEST_CASE("expand_design column bookkeeping") {
  PanelTable t({"a", "b", "c", "d"}, {2010, 2011, 2012, 2012});
  t.add_column("size", Role::control, {1, 2, 3, 4});
  t.add_column("lev", Role::control, {0.1, 0.5, 0.2, 0.3});
  t.add_column("dual", Role::control, {0, 1, 1, 0});
  t.add_column("year_fe", Role::fixed_effect_key, {2010, 2011, 2012, 2012});
  t.add_column("one", Role::fixed_effect_key, {7, 7, 7, 7});

  auto plain = expand_design(t, {"size", "lev"}, true, {});
  CHECK(plain.X.cols() == 4);
  CHECK(plain.X(2, 2) == 9.0);

  auto d = expand_design(t, true, {"year_fe", "one"});
  // 2 continuous * 2 + 1 binary + (3 - 1) + (1 - 1)
  CHECK(d.X.cols() == 7);
  std::size_t squares = 0;
  for (const auto& c : d.columns) {
    if (c.origin == ColumnOrigin::square) {
      ++squares;
      CHECK(c.source != "dual");
    }
  }
  CHECK(squares == 2);
  CHECK(d.columns[5].name == "year_fe=2011");
  CHECK(d.X(1, 5) == 1.0);
  CHECK(d.X(0, 5) == 0.0);
  CHECK(d.X(3, 6) == 1.0);

  CHECK_ERRC(expand_design(t, false, {"size"}), Errc::schema);
}

TEST_CASE("expand_design count formula holds on random layouts") {
  Rng rng = make_rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 30;
    std::vector<std::string> firms;
    std::vector<int> years;
    for (std::size_t i = 0; i < n; ++i) {
      firms.push_back("f" + std::to_string(i));
      years.push_back(2000);
    }
    PanelTable t(firms, years);
    const std::size_t n_cont = uniform_index(rng, 4), n_bin = uniform_index(rng, 3), n_fe = uniform_index(rng, 3);
    std::vector<std::string> controls, fes;
    for (std::size_t k = 0; k < n_cont; ++k) {
      std::vector<double> x(n);
      for (auto& v : x) v = uniform01(rng);
      controls.push_back("c" + std::to_string(k));
      t.add_column(controls.back(), Role::control, x);
    }
    for (std::size_t k = 0; k < n_bin; ++k) {
      std::vector<double> x(n);
      for (auto& v : x) v = static_cast<double>(uniform_index(rng, 2));
      controls.push_back("b" + std::to_string(k));
      t.add_column(controls.back(), Role::control, x);
    }
    std::size_t dummy = 0;
    for (std::size_t k = 0; k < n_fe; ++k) {
      std::vector<double> x(n);
      const std::size_t levels = 1 + uniform_index(rng, 5);
      for (auto& v : x) v = static_cast<double>(uniform_index(rng, levels));
      dummy += levels_of(x).size() - 1;
      fes.push_back("k" + std::to_string(k));
      t.add_column(fes.back(), Role::fixed_effect_key, x);
    }
    for (bool quad : {false, true}) {
      auto d = expand_design(t, controls, quad, fes);
      REQUIRE(static_cast<std::size_t>(d.X.cols()) == n_cont * (quad ? 2 : 1) + n_bin + dummy);
      REQUIRE(d.columns.size() == static_cast<std::size_t>(d.X.cols()));
    }
  }
}

TEST_CASE("select_rows and append keep provenance aligned") {
  PanelTable t({"a", "b", "c"}, {1, 2, 3});
  t.add_column("x", Role::control, {1, 2, 3});
  auto sub = t.select_rows(std::vector<std::size_t>{2, 0});
  CHECK(sub.firm_ids() == std::vector<std::string>{"c", "a"});
  CHECK(sub.column("x")[0] == 3.0);
  PanelTable g({"g"}, {9});
  g.add_column("x", Role::control, {9});
  g.set_provenance({kProvenanceGenerated});
  t.append(g);
  CHECK(t.rows() == 4);
  CHECK(t.provenance() == std::vector<std::string>{"real", "real", "real", "generated"});
  CHECK(t.is_generated(3));
  CHECK_FALSE(t.is_generated(0));
}
