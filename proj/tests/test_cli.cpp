#include <filesystem>
#include <fstream>
#include <sstream>

#include "cfdml/cli.hpp"
#include "test_util.hpp"

using namespace cfdml;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct Sandbox {
  fs::path root;
  Sandbox() {
    root = fs::temp_directory_path() / ("cfdml_cli_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Sandbox() { fs::remove_all(root); }

  std::string path(const std::string& name) const { return (root / name).string(); }
  std::string config(const std::string& name, const json& j) const {
    std::ofstream(root / name) << j.dump(2);
    return path(name);
  }
};

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) { return cli::read_file(p); }

}  // namespace

TEST_CASE("sha256 of known strings") {
  CHECK(cli::sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(cli::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("usage errors exit with status 2") {
  Sandbox box;
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  const auto bad_flag = run({"estimate", "--bogus", "1"});
  CHECK(bad_flag.code == 2);
  CHECK(bad_flag.err.find("--config") != std::string::npos);  // help text
  CHECK(run({"estimate", "--config", box.path("missing.json"), "--out", box.path("o")}).code == 2);
  std::ofstream(box.root / "broken.json") << "{not json";
  CHECK(run({"estimate", "--config", box.path("broken.json"), "--out", box.path("o")}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("synth then estimate round trip") {
  Sandbox box;
  REQUIRE(run({"synth", "--seed", "3", "--out", box.path("s")}).code == 0);
  const auto est = box.config("est.json", {{"input", "s/panel.csv"},
                                           {"schema", "s/schema.json"},
                                           {"dml", {{"learner", "lasso"}, {"repetitions", 1}, {"fe_keys", {"year"}}}}});
  const auto r = run({"estimate", "--config", est, "--seed", "1", "--out", box.path("e")});
  REQUIRE(r.code == 0);
  REQUIRE(fs::exists(box.root / "e" / "estimates.csv"));

  const auto manifest = json::parse(slurp(box.root / "e" / "manifest.json"));
  CHECK(manifest["command"] == "estimate");
  CHECK(manifest["seed"] == 1);
  CHECK(manifest["config"]["sha256"] == cli::sha256_hex(slurp(est)));
  std::set<std::string> digests;
  for (const auto& i : manifest["inputs"]) digests.insert(i["sha256"].get<std::string>());
  CHECK(digests.count(cli::sha256_hex(slurp(box.root / "s" / "panel.csv"))) == 1);
  CHECK(digests.count(cli::sha256_hex(slurp(box.root / "s" / "schema.json"))) == 1);
  std::set<std::string> written;
  for (const auto& o : manifest["outputs"]) {
    written.insert(o["path"].get<std::string>());
    CHECK(o["sha256"] == cli::sha256_hex(slurp(box.root / "e" / o["path"].get<std::string>())));
  }
  std::set<std::string> on_disk;
  for (const auto& f : fs::directory_iterator(box.root / "e"))
    if (f.path().filename() != cli::kManifestName) on_disk.insert(f.path().filename().string());
  CHECK(written == on_disk);

  // identical inputs and seed: identical artifacts
  REQUIRE(run({"estimate", "--config", est, "--seed", "1", "--out", box.path("e2")}).code == 0);
  CHECK(slurp(box.root / "e" / "estimates.csv") == slurp(box.root / "e2" / "estimates.csv"));

  const auto bad = box.config("bad.json", {{"input", "s/panel.csv"}, {"schema", "s/schema.json"}, {"typo", 1}});
  CHECK(run({"estimate", "--config", bad, "--out", box.path("e3")}).code == 1);
}

TEST_CASE("vae commands: validate a copy, gate failure, merge") {
  Sandbox box;
  REQUIRE(run({"synth", "--config", box.config("s.json", {{"dgp", {{"n_firms", 20}, {"n_years", 6}}}}), "--seed", "2",
               "--out", box.path("s")})
              .code == 0);
  const json data = {{"input", "s/panel.csv"}, {"schema", "s/schema.json"}};

  // generated = real copy
  std::ostringstream copy;
  copy << "firm_id,year,source_row,gw,balance,size,lev,rota,growth,indep,top1,age,incentive,duality,soe,provenance\n";
  {
    std::istringstream in(slurp(box.root / "s" / "panel.csv"));
    const auto doc = csv::parse(in);
    for (std::size_t r = 0; r < doc.rows.size(); ++r) {
      csv::Row row{"gen_" + doc.rows[r][0], doc.rows[r][1], std::to_string(r)};
      for (std::size_t c = 2; c < 14; ++c) row.push_back(doc.rows[r][c]);
      row.push_back("generated");
      csv::write_record(copy, row);
    }
  }
  std::ofstream(box.root / "copy.csv") << copy.str();
  json v = data;
  v["generated"] = "copy.csv";
  REQUIRE(run({"vae-validate", "--config", box.config("v.json", v), "--out", box.path("v")}).code == 0);
  const auto rep = json::parse(slurp(box.root / "v" / "quality_report.json"));
  CHECK(rep["pass"] == true);
  for (const auto& f : rep["features"]) CHECK(f["smd"] == 0.0);

  json t = data;
  t["vae"] = {{"epochs", 3}, {"latent_dim", 2}};
  REQUIRE(run({"vae-train", "--config", box.config("t.json", t), "--seed", "4", "--out", box.path("t")}).code == 0);
  json g = data;
  g["model"] = "t/vae_model.json";
  REQUIRE(run({"vae-generate", "--config", box.config("g.json", g), "--seed", "4", "--out", box.path("g")}).code == 0);
  json strict = data;
  strict["generated"] = "g/generated.csv";
  strict["gates"] = {{"smd", 1e-9}};
  const auto failed = run({"vae-validate", "--config", box.config("strict.json", strict), "--out", box.path("q")});
  CHECK(failed.code == 1);
  CHECK(failed.err.find("quality_report.json") != std::string::npos);
  CHECK(fs::exists(box.root / "q" / "quality_report.json"));

  json m = data;
  m["generated"] = "g/generated.csv";
  m["quality_report"] = "q/quality_report.json";
  CHECK(run({"merge", "--config", box.config("m.json", m), "--out", box.path("m")}).code == 1);
  m["force"] = true;
  REQUIRE(run({"merge", "--config", box.config("m2.json", m), "--out", box.path("m2")}).code == 0);
  std::istringstream in(slurp(box.root / "m2" / "merged.csv"));
  const auto merged = csv::parse(in);
  CHECK(merged.rows.size() == 160);  // 80 observed rows, each with one counterfactual
  CHECK(merged.header.back() == "provenance");
}

TEST_CASE("index and report commands") {
  Sandbox box;
  std::ofstream(box.root / "media.csv") << "firm_id,year,positive,negative,total\nA,2020,10,0,10\nB,2020,0,10,10\nC,2020,5,5,10\n";
  REQUIRE(run({"index", "--config", box.config("i.json", {{"kind", "media"}, {"input", "media.csv"}}), "--out",
               box.path("i")})
              .code == 0);
  CHECK(slurp(box.root / "i" / "index.csv") == "firm_id,year,media\nA,2020,1\nB,2020,-1\nC,2020,0\n");

  std::ofstream(box.root / "est.csv") << report::estimates_csv(
      {{"balance", "DML", -0.3726, 0.1036, 0.0003, -0.58, -0.17, 3486, 5, true, {"year"}}});
  REQUIRE(run({"report", "--config",
               box.config("r.json", {{"parts", {{{"section", "main"}, {"estimates", "est.csv"}}}}}), "--out",
               box.path("r")})
              .code == 0);
  CHECK(slurp(box.root / "r" / "report.md").find("-0.3726***(0.1036)") != std::string::npos);

  std::ofstream(box.root / "bad.csv") << "variable,label\nx,y\n";
  CHECK(run({"report", "--config", box.config("r2.json", {{"parts", {{{"estimates", "bad.csv"}}}}}), "--out",
             box.path("r2")})
            .code == 1);
}

TEST_CASE("default output root comes from the environment") {
  Sandbox box;
  ::setenv(cli::kOutRootEnv, box.path("root").c_str(), 1);
  CHECK(run({"synth", "--config", box.config("s.json", {{"dgp", {{"n_firms", 10}, {"n_years", 5}}}})}).code == 0);
  ::unsetenv(cli::kOutRootEnv);
  CHECK(fs::exists(box.root / "root" / "synth" / "panel.csv"));
  CHECK(fs::exists(box.root / "root" / "synth" / cli::kManifestName));
}
