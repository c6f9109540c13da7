#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "rbsde/commands.hpp"

using namespace rbsde;
namespace fs = std::filesystem;

namespace {

const std::string kConfigs = RBSDE_CONFIG_DIR;

struct CliRun {
  int code = 0;
  std::string out, err;
  Json summary() const { return Json::parse(out); }
  Json error() const { return Json::parse(err); }
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("rbsde_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override {
    set_parallel(true);
    fs::remove_all(dir_);
  }

  std::string write_config(const std::string& name, const std::string& text) {
    const fs::path p = dir_ / name;
    std::ofstream(p) << text;
    return p.string();
  }

  CliRun run(const std::string& command, CommandOptions opt, const std::string& sub = "out") {
    if (!opt.out_dir) opt.out_dir = (dir_ / sub).string();
    std::ostringstream out, err;
    CliRun r;
    r.code = run_command(command, opt, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
  }

  std::string slurp(const std::string& sub, const std::string& file) const {
    std::ifstream f(dir_ / sub / file, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
  }

  CommandOptions config(const std::string& path) {
    CommandOptions o;
    o.config_path = path;
    return o;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, MinimalSolve) {
  const CliRun r = run("solve", config(kConfigs + "/minimal.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_DOUBLE_EQ(r.summary()["Y0"].get<double>(), 0.7);
  EXPECT_EQ(r.summary()["node_count"].get<int>(), 6);
  const std::string csv = slurp("out", "solution.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kSolutionHeader);
  EXPECT_TRUE(fs::exists(dir_ / "out" / "summary.json"));
}

TEST_F(Cli, IrregularTableSolve) {
  const CliRun r = run("solve", config(kConfigs + "/irregular.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  const Json s = r.summary();
  EXPECT_LE(s["residuals"]["reconstruction"].get<double>(), 1e-10);
  EXPECT_GT(s["C_mass"].get<double>(), 0.0);
}

TEST_F(Cli, InputErrorsExitTwo) {
  const std::vector<std::pair<std::string, std::string>> cases{
      {R"({"grid": {"steps": 1, "intensity": 1.5}, "obstacle": {"table": {"fill": 0}}})", "GRID_INVALID"},
      {R"({"grid": {"steps": 1}, "driver": {"kind": "linear", "rate": 2.0}, "obstacle": {"table": {"fill": 0}}})",
       "NO_CONTRACTION"},
      {R"({"grid": {"steps": 1}, "obstacle": {"table": {"fill": 0}}, "bogus": 1})", "CONFIG_INVALID"},
      {R"({"obstacle": {"table": {"fill": 0}, "generator": {"seed": 1}}})", "CONFIG_INVALID"},
      {R"({"obstacle": {"generator": {"shape": "rusc"}}})", "CONFIG_INVALID"},
      {R"({"obstacle": {"table": {"nodes": {"1:mid:0": 1}}}})", "PARSE_ERROR"},
      {R"({"obstacle": {"table": )", "CONFIG_INVALID"},
  };
  int i = 0;
  for (const auto& [text, code] : cases) {
    const CliRun r = run("solve", config(write_config("bad" + std::to_string(i++) + ".json", text)));
    EXPECT_EQ(r.code, 2) << text;
    EXPECT_EQ(r.error()["error"]["code"].get<std::string>(), code) << text;
  }
  const CliRun missing = run("solve", config((dir_ / "nope.json").string()));
  EXPECT_EQ(missing.code, 2);
}

TEST_F(Cli, OracleSingleInstance) {
  const CliRun r = run("oracle", config(kConfigs + "/irregular.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  const Json s = r.summary();
  EXPECT_EQ(s["rule_count"].get<std::uint64_t>(), 83u);
  EXPECT_LE(s["gap"].get<double>(), 1e-10);
  EXPECT_TRUE(fs::exists(dir_ / "out" / "oracle.csv"));
}

TEST_F(Cli, OracleTooLarge) {
  const std::string path = write_config("k5.json", R"({"grid": {"steps": 5}, "obstacle": {"table": {"fill": 0}}})");
  const CliRun r = run("oracle", config(path));
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.error()["error"]["code"].get<std::string>(), "ORACLE_TOO_LARGE");
}

TEST_F(Cli, OracleBatchAndCorruption) {
  const CliRun ok = run("oracle", config(kConfigs + "/oracle_batch.json"));
  ASSERT_EQ(ok.code, 0) << ok.err;
  EXPECT_LE(ok.summary()["max_gap"].get<double>(), 1e-10);
  EXPECT_EQ(ok.summary()["batch"].get<int>(), 50);
  const std::string bad = write_config(
      "corrupt.json",
      R"({"grid": {"steps": 2}, "obstacle": {"generator": {"seed": 7}},
          "oracle": {"batch": 10, "corrupt_instance": 3, "corrupt_offset": 0.001}})");
  const CliRun r = run("oracle", config(bad), "bad");
  EXPECT_EQ(r.code, 1);
}

TEST_F(Cli, PriceDigitalCall) {
  const CliRun r = run("price", config(kConfigs + "/digital_call.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  const Json s = r.summary();
  EXPECT_LE(s["oracle_gap"].get<double>(), 1e-10);
  EXPECT_LE(s["shortfall"].get<double>(), s["shortfall_bound"].get<double>());
  const std::string csv = slurp("out", "pricing.csv");
  EXPECT_NE(csv.find("S1,S2,phi1,phi2,wealth"), std::string::npos);
}

TEST_F(Cli, PriceAlwaysInTheMoney) {
  const std::string path = write_config("itm.json", R"({
    "grid": {"steps": 3},
    "market": {"r": 0.0, "mu": [0.0, 0.0], "sigma": [0.2, -0.1], "beta": [0.1, 0.2]},
    "driver": {"kind": "perfect_market"},
    "obstacle": {"payoff": {"kind": "digital_call", "strike": 0.01}}})");
  const CliRun r = run("price", config(path));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_DOUBLE_EQ(r.summary()["u0"].get<double>(), 1.0);
}

TEST_F(Cli, PriceRefinementReportsSweep) {
  CommandOptions o = config(kConfigs + "/digital_call.json");
  o.refine = 2;
  const CliRun r = run("price", o);
  const Json s = r.summary();
  ASSERT_EQ(s["refinement"].size(), 3u);
  EXPECT_EQ(s["refinement"][2]["steps"].get<int>(), 8);
  EXPECT_EQ(r.code, s["passed"].get<bool>() ? 0 : 1);
  EXPECT_EQ(s["passed"].get<bool>(), s["refinement_nonincreasing"].get<bool>());
}

TEST_F(Cli, VerifyDefaultPasses) {
  CommandOptions o;
  const CliRun r = run("verify", o);
  ASSERT_EQ(r.code, 0) << r.err;
  const Json s = r.summary();
  EXPECT_EQ(s["checks"].size(), 8u);
  EXPECT_TRUE(s["passed"].get<bool>());
  EXPECT_TRUE(fs::exists(dir_ / "out" / "verify.txt"));
}

TEST_F(Cli, VerifyEstimatesHasHistogram) {
  CommandOptions o;
  o.checks = {"estimates"};
  const CliRun r = run("verify", o);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_FALSE(r.summary()["checks"][0]["histogram"].empty());
}

TEST_F(Cli, VerifyUnknownCheck) {
  CommandOptions o;
  o.checks = {"bogus"};
  const CliRun r = run("verify", o);
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.error()["error"]["code"].get<std::string>(), "UNKNOWN_CHECK");
}

TEST_F(Cli, VerifyFailureListsChecks) {
  const std::string path =
      write_config("strict.json", R"({"obstacle": {"table": {"fill": 0}},
        "checks": [{"name": "orthogonality", "tolerance": 1e-40}], "verify": {"instances": 3}})");
  const CliRun r = run("verify", config(path));
  EXPECT_EQ(r.code, 1);
  const Json e = r.error();
  EXPECT_EQ(e["error"]["code"].get<std::string>(), "VERIFICATION_FAILED");
  EXPECT_EQ(e["error"]["failed"][0].get<std::string>(), "orthogonality");
}

TEST_F(Cli, FormatSelection) {
  CommandOptions o = config(kConfigs + "/minimal.json");
  o.format = "json";
  ASSERT_EQ(run("solve", o, "j").code, 0);
  EXPECT_FALSE(fs::exists(dir_ / "j" / "solution.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "j" / "summary.json"));
  o.format = "csv";
  ASSERT_EQ(run("solve", o, "c").code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "c" / "solution.csv"));
  EXPECT_FALSE(fs::exists(dir_ / "c" / "summary.json"));
  o.format = "xml";
  EXPECT_EQ(run("solve", o, "x").code, 2);
}

TEST_F(Cli, SeedOverrideChangesGeneratedObstacle) {
  const std::string path = write_config("gen.json", R"({"grid": {"steps": 2}, "obstacle": {"generator": {"seed": 1}}})");
  CommandOptions o = config(path);
  const CliRun a = run("solve", o, "a");
  o.seed = 2;
  const CliRun b = run("solve", o, "b");
  ASSERT_EQ(a.code, 0);
  ASSERT_EQ(b.code, 0);
  EXPECT_NE(a.summary()["Y0"], b.summary()["Y0"]);
  EXPECT_EQ(b.summary()["config"]["obstacle"]["generator"]["seed"].get<int>(), 2);
}

TEST_F(Cli, EmbeddedConfigReproducesRun) {
  const CliRun first = run("solve", config(kConfigs + "/irregular.json"), "first");
  ASSERT_EQ(first.code, 0);
  const std::string again = write_config("again.json", first.summary()["config"].dump());
  const CliRun second = run("solve", config(again), "second");
  ASSERT_EQ(second.code, 0) << second.err;
  EXPECT_EQ(slurp("first", "solution.csv"), slurp("second", "solution.csv"));
  EXPECT_EQ(first.summary()["Y0"], second.summary()["Y0"]);
}

TEST_F(Cli, DeterministicAcrossRunsAndParallelism) {
  for (const std::string cfg : {"irregular.json", "digital_put_borrow.json", "oracle_batch.json"}) {
    const std::string command = cfg == "oracle_batch.json" ? "oracle" : (cfg == "irregular.json" ? "solve" : "price");
    set_parallel(true);
    const CliRun a = run(command, config(kConfigs + "/" + cfg), "a");
    const CliRun b = run(command, config(kConfigs + "/" + cfg), "b");
    set_parallel(false);
    const CliRun c = run(command, config(kConfigs + "/" + cfg), "c");
    set_parallel(true);
    EXPECT_EQ(a.code, b.code);
    EXPECT_EQ(a.code, c.code);
    auto strip = [](std::string s, const std::string& sub) {
      // Output paths differ only by the directory name.
      for (std::size_t at; (at = s.find("/" + sub + "\"")) != std::string::npos;) s.replace(at, sub.size() + 1, "/X");
      return s;
    };
    EXPECT_EQ(strip(a.out, "a"), strip(b.out, "b")) << cfg;
    EXPECT_EQ(strip(a.out, "a"), strip(c.out, "c")) << cfg;
    for (const auto& entry : fs::directory_iterator(dir_ / "a")) {
      const std::string name = entry.path().filename().string();
      EXPECT_EQ(slurp("a", name), slurp("b", name)) << cfg << ' ' << name;
      EXPECT_EQ(slurp("a", name), slurp("c", name)) << cfg << ' ' << name;
    }
    fs::remove_all(dir_ / "a");
    fs::remove_all(dir_ / "b");
    fs::remove_all(dir_ / "c");
  }
}
