#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "gaussrde/scenario.hpp"

namespace fs = std::filesystem;
using gaussrde::scenario::json;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& tag) {
  const auto dir = fs::temp_directory_path() / ("gaussrde_cli_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string scenario(const std::string& name) { return std::string(GAUSSRDE_SCENARIO_DIR) + "/" + name; }

Outcome cli(const std::string& args, const fs::path& dir) {
  const auto o = dir / "stdout.txt", e = dir / "stderr.txt";
  const std::string cmd = std::string(GAUSSRDE_CLI_PATH) + " " + args + " > " + o.string() + " 2> " + e.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(o), slurp(e)};
}

json report(const fs::path& out) { return json::parse(slurp(out / "report.json")); }

}  // namespace

TEST(Cli, HormanderOnHeisenberg) {
  const auto dir = scratch("horm");
  const auto r = cli("hormander --scenario " + scenario("heisenberg.json") + " --out " + (dir / "o").string(), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rep = report(dir / "o");
  EXPECT_EQ(rep["results"]["rank"], 3);
  EXPECT_EQ(rep["command"], "hormander");
  const auto meta = json::parse(slurp(dir / "o" / "metadata.json"));
  EXPECT_TRUE(meta.contains("timestamp"));
  EXPECT_TRUE(meta.contains("elapsed_seconds"));
}

TEST(Cli, MalliavinBridgeWithSampleOverride) {
  const auto dir = scratch("bridge");
  const auto r = cli("malliavin --scenario " + scenario("bridge_dydx.json") + " --samples 50 --grid 7 --out " +
                         (dir / "o").string(),
                     dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rep = report(dir / "o");
  EXPECT_EQ(rep["scenario"]["samples"], 50);
  EXPECT_EQ(rep["results"]["degenerate_fraction"], 1.0);
  EXPECT_TRUE(fs::exists(dir / "o" / "malliavin.csv"));
}

TEST(Cli, ValidatePrintsResolvedScenario) {
  const auto dir = scratch("validate");
  const auto r = cli("validate --scenario " + scenario("grushin.json"), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto doc = json::parse(r.out);
  EXPECT_EQ(doc["fields"].size(), 2u);
  EXPECT_EQ(doc["threshold"], 1e-12);
}

TEST(Cli, DimensionMismatchIsASingleValidationLine) {
  const auto dir = scratch("mismatch");
  const auto r = cli("validate --scenario " + scenario("grushin.json") + " --set driver.components=3", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("ERROR VALIDATION", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
  EXPECT_NE(r.err.find("d = 3"), std::string::npos);
  EXPECT_NE(r.err.find("2 vector fields"), std::string::npos);
}

TEST(Cli, UnknownKindListsSupportedKinds) {
  const auto dir = scratch("kind");
  const auto r = cli("sample --scenario " + scenario("grushin.json") + " --set driver.kind=levy --out " +
                         (dir / "o").string(),
                     dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("brownian, fbm, bridge, ornstein_uhlenbeck"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "o" / "report.json"));
}

TEST(Cli, BridgeAtHorizonWithoutFlagExitsFour) {
  const auto dir = scratch("degenerate");
  const auto r = cli("sample --scenario " + scenario("bridge_dydx.json") + " --set driver.allow_degenerate=false --out " +
                         (dir / "o").string(),
                     dir);
  EXPECT_EQ(r.code, 4);
  EXPECT_EQ(r.err.rfind("ERROR DEGENERATE_COVARIANCE", 0), 0u) << r.err;
}

TEST(Cli, ExplosionExitsThree) {
  const auto dir = scratch("explode");
  {
    std::ofstream f(dir / "blowup.json");
    f << R"({"driver": {"components": 1}, "fields": [[[[30.0, [2]]]]], "y0": [1.0], "grid": 6})";
  }
  const auto r = cli("solve --scenario " + (dir / "blowup.json").string() + " --out " + (dir / "o").string(), dir);
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(r.err.rfind("ERROR EXPLOSION", 0), 0u) << r.err;
}

TEST(Cli, UsageErrors) {
  const auto dir = scratch("usage");
  EXPECT_EQ(cli("hormander", dir).code, 2);
  EXPECT_EQ(cli("hormander --scenario /nonexistent.json", dir).code, 2);
  EXPECT_EQ(cli("frobnicate", dir).code, 2);
  EXPECT_EQ(cli("hormander --scenario " + scenario("grushin.json") + " --set broken", dir).code, 2);
  EXPECT_EQ(cli("--version", dir).code, 0);
}

TEST(Cli, RepeatedRunsAreByteIdentical) {
  const auto dir = scratch("repeat");
  const std::string base = "support --scenario " + scenario("brownian_support.json") + " --samples 200 --seed 11";
  ASSERT_EQ(cli(base + " --out " + (dir / "a").string(), dir).code, 0);
  ASSERT_EQ(cli(base + " --workers 4 --set workers=1 --out " + (dir / "b").string(), dir).code, 0);
  EXPECT_EQ(slurp(dir / "a" / "report.json"), slurp(dir / "b" / "report.json"));
  EXPECT_EQ(slurp(dir / "a" / "support.csv"), slurp(dir / "b" / "support.csv"));
  ASSERT_EQ(cli(base + " --workers 3 --out " + (dir / "c").string(), dir).code, 0);
  EXPECT_EQ(slurp(dir / "a" / "support.csv"), slurp(dir / "c" / "support.csv"));
}

TEST(Cli, EveryCommandWritesItsData) {
  const auto dir = scratch("all");
  const std::vector<std::pair<std::string, std::string>> cases{
      {"sample --scenario " + scenario("heisenberg.json") + " --samples 5", "samples.csv"},
      {"solve --scenario " + scenario("heisenberg.json"), "trajectory.csv"},
      {"taylor --scenario " + scenario("linear_taylor.json"), "taylor.csv"},
      {"scaling --scenario " + scenario("ou_scaling.json"), "scaling.csv"}};
  int i = 0;
  for (const auto& [args, file] : cases) {
    const auto out = dir / std::to_string(i++);
    const auto r = cli(args + " --out " + out.string(), dir);
    EXPECT_EQ(r.code, 0) << args << "\n" << r.err;
    EXPECT_TRUE(fs::exists(out / file)) << args;
    EXPECT_TRUE(fs::exists(out / "report.json")) << args;
  }
}

TEST(Cli, SelftestPasses) {
  const auto dir = scratch("selftest");
  const auto r = cli("selftest --out " + (dir / "o").string(), dir);
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
  EXPECT_EQ(report(dir / "o")["results"]["all_pass"], true);
}
