// gaussrde: run scenario pipelines and write report.json + CSV data.
//
//   gaussrde <command> --scenario file.json [--seed N] [--samples N] [--grid L]
//            [--level N] [--depth M] [--workers W] [--out DIR] [--set key=value]...
//
// Exit codes: 0 ok, 2 validation, 3 every sample exploded, 4 degenerate covariance.

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gaussrde/scenario.hpp"
#include "gaussrde/selftest.hpp"

namespace sc = gaussrde::scenario;
namespace fs = std::filesystem;

namespace {

int report_error(int code, const std::string& id, const std::string& msg) {
  std::string line = msg;
  for (char& c : line)
    if (c == '\n') c = ' ';
  std::cerr << "ERROR " << id << " " << line << "\n";
  return code;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw sc::ScenarioError(sc::kValidation, "IO", "cannot read scenario file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& contents) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw sc::ScenarioError(1, "IO", "cannot write '" + p.string() + "'");
  out << contents;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_outputs(const fs::path& dir, const sc::RunResult& r, const std::string& command, const std::string& file,
                   double seconds) {
  fs::create_directories(dir);
  write_file(dir / "report.json", r.report.dump(2) + "\n");
  for (const auto& [name, contents] : r.files) write_file(dir / name, contents);
  sc::json meta;
  meta["version"] = sc::kVersion;
  meta["command"] = command;
  meta["scenario_file"] = file;
  meta["timestamp"] = utc_timestamp();
  meta["elapsed_seconds"] = seconds;
  write_file(dir / "metadata.json", meta.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian rough differential equations: drivers, solvers, Malliavin and Hoermander probes"};
  app.set_version_flag("--version", std::string(sc::kVersion));
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string scenario_file, out_dir = "gaussrde-out";
  std::optional<std::uint64_t> seed;
  std::optional<long long> samples, grid, level, depth, workers;
  std::vector<std::string> sets;
  app.add_option("--scenario", scenario_file, "scenario JSON file");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--samples", samples, "Monte-Carlo sample count");
  app.add_option("--grid", grid, "log2 of the grid intervals");
  app.add_option("--level", level, "lift level N");
  app.add_option("--depth", depth, "Euler depth m");
  app.add_option("--workers", workers, "worker threads");
  app.add_option("--out", out_dir, "output directory")->capture_default_str();
  app.add_option("--set", sets, "override a scenario key: dotted.key=json-value")->take_all();

  const std::vector<std::pair<std::string, std::string>> help{
      {"sample", "sample driver paths to samples.csv"},
      {"solve", "solve the RDE with Jacobian flows (and z3 when w is set)"},
      {"malliavin", "Monte-Carlo Malliavin covariance and degeneracy probe"},
      {"hormander", "bracket spans (H)_r and (HT)_r"},
      {"taylor", "bracket Taylor coefficients and remainder order"},
      {"scaling", "covariance scaling defect against fBm"},
      {"support", "small-time support probe"},
      {"selftest", "run the invariant suite"},
      {"validate", "validate a scenario and print it with defaults filled"}};
  for (const auto& [name, text] : help) app.add_subcommand(name, text);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(sc::kValidation, "USAGE", e.what());
  }
  const std::string command = app.get_subcommands().front()->get_name();
  const auto t0 = std::chrono::steady_clock::now();
  const auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  try {
    if (command == "selftest") {
      const auto checks = gaussrde::selftest::run_all(seed.value_or(0));
      sc::RunResult r;
      r.report["command"] = "selftest";
      r.report["version"] = sc::kVersion;
      r.report["scenario"] = nullptr;
      bool ok = true;
      sc::json rows = sc::json::array();
      for (const auto& c : checks) {
        std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << " value=" << c.value << " tol=" << c.tolerance << "\n";
        rows.push_back({{"name", c.name}, {"pass", c.pass}, {"value", c.value}, {"tolerance", c.tolerance}});
        ok = ok && c.pass;
      }
      r.report["results"] = {{"checks", rows}, {"all_pass", ok}};
      write_outputs(out_dir, r, command, scenario_file, elapsed());
      return ok ? 0 : 1;
    }

    if (scenario_file.empty()) return report_error(sc::kValidation, "USAGE", command + " requires --scenario <file>");
    sc::json doc = sc::parse_document(read_file(scenario_file), scenario_file);
    if (seed) doc["seed"] = *seed;
    if (samples) doc["samples"] = *samples;
    if (grid) doc["grid"] = *grid;
    if (level) doc["level"] = *level;
    if (depth) doc["depth"] = *depth;
    if (workers) doc["workers"] = *workers;
    for (const auto& s : sets) sc::apply_set(doc, s);
    const sc::Scenario scenario = sc::parse_scenario(doc);

    if (command == "validate") {
      std::cout << sc::resolved(scenario).dump(2) << "\n";
      return 0;
    }
    const sc::RunResult r = sc::run(command, scenario);
    write_outputs(out_dir, r, command, scenario_file, elapsed());
    if (r.exit_code != 0) return report_error(r.exit_code, r.error_code, r.error_message);
    std::cout << "wrote " << (fs::path(out_dir) / "report.json").string() << "\n";
    return 0;
  } catch (const sc::ScenarioError& e) {
    return report_error(e.exit_code(), e.code(), e.what());
  } catch (const gaussrde::DegenerateCovariance& e) {
    return report_error(sc::kDegenerate, "DEGENERATE_COVARIANCE", e.what());
  } catch (const std::exception& e) {
    return report_error(sc::kInternal, "INTERNAL", e.what());
  }
}
