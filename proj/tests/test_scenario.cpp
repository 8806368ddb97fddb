#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "laddersim/scenario.hpp"

using namespace laddersim;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("laddersim_test_" + tag);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

ScenarioResult run(const std::string& name, std::uint64_t seed,
                   const fs::path& out, std::optional<int> steps = {}) {
  ScenarioConfig cfg;
  cfg.scenario = name;
  cfg.seed = seed;
  cfg.out_dir = out.string();
  cfg.steps = steps;
  return run_scenario(cfg);
}

}  // namespace

TEST_CASE("every scenario has defaults and runs to a pass") {
  for (const std::string& name : scenario_names()) {
    CAPTURE(name);
    CHECK(default_params(name).is_object());
    const fs::path out = fresh_dir(name);
    const ScenarioResult res = run(name, 42, out, 60);
    CHECK(res.pass == (res.report.at("pass").get<bool>()));
    CHECK(res.pass);
    CHECK(fs::exists(out / "report.json"));
    CHECK(fs::exists(out / "summary.txt"));
    CHECK(fs::exists(out / "trajectory.csv"));
    CHECK(res.report.at("scenario") == name);
    CHECK(res.report.at("seed") == 42);
    fs::remove_all(out);
  }
}

TEST_CASE("unknown scenario names are rejected") {
  ScenarioConfig cfg;
  cfg.scenario = "nonsense";
  cfg.seed = 1;
  cfg.out_dir = fresh_dir("bad").string();
  CHECK_THROWS_AS(run_scenario(cfg), std::runtime_error);
}

TEST_CASE("reports are byte-identical across reruns with the same seed") {
  for (const std::string& name : {std::string("exactness"), std::string("sgd"),
                                  std::string("disentangle")}) {
    CAPTURE(name);
    const fs::path a = fresh_dir(name + "_a");
    const fs::path b = fresh_dir(name + "_b");
    run(name, 7, a, 40);
    run(name, 7, b, 40);
    CHECK(slurp(a / "report.json") == slurp(b / "report.json"));
    CHECK(slurp(a / "summary.txt") == slurp(b / "summary.txt"));
    CHECK(slurp(a / "trajectory.csv") == slurp(b / "trajectory.csv"));
    fs::remove_all(a);
    fs::remove_all(b);
  }
}

TEST_CASE("different seeds change stochastic scenario outputs") {
  const fs::path a = fresh_dir("sgd_s1");
  const fs::path b = fresh_dir("sgd_s2");
  run("sgd", 1, a, 40);
  run("sgd", 2, b, 40);
  CHECK(slurp(a / "report.json") != slurp(b / "report.json"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("scenario-specific artifacts are written") {
  struct Expect {
    const char* scenario;
    const char* file;
  };
  const Expect expects[] = {
      {"exactness", "exactness.csv"},
      {"recursion", "recursion.csv"},
      {"bn", "energy.csv"},
      {"bn", "energy_control.csv"},
      {"expressibility", "trajectory_relu.csv"},
      {"disentangle", "disentangle_forward.csv"},
      {"disentangle", "disentangle_backward.csv"},
      {"overfit", "overfit.csv"},
      {"sgd", "sensitivity.csv"},
  };
  for (const auto& e : expects) {
    CAPTURE(e.scenario);
    CAPTURE(e.file);
    const fs::path out = fresh_dir(std::string("art_") + e.scenario);
    run(e.scenario, 3, out, 40);
    CHECK(fs::exists(out / e.file));
    fs::remove_all(out);
  }
}

TEST_CASE("summary lists one line per check plus the overall verdict") {
  const fs::path out = fresh_dir("summary");
  const ScenarioResult res = run("recursion", 11, out);
  const std::string summary = slurp(out / "summary.txt");
  std::size_t pass_lines = 0;
  std::istringstream is(summary);
  std::string line;
  bool overall = false;
  while (std::getline(is, line)) {
    if (line.rfind("[PASS]", 0) == 0 || line.rfind("[FAIL]", 0) == 0)
      ++pass_lines;
    if (line.find("overall:") != std::string::npos) overall = true;
  }
  CHECK(pass_lines == res.report.at("checks").size());
  CHECK(overall);
  fs::remove_all(out);
}
