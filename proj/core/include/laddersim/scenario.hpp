#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace laddersim {

struct ScenarioConfig {
  std::string scenario;
  nlohmann::json params;  // scenario parameters, defaults merged with overrides
  std::uint64_t seed = 0;
  std::string out_dir;
  std::optional<int> steps;   // CLI override of params["steps"]
  std::optional<double> lr;   // CLI override of params["lr"]
  std::int64_t cap = 1'000'000;  // enumeration cap (LADDERSIM_CAP)
};

struct ScenarioResult {
  nlohmann::ordered_json report;
  bool pass = false;
};

std::vector<std::string> scenario_names();
nlohmann::json default_params(const std::string& scenario);

// Runs the named scenario and writes report.json, summary.txt,
// trajectory.csv and scenario-specific CSVs into out_dir. Deterministic for
// a fixed (config, seed); the returned pass flag is the conjunction of every
// asserted check.
ScenarioResult run_scenario(const ScenarioConfig& config);

}  // namespace laddersim
