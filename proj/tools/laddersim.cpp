#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "laddersim/scenario.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Event-space simulator for deep locally connected ReLU ladders"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  int steps = -1;
  double lr = -1.0;

  for (const auto& name : laddersim::scenario_names()) {
    CLI::App* sub = app.add_subcommand(name, "Run the " + name + " scenario");
    sub->add_option("--config", config_path, "JSON config overriding defaults");
    sub->add_option("--seed", seed, "Random seed")->required();
    sub->add_option("--out", out_dir, "Output directory")->required();
    sub->add_option("--steps", steps, "Training steps override");
    sub->add_option("--lr", lr, "Learning rate override");
  }

  CLI11_PARSE(app, argc, argv);

  laddersim::ScenarioConfig cfg;
  cfg.scenario = app.get_subcommands().front()->get_name();
  cfg.seed = seed;
  cfg.out_dir = out_dir;
  if (steps >= 0) cfg.steps = steps;
  if (lr > 0.0) cfg.lr = lr;

  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) {
      std::cerr << "error: cannot open config " << config_path << "\n";
      return 2;
    }
    try {
      in >> cfg.params;
    } catch (const std::exception& e) {
      std::cerr << "error: bad config JSON: " << e.what() << "\n";
      return 2;
    }
  }

  if (const char* cap = std::getenv("LADDERSIM_CAP")) {
    try {
      cfg.cap = std::stoll(cap);
    } catch (const std::exception&) {
      std::cerr << "error: LADDERSIM_CAP is not an integer\n";
      return 2;
    }
  }

  try {
    const laddersim::ScenarioResult result = laddersim::run_scenario(cfg);
    std::cout << "scenario " << cfg.scenario << ": "
              << (result.pass ? "PASS" : "FAIL") << " (report in " << out_dir
              << ")\n";
    return result.pass ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
