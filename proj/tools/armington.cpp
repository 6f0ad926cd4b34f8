#include "armington/csv.hpp"
#include "armington/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace armington;
using namespace armington::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"Two-stage Armington elasticity estimation for meat imports"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> meat;
  app.add_option("--config", config_path, "flat key = value run configuration");
  app.add_option("--seed", seed, "override the configured seed");
  app.add_option("--meat", meat, "override the configured meat")->check(CLI::IsMember({"beef", "pork", "chicken"}));

  struct Command {
    const char* name;
    const char* help;
    void (*run)(const RunConfig&, std::ostream&);
    bool needs_config;
  };
  const Command commands[]{
      {"ingest", "aggregate item records into country-month CIF prices", cmd_ingest, true},
      {"tariff", "evaluate effective tariffs with an audit column", cmd_tariff, true},
      {"simulate", "write a synthetic dataset, its config and truth.json", cmd_simulate, false},
      {"estimate-first", "FE LS and IV microelasticity with diagnostics and aggregates", cmd_estimate_first, true},
      {"estimate-second", "pretests and macroelasticity from the first-stage aggregates", cmd_estimate_second, true},
      {"report", "full report across both stages", cmd_report, true},
  };
  for (const auto& c : commands) app.add_subcommand(c.name, c.help);

  CLI11_PARSE(app, argc, argv);

  try {
    const auto* sub = app.get_subcommands().front();
    const Command* cmd = nullptr;
    for (const auto& c : commands)
      if (sub->get_name() == c.name) cmd = &c;
    if (config_path.empty() && cmd->needs_config) throw InputError(std::string(cmd->name) + " needs --config");
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    if (seed) cfg.seed = *seed;
    if (meat) cfg.meat = parse_meat(*meat);
    cmd->run(cfg, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
