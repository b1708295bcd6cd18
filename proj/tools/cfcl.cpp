// Command-line driver for the counterfactual contrastive pipeline.
//
//   cfcl <stage> --config cfg.json [--strategy cf-simclr] [--output-dir dir] [--seed-override N]
//   cfcl run --stage <stage|all> ...
//   cfcl print-config
//
// Failures exit nonzero and print one JSON line on stderr:
//   {"error":{"kind":"missing-artifact","message":"...","stage":"build-cf-store"}}

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "cfcl/error.hpp"
#include "cfcl/pipeline.hpp"

namespace {

int exit_code(const std::string& kind) {
  if (kind == "config") return 2;
  if (kind == "missing-artifact") return 3;
  if (kind == "stale-artifact") return 4;
  if (kind == "io") return 5;
  return 1;
}

void report_error(const std::string& kind, const std::string& message, const std::string& stage = {}) {
  nlohmann::json e{{"kind", kind}, {"message", message}};
  if (!stage.empty()) e["stage"] = stage;
  std::cerr << nlohmann::json{{"error", e}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual contrastive learning pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::string stage;
  std::string strategy;
  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> output_dir;
  bool quiet = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config (JSON); defaults to the built-in desk config");
    cmd->add_option("--strategy", strategy, "simclr | simclr-plus | cf-simclr (pretrain, probe, finetune)");
    cmd->add_option("--seed-override", seed_override, "replace master_seed");
    cmd->add_option("--output-dir", output_dir, "artifact directory (relative paths resolve against $CFCL_CACHE_ROOT)");
    cmd->add_flag("--quiet", quiet, "no progress output");
  };

  auto* run = app.add_subcommand("run", "run a stage, or `all`");
  run->add_option("--stage", stage, "stage name or all")->required();
  add_common(run);
  std::vector<CLI::App*> stage_cmds;
  for (const auto& name : cfcl::stage_names()) {
    auto* cmd = app.add_subcommand(name, "run the " + name + " stage");
    add_common(cmd);
    stage_cmds.push_back(cmd);
  }
  auto* all = app.add_subcommand("all", "run every stage in order");
  add_common(all);
  auto* print = app.add_subcommand("print-config", "print the resolved config as JSON");
  print->add_option("--config", config_path, "experiment config (JSON)");
  print->add_option("--seed-override", seed_override, "replace master_seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return 64;
  }

  std::string current_stage;
  try {
    cfcl::ExperimentConfig config = config_path.empty() ? cfcl::default_config() : cfcl::load_config(config_path);
    if (seed_override) config.master_seed = *seed_override;
    config.validate();
    if (print->parsed()) {
      std::cout << nlohmann::json(config).dump(2) << std::endl;
      return 0;
    }
    if (all->parsed()) stage = "all";
    for (auto* cmd : stage_cmds)
      if (cmd->parsed()) stage = cmd->get_name();

    std::optional<cfcl::Strategy> strat;
    if (!strategy.empty()) strat = cfcl::strategy_from_string(strategy);
    if (strat && stage != "pretrain" && stage != "probe" && stage != "finetune")
      throw cfcl::ConfigError("--strategy only applies to pretrain, probe and finetune");

    auto log = [quiet](const std::string& msg) {
      if (!quiet) std::cerr << "[cfcl] " << msg << std::endl;
    };
    cfcl::Pipeline pipeline(config, cfcl::resolve_output_dir(config, output_dir), log);
    nlohmann::json summary = nlohmann::json::array();
    auto record = [&](const cfcl::StageResult& r) {
      nlohmann::json outputs = nlohmann::json::array();
      for (const auto& o : r.outputs) outputs.push_back(o.string());
      summary.push_back({{"stage", r.stage}, {"cache_hit", r.cache_hit}, {"seconds", r.seconds}, {"outputs", outputs}});
    };
    if (stage == "all") {
      for (const auto& name : cfcl::stage_names()) {
        current_stage = name;
        record(pipeline.run_stage(name));
      }
    } else {
      current_stage = stage;
      record(pipeline.run_stage(stage, strat));
    }
    std::cout << summary.dump() << std::endl;
    return 0;
  } catch (const cfcl::MissingArtifactError& e) {
    report_error(e.kind(), e.what(), e.stage());
    return exit_code(e.kind());
  } catch (const cfcl::Error& e) {
    report_error(e.kind(), e.what(), current_stage);
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    report_error("internal", e.what(), current_stage);
    return 1;
  }
}
