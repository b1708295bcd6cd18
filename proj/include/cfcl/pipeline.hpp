#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cfcl/augment.hpp"
#include "cfcl/contrastive.hpp"
#include "cfcl/evalharness.hpp"
#include "cfcl/scm.hpp"
#include "cfcl/synthdata.hpp"

namespace cfcl {

struct PathsConfig {
  // Relative paths resolve against $CFCL_CACHE_ROOT when set, else the cwd.
  std::string output_dir = "runs/default";
};

struct ExperimentConfig {
  DataConfig data;
  ScmConfig scm;
  AugmentationPolicy augment;
  PretrainConfig pretrain;  // strategy comes from the stage invocation
  ProbeConfig eval;
  PathsConfig paths;
  std::uint64_t master_seed = 0;

  void validate() const;
  // Hash of everything except paths.
  std::string config_hash() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

// The 90/5/5 three-scanner desk configuration.
ExperimentConfig default_config();
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& config, const std::filesystem::path& path);

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"generate-data", "train-scm", "build-cf-store", "pretrain",
                                              "probe",         "finetune",  "sweep",          "report"};
  return names;
}
inline const std::vector<Strategy>& all_strategies() {
  static const std::vector<Strategy> s{Strategy::simclr, Strategy::simclr_plus, Strategy::cf_simclr};
  return s;
}

// Cache key of a stage: its config sections plus the keys of its inputs.
// pretrain/probe/finetune keys depend on the strategy.
std::string lineage_hash(const ExperimentConfig& config, const std::string& stage, std::optional<Strategy> strategy = std::nullopt);
// Shared by the three pretraining runs of one experiment; embedded in every
// encoder checkpoint and required to match before strategies are compared.
std::string encoder_family_hash(const ExperimentConfig& config);

// Append-only JSON-lines record of stage executions.
class RunLedger {
 public:
  explicit RunLedger(std::filesystem::path path) : path_(std::move(path)) {}
  void append(const nlohmann::json& entry) const;
  std::vector<nlohmann::json> entries() const;
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
};

struct StageResult {
  std::string stage;
  bool cache_hit = false;
  std::vector<std::filesystem::path> outputs;
  double seconds = 0.0;
};

class Pipeline {
 public:
  Pipeline(ExperimentConfig config, std::filesystem::path output_dir, std::function<void(const std::string&)> log = {});

  // Runs one stage (strategy applies to pretrain/probe/finetune; empty means
  // all three where that makes sense).
  StageResult run_stage(const std::string& stage, std::optional<Strategy> strategy = std::nullopt);
  // Every stage in order, all strategies.
  std::vector<StageResult> run_all();

  const std::filesystem::path& output_dir() const noexcept { return dir_; }
  const ExperimentConfig& config() const noexcept { return config_; }
  RunLedger ledger() const { return RunLedger(dir_ / "ledger.jsonl"); }

  std::filesystem::path stage_dir(const std::string& stage) const;
  std::filesystem::path checkpoint_path(Strategy s) const;

 private:
  StageResult execute(const std::string& stage, std::optional<Strategy> strategy);
  void require(const std::string& stage, std::optional<Strategy> strategy = std::nullopt) const;
  std::filesystem::path stamp_path(const std::string& stage, std::optional<Strategy> strategy) const;
  bool stamp_current(const std::string& stage, std::optional<Strategy> strategy) const;
  void write_stamp(const std::string& stage, std::optional<Strategy> strategy, const std::vector<std::filesystem::path>& outputs) const;

  std::vector<std::filesystem::path> generate_data();
  std::vector<std::filesystem::path> train_scm_stage();
  std::vector<std::filesystem::path> build_store_stage();
  std::vector<std::filesystem::path> pretrain_stage(Strategy s);
  std::vector<std::filesystem::path> probe_stage(Strategy s);
  std::vector<std::filesystem::path> finetune_stage(Strategy s);
  std::vector<std::filesystem::path> sweep_stage();
  std::vector<std::filesystem::path> report_stage();

  ExperimentConfig config_;
  std::filesystem::path dir_;
  std::function<void(const std::string&)> log_;
};

// Side-by-side comparison of the three strategies from the sweep table,
// domain separation on in-domain test embeddings and effectiveness context.
struct StrategyComparison {
  std::vector<std::string> strategies;
  std::vector<int> underrepresented_scanners;
  // (variant, group, budget) -> per-strategy mean AUC, and deltas of cf-simclr
  // against the other two.
  struct Cell {
    std::string variant, group;
    double budget = 0.0;
    std::vector<double> mean_auc;  // aligned with strategies
    double delta_vs_simclr = 0.0;
    double delta_vs_simclr_plus = 0.0;
  };
  std::vector<Cell> cells;
  std::vector<double> domain_separation;  // aligned with strategies
  nlohmann::json effectiveness;
  bool cf_best_underrepresented_low_budget = false;
  bool cf_less_domain_separated = false;
  std::string config_hash;

  nlohmann::json to_json() const;
};

StrategyComparison compare_strategies(const ExperimentConfig& config, const std::filesystem::path& output_dir,
                                      const std::function<void(const std::string&)>& log = {});

// Scanners whose configured prevalence is below the uniform share.
std::vector<int> underrepresented_scanners(const DataConfig& data);

// Resolves paths.output_dir (or an override) against $CFCL_CACHE_ROOT.
std::filesystem::path resolve_output_dir(const ExperimentConfig& config, const std::optional<std::string>& override_dir);

}  // namespace cfcl
