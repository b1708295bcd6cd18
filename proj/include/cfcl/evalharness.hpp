#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cfcl/contrastive.hpp"
#include "cfcl/synthdata.hpp"

namespace cfcl {

enum class ProbeMode { linear_probe, finetune, supervised_baseline };

std::string to_string(ProbeMode m);
ProbeMode probe_mode_from_string(const std::string& s);

struct ProbeConfig {
  ProbeMode mode = ProbeMode::linear_probe;
  // Values <= 1 are fractions of the train split, larger values are counts.
  std::vector<double> budgets{0.01, 0.05, 0.1, 0.25, 1.0};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  // Linear probe: full-batch Adam until |delta loss| < tolerance or max_epochs.
  int max_epochs = 200;
  double tolerance = 1e-6;
  double learning_rate = 1e-2;
  // Finetune / supervised baseline: mini-batch Adam over the budget subset.
  int finetune_epochs = 15;
  int finetune_batch_size = 64;
  double finetune_learning_rate = 1e-3;
  std::vector<double> finetune_budgets{0.01, 0.1};
  int knn_k = 10;
  std::size_t tsne_max_points = 16000;

  void validate() const;
};

void to_json(nlohmann::json& j, const ProbeConfig& c);
void from_json(const nlohmann::json& j, ProbeConfig& c);

// One measurement. variant is "in-domain" or "ood" (holdout scanners); group
// is "all" or "scanner<k>".
struct MetricRow {
  std::string variant;
  std::string encoder;
  std::string mode;
  std::string group;
  double budget = 0.0;
  std::size_t budget_count = 0;
  std::uint64_t seed = 0;
  double auc = 0.0;
  std::size_t n = 0;
};

struct MetricAggregate {
  std::string variant, encoder, mode, group;
  double budget = 0.0;
  double mean = 0.0;
  std::optional<double> stderr_;
  std::size_t num_seeds = 0;
};

struct MetricsReport {
  std::vector<MetricRow> rows;
  std::vector<MetricAggregate> aggregates;
  std::string encoder_hash;
  std::string config_hash;
};

// Groups rows by (variant, encoder, mode, group, budget) in first-seen order.
std::vector<MetricAggregate> aggregate_rows(const std::vector<MetricRow>& rows);

// Record indices per class, subsampled to `count` with largest-remainder
// allocation per class (each present class gets at least one). Sorted.
std::vector<std::size_t> stratified_subsample(const DatasetManifest& manifest, std::span<const std::size_t> pool, std::size_t count,
                                              std::uint64_t seed);
std::size_t resolve_budget(double budget, std::size_t train_size);

struct EmbeddingDump {
  std::size_t dim = 0;
  std::vector<float> values;  // row-major rows x dim
  std::vector<int> scanner;
  std::vector<int> class_label;
  std::vector<std::size_t> record;

  std::size_t rows() const noexcept { return record.size(); }
};

EmbeddingDump embed(EncoderImpl& encoder, const DatasetManifest& manifest, std::span<const std::size_t> indices);
void save_embeddings_csv(const EmbeddingDump& dump, const std::filesystem::path& path);

MetricsReport linear_probe(const EncoderCheckpoint& encoder, const DatasetManifest& manifest, const ProbeConfig& config,
                           const std::string& encoder_name);
// mode finetune starts from `encoder`; supervised_baseline ignores its
// weights and starts from a random initialization per seed.
MetricsReport finetune(const EncoderCheckpoint& encoder, const DatasetManifest& manifest, const ProbeConfig& config,
                       const std::string& encoder_name);

struct NamedEncoder {
  std::string name;
  const EncoderCheckpoint* checkpoint;
};

// Linear probe per (encoder, budget, seed); writes results.csv,
// aggregates.csv and one SVG per (variant, group) under out_dir.
MetricsReport label_efficiency_sweep(const std::vector<NamedEncoder>& encoders, const DatasetManifest& manifest,
                                     const ProbeConfig& config, const std::filesystem::path& out_dir, const std::string& config_hash);

void write_rows_csv(const std::vector<MetricRow>& rows, const std::filesystem::path& path);
std::vector<MetricRow> read_rows_csv(const std::filesystem::path& path);
void write_aggregates_csv(const std::vector<MetricAggregate>& aggs, const std::filesystem::path& path);

// Leave-one-out kNN scanner accuracy (class-balanced) on the dump.
double domain_separation(const EmbeddingDump& dump, int k);

// 2-D t-SNE scatter coloured by scanner; subsamples to max_points.
std::vector<std::size_t> tsne_plot(const EmbeddingDump& dump, std::uint64_t seed, const std::filesystem::path& path,
                                   const std::string& title, const std::string& config_hash, std::size_t max_points = 16000,
                                   int iterations = 1000);

}  // namespace cfcl
