#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cfcl/augment.hpp"
#include "cfcl/image.hpp"
#include "cfcl/scm.hpp"
#include "cfcl/synthdata.hpp"

namespace cfcl {

enum class Strategy { simclr, simclr_plus, cf_simclr };

// CLI spelling: simclr, simclr-plus, cf-simclr.
std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct EncoderArch {
  ImageShape image_shape{32, 32};
  int representation_dim = 128;  // D
  int projection_dim = 64;       // d
};

// Four conv3x3-BN-ReLU blocks (max-pool after the first three), widths
// D/8, D/4, D/2, D, then global average pooling.
class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const EncoderArch& arch);
  torch::Tensor forward(const torch::Tensor& x);
  const EncoderArch& arch() const noexcept { return arch_; }

 private:
  EncoderArch arch_;
  torch::nn::Sequential body_{nullptr};
};

// D -> D -> d MLP.
class ProjectionHeadImpl : public torch::nn::Module {
 public:
  explicit ProjectionHeadImpl(const EncoderArch& arch);
  torch::Tensor forward(const torch::Tensor& h);

 private:
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};

// Mean NT-Xent per ordered positive pair of a (2N, d) projection matrix,
// rows i and i + N paired. Forward and backward use nt_xent().
torch::Tensor nt_xent_loss(const torch::Tensor& projections, double tau);

struct PretrainConfig {
  Strategy strategy = Strategy::simclr;
  double temperature = 0.5;
  int batch_size = 256;
  int epochs = 20;  // passes over the real train split; fixes the step budget
  double learning_rate = 1e-3;
  double weight_decay = 1e-6;
  int representation_dim = 128;
  int projection_dim = 64;

  void validate() const;
};

void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);

// One image entering pair construction.
struct PairSource {
  const Image* image = nullptr;
  std::size_t source_index = 0;  // manifest record (the real source for counterfactuals)
  int scanner = 0;               // scanner of *this* image
  bool counterfactual = false;
};

struct PairProvenance {
  std::size_t source_index = 0;
  int source_scanner = 0;
  int view_b_scanner = 0;
  bool a_counterfactual = false;
  bool b_counterfactual = false;
};

struct PairBatch {
  std::vector<Image> view_a, view_b;
  Strategy strategy = Strategy::simclr;
  std::vector<PairProvenance> provenance;

  std::size_t size() const noexcept { return view_a.size(); }
};

// Views are drawn from per-sample substreams view_engine(seed, first_sample + i, 0|1),
// so a batch does not depend on how it is split across workers.
PairBatch make_pairs_simclr(std::span<const PairSource> real_batch, const AugmentationPolicy& policy, std::uint64_t seed,
                            std::uint64_t first_sample);
PairBatch make_pairs_simclr_plus(std::span<const PairSource> mixed_batch, const AugmentationPolicy& policy,
                                 std::uint64_t seed, std::uint64_t first_sample);
// Target scanner uniform over scanners != source, drawn from
// make_engine(seed, "cf-target", {sample}).
PairBatch make_pairs_cf(std::span<const PairSource> real_batch, const CounterfactualStore& store,
                        const AugmentationPolicy& policy, std::uint64_t seed, std::uint64_t first_sample);
int sample_cf_target(int source_scanner, int num_scanners, std::uint64_t seed, std::uint64_t sample);

struct EncoderCheckpoint {
  EncoderArch arch;
  std::shared_ptr<EncoderImpl> encoder;
  std::shared_ptr<ProjectionHeadImpl> head;
  PretrainConfig config;
  AugmentationPolicy augment;
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  std::vector<double> loss_trace;        // mean per ordered pair, per step
  std::vector<double> loss_trace_total;  // summed over ordered pairs, per step
  std::string config_hash;
  std::string store_hash;  // empty for simclr

  std::string encoder_hash() const;
};

// Fresh encoder + head; initialization depends on the seed only, so all
// strategies start from the same weights.
EncoderCheckpoint make_random_encoder(const EncoderArch& arch, std::uint64_t seed);

// Step budget = epochs * ceil(#real train records / batch_size) for every
// strategy. Batches are streamed from seeded shuffles of the strategy's pool
// (real train records; plus store entries for simclr_plus).
EncoderCheckpoint pretrain(const DatasetManifest& manifest, const CounterfactualStore* store, const PretrainConfig& config,
                           const AugmentationPolicy& augment, std::uint64_t seed,
                           const std::function<void(const std::string&)>& log = {});

std::size_t pretrain_step_budget(const DatasetManifest& manifest, const PretrainConfig& config);

void save_encoder_checkpoint(const EncoderCheckpoint& ckpt, const std::filesystem::path& path);
EncoderCheckpoint load_encoder_checkpoint(const std::filesystem::path& path);

}  // namespace cfcl
