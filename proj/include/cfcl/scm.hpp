#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "cfcl/image.hpp"
#include "cfcl/synthdata.hpp"

namespace cfcl {

struct ScmConfig {
  int levels = 2;            // latent hierarchy depth, 2 or 3
  int base_channels = 16;
  int latent_channels = 4;   // channels per latent level
  int embedding_dim = 16;    // parent embedding width
  int epochs = 12;
  int batch_size = 128;
  double learning_rate = 2e-3;
  double likelihood_sigma = 0.05;  // fixed std of the Gaussian pixel likelihood
  bool stochastic_abduction = false;

  // Domain classifier used for the effectiveness metric.
  int classifier_epochs = 6;
  int classifier_batch_size = 128;
  double classifier_learning_rate = 2e-3;
  double classifier_min_accuracy = 0.95;  // below this the metric is refused

  void validate() const;
};

void to_json(nlohmann::json& j, const ScmConfig& c);
void from_json(const nlohmann::json& j, ScmConfig& c);

// The causal parents of an image. Only the scanner is modelled; no
// downstream label may appear here.
struct ParentVector {
  int scanner_id = 0;
};

enum class AbductionMode { deterministic, stochastic };

struct HvaeArch {
  ImageShape image_shape{32, 32};
  int num_scanners = 2;
  int levels = 2;
  int base_channels = 16;
  int latent_channels = 4;
  int embedding_dim = 16;
};

// Conditional hierarchical VAE. The bottom-up encoder and every top-down
// decoder level receive a learned embedding of the scanner parent; group
// normalization inside the network does not depend on the parent.
class HvaeImpl : public torch::nn::Module {
 public:
  explicit HvaeImpl(const HvaeArch& arch);

  struct Inference {
    std::vector<torch::Tensor> z, mu_q, logvar_q, mu_p, logvar_p;
    torch::Tensor reconstruction;
  };

  // Full inference pass under the given parents. noise[l], when supplied,
  // reparameterizes level l; otherwise the posterior mean is used.
  Inference infer(const torch::Tensor& x, const torch::Tensor& scanners, const std::vector<torch::Tensor>* noise);

  // Top-down decode of given latents under given parents, clamped to [0, 1].
  torch::Tensor decode(const std::vector<torch::Tensor>& z, const torch::Tensor& scanners);

  const HvaeArch& arch() const noexcept { return arch_; }
  // (k, h_l, w_l) of level l, top level first.
  std::vector<std::int64_t> latent_shape(int level) const;

 private:
  std::vector<torch::Tensor> encode(const torch::Tensor& x, const torch::Tensor& emb);
  torch::Tensor bias(const std::string& slot, const torch::Tensor& emb);
  torch::Tensor res_block(int level, const torch::Tensor& x, const torch::Tensor& emb);
  torch::Tensor level_entry(int level, const torch::Tensor& state, const torch::Tensor& emb);
  torch::Tensor level_merge(int level, const torch::Tensor& entry, const torch::Tensor& z, const torch::Tensor& emb);
  torch::Tensor output_head(const torch::Tensor& state, const torch::Tensor& emb);
  int level_channels(int level) const;

  HvaeArch arch_;
  torch::nn::Embedding embed_{nullptr};
  torch::nn::Conv2d enc_in_{nullptr};
  std::vector<torch::nn::Conv2d> enc_down_;
  std::vector<torch::nn::GroupNorm> enc_norm_;
  std::map<std::string, torch::nn::Linear> pa_proj_;
  std::vector<torch::nn::Conv2d> q_conv_, p_conv_, z_proj_, up_conv_;
  std::vector<torch::nn::Conv2d> rb_conv1_, rb_conv2_;
  std::vector<torch::nn::GroupNorm> rb_norm1_, rb_norm2_;
  std::vector<torch::nn::Conv2d> out_up_;
  torch::nn::Conv2d out_conv_{nullptr};
};

// Exogenous state recovered by abduction, sufficient to re-decode.
struct LatentState {
  std::vector<torch::Tensor> latents;  // per level, top first: (B, k, h_l, w_l)
  std::vector<torch::Tensor> noise;    // recorded standard-normal draws (stochastic mode)
  AbductionMode mode = AbductionMode::deterministic;
};

struct GenerativeModel {
  HvaeArch arch;
  std::shared_ptr<HvaeImpl> net;
  ScmConfig config;
  std::uint64_t seed = 0;
  int epochs_run = 0;
  std::vector<double> elbo_trace;           // per-epoch mean training ELBO (nats/image)
  std::vector<double> elbo_trace_smoothed;  // trailing 5-epoch mean
  std::string config_hash;

  std::string checkpoint_hash() const;
};

GenerativeModel make_untrained_model(const DatasetManifest& manifest, const ScmConfig& config, std::uint64_t seed);

// Maximizes the ELBO with scanner-balanced batches; no counterfactual
// finetuning stage. Throws on single-scanner data and on non-finite loss.
GenerativeModel train_scm(const DatasetManifest& manifest, const ScmConfig& config, std::uint64_t seed,
                          const std::function<void(const std::string&)>& log = {});

// Mean per-image ELBO (nats) on the given records, posterior means.
double evaluate_elbo(GenerativeModel& model, const DatasetManifest& manifest, std::span<const std::size_t> indices);

LatentState abduct(GenerativeModel& model, const torch::Tensor& images, std::span<const ParentVector> parents,
                   AbductionMode mode = AbductionMode::deterministic, std::uint64_t noise_seed = 0);
LatentState abduct_replay(GenerativeModel& model, const torch::Tensor& images, std::span<const ParentVector> parents,
                          const std::vector<torch::Tensor>& noise);
torch::Tensor predict(GenerativeModel& model, const LatentState& state, std::span<const ParentVector> parents);
torch::Tensor reconstruct(GenerativeModel& model, const torch::Tensor& images, std::span<const ParentVector> parents);
torch::Tensor counterfactual(GenerativeModel& model, const torch::Tensor& images, std::span<const ParentVector> parents,
                             std::span<const int> target_scanners);

void save_generative_model(const GenerativeModel& model, const std::filesystem::path& path);
GenerativeModel load_generative_model(const std::filesystem::path& path);

// --- effectiveness -------------------------------------------------------

class DomainClassifierImpl : public torch::nn::Module {
 public:
  DomainClassifierImpl(ImageShape shape, int num_scanners);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential features_{nullptr};
  torch::nn::Linear head_{nullptr};
};

struct DomainClassifier {
  std::shared_ptr<DomainClassifierImpl> net;
  ImageShape image_shape;
  int num_scanners = 0;
  double val_accuracy = 0.0;  // on real validation images

  std::vector<int> classify(const torch::Tensor& images);
};

// Trained on real train-split images only, scanner-balanced batches, early
// stopping on real validation accuracy.
DomainClassifier train_domain_classifier(const DatasetManifest& manifest, const ScmConfig& config, std::uint64_t seed,
                                         const std::function<void(const std::string&)>& log = {});

// Fraction of images the classifier assigns to their target scanner.
double fooling_rate(DomainClassifier& classifier, const torch::Tensor& images, std::span<const int> targets);

struct EffectivenessReport {
  double effectiveness = 0.0;
  double classifier_val_accuracy = 0.0;
  std::size_t num_counterfactuals = 0;
  std::vector<double> per_target;  // fraction per target scanner
};

// Counterfactuals of held-out records with targets drawn uniformly over all
// scanners. Refuses when the classifier's real accuracy is below the
// configured minimum.
EffectivenessReport effectiveness(GenerativeModel& model, const DatasetManifest& manifest,
                                  std::span<const std::size_t> held_out, DomainClassifier& classifier, std::uint64_t seed);

// --- counterfactual store -------------------------------------------------

// Read-only once built: (source_index, target_scanner) -> image.
class CounterfactualStore {
 public:
  static CounterfactualStore open(const std::filesystem::path& dir);

  const Image& get(std::size_t source_index, int target_scanner) const;
  bool contains(std::size_t source_index, int target_scanner) const;
  std::size_t size() const noexcept { return images_.size(); }
  const std::string& model_hash() const noexcept { return model_hash_; }
  const std::string& config_hash() const noexcept { return config_hash_; }
  std::uint64_t generation_seed() const noexcept { return generation_seed_; }
  int num_scanners() const noexcept { return num_scanners_; }
  // FNV-1a over the index table and all image bytes, in key order.
  std::string content_hash() const;

  struct Entry {
    std::size_t source_index;
    int target_scanner;
  };
  const std::vector<Entry>& entries() const noexcept { return entries_; }

 private:
  CounterfactualStore() = default;
  static std::uint64_t key(std::size_t source, int target) { return (static_cast<std::uint64_t>(source) << 8) | static_cast<std::uint64_t>(target); }

  std::vector<Image> images_;
  std::vector<Entry> entries_;
  std::unordered_map<std::uint64_t, std::size_t> lookup_;
  std::string model_hash_, config_hash_;
  std::uint64_t generation_seed_ = 0;
  int num_scanners_ = 0;
};

// One deterministic counterfactual per (train record, target != source).
// Writes one shard per target scanner plus index.csv and meta.json; meta is
// marked incomplete until every shard is on disk.
CounterfactualStore build_store(GenerativeModel& model, const DatasetManifest& manifest, const std::filesystem::path& dir,
                                std::uint64_t seed, const std::string& config_hash);

}  // namespace cfcl
