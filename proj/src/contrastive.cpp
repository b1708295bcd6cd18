#include "cfcl/contrastive.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "cfcl/error.hpp"
#include "cfcl/hash.hpp"
#include "cfcl/ntxent.hpp"
#include "cfcl/rng.hpp"
#include "cfcl/serialize.hpp"
#include "cfcl/torch_util.hpp"

namespace cfcl {

namespace nn = torch::nn;

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::simclr: return "simclr";
    case Strategy::simclr_plus: return "simclr-plus";
    case Strategy::cf_simclr: return "cf-simclr";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "simclr") return Strategy::simclr;
  if (s == "simclr-plus" || s == "simclr_plus" || s == "simclr+") return Strategy::simclr_plus;
  if (s == "cf-simclr" || s == "cf_simclr") return Strategy::cf_simclr;
  throw ConfigError("unknown strategy '" + s + "' (expected simclr, simclr-plus or cf-simclr)");
}

void PretrainConfig::validate() const {
  if (!(temperature > 0) || !std::isfinite(temperature)) throw ConfigError("pretrain.temperature must be positive");
  if (batch_size < 2) throw ConfigError("pretrain.batch_size must be at least 2");
  if (epochs < 1) throw ConfigError("pretrain.epochs must be positive");
  if (!(learning_rate > 0)) throw ConfigError("pretrain.learning_rate must be positive");
  if (weight_decay < 0) throw ConfigError("pretrain.weight_decay must be nonnegative");
  if (representation_dim < 8 || representation_dim % 8 != 0) throw ConfigError("pretrain.representation_dim must be a multiple of 8");
  if (projection_dim < 1 || projection_dim >= representation_dim)
    throw ConfigError("pretrain.projection_dim must be in [1, representation_dim)");
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = nlohmann::json{{"strategy", to_string(c.strategy)},
                     {"temperature", c.temperature},
                     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"learning_rate", c.learning_rate},
                     {"weight_decay", c.weight_decay},
                     {"representation_dim", c.representation_dim},
                     {"projection_dim", c.projection_dim}};
}

void from_json(const nlohmann::json& j, PretrainConfig& c) {
  PretrainConfig d;
  c.strategy = strategy_from_string(j.value("strategy", to_string(d.strategy)));
  c.temperature = j.value("temperature", d.temperature);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.representation_dim = j.value("representation_dim", d.representation_dim);
  c.projection_dim = j.value("projection_dim", d.projection_dim);
}

// ---------------------------------------------------------------------------
// Networks

EncoderImpl::EncoderImpl(const EncoderArch& arch) : arch_(arch) {
  const int d = arch.representation_dim;
  const int widths[4] = {d / 8, d / 4, d / 2, d};
  nn::Sequential body;
  int in = 1;
  for (int b = 0; b < 4; ++b) {
    body->push_back(nn::Conv2d(nn::Conv2dOptions(in, widths[b], 3).padding(1).bias(false)));
    body->push_back(nn::BatchNorm2d(widths[b]));
    body->push_back(nn::ReLU());
    if (b < 3) body->push_back(nn::MaxPool2d(2));
    in = widths[b];
  }
  body->push_back(nn::AdaptiveAvgPool2d(1));
  body->push_back(nn::Flatten());
  body_ = register_module("body", body);
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x) { return body_->forward(x); }

ProjectionHeadImpl::ProjectionHeadImpl(const EncoderArch& arch) {
  fc1_ = register_module("fc1", nn::Linear(arch.representation_dim, arch.representation_dim));
  fc2_ = register_module("fc2", nn::Linear(arch.representation_dim, arch.projection_dim));
}

torch::Tensor ProjectionHeadImpl::forward(const torch::Tensor& h) { return fc2_->forward(torch::relu(fc1_->forward(h))); }

namespace {

class NtXentFunction : public torch::autograd::Function<NtXentFunction> {
 public:
  static torch::Tensor forward(torch::autograd::AutogradContext* ctx, const torch::Tensor& z, double tau) {
    if (z.scalar_type() == torch::kFloat64) return run<double>(ctx, z, tau, torch::kFloat64);
    return run<float>(ctx, z, tau, torch::kFloat32);
  }

  template <class T>
  static torch::Tensor run(torch::autograd::AutogradContext* ctx, const torch::Tensor& z, double tau, torch::ScalarType type) {
    auto zc = z.detach().to(type).contiguous();
    const auto dim = static_cast<std::size_t>(zc.size(1));
    const std::span<const T> view(zc.data_ptr<T>(), static_cast<std::size_t>(zc.numel()));
    const auto res = nt_xent<T>(view, dim, static_cast<T>(tau), true);
    auto grad = torch::from_blob(const_cast<T*>(res.grad.data()), zc.sizes(), type).clone();
    ctx->save_for_backward({grad / static_cast<double>(zc.size(0))});
    return torch::tensor(res.mean, type);
  }

  static torch::autograd::variable_list backward(torch::autograd::AutogradContext* ctx, torch::autograd::variable_list grad_out) {
    auto grad = ctx->get_saved_variables()[0];
    return {grad * grad_out[0], torch::Tensor()};
  }
};

}  // namespace

torch::Tensor nt_xent_loss(const torch::Tensor& projections, double tau) {
  if (projections.dim() != 2) throw DomainError("nt_xent_loss: expected a (2N, d) matrix");
  return NtXentFunction::apply(projections, tau);
}

// ---------------------------------------------------------------------------
// Pair construction

namespace {

PairBatch augment_pairs(std::span<const PairSource> batch, Strategy strategy, const AugmentationPolicy& policy, std::uint64_t seed,
                        std::uint64_t first_sample) {
  PairBatch out;
  out.strategy = strategy;
  out.view_a.reserve(batch.size());
  out.view_b.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& src = batch[i];
    Engine ea = view_engine(seed, first_sample + i, 0);
    Engine eb = view_engine(seed, first_sample + i, 1);
    out.view_a.push_back(sample_view(*src.image, policy, ea));
    out.view_b.push_back(sample_view(*src.image, policy, eb));
    out.provenance.push_back({src.source_index, src.scanner, src.scanner, src.counterfactual, src.counterfactual});
  }
  return out;
}

}  // namespace

PairBatch make_pairs_simclr(std::span<const PairSource> real_batch, const AugmentationPolicy& policy, std::uint64_t seed,
                            std::uint64_t first_sample) {
  for (const auto& s : real_batch)
    if (s.counterfactual) throw DomainError("make_pairs_simclr: batch must contain real images only");
  return augment_pairs(real_batch, Strategy::simclr, policy, seed, first_sample);
}

PairBatch make_pairs_simclr_plus(std::span<const PairSource> mixed_batch, const AugmentationPolicy& policy,
                                 std::uint64_t seed, std::uint64_t first_sample) {
  return augment_pairs(mixed_batch, Strategy::simclr_plus, policy, seed, first_sample);
}

int sample_cf_target(int source_scanner, int num_scanners, std::uint64_t seed, std::uint64_t sample) {
  if (num_scanners < 2) throw DomainError("cf pairs need at least 2 scanners");
  Engine eng = make_engine(seed, "cf-target", {sample});
  const int draw = static_cast<int>(uniform_index(eng, static_cast<std::uint64_t>(num_scanners - 1)));
  return draw >= source_scanner ? draw + 1 : draw;
}

PairBatch make_pairs_cf(std::span<const PairSource> real_batch, const CounterfactualStore& store,
                        const AugmentationPolicy& policy, std::uint64_t seed, std::uint64_t first_sample) {
  PairBatch out;
  out.strategy = Strategy::cf_simclr;
  for (std::size_t i = 0; i < real_batch.size(); ++i) {
    const auto& src = real_batch[i];
    if (src.counterfactual) throw DomainError("make_pairs_cf: anchors must be real images");
    const int target = sample_cf_target(src.scanner, store.num_scanners(), seed, first_sample + i);
    const Image& cf = store.get(src.source_index, target);
    Engine ea = view_engine(seed, first_sample + i, 0);
    Engine eb = view_engine(seed, first_sample + i, 1);
    out.view_a.push_back(sample_view(*src.image, policy, ea));
    out.view_b.push_back(sample_view(cf, policy, eb));
    out.provenance.push_back({src.source_index, src.scanner, target, false, true});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pretraining

namespace {

struct Bundle : nn::Module {
  Bundle(std::shared_ptr<EncoderImpl> e, std::shared_ptr<ProjectionHeadImpl> h) {
    register_module("encoder", std::move(e));
    register_module("head", std::move(h));
  }
};

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed, std::uint64_t pass) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Engine eng = make_engine(seed, "pretrain-shuffle", {pass});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(eng, i)]);
  return order;
}

}  // namespace

std::string EncoderCheckpoint::encoder_hash() const {
  Fnv1a h;
  h.update(hash_module(*encoder));
  h.update(hash_module(*head));
  return h.hex();
}

EncoderCheckpoint make_random_encoder(const EncoderArch& arch, std::uint64_t seed) {
  EncoderCheckpoint ck;
  ck.arch = arch;
  ck.seed = seed;
  ck.config.representation_dim = arch.representation_dim;
  ck.config.projection_dim = arch.projection_dim;
  torch::manual_seed(derive_seed(seed, "encoder-init"));
  ck.encoder = std::make_shared<EncoderImpl>(arch);
  ck.head = std::make_shared<ProjectionHeadImpl>(arch);
  return ck;
}

std::size_t pretrain_step_budget(const DatasetManifest& manifest, const PretrainConfig& config) {
  const std::size_t n = manifest.indices(Split::train).size();
  const auto b = static_cast<std::size_t>(config.batch_size);
  return static_cast<std::size_t>(config.epochs) * ((n + b - 1) / b);
}

EncoderCheckpoint pretrain(const DatasetManifest& manifest, const CounterfactualStore* store, const PretrainConfig& config,
                           const AugmentationPolicy& augment, std::uint64_t seed,
                           const std::function<void(const std::string&)>& log) {
  config.validate();
  augment.validate();
  if (config.strategy != Strategy::simclr && store == nullptr)
    throw MissingArtifactError("build-cf-store", "strategy " + to_string(config.strategy) +
                                                     " needs a counterfactual store; run the build-cf-store stage first");
  if (store && config.strategy != Strategy::simclr && store->num_scanners() != manifest.num_scanners())
    throw DataError("counterfactual store and manifest disagree on the number of scanners");

  const auto train = manifest.indices(Split::train);
  if (train.size() < 2) throw DataError("pretrain: need at least 2 train records");
  std::vector<PairSource> pool;
  for (std::size_t i : train) pool.push_back({&manifest.records[i].image, i, manifest.records[i].scanner_id, false});
  if (config.strategy == Strategy::simclr_plus)
    for (const auto& e : store->entries()) pool.push_back({&store->get(e.source_index, e.target_scanner), e.source_index, e.target_scanner, true});

  EncoderCheckpoint ck = make_random_encoder({manifest.image_shape, config.representation_dim, config.projection_dim}, seed);
  ck.config = config;
  ck.augment = augment;
  ck.config_hash = manifest.config_hash;
  if (store && config.strategy != Strategy::simclr) ck.store_hash = store->content_hash();
  ck.steps = pretrain_step_budget(manifest, config);

  // Streams depend on the seed only; the strategy changes pool and pairing.
  std::vector<torch::Tensor> params = ck.encoder->parameters();
  for (auto& p : ck.head->parameters()) params.push_back(p);
  torch::optim::Adam opt(params, torch::optim::AdamOptions(config.learning_rate).weight_decay(config.weight_decay));
  ck.encoder->train();
  ck.head->train();

  const auto n = static_cast<std::size_t>(config.batch_size);
  std::uint64_t pass = 0;
  std::vector<std::size_t> order = shuffled(pool.size(), seed, pass);
  std::size_t cursor = 0;
  std::vector<PairSource> batch(n);
  if (log) {
    std::ostringstream msg;
    msg << "pretrain strategy=" << to_string(config.strategy) << " steps=" << ck.steps << " batch=" << config.batch_size
        << " tau=" << config.temperature << " lr=" << config.learning_rate << " wd=" << config.weight_decay
        << " pool=" << pool.size();
    log(msg.str());
  }
  for (std::size_t step = 0; step < ck.steps; ++step) {
    for (std::size_t i = 0; i < n; ++i) {
      if (cursor == order.size()) {
        order = shuffled(pool.size(), seed, ++pass);
        cursor = 0;
      }
      batch[i] = pool[order[cursor++]];
    }
    const std::uint64_t first = static_cast<std::uint64_t>(step) * n;
    PairBatch pairs = config.strategy == Strategy::cf_simclr ? make_pairs_cf(batch, *store, augment, seed, first)
                      : config.strategy == Strategy::simclr_plus ? make_pairs_simclr_plus(batch, augment, seed, first)
                                                                 : make_pairs_simclr(batch, augment, seed, first);
    std::vector<const Image*> views;
    views.reserve(2 * n);
    for (const auto& v : pairs.view_a) views.push_back(&v);
    for (const auto& v : pairs.view_b) views.push_back(&v);
    auto x = images_to_tensor(views);
    auto z = ck.head->forward(ck.encoder->forward(x));
    if (!torch::isfinite(z).all().item<bool>())
      throw NumericError("pretrain: non-finite projections at step " + std::to_string(step));
    auto loss = nt_xent_loss(z, config.temperature);
    const double mean = loss.item<double>();
    if (!std::isfinite(mean)) throw NumericError("pretrain: non-finite loss at step " + std::to_string(step));
    opt.zero_grad();
    loss.backward();
    opt.step();
    ck.loss_trace.push_back(mean);
    ck.loss_trace_total.push_back(mean * static_cast<double>(2 * n));
    if (log && ((step + 1) % 50 == 0 || step + 1 == ck.steps))
      log("pretrain " + to_string(config.strategy) + " step " + std::to_string(step + 1) + "/" + std::to_string(ck.steps) +
          " loss " + std::to_string(mean));
  }
  ck.encoder->eval();
  ck.head->eval();
  return ck;
}

void save_encoder_checkpoint(const EncoderCheckpoint& ck, const std::filesystem::path& path) {
  Bundle bundle(ck.encoder, ck.head);
  nlohmann::json meta{{"format_version", 1},
                      {"kind", "encoder"},
                      {"arch",
                       {{"image_shape", ck.arch.image_shape},
                        {"representation_dim", ck.arch.representation_dim},
                        {"projection_dim", ck.arch.projection_dim}}},
                      {"config", ck.config},
                      {"augment", ck.augment},
                      {"seed", ck.seed},
                      {"steps", ck.steps},
                      {"loss_trace", ck.loss_trace},
                      {"loss_trace_total", ck.loss_trace_total},
                      {"config_hash", ck.config_hash},
                      {"store_hash", ck.store_hash},
                      {"parameter_hash", ck.encoder_hash()}};
  save_checkpoint(path, bundle, meta);
}

EncoderCheckpoint load_encoder_checkpoint(const std::filesystem::path& path) {
  const auto meta = read_checkpoint_meta(path);
  if (meta.value("kind", "") != "encoder" || meta.at("format_version").get<int>() != 1)
    throw IoError("not a version-1 encoder checkpoint: " + path.string());
  const auto& a = meta.at("arch");
  EncoderArch arch{a.at("image_shape").get<ImageShape>(), a.at("representation_dim").get<int>(), a.at("projection_dim").get<int>()};
  EncoderCheckpoint ck = make_random_encoder(arch, meta.at("seed").get<std::uint64_t>());
  Bundle bundle(ck.encoder, ck.head);
  load_checkpoint_state(path, bundle);
  ck.config = meta.at("config").get<PretrainConfig>();
  ck.augment = meta.at("augment").get<AugmentationPolicy>();
  ck.steps = meta.at("steps").get<std::size_t>();
  ck.loss_trace = meta.at("loss_trace").get<std::vector<double>>();
  ck.loss_trace_total = meta.at("loss_trace_total").get<std::vector<double>>();
  ck.config_hash = meta.at("config_hash").get<std::string>();
  ck.store_hash = meta.at("store_hash").get<std::string>();
  ck.encoder->eval();
  ck.head->eval();
  if (ck.encoder_hash() != meta.at("parameter_hash").get<std::string>())
    throw IoError("encoder checkpoint parameters do not match their recorded hash: " + path.string());
  return ck;
}

}  // namespace cfcl
