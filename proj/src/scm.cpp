#include "cfcl/scm.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <map>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cfcl/binary_io.hpp"
#include "cfcl/error.hpp"
#include "cfcl/hash.hpp"
#include "cfcl/rng.hpp"
#include "cfcl/torch_util.hpp"

namespace cfcl {

namespace nn = torch::nn;

void ScmConfig::validate() const {
  if (levels < 2 || levels > 3) throw ConfigError("scm.levels must be 2 or 3");
  if (base_channels < 4 || base_channels % 4 != 0) throw ConfigError("scm.base_channels must be a positive multiple of 4");
  if (latent_channels < 1) throw ConfigError("scm.latent_channels must be positive");
  if (embedding_dim < 1) throw ConfigError("scm.embedding_dim must be positive");
  if (epochs < 1) throw ConfigError("scm.epochs must be positive");
  if (batch_size < 2) throw ConfigError("scm.batch_size must be at least 2");
  if (!(learning_rate > 0)) throw ConfigError("scm.learning_rate must be positive");
  if (!(likelihood_sigma > 0)) throw ConfigError("scm.likelihood_sigma must be positive");
  if (classifier_epochs < 1 || classifier_batch_size < 2 || !(classifier_learning_rate > 0))
    throw ConfigError("scm classifier settings invalid");
  if (!(classifier_min_accuracy > 0 && classifier_min_accuracy <= 1)) throw ConfigError("scm.classifier_min_accuracy outside (0, 1]");
}

void to_json(nlohmann::json& j, const ScmConfig& c) {
  j = nlohmann::json{{"levels", c.levels},
                     {"base_channels", c.base_channels},
                     {"latent_channels", c.latent_channels},
                     {"embedding_dim", c.embedding_dim},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"likelihood_sigma", c.likelihood_sigma},
                     {"stochastic_abduction", c.stochastic_abduction},
                     {"classifier_epochs", c.classifier_epochs},
                     {"classifier_batch_size", c.classifier_batch_size},
                     {"classifier_learning_rate", c.classifier_learning_rate},
                     {"classifier_min_accuracy", c.classifier_min_accuracy}};
}

void from_json(const nlohmann::json& j, ScmConfig& c) {
  ScmConfig d;
  c.levels = j.value("levels", d.levels);
  c.base_channels = j.value("base_channels", d.base_channels);
  c.latent_channels = j.value("latent_channels", d.latent_channels);
  c.embedding_dim = j.value("embedding_dim", d.embedding_dim);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.likelihood_sigma = j.value("likelihood_sigma", d.likelihood_sigma);
  c.stochastic_abduction = j.value("stochastic_abduction", d.stochastic_abduction);
  c.classifier_epochs = j.value("classifier_epochs", d.classifier_epochs);
  c.classifier_batch_size = j.value("classifier_batch_size", d.classifier_batch_size);
  c.classifier_learning_rate = j.value("classifier_learning_rate", d.classifier_learning_rate);
  c.classifier_min_accuracy = j.value("classifier_min_accuracy", d.classifier_min_accuracy);
}

// ---------------------------------------------------------------------------
// Network

HvaeImpl::HvaeImpl(const HvaeArch& arch) : arch_(arch) {
  const int c = arch.base_channels;
  const int k = arch.latent_channels;
  if (arch.image_shape.height % 8 != 0 || arch.image_shape.width % 8 != 0)
    throw ConfigError("hvae: image height and width must be multiples of 8");
  auto conv = [](int in, int out, int kernel, int stride = 1) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel == 4 ? 1 : kernel / 2));
  };
  auto add_proj = [&](const std::string& slot, int channels) {
    pa_proj_.emplace(slot, register_module("pa_" + slot, nn::Linear(arch.embedding_dim, channels)));
  };

  embed_ = register_module("embed", nn::Embedding(arch.num_scanners, arch.embedding_dim));
  enc_in_ = register_module("enc_in", conv(1, c, 3));
  add_proj("enc_in", c);
  const int down_ch[3][2] = {{c, 2 * c}, {2 * c, 2 * c}, {2 * c, 4 * c}};
  for (int i = 0; i < 3; ++i) {
    enc_down_.push_back(register_module("enc_down" + std::to_string(i), conv(down_ch[i][0], down_ch[i][1], 4, 2)));
    enc_norm_.push_back(register_module("enc_norm" + std::to_string(i), nn::GroupNorm(4, down_ch[i][1])));
  }
  for (int l = 0; l < arch.levels; ++l) {
    const int ch = level_channels(l);
    const std::string s = std::to_string(l);
    if (l == 0) {
      q_conv_.push_back(register_module("q_conv0", conv(ch, 2 * k, 3)));
      p_conv_.push_back(nullptr);
    } else {
      up_conv_.push_back(register_module("up_conv" + s, conv(level_channels(l - 1), ch, 3)));
      add_proj("up" + s, ch);
      q_conv_.push_back(register_module("q_conv" + s, conv(2 * ch, 2 * k, 3)));
      p_conv_.push_back(register_module("p_conv" + s, conv(ch, 2 * k, 3)));
    }
    z_proj_.push_back(register_module("z_proj" + s, conv(k, ch, 3)));
    add_proj("z" + s, ch);
    rb_norm1_.push_back(register_module("rb_norm1_" + s, nn::GroupNorm(4, ch)));
    rb_conv1_.push_back(register_module("rb_conv1_" + s, conv(ch, ch, 3)));
    add_proj("rb" + s, ch);
    rb_norm2_.push_back(register_module("rb_norm2_" + s, nn::GroupNorm(4, ch)));
    rb_conv2_.push_back(register_module("rb_conv2_" + s, conv(ch, ch, 3)));
  }
  const int ups = 4 - arch.levels;
  int in_ch = level_channels(arch.levels - 1);
  for (int i = 0; i < ups; ++i) {
    out_up_.push_back(register_module("out_up" + std::to_string(i), conv(in_ch, c, 3)));
    add_proj("out" + std::to_string(i), c);
    in_ch = c;
  }
  out_conv_ = register_module("out_conv", conv(c, 1, 3));
}

int HvaeImpl::level_channels(int level) const { return level == 0 ? 4 * arch_.base_channels : 2 * arch_.base_channels; }

std::vector<std::int64_t> HvaeImpl::latent_shape(int level) const {
  const int div = 8 >> level;
  return {arch_.latent_channels, arch_.image_shape.height / div, arch_.image_shape.width / div};
}

torch::Tensor HvaeImpl::bias(const std::string& slot, const torch::Tensor& emb) {
  auto b = pa_proj_.at(slot)->forward(emb);
  return b.view({b.size(0), b.size(1), 1, 1});
}

std::vector<torch::Tensor> HvaeImpl::encode(const torch::Tensor& x, const torch::Tensor& emb) {
  auto h = torch::silu(enc_in_->forward(x) + bias("enc_in", emb));
  std::vector<torch::Tensor> feats;  // resolutions /2, /4, /8
  for (std::size_t i = 0; i < enc_down_.size(); ++i) {
    h = torch::silu(enc_norm_[i]->forward(enc_down_[i]->forward(h)));
    feats.push_back(h);
  }
  // level l reads resolution /(8 >> l)
  std::vector<torch::Tensor> per_level;
  for (int l = 0; l < arch_.levels; ++l) per_level.push_back(feats[static_cast<std::size_t>(2 - l)]);
  return per_level;
}

torch::Tensor HvaeImpl::res_block(int level, const torch::Tensor& x, const torch::Tensor& emb) {
  const auto l = static_cast<std::size_t>(level);
  auto h = rb_conv1_[l]->forward(torch::silu(rb_norm1_[l]->forward(x))) + bias("rb" + std::to_string(level), emb);
  h = rb_conv2_[l]->forward(torch::silu(rb_norm2_[l]->forward(h)));
  return x + h;
}

torch::Tensor HvaeImpl::level_entry(int level, const torch::Tensor& state, const torch::Tensor& emb) {
  auto up = torch::upsample_nearest2d(state, std::vector<std::int64_t>{state.size(2) * 2, state.size(3) * 2});
  return torch::silu(up_conv_[static_cast<std::size_t>(level - 1)]->forward(up) + bias("up" + std::to_string(level), emb));
}

torch::Tensor HvaeImpl::level_merge(int level, const torch::Tensor& entry, const torch::Tensor& z, const torch::Tensor& emb) {
  auto s = z_proj_[static_cast<std::size_t>(level)]->forward(z) + bias("z" + std::to_string(level), emb);
  s = entry.defined() ? entry + s : torch::silu(s);
  return res_block(level, s, emb);
}

torch::Tensor HvaeImpl::output_head(const torch::Tensor& state, const torch::Tensor& emb) {
  auto h = state;
  for (std::size_t i = 0; i < out_up_.size(); ++i) {
    h = torch::upsample_nearest2d(h, std::vector<std::int64_t>{h.size(2) * 2, h.size(3) * 2});
    h = torch::silu(out_up_[i]->forward(h) + bias("out" + std::to_string(i), emb));
  }
  // Linear mean of the Gaussian likelihood. A sigmoid here saturates on
  // scanners whose images are mostly clipped to black and never recovers.
  return out_conv_->forward(h);
}

namespace {

std::pair<torch::Tensor, torch::Tensor> split_gaussian(const torch::Tensor& raw) {
  auto parts = raw.chunk(2, 1);
  return {parts[0], 5.0 * torch::tanh(parts[1] / 5.0)};
}

}  // namespace

HvaeImpl::Inference HvaeImpl::infer(const torch::Tensor& x, const torch::Tensor& scanners, const std::vector<torch::Tensor>* noise) {
  auto emb = embed_->forward(scanners);
  auto feats = encode(x, emb);
  Inference out;
  torch::Tensor state;
  for (int l = 0; l < arch_.levels; ++l) {
    const auto li = static_cast<std::size_t>(l);
    torch::Tensor entry;
    torch::Tensor mu_q, lv_q;
    if (l == 0) {
      std::tie(mu_q, lv_q) = split_gaussian(q_conv_[0]->forward(feats[0]));
      out.mu_p.push_back(torch::zeros_like(mu_q));
      out.logvar_p.push_back(torch::zeros_like(lv_q));
    } else {
      entry = level_entry(l, state, emb);
      auto [mu_p, lv_p] = split_gaussian(p_conv_[li]->forward(entry));
      std::tie(mu_q, lv_q) = split_gaussian(q_conv_[li]->forward(torch::cat({entry, feats[li]}, 1)));
      out.mu_p.push_back(mu_p);
      out.logvar_p.push_back(lv_p);
    }
    torch::Tensor z = noise ? mu_q + torch::exp(0.5 * lv_q) * (*noise)[li] : mu_q;
    out.mu_q.push_back(mu_q);
    out.logvar_q.push_back(lv_q);
    out.z.push_back(z);
    state = level_merge(l, entry, z, emb);
  }
  out.reconstruction = output_head(state, emb);
  return out;
}

torch::Tensor HvaeImpl::decode(const std::vector<torch::Tensor>& z, const torch::Tensor& scanners) {
  auto emb = embed_->forward(scanners);
  torch::Tensor state;
  for (int l = 0; l < arch_.levels; ++l) {
    torch::Tensor entry;
    if (l > 0) entry = level_entry(l, state, emb);
    state = level_merge(l, entry, z[static_cast<std::size_t>(l)], emb);
  }
  return output_head(state, emb).clamp(0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct ElboTerms {
  torch::Tensor recon, kl;  // per image
};

ElboTerms elbo_terms(const HvaeImpl::Inference& inf, const torch::Tensor& x, double sigma) {
  const auto b = x.size(0);
  auto recon = (x - inf.reconstruction).pow(2).view({b, -1}).sum(1) / (2.0 * sigma * sigma);
  auto kl = torch::zeros({b});
  for (std::size_t l = 0; l < inf.z.size(); ++l) {
    const auto& mq = inf.mu_q[l];
    const auto& lq = inf.logvar_q[l];
    const auto& mp = inf.mu_p[l];
    const auto& lp = inf.logvar_p[l];
    auto term = 0.5 * (lp - lq + (torch::exp(lq) + (mq - mp).pow(2)) / torch::exp(lp) - 1.0);
    kl = kl + term.view({b, -1}).sum(1);
  }
  return {recon, kl};
}

torch::Tensor scanner_tensor(std::span<const ParentVector> parents) {
  std::vector<int> ids;
  ids.reserve(parents.size());
  for (const auto& p : parents) ids.push_back(p.scanner_id);
  return labels_to_tensor(ids);
}

void check_parents(const GenerativeModel& model, std::span<const ParentVector> parents, std::int64_t batch) {
  if (static_cast<std::int64_t>(parents.size()) != batch) throw DomainError("parents/batch size mismatch");
  for (const auto& p : parents)
    if (p.scanner_id < 0 || p.scanner_id >= model.arch.num_scanners)
      throw DomainError("unknown scanner " + std::to_string(p.scanner_id));
}

void check_images(const torch::Tensor& images, const HvaeArch& arch) {
  if (images.dim() != 4 || images.size(1) != 1 || images.size(2) != arch.image_shape.height ||
      images.size(3) != arch.image_shape.width)
    throw DomainError("image batch shape does not match the model");
  if (images.min().item<float>() < 0.0f || images.max().item<float>() > 1.0f) throw DomainError("image values outside [0, 1]");
}

std::vector<torch::Tensor> sample_noise(const HvaeImpl& net, std::int64_t batch, at::Generator& gen) {
  std::vector<torch::Tensor> noise;
  for (int l = 0; l < net.arch().levels; ++l) {
    auto shape = net.latent_shape(l);
    shape.insert(shape.begin(), batch);
    noise.push_back(torch::randn(shape, gen, torch::kFloat32));
  }
  return noise;
}

torch::Tensor batch_images(const DatasetManifest& m, std::span<const std::size_t> idx) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(idx.size());
  for (std::size_t i : idx) ptrs.push_back(&m.records[i].image);
  return images_to_tensor(ptrs);
}

torch::Tensor batch_scanners(const DatasetManifest& m, std::span<const std::size_t> idx) {
  std::vector<int> ids;
  ids.reserve(idx.size());
  for (std::size_t i : idx) ids.push_back(m.records[i].scanner_id);
  return labels_to_tensor(ids);
}

std::vector<double> trailing_mean(const std::vector<double>& v, std::size_t window) {
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t lo = i + 1 >= window ? i + 1 - window : 0;
    double s = 0;
    for (std::size_t j = lo; j <= i; ++j) s += v[j];
    out.push_back(s / static_cast<double>(i + 1 - lo));
  }
  return out;
}

}  // namespace

GenerativeModel make_untrained_model(const DatasetManifest& manifest, const ScmConfig& config, std::uint64_t seed) {
  config.validate();
  GenerativeModel model;
  model.arch = {manifest.image_shape, manifest.num_scanners(), config.levels, config.base_channels, config.latent_channels,
                config.embedding_dim};
  model.config = config;
  model.seed = seed;
  model.config_hash = manifest.config_hash;
  torch::manual_seed(derive_seed(seed, "scm-init"));
  model.net = std::make_shared<HvaeImpl>(model.arch);
  return model;
}

GenerativeModel train_scm(const DatasetManifest& manifest, const ScmConfig& config, std::uint64_t seed,
                          const std::function<void(const std::string&)>& log) {
  if (manifest.num_scanners() < 2) throw DomainError("train_scm: counterfactuals need at least 2 scanners");
  const auto train = manifest.indices(Split::train);
  if (train.empty()) throw DataError("train_scm: no training records");
  GenerativeModel model = make_untrained_model(manifest, config, seed);
  auto& net = *model.net;
  net.train();

  const auto weights = make_weighted_sampler(manifest, train);
  const WeightedSampler sampler(weights);
  torch::optim::Adam opt(net.parameters(), torch::optim::AdamOptions(config.learning_rate));
  auto gen = at::make_generator<at::CPUGeneratorImpl>(derive_seed(seed, "scm-noise"));

  const std::size_t steps_per_epoch = (train.size() + config.batch_size - 1) / static_cast<std::size_t>(config.batch_size);
  const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(config.epochs);
  std::size_t step = 0;
  std::vector<std::size_t> batch(static_cast<std::size_t>(config.batch_size));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Engine eng = make_engine(seed, "scm-batches", {static_cast<std::uint64_t>(epoch)});
    double epoch_elbo = 0;
    std::size_t epoch_images = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      for (auto& b : batch) b = train[sampler.draw(eng)];
      auto x = batch_images(manifest, batch);
      auto pa = batch_scanners(manifest, batch);
      auto noise = sample_noise(net, x.size(0), gen);
      auto inf = net.infer(x, pa, &noise);
      auto terms = elbo_terms(inf, x, config.likelihood_sigma);
      auto loss = (terms.recon + terms.kl).mean();
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "train_scm: non-finite loss at epoch " << epoch << " step " << s << " (recon "
            << terms.recon.mean().item<double>() << ", kl " << terms.kl.mean().item<double>() << ")";
        throw NumericError(msg.str());
      }
      // linear decay to 10% of the base rate
      const double lr = config.learning_rate * (1.0 - 0.9 * static_cast<double>(step) / static_cast<double>(total_steps));
      for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
      opt.zero_grad();
      loss.backward();
      nn::utils::clip_grad_norm_(net.parameters(), 100.0);
      opt.step();
      epoch_elbo += -value * static_cast<double>(x.size(0));
      epoch_images += static_cast<std::size_t>(x.size(0));
    }
    model.elbo_trace.push_back(epoch_elbo / static_cast<double>(epoch_images));
    ++model.epochs_run;
    if (log) log("scm epoch " + std::to_string(epoch + 1) + "/" + std::to_string(config.epochs) +
                 " elbo " + std::to_string(model.elbo_trace.back()));
  }
  model.elbo_trace_smoothed = trailing_mean(model.elbo_trace, 5);
  net.eval();
  return model;
}

double evaluate_elbo(GenerativeModel& model, const DatasetManifest& manifest, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DataError("evaluate_elbo: no records");
  torch::NoGradGuard guard;
  model.net->eval();
  double total = 0;
  for (std::size_t start = 0; start < indices.size(); start += 256) {
    const auto chunk = indices.subspan(start, std::min<std::size_t>(256, indices.size() - start));
    auto x = batch_images(manifest, chunk);
    auto inf = model.net->infer(x, batch_scanners(manifest, chunk), nullptr);
    auto terms = elbo_terms(inf, x, model.config.likelihood_sigma);
    total += -(terms.recon + terms.kl).sum().item<double>();
  }
  return total / static_cast<double>(indices.size());
}

// ---------------------------------------------------------------------------
// Abduction / prediction

LatentState abduct(GenerativeModel& model, const torch::Tensor& images, std::span<const ParentVector> parents,
                   AbductionMode mode, std::uint64_t noise_seed) {
  check_images(images, model.arch);
  check_parents(model, parents, images.size(0));
  torch::NoGradGuard guard;
  model.net->eval();
  LatentState state;
  state.mode = mode;
  if (mode == AbductionMode::stochastic) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(derive_seed(noise_seed, "abduction-noise"));
    state.noise = sample_noise(*model.net, images.size(0), gen);
    state.latents = model.net->infer(images, scanner_tensor(parents), &state.noise).z;
  } else {
    state.latents = model.net->infer(images, scanner_tensor(parents), nullptr).z;
  }
  return state;
}

LatentState abduct_replay(GenerativeModel& model, const torch::Tensor& images, std::span<const ParentVector> parents,
                          const std::vector<torch::Tensor>& noise) {
  check_images(images, model.arch);
  check_parents(model, parents, images.size(0));
  if (static_cast<int>(noise.size()) != model.arch.levels) throw DomainError("abduct_replay: noise depth mismatch");
  torch::NoGradGuard guard;
  model.net->eval();
  LatentState state;
  state.mode = AbductionMode::stochastic;
  state.noise = noise;
  state.latents = model.net->infer(images, scanner_tensor(parents), &state.noise).z;
  return state;
}

torch::Tensor predict(GenerativeModel& model, const LatentState& state, std::span<const ParentVector> parents) {
  if (static_cast<int>(state.latents.size()) != model.arch.levels)
    throw DomainError("predict: latent hierarchy has " + std::to_string(state.latents.size()) + " levels, model has " +
                      std::to_string(model.arch.levels));
  const auto batch = state.latents.front().size(0);
  for (int l = 0; l < model.arch.levels; ++l) {
    auto expected = model.net->latent_shape(l);
    expected.insert(expected.begin(), batch);
    if (state.latents[static_cast<std::size_t>(l)].sizes().vec() != expected)
      throw DomainError("predict: latent shape mismatch at level " + std::to_string(l));
  }
  check_parents(model, parents, batch);
  torch::NoGradGuard guard;
  model.net->eval();
  return model.net->decode(state.latents, scanner_tensor(parents));
}

torch::Tensor reconstruct(GenerativeModel& model, const torch::Tensor& images, std::span<const ParentVector> parents) {
  return predict(model, abduct(model, images, parents), parents);
}

torch::Tensor counterfactual(GenerativeModel& model, const torch::Tensor& images, std::span<const ParentVector> parents,
                             std::span<const int> target_scanners) {
  if (static_cast<std::int64_t>(target_scanners.size()) != images.size(0)) throw DomainError("counterfactual: one target per image");
  std::vector<ParentVector> targets;
  for (int t : target_scanners) {
    if (t < 0 || t >= model.arch.num_scanners) throw DomainError("counterfactual: unknown target scanner " + std::to_string(t));
    targets.push_back({t});
  }
  const LatentState state = abduct(model, images, parents, AbductionMode::deterministic);
  return predict(model, state, targets);
}

std::string GenerativeModel::checkpoint_hash() const { return hash_module(*net); }

void save_generative_model(const GenerativeModel& model, const std::filesystem::path& path) {
  const auto& a = model.arch;
  const auto& c = model.config;
  nlohmann::json meta{
      {"format_version", 1},
      {"kind", "hvae"},
      {"arch",
       {{"image_shape", {a.image_shape.height, a.image_shape.width}},
        {"num_scanners", a.num_scanners},
        {"levels", a.levels},
        {"base_channels", a.base_channels},
        {"latent_channels", a.latent_channels},
        {"embedding_dim", a.embedding_dim}}},
      {"config", c},
      {"seed", model.seed},
      {"epochs_run", model.epochs_run},
      {"elbo_trace", model.elbo_trace},
      {"elbo_trace_smoothed", model.elbo_trace_smoothed},
      {"config_hash", model.config_hash},
      {"parameter_hash", model.checkpoint_hash()}};
  save_checkpoint(path, *model.net, meta);
}

GenerativeModel load_generative_model(const std::filesystem::path& path) {
  const auto meta = read_checkpoint_meta(path);
  if (meta.value("kind", "") != "hvae" || meta.at("format_version").get<int>() != 1)
    throw IoError("not a version-1 hvae checkpoint: " + path.string());
  GenerativeModel model;
  const auto& a = meta.at("arch");
  model.arch = {{a.at("image_shape")[0].get<int>(), a.at("image_shape")[1].get<int>()},
                a.at("num_scanners").get<int>(),
                a.at("levels").get<int>(),
                a.at("base_channels").get<int>(),
                a.at("latent_channels").get<int>(),
                a.at("embedding_dim").get<int>()};
  model.config = meta.at("config").get<ScmConfig>();
  model.seed = meta.at("seed").get<std::uint64_t>();
  model.epochs_run = meta.at("epochs_run").get<int>();
  model.elbo_trace = meta.at("elbo_trace").get<std::vector<double>>();
  model.elbo_trace_smoothed = meta.at("elbo_trace_smoothed").get<std::vector<double>>();
  model.config_hash = meta.at("config_hash").get<std::string>();
  model.net = std::make_shared<HvaeImpl>(model.arch);
  load_checkpoint_state(path, *model.net);
  model.net->eval();
  if (model.checkpoint_hash() != meta.at("parameter_hash").get<std::string>())
    throw IoError("hvae checkpoint parameters do not match their recorded hash: " + path.string());
  return model;
}

// ---------------------------------------------------------------------------
// Domain classifier and effectiveness

DomainClassifierImpl::DomainClassifierImpl(ImageShape shape, int num_scanners) {
  auto conv = [](int in, int out) { return nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)); };
  features_ = register_module("features", nn::Sequential(conv(1, 16), nn::ReLU(), nn::MaxPool2d(2), conv(16, 32), nn::ReLU(),
                                                         nn::MaxPool2d(2), conv(32, 64), nn::ReLU(), nn::MaxPool2d(2), nn::Flatten()));
  head_ = register_module("head", nn::Linear(64 * (shape.height / 8) * (shape.width / 8), num_scanners));
}

torch::Tensor DomainClassifierImpl::forward(const torch::Tensor& x) { return head_->forward(features_->forward(x)); }

std::vector<int> DomainClassifier::classify(const torch::Tensor& images) {
  torch::NoGradGuard guard;
  net->eval();
  std::vector<int> out;
  for (std::int64_t start = 0; start < images.size(0); start += 512) {
    auto logits = net->forward(images.slice(0, start, std::min<std::int64_t>(start + 512, images.size(0))));
    auto pred = logits.argmax(1).contiguous();
    for (std::int64_t i = 0; i < pred.size(0); ++i) out.push_back(static_cast<int>(pred[i].item<std::int64_t>()));
  }
  return out;
}

namespace {

double accuracy_on(DomainClassifier& clf, const DatasetManifest& m, std::span<const std::size_t> idx) {
  std::size_t hit = 0;
  for (std::size_t start = 0; start < idx.size(); start += 512) {
    const auto chunk = idx.subspan(start, std::min<std::size_t>(512, idx.size() - start));
    const auto pred = clf.classify(batch_images(m, chunk));
    for (std::size_t i = 0; i < chunk.size(); ++i) hit += pred[i] == m.records[chunk[i]].scanner_id;
  }
  return static_cast<double>(hit) / static_cast<double>(idx.size());
}

}  // namespace

DomainClassifier train_domain_classifier(const DatasetManifest& manifest, const ScmConfig& config, std::uint64_t seed,
                                         const std::function<void(const std::string&)>& log) {
  const auto train = manifest.indices(Split::train);
  const auto val = manifest.indices(Split::val);
  if (train.empty() || val.empty()) throw DataError("train_domain_classifier: need train and validation records");
  torch::manual_seed(derive_seed(seed, "domain-classifier-init"));
  DomainClassifier clf{std::make_shared<DomainClassifierImpl>(manifest.image_shape, manifest.num_scanners()), manifest.image_shape,
                       manifest.num_scanners(), 0.0};
  auto best = std::make_shared<DomainClassifierImpl>(manifest.image_shape, manifest.num_scanners());
  copy_state(*clf.net, *best);
  double best_acc = -1.0;
  int stale = 0;

  const auto weights = make_weighted_sampler(manifest, train);
  const WeightedSampler sampler(weights);
  torch::optim::Adam opt(clf.net->parameters(), torch::optim::AdamOptions(config.classifier_learning_rate));
  const std::size_t steps = (train.size() + config.classifier_batch_size - 1) / static_cast<std::size_t>(config.classifier_batch_size);
  std::vector<std::size_t> batch(static_cast<std::size_t>(config.classifier_batch_size));
  for (int epoch = 0; epoch < config.classifier_epochs; ++epoch) {
    Engine eng = make_engine(seed, "domain-classifier-batches", {static_cast<std::uint64_t>(epoch)});
    clf.net->train();
    for (std::size_t s = 0; s < steps; ++s) {
      for (auto& b : batch) b = train[sampler.draw(eng)];
      auto loss = torch::nn::functional::cross_entropy(clf.net->forward(batch_images(manifest, batch)), batch_scanners(manifest, batch));
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
    const double acc = accuracy_on(clf, manifest, val);
    if (log) log("domain classifier epoch " + std::to_string(epoch + 1) + " val accuracy " + std::to_string(acc));
    if (acc > best_acc) {
      best_acc = acc;
      copy_state(*clf.net, *best);
      stale = 0;
    } else if (++stale >= 2) {
      break;
    }
    if (acc >= 1.0) break;
  }
  clf.net = best;
  clf.net->eval();
  clf.val_accuracy = best_acc;
  return clf;
}

double fooling_rate(DomainClassifier& classifier, const torch::Tensor& images, std::span<const int> targets) {
  if (static_cast<std::int64_t>(targets.size()) != images.size(0) || targets.empty())
    throw DomainError("fooling_rate: one target per image required");
  const auto pred = classifier.classify(images);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) hit += pred[i] == targets[i];
  return static_cast<double>(hit) / static_cast<double>(targets.size());
}

EffectivenessReport effectiveness(GenerativeModel& model, const DatasetManifest& manifest, std::span<const std::size_t> held_out,
                                  DomainClassifier& classifier, std::uint64_t seed) {
  if (classifier.val_accuracy < model.config.classifier_min_accuracy)
    throw DomainError("effectiveness: domain classifier real-image accuracy " + std::to_string(classifier.val_accuracy) +
                      " is below " + std::to_string(model.config.classifier_min_accuracy) + "; metric would be uninformative");
  if (held_out.empty()) throw DataError("effectiveness: no held-out records");
  const int s = model.arch.num_scanners;
  Engine eng = make_engine(seed, "effectiveness-targets");
  std::vector<int> targets;
  for (std::size_t i = 0; i < held_out.size(); ++i) targets.push_back(static_cast<int>(uniform_index(eng, static_cast<std::uint64_t>(s))));

  EffectivenessReport rep;
  rep.classifier_val_accuracy = classifier.val_accuracy;
  std::vector<double> hit(static_cast<std::size_t>(s), 0.0), total(static_cast<std::size_t>(s), 0.0);
  double hits = 0;
  for (std::size_t start = 0; start < held_out.size(); start += 256) {
    const std::size_t n = std::min<std::size_t>(256, held_out.size() - start);
    const auto chunk = held_out.subspan(start, n);
    std::vector<ParentVector> parents;
    for (std::size_t i : chunk) parents.push_back({manifest.records[i].scanner_id});
    const std::span<const int> tgt(targets.data() + start, n);
    auto cf = counterfactual(model, batch_images(manifest, chunk), parents, tgt);
    const auto pred = classifier.classify(cf);
    for (std::size_t i = 0; i < n; ++i) {
      total[static_cast<std::size_t>(tgt[i])] += 1;
      if (pred[i] == tgt[i]) {
        hit[static_cast<std::size_t>(tgt[i])] += 1;
        hits += 1;
      }
    }
  }
  rep.num_counterfactuals = held_out.size();
  rep.effectiveness = hits / static_cast<double>(held_out.size());
  for (int t = 0; t < s; ++t)
    rep.per_target.push_back(total[static_cast<std::size_t>(t)] > 0 ? hit[static_cast<std::size_t>(t)] / total[static_cast<std::size_t>(t)] : 0.0);
  return rep;
}

// ---------------------------------------------------------------------------
// Counterfactual store

namespace {

nlohmann::json store_meta(bool complete, std::uint64_t seed, const std::string& model_hash, const std::string& config_hash,
                          std::size_t entries, int num_scanners, ImageShape shape) {
  return {{"format_version", 1},
          {"complete", complete},
          {"generation_seed", seed},
          {"model_hash", model_hash},
          {"config_hash", config_hash},
          {"num_entries", entries},
          {"num_scanners", num_scanners},
          {"image_shape", {shape.height, shape.width}}};
}

std::string shard_name(int target) { return "shard_" + std::to_string(target) + ".bin"; }

}  // namespace

CounterfactualStore build_store(GenerativeModel& model, const DatasetManifest& manifest, const std::filesystem::path& dir,
                                std::uint64_t seed, const std::string& config_hash) {
  const auto train = manifest.indices(Split::train);
  if (train.empty()) throw DataError("build_store: no train records");
  const int s = manifest.num_scanners();
  if (s != model.arch.num_scanners) throw DomainError("build_store: model and manifest disagree on scanner count");
  const std::string model_hash = model.checkpoint_hash();
  std::filesystem::create_directories(dir);
  binary::write_text_atomic(dir / "meta.json", store_meta(false, seed, model_hash, config_hash, 0, s, manifest.image_shape).dump(2) + "\n");

  std::vector<std::vector<Image>> shards(static_cast<std::size_t>(s));
  std::vector<std::vector<std::size_t>> sources(static_cast<std::size_t>(s));
  for (std::size_t start = 0; start < train.size(); start += 256) {
    const auto chunk = std::span<const std::size_t>(train).subspan(start, std::min<std::size_t>(256, train.size() - start));
    std::vector<ParentVector> parents;
    for (std::size_t i : chunk) parents.push_back({manifest.records[i].scanner_id});
    const LatentState state = abduct(model, batch_images(manifest, chunk), parents, AbductionMode::deterministic);
    for (int t = 0; t < s; ++t) {
      std::vector<ParentVector> target(chunk.size(), ParentVector{t});
      auto images = tensor_to_images(predict(model, state, target));
      for (std::size_t j = 0; j < chunk.size(); ++j) {
        if (parents[j].scanner_id == t) continue;
        shards[static_cast<std::size_t>(t)].push_back(std::move(images[j]));
        sources[static_cast<std::size_t>(t)].push_back(chunk[j]);
      }
    }
  }

  std::ostringstream index;
  index << "source_index,target_scanner,shard,offset\n";
  std::size_t entries = 0;
  const std::size_t bytes_per_image = 4 * manifest.image_shape.size();
  for (int t = 0; t < s; ++t) {
    const auto& imgs = shards[static_cast<std::size_t>(t)];
    std::vector<const Image*> ptrs;
    for (const auto& im : imgs) ptrs.push_back(&im);
    write_image_container(dir / shard_name(t), ptrs);
    for (std::size_t j = 0; j < imgs.size(); ++j)
      index << sources[static_cast<std::size_t>(t)][j] << ',' << t << ',' << shard_name(t) << ',' << 20 + j * bytes_per_image << '\n';
    entries += imgs.size();
  }
  binary::write_text_atomic(dir / "index.csv", index.str());
  binary::write_text_atomic(dir / "meta.json",
                            store_meta(true, seed, model_hash, config_hash, entries, s, manifest.image_shape).dump(2) + "\n");
  return CounterfactualStore::open(dir);
}

CounterfactualStore CounterfactualStore::open(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "meta.json")) throw IoError("no counterfactual store at " + dir.string());
  const auto meta = nlohmann::json::parse(binary::read_text(dir / "meta.json"));
  if (meta.at("format_version").get<int>() != 1) throw IoError("unsupported store version at " + dir.string());
  if (!meta.at("complete").get<bool>()) throw IoError("counterfactual store at " + dir.string() + " is incomplete (interrupted build); rebuild it");
  CounterfactualStore store;
  store.model_hash_ = meta.at("model_hash").get<std::string>();
  store.config_hash_ = meta.at("config_hash").get<std::string>();
  store.generation_seed_ = meta.at("generation_seed").get<std::uint64_t>();
  store.num_scanners_ = meta.at("num_scanners").get<int>();
  const ImageShape shape{meta.at("image_shape")[0].get<int>(), meta.at("image_shape")[1].get<int>()};
  const std::size_t bytes_per_image = 4 * shape.size();

  std::map<std::string, std::vector<char>> shard_bytes;
  std::istringstream index(binary::read_text(dir / "index.csv"));
  std::string line;
  std::getline(index, line);
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string src, tgt, shard, off;
    std::getline(ss, src, ',');
    std::getline(ss, tgt, ',');
    std::getline(ss, shard, ',');
    std::getline(ss, off, ',');
    auto it = shard_bytes.find(shard);
    if (it == shard_bytes.end()) it = shard_bytes.emplace(shard, binary::read_file(dir / shard)).first;
    const auto offset = static_cast<std::size_t>(std::stoull(off));
    if (offset + bytes_per_image > it->second.size()) throw IoError("store index points past end of " + shard);
    Image img(shape);
    binary::read_floats(it->second.data() + offset, img.pixels());
    const Entry e{static_cast<std::size_t>(std::stoull(src)), std::stoi(tgt)};
    store.lookup_.emplace(key(e.source_index, e.target_scanner), store.images_.size());
    store.images_.push_back(std::move(img));
    store.entries_.push_back(e);
  }
  if (store.images_.size() != meta.at("num_entries").get<std::size_t>()) throw IoError("store index/meta entry count mismatch at " + dir.string());
  return store;
}

bool CounterfactualStore::contains(std::size_t source_index, int target_scanner) const {
  return lookup_.contains(key(source_index, target_scanner));
}

const Image& CounterfactualStore::get(std::size_t source_index, int target_scanner) const {
  const auto it = lookup_.find(key(source_index, target_scanner));
  if (it == lookup_.end())
    throw DataError("counterfactual store has no entry for (record " + std::to_string(source_index) + ", scanner " +
                    std::to_string(target_scanner) + ")");
  return images_[it->second];
}

std::string CounterfactualStore::content_hash() const {
  Fnv1a h;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    h.update_pod(static_cast<std::uint64_t>(entries_[i].source_index));
    h.update_pod(static_cast<std::int64_t>(entries_[i].target_scanner));
    h.update(std::as_bytes(images_[i].pixels()));
  }
  return h.hex();
}

}  // namespace cfcl
