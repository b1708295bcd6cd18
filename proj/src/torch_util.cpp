#include "cfcl/torch_util.hpp"

#include <cstring>

#include "cfcl/error.hpp"
#include "cfcl/hash.hpp"

namespace cfcl {

torch::Tensor images_to_tensor(std::span<const Image* const> images) {
  if (images.empty()) throw DomainError("images_to_tensor: empty batch");
  const ImageShape shape = images.front()->shape();
  auto t = torch::empty({static_cast<std::int64_t>(images.size()), 1, shape.height, shape.width}, torch::kFloat32);
  float* dst = t.data_ptr<float>();
  for (const Image* img : images) {
    if (img->shape() != shape) throw DomainError("images_to_tensor: mixed shapes");
    std::memcpy(dst, img->pixels().data(), img->pixels().size_bytes());
    dst += shape.size();
  }
  return t;
}

torch::Tensor images_to_tensor(std::span<const Image> images) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(images.size());
  for (const auto& img : images) ptrs.push_back(&img);
  return images_to_tensor(ptrs);
}

std::vector<Image> tensor_to_images(const torch::Tensor& batch) {
  auto t = batch.detach().to(torch::kFloat32).contiguous();
  if (t.dim() != 4 || t.size(1) != 1) throw DomainError("tensor_to_images: expected (B, 1, H, W)");
  const ImageShape shape{static_cast<int>(t.size(2)), static_cast<int>(t.size(3))};
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(t.size(0)));
  const float* src = t.data_ptr<float>();
  for (std::int64_t i = 0; i < t.size(0); ++i) {
    Image img(shape);
    std::memcpy(img.pixels().data(), src + i * static_cast<std::int64_t>(shape.size()), img.pixels().size_bytes());
    out.push_back(std::move(img));
  }
  return out;
}

torch::Tensor labels_to_tensor(std::span<const int> labels) {
  auto t = torch::empty({static_cast<std::int64_t>(labels.size())}, torch::kInt64);
  auto* p = t.data_ptr<std::int64_t>();
  for (std::size_t i = 0; i < labels.size(); ++i) p[i] = labels[i];
  return t;
}

std::string hash_module(const torch::nn::Module& module) {
  Fnv1a h;
  auto feed = [&](const std::string& name, const torch::Tensor& t) {
    h.update(name);
    auto c = t.detach().contiguous().cpu();
    for (auto s : c.sizes()) h.update_pod(s);
    h.update(std::as_bytes(std::span<const char>(static_cast<const char*>(c.data_ptr()), c.numel() * c.element_size())));
  };
  for (const auto& p : module.named_parameters()) feed(p.key(), p.value());
  for (const auto& b : module.named_buffers()) feed(b.key(), b.value());
  return h.hex();
}

void save_checkpoint(const std::filesystem::path& path, const torch::nn::Module& module, const nlohmann::json& meta) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  torch::serialize::OutputArchive archive;
  module.save(archive);
  archive.write("cfcl_meta", c10::IValue(meta.dump()));
  const std::filesystem::path tmp = path.string() + ".tmp";
  archive.save_to(tmp.string());
  std::filesystem::rename(tmp, path);
}

nlohmann::json read_checkpoint_meta(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  c10::IValue v;
  if (!archive.try_read("cfcl_meta", v)) throw IoError("checkpoint has no metadata: " + path.string());
  return nlohmann::json::parse(v.toStringRef());
}

void load_checkpoint_state(const std::filesystem::path& path, torch::nn::Module& module) {
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  module.load(archive);
}

void configure_torch_determinism() {
  torch::set_num_threads(1);
}

void copy_state(const torch::nn::Module& from, torch::nn::Module& to) {
  torch::NoGradGuard guard;
  auto src_p = from.named_parameters();
  for (auto& p : to.named_parameters()) p.value().copy_(src_p[p.key()]);
  auto src_b = from.named_buffers();
  for (auto& b : to.named_buffers()) b.value().copy_(src_b[b.key()]);
}

}  // namespace cfcl
