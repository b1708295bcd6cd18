#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "cfcl/image.hpp"

namespace cfcl {

// (B, 1, H, W) float tensor from images of one shape.
torch::Tensor images_to_tensor(std::span<const Image* const> images);
torch::Tensor images_to_tensor(std::span<const Image> images);
std::vector<Image> tensor_to_images(const torch::Tensor& batch);

torch::Tensor labels_to_tensor(std::span<const int> labels);

// Fingerprint of all parameters and buffers (names, shapes, raw bytes).
std::string hash_module(const torch::nn::Module& module);

// Versioned checkpoint: module state plus a JSON metadata string, written
// atomically (temp file then rename).
void save_checkpoint(const std::filesystem::path& path, const torch::nn::Module& module, const nlohmann::json& meta);
nlohmann::json read_checkpoint_meta(const std::filesystem::path& path);
void load_checkpoint_state(const std::filesystem::path& path, torch::nn::Module& module);

// Single-threaded intra-op execution keeps every reduction order fixed.
void configure_torch_determinism();

// Deep copy of parameter/buffer values between modules of one architecture.
void copy_state(const torch::nn::Module& from, torch::nn::Module& to);

}  // namespace cfcl
