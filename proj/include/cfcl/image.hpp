#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace cfcl {

struct ImageShape {
  int height = 32;
  int width = 32;

  std::size_t size() const noexcept { return static_cast<std::size_t>(height) * width; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

// Single-channel float image, row-major, intensities nominally in [0, 1].
class Image {
 public:
  Image() = default;
  explicit Image(ImageShape shape, float fill = 0.0f) : shape_(shape), pixels_(shape.size(), fill) {}
  Image(ImageShape shape, std::vector<float> pixels) : shape_(shape), pixels_(std::move(pixels)) {}

  ImageShape shape() const noexcept { return shape_; }
  int height() const noexcept { return shape_.height; }
  int width() const noexcept { return shape_.width; }

  float& at(int row, int col) noexcept { return pixels_[static_cast<std::size_t>(row) * shape_.width + col]; }
  float at(int row, int col) const noexcept { return pixels_[static_cast<std::size_t>(row) * shape_.width + col]; }

  std::span<float> pixels() noexcept { return pixels_; }
  std::span<const float> pixels() const noexcept { return pixels_; }

  void clamp01() noexcept {
    for (float& v : pixels_) v = std::clamp(v, 0.0f, 1.0f);
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  ImageShape shape_{};
  std::vector<float> pixels_;
};

inline double l2_distance(const Image& a, const Image& b) {
  double s = 0.0;
  auto pa = a.pixels();
  auto pb = b.pixels();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const double d = static_cast<double>(pa[i]) - pb[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

}  // namespace cfcl
