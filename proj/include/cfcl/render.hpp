#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "cfcl/error.hpp"
#include "cfcl/image.hpp"
#include "cfcl/rng.hpp"

namespace cfcl {

// Radius band (in pixels at 32x32) for a class. Bands tile [1.2, 4.5] with
// gaps, so blob size is ordinal in the class label.
struct RadiusBand {
  double lo, hi;
};

inline RadiusBand class_radius_band(int class_label, int num_classes) {
  const double step = 3.3 / num_classes;
  const double lo = 1.2 + class_label * step;
  return {lo, lo + 0.7 * step};
}

inline constexpr float kBackgroundLevel = 0.12f;

// Desk-scale stand-in for anatomy: a smooth background plus an ensemble of
// soft-edged discs. The class fixes the disc radius band; subject_seed fixes
// count, placement, brightness and the background gradient.
inline Image render_base(int class_label, std::uint64_t subject_seed, ImageShape shape, int num_classes = 4) {
  if (num_classes < 2) throw DomainError("render_base: need at least 2 classes");
  if (class_label < 0 || class_label >= num_classes)
    throw DomainError("render_base: class " + std::to_string(class_label) + " outside [0, " +
                      std::to_string(num_classes) + ")");
  if (shape.height < 16 || shape.width < 16) throw DomainError("render_base: image shape must be at least 16x16");

  Engine eng(derive_seed(subject_seed, "render-base"));
  const double scale = std::min(shape.height, shape.width) / 32.0;
  const double gy = uniform(eng, -0.04, 0.04), gx = uniform(eng, -0.04, 0.04);

  Image img(shape);
  for (int r = 0; r < shape.height; ++r)
    for (int c = 0; c < shape.width; ++c)
      img.at(r, c) = static_cast<float>(kBackgroundLevel + gy * (2.0 * r / (shape.height - 1) - 1.0) +
                                        gx * (2.0 * c / (shape.width - 1) - 1.0));

  const RadiusBand band = class_radius_band(class_label, num_classes);
  const int count = 5 + static_cast<int>(uniform_index(eng, 4));
  for (int b = 0; b < count; ++b) {
    const double radius = uniform(eng, band.lo, band.hi) * scale;
    const double cy = uniform(eng, radius, shape.height - 1 - radius);
    const double cx = uniform(eng, radius, shape.width - 1 - radius);
    const double amp = uniform(eng, 0.45, 0.65);
    const int r0 = std::max(0, static_cast<int>(std::floor(cy - radius - 1)));
    const int r1 = std::min(shape.height - 1, static_cast<int>(std::ceil(cy + radius + 1)));
    const int c0 = std::max(0, static_cast<int>(std::floor(cx - radius - 1)));
    const int c1 = std::min(shape.width - 1, static_cast<int>(std::ceil(cx + radius + 1)));
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        const double d = std::hypot(r - cy, c - cx);
        const double cover = std::clamp(radius - d + 0.5, 0.0, 1.0);
        if (cover <= 0.0) continue;
        const float v = static_cast<float>(kBackgroundLevel + amp * cover);
        img.at(r, c) = std::max(img.at(r, c), v);
      }
  }
  img.clamp01();
  return img;
}

}  // namespace cfcl
