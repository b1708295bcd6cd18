#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "cfcl/error.hpp"
#include "cfcl/image.hpp"
#include "cfcl/rng.hpp"
#include "cfcl/scanner.hpp"

namespace cfcl {

struct AugmentationPolicy {
  double crop_scale_lo = 0.6;  // area fraction of the source kept by the crop
  double crop_scale_hi = 1.0;
  double hflip_prob = 0.5;
  double gain_delta = 0.2;
  double offset_delta = 0.1;
  double blur_prob = 0.1;
  double blur_sigma_max = 1.0;
  ImageShape output_shape{32, 32};

  void validate() const {
    if (crop_scale_lo > crop_scale_hi) throw ConfigError("augment: crop scale range is degenerate (lo > hi)");
    if (!(crop_scale_lo > 0.0) || crop_scale_hi > 1.0) throw ConfigError("augment: crop scale range must lie in (0, 1]");
    if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) throw ConfigError("augment: hflip_prob outside [0, 1]");
    if (!(blur_prob >= 0.0 && blur_prob <= 1.0)) throw ConfigError("augment: blur_prob outside [0, 1]");
    if (!(gain_delta >= 0.0 && gain_delta < 1.0)) throw ConfigError("augment: gain_delta outside [0, 1)");
    if (!(offset_delta >= 0.0)) throw ConfigError("augment: offset_delta must be nonnegative");
    if (!(blur_sigma_max > 0.0)) throw ConfigError("augment: blur_sigma_max must be positive");
    if (output_shape.height < 1 || output_shape.width < 1) throw ConfigError("augment: bad output shape");
  }

  static AugmentationPolicy zero_strength(ImageShape shape) {
    return {1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, shape};
  }
};

// Bilinear resample of the window [row0, row0+rows) x [col0, col0+cols)
// onto `out_shape`, sampling at pixel centres.
inline Image resample_window(const Image& src, double row0, double col0, double rows, double cols, ImageShape out_shape) {
  Image out(out_shape);
  const double sy = rows / out_shape.height, sx = cols / out_shape.width;
  auto sample = [&](double y, double x) {
    y = std::clamp(y, 0.0, static_cast<double>(src.height() - 1));
    x = std::clamp(x, 0.0, static_cast<double>(src.width() - 1));
    const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
    const int y1 = std::min(y0 + 1, src.height() - 1), x1 = std::min(x0 + 1, src.width() - 1);
    const double fy = y - y0, fx = x - x0;
    const double top = src.at(y0, x0) * (1.0 - fx) + src.at(y0, x1) * fx;
    const double bot = src.at(y1, x0) * (1.0 - fx) + src.at(y1, x1) * fx;
    return top * (1.0 - fy) + bot * fy;
  };
  for (int r = 0; r < out_shape.height; ++r)
    for (int c = 0; c < out_shape.width; ++c)
      out.at(r, c) = static_cast<float>(sample(row0 + (r + 0.5) * sy - 0.5, col0 + (c + 0.5) * sx - 0.5));
  return out;
}

// One random view: resized crop, horizontal flip, intensity jitter, optional
// blur, clamp. Deterministic given the engine state.
inline Image sample_view(const Image& image, const AugmentationPolicy& policy, Engine& eng) {
  policy.validate();
  const double scale = uniform(eng, policy.crop_scale_lo, policy.crop_scale_hi);
  const double side = std::sqrt(scale);
  const double rows = side * image.height(), cols = side * image.width();
  const double row0 = uniform01(eng) * (image.height() - rows);
  const double col0 = uniform01(eng) * (image.width() - cols);
  const bool flip = uniform01(eng) < policy.hflip_prob;
  const double gain = 1.0 + uniform(eng, -policy.gain_delta, policy.gain_delta);
  const double offset = uniform(eng, -policy.offset_delta, policy.offset_delta);
  const bool blur = uniform01(eng) < policy.blur_prob;
  const double sigma = uniform(eng, 0.1, policy.blur_sigma_max);

  Image out;
  if (scale == 1.0 && image.shape() == policy.output_shape)
    out = image;
  else
    out = resample_window(image, row0, col0, rows, cols, policy.output_shape);
  if (flip)
    for (int r = 0; r < out.height(); ++r)
      for (int c = 0; c < out.width() / 2; ++c) std::swap(out.at(r, c), out.at(r, out.width() - 1 - c));
  if (gain != 1.0 || offset != 0.0)
    for (float& v : out.pixels()) v = static_cast<float>(v * gain + offset);
  if (blur) gaussian_blur(out, sigma);
  out.clamp01();
  return out;
}

// Substream for view `view` (0 or 1) of global sample `sample_index`; the two
// views of a pair never share a stream.
inline Engine view_engine(std::uint64_t master_seed, std::uint64_t sample_index, int view) {
  return make_engine(master_seed, "augment-view", {sample_index, static_cast<std::uint64_t>(view)});
}

}  // namespace cfcl
