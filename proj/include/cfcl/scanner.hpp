#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cfcl/error.hpp"
#include "cfcl/image.hpp"
#include "cfcl/rng.hpp"

namespace cfcl {

// Parameterization of one synthetic acquisition domain. Effects are applied
// in a fixed order: gamma, gain about 0.5, offset, blur, noise, vignette,
// watermark; the result is clamped to [0, 1].
struct ScannerSpec {
  int scanner_id = 0;
  std::string name;
  double gamma = 1.0;
  double contrast_gain = 1.0;
  double brightness_offset = 0.0;
  double noise_sigma = 0.0;
  double blur_radius = 0.0;
  double vignette_strength = 0.0;
  bool watermark = false;
  double prevalence = 1.0;

  void validate() const {
    auto fail = [&](const std::string& what) {
      throw ConfigError("scanner " + std::to_string(scanner_id) + ": " + what);
    };
    if (!(gamma > 0.0) || !std::isfinite(gamma)) fail("gamma must be positive");
    if (!(contrast_gain > 0.0) || !std::isfinite(contrast_gain)) fail("contrast_gain must be positive");
    if (!(brightness_offset >= -0.3 && brightness_offset <= 0.3)) fail("brightness_offset outside [-0.3, 0.3]");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) fail("noise_sigma must be nonnegative");
    if (!(blur_radius >= 0.0) || !std::isfinite(blur_radius)) fail("blur_radius must be nonnegative");
    if (!(vignette_strength >= 0.0 && vignette_strength <= 1.0)) fail("vignette_strength outside [0, 1]");
    if (!(prevalence > 0.0 && prevalence <= 1.0)) fail("prevalence outside (0, 1]");
  }

  static ScannerSpec identity(int id = 0) {
    ScannerSpec s;
    s.scanner_id = id;
    return s;
  }
};

struct PixelBox {
  int row0 = 0, col0 = 0, rows = 0, cols = 0;  // half-open [row0, row0+rows)

  bool contains(int r, int c) const noexcept {
    return r >= row0 && r < row0 + rows && c >= col0 && c < col0 + cols;
  }
};

namespace detail {

// 5x7 bitmap spelling "TX", imprinted near the top-right corner.
inline constexpr std::array<const char*, 5> kGlyph = {
    "###.#.#",
    ".#..#.#",
    ".#...#.",
    ".#..#.#",
    ".#..#.#",
};

inline int glyph_cell(ImageShape shape) { return std::max(1, std::min(shape.height, shape.width) / 32); }

// 1-D Gaussian blur along rows or columns with mirrored borders.
inline void blur_axis(Image& img, const std::vector<double>& kernel, bool along_rows) {
  const int h = img.height(), w = img.width();
  const int radius = static_cast<int>(kernel.size() / 2);
  Image out(img.shape());
  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const double v = along_rows ? img.at(r, reflect(c + k, w)) : img.at(reflect(r + k, h), c);
        acc += kernel[static_cast<std::size_t>(k + radius)] * v;
      }
      out.at(r, c) = static_cast<float>(acc);
    }
  }
  img = std::move(out);
}

}  // namespace detail

inline PixelBox watermark_box(ImageShape shape) {
  const int cell = detail::glyph_cell(shape);
  const int rows = static_cast<int>(detail::kGlyph.size()) * cell;
  const int cols = 7 * cell;
  return {cell, shape.width - cols - cell, rows, cols};
}

inline void gaussian_blur(Image& img, double sigma) {
  if (sigma <= 0.0) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    const double v = std::exp(-0.5 * k * k / (sigma * sigma));
    kernel[static_cast<std::size_t>(k + radius)] = v;
    total += v;
  }
  for (double& v : kernel) v /= total;
  detail::blur_axis(img, kernel, true);
  detail::blur_axis(img, kernel, false);
}

inline void imprint_watermark(Image& img) {
  const PixelBox box = watermark_box(img.shape());
  const int cell = detail::glyph_cell(img.shape());
  for (int r = 0; r < box.rows; ++r)
    for (int c = 0; c < box.cols; ++c)
      if (detail::kGlyph[static_cast<std::size_t>(r / cell)][c / cell] == '#') img.at(box.row0 + r, box.col0 + c) = 1.0f;
}

// Deterministic in (image, spec, noise_seed). Steps whose parameter is at its
// identity value are skipped entirely, so the identity spec returns the input
// bit-for-bit.
inline Image apply_scanner(const Image& image, const ScannerSpec& spec, std::uint64_t noise_seed) {
  Image out = image;
  if (spec.gamma != 1.0)
    for (float& v : out.pixels()) v = static_cast<float>(std::pow(std::max(0.0f, v), spec.gamma));
  if (spec.contrast_gain != 1.0)
    for (float& v : out.pixels()) v = static_cast<float>((v - 0.5) * spec.contrast_gain + 0.5);
  if (spec.brightness_offset != 0.0)
    for (float& v : out.pixels()) v = static_cast<float>(v + spec.brightness_offset);
  if (spec.blur_radius > 0.0) gaussian_blur(out, spec.blur_radius);
  if (spec.noise_sigma > 0.0) {
    Engine eng(derive_seed(noise_seed, "scanner-noise"));
    for (float& v : out.pixels()) v = static_cast<float>(v + spec.noise_sigma * standard_normal(eng));
  }
  if (spec.vignette_strength > 0.0) {
    const double cr = 0.5 * (out.height() - 1), cc = 0.5 * (out.width() - 1);
    const double dmax2 = cr * cr + cc * cc;
    for (int r = 0; r < out.height(); ++r)
      for (int c = 0; c < out.width(); ++c) {
        const double d2 = (r - cr) * (r - cr) + (c - cc) * (c - cc);
        out.at(r, c) = static_cast<float>(out.at(r, c) * (1.0 - spec.vignette_strength * d2 / dmax2));
      }
  }
  if (spec.watermark) imprint_watermark(out);
  out.clamp01();
  return out;
}

}  // namespace cfcl
