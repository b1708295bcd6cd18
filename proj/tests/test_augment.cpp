#include <gtest/gtest.h>

#include <cmath>

#include "cfcl/augment.hpp"
#include "cfcl/error.hpp"
#include "cfcl/render.hpp"

using namespace cfcl;

namespace {

Image gradient_image() {
  Image img({32, 32});
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) img.at(r, c) = static_cast<float>((r * 32 + c) / 1024.0);
  return img;
}

}  // namespace

TEST(SampleView, ZeroStrengthIsIdentity) {
  const Image img = render_base(2, 5, {32, 32});
  const auto policy = AugmentationPolicy::zero_strength({32, 32});
  for (std::uint64_t s = 0; s < 20; ++s) {
    Engine eng = view_engine(1, s, 0);
    EXPECT_EQ(sample_view(img, policy, eng), img);
  }
}

TEST(SampleView, DeterministicGivenEngineState) {
  const Image img = render_base(1, 5, {32, 32});
  AugmentationPolicy p;
  Engine a = view_engine(7, 3, 0), b = view_engine(7, 3, 0);
  EXPECT_EQ(sample_view(img, p, a), sample_view(img, p, b));
}

TEST(SampleView, TwoViewsDiffer) {
  const Image img = render_base(1, 5, {32, 32});
  AugmentationPolicy p;
  int differ = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    Engine a = view_engine(7, s, 0), b = view_engine(7, s, 1);
    differ += l2_distance(sample_view(img, p, a), sample_view(img, p, b)) > 0.0;
  }
  EXPECT_GE(differ, 990);
}

TEST(SampleView, OutputShapeAndRange) {
  AugmentationPolicy p;
  p.gain_delta = 0.9;
  p.offset_delta = 0.5;
  p.output_shape = {24, 24};
  const Image img = gradient_image();
  for (std::uint64_t s = 0; s < 50; ++s) {
    Engine eng = view_engine(2, s, 0);
    const Image v = sample_view(img, p, eng);
    ASSERT_EQ(v.shape(), (ImageShape{24, 24}));
    for (float x : v.pixels()) ASSERT_TRUE(x >= 0.0f && x <= 1.0f);
  }
}

TEST(SampleView, FlipOnlyMirrorsColumns) {
  AugmentationPolicy p = AugmentationPolicy::zero_strength({32, 32});
  p.hflip_prob = 1.0;
  const Image img = gradient_image();
  Engine eng = view_engine(0, 0, 0);
  const Image v = sample_view(img, p, eng);
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) EXPECT_EQ(v.at(r, c), img.at(r, 31 - c));
}

TEST(SampleView, CropKeepsRequestedAreaFraction) {
  // Crop of a linear ramp: the output spans a fraction sqrt(scale) of the input range.
  AugmentationPolicy p = AugmentationPolicy::zero_strength({32, 32});
  p.crop_scale_lo = p.crop_scale_hi = 0.25;
  Image ramp({32, 32});
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) ramp.at(r, c) = static_cast<float>(c / 31.0);
  Engine eng = view_engine(3, 1, 0);
  const Image v = sample_view(ramp, p, eng);
  const double span = v.at(0, 31) - v.at(0, 0);
  EXPECT_NEAR(span, 0.5 * 31.0 / 32.0 * 32.0 / 31.0 * (15.5 / 16.0), 0.03);
}

TEST(AugmentationPolicy, Validation) {
  AugmentationPolicy p;
  p.crop_scale_lo = 0.9;
  p.crop_scale_hi = 0.5;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.crop_scale_lo = 0.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.hflip_prob = 1.5;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  EXPECT_NO_THROW(p.validate());
}
