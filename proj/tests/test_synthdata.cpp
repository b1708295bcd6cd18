#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "cfcl/binary_io.hpp"
#include "cfcl/error.hpp"
#include "cfcl/render.hpp"
#include "cfcl/scanner.hpp"
#include "cfcl/synthdata.hpp"

using namespace cfcl;
namespace fs = std::filesystem;

namespace {

DataConfig three_scanner_config(int n) {
  DataConfig c;
  c.num_records = n;
  c.class_prevalences = {0.1, 0.4, 0.4, 0.1};
  ScannerSpec a = ScannerSpec::identity(0);
  a.prevalence = 0.9;
  a.noise_sigma = 0.02;
  ScannerSpec b = ScannerSpec::identity(1);
  b.prevalence = 0.05;
  b.gamma = 0.6;
  b.watermark = true;
  ScannerSpec d = ScannerSpec::identity(2);
  d.prevalence = 0.05;
  d.blur_radius = 0.8;
  c.scanners = {a, b, d};
  return c;
}

// Foreground pixels: brighter than the background by a clear margin.
double foreground_area(const Image& img) {
  int n = 0;
  for (float v : img.pixels()) n += v > kBackgroundLevel + 0.2f;
  return n;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("cfcl_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(RenderBase, Deterministic) {
  EXPECT_EQ(render_base(2, 77, {32, 32}), render_base(2, 77, {32, 32}));
}

TEST(RenderBase, SubjectSeedChangesNuisance) {
  EXPECT_GT(l2_distance(render_base(1, 1, {32, 32}), render_base(1, 2, {32, 32})), 0.0);
}

TEST(RenderBase, InvalidClassIsDomainError) {
  EXPECT_THROW(render_base(4, 1, {32, 32}, 4), DomainError);
  EXPECT_THROW(render_base(-1, 1, {32, 32}, 4), DomainError);
  EXPECT_THROW(render_base(0, 1, {8, 8}, 4), DomainError);
}

// Thickness oracle: number of 4-neighbour erosions until the foreground vanishes.
int erosion_depth(const Image& img) {
  const int h = img.height(), w = img.width();
  std::vector<char> fg(static_cast<std::size_t>(h * w));
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) fg[static_cast<std::size_t>(r * w + c)] = img.at(r, c) > kBackgroundLevel + 0.2f;
  int depth = 0;
  while (std::count(fg.begin(), fg.end(), 1) > 0) {
    auto next = fg;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        auto on = [&](int rr, int cc) { return rr >= 0 && rr < h && cc >= 0 && cc < w && fg[static_cast<std::size_t>(rr * w + cc)]; };
        next[static_cast<std::size_t>(r * w + c)] = on(r, c) && on(r - 1, c) && on(r + 1, c) && on(r, c - 1) && on(r, c + 1);
      }
    fg.swap(next);
    ++depth;
  }
  return depth;
}

TEST(RenderBase, ThicknessIncreasesWithClass) {
  std::vector<double> mean(4, 0.0);
  for (int c = 0; c < 4; ++c) {
    for (std::uint64_t s = 0; s < 100; ++s) mean[static_cast<std::size_t>(c)] += erosion_depth(render_base(c, s, {32, 32}));
    mean[static_cast<std::size_t>(c)] /= 100;
  }
  for (int c = 1; c < 4; ++c) EXPECT_GT(mean[static_cast<std::size_t>(c)], mean[static_cast<std::size_t>(c - 1)]);
}

TEST(RenderBase, ForegroundSizeIncreasesWithClass) {
  std::vector<double> mean(4, 0.0);
  for (int c = 0; c < 4; ++c) {
    for (std::uint64_t s = 0; s < 100; ++s) mean[static_cast<std::size_t>(c)] += foreground_area(render_base(c, s, {32, 32}));
    mean[static_cast<std::size_t>(c)] /= 100;
  }
  for (int c = 1; c < 4; ++c) EXPECT_GT(mean[static_cast<std::size_t>(c)], mean[static_cast<std::size_t>(c - 1)]);
}

TEST(ApplyScanner, IdentitySpecIsExact) {
  const Image base = render_base(1, 3, {32, 32});
  for (std::uint64_t seed : {0ULL, 1ULL, 999ULL}) EXPECT_EQ(apply_scanner(base, ScannerSpec::identity(), seed), base);
}

TEST(ApplyScanner, NoiseFreeOutputIgnoresSeed) {
  ScannerSpec s = ScannerSpec::identity();
  s.gamma = 1.4;
  s.contrast_gain = 1.2;
  s.blur_radius = 0.7;
  s.vignette_strength = 0.3;
  const Image base = render_base(2, 3, {32, 32});
  EXPECT_EQ(apply_scanner(base, s, 1), apply_scanner(base, s, 2));
}

TEST(ApplyScanner, NoiseAppliedAfterBlur) {
  ScannerSpec blur = ScannerSpec::identity();
  blur.blur_radius = 0.8;
  ScannerSpec both = blur;
  both.noise_sigma = 0.05;
  const Image base = render_base(2, 3, {32, 32});
  const Image a = apply_scanner(base, blur, 1), b = apply_scanner(base, both, 1), c = apply_scanner(base, both, 2);
  EXPECT_GT(l2_distance(a, b), 0.5);
  EXPECT_GT(l2_distance(b, c), 0.5);
}

TEST(ApplyScanner, OutputClampedForExtremeSpecs) {
  ScannerSpec s = ScannerSpec::identity();
  s.contrast_gain = 5.0;
  s.brightness_offset = 0.3;
  s.noise_sigma = 0.5;
  const Image out = apply_scanner(render_base(3, 3, {32, 32}), s, 4);
  for (float v : out.pixels()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(ApplyScanner, WatermarkOnlyTouchesGlyphBox) {
  ScannerSpec plain = ScannerSpec::identity();
  plain.gamma = 0.8;
  plain.noise_sigma = 0.05;
  ScannerSpec marked = plain;
  marked.watermark = true;
  const Image base = render_base(0, 11, {32, 32});
  const Image a = apply_scanner(base, plain, 5), b = apply_scanner(base, marked, 5);
  const PixelBox box = watermark_box(base.shape());
  int changed_inside = 0;
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) {
      if (box.contains(r, c))
        changed_inside += a.at(r, c) != b.at(r, c);
      else
        EXPECT_EQ(a.at(r, c), b.at(r, c)) << r << "," << c;
    }
  EXPECT_GT(changed_inside, 0);
}

TEST(GenerateDataset, ScannerCountsMatchPrevalences) {
  const auto m = generate_dataset(three_scanner_config(20000), 3);
  std::vector<double> counts(3, 0);
  for (const auto& r : m.records) counts[static_cast<std::size_t>(r.scanner_id)] += 1;
  EXPECT_NEAR(counts[0] / 20000, 0.90, 0.01);
  EXPECT_NEAR(counts[1] / 20000, 0.05, 0.01);
  EXPECT_NEAR(counts[2] / 20000, 0.05, 0.01);
}

TEST(GenerateDataset, RealRecordsPointAtThemselves) {
  const auto m = generate_dataset(three_scanner_config(500), 3);
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    EXPECT_FALSE(m.records[i].is_counterfactual);
    EXPECT_EQ(m.records[i].source_index, static_cast<std::int64_t>(i));
    for (float v : m.records[i].image.pixels()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
}

TEST(GenerateDataset, SingleScanner) {
  DataConfig c;
  c.num_records = 300;
  c.scanners = {ScannerSpec::identity(0)};
  const auto m = generate_dataset(c, 1);
  for (const auto& r : m.records) EXPECT_EQ(r.scanner_id, 0);
}

TEST(GenerateDataset, BitIdenticalRegeneration) {
  const auto a = generate_dataset(three_scanner_config(800), 42);
  const auto b = generate_dataset(three_scanner_config(800), 42);
  EXPECT_TRUE(manifests_identical(a, b));
  const auto c = generate_dataset(three_scanner_config(800), 43);
  EXPECT_FALSE(manifests_identical(a, c));
}

TEST(GenerateDataset, PrevalencesMustSumToOne) {
  auto c = three_scanner_config(100);
  c.scanners[0].prevalence = 0.8;
  EXPECT_THROW(generate_dataset(c, 1), ConfigError);
}

TEST(GenerateDataset, LabelsIndependentOfScanner) {
  const auto m = generate_dataset(three_scanner_config(20000), 8);
  double table[3][4] = {};
  for (const auto& r : m.records) table[r.scanner_id][r.class_label] += 1;
  double rows[3] = {}, cols[4] = {}, n = 0;
  for (int s = 0; s < 3; ++s)
    for (int c = 0; c < 4; ++c) {
      rows[s] += table[s][c];
      cols[c] += table[s][c];
      n += table[s][c];
    }
  double chi2 = 0;
  for (int s = 0; s < 3; ++s)
    for (int c = 0; c < 4; ++c) {
      const double e = rows[s] * cols[c] / n;
      chi2 += (table[s][c] - e) * (table[s][c] - e) / e;
    }
  // chi-square critical value, 6 degrees of freedom, p = 0.01
  EXPECT_LT(chi2, 16.812);
}

TEST(GenerateDataset, CorrelationKnobTiesLabelsToScanner) {
  auto c = three_scanner_config(3000);
  c.label_scanner_correlation = 1.0;
  const auto m = generate_dataset(c, 8);
  for (const auto& r : m.records) EXPECT_EQ(r.class_label, r.scanner_id % 4);
}

TEST(SplitBySubject, SubjectsNeverStraddleSplits) {
  const auto m = generate_dataset(three_scanner_config(5000), 2);
  std::map<std::int64_t, Split> seen;
  for (const auto& r : m.records) {
    auto [it, inserted] = seen.emplace(r.subject_id, r.split);
    EXPECT_EQ(it->second, r.split);
  }
}

TEST(SplitBySubject, ProportionsWithinTwoPercent) {
  DatasetManifest m;
  m.scanner_specs = {ScannerSpec::identity(0)};
  for (int s = 0; s < 1000; ++s)
    for (int k = 0; k < 1 + s % 4; ++k) {
      SampleRecord r;
      r.subject_id = s;
      m.records.push_back(r);
    }
  split_by_subject(m, {0.8, 0.1, 0.1}, 17);
  std::map<std::int64_t, Split> subj;
  for (const auto& r : m.records) subj[r.subject_id] = r.split;
  double counts[3] = {};
  for (const auto& [s, sp] : subj) counts[static_cast<int>(sp)] += 1;
  EXPECT_NEAR(counts[0] / 1000, 0.8, 0.02);
  EXPECT_NEAR(counts[1] / 1000, 0.1, 0.02);
  EXPECT_NEAR(counts[2] / 1000, 0.1, 0.02);
  // subject with 4 images: all in one split
  for (const auto& r : m.records)
    if (r.subject_id == 3) {
      EXPECT_EQ(r.split, subj[3]);
    }

  DatasetManifest again = m;
  split_by_subject(again, {0.8, 0.1, 0.1}, 17);
  for (std::size_t i = 0; i < m.records.size(); ++i) EXPECT_EQ(again.records[i].split, m.records[i].split);
}

TEST(SplitBySubject, TooFewSubjects) {
  DatasetManifest m;
  m.scanner_specs = {ScannerSpec::identity(0)};
  for (int s = 0; s < 2; ++s) {
    SampleRecord r;
    r.subject_id = s;
    m.records.push_back(r);
  }
  EXPECT_THROW(split_by_subject(m, {0.8, 0.1, 0.1}, 1), DataError);
}

TEST(WeightedSampler, WeightsInverseToScannerCount) {
  DatasetManifest m;
  m.scanner_specs = {ScannerSpec::identity(0), ScannerSpec::identity(1)};
  for (int i = 0; i < 1000; ++i) {
    SampleRecord r;
    r.scanner_id = i < 900 ? 0 : 1;
    m.records.push_back(r);
  }
  const auto w = make_weighted_sampler(m);
  EXPECT_DOUBLE_EQ(w[999] / w[0], 9.0);
}

TEST(WeightedSampler, SingleScannerUniform) {
  DatasetManifest m;
  m.scanner_specs = {ScannerSpec::identity(0)};
  m.records.resize(10);
  const auto w = make_weighted_sampler(m);
  for (double x : w) EXPECT_EQ(x, w[0]);
}

TEST(WeightedSampler, EmptyManifestIsError) {
  DatasetManifest m;
  EXPECT_THROW(make_weighted_sampler(m), DataError);
}

TEST(WeightedSampler, DrawsBalanceScanners) {
  const auto m = generate_dataset(three_scanner_config(20000), 5);
  const auto w = make_weighted_sampler(m);
  const WeightedSampler sampler(w);
  Engine eng = make_engine(5, "sampler-test");
  std::vector<double> freq(3, 0);
  for (int i = 0; i < 100000; ++i) freq[static_cast<std::size_t>(m.records[sampler.draw(eng)].scanner_id)] += 1;
  for (double f : freq) {
    EXPECT_GE(f / 100000, 0.313);
    EXPECT_LE(f / 100000, 0.353);
  }
}

TEST(ManifestIo, RoundTripIsBitExact) {
  auto m = generate_dataset(three_scanner_config(300), 9);
  m.config_hash = "abc123";
  const auto dir = temp_dir("manifest");
  save_manifest(m, dir);
  const auto back = load_manifest(dir);
  EXPECT_TRUE(manifests_identical(m, back));
  EXPECT_EQ(back.config_hash, "abc123");
  fs::remove_all(dir);
}

TEST(ImageContainer, LittleEndianLayout) {
  const auto dir = temp_dir("container");
  Image a({16, 16}, 0.25f), b({16, 16}, 1.0f);
  std::vector<const Image*> ptrs{&a, &b};
  write_image_container(dir / "x.bin", ptrs);
  const auto bytes = binary::read_file(dir / "x.bin");
  ASSERT_EQ(bytes.size(), 8u + 12u + 2u * 256u * 4u);
  EXPECT_EQ(std::string(bytes.data(), 8), "CFCLIMG1");
  EXPECT_EQ(binary::get_u32(bytes.data() + 8), 2u);
  EXPECT_EQ(binary::get_u32(bytes.data() + 12), 16u);
  EXPECT_EQ(binary::get_u32(bytes.data() + 16), 16u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[20]), 0x00);  // 0.25f = 0x3e800000
  EXPECT_EQ(static_cast<unsigned char>(bytes[23]), 0x3e);
  const auto back = read_image_container(dir / "x.bin");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0], a);
  EXPECT_EQ(back[1], b);
  fs::remove_all(dir);
}
