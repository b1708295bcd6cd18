#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfcl/image.hpp"
#include "cfcl/rng.hpp"
#include "cfcl/scanner.hpp"

namespace cfcl {

enum class Split : std::uint8_t { train, val, test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct SampleRecord {
  Image image;
  int class_label = 0;
  int scanner_id = 0;
  std::int64_t subject_id = 0;
  Split split = Split::train;
  bool is_counterfactual = false;
  std::int64_t source_index = 0;
};

// A domain kept out of training entirely; its records are all test records
// and are reported as an out-of-distribution variant.
struct HoldoutScanner {
  ScannerSpec spec;
  int count = 0;
};

struct DataConfig {
  int num_records = 20000;
  ImageShape image_shape{32, 32};
  int num_classes = 4;
  std::vector<double> class_prevalences;  // empty = uniform
  std::vector<ScannerSpec> scanners;
  std::vector<HoldoutScanner> holdout_scanners;
  int subject_min_images = 2;
  int subject_max_images = 4;
  std::array<double, 3> split_ratios{0.8, 0.1, 0.1};
  // Probability that a record's class is tied to its scanner (scanner_id mod C)
  // instead of drawn from class_prevalences. 0 = independent.
  double label_scanner_correlation = 0.0;

  void validate() const;
};

struct DatasetManifest {
  std::vector<SampleRecord> records;
  std::vector<ScannerSpec> scanner_specs;
  std::vector<HoldoutScanner> holdout_specs;
  std::uint64_t master_seed = 0;
  int num_classes = 4;
  ImageShape image_shape{32, 32};
  std::string config_hash;

  int num_scanners() const noexcept { return static_cast<int>(scanner_specs.size()); }
  bool is_holdout_scanner(int scanner_id) const noexcept { return scanner_id >= num_scanners(); }
  const ScannerSpec& spec_for(int scanner_id) const;

  // Record indices in `split`; in-domain scanners only unless include_holdout.
  std::vector<std::size_t> indices(Split split, bool include_holdout = false) const;
};

// Deterministic in (config, master_seed). Records are ordered by subject.
// Holdout scanners are appended after the in-domain records.
DatasetManifest generate_dataset(const DataConfig& config, std::uint64_t master_seed);

// Assigns splits per subject: all records of a subject share one split.
// Holdout-scanner subjects always land in test.
void split_by_subject(DatasetManifest& manifest, const std::array<double, 3>& ratios, std::uint64_t seed);

// Per-record weights proportional to 1 / count(scanner) over `subset`
// (all records when empty).
std::vector<double> make_weighted_sampler(const DatasetManifest& manifest, std::span<const std::size_t> subset = {});

// Draws positions with probability proportional to the given weights.
class WeightedSampler {
 public:
  explicit WeightedSampler(std::span<const double> weights);
  std::size_t draw(Engine& eng) const;
  std::size_t size() const noexcept { return cumulative_.size(); }

 private:
  std::vector<double> cumulative_;
};

// Binary container: "CFCLIMG1", u32 count, u32 height, u32 width, then
// count*height*width float32, all little-endian, row-major per image.
void write_image_container(const std::filesystem::path& path, std::span<const Image* const> images);
std::vector<Image> read_image_container(const std::filesystem::path& path);

// Writes manifest.csv (one row per record), manifest.json (specs, seed,
// shape, config hash) and images.bin into `dir`.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& dir);
DatasetManifest load_manifest(const std::filesystem::path& dir);

// Subject and class draws depend on the seed only, so this is the
// reference used by tests for bit-exact regeneration.
bool manifests_identical(const DatasetManifest& a, const DatasetManifest& b);

}  // namespace cfcl
