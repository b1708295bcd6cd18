#pragma once

#include <filesystem>
#include <string>
#include <unistd.h>

#include "cfcl/synthdata.hpp"

namespace cfcl::test {

// Three scanners with strong, easily separated styles; small enough to train in seconds.
inline DataConfig tiny_data_config(int records = 600) {
  DataConfig c;
  c.num_records = records;
  c.class_prevalences = {0.1, 0.4, 0.4, 0.1};
  ScannerSpec a = ScannerSpec::identity(0);
  a.name = "majority";
  a.prevalence = 0.6;
  a.noise_sigma = 0.02;
  ScannerSpec b = ScannerSpec::identity(1);
  b.name = "bright";
  b.prevalence = 0.2;
  b.gamma = 0.6;
  b.contrast_gain = 0.8;
  b.brightness_offset = 0.1;
  b.noise_sigma = 0.02;
  b.watermark = true;
  ScannerSpec d = ScannerSpec::identity(2);
  d.name = "dark";
  d.prevalence = 0.2;
  d.gamma = 1.8;
  d.contrast_gain = 1.3;
  d.brightness_offset = -0.1;
  d.noise_sigma = 0.02;
  d.blur_radius = 0.8;
  c.scanners = {a, b, d};
  return c;
}

class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("cfcl_" + name + "_" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace cfcl::test
