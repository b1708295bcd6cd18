#pragma once

#include "json.hpp"

#include "cfcl/augment.hpp"
#include "cfcl/error.hpp"
#include "cfcl/scanner.hpp"
#include "cfcl/synthdata.hpp"

namespace cfcl {

inline void to_json(nlohmann::json& j, const ScannerSpec& s) {
  j = nlohmann::json{{"scanner_id", s.scanner_id},
                     {"name", s.name},
                     {"gamma", s.gamma},
                     {"contrast_gain", s.contrast_gain},
                     {"brightness_offset", s.brightness_offset},
                     {"noise_sigma", s.noise_sigma},
                     {"blur_radius", s.blur_radius},
                     {"vignette_strength", s.vignette_strength},
                     {"watermark", s.watermark},
                     {"prevalence", s.prevalence}};
}

inline void from_json(const nlohmann::json& j, ScannerSpec& s) {
  ScannerSpec d;
  s.scanner_id = j.value("scanner_id", d.scanner_id);
  s.name = j.value("name", d.name);
  s.gamma = j.value("gamma", d.gamma);
  s.contrast_gain = j.value("contrast_gain", d.contrast_gain);
  s.brightness_offset = j.value("brightness_offset", d.brightness_offset);
  s.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  s.blur_radius = j.value("blur_radius", d.blur_radius);
  s.vignette_strength = j.value("vignette_strength", d.vignette_strength);
  s.watermark = j.value("watermark", d.watermark);
  s.prevalence = j.value("prevalence", d.prevalence);
}

inline void to_json(nlohmann::json& j, const HoldoutScanner& h) {
  j = h.spec;
  j["count"] = h.count;
}

inline void from_json(const nlohmann::json& j, HoldoutScanner& h) {
  h.spec = j.get<ScannerSpec>();
  h.count = j.at("count").get<int>();
}

inline void to_json(nlohmann::json& j, const ImageShape& s) { j = nlohmann::json::array({s.height, s.width}); }

inline void from_json(const nlohmann::json& j, ImageShape& s) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("image_shape must be [height, width]");
  s.height = j[0].get<int>();
  s.width = j[1].get<int>();
}

inline void to_json(nlohmann::json& j, const AugmentationPolicy& p) {
  j = nlohmann::json{{"crop_scale", {p.crop_scale_lo, p.crop_scale_hi}},
                     {"hflip_prob", p.hflip_prob},
                     {"gain_delta", p.gain_delta},
                     {"offset_delta", p.offset_delta},
                     {"blur_prob", p.blur_prob},
                     {"blur_sigma_max", p.blur_sigma_max},
                     {"output_shape", p.output_shape}};
}

inline void from_json(const nlohmann::json& j, AugmentationPolicy& p) {
  AugmentationPolicy d;
  if (j.contains("crop_scale")) {
    p.crop_scale_lo = j.at("crop_scale").at(0).get<double>();
    p.crop_scale_hi = j.at("crop_scale").at(1).get<double>();
  } else {
    p.crop_scale_lo = d.crop_scale_lo;
    p.crop_scale_hi = d.crop_scale_hi;
  }
  p.hflip_prob = j.value("hflip_prob", d.hflip_prob);
  p.gain_delta = j.value("gain_delta", d.gain_delta);
  p.offset_delta = j.value("offset_delta", d.offset_delta);
  p.blur_prob = j.value("blur_prob", d.blur_prob);
  p.blur_sigma_max = j.value("blur_sigma_max", d.blur_sigma_max);
  p.output_shape = j.value("output_shape", d.output_shape);
}

inline void to_json(nlohmann::json& j, const DataConfig& c) {
  j = nlohmann::json{{"num_records", c.num_records},
                     {"image_shape", c.image_shape},
                     {"num_classes", c.num_classes},
                     {"class_prevalences", c.class_prevalences},
                     {"scanners", c.scanners},
                     {"holdout_scanners", c.holdout_scanners},
                     {"subject_min_images", c.subject_min_images},
                     {"subject_max_images", c.subject_max_images},
                     {"split_ratios", c.split_ratios},
                     {"label_scanner_correlation", c.label_scanner_correlation}};
}

inline void from_json(const nlohmann::json& j, DataConfig& c) {
  DataConfig d;
  c.num_records = j.value("num_records", d.num_records);
  c.image_shape = j.value("image_shape", d.image_shape);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.class_prevalences = j.value("class_prevalences", d.class_prevalences);
  c.scanners = j.value("scanners", d.scanners);
  c.holdout_scanners = j.value("holdout_scanners", d.holdout_scanners);
  c.subject_min_images = j.value("subject_min_images", d.subject_min_images);
  c.subject_max_images = j.value("subject_max_images", d.subject_max_images);
  c.split_ratios = j.value("split_ratios", d.split_ratios);
  c.label_scanner_correlation = j.value("label_scanner_correlation", d.label_scanner_correlation);
}

}  // namespace cfcl
