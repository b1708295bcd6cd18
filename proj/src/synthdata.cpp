#include "cfcl/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "cfcl/binary_io.hpp"
#include "cfcl/error.hpp"
#include "cfcl/render.hpp"
#include "cfcl/serialize.hpp"

namespace cfcl {

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw DataError("unknown split '" + s + "'");
}

namespace {

std::size_t draw_categorical(Engine& eng, std::span<const double> probs) {
  const double u = uniform01(eng);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return probs.size() - 1;
}

void check_ratios(const std::array<double, 3>& r) {
  for (double v : r)
    if (!(v > 0.0)) throw ConfigError("split ratios must be positive");
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
}

}  // namespace

void DataConfig::validate() const {
  if (num_records <= 0) throw ConfigError("data.num_records must be positive");
  if (num_classes < 2) throw ConfigError("data.num_classes must be at least 2");
  if (image_shape.height < 16 || image_shape.width < 16) throw ConfigError("data.image_shape must be at least 16x16");
  if (scanners.empty()) throw ConfigError("data.scanners must not be empty");
  double total = 0.0;
  for (std::size_t i = 0; i < scanners.size(); ++i) {
    scanners[i].validate();
    if (scanners[i].scanner_id != static_cast<int>(i))
      throw ConfigError("data.scanners: scanner_id must equal list position");
    total += scanners[i].prevalence;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("scanner prevalences must sum to 1 (got " + std::to_string(total) + ")");
  for (std::size_t i = 0; i < holdout_scanners.size(); ++i) {
    holdout_scanners[i].spec.validate();
    if (holdout_scanners[i].spec.scanner_id != static_cast<int>(scanners.size() + i))
      throw ConfigError("data.holdout_scanners: scanner_id must continue after in-domain scanners");
    if (holdout_scanners[i].count <= 0) throw ConfigError("data.holdout_scanners: count must be positive");
  }
  if (!class_prevalences.empty()) {
    if (static_cast<int>(class_prevalences.size()) != num_classes)
      throw ConfigError("data.class_prevalences must have num_classes entries");
    double s = 0.0;
    for (double p : class_prevalences) {
      if (!(p > 0.0)) throw ConfigError("data.class_prevalences must be positive");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ConfigError("data.class_prevalences must sum to 1");
  }
  if (subject_min_images < 1 || subject_max_images < subject_min_images)
    throw ConfigError("data.subject_min_images/max_images invalid");
  if (!(label_scanner_correlation >= 0.0 && label_scanner_correlation <= 1.0))
    throw ConfigError("data.label_scanner_correlation outside [0, 1]");
  check_ratios(split_ratios);
}

const ScannerSpec& DatasetManifest::spec_for(int scanner_id) const {
  if (scanner_id >= 0 && scanner_id < num_scanners()) return scanner_specs[static_cast<std::size_t>(scanner_id)];
  const auto h = static_cast<std::size_t>(scanner_id - num_scanners());
  if (scanner_id >= 0 && h < holdout_specs.size()) return holdout_specs[h].spec;
  throw DomainError("unknown scanner " + std::to_string(scanner_id));
}

std::vector<std::size_t> DatasetManifest::indices(Split split, bool include_holdout) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].split == split && (include_holdout || !is_holdout_scanner(records[i].scanner_id))) out.push_back(i);
  return out;
}

DatasetManifest generate_dataset(const DataConfig& config, std::uint64_t master_seed) {
  config.validate();
  DatasetManifest m;
  m.scanner_specs = config.scanners;
  m.holdout_specs = config.holdout_scanners;
  m.master_seed = master_seed;
  m.num_classes = config.num_classes;
  m.image_shape = config.image_shape;

  std::vector<double> class_probs = config.class_prevalences;
  if (class_probs.empty()) class_probs.assign(static_cast<std::size_t>(config.num_classes), 1.0 / config.num_classes);
  std::vector<double> scanner_probs;
  for (const auto& s : config.scanners) scanner_probs.push_back(s.prevalence);

  Engine eng = make_engine(master_seed, "data-subjects");
  std::int64_t subject = 0;
  auto add_subject = [&](int scanner_id, int images) {
    for (int k = 0; k < images; ++k) {
      SampleRecord rec;
      rec.scanner_id = scanner_id;
      rec.subject_id = subject;
      if (config.label_scanner_correlation > 0.0 && uniform01(eng) < config.label_scanner_correlation)
        rec.class_label = scanner_id % config.num_classes;
      else
        rec.class_label = static_cast<int>(draw_categorical(eng, class_probs));
      rec.source_index = static_cast<std::int64_t>(m.records.size());
      m.records.push_back(std::move(rec));
    }
    ++subject;
  };

  const int span = config.subject_max_images - config.subject_min_images + 1;
  while (static_cast<int>(m.records.size()) < config.num_records) {
    const int remaining = config.num_records - static_cast<int>(m.records.size());
    const int n = std::min(remaining, config.subject_min_images + static_cast<int>(uniform_index(eng, static_cast<std::uint64_t>(span))));
    const int scanner = static_cast<int>(draw_categorical(eng, scanner_probs));
    add_subject(scanner, n);
  }
  for (const auto& h : config.holdout_scanners) {
    int left = h.count;
    while (left > 0) {
      const int n = std::min(left, config.subject_min_images + static_cast<int>(uniform_index(eng, static_cast<std::uint64_t>(span))));
      add_subject(h.spec.scanner_id, n);
      left -= n;
    }
  }

  // Pixels depend only on (seed, subject, position within subject, record index).
  std::map<std::int64_t, int> position;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    SampleRecord& rec = m.records[i];
    const int k = position[rec.subject_id]++;
    const auto render_seed = derive_seed(master_seed, "render", {static_cast<std::uint64_t>(rec.subject_id), static_cast<std::uint64_t>(k)});
    const Image base = render_base(rec.class_label, render_seed, config.image_shape, config.num_classes);
    rec.image = apply_scanner(base, m.spec_for(rec.scanner_id), derive_seed(master_seed, "scanner-noise", {i}));
  }

  split_by_subject(m, config.split_ratios, derive_seed(master_seed, "split"));
  return m;
}

void split_by_subject(DatasetManifest& manifest, const std::array<double, 3>& ratios, std::uint64_t seed) {
  check_ratios(ratios);
  std::vector<std::int64_t> subjects;
  std::map<std::int64_t, bool> seen;
  for (const auto& r : manifest.records) {
    if (manifest.is_holdout_scanner(r.scanner_id)) continue;
    if (!seen.emplace(r.subject_id, true).second) continue;
    subjects.push_back(r.subject_id);
  }
  if (subjects.size() < 3) throw DataError("split_by_subject: need at least 3 subjects, got " + std::to_string(subjects.size()));
  std::sort(subjects.begin(), subjects.end());

  Engine eng(derive_seed(seed, "split-shuffle"));
  for (std::size_t i = subjects.size() - 1; i > 0; --i) std::swap(subjects[i], subjects[uniform_index(eng, i + 1)]);

  const auto n = static_cast<double>(subjects.size());
  const auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * n));
  const auto n_val = static_cast<std::size_t>(std::llround(ratios[1] * n));
  std::map<std::int64_t, Split> assignment;
  for (std::size_t i = 0; i < subjects.size(); ++i)
    assignment[subjects[i]] = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);

  for (auto& r : manifest.records)
    r.split = manifest.is_holdout_scanner(r.scanner_id) ? Split::test : assignment.at(r.subject_id);
}

std::vector<double> make_weighted_sampler(const DatasetManifest& manifest, std::span<const std::size_t> subset) {
  std::vector<std::size_t> all;
  if (subset.empty()) {
    all.resize(manifest.records.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    subset = all;
  }
  if (subset.empty()) throw DataError("make_weighted_sampler: empty manifest");
  std::map<int, std::size_t> counts;
  for (std::size_t i : subset) ++counts[manifest.records.at(i).scanner_id];
  std::vector<double> weights;
  weights.reserve(subset.size());
  for (std::size_t i : subset) weights.push_back(1.0 / static_cast<double>(counts[manifest.records[i].scanner_id]));
  return weights;
}

WeightedSampler::WeightedSampler(std::span<const double> weights) {
  if (weights.empty()) throw DataError("WeightedSampler: no weights");
  double acc = 0.0;
  cumulative_.reserve(weights.size());
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw DataError("WeightedSampler: weights must be finite and nonnegative");
    acc += w;
    cumulative_.push_back(acc);
  }
  if (!(acc > 0.0)) throw DataError("WeightedSampler: weights sum to zero");
}

std::size_t WeightedSampler::draw(Engine& eng) const {
  const double u = uniform01(eng) * cumulative_.back();
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  return std::min(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
}

void write_image_container(const std::filesystem::path& path, std::span<const Image* const> images) {
  std::vector<char> out;
  const std::string magic = "CFCLIMG1";
  out.insert(out.end(), magic.begin(), magic.end());
  const ImageShape shape = images.empty() ? ImageShape{0, 0} : images.front()->shape();
  binary::put_u32(out, static_cast<std::uint32_t>(images.size()));
  binary::put_u32(out, static_cast<std::uint32_t>(shape.height));
  binary::put_u32(out, static_cast<std::uint32_t>(shape.width));
  for (const Image* img : images) {
    if (img->shape() != shape) throw DataError("write_image_container: mixed image shapes");
    binary::append_floats(out, img->pixels());
  }
  binary::write_file_atomic(path, out);
}

std::vector<Image> read_image_container(const std::filesystem::path& path) {
  const auto buf = binary::read_file(path);
  if (buf.size() < 20 || std::string(buf.data(), 8) != "CFCLIMG1") throw IoError("bad image container " + path.string());
  const auto count = binary::get_u32(buf.data() + 8);
  const ImageShape shape{static_cast<int>(binary::get_u32(buf.data() + 12)), static_cast<int>(binary::get_u32(buf.data() + 16))};
  if (buf.size() != 20 + std::size_t{4} * count * shape.size()) throw IoError("truncated image container " + path.string());
  std::vector<Image> images;
  images.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Image img(shape);
    binary::read_floats(buf.data() + 20 + std::size_t{4} * i * shape.size(), img.pixels());
    images.push_back(std::move(img));
  }
  return images;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream csv;
  csv << "index,class,scanner,subject,split,is_counterfactual,source_index\n";
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    csv << i << ',' << r.class_label << ',' << r.scanner_id << ',' << r.subject_id << ',' << to_string(r.split) << ','
        << (r.is_counterfactual ? 1 : 0) << ',' << r.source_index << '\n';
  }
  nlohmann::json meta{{"format_version", 1},
                      {"master_seed", m.master_seed},
                      {"num_classes", m.num_classes},
                      {"image_shape", {m.image_shape.height, m.image_shape.width}},
                      {"scanners", m.scanner_specs},
                      {"holdout_scanners", m.holdout_specs},
                      {"num_records", m.records.size()},
                      {"config_hash", m.config_hash}};
  std::vector<const Image*> images;
  images.reserve(m.records.size());
  for (const auto& r : m.records) images.push_back(&r.image);
  write_image_container(dir / "images.bin", images);
  binary::write_text_atomic(dir / "manifest.csv", csv.str());
  binary::write_text_atomic(dir / "manifest.json", meta.dump(2) + "\n");
}

DatasetManifest load_manifest(const std::filesystem::path& dir) {
  DatasetManifest m;
  const auto meta = nlohmann::json::parse(binary::read_text(dir / "manifest.json"));
  if (meta.at("format_version").get<int>() != 1) throw IoError("unsupported manifest version in " + dir.string());
  m.master_seed = meta.at("master_seed").get<std::uint64_t>();
  m.num_classes = meta.at("num_classes").get<int>();
  m.image_shape = {meta.at("image_shape")[0].get<int>(), meta.at("image_shape")[1].get<int>()};
  m.scanner_specs = meta.at("scanners").get<std::vector<ScannerSpec>>();
  m.holdout_specs = meta.at("holdout_scanners").get<std::vector<HoldoutScanner>>();
  m.config_hash = meta.at("config_hash").get<std::string>();

  auto images = read_image_container(dir / "images.bin");
  std::istringstream csv(binary::read_text(dir / "manifest.csv"));
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw IoError("malformed manifest row: " + line);
    SampleRecord r;
    const auto index = std::stoull(f[0]);
    r.class_label = std::stoi(f[1]);
    r.scanner_id = std::stoi(f[2]);
    r.subject_id = std::stoll(f[3]);
    r.split = split_from_string(f[4]);
    r.is_counterfactual = f[5] == "1";
    r.source_index = std::stoll(f[6]);
    if (index != m.records.size() || index >= images.size()) throw IoError("manifest rows out of order in " + dir.string());
    r.image = std::move(images[index]);
    m.records.push_back(std::move(r));
  }
  if (m.records.size() != images.size()) throw IoError("manifest/image count mismatch in " + dir.string());
  return m;
}

bool manifests_identical(const DatasetManifest& a, const DatasetManifest& b) {
  if (a.records.size() != b.records.size() || a.master_seed != b.master_seed || a.num_classes != b.num_classes ||
      a.image_shape != b.image_shape)
    return false;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto& x = a.records[i];
    const auto& y = b.records[i];
    if (x.class_label != y.class_label || x.scanner_id != y.scanner_id || x.subject_id != y.subject_id ||
        x.split != y.split || x.is_counterfactual != y.is_counterfactual || x.source_index != y.source_index)
      return false;
    if (std::memcmp(x.image.pixels().data(), y.image.pixels().data(), x.image.pixels().size_bytes()) != 0) return false;
  }
  return true;
}

}  // namespace cfcl
