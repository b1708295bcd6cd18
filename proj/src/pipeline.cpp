#include "cfcl/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cfcl/binary_io.hpp"
#include "cfcl/error.hpp"
#include "cfcl/hash.hpp"
#include "cfcl/serialize.hpp"
#include "cfcl/torch_util.hpp"

namespace cfcl {

namespace fs = std::filesystem;

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  nlohmann::json pre = c.pretrain;
  pre.erase("strategy");
  j = nlohmann::json{{"data", c.data},          {"scm", c.scm},   {"augment", c.augment},
                     {"pretrain", pre},         {"eval", c.eval}, {"paths", {{"output_dir", c.paths.output_dir}}},
                     {"master_seed", c.master_seed}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  static const std::vector<std::string> known{"data", "scm", "augment", "pretrain", "eval", "paths", "master_seed"};
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown config section '" + key + "'");
  ExperimentConfig d = default_config();
  c.data = j.contains("data") ? j.at("data").get<DataConfig>() : d.data;
  c.scm = j.contains("scm") ? j.at("scm").get<ScmConfig>() : d.scm;
  c.augment = j.contains("augment") ? j.at("augment").get<AugmentationPolicy>() : d.augment;
  c.pretrain = j.contains("pretrain") ? j.at("pretrain").get<PretrainConfig>() : d.pretrain;
  c.pretrain.strategy = Strategy::simclr;
  c.eval = j.contains("eval") ? j.at("eval").get<ProbeConfig>() : d.eval;
  c.paths.output_dir = j.contains("paths") ? j.at("paths").value("output_dir", d.paths.output_dir) : d.paths.output_dir;
  c.master_seed = j.value("master_seed", d.master_seed);
}

void ExperimentConfig::validate() const {
  data.validate();
  scm.validate();
  augment.validate();
  pretrain.validate();
  eval.validate();
  if (augment.output_shape != data.image_shape) throw ConfigError("augment.output_shape must equal data.image_shape");
  if (data.scanners.size() < 2) throw ConfigError("data.scanners: counterfactual pairing needs at least 2 scanners");
}

std::string ExperimentConfig::config_hash() const {
  nlohmann::json j = *this;
  j.erase("paths");
  return hash_hex(j.dump());
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.data.num_records = 20000;
  c.data.image_shape = {32, 32};
  c.data.num_classes = 4;
  c.data.class_prevalences = {0.1, 0.4, 0.4, 0.1};
  ScannerSpec s0 = ScannerSpec::identity();
  s0.scanner_id = 0;
  s0.name = "majority";
  s0.noise_sigma = 0.02;
  s0.prevalence = 0.90;
  ScannerSpec s1 = ScannerSpec::identity();
  s1.scanner_id = 1;
  s1.name = "bright-vignette";
  s1.gamma = 0.6;
  s1.contrast_gain = 0.8;
  s1.brightness_offset = 0.1;
  s1.noise_sigma = 0.02;
  s1.vignette_strength = 0.5;
  s1.watermark = true;
  s1.prevalence = 0.05;
  ScannerSpec s2 = ScannerSpec::identity();
  s2.scanner_id = 2;
  s2.name = "dark-blur";
  s2.gamma = 1.8;
  s2.contrast_gain = 1.3;
  s2.brightness_offset = -0.1;
  s2.noise_sigma = 0.02;
  s2.blur_radius = 0.8;
  s2.prevalence = 0.05;
  c.data.scanners = {s0, s1, s2};
  c.augment.output_shape = c.data.image_shape;
  c.master_seed = 20240917;
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(binary::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  ExperimentConfig c;
  try {
    c = j.get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  c.validate();
  return c;
}

void save_config(const ExperimentConfig& config, const fs::path& path) {
  nlohmann::json j = config;
  binary::write_text_atomic(path, j.dump(2) + "\n");
}

namespace {

std::string section_hash(const nlohmann::json& j) { return hash_hex(j.dump()); }

std::string combine(std::initializer_list<std::string> parts) {
  Fnv1a h;
  for (const auto& p : parts) {
    h.update(p);
    h.update(std::string_view("\x1f", 1));
  }
  return h.hex();
}

std::string file_hash(const fs::path& p) {
  Fnv1a h;
  if (fs::is_directory(p)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(p))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      h.update(f.filename().string());
      const auto bytes = binary::read_file(f);
      h.update(std::as_bytes(std::span<const char>(bytes)));
    }
  } else {
    const auto bytes = binary::read_file(p);
    h.update(std::as_bytes(std::span<const char>(bytes)));
  }
  return h.hex();
}

std::string stage_key(const std::string& stage, std::optional<Strategy> s) { return s ? stage + ":" + to_string(*s) : stage; }

bool needs_store(Strategy s) { return s != Strategy::simclr; }

}  // namespace

std::string lineage_hash(const ExperimentConfig& c, const std::string& stage, std::optional<Strategy> strategy) {
  const std::string seed = std::to_string(c.master_seed);
  const std::string data = combine({"generate-data", section_hash(c.data), seed});
  if (stage == "generate-data") return data;
  const std::string scm = combine({"train-scm", data, section_hash(c.scm)});
  if (stage == "train-scm") return scm;
  if (stage == "build-cf-store") return combine({"build-cf-store", scm});
  auto pretrain_key = [&](Strategy s) {
    nlohmann::json pre = c.pretrain;
    pre["strategy"] = to_string(s);
    const std::string upstream = needs_store(s) ? lineage_hash(c, "build-cf-store") : data;
    return combine({"pretrain", upstream, section_hash(c.augment), section_hash(pre), seed});
  };
  if (stage == "pretrain" || stage == "probe" || stage == "finetune") {
    if (!strategy) throw DomainError("lineage_hash: stage " + stage + " needs a strategy");
    const std::string pre = pretrain_key(*strategy);
    if (stage == "pretrain") return pre;
    return combine({stage, pre, section_hash(c.eval)});
  }
  if (stage == "sweep" || stage == "report") {
    std::string all;
    for (Strategy s : all_strategies()) all += pretrain_key(s);
    const std::string sweep = combine({"sweep", all, section_hash(c.eval)});
    if (stage == "sweep") return sweep;
    return combine({"report", sweep, scm});
  }
  throw ConfigError("unknown stage '" + stage + "'");
}

std::string encoder_family_hash(const ExperimentConfig& c) {
  nlohmann::json pre = c.pretrain;
  pre.erase("strategy");
  return combine({"encoder-family", lineage_hash(c, "build-cf-store"), section_hash(c.augment), section_hash(pre),
                  std::to_string(c.master_seed)});
}

std::vector<int> underrepresented_scanners(const DataConfig& data) {
  std::vector<int> out;
  const double uniform = 1.0 / static_cast<double>(data.scanners.size());
  for (const auto& s : data.scanners)
    if (s.prevalence < uniform) out.push_back(s.scanner_id);
  return out;
}

fs::path resolve_output_dir(const ExperimentConfig& config, const std::optional<std::string>& override_dir) {
  fs::path p = override_dir ? fs::path(*override_dir) : fs::path(config.paths.output_dir);
  if (p.is_relative())
    if (const char* root = std::getenv("CFCL_CACHE_ROOT"); root && *root) p = fs::path(root) / p;
  return p;
}

// ---------------------------------------------------------------------------
// Ledger

void RunLedger::append(const nlohmann::json& entry) const {
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot open run ledger " + path_.string());
  out << entry.dump() << '\n';
  out.flush();
  if (!out) throw IoError("cannot append to run ledger " + path_.string());
}

std::vector<nlohmann::json> RunLedger::entries() const {
  std::vector<nlohmann::json> out;
  if (!fs::exists(path_)) return out;
  std::istringstream in(binary::read_text(path_));
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(ExperimentConfig config, fs::path output_dir, std::function<void(const std::string&)> log)
    : config_(std::move(config)), dir_(std::move(output_dir)), log_(std::move(log)) {
  config_.validate();
  configure_torch_determinism();
}

fs::path Pipeline::stage_dir(const std::string& stage) const {
  if (stage == "generate-data") return dir_ / "data";
  if (stage == "train-scm") return dir_ / "scm";
  if (stage == "build-cf-store") return dir_ / "store";
  return dir_ / stage;
}

fs::path Pipeline::checkpoint_path(Strategy s) const { return stage_dir("pretrain") / (to_string(s) + ".pt"); }

fs::path Pipeline::stamp_path(const std::string& stage, std::optional<Strategy> s) const {
  return dir_ / "stamps" / (stage_key(stage, s) + ".json");
}

bool Pipeline::stamp_current(const std::string& stage, std::optional<Strategy> s) const {
  const auto p = stamp_path(stage, s);
  if (!fs::exists(p)) return false;
  const auto stamp = nlohmann::json::parse(binary::read_text(p));
  if (stamp.at("lineage_hash").get<std::string>() != lineage_hash(config_, stage, s)) return false;
  for (const auto& [file, hash] : stamp.at("outputs").items()) {
    const fs::path f = dir_ / file;
    if (!fs::exists(f) || file_hash(f) != hash.get<std::string>()) return false;
  }
  return true;
}

void Pipeline::require(const std::string& stage, std::optional<Strategy> s) const {
  const std::string invocation = s ? stage + " --strategy " + to_string(*s) : stage;
  const auto p = stamp_path(stage, s);
  if (!fs::exists(p))
    throw MissingArtifactError(stage, "missing upstream artifact of stage '" + stage_key(stage, s) + "' in " + dir_.string() +
                                          "; run `" + invocation + "` first");
  const auto stamp = nlohmann::json::parse(binary::read_text(p));
  if (stamp.at("lineage_hash").get<std::string>() != lineage_hash(config_, stage, s))
    throw StaleArtifactError("artifact of stage '" + stage_key(stage, s) + "' was produced by a different configuration; re-run `" +
                             invocation + "`");
  for (const auto& [file, hash] : stamp.at("outputs").items()) {
    const fs::path f = dir_ / file;
    if (!fs::exists(f))
      throw MissingArtifactError(stage, "artifact " + f.string() + " is missing; re-run `" + invocation + "`");
    if (file_hash(f) != hash.get<std::string>())
      throw StaleArtifactError("artifact " + f.string() + " does not match its recorded hash; re-run `" + invocation + "`");
  }
}

void Pipeline::write_stamp(const std::string& stage, std::optional<Strategy> s, const std::vector<fs::path>& outputs) const {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& o : outputs) out[fs::relative(o, dir_).generic_string()] = file_hash(o);
  nlohmann::json stamp{{"stage", stage_key(stage, s)},
                       {"lineage_hash", lineage_hash(config_, stage, s)},
                       {"config_hash", config_.config_hash()},
                       {"outputs", out}};
  fs::create_directories(stamp_path(stage, s).parent_path());
  binary::write_text_atomic(stamp_path(stage, s), stamp.dump(2) + "\n");
}

StageResult Pipeline::run_stage(const std::string& stage, std::optional<Strategy> strategy) {
  if (std::find(stage_names().begin(), stage_names().end(), stage) == stage_names().end())
    throw ConfigError("unknown stage '" + stage + "'");
  const bool per_strategy = stage == "pretrain" || stage == "probe" || stage == "finetune";
  if (!per_strategy) return execute(stage, std::nullopt);
  if (strategy) return execute(stage, strategy);
  StageResult combined{stage, true, {}, 0.0};
  for (Strategy s : all_strategies()) {
    auto r = execute(stage, s);
    combined.cache_hit = combined.cache_hit && r.cache_hit;
    combined.outputs.insert(combined.outputs.end(), r.outputs.begin(), r.outputs.end());
    combined.seconds += r.seconds;
  }
  return combined;
}

std::vector<StageResult> Pipeline::run_all() {
  std::vector<StageResult> out;
  for (const auto& stage : stage_names()) out.push_back(run_stage(stage));
  return out;
}

StageResult Pipeline::execute(const std::string& stage, std::optional<Strategy> s) {
  const auto start = std::chrono::steady_clock::now();
  StageResult result{stage_key(stage, s), false, {}, 0.0};
  nlohmann::json entry{{"stage", stage},
                       {"strategy", s ? nlohmann::json(to_string(*s)) : nlohmann::json(nullptr)},
                       {"lineage_hash", lineage_hash(config_, stage, s)},
                       {"config_hash", config_.config_hash()}};
  if (stamp_current(stage, s)) {
    result.cache_hit = true;
    const auto stamp = nlohmann::json::parse(binary::read_text(stamp_path(stage, s)));
    for (const auto& [file, hash] : stamp.at("outputs").items()) result.outputs.push_back(dir_ / file);
    entry["cache_hit"] = true;
    entry["outputs"] = stamp.at("outputs");
    entry["seconds"] = 0.0;
    ledger().append(entry);
    if (log_) log_(stage_key(stage, s) + ": cache hit, nothing to do");
    return result;
  }
  if (log_) log_(stage_key(stage, s) + ": running");

  nlohmann::json inputs = nlohmann::json::object();
  auto need = [&](const std::string& up, std::optional<Strategy> us = std::nullopt) {
    require(up, us);
    inputs[stage_key(up, us)] = lineage_hash(config_, up, us);
  };
  if (stage == "generate-data") {
    result.outputs = generate_data();
  } else if (stage == "train-scm") {
    need("generate-data");
    result.outputs = train_scm_stage();
  } else if (stage == "build-cf-store") {
    need("generate-data");
    need("train-scm");
    result.outputs = build_store_stage();
  } else if (stage == "pretrain") {
    need("generate-data");
    if (needs_store(*s)) need("build-cf-store");
    result.outputs = pretrain_stage(*s);
  } else if (stage == "probe" || stage == "finetune") {
    need("generate-data");
    need("pretrain", s);
    result.outputs = stage == "probe" ? probe_stage(*s) : finetune_stage(*s);
  } else if (stage == "sweep") {
    need("generate-data");
    for (Strategy x : all_strategies()) need("pretrain", x);
    result.outputs = sweep_stage();
  } else if (stage == "report") {
    need("generate-data");
    need("train-scm");
    need("sweep");
    for (Strategy x : all_strategies()) need("pretrain", x);
    result.outputs = report_stage();
  }
  write_stamp(stage, s, result.outputs);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  nlohmann::json outputs = nlohmann::json::object();
  for (const auto& o : result.outputs) outputs[fs::relative(o, dir_).generic_string()] = file_hash(o);
  entry["cache_hit"] = false;
  entry["inputs"] = inputs;
  entry["outputs"] = outputs;
  entry["seconds"] = result.seconds;
  ledger().append(entry);
  if (log_) log_(stage_key(stage, s) + ": done in " + std::to_string(result.seconds) + " s");
  return result;
}

std::vector<fs::path> Pipeline::generate_data() {
  auto manifest = generate_dataset(config_.data, config_.master_seed);
  manifest.config_hash = lineage_hash(config_, "generate-data");
  const fs::path dir = stage_dir("generate-data");
  save_manifest(manifest, dir);
  return {dir / "manifest.csv", dir / "manifest.json", dir / "images.bin"};
}

namespace {

DatasetManifest load_data(const fs::path& dir, const ExperimentConfig& config) {
  auto m = load_manifest(dir);
  if (m.config_hash != lineage_hash(config, "generate-data"))
    throw StaleArtifactError("dataset in " + dir.string() + " was generated from a different configuration; re-run `generate-data`");
  return m;
}

std::string csv_series(const std::string& header, const std::vector<double>& values) {
  std::ostringstream os;
  os << "index," << header << '\n';
  char buf[40];
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", values[i]);
    os << i << ',' << buf << '\n';
  }
  return os.str();
}

}  // namespace

std::vector<fs::path> Pipeline::train_scm_stage() {
  const auto manifest = load_data(stage_dir("generate-data"), config_);
  const fs::path dir = stage_dir("train-scm");
  fs::create_directories(dir);
  auto model = train_scm(manifest, config_.scm, derive_seed(config_.master_seed, "train-scm"), log_);
  model.config_hash = lineage_hash(config_, "train-scm");
  save_generative_model(model, dir / "model.pt");
  binary::write_text_atomic(dir / "elbo_trace.csv", csv_series("elbo", model.elbo_trace));

  auto classifier = train_domain_classifier(manifest, config_.scm, derive_seed(config_.master_seed, "domain-classifier"), log_);
  nlohmann::json eff{{"config_hash", model.config_hash},
                     {"classifier_val_accuracy", classifier.val_accuracy},
                     {"held_out", "in-domain test split"}};
  try {
    const auto held_out = manifest.indices(Split::test);
    const auto rep = effectiveness(model, manifest, held_out, classifier, derive_seed(config_.master_seed, "effectiveness"));
    eff["effectiveness"] = rep.effectiveness;
    eff["num_counterfactuals"] = rep.num_counterfactuals;
    eff["per_target"] = rep.per_target;
    if (log_) log_("effectiveness " + std::to_string(rep.effectiveness));
  } catch (const DomainError& e) {
    eff["effectiveness"] = nullptr;
    eff["refused"] = e.what();
  }
  binary::write_text_atomic(dir / "effectiveness.json", eff.dump(2) + "\n");
  return {dir / "model.pt", dir / "elbo_trace.csv", dir / "effectiveness.json"};
}

std::vector<fs::path> Pipeline::build_store_stage() {
  const auto manifest = load_data(stage_dir("generate-data"), config_);
  auto model = load_generative_model(stage_dir("train-scm") / "model.pt");
  const fs::path dir = stage_dir("build-cf-store");
  if (fs::exists(dir)) fs::remove_all(dir);
  build_store(model, manifest, dir, derive_seed(config_.master_seed, "build-cf-store"), lineage_hash(config_, "build-cf-store"));
  return {dir};
}

std::vector<fs::path> Pipeline::pretrain_stage(Strategy s) {
  const auto manifest = load_data(stage_dir("generate-data"), config_);
  std::optional<CounterfactualStore> store;
  if (needs_store(s)) {
    if (!fs::exists(stage_dir("build-cf-store") / "meta.json"))
      throw MissingArtifactError("build-cf-store", "strategy " + to_string(s) + " needs the counterfactual store; run `build-cf-store` first");
    store = CounterfactualStore::open(stage_dir("build-cf-store"));
    if (store->config_hash() != lineage_hash(config_, "build-cf-store"))
      throw StaleArtifactError("counterfactual store was built from a different configuration; re-run `build-cf-store`");
  }
  PretrainConfig pc = config_.pretrain;
  pc.strategy = s;
  // Same seed for every strategy: identical initialization and shuffles.
  auto ck = pretrain(manifest, store ? &*store : nullptr, pc, config_.augment, derive_seed(config_.master_seed, "pretrain"), log_);
  ck.config_hash = encoder_family_hash(config_);
  const fs::path path = checkpoint_path(s);
  save_encoder_checkpoint(ck, path);
  const fs::path trace = stage_dir("pretrain") / (to_string(s) + "_loss.csv");
  std::ostringstream os;
  os << "step,mean,total\n";
  char buf[80];
  for (std::size_t i = 0; i < ck.loss_trace.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", i, ck.loss_trace[i], ck.loss_trace_total[i]);
    os << buf;
  }
  binary::write_text_atomic(trace, os.str());
  return {path, trace};
}

namespace {

EncoderCheckpoint load_family_checkpoint(const fs::path& path, const ExperimentConfig& config) {
  auto ck = load_encoder_checkpoint(path);
  if (ck.config_hash != encoder_family_hash(config))
    throw StaleArtifactError("encoder checkpoint " + path.string() + " belongs to a different configuration; re-run `pretrain`");
  return ck;
}

}  // namespace

std::vector<fs::path> Pipeline::probe_stage(Strategy s) {
  const auto manifest = load_data(stage_dir("generate-data"), config_);
  const auto ck = load_family_checkpoint(checkpoint_path(s), config_);
  ProbeConfig pc = config_.eval;
  pc.mode = ProbeMode::linear_probe;
  const auto report = linear_probe(ck, manifest, pc, to_string(s));
  const fs::path dir = stage_dir("probe") / to_string(s);
  fs::create_directories(dir);
  write_rows_csv(report.rows, dir / "results.csv");
  write_aggregates_csv(report.aggregates, dir / "aggregates.csv");
  return {dir / "results.csv", dir / "aggregates.csv"};
}

std::vector<fs::path> Pipeline::finetune_stage(Strategy s) {
  const auto manifest = load_data(stage_dir("generate-data"), config_);
  const auto ck = load_family_checkpoint(checkpoint_path(s), config_);
  ProbeConfig pc = config_.eval;
  pc.mode = ProbeMode::finetune;
  auto report = finetune(ck, manifest, pc, to_string(s));
  pc.mode = ProbeMode::supervised_baseline;
  const auto base = finetune(ck, manifest, pc, "supervised");
  report.rows.insert(report.rows.end(), base.rows.begin(), base.rows.end());
  report.aggregates = aggregate_rows(report.rows);
  const fs::path dir = stage_dir("finetune") / to_string(s);
  fs::create_directories(dir);
  write_rows_csv(report.rows, dir / "results.csv");
  write_aggregates_csv(report.aggregates, dir / "aggregates.csv");
  return {dir / "results.csv", dir / "aggregates.csv"};
}

std::vector<fs::path> Pipeline::sweep_stage() {
  const auto manifest = load_data(stage_dir("generate-data"), config_);
  std::vector<EncoderCheckpoint> cks;
  for (Strategy s : all_strategies()) cks.push_back(load_family_checkpoint(checkpoint_path(s), config_));
  std::vector<NamedEncoder> named;
  for (std::size_t i = 0; i < cks.size(); ++i) named.push_back({to_string(all_strategies()[i]), &cks[i]});
  const fs::path dir = stage_dir("sweep");
  if (fs::exists(dir)) fs::remove_all(dir);
  label_efficiency_sweep(named, manifest, config_.eval, dir, config_.config_hash());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<fs::path> Pipeline::report_stage() {
  const fs::path dir = stage_dir("report");
  if (fs::exists(dir)) fs::remove_all(dir);
  compare_strategies(config_, dir_, log_);
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Comparison

nlohmann::json StrategyComparison::to_json() const {
  nlohmann::json cells_json = nlohmann::json::array();
  for (const auto& c : cells) {
    nlohmann::json auc = nlohmann::json::object();
    for (std::size_t i = 0; i < strategies.size(); ++i) auc[strategies[i]] = c.mean_auc[i];
    cells_json.push_back({{"variant", c.variant},
                          {"group", c.group},
                          {"budget", c.budget},
                          {"mean_auc", auc},
                          {"delta_cf_vs_simclr", c.delta_vs_simclr},
                          {"delta_cf_vs_simclr_plus", c.delta_vs_simclr_plus}});
  }
  nlohmann::json sep = nlohmann::json::object();
  for (std::size_t i = 0; i < strategies.size(); ++i) sep[strategies[i]] = domain_separation[i];
  return {{"strategies", strategies},
          {"underrepresented_scanners", underrepresented_scanners},
          {"cells", cells_json},
          {"domain_separation", sep},
          {"effectiveness", effectiveness},
          {"flags",
           {{"cf_best_on_underrepresented_at_low_budget", cf_best_underrepresented_low_budget},
            {"cf_less_domain_separated", cf_less_domain_separated}}},
          {"config_hash", config_hash}};
}

StrategyComparison compare_strategies(const ExperimentConfig& config, const fs::path& output_dir,
                                      const std::function<void(const std::string&)>& log) {
  const auto manifest = load_data(output_dir / "data", config);
  StrategyComparison cmp;
  cmp.config_hash = config.config_hash();
  cmp.underrepresented_scanners = underrepresented_scanners(config.data);
  std::vector<EncoderCheckpoint> cks;
  for (Strategy s : all_strategies()) {
    cmp.strategies.push_back(to_string(s));
    const fs::path p = output_dir / "pretrain" / (to_string(s) + ".pt");
    if (!fs::exists(p)) throw MissingArtifactError("pretrain", "no checkpoint for " + to_string(s) + "; run `pretrain --strategy " + to_string(s) + "` first");
    cks.push_back(load_encoder_checkpoint(p));
  }
  for (const auto& ck : cks)
    if (ck.config_hash != cks.front().config_hash)
      throw StaleArtifactError("encoder checkpoints come from different configurations (" + cks.front().config_hash + " vs " + ck.config_hash +
                               "); refusing to compare");
  if (cks.front().config_hash != encoder_family_hash(config))
    throw StaleArtifactError("encoder checkpoints do not match the current configuration; re-run `pretrain`");

  const auto rows = read_rows_csv(output_dir / "sweep" / "results.csv");
  const auto aggs = aggregate_rows(rows);
  auto mean_of = [&](const std::string& variant, const std::string& group, double budget, const std::string& enc) -> std::optional<double> {
    for (const auto& a : aggs)
      if (a.variant == variant && a.group == group && a.budget == budget && a.encoder == enc && a.mode == "linear-probe") return a.mean;
    return std::nullopt;
  };
  for (const auto& a : aggs) {
    if (a.encoder != cmp.strategies.front()) continue;
    StrategyComparison::Cell cell{a.variant, a.group, a.budget, {}, 0.0, 0.0};
    bool complete = true;
    for (const auto& s : cmp.strategies) {
      const auto m = mean_of(a.variant, a.group, a.budget, s);
      if (!m) complete = false;
      cell.mean_auc.push_back(m.value_or(NAN));
    }
    if (!complete) continue;
    cell.delta_vs_simclr = cell.mean_auc[2] - cell.mean_auc[0];
    cell.delta_vs_simclr_plus = cell.mean_auc[2] - cell.mean_auc[1];
    cmp.cells.push_back(cell);
  }

  // Directional claim at low budgets: mean over under-represented scanner groups.
  bool any = false, holds = true;
  for (double budget : config.eval.budgets) {
    if (budget > 0.1) continue;
    std::vector<double> mean(3, 0.0);
    std::size_t count = 0;
    for (const auto& c : cmp.cells) {
      if (c.variant != "in-domain" || c.budget != budget) continue;
      for (int s : cmp.underrepresented_scanners)
        if (c.group == "scanner" + std::to_string(s)) {
          for (std::size_t i = 0; i < 3; ++i) mean[i] += c.mean_auc[i];
          ++count;
        }
    }
    if (count == 0) continue;
    any = true;
    holds = holds && mean[2] >= mean[0] && mean[2] >= mean[1];
  }
  cmp.cf_best_underrepresented_low_budget = any && holds;

  const fs::path dir = output_dir / "report";
  fs::create_directories(dir);
  const auto test = manifest.indices(Split::test);
  std::ostringstream sep_csv;
  sep_csv << "strategy,k,domain_separation\n";
  char buf[64];
  for (std::size_t i = 0; i < cks.size(); ++i) {
    const auto dump = embed(*cks[i].encoder, manifest, test);
    cmp.domain_separation.push_back(domain_separation(dump, config.eval.knn_k));
    std::snprintf(buf, sizeof buf, "%.17g", cmp.domain_separation.back());
    sep_csv << cmp.strategies[i] << ',' << config.eval.knn_k << ',' << buf << '\n';
    tsne_plot(dump, derive_seed(config.master_seed, "tsne"), dir / ("tsne_" + cmp.strategies[i] + ".svg"),
              "t-SNE of test embeddings (" + cmp.strategies[i] + ")", cmp.config_hash, config.eval.tsne_max_points);
    if (log) log("domain separation " + cmp.strategies[i] + " " + std::to_string(cmp.domain_separation.back()));
  }
  cmp.cf_less_domain_separated = cmp.domain_separation[2] < cmp.domain_separation[0];
  binary::write_text_atomic(dir / "domain_separation.csv", sep_csv.str());

  const fs::path eff_path = output_dir / "scm" / "effectiveness.json";
  cmp.effectiveness = fs::exists(eff_path) ? nlohmann::json::parse(binary::read_text(eff_path)) : nlohmann::json(nullptr);

  std::ostringstream deltas;
  deltas << "variant,group,budget";
  for (const auto& s : cmp.strategies) deltas << ',' << s;
  deltas << ",delta_cf_vs_simclr,delta_cf_vs_simclr_plus\n";
  auto g17 = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& c : cmp.cells) {
    deltas << c.variant << ',' << c.group << ',' << g17(c.budget);
    for (double v : c.mean_auc) deltas << ',' << g17(v);
    deltas << ',' << g17(c.delta_vs_simclr) << ',' << g17(c.delta_vs_simclr_plus) << '\n';
  }
  binary::write_text_atomic(dir / "auc_deltas.csv", deltas.str());
  binary::write_text_atomic(dir / "comparison.json", cmp.to_json().dump(2) + "\n");

  std::ostringstream md;
  md << "# Strategy comparison\n\nconfig_hash: " << cmp.config_hash << "\n\n";
  md << "| variant | group | budget |";
  for (const auto& s : cmp.strategies) md << ' ' << s << " |";
  md << " cf - simclr | cf - simclr-plus |\n|---|---|---|---|---|---|---|---|\n";
  for (const auto& c : cmp.cells) {
    std::snprintf(buf, sizeof buf, "%g", c.budget);
    md << "| " << c.variant << " | " << c.group << " | " << buf << " |";
    for (double v : c.mean_auc) {
      std::snprintf(buf, sizeof buf, " %.4f |", v);
      md << buf;
    }
    std::snprintf(buf, sizeof buf, " %+.4f | %+.4f |\n", c.delta_vs_simclr, c.delta_vs_simclr_plus);
    md << buf;
  }
  md << "\n## Domain separation (kNN k=" << config.eval.knn_k << ", balanced accuracy)\n\n";
  for (std::size_t i = 0; i < cmp.strategies.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.4f", cmp.domain_separation[i]);
    md << "- " << cmp.strategies[i] << ": " << buf << '\n';
  }
  md << "\n## Flags\n\n- cf-simclr best on under-represented scanners at budgets <= 0.1: "
     << (cmp.cf_best_underrepresented_low_budget ? "yes" : "no") << "\n- cf-simclr less domain-separated than simclr: "
     << (cmp.cf_less_domain_separated ? "yes" : "no") << '\n';
  if (!cmp.effectiveness.is_null() && cmp.effectiveness.contains("effectiveness") && !cmp.effectiveness["effectiveness"].is_null()) {
    std::snprintf(buf, sizeof buf, "%.4f", cmp.effectiveness["effectiveness"].get<double>());
    md << "\nCounterfactual effectiveness: " << buf << '\n';
  }
  binary::write_text_atomic(dir / "comparison.md", md.str());
  return cmp;
}

}  // namespace cfcl
