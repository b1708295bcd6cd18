#include "cfcl/evalharness.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "cfcl/binary_io.hpp"
#include "cfcl/error.hpp"
#include "cfcl/knn.hpp"
#include "cfcl/metrics.hpp"
#include "cfcl/plot.hpp"
#include "cfcl/rng.hpp"
#include "cfcl/torch_util.hpp"
#include "cfcl/tsne.hpp"

namespace cfcl {

namespace nn = torch::nn;

std::string to_string(ProbeMode m) {
  switch (m) {
    case ProbeMode::linear_probe: return "linear-probe";
    case ProbeMode::finetune: return "finetune";
    case ProbeMode::supervised_baseline: return "supervised-baseline";
  }
  return "?";
}

ProbeMode probe_mode_from_string(const std::string& s) {
  if (s == "linear-probe" || s == "linear_probe") return ProbeMode::linear_probe;
  if (s == "finetune") return ProbeMode::finetune;
  if (s == "supervised-baseline" || s == "supervised_baseline") return ProbeMode::supervised_baseline;
  throw ConfigError("unknown probe mode '" + s + "'");
}

void ProbeConfig::validate() const {
  if (budgets.empty()) throw ConfigError("eval.budgets must not be empty");
  for (double b : budgets)
    if (!(b > 0)) throw ConfigError("eval.budgets must be positive");
  for (double b : finetune_budgets)
    if (!(b > 0)) throw ConfigError("eval.finetune_budgets must be positive");
  if (seeds.empty()) throw ConfigError("eval.seeds must not be empty");
  if (max_epochs < 1 || !(tolerance >= 0) || !(learning_rate > 0)) throw ConfigError("eval probe optimizer settings invalid");
  if (finetune_epochs < 1 || finetune_batch_size < 2 || !(finetune_learning_rate > 0))
    throw ConfigError("eval finetune optimizer settings invalid");
  if (knn_k < 1) throw ConfigError("eval.knn_k must be at least 1");
  if (tsne_max_points < 10) throw ConfigError("eval.tsne_max_points too small");
}

void to_json(nlohmann::json& j, const ProbeConfig& c) {
  j = nlohmann::json{{"budgets", c.budgets},
                     {"seeds", c.seeds},
                     {"max_epochs", c.max_epochs},
                     {"tolerance", c.tolerance},
                     {"learning_rate", c.learning_rate},
                     {"finetune_epochs", c.finetune_epochs},
                     {"finetune_batch_size", c.finetune_batch_size},
                     {"finetune_learning_rate", c.finetune_learning_rate},
                     {"finetune_budgets", c.finetune_budgets},
                     {"knn_k", c.knn_k},
                     {"tsne_max_points", c.tsne_max_points}};
}

void from_json(const nlohmann::json& j, ProbeConfig& c) {
  ProbeConfig d;
  c.budgets = j.value("budgets", d.budgets);
  c.seeds = j.value("seeds", d.seeds);
  c.max_epochs = j.value("max_epochs", d.max_epochs);
  c.tolerance = j.value("tolerance", d.tolerance);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.finetune_epochs = j.value("finetune_epochs", d.finetune_epochs);
  c.finetune_batch_size = j.value("finetune_batch_size", d.finetune_batch_size);
  c.finetune_learning_rate = j.value("finetune_learning_rate", d.finetune_learning_rate);
  c.finetune_budgets = j.value("finetune_budgets", d.finetune_budgets);
  c.knn_k = j.value("knn_k", d.knn_k);
  c.tsne_max_points = j.value("tsne_max_points", d.tsne_max_points);
}

std::vector<MetricAggregate> aggregate_rows(const std::vector<MetricRow>& rows) {
  std::vector<MetricAggregate> out;
  std::vector<std::vector<double>> values;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const MetricAggregate& a) {
      return a.variant == r.variant && a.encoder == r.encoder && a.mode == r.mode && a.group == r.group && a.budget == r.budget;
    });
    if (it == out.end()) {
      out.push_back({r.variant, r.encoder, r.mode, r.group, r.budget, 0.0, std::nullopt, 0});
      values.emplace_back();
      it = out.end() - 1;
    }
    values[static_cast<std::size_t>(it - out.begin())].push_back(r.auc);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto ms = mean_stderr(values[i]);
    out[i].mean = ms.mean;
    out[i].stderr_ = ms.stderr_;
    out[i].num_seeds = ms.n;
  }
  return out;
}

std::size_t resolve_budget(double budget, std::size_t train_size) {
  if (!(budget > 0)) throw ConfigError("label budget must be positive");
  const std::size_t count = budget <= 1.0 ? static_cast<std::size_t>(std::llround(budget * static_cast<double>(train_size)))
                                          : static_cast<std::size_t>(std::llround(budget));
  if (count > train_size)
    throw ConfigError("label budget " + std::to_string(count) + " exceeds the train split (" + std::to_string(train_size) + ")");
  return count;
}

std::vector<std::size_t> stratified_subsample(const DatasetManifest& manifest, std::span<const std::size_t> pool, std::size_t count,
                                              std::uint64_t seed) {
  const auto c = static_cast<std::size_t>(manifest.num_classes);
  if (count < c)
    throw DomainError("label budget " + std::to_string(count) + " is smaller than the number of classes (" + std::to_string(c) + ")");
  if (count > pool.size()) throw DomainError("label budget exceeds the available records");
  std::vector<std::vector<std::size_t>> by_class(c);
  for (std::size_t i : pool) by_class[static_cast<std::size_t>(manifest.records[i].class_label)].push_back(i);

  std::size_t present = 0;
  for (const auto& v : by_class) present += !v.empty();
  // one per present class, the rest by largest remainder
  std::vector<std::size_t> alloc(c, 0);
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t assigned = 0;
  const double extra = static_cast<double>(count - present);
  const double total = static_cast<double>(pool.size());
  for (std::size_t k = 0; k < c; ++k) {
    if (by_class[k].empty()) continue;
    const double want = extra * static_cast<double>(by_class[k].size()) / total;
    alloc[k] = 1 + std::min(static_cast<std::size_t>(std::floor(want)), by_class[k].size() - 1);
    assigned += alloc[k];
    rema.push_back({want - std::floor(want), k});
  }
  std::stable_sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  while (assigned < count) {
    bool progressed = false;
    for (const auto& [r, k] : rema) {
      if (assigned == count) break;
      if (alloc[k] < by_class[k].size()) {
        ++alloc[k];
        ++assigned;
        progressed = true;
      }
    }
    if (!progressed) break;
  }

  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < c; ++k) {
    auto v = by_class[k];
    Engine eng = make_engine(seed, "budget-subsample", {k});
    for (std::size_t i = 0; i < alloc[k]; ++i) std::swap(v[i], v[i + uniform_index(eng, v.size() - i)]);
    out.insert(out.end(), v.begin(), v.begin() + static_cast<std::ptrdiff_t>(alloc[k]));
  }
  std::sort(out.begin(), out.end());
  return out;
}

EmbeddingDump embed(EncoderImpl& encoder, const DatasetManifest& manifest, std::span<const std::size_t> indices) {
  torch::NoGradGuard guard;
  encoder.eval();
  EmbeddingDump dump;
  dump.dim = static_cast<std::size_t>(encoder.arch().representation_dim);
  dump.values.reserve(indices.size() * dump.dim);
  for (std::size_t start = 0; start < indices.size(); start += 512) {
    const auto chunk = indices.subspan(start, std::min<std::size_t>(512, indices.size() - start));
    std::vector<const Image*> ptrs;
    for (std::size_t i : chunk) ptrs.push_back(&manifest.records[i].image);
    auto h = encoder.forward(images_to_tensor(ptrs)).contiguous();
    const float* p = h.data_ptr<float>();
    dump.values.insert(dump.values.end(), p, p + h.numel());
    for (std::size_t i : chunk) {
      dump.scanner.push_back(manifest.records[i].scanner_id);
      dump.class_label.push_back(manifest.records[i].class_label);
      dump.record.push_back(i);
    }
  }
  for (float v : dump.values)
    if (!std::isfinite(v)) throw NumericError("embed: encoder produced a non-finite representation");
  return dump;
}

void save_embeddings_csv(const EmbeddingDump& dump, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "record,scanner,class";
  for (std::size_t d = 0; d < dump.dim; ++d) os << ",h" << d;
  os << '\n';
  char buf[32];
  for (std::size_t r = 0; r < dump.rows(); ++r) {
    os << dump.record[r] << ',' << dump.scanner[r] << ',' << dump.class_label[r];
    for (std::size_t d = 0; d < dump.dim; ++d) {
      std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(dump.values[r * dump.dim + d]));
      os << buf;
    }
    os << '\n';
  }
  binary::write_text_atomic(path, os.str());
}

namespace {

struct EvalGroup {
  std::string variant, group;
  std::vector<std::size_t> rows;  // positions into the test list
};

// Test records: in-domain test split, then holdout scanners.
std::vector<std::size_t> test_records(const DatasetManifest& m) { return m.indices(Split::test, true); }

std::vector<EvalGroup> eval_groups(const DatasetManifest& m, std::span<const std::size_t> test) {
  std::vector<EvalGroup> groups;
  auto add = [&](const std::string& variant, const std::string& group, auto pred) {
    EvalGroup g{variant, group, {}};
    for (std::size_t i = 0; i < test.size(); ++i)
      if (pred(m.records[test[i]])) g.rows.push_back(i);
    if (!g.rows.empty()) groups.push_back(std::move(g));
  };
  add("in-domain", "all", [&](const SampleRecord& r) { return !m.is_holdout_scanner(r.scanner_id); });
  for (int s = 0; s < m.num_scanners(); ++s)
    add("in-domain", "scanner" + std::to_string(s), [s](const SampleRecord& r) { return r.scanner_id == s; });
  if (!m.holdout_specs.empty()) {
    add("ood", "all", [&](const SampleRecord& r) { return m.is_holdout_scanner(r.scanner_id); });
    for (std::size_t h = 0; h < m.holdout_specs.size(); ++h) {
      const int s = m.num_scanners() + static_cast<int>(h);
      add("ood", "scanner" + std::to_string(s), [s](const SampleRecord& r) { return r.scanner_id == s; });
    }
  }
  return groups;
}

void score_groups(const DatasetManifest& m, std::span<const std::size_t> test, const torch::Tensor& probs,
                  const std::vector<EvalGroup>& groups, MetricRow proto, std::vector<MetricRow>& out) {
  const int c = m.num_classes;
  auto p = probs.to(torch::kFloat64).contiguous();
  const double* data = p.data_ptr<double>();
  for (const auto& g : groups) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t r : g.rows) {
      scores.insert(scores.end(), data + r * static_cast<std::size_t>(c), data + (r + 1) * static_cast<std::size_t>(c));
      labels.push_back(m.records[test[r]].class_label);
    }
    // AUC is undefined without two classes; such a group gets no row.
    if (std::set<int>(labels.begin(), labels.end()).size() < 2) continue;
    MetricRow row = proto;
    row.variant = g.variant;
    row.group = g.group;
    row.auc = macro_ovr_auc(scores, labels, c).value;
    row.n = g.rows.size();
    out.push_back(row);
  }
}

torch::Tensor gather_rows(const EmbeddingDump& dump, std::span<const std::size_t> positions) {
  auto t = torch::empty({static_cast<std::int64_t>(positions.size()), static_cast<std::int64_t>(dump.dim)}, torch::kFloat32);
  float* p = t.data_ptr<float>();
  for (std::size_t i = 0; i < positions.size(); ++i)
    std::copy_n(dump.values.data() + positions[i] * dump.dim, dump.dim, p + i * dump.dim);
  return t;
}

torch::Tensor class_weight_tensor(const DatasetManifest& m, std::span<const std::size_t> subset) {
  std::vector<int> labels;
  for (std::size_t i : subset) labels.push_back(m.records[i].class_label);
  const auto w = inverse_frequency_weights(labels, m.num_classes);
  return torch::tensor(std::vector<double>(w.begin(), w.end()), torch::kFloat64).to(torch::kFloat32);
}

torch::Tensor label_tensor(const DatasetManifest& m, std::span<const std::size_t> subset) {
  std::vector<int> labels;
  for (std::size_t i : subset) labels.push_back(m.records[i].class_label);
  return labels_to_tensor(labels);
}

std::vector<double> budgets_for(const ProbeConfig& config) {
  return config.mode == ProbeMode::linear_probe ? config.budgets : config.finetune_budgets;
}

}  // namespace

MetricsReport linear_probe(const EncoderCheckpoint& encoder, const DatasetManifest& manifest, const ProbeConfig& config,
                           const std::string& encoder_name) {
  config.validate();
  const auto train = manifest.indices(Split::train);
  const auto test = test_records(manifest);
  if (train.empty() || test.empty()) throw DataError("linear_probe: need train and test records");
  const auto groups = eval_groups(manifest, test);
  const EmbeddingDump train_dump = embed(*encoder.encoder, manifest, train);
  const EmbeddingDump test_dump = embed(*encoder.encoder, manifest, test);
  std::vector<std::size_t> all_test(test.size());
  std::iota(all_test.begin(), all_test.end(), std::size_t{0});
  const torch::Tensor test_x = gather_rows(test_dump, all_test);
  std::map<std::size_t, std::size_t> pos_of;
  for (std::size_t i = 0; i < train.size(); ++i) pos_of[train[i]] = i;

  MetricsReport report;
  report.encoder_hash = encoder.encoder_hash();
  report.config_hash = encoder.config_hash;
  for (double budget : config.budgets) {
    const std::size_t count = resolve_budget(budget, train.size());
    for (std::uint64_t seed : config.seeds) {
      const auto subset = stratified_subsample(manifest, train, count, derive_seed(seed, "probe-budget", {count}));
      std::vector<std::size_t> pos;
      for (std::size_t i : subset) pos.push_back(pos_of.at(i));
      auto x = gather_rows(train_dump, pos);
      const auto mean = x.mean(0, true);
      const auto std = x.std(0, false, true).clamp_min(1e-6);
      x = (x - mean) / std;
      const auto y = label_tensor(manifest, subset);
      const auto w = class_weight_tensor(manifest, subset);

      torch::manual_seed(derive_seed(seed, "probe-init"));
      nn::Linear head(static_cast<std::int64_t>(train_dump.dim), manifest.num_classes);
      torch::optim::Adam opt(head->parameters(), torch::optim::AdamOptions(config.learning_rate));
      double prev = INFINITY;
      for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        auto loss = torch::nn::functional::cross_entropy(head->forward(x), y, torch::nn::functional::CrossEntropyFuncOptions().weight(w));
        const double value = loss.item<double>();
        if (!std::isfinite(value)) throw NumericError("linear_probe: non-finite loss");
        if (std::abs(prev - value) < config.tolerance) break;
        prev = value;
        opt.zero_grad();
        loss.backward();
        opt.step();
      }
      torch::NoGradGuard guard;
      const auto probs = torch::softmax(head->forward((test_x - mean) / std), 1);
      MetricRow proto{"", encoder_name, to_string(ProbeMode::linear_probe), "", budget, count, seed, 0.0, 0};
      score_groups(manifest, test, probs, groups, proto, report.rows);
    }
  }
  report.aggregates = aggregate_rows(report.rows);
  return report;
}

MetricsReport finetune(const EncoderCheckpoint& encoder, const DatasetManifest& manifest, const ProbeConfig& config,
                       const std::string& encoder_name) {
  config.validate();
  if (config.mode == ProbeMode::linear_probe) throw ConfigError("finetune: mode must be finetune or supervised-baseline");
  const auto train = manifest.indices(Split::train);
  const auto test = test_records(manifest);
  if (train.empty() || test.empty()) throw DataError("finetune: need train and test records");
  const auto groups = eval_groups(manifest, test);
  std::vector<const Image*> test_ptrs;
  for (std::size_t i : test) test_ptrs.push_back(&manifest.records[i].image);
  const auto test_x = images_to_tensor(test_ptrs);

  MetricsReport report;
  report.encoder_hash = config.mode == ProbeMode::finetune ? encoder.encoder_hash() : std::string("random-init");
  report.config_hash = encoder.config_hash;
  for (double budget : budgets_for(config)) {
    const std::size_t count = resolve_budget(budget, train.size());
    for (std::uint64_t seed : config.seeds) {
      const auto subset = stratified_subsample(manifest, train, count, derive_seed(seed, "probe-budget", {count}));
      torch::manual_seed(derive_seed(seed, config.mode == ProbeMode::finetune ? "finetune-init" : "baseline-init"));
      auto net = std::make_shared<EncoderImpl>(encoder.arch);
      if (config.mode == ProbeMode::finetune) copy_state(*encoder.encoder, *net);
      nn::Linear head(encoder.arch.representation_dim, manifest.num_classes);
      std::vector<torch::Tensor> params = net->parameters();
      for (auto& p : head->parameters()) params.push_back(p);
      torch::optim::Adam opt(params, torch::optim::AdamOptions(config.finetune_learning_rate));
      const auto w = class_weight_tensor(manifest, subset);
      const auto b = static_cast<std::size_t>(config.finetune_batch_size);
      net->train();
      for (int epoch = 0; epoch < config.finetune_epochs; ++epoch) {
        auto order = subset;
        Engine eng = make_engine(seed, "finetune-shuffle", {static_cast<std::uint64_t>(epoch)});
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(eng, i)]);
        for (std::size_t start = 0; start < order.size(); start += b) {
          const std::size_t len = std::min(b, order.size() - start);
          if (len < 2) continue;  // batch norm needs two samples
          const std::span<const std::size_t> chunk(order.data() + start, len);
          std::vector<const Image*> ptrs;
          for (std::size_t i : chunk) ptrs.push_back(&manifest.records[i].image);
          auto loss = torch::nn::functional::cross_entropy(head->forward(net->forward(images_to_tensor(ptrs))), label_tensor(manifest, chunk),
                                                           torch::nn::functional::CrossEntropyFuncOptions().weight(w));
          if (!std::isfinite(loss.item<double>())) throw NumericError("finetune: non-finite loss");
          opt.zero_grad();
          loss.backward();
          opt.step();
        }
      }
      net->eval();
      torch::NoGradGuard guard;
      std::vector<torch::Tensor> parts;
      for (std::int64_t s = 0; s < test_x.size(0); s += 512)
        parts.push_back(torch::softmax(head->forward(net->forward(test_x.slice(0, s, std::min<std::int64_t>(s + 512, test_x.size(0))))), 1));
      MetricRow proto{"", encoder_name, to_string(config.mode), "", budget, count, seed, 0.0, 0};
      score_groups(manifest, test, torch::cat(parts, 0), groups, proto, report.rows);
    }
  }
  report.aggregates = aggregate_rows(report.rows);
  return report;
}

namespace {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void write_rows_csv(const std::vector<MetricRow>& rows, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "variant,encoder,mode,group,budget,budget_count,seed,auc,n\n";
  for (const auto& r : rows)
    os << r.variant << ',' << r.encoder << ',' << r.mode << ',' << r.group << ',' << g17(r.budget) << ',' << r.budget_count << ','
       << r.seed << ',' << g17(r.auc) << ',' << r.n << '\n';
  binary::write_text_atomic(path, os.str());
}

std::vector<MetricRow> read_rows_csv(const std::filesystem::path& path) {
  std::istringstream in(binary::read_text(path));
  std::string line;
  std::getline(in, line);
  if (line != "variant,encoder,mode,group,budget,budget_count,seed,auc,n") throw IoError("unexpected results table header in " + path.string());
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 9) throw IoError("malformed results row in " + path.string() + ": " + line);
    rows.push_back({c[0], c[1], c[2], c[3], std::stod(c[4]), std::stoull(c[5]), std::stoull(c[6]), std::stod(c[7]), std::stoull(c[8])});
  }
  return rows;
}

void write_aggregates_csv(const std::vector<MetricAggregate>& aggs, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "variant,encoder,mode,group,budget,mean,stderr,num_seeds\n";
  for (const auto& a : aggs)
    os << a.variant << ',' << a.encoder << ',' << a.mode << ',' << a.group << ',' << g17(a.budget) << ',' << g17(a.mean) << ','
       << (a.stderr_ ? g17(*a.stderr_) : std::string()) << ',' << a.num_seeds << '\n';
  binary::write_text_atomic(path, os.str());
}

MetricsReport label_efficiency_sweep(const std::vector<NamedEncoder>& encoders, const DatasetManifest& manifest,
                                     const ProbeConfig& config, const std::filesystem::path& out_dir, const std::string& config_hash) {
  if (encoders.empty()) throw ConfigError("sweep: need at least one encoder");
  if (config.budgets.size() < 2) throw ConfigError("sweep: need at least two label budgets");
  MetricsReport report;
  report.config_hash = config_hash;
  ProbeConfig probe = config;
  probe.mode = ProbeMode::linear_probe;
  for (const auto& e : encoders) {
    auto r = linear_probe(*e.checkpoint, manifest, probe, e.name);
    report.rows.insert(report.rows.end(), r.rows.begin(), r.rows.end());
    report.encoder_hash += (report.encoder_hash.empty() ? "" : ";") + e.name + "=" + r.encoder_hash;
  }
  report.aggregates = aggregate_rows(report.rows);

  std::filesystem::create_directories(out_dir);
  write_rows_csv(report.rows, out_dir / "results.csv");
  write_aggregates_csv(report.aggregates, out_dir / "aggregates.csv");

  const double train_size = static_cast<double>(manifest.indices(Split::train).size());
  std::vector<std::pair<std::string, std::string>> panels;
  for (const auto& a : report.aggregates)
    if (std::find(panels.begin(), panels.end(), std::make_pair(a.variant, a.group)) == panels.end()) panels.emplace_back(a.variant, a.group);
  for (const auto& [variant, group] : panels) {
    std::vector<plot::Series> series;
    for (const auto& e : encoders) {
      plot::Series s{e.name, {}, {}, {}};
      for (const auto& a : report.aggregates) {
        if (a.variant != variant || a.group != group || a.encoder != e.name) continue;
        s.x.push_back(a.budget <= 1.0 ? a.budget : a.budget / train_size);
        s.mean.push_back(a.mean);
        s.stderr_.push_back(a.stderr_.value_or(0.0));
      }
      series.push_back(std::move(s));
    }
    plot::write_line_plot(out_dir / ("auc_" + variant + "_" + group + ".svg"), "Linear probe macro ROC-AUC (" + variant + ", " + group + ")",
                          "fraction of labelled training data", "macro ROC-AUC", series, config_hash);
  }
  return report;
}

double domain_separation(const EmbeddingDump& dump, int k) { return domain_separation(dump.values, dump.dim, dump.scanner, k); }

std::vector<std::size_t> tsne_plot(const EmbeddingDump& dump, std::uint64_t seed, const std::filesystem::path& path,
                                   const std::string& title, const std::string& config_hash, std::size_t max_points, int iterations) {
  const auto pick = tsne_subsample(dump.rows(), max_points, seed);
  std::vector<float> data;
  std::vector<int> groups;
  int max_scanner = 0;
  for (std::size_t r : pick) {
    data.insert(data.end(), dump.values.begin() + static_cast<std::ptrdiff_t>(r * dump.dim),
                dump.values.begin() + static_cast<std::ptrdiff_t>((r + 1) * dump.dim));
    groups.push_back(dump.scanner[r]);
    max_scanner = std::max(max_scanner, dump.scanner[r]);
  }
  TsneOptions opt;
  opt.seed = seed;
  opt.iterations = iterations;
  opt.perplexity = std::min(30.0, std::max(2.0, (static_cast<double>(pick.size()) - 1.0) / 3.0 - 1.0));
  const auto xy = tsne(data, dump.dim, opt);
  std::vector<std::string> names;
  for (int s = 0; s <= max_scanner; ++s) names.push_back("scanner" + std::to_string(s));
  plot::write_scatter(path, title, xy, groups, names, config_hash);
  return pick;
}

}  // namespace cfcl
