// Acceptance suite: one PASS/FAIL line per criterion. Criteria 5-8 and 10
// run the full desk pipeline (twice, for reproducibility).
//
// Environment:
//   CFCL_ACCEPTANCE_DIR    working directory (default ./acceptance)
//   CFCL_ACCEPTANCE_REUSE  1 = keep completed runs instead of starting fresh

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "cfcl/binary_io.hpp"
#include "cfcl/evalharness.hpp"
#include "cfcl/metrics.hpp"
#include "cfcl/ntxent.hpp"
#include "cfcl/pipeline.hpp"
#include "cfcl/rng.hpp"
#include "cfcl/scm.hpp"
#include "cfcl/synthdata.hpp"
#include "cfcl/torch_util.hpp"

using namespace cfcl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& check, double budget_seconds) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = budget_seconds <= 0 || secs <= budget_seconds;
  const bool pass = o.pass && in_time;
  if (!pass) ++failures;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2fs", secs);
  std::cout << (pass ? "PASS" : "FAIL") << "  criterion " << id << "  " << name << "  [" << o.detail << "; " << buf
            << (in_time ? "" : " over budget") << "]" << std::endl;
}

std::string fmt(double v, const char* f = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Direct enumeration of the loss, long double, no shared code with the library.
long double enumerated_total(const std::vector<double>& z, std::size_t dim, long double tau) {
  const std::size_t rows = z.size() / dim, n = rows / 2;
  auto sim = [&](std::size_t a, std::size_t b) {
    long double ab = 0, aa = 0, bb = 0;
    for (std::size_t d = 0; d < dim; ++d) {
      ab += (long double)z[a * dim + d] * z[b * dim + d];
      aa += (long double)z[a * dim + d] * z[a * dim + d];
      bb += (long double)z[b * dim + d] * z[b * dim + d];
    }
    return ab / sqrtl(aa * bb);
  };
  long double total = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t j = i < n ? i + n : i - n;
    long double denom = 0;
    for (std::size_t k = 0; k < rows; ++k)
      if (k != i) denom += expl(sim(i, k) / tau);
    total -= logl(expl(sim(i, j) / tau) / denom);
  }
  return total;
}

double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        den += 1;
      }
  return num / den;
}

fs::path work_dir() {
  const char* d = std::getenv("CFCL_ACCEPTANCE_DIR");
  return fs::absolute(d ? fs::path(d) : fs::path("acceptance"));
}

bool reuse() {
  const char* r = std::getenv("CFCL_ACCEPTANCE_REUSE");
  return r && std::string(r) == "1";
}

void run_pipeline(const fs::path& dir) {
  if (!reuse()) fs::remove_all(dir);
  Pipeline p(default_config(), dir, [](const std::string& m) { std::cerr << "[desk] " << m << std::endl; });
  p.run_all();
}

// Mean linear-probe AUC per encoder over seeds and the given groups.
std::map<std::string, double> probe_mean(const fs::path& results, double budget, const std::vector<std::string>& groups) {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& r : read_rows_csv(results)) {
    if (r.variant != "in-domain" || r.mode != "linear-probe" || std::abs(r.budget - budget) > 1e-12) continue;
    if (std::find(groups.begin(), groups.end(), r.group) == groups.end()) continue;
    acc[r.encoder].first += r.auc;
    acc[r.encoder].second += 1;
  }
  std::map<std::string, double> out;
  for (const auto& [k, v] : acc) out[k] = v.first / v.second;
  return out;
}

}  // namespace

int main() {
  configure_torch_determinism();
  const fs::path root = work_dir();
  fs::create_directories(root);
  const fs::path run_a = root / "run_a", run_b = root / "run_b";

  report(1, "NT-Xent identical embeddings = ln(127)", [] {
    const std::size_t n = 64, dim = 16;
    std::vector<double> z(2 * n * dim, 0.0);
    for (std::size_t i = 0; i < 2 * n; ++i)
      for (std::size_t d = 0; d < dim; ++d) z[i * dim + d] = 0.25 + 0.01 * static_cast<double>(d);
    double worst = 0;
    for (double tau : {0.05, 0.1, 0.5, 1.0, 2.0}) worst = std::max(worst, std::abs(nt_xent<double>(z, dim, tau).mean - std::log(127.0)));
    return Outcome{worst < 1e-5, "max |loss - ln 127| = " + fmt(worst)};
  }, 1.0);

  report(2, "NT-Xent matches term-by-term enumeration", [] {
    Engine eng = make_engine(2024, "acceptance-ntxent");
    double worst = 0;
    const double taus[] = {0.1, 0.5, 1.0};
    for (int b = 0; b < 100; ++b) {
      const std::size_t n = 1 + uniform_index(eng, 8), dim = 1 + uniform_index(eng, 16);
      std::vector<double> z(2 * n * dim);
      for (double& v : z) v = standard_normal(eng);
      const double tau = taus[b % 3];
      const double got = nt_xent<double>(z, dim, tau).total;
      const long double want = enumerated_total(z, dim, tau);
      worst = std::max(worst, static_cast<double>(fabsl(got - want) / std::max(fabsl(want), 1e-300L)));
    }
    return Outcome{worst < 1e-6, "max relative error = " + fmt(worst)};
  }, 10.0);

  report(3, "NT-Xent analytic gradient vs central differences", [] {
    const std::size_t n = 4, dim = 8;
    const double tau = 0.5;
    Engine eng = make_engine(7, "acceptance-grad");
    std::vector<double> z(2 * n * dim);
    for (double& v : z) v = standard_normal(eng);
    const auto r = nt_xent<double>(z, dim, tau, true);
    double worst = 0;
    const double h = 1e-5;
    for (std::size_t t = 0; t < z.size(); ++t) {
      auto zp = z, zm = z;
      zp[t] += h;
      zm[t] -= h;
      const double fd = static_cast<double>((enumerated_total(zp, dim, tau) - enumerated_total(zm, dim, tau)) / (2.0L * h));
      const double denom = std::max({std::abs(fd), std::abs(r.grad[t]), 1e-8});
      worst = std::max(worst, std::abs(r.grad[t] - fd) / denom);
    }
    return Outcome{worst < 1e-6, "max relative error = " + fmt(worst)};
  }, 5.0);

  report(4, "ROC-AUC matches pairwise counting oracle", [] {
    Engine eng = make_engine(11, "acceptance-auc");
    int mismatches = 0;
    for (int inst = 0; inst < 200; ++inst) {
      const std::size_t m = 2 + uniform_index(eng, 120);
      std::vector<double> s(m);
      std::vector<int> y(m);
      const bool ties = inst % 2 == 0;
      for (std::size_t i = 0; i < m; ++i) {
        s[i] = ties ? static_cast<double>(uniform_index(eng, 6)) : uniform01(eng);
        y[i] = uniform01(eng) < 0.4;
      }
      y[0] = 1;
      y[1] = 0;
      if (roc_auc(s, y) != pairwise_auc(s, y)) ++mismatches;
    }
    const std::vector<double> fs_{0.1, 0.4, 0.35, 0.8};
    const std::vector<int> fy{0, 0, 1, 1};
    const double fixed = roc_auc(fs_, fy);
    return Outcome{mismatches == 0 && fixed == 0.75, std::to_string(mismatches) + " mismatches; fixed case = " + fmt(fixed)};
  }, 5.0);

  report(9, "weighted sampler uniform over scanners within 2%", [] {
    auto m = generate_dataset(default_config().data, 1);
    const auto w = make_weighted_sampler(m);
    const WeightedSampler sampler(w);
    Engine eng = make_engine(9, "acceptance-sampler");
    std::vector<double> freq(static_cast<std::size_t>(m.num_scanners()), 0.0);
    for (int i = 0; i < 100000; ++i) freq[static_cast<std::size_t>(m.records[sampler.draw(eng)].scanner_id)] += 1;
    double worst = 0;
    for (double f : freq) worst = std::max(worst, std::abs(f / 100000 - 1.0 / static_cast<double>(freq.size())));
    return Outcome{worst <= 0.02, "max |freq - 1/S| = " + fmt(worst)};
  }, 10.0);

  report(11, "weighted CE of uniform logits = ln 4", [] {
    Engine eng = make_engine(3, "acceptance-wce");
    double worst = 0;
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t n = 1 + uniform_index(eng, 30);
      std::vector<double> logits(n * 4, 1.7);
      std::vector<int> y(n);
      for (int& v : y) v = static_cast<int>(uniform_index(eng, 4));
      std::vector<double> w(4);
      for (double& v : w) v = 0.01 + 10 * uniform01(eng);
      worst = std::max(worst, std::abs(weighted_cross_entropy(logits, y, w) - std::log(4.0)));
    }
    return Outcome{worst < 1e-9, "max |loss - ln 4| = " + fmt(worst)};
  }, 1.0);

  // Desk pipeline, first run.
  bool desk_ok = true;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    run_pipeline(run_a);
  } catch (const std::exception& e) {
    desk_ok = false;
    std::cout << "desk pipeline failed: " << e.what() << std::endl;
  }
  const double desk_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "desk pipeline run took " << fmt(desk_secs, "%.0f") << " s" << std::endl;

  report(5, "null intervention is bit-identical to reconstruction", [&] {
    if (!desk_ok) return Outcome{false, "desk pipeline failed"};
    auto model = load_generative_model(run_a / "scm" / "model.pt");
    const auto m = load_manifest(run_a / "data");
    const auto val = m.indices(Split::val);
    std::vector<const Image*> imgs;
    std::vector<ParentVector> pa;
    std::vector<int> own;
    for (std::size_t k = 0; k < 100 && k < val.size(); ++k) {
      imgs.push_back(&m.records[val[k]].image);
      pa.push_back({m.records[val[k]].scanner_id});
      own.push_back(m.records[val[k]].scanner_id);
    }
    const auto x = images_to_tensor(imgs);
    const double diff = (counterfactual(model, x, pa, own) - reconstruct(model, x, pa)).abs().max().item<double>();
    return Outcome{imgs.size() == 100 && diff == 0.0, std::to_string(imgs.size()) + " images, max abs diff = " + fmt(diff)};
  }, 60.0);

  report(6, "counterfactual effectiveness >= 0.90", [&] {
    if (!desk_ok) return Outcome{false, "desk pipeline failed"};
    const auto eff = nlohmann::json::parse(binary::read_text(run_a / "scm" / "effectiveness.json"));
    const double acc = eff.at("classifier_val_accuracy").get<double>();
    if (eff.at("effectiveness").is_null()) return Outcome{false, "refused: " + eff.value("refused", std::string())};
    const double e = eff.at("effectiveness").get<double>();
    return Outcome{acc >= 0.99 && e >= 0.90, "effectiveness = " + fmt(e) + ", classifier accuracy = " + fmt(acc)};
  }, 0);

  report(7, "CF-SimCLR best on under-represented scanners at 5% labels", [&] {
    if (!desk_ok) return Outcome{false, "desk pipeline failed"};
    std::vector<std::string> groups;
    for (int s : underrepresented_scanners(default_config().data)) groups.push_back("scanner" + std::to_string(s));
    const auto mean = probe_mean(run_a / "sweep" / "results.csv", 0.05, groups);
    const double cf = mean.at("cf-simclr"), sc = mean.at("simclr"), sp = mean.at("simclr-plus");
    const bool ok = cf >= sc + 0.005 && cf >= sp;
    return Outcome{ok, "cf-simclr " + fmt(cf, "%.4f") + ", simclr " + fmt(sc, "%.4f") + ", simclr-plus " + fmt(sp, "%.4f")};
  }, 0);

  report(8, "CF-SimCLR less domain-separated than SimCLR by >= 0.05", [&] {
    if (!desk_ok) return Outcome{false, "desk pipeline failed"};
    std::map<std::string, double> sep;
    std::istringstream in(binary::read_text(run_a / "report" / "domain_separation.csv"));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      sep[line.substr(0, line.find(','))] = std::stod(line.substr(line.rfind(',') + 1));
    }
    const double cf = sep.at("cf-simclr"), sc = sep.at("simclr");
    return Outcome{sc - cf >= 0.05, "kNN scanner accuracy cf-simclr " + fmt(cf, "%.4f") + ", simclr " + fmt(sc, "%.4f") + ", simclr-plus " +
                                        fmt(sep.at("simclr-plus"), "%.4f")};
  }, 0);

  report(10, "two end-to-end runs give byte-identical result tables", [&] {
    if (!desk_ok) return Outcome{false, "desk pipeline failed"};
    run_pipeline(run_b);
    const std::vector<std::string> tables{"sweep/results.csv", "sweep/aggregates.csv", "report/auc_deltas.csv",
                                          "report/domain_separation.csv", "scm/effectiveness.json"};
    std::string differing;
    for (const auto& t : tables)
      if (binary::read_text(run_a / t) != binary::read_text(run_b / t)) differing += " " + t;
    for (const char* s : {"simclr", "simclr-plus", "cf-simclr"})
      for (const char* stage : {"probe", "finetune"}) {
        const auto rel = fs::path(stage) / s / "results.csv";
        if (binary::read_text(run_a / rel) != binary::read_text(run_b / rel)) differing += " " + rel.string();
      }
    return Outcome{differing.empty(), differing.empty() ? "all tables identical" : "differs:" + differing};
  }, 0);

  std::cout << (failures == 0 ? "ALL CRITERIA PASS" : std::to_string(failures) + " CRITERIA FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
