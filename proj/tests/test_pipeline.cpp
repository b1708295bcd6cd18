#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "cfcl/binary_io.hpp"
#include "cfcl/error.hpp"
#include "cfcl/pipeline.hpp"
#include "cfcl/torch_util.hpp"
#include "tiny_experiment.hpp"

using namespace cfcl;
using cfcl::test::TempDir;
using cfcl::test::tiny_experiment;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code;
  std::string out, err;
};

CliResult run_cli(const std::string& args, const fs::path& scratch) {
  const auto out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = std::string(CFCL_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WEXITSTATUS(status), binary::read_text(out), binary::read_text(err)};
}

}  // namespace

TEST(Config, JsonRoundTripPreservesHash) {
  TempDir dir("config_rt");
  const auto c = default_config();
  save_config(c, dir.path() / "c.json");
  const auto back = load_config(dir.path() / "c.json");
  EXPECT_EQ(back.config_hash(), c.config_hash());
  EXPECT_EQ(back.data.scanners.size(), 3u);
  EXPECT_EQ(back.master_seed, c.master_seed);
}

TEST(Config, HashIgnoresPathsOnly) {
  auto a = default_config(), b = default_config();
  b.paths.output_dir = "elsewhere";
  EXPECT_EQ(a.config_hash(), b.config_hash());
  b.master_seed += 1;
  EXPECT_NE(a.config_hash(), b.config_hash());
}

TEST(Config, UnknownSectionRejected) {
  TempDir dir("config_bad");
  std::ofstream(dir.path() / "c.json") << R"({"data": {}, "optimizer": {}})";
  EXPECT_THROW(load_config(dir.path() / "c.json"), ConfigError);
  std::ofstream(dir.path() / "m.json") << "{ not json";
  EXPECT_THROW(load_config(dir.path() / "m.json"), ConfigError);
}

TEST(Config, DefaultIsDeskImbalance) {
  const auto c = default_config();
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.data.num_records, 20000);
  EXPECT_EQ(underrepresented_scanners(c.data), (std::vector<int>{1, 2}));
}

TEST(Lineage, StrategyAndSectionDependence) {
  const auto c = default_config();
  const auto s = lineage_hash(c, "pretrain", Strategy::simclr);
  const auto p = lineage_hash(c, "pretrain", Strategy::simclr_plus);
  const auto f = lineage_hash(c, "pretrain", Strategy::cf_simclr);
  EXPECT_NE(s, p);
  EXPECT_NE(s, f);
  EXPECT_NE(p, f);
  auto d = c;
  d.eval.seeds = {5};
  EXPECT_EQ(lineage_hash(d, "pretrain", Strategy::cf_simclr), f);
  EXPECT_NE(lineage_hash(d, "probe", Strategy::cf_simclr), lineage_hash(c, "probe", Strategy::cf_simclr));
  d = c;
  d.scm.epochs = 3;
  EXPECT_NE(lineage_hash(d, "pretrain", Strategy::cf_simclr), f);
  EXPECT_EQ(lineage_hash(d, "pretrain", Strategy::simclr), s);
  EXPECT_EQ(encoder_family_hash(c), encoder_family_hash(c));
  EXPECT_THROW(lineage_hash(c, "pretrain"), DomainError);
}

TEST(Ledger, AppendOnly) {
  TempDir dir("ledger");
  RunLedger ledger(dir.path() / "ledger.jsonl");
  ledger.append({{"stage", "a"}});
  ledger.append({{"stage", "b"}});
  const auto e = ledger.entries();
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e[1]["stage"], "b");
}

TEST(Pipeline, MissingUpstreamNamesStage) {
  configure_torch_determinism();
  TempDir dir("pipe_missing");
  Pipeline p(tiny_experiment(), dir.path());
  try {
    p.run_stage("train-scm");
    FAIL();
  } catch (const MissingArtifactError& e) {
    EXPECT_EQ(e.stage(), "generate-data");
    EXPECT_NE(std::string(e.what()).find("generate-data"), std::string::npos);
  }
  p.run_stage("generate-data");
  p.run_stage("train-scm");
  try {
    p.run_stage("pretrain", Strategy::cf_simclr);
    FAIL();
  } catch (const MissingArtifactError& e) {
    EXPECT_EQ(e.stage(), "build-cf-store");
  }
  // simclr needs no store
  EXPECT_NO_THROW(p.run_stage("pretrain", Strategy::simclr));
}

TEST(Pipeline, StaleUpstreamRefused) {
  configure_torch_determinism();
  TempDir dir("pipe_stale");
  auto c = tiny_experiment();
  Pipeline(c, dir.path()).run_stage("generate-data");
  c.data.num_records = 320;
  Pipeline changed(c, dir.path());
  EXPECT_THROW(changed.run_stage("train-scm"), StaleArtifactError);

  // a tampered output is also stale
  auto fresh = tiny_experiment();
  Pipeline p(fresh, dir.path());
  p.run_stage("generate-data");
  const auto records = p.stage_dir("generate-data") / "manifest.csv";
  ASSERT_TRUE(fs::exists(records));
  std::ofstream(records, std::ios::app) << "tamper\n";
  EXPECT_THROW(p.run_stage("train-scm"), StaleArtifactError);
}

TEST(Pipeline, EndToEndCacheAndReproducibility) {
  configure_torch_determinism();
  TempDir a("pipe_a"), b("pipe_b");
  Pipeline pa(tiny_experiment(), a.path());
  const auto first = pa.run_all();
  for (const auto& r : first) EXPECT_FALSE(r.cache_hit) << r.stage;
  for (const char* f : {"sweep/results.csv", "sweep/aggregates.csv", "report/comparison.json", "report/comparison.md",
                        "report/domain_separation.csv", "report/auc_deltas.csv", "pretrain/cf-simclr.pt", "store/meta.json"})
    EXPECT_TRUE(fs::exists(a.path() / f)) << f;

  const std::size_t before = pa.ledger().entries().size();
  const auto again = pa.run_all();
  for (const auto& r : again) EXPECT_TRUE(r.cache_hit) << r.stage;
  const auto entries = pa.ledger().entries();
  ASSERT_GT(entries.size(), before);
  for (std::size_t i = 0; i < entries.size(); ++i) EXPECT_EQ(entries[i].value("cache_hit", false), i >= before) << i;

  Pipeline pb(tiny_experiment(), b.path());
  pb.run_all();
  for (const char* f : {"sweep/results.csv", "sweep/aggregates.csv", "report/auc_deltas.csv", "report/domain_separation.csv"})
    EXPECT_EQ(binary::read_text(a.path() / f), binary::read_text(b.path() / f)) << f;

  const auto cmp = nlohmann::json::parse(binary::read_text(a.path() / "report/comparison.json"));
  EXPECT_EQ(cmp["strategies"].size(), 3u);
  EXPECT_EQ(cmp["underrepresented_scanners"], nlohmann::json::array({1, 2}));
}

TEST(Cli, ErrorLinesAndExitCodes) {
  TempDir dir("cli");
  std::ofstream(dir.path() / "bad.json") << R"({"pretrain": {"temperature": -1}})";
  auto r = run_cli("print-config --config " + (dir.path() / "bad.json").string(), dir.path());
  EXPECT_EQ(r.exit_code, 2);
  auto err = nlohmann::json::parse(r.err.substr(0, r.err.find('\n')));
  EXPECT_EQ(err["error"]["kind"], "config");

  auto c = tiny_experiment();
  save_config(c, dir.path() / "tiny.json");
  const std::string common = " --config " + (dir.path() / "tiny.json").string() + " --output-dir " + (dir.path() / "run").string() + " --quiet";
  r = run_cli("train-scm" + common, dir.path());
  EXPECT_EQ(r.exit_code, 3);
  err = nlohmann::json::parse(r.err.substr(0, r.err.find('\n')));
  EXPECT_EQ(err["error"]["kind"], "missing-artifact");
  EXPECT_EQ(err["error"]["stage"], "generate-data");

  r = run_cli("generate-data --strategy simclr" + common, dir.path());
  EXPECT_EQ(r.exit_code, 2);
  r = run_cli("no-such-stage", dir.path());
  EXPECT_EQ(r.exit_code, 64);

  r = run_cli("generate-data" + common, dir.path());
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_NO_THROW(nlohmann::json::parse(r.out));
}
