#include <gtest/gtest.h>
#include <torch/torch.h>

#include <map>

#include "cfcl/contrastive.hpp"
#include "cfcl/error.hpp"
#include "cfcl/scm.hpp"
#include "cfcl/torch_util.hpp"
#include "fixtures.hpp"

using namespace cfcl;
using cfcl::test::TempDir;

namespace {

PretrainConfig tiny_pretrain(Strategy s) {
  PretrainConfig c;
  c.strategy = s;
  c.batch_size = 32;
  c.epochs = 1;
  c.representation_dim = 32;
  c.projection_dim = 16;
  return c;
}

std::vector<PairSource> real_sources(const DatasetManifest& m, std::size_t n) {
  std::vector<PairSource> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({&m.records[i].image, i, m.records[i].scanner_id, false});
  return out;
}

}  // namespace

class ContrastiveFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    configure_torch_determinism();
    manifest_ = new DatasetManifest(generate_dataset(cfcl::test::tiny_data_config(300), 8));
    ScmConfig sc;
    sc.base_channels = 8;
    auto model = make_untrained_model(*manifest_, sc, 2);
    dir_ = new TempDir("contrastive_store");
    build_store(model, *manifest_, dir_->path(), 4, "cfg");
    store_ = new CounterfactualStore(CounterfactualStore::open(dir_->path()));
  }
  static void TearDownTestSuite() {
    delete store_;
    delete dir_;
    delete manifest_;
  }
  static DatasetManifest* manifest_;
  static TempDir* dir_;
  static CounterfactualStore* store_;
};

DatasetManifest* ContrastiveFixture::manifest_ = nullptr;
TempDir* ContrastiveFixture::dir_ = nullptr;
CounterfactualStore* ContrastiveFixture::store_ = nullptr;

TEST(Strategy, StringRoundTrip) {
  for (Strategy s : {Strategy::simclr, Strategy::simclr_plus, Strategy::cf_simclr}) EXPECT_EQ(strategy_from_string(to_string(s)), s);
  EXPECT_EQ(to_string(Strategy::cf_simclr), "cf-simclr");
  EXPECT_EQ(strategy_from_string("simclr+"), Strategy::simclr_plus);
  EXPECT_THROW(strategy_from_string("byol"), ConfigError);
}

TEST(Encoder, OutputShapes) {
  EncoderArch arch;
  arch.representation_dim = 64;
  arch.projection_dim = 16;
  auto ck = make_random_encoder(arch, 1);
  ck.encoder->eval();
  const auto h = ck.encoder->forward(torch::rand({5, 1, 32, 32}));
  EXPECT_EQ(h.sizes(), (std::vector<int64_t>{5, 64}));
  EXPECT_EQ(ck.head->forward(h).sizes(), (std::vector<int64_t>{5, 16}));
}

TEST(Encoder, InitDependsOnlyOnSeed) {
  EncoderArch arch;
  EXPECT_EQ(make_random_encoder(arch, 3).encoder_hash(), make_random_encoder(arch, 3).encoder_hash());
  EXPECT_NE(make_random_encoder(arch, 3).encoder_hash(), make_random_encoder(arch, 4).encoder_hash());
}

TEST(PretrainConfig, Validation) {
  PretrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.temperature = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST_F(ContrastiveFixture, SimclrViewsShareSource) {
  const auto src = real_sources(*manifest_, 6);
  const auto b = make_pairs_simclr(src, AugmentationPolicy{}, 5, 0);
  ASSERT_EQ(b.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(b.provenance[i].source_index, i);
    EXPECT_EQ(b.provenance[i].view_b_scanner, b.provenance[i].source_scanner);
    EXPECT_FALSE(b.provenance[i].a_counterfactual || b.provenance[i].b_counterfactual);
    Engine ea = view_engine(5, i, 0), eb = view_engine(5, i, 1);
    EXPECT_EQ(b.view_a[i], sample_view(manifest_->records[i].image, AugmentationPolicy{}, ea));
    EXPECT_EQ(b.view_b[i], sample_view(manifest_->records[i].image, AugmentationPolicy{}, eb));
  }
}

TEST_F(ContrastiveFixture, SimclrRejectsCounterfactualInput) {
  auto src = real_sources(*manifest_, 2);
  src[1].counterfactual = true;
  EXPECT_THROW(make_pairs_simclr(src, AugmentationPolicy{}, 5, 0), DomainError);
}

TEST_F(ContrastiveFixture, BatchesIndependentOfSplitting) {
  const auto train = manifest_->indices(Split::train);
  std::vector<PairSource> src;
  for (std::size_t k = 0; k < 8; ++k)
    src.push_back({&manifest_->records[train[k]].image, train[k], manifest_->records[train[k]].scanner_id, false});
  const auto whole = make_pairs_cf(src, *store_, AugmentationPolicy{}, 5, 100);
  const auto lo = make_pairs_cf(std::span(src).first(3), *store_, AugmentationPolicy{}, 5, 100);
  const auto hi = make_pairs_cf(std::span(src).subspan(3), *store_, AugmentationPolicy{}, 5, 103);
  for (std::size_t i = 0; i < 8; ++i) {
    const auto& part = i < 3 ? lo : hi;
    const std::size_t j = i < 3 ? i : i - 3;
    EXPECT_EQ(whole.view_a[i], part.view_a[j]);
    EXPECT_EQ(whole.view_b[i], part.view_b[j]);
  }
}

TEST_F(ContrastiveFixture, CfPairsUseStoredCounterfactualOfSameSource) {
  const auto train = manifest_->indices(Split::train);
  std::vector<PairSource> src;
  for (std::size_t k = 0; k < 20; ++k) {
    const std::size_t i = train[k];
    src.push_back({&manifest_->records[i].image, i, manifest_->records[i].scanner_id, false});
  }
  const auto b = make_pairs_cf(src, *store_, AugmentationPolicy{}, 9, 40);
  for (std::size_t k = 0; k < 20; ++k) {
    const auto& p = b.provenance[k];
    EXPECT_EQ(p.source_index, src[k].source_index);
    EXPECT_FALSE(p.a_counterfactual);
    EXPECT_TRUE(p.b_counterfactual);
    EXPECT_NE(p.view_b_scanner, p.source_scanner);
    EXPECT_EQ(p.view_b_scanner, sample_cf_target(p.source_scanner, 3, 9, 40 + k));
    Engine eb = view_engine(9, 40 + k, 1);
    EXPECT_EQ(b.view_b[k], sample_view(store_->get(p.source_index, p.view_b_scanner), AugmentationPolicy{}, eb));
  }
}

TEST(CfTarget, UniformOverOtherScanners) {
  std::map<int, int> counts;
  for (std::uint64_t s = 0; s < 10000; ++s) {
    const int t = sample_cf_target(1, 3, 7, s);
    ASSERT_NE(t, 1);
    ++counts[t];
  }
  ASSERT_EQ(counts.size(), 2u);
  for (const auto& [t, c] : counts) {
    EXPECT_GE(c / 10000.0, 0.48);
    EXPECT_LE(c / 10000.0, 0.52);
  }
  for (std::uint64_t s = 0; s < 100; ++s) EXPECT_EQ(sample_cf_target(0, 2, 1, s), 1);
}

TEST_F(ContrastiveFixture, CfWithoutStoreIsMissingArtifact) {
  try {
    pretrain(*manifest_, nullptr, tiny_pretrain(Strategy::cf_simclr), AugmentationPolicy{}, 1);
    FAIL() << "expected MissingArtifactError";
  } catch (const MissingArtifactError& e) {
    EXPECT_EQ(e.stage(), "build-cf-store");
  }
  EXPECT_THROW(pretrain(*manifest_, nullptr, tiny_pretrain(Strategy::simclr_plus), AugmentationPolicy{}, 1), MissingArtifactError);
}

TEST_F(ContrastiveFixture, StepBudgetEqualAcrossStrategies) {
  const std::size_t n_train = manifest_->indices(Split::train).size();
  const auto expected = (n_train + 31) / 32;
  for (Strategy s : {Strategy::simclr, Strategy::simclr_plus, Strategy::cf_simclr}) {
    EXPECT_EQ(pretrain_step_budget(*manifest_, tiny_pretrain(s)), expected);
  }
}

TEST_F(ContrastiveFixture, PretrainDeterministicAndRoundTrips) {
  auto cfg = tiny_pretrain(Strategy::cf_simclr);
  const auto a = pretrain(*manifest_, store_, cfg, AugmentationPolicy{}, 3);
  const auto b = pretrain(*manifest_, store_, cfg, AugmentationPolicy{}, 3);
  EXPECT_EQ(a.encoder_hash(), b.encoder_hash());
  EXPECT_EQ(a.loss_trace, b.loss_trace);
  EXPECT_EQ(a.steps, pretrain_step_budget(*manifest_, cfg));
  EXPECT_EQ(a.loss_trace.size(), a.steps);
  EXPECT_EQ(a.store_hash, store_->content_hash());
  for (std::size_t i = 0; i < a.loss_trace.size(); ++i) EXPECT_NEAR(a.loss_trace_total[i], a.loss_trace[i] * 64, 1e-9 * a.loss_trace_total[i]);

  TempDir dir("encoder_ckpt");
  save_encoder_checkpoint(a, dir.path() / "e.pt");
  const auto back = load_encoder_checkpoint(dir.path() / "e.pt");
  EXPECT_EQ(back.encoder_hash(), a.encoder_hash());
  EXPECT_EQ(back.config.strategy, Strategy::cf_simclr);
  EXPECT_EQ(back.loss_trace, a.loss_trace);
  EXPECT_EQ(back.steps, a.steps);
}

TEST_F(ContrastiveFixture, StrategiesStartFromSameInit) {
  auto cfg = tiny_pretrain(Strategy::simclr);
  cfg.epochs = 1;
  const auto s = pretrain(*manifest_, nullptr, cfg, AugmentationPolicy{}, 6);
  cfg.strategy = Strategy::cf_simclr;
  const auto c = pretrain(*manifest_, store_, cfg, AugmentationPolicy{}, 6);
  EXPECT_EQ(s.steps, c.steps);
  EXPECT_NE(s.encoder_hash(), c.encoder_hash());
  // first-step losses share initial weights; they differ only through the second view
  EXPECT_TRUE(std::isfinite(s.loss_trace[0]) && std::isfinite(c.loss_trace[0]));
}
