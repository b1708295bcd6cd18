#include <gtest/gtest.h>
#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cfcl/contrastive.hpp"
#include "cfcl/error.hpp"
#include "cfcl/ntxent.hpp"
#include "cfcl/rng.hpp"

using namespace cfcl;

namespace {

// Reference: direct transcription of the loss in long double, no shared code.
long double oracle_total(const std::vector<double>& z, std::size_t dim, long double tau) {
  const std::size_t rows = z.size() / dim, n = rows / 2;
  auto sim = [&](std::size_t a, std::size_t b) {
    long double ab = 0, aa = 0, bb = 0;
    for (std::size_t d = 0; d < dim; ++d) {
      ab += (long double)z[a * dim + d] * z[b * dim + d];
      aa += (long double)z[a * dim + d] * z[a * dim + d];
      bb += (long double)z[b * dim + d] * z[b * dim + d];
    }
    return ab / std::sqrt(aa * bb);
  };
  long double total = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t j = i < n ? i + n : i - n;
    long double denom = 0;
    for (std::size_t k = 0; k < rows; ++k)
      if (k != i) denom += std::exp(sim(i, k) / tau);
    total += -std::log(std::exp(sim(i, j) / tau) / denom);
  }
  return total;
}

std::vector<double> random_projections(std::size_t rows, std::size_t dim, std::uint64_t seed) {
  Engine eng = make_engine(seed, "ntxent-test");
  std::vector<double> z(rows * dim);
  for (double& v : z) v = standard_normal(eng);
  return z;
}

}  // namespace

TEST(NtXent, MatchesOracle) {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    for (double tau : {0.1, 0.5, 1.0}) {
      const auto z = random_projections(8, 5, seed);
      const auto r = nt_xent<double>(z, 5, tau);
      EXPECT_NEAR(r.total, static_cast<double>(oracle_total(z, 5, tau)), 1e-9);
      EXPECT_NEAR(r.mean, r.total / 8, 1e-12);
    }
  }
}

TEST(NtXent, SinglePairClosedForm) {
  // N = 1: each anchor has only its positive in the denominator, so L = 0.
  const std::vector<double> z{1, 0, 0.3, 2};
  EXPECT_NEAR(nt_xent<double>(z, 2, 0.5).total, 0.0, 1e-12);
}

TEST(NtXent, OrthogonalNegativesClosedForm) {
  // Positives identical, all other pairs orthogonal: L_i = -log(e^{1/t} / (e^{1/t} + 2N-2)).
  const double tau = 0.5;
  std::vector<double> z(4 * 2 * 4, 0.0);
  const std::size_t dim = 4, n = 4;
  for (std::size_t i = 0; i < n; ++i) z[i * dim + i] = z[(i + n) * dim + i] = 1.0;
  const double e = std::exp(1.0 / tau);
  const double expected = 2 * n * -std::log(e / (e + 2 * n - 2));
  EXPECT_NEAR(nt_xent<double>(z, dim, tau).total, expected, 1e-10);
}

TEST(NtXent, GradientMatchesFiniteDifferences) {
  const std::size_t dim = 4;
  auto z = random_projections(6, dim, 9);
  const auto r = nt_xent<double>(z, dim, 0.3, true);
  const double h = 1e-6;
  for (std::size_t t = 0; t < z.size(); ++t) {
    auto zp = z, zm = z;
    zp[t] += h;
    zm[t] -= h;
    const double fd = (static_cast<double>(oracle_total(zp, dim, 0.3L)) - static_cast<double>(oracle_total(zm, dim, 0.3L))) / (2 * h);
    EXPECT_NEAR(r.grad[t], fd, 1e-6) << "coordinate " << t;
  }
}

TEST(NtXent, InvariantUnderRowScaling) {
  auto z = random_projections(10, 3, 4);
  const double base = nt_xent<double>(z, 3, 0.5).total;
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t d = 0; d < 3; ++d) z[i * 3 + d] *= 0.1 + i;
  EXPECT_NEAR(nt_xent<double>(z, 3, 0.5).total, base, 1e-9);
}

TEST(NtXent, InvariantUnderPairPermutation) {
  const std::size_t n = 5, dim = 3;
  const auto z = random_projections(2 * n, dim, 5);
  std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  std::vector<double> w(z.size());
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t d = 0; d < dim; ++d) {
      w[p * dim + d] = z[perm[p] * dim + d];
      w[(p + n) * dim + d] = z[(perm[p] + n) * dim + d];
    }
  EXPECT_NEAR(nt_xent<double>(w, dim, 0.5).total, nt_xent<double>(z, dim, 0.5).total, 1e-10);
}

TEST(NtXent, SwappingViewsLeavesLossUnchanged) {
  const std::size_t n = 4, dim = 3;
  const auto z = random_projections(2 * n, dim, 6);
  std::vector<double> w(z.size());
  std::copy(z.begin() + n * dim, z.end(), w.begin());
  std::copy(z.begin(), z.begin() + n * dim, w.begin() + n * dim);
  EXPECT_NEAR(nt_xent<double>(w, dim, 0.5).total, nt_xent<double>(z, dim, 0.5).total, 1e-10);
}

TEST(NtXent, LossBoundedBelowByAlignedCase) {
  // Each term is >= -log(e^{1/t} / (e^{1/t} + (2N-2) e^{-1/t})).
  const double tau = 0.5;
  const std::size_t n = 6;
  const double lb = -std::log(std::exp(1 / tau) / (std::exp(1 / tau) + (2 * n - 2) * std::exp(-1 / tau)));
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto z = random_projections(2 * n, 4, s);
    EXPECT_GE(nt_xent<double>(z, 4, tau).mean, lb - 1e-12);
  }
}

TEST(NtXent, RejectsBadInput) {
  std::vector<double> odd(3 * 2, 1.0);
  EXPECT_THROW(nt_xent<double>(odd, 2, 0.5), DomainError);
  std::vector<double> z(4, 1.0);
  EXPECT_THROW(nt_xent<double>(z, 2, 0.0), DomainError);
  std::vector<double> zero{0, 0, 1, 1};
  EXPECT_THROW(nt_xent<double>(zero, 2, 0.5), DomainError);
  std::vector<double> bad{NAN, 1, 1, 1};
  EXPECT_THROW(nt_xent<double>(bad, 2, 0.5), NumericError);
}

TEST(NtXentTorch, ForwardAndBackwardMatchNativeAutograd) {
  torch::manual_seed(0);
  const int64_t n = 7, dim = 6;
  const double tau = 0.4;
  auto base = torch::randn({2 * n, dim}, torch::kFloat64);

  auto a = base.clone().requires_grad_(true);
  auto loss_a = nt_xent_loss(a, tau);
  loss_a.backward();

  // Independent formulation using library ops.
  auto b = base.clone().requires_grad_(true);
  auto u = torch::nn::functional::normalize(b, torch::nn::functional::NormalizeFuncOptions().dim(1));
  auto logits = torch::mm(u, u.t()) / tau;
  logits = logits - torch::eye(2 * n, torch::kFloat64) * 1e9;
  auto targets = torch::cat({torch::arange(n, 2 * n), torch::arange(0, n)});
  auto loss_b = torch::nn::functional::cross_entropy(logits, targets);
  loss_b.backward();

  EXPECT_NEAR(loss_a.item<double>(), loss_b.item<double>(), 1e-10);
  EXPECT_LT((a.grad() - b.grad()).abs().max().item<double>(), 1e-10);
}
