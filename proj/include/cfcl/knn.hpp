#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cfcl/error.hpp"

namespace cfcl {

// Leave-one-out k-nearest-neighbour prediction of the domain label in
// representation space (cosine distance), scored as class-balanced accuracy
// (mean per-domain recall) so a dominant domain cannot inflate the score.
// 1 = perfectly domain-separated; about 1/num_domains = no domain structure.
inline double domain_separation(std::span<const float> embeddings, std::size_t dim, std::span<const int> domains, int k) {
  if (k < 1) throw DomainError("domain_separation: k must be at least 1");
  if (dim == 0 || embeddings.size() != domains.size() * dim) throw DomainError("domain_separation: embedding shape mismatch");
  const std::size_t n = domains.size();
  std::map<int, std::size_t> counts;
  for (int d : domains) ++counts[d];
  for (const auto& [d, c] : counts)
    if (c < static_cast<std::size_t>(k) + 1)
      throw DataError("domain_separation: domain " + std::to_string(d) + " has fewer than k+1 records");

  std::vector<double> unit(embeddings.size());
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < dim; ++j) s += double(embeddings[i * dim + j]) * embeddings[i * dim + j];
    if (!(s > 0)) throw DomainError("domain_separation: zero embedding at row " + std::to_string(i));
    const double inv = 1.0 / std::sqrt(s);
    for (std::size_t j = 0; j < dim; ++j) unit[i * dim + j] = embeddings[i * dim + j] * inv;
  }

  std::map<int, std::size_t> hits;
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double dot = 0;
      for (std::size_t t = 0; t < dim; ++t) dot += unit[i * dim + t] * unit[j * dim + t];
      dist[m++] = {1.0 - dot, j};
    }
    std::partial_sort(dist.begin(), dist.begin() + k, dist.begin() + static_cast<std::ptrdiff_t>(m));
    std::map<int, std::pair<int, double>> votes;  // domain -> (count, summed distance)
    for (int t = 0; t < k; ++t) {
      auto& v = votes[domains[dist[static_cast<std::size_t>(t)].second]];
      ++v.first;
      v.second += dist[static_cast<std::size_t>(t)].first;
    }
    int best = votes.begin()->first;
    for (const auto& [d, v] : votes) {
      const auto& b = votes[best];
      if (v.first > b.first || (v.first == b.first && v.second < b.second)) best = d;
    }
    if (best == domains[i]) ++hits[domains[i]];
  }
  double recall_sum = 0;
  for (const auto& [d, c] : counts) recall_sum += static_cast<double>(hits[d]) / static_cast<double>(c);
  return recall_sum / static_cast<double>(counts.size());
}

}  // namespace cfcl
