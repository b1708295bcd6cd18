#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "cfcl/error.hpp"
#include "cfcl/rng.hpp"

namespace cfcl {

struct TsneOptions {
  double perplexity = 30.0;
  int iterations = 1000;
  double theta = 0.5;
  int exaggeration_iterations = 250;
  double exaggeration = 12.0;
  std::uint64_t seed = 0;
};

namespace detail {

// Barnes-Hut quadtree over the 2-D embedding.
class QuadTree {
 public:
  explicit QuadTree(std::span<const double> y) : y_(y) {
    const std::size_t n = y.size() / 2;
    double min_x = INFINITY, max_x = -INFINITY, min_y = INFINITY, max_y = -INFINITY;
    for (std::size_t i = 0; i < n; ++i) {
      min_x = std::min(min_x, y[2 * i]);
      max_x = std::max(max_x, y[2 * i]);
      min_y = std::min(min_y, y[2 * i + 1]);
      max_y = std::max(max_y, y[2 * i + 1]);
    }
    const double half = 0.5 * std::max(max_x - min_x, max_y - min_y) + 1e-5;
    nodes_.push_back(Node{0.5 * (min_x + max_x), 0.5 * (min_y + max_y), half});
    for (std::size_t i = 0; i < n; ++i) insert(0, i, 0);
  }

  // Accumulates the repulsive force on point i and its contribution to Z.
  void repulsion(std::size_t i, double theta, double& fx, double& fy, double& z) const { visit(0, i, theta, fx, fy, z); }

 private:
  struct Node {
    double cx, cy, half;
    double mass_x = 0, mass_y = 0;
    std::size_t count = 0;
    std::int64_t point = -1;
    std::array<std::int64_t, 4> child{-1, -1, -1, -1};
    bool leaf() const { return child[0] < 0; }
  };

  void insert(std::size_t node, std::size_t i, int depth) {
    const double px = y_[2 * i], py = y_[2 * i + 1];
    Node& nd = nodes_[node];
    nd.mass_x = (nd.mass_x * nd.count + px) / (nd.count + 1);
    nd.mass_y = (nd.mass_y * nd.count + py) / (nd.count + 1);
    ++nd.count;
    if (nd.leaf()) {
      if (nd.count == 1) {
        nd.point = static_cast<std::int64_t>(i);
        return;
      }
      if (depth > 40) return;  // coincident points stay aggregated
      const auto old = static_cast<std::size_t>(nodes_[node].point);
      nodes_[node].point = -1;
      subdivide(node);
      insert_child(node, old, depth);
    }
    insert_child(node, i, depth);
  }

  void subdivide(std::size_t node) {
    const double h = nodes_[node].half * 0.5;
    const double cx = nodes_[node].cx, cy = nodes_[node].cy;
    for (int q = 0; q < 4; ++q) {
      nodes_.push_back(Node{cx + ((q & 1) ? h : -h), cy + ((q & 2) ? h : -h), h});
      nodes_[node].child[static_cast<std::size_t>(q)] = static_cast<std::int64_t>(nodes_.size() - 1);
    }
  }

  void insert_child(std::size_t node, std::size_t i, int depth) {
    const int q = (y_[2 * i] > nodes_[node].cx ? 1 : 0) + (y_[2 * i + 1] > nodes_[node].cy ? 2 : 0);
    insert(static_cast<std::size_t>(nodes_[node].child[static_cast<std::size_t>(q)]), i, depth + 1);
  }

  void visit(std::size_t node, std::size_t i, double theta, double& fx, double& fy, double& z) const {
    const Node& nd = nodes_[node];
    if (nd.count == 0 || (nd.leaf() && nd.point == static_cast<std::int64_t>(i) && nd.count == 1)) return;
    const double dx = y_[2 * i] - nd.mass_x, dy = y_[2 * i + 1] - nd.mass_y;
    const double d2 = dx * dx + dy * dy;
    if (nd.leaf() || (2.0 * nd.half) * (2.0 * nd.half) < theta * theta * d2) {
      double count = static_cast<double>(nd.count);
      if (nd.leaf() && nd.point == static_cast<std::int64_t>(i)) count -= 1.0;
      const double q = 1.0 / (1.0 + d2);
      z += count * q;
      fx += count * q * q * dx;
      fy += count * q * q * dy;
      return;
    }
    for (std::int64_t c : nd.child) visit(static_cast<std::size_t>(c), i, theta, fx, fy, z);
  }

  std::span<const double> y_;
  std::vector<Node> nodes_;
};

}  // namespace detail

// Barnes-Hut t-SNE to two dimensions. Input is row-major (n x dim).
inline std::vector<double> tsne(std::span<const float> data, std::size_t dim, const TsneOptions& opt) {
  if (dim == 0 || data.size() % dim != 0) throw DomainError("tsne: data shape mismatch");
  const std::size_t n = data.size() / dim;
  if (n < 4) throw DomainError("tsne: need at least 4 points");
  const double perplexity = std::min(opt.perplexity, (static_cast<double>(n) - 1.0) / 3.0);
  const std::size_t k = std::min(n - 1, static_cast<std::size_t>(3.0 * perplexity));

  // Exact neighbours, then per-point bandwidth by bisection on entropy.
  std::vector<std::size_t> nbr(n * k);
  std::vector<double> pcond(n * k);
  std::vector<std::pair<double, std::size_t>> d(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double s = 0;
      for (std::size_t t = 0; t < dim; ++t) {
        const double diff = double(data[i * dim + t]) - data[j * dim + t];
        s += diff * diff;
      }
      d[m++] = {s, j};
    }
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.begin() + static_cast<std::ptrdiff_t>(m));
    double beta = 1.0, lo = 0.0, hi = INFINITY;
    const double target = std::log(perplexity);
    std::vector<double> p(k);
    for (int it = 0; it < 200; ++it) {
      double sum = 0, h = 0;
      for (std::size_t t = 0; t < k; ++t) {
        p[t] = std::exp(-beta * (d[t].first - d[0].first));
        sum += p[t];
      }
      for (std::size_t t = 0; t < k; ++t) {
        p[t] /= sum;
        if (p[t] > 1e-12) h -= p[t] * std::log(p[t]);
      }
      if (std::abs(h - target) < 1e-5) break;
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    for (std::size_t t = 0; t < k; ++t) {
      nbr[i * k + t] = d[t].second;
      pcond[i * k + t] = p[t];
    }
  }

  // Symmetrize into a sparse row list: P_ij = (p_j|i + p_i|j) / 2n.
  std::vector<std::vector<std::pair<std::size_t, double>>> rows(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < k; ++t) {
      const std::size_t j = nbr[i * k + t];
      const double v = pcond[i * k + t] / (2.0 * n);
      rows[i].emplace_back(j, v);
      rows[j].emplace_back(i, v);
    }
  for (auto& r : rows) {
    std::sort(r.begin(), r.end());
    std::vector<std::pair<std::size_t, double>> merged;
    for (const auto& e : r) {
      if (!merged.empty() && merged.back().first == e.first)
        merged.back().second += e.second;
      else
        merged.push_back(e);
    }
    r = std::move(merged);
  }

  Engine eng(derive_seed(opt.seed, "tsne-init"));
  std::vector<double> y(2 * n), update(2 * n, 0.0), gains(2 * n, 1.0), grad(2 * n);
  for (double& v : y) v = 1e-2 * standard_normal(eng);
  const double lr = std::max(static_cast<double>(n) / opt.exaggeration / 4.0, 50.0);

  for (int iter = 0; iter < opt.iterations; ++iter) {
    const bool early = iter < opt.exaggeration_iterations;
    const double exag = early ? opt.exaggeration : 1.0;
    const double momentum = early ? 0.5 : 0.8;
    detail::QuadTree tree(y);
    std::vector<double> rep(2 * n, 0.0);
    double z = 0;
    for (std::size_t i = 0; i < n; ++i) tree.repulsion(i, opt.theta, rep[2 * i], rep[2 * i + 1], z);
    for (std::size_t i = 0; i < n; ++i) {
      double ax = 0, ay = 0;
      for (const auto& [j, pij] : rows[i]) {
        const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
        const double q = 1.0 / (1.0 + dx * dx + dy * dy);
        ax += pij * q * dx;
        ay += pij * q * dy;
      }
      grad[2 * i] = 4.0 * (exag * ax - rep[2 * i] / z);
      grad[2 * i + 1] = 4.0 * (exag * ay - rep[2 * i + 1] / z);
    }
    for (std::size_t t = 0; t < 2 * n; ++t) {
      gains[t] = (grad[t] > 0) != (update[t] > 0) ? gains[t] + 0.2 : std::max(gains[t] * 0.8, 0.01);
      update[t] = momentum * update[t] - lr * gains[t] * grad[t];
      y[t] += update[t];
    }
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
      mx += y[2 * i];
      my += y[2 * i + 1];
    }
    mx /= n;
    my /= n;
    for (std::size_t i = 0; i < n; ++i) {
      y[2 * i] -= mx;
      y[2 * i + 1] -= my;
    }
  }
  return y;
}

// Seeded subsample of [0, n) down to at most `max_points`, in ascending order.
inline std::vector<std::size_t> tsne_subsample(std::size_t n, std::size_t max_points, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n <= max_points) return idx;
  Engine eng(derive_seed(seed, "tsne-subsample"));
  for (std::size_t i = 0; i < max_points; ++i) std::swap(idx[i], idx[i + uniform_index(eng, n - i)]);
  idx.resize(max_points);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace cfcl
