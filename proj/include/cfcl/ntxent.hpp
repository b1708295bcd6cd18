#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cfcl/error.hpp"

namespace cfcl {

template <std::floating_point T>
T cosine_similarity(std::span<const T> u, std::span<const T> v) {
  if (u.size() != v.size()) throw DomainError("cosine_similarity: dimension mismatch");
  T uu = 0, vv = 0, uv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uu += u[i] * u[i];
    vv += v[i] * v[i];
    uv += u[i] * v[i];
  }
  if (!(uu > 0) || !(vv > 0)) throw DomainError("cosine_similarity: zero vector");
  return std::clamp(uv / (std::sqrt(uu) * std::sqrt(vv)), T(-1), T(1));
}

template <std::floating_point T>
struct NtXentResult {
  T total = 0;             // summed over all 2N ordered positive pairs
  T mean = 0;              // total / (2N)
  std::vector<T> grad;     // d(total)/d(projections), same layout as input; empty if not requested
};

// NT-Xent over 2N projections stored row-major as a (2N x dim) matrix. Rows
// [0, N) are the first views and row i pairs with row i + N. For anchor i with
// positive j: L(i,j) = -log( exp(s_ij / tau) / sum_{k != i} exp(s_ik / tau) ),
// s = cosine similarity.
template <std::floating_point T>
NtXentResult<T> nt_xent(std::span<const T> projections, std::size_t dim, T tau, bool with_grad = false) {
  if (dim == 0 || projections.size() % dim != 0) throw DomainError("nt_xent: projections not a multiple of dim");
  const std::size_t rows = projections.size() / dim;
  if (rows < 2 || rows % 2 != 0) throw DomainError("nt_xent: need 2N rows with N >= 1");
  if (!(tau > 0) || !std::isfinite(tau)) throw DomainError("nt_xent: temperature must be positive");
  for (T v : projections)
    if (!std::isfinite(v)) throw NumericError("nt_xent: non-finite projection");
  const std::size_t n_pairs = rows / 2;
  auto partner = [n_pairs](std::size_t i) { return i < n_pairs ? i + n_pairs : i - n_pairs; };

  std::vector<T> unit(projections.size());
  std::vector<T> norms(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    T s = 0;
    for (std::size_t d = 0; d < dim; ++d) s += projections[i * dim + d] * projections[i * dim + d];
    if (!(s > 0)) throw DomainError("nt_xent: zero projection at row " + std::to_string(i));
    norms[i] = std::sqrt(s);
    for (std::size_t d = 0; d < dim; ++d) unit[i * dim + d] = projections[i * dim + d] / norms[i];
  }

  std::vector<T> logits(rows * rows);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t k = i; k < rows; ++k) {
      T dot = 0;
      for (std::size_t d = 0; d < dim; ++d) dot += unit[i * dim + d] * unit[k * dim + d];
      logits[i * rows + k] = logits[k * rows + i] = dot / tau;
    }

  NtXentResult<T> result;
  // weights[i][k] = dL/dlogit_ik = softmax_ik - [k is positive of i]
  std::vector<T> weights(with_grad ? rows * rows : 0);
  for (std::size_t i = 0; i < rows; ++i) {
    T peak = -std::numeric_limits<T>::infinity();
    for (std::size_t k = 0; k < rows; ++k)
      if (k != i) peak = std::max(peak, logits[i * rows + k]);
    T denom = 0;
    for (std::size_t k = 0; k < rows; ++k)
      if (k != i) denom += std::exp(logits[i * rows + k] - peak);
    const T log_denom = peak + std::log(denom);
    result.total += log_denom - logits[i * rows + partner(i)];
    if (with_grad) {
      for (std::size_t k = 0; k < rows; ++k)
        if (k != i) weights[i * rows + k] = std::exp(logits[i * rows + k] - log_denom);
      weights[i * rows + partner(i)] -= T(1);
    }
  }
  result.mean = result.total / static_cast<T>(rows);
  if (!std::isfinite(result.total)) throw NumericError("nt_xent: non-finite loss");

  if (with_grad) {
    result.grad.assign(projections.size(), T(0));
    std::vector<T> g_unit(dim);
    for (std::size_t i = 0; i < rows; ++i) {
      std::fill(g_unit.begin(), g_unit.end(), T(0));
      for (std::size_t k = 0; k < rows; ++k) {
        if (k == i) continue;
        const T w = (weights[i * rows + k] + weights[k * rows + i]) / tau;
        for (std::size_t d = 0; d < dim; ++d) g_unit[d] += w * unit[k * dim + d];
      }
      // project out the radial component: d unit / d z = (I - u u^T) / |z|
      T radial = 0;
      for (std::size_t d = 0; d < dim; ++d) radial += g_unit[d] * unit[i * dim + d];
      for (std::size_t d = 0; d < dim; ++d)
        result.grad[i * dim + d] = (g_unit[d] - radial * unit[i * dim + d]) / norms[i];
    }
  }
  return result;
}

}  // namespace cfcl
