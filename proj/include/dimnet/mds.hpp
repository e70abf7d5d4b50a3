#pragma once

// Classical (Torgerson) multidimensional scaling: squared-distance matrix ->
// double-centered Gram matrix -> top eigenpairs via cyclic Jacobi sweeps.
// Deterministic: fixed sweep order, fixed tolerance, and a sign convention
// that makes each output axis's largest-magnitude coordinate positive.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "dimnet/eval.hpp"
#include "dimnet/net.hpp"

namespace dimnet {

struct SymmetricEigen {
  std::vector<double> values;               // unordered
  std::vector<std::vector<double>> vectors; // vectors[k] is the k-th column
};

// Cyclic Jacobi for a symmetric matrix. Converges when the off-diagonal
// Frobenius norm drops below tolerance * initial Frobenius norm.
inline SymmetricEigen jacobi_eigen(std::vector<std::vector<double>> a, double tolerance = 1e-10,
                                   int max_sweeps = 128) {
  const std::size_t n = a.size();
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;

  double fro = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) fro += a[i][j] * a[i][j];
  fro = std::sqrt(fro);
  const double threshold = tolerance * std::max(fro, 1e-300);

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) s += a[p][q] * a[p][q];
    return std::sqrt(2.0 * s);
  };

  int sweep = 0;
  while (off_norm() > threshold) {
    if (++sweep > max_sweeps) throw numeric_error("jacobi_eigen: no convergence");
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        const double app = a[p][p], aqq = a[q][q], apq = a[p][q];
        a[p][p] = app - t * apq;
        a[q][q] = aqq + t * apq;
        a[p][q] = a[q][p] = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = a[p][k] = c * akp - s * akq;
          a[k][q] = a[q][k] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
  }

  SymmetricEigen out;
  out.values.resize(n);
  out.vectors.assign(n, std::vector<double>(n));
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a[k][k];
    for (std::size_t i = 0; i < n; ++i) out.vectors[k][i] = v[i][k];
  }
  return out;
}

// Coordinates from a full pairwise Euclidean distance matrix. Negative
// eigenvalues (distances that are not exactly Euclidean) clamp to zero.
inline std::vector<std::vector<double>> classical_mds(
    const std::vector<std::vector<double>>& dist, std::size_t out_dims) {
  const std::size_t n = dist.size();
  if (out_dims < 1) throw std::invalid_argument("classical_mds: out_dims must be >= 1");
  if (n < out_dims + 1)
    throw std::invalid_argument("classical_mds: need at least out_dims + 1 points");

  std::vector<std::vector<double>> sq(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) sq[i][j] = dist[i][j] * dist[i][j];
  std::vector<double> row_mean(n, 0.0);
  double grand = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) row_mean[i] += sq[i][j];
    row_mean[i] /= static_cast<double>(n);
    grand += row_mean[i];
  }
  grand /= static_cast<double>(n);
  std::vector<std::vector<double>> gram(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      gram[i][j] = -0.5 * (sq[i][j] - row_mean[i] - row_mean[j] + grand);

  SymmetricEigen eig = jacobi_eigen(std::move(gram));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (eig.values[x] != eig.values[y]) return eig.values[x] > eig.values[y];
    return x < y;
  });

  std::vector<std::vector<double>> coords(n, std::vector<double>(out_dims, 0.0));
  for (std::size_t k = 0; k < out_dims; ++k) {
    const std::size_t e = order[k];
    const double scale = std::sqrt(std::max(eig.values[e], 0.0));
    std::size_t peak = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (std::abs(eig.vectors[e][i]) > std::abs(eig.vectors[e][peak])) peak = i;
    const double sign = eig.vectors[e][peak] < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i) coords[i][k] = sign * scale * eig.vectors[e][i];
  }
  return coords;
}

// MDS over a slice of embedding-table rows, using Euclidean distances
// between embeddings.
inline std::vector<std::vector<double>> mds_embed(const EmbeddingTable& table,
                                                  std::span<const std::size_t> row_indices,
                                                  std::size_t out_dims) {
  const std::size_t n = row_indices.size();
  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& x = table.rows[row_indices[i]].embedding;
      const auto& y = table.rows[row_indices[j]].embedding;
      double s = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) s += (x[k] - y[k]) * (x[k] - y[k]);
      dist[i][j] = dist[j][i] = std::sqrt(s);
    }
  return classical_mds(dist, out_dims);
}

}  // namespace dimnet
