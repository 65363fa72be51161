#pragma once

// Distances under a layer's MetricSpec and full pairwise matrices.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kc/csv.hpp"
#include "kc/datamodel.hpp"
#include "kc/error.hpp"
#include "kc/parallel.hpp"

namespace kc {

// Reductions run sequentially over components so the result does not depend
// on vectorisation or worker count.
inline double distance(std::span<const double> a, std::span<const double> b, const MetricSpec& m) {
  if (a.size() != b.size())
    throw ValidationError("dimension-mismatch", "distance between vectors of width " +
                                                    std::to_string(a.size()) + " and " +
                                                    std::to_string(b.size()));
  const std::size_t n = a.size();
  switch (m.kind) {
    case MetricKind::Lp: {
      const double p = m.parameter;
      if (std::isinf(p)) {
        double best = 0.0;
        for (std::size_t i = 0; i < n; ++i) best = std::max(best, std::abs(a[i] - b[i]));
        return best;
      }
      if (p == 1.0) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += std::abs(a[i] - b[i]);
        return s;
      }
      if (p == 2.0) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double d = a[i] - b[i];
          s += d * d;
        }
        return std::sqrt(s);
      }
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += std::pow(std::abs(a[i] - b[i]), p);
      return std::pow(s, 1.0 / p);
    }
    case MetricKind::Cosine: {
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
      }
      na = std::sqrt(na);
      nb = std::sqrt(nb);
      if (!(na > m.zero_tol) || !(nb > m.zero_tol))
        throw ValidationError("zero-vector", "cosine distance is undefined for a zero vector");
      return std::clamp(1.0 - dot / (na * nb), 0.0, 2.0);
    }
    case MetricKind::Discrete:
      for (std::size_t i = 0; i < n; ++i)
        if (a[i] != b[i]) return m.parameter;
      return 0.0;
  }
  throw ValidationError("metric", "unknown metric kind");
}

struct DistanceMatrix {
  std::size_t layer = 1;
  std::size_t n = 0;
  std::vector<double> entries;  // row-major n x n
  // Ordered (i, j), i != j, with entry < zero_tol; row-major order.
  std::vector<std::pair<std::size_t, std::size_t>> collisions;

  double operator()(std::size_t i, std::size_t j) const { return entries[i * n + j]; }

  double max_entry() const {
    double best = 0.0;
    for (double v : entries) best = std::max(best, v);
    return best;
  }
};

inline constexpr std::size_t kRowBlock = 32;

inline DistanceMatrix pairwise(const LayerBlock& block) {
  const std::size_t n = block.size();
  const std::size_t dim = block.dim;
  DistanceMatrix dm;
  dm.layer = block.index;
  dm.n = n;
  dm.entries.assign(n * n, 0.0);

  // Each block owns the strict upper triangle of its rows.
  parallel_blocks(n, kRowBlock, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      std::span<const double> a(block.row(i), dim);
      for (std::size_t j = i + 1; j < n; ++j) {
        try {
          dm.entries[i * n + j] = distance(a, std::span<const double>(block.row(j), dim), block.metric);
        } catch (const ValidationError& e) {
          throw ValidationError(e.code(), "layer " + std::to_string(block.index) + ", pair (" +
                                              std::to_string(i) + ", " + std::to_string(j) + "): " + e.what());
        }
      }
    }
  });
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) dm.entries[i * n + j] = dm.entries[j * n + i];

  const double tol = block.metric.zero_tol;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && dm.entries[i * n + j] < tol) dm.collisions.emplace_back(i, j);
  return dm;
}

inline std::string to_csv(const DistanceMatrix& dm) {
  csv::Table t;
  for (std::size_t j = 0; j < dm.n; ++j) t.header.push_back(std::to_string(j));
  for (std::size_t i = 0; i < dm.n; ++i) {
    std::vector<std::string> row;
    row.reserve(dm.n);
    for (std::size_t j = 0; j < dm.n; ++j) row.push_back(csv::num(dm(i, j)));
    t.rows.push_back(std::move(row));
  }
  return t.str();
}

}  // namespace kc
