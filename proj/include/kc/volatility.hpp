#pragma once

// k-volatility: the pointwise value, the exact full-pairwise expectation, the
// Monte-Carlo subset estimator and per-layer profiles.
//
// Every estimator averages |L_i - L_j| / d_k(i, j) over ordered pairs i != j
// whose representation distance is at least the metric's zero_tol. Pairs below
// the tolerance are collisions and are counted as skipped.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kc/csv.hpp"
#include "kc/datamodel.hpp"
#include "kc/error.hpp"
#include "kc/metrics.hpp"
#include "kc/parallel.hpp"
#include "kc/rng.hpp"

namespace kc {

struct PairSum {
  double sum = 0.0;
  std::size_t included = 0;
  std::size_t skipped = 0;
};

// Sums the volatility ratio over ordered pairs of positions in `idx` (which
// may repeat, as in bootstrap resamples). Rows are grouped into fixed blocks
// and block sums are merged in order, so the parallel and serial paths agree
// bit-for-bit.
template <typename DistFn>
PairSum accumulate_pairs(std::span<const std::size_t> idx, std::span<const double> losses,
                         DistFn&& dist, double zero_tol, bool parallel) {
  const std::size_t m = idx.size();
  std::vector<PairSum> parts(block_count(m, kRowBlock));
  auto run = [&](std::size_t b, std::size_t begin, std::size_t end) {
    PairSum part;
    for (std::size_t a = begin; a < end; ++a) {
      double row = 0.0;
      const double la = losses[idx[a]];
      for (std::size_t c = 0; c < m; ++c) {
        if (c == a) continue;
        const double d = dist(idx[a], idx[c]);
        if (d < zero_tol) {
          ++part.skipped;
          continue;
        }
        row += std::abs(la - losses[idx[c]]) / d;
        ++part.included;
      }
      part.sum += row;
    }
    parts[b] = part;
  };
  if (parallel) {
    parallel_blocks(m, kRowBlock, run);
  } else {
    for (std::size_t b = 0; b < parts.size(); ++b) run(b, b * kRowBlock, std::min(m, (b + 1) * kRowBlock));
  }
  PairSum total;
  for (const auto& p : parts) {
    total.sum += p.sum;
    total.included += p.included;
    total.skipped += p.skipped;
  }
  return total;
}

// Discrete layers are evaluated at unit scale and the result divided by c
// once, so value(c) == value(1) / c holds exactly. Every other metric has
// scale 1.
inline double metric_scale(const MetricSpec& m) { return m.kind == MetricKind::Discrete ? m.parameter : 1.0; }

// Distance at unit scale; compare against zero_tol / metric_scale.
inline auto layer_distance(const LayerBlock& block) {
  MetricSpec unit = block.metric;
  if (unit.kind == MetricKind::Discrete) unit.parameter = 1.0;
  return [&block, unit](std::size_t i, std::size_t j) {
    return distance(std::span<const double>(block.row(i), block.dim),
                    std::span<const double>(block.row(j), block.dim), unit);
  };
}

inline double unit_tolerance(const MetricSpec& m) { return m.zero_tol / metric_scale(m); }

struct PointVolatility {
  std::size_t index = 0;
  std::size_t layer = 1;
  double sigma = 0.0;
  std::size_t partners = 0;
  // Sparsity / variation factors; absent when the point's loss is 0, where the
  // loss-ratio rewriting is undefined.
  std::optional<double> sparsity_term;     // mean of 1/d
  std::optional<double> variation_term;    // mean of |1 - L_j / L_i|
  std::optional<double> decomposed_sigma;  // L_i * mean((1/d) * |1 - L_j / L_i|)
};

inline PointVolatility point_volatility(const ActivationDataset& ds, std::size_t k, std::size_t i) {
  const auto& block = ds.layer(k);
  if (i >= ds.n())
    throw ValidationError("example-range", "example index " + std::to_string(i) + " out of range; valid 0.." +
                                               std::to_string(ds.n() - 1));
  const auto dist = layer_distance(block);
  const double tol = unit_tolerance(block.metric);
  const double li = ds.losses[i];
  double ratio = 0.0, inv = 0.0, var = 0.0, prod = 0.0;
  std::size_t count = 0;
  for (std::size_t j = 0; j < ds.n(); ++j) {
    if (j == i) continue;
    const double d = dist(i, j);
    if (d < tol) continue;
    const double lj = ds.losses[j];
    ratio += std::abs(li - lj) / d;
    inv += 1.0 / d;
    if (li > 0.0) {
      const double v = std::abs(1.0 - lj / li);
      var += v;
      prod += v / d;
    }
    ++count;
  }
  if (count == 0)
    throw RuntimeError("no-admissible-partner", "example " + std::to_string(i) + " collides with every partner at layer " +
                                                    std::to_string(k));
  PointVolatility pv;
  pv.index = i;
  pv.layer = k;
  pv.partners = count;
  const double c = static_cast<double>(count);
  const double scale = metric_scale(block.metric);
  pv.sigma = ratio / c / scale;
  if (li > 0.0) {
    pv.sparsity_term = inv / c / scale;
    pv.variation_term = var / c;
    pv.decomposed_sigma = li * (prod / c) / scale;
  }
  return pv;
}

inline VolatilityEstimate expected_volatility_exact(const ActivationDataset& ds, std::size_t k) {
  const auto& block = ds.layer(k);
  std::vector<std::size_t> idx(ds.n());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto ps = accumulate_pairs(idx, ds.losses, layer_distance(block), unit_tolerance(block.metric), true);
  if (ps.included == 0)
    throw RuntimeError("no-admissible-pairs", "layer " + std::to_string(k) + " has no admissible pair (n=" +
                                                  std::to_string(ds.n()) + ", all pairs collide)");
  VolatilityEstimate e;
  e.layer = k;
  e.value = ps.sum / static_cast<double>(ps.included) / metric_scale(block.metric);
  e.exact = true;
  e.mc.M = ds.n();
  e.included_pairs = ps.included;
  e.skipped_pairs = ps.skipped;
  return e;
}

inline constexpr int kMaxSubsetRetries = 16;

// Monte-Carlo estimate over a uniform M-subset drawn with SplitMix64(seed ^ k).
inline VolatilityEstimate est_k_vol(const ActivationDataset& ds, std::size_t k, std::size_t M, std::uint64_t seed) {
  const auto& block = ds.layer(k);
  if (M < 2 || M > ds.n())
    throw ValidationError("subset-size", "M must satisfy 2 <= M <= n (n=" + std::to_string(ds.n()) + ", M=" +
                                             std::to_string(M) + ")");
  SplitMix64 rng(seed ^ static_cast<std::uint64_t>(k));
  const auto dist = layer_distance(block);
  for (int attempt = 0; attempt <= kMaxSubsetRetries; ++attempt) {
    const auto idx = sample_subset(rng, ds.n(), M);
    const auto ps = accumulate_pairs(idx, ds.losses, dist, unit_tolerance(block.metric), true);
    if (ps.included == 0) continue;
    VolatilityEstimate e;
    e.layer = k;
    e.value = ps.sum / static_cast<double>(ps.included) / metric_scale(block.metric);
    e.exact = false;
    e.mc = {M, seed};
    e.included_pairs = ps.included;
    e.skipped_pairs = ps.skipped;
    return e;
  }
  throw RuntimeError("no-admissible-pairs", "layer " + std::to_string(k) + ": " +
                                                std::to_string(kMaxSubsetRetries + 1) +
                                                " sampled subsets had no admissible pair");
}

struct LayerProfileEntry {
  std::size_t layer = 1;
  double relative_depth = 1.0;
  VolatilityEstimate estimate;
};

struct LayerProfile {
  std::vector<LayerProfileEntry> entries;
};

inline LayerProfile layer_profile(const ActivationDataset& ds, std::size_t M, std::uint64_t seed, bool exact = false) {
  LayerProfile p;
  const std::size_t L = ds.num_layers();
  for (std::size_t k = 1; k <= L; ++k) {
    LayerProfileEntry e;
    e.layer = k;
    e.relative_depth = static_cast<double>(k) / static_cast<double>(L);
    try {
      e.estimate = exact ? expected_volatility_exact(ds, k) : est_k_vol(ds, k, M, seed);
    } catch (const Error& err) {
      const std::string msg = "layer " + std::to_string(k) + ": " + err.what();
      if (err.error_class() == ErrorClass::Validation) throw ValidationError(err.code(), msg);
      throw RuntimeError(err.code(), msg);
    }
    p.entries.push_back(e);
  }
  return p;
}

inline std::vector<std::string> estimate_header() {
  return {"layer", "relative_depth", "epsilon", "mode", "M", "seed", "included_pairs", "skipped_pairs"};
}

inline std::vector<std::string> estimate_row(const VolatilityEstimate& e, double relative_depth) {
  return {std::to_string(e.layer),
          csv::num(relative_depth),
          csv::num(e.value),
          e.exact ? "exact" : "montecarlo",
          std::to_string(e.mc.M),
          e.exact ? "" : std::to_string(e.mc.seed),
          std::to_string(e.included_pairs),
          std::to_string(e.skipped_pairs)};
}

inline std::string to_csv(const LayerProfile& p) {
  csv::Table t;
  t.header = estimate_header();
  for (const auto& e : p.entries) t.rows.push_back(estimate_row(e.estimate, e.relative_depth));
  return t.str();
}

}  // namespace kc
