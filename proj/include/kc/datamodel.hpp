#pragma once

// Shared domain types: metrics, activation datasets and estimate records.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kc/error.hpp"

namespace kc {

enum class MetricKind : std::uint8_t { Lp = 0, Cosine = 1, Discrete = 2 };

struct MetricSpec {
  MetricKind kind = MetricKind::Lp;
  // p for Lp (IEEE +inf selects the max-norm), c for Discrete, unused for Cosine.
  double parameter = 2.0;
  // Distances below this are collisions.
  double zero_tol = 1e-12;

  static MetricSpec lp(double p) { return {MetricKind::Lp, p}; }
  static MetricSpec l1() { return lp(1.0); }
  static MetricSpec l2() { return lp(2.0); }
  static MetricSpec linf() { return lp(std::numeric_limits<double>::infinity()); }
  static MetricSpec cosine() { return {MetricKind::Cosine, 0.0}; }
  static MetricSpec discrete(double c) { return {MetricKind::Discrete, c}; }

  friend bool operator==(const MetricSpec&, const MetricSpec&) = default;
};

inline void validate(const MetricSpec& m) {
  if (!(m.zero_tol > 0.0))
    throw ValidationError("metric", "metric zero_tol must be > 0");
  switch (m.kind) {
    case MetricKind::Lp:
      if (std::isnan(m.parameter) || m.parameter < 1.0)
        throw ValidationError("metric", "Lp metric requires p >= 1");
      return;
    case MetricKind::Cosine:
      return;
    case MetricKind::Discrete:
      if (!(m.parameter > 0.0) || !std::isfinite(m.parameter))
        throw ValidationError("metric", "discrete metric requires finite c > 0");
      return;
  }
  throw ValidationError("metric", "unknown metric kind");
}

inline std::string to_string(const MetricSpec& m) {
  switch (m.kind) {
    case MetricKind::Lp:
      return std::isinf(m.parameter) ? "linf" : "l" + std::to_string(m.parameter);
    case MetricKind::Cosine:
      return "cosine";
    case MetricKind::Discrete:
      return "discrete(" + std::to_string(m.parameter) + ")";
  }
  return "?";
}

enum class ModelFamily : std::uint8_t { EncoderOnly = 0, DecoderOnly = 1, EncoderDecoder = 2, Other = 3 };

struct ModelMeta {
  std::string model_id;
  ModelFamily family = ModelFamily::Other;
  std::uint64_t param_count = 1;
  std::string notes;

  friend bool operator==(const ModelMeta&, const ModelMeta&) = default;
};

// One hidden layer's images f^k(x_i), row-major n x dim.
struct LayerBlock {
  std::uint32_t index = 1;
  std::size_t dim = 1;
  std::vector<double> values;
  MetricSpec metric;

  std::size_t size() const { return dim == 0 ? 0 : values.size() / dim; }
  const double* row(std::size_t i) const { return values.data() + i * dim; }

  friend bool operator==(const LayerBlock&, const LayerBlock&) = default;
};

// Immutable once validated. Values are held in 64-bit; on-disk payloads are
// f32, so anything loaded from a dump is exactly f32-representable.
struct ActivationDataset {
  std::vector<std::uint64_t> example_ids;
  std::vector<double> losses;
  std::optional<std::vector<std::uint32_t>> labels;
  std::vector<LayerBlock> layers;
  ModelMeta model_meta;

  std::size_t n() const { return losses.size(); }
  std::size_t num_layers() const { return layers.size(); }

  // 1-based lookup; throws naming the valid range.
  const LayerBlock& layer(std::size_t k) const {
    if (k < 1 || k > layers.size())
      throw ValidationError("layer-range", "layer index " + std::to_string(k) +
                                               " out of range; valid layers are 1.." +
                                               std::to_string(layers.size()));
    return layers[k - 1];
  }

  friend bool operator==(const ActivationDataset&, const ActivationDataset&) = default;
};

inline void validate(const ActivationDataset& d) {
  const std::size_t n = d.n();
  if (n == 0) throw ValidationError("empty-dataset", "dataset must contain at least one example");
  if (d.layers.empty()) throw ValidationError("no-layers", "dataset must contain at least one layer");
  if (d.example_ids.size() != n)
    throw ValidationError("dataset", "example_ids length does not match loss count");
  if (d.labels && d.labels->size() != n)
    throw ValidationError("dataset", "labels length does not match loss count");
  if (d.model_meta.param_count < 1)
    throw ValidationError("dataset", "model_meta.param_count must be >= 1");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(d.losses[i]) || d.losses[i] < 0.0)
      throw ValidationError("loss", "loss of example " + std::to_string(i) +
                                        " must be finite and >= 0");
  }
  for (std::size_t l = 0; l < d.layers.size(); ++l) {
    const auto& b = d.layers[l];
    const std::string tag = "layer " + std::to_string(l + 1);
    if (b.index != l + 1)
      throw ValidationError("layer-index", tag + " has index " + std::to_string(b.index) +
                                               "; indices must be contiguous 1..L");
    if (b.dim < 1) throw ValidationError("layer-dim", tag + " has dim 0");
    if (b.values.size() != n * b.dim)
      throw ValidationError("layer-size", tag + " does not hold exactly n vectors");
    validate(b.metric);
    for (std::size_t i = 0; i < b.values.size(); ++i) {
      if (!std::isfinite(b.values[i]))
        throw ValidationError("non-finite", tag + " example " + std::to_string(i / b.dim) +
                                                " holds a non-finite value");
    }
  }
}

struct MonteCarloMode {
  std::size_t M = 0;
  std::uint64_t seed = 0;
};

struct VolatilityEstimate {
  std::size_t layer = 1;
  double value = 0.0;
  bool exact = false;
  MonteCarloMode mc;  // M == n for exact estimates
  std::size_t included_pairs = 0;
  std::size_t skipped_pairs = 0;
};

}  // namespace kc
