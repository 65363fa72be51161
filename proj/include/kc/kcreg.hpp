#pragma once

// Volatility-regularized training objective: mean cross-entropy plus a
// penalty on the k-volatility of a Beta-sampled layer, with exact gradients.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kc/error.hpp"
#include "kc/rng.hpp"
#include "kc/toynet.hpp"

namespace kc {

// Beta(a, b) sampled by inverse transform on a tabulated CDF (midpoint rule on
// a 4096-cell grid, linear interpolation inside a cell).
class BetaTable {
public:
  static constexpr std::size_t kCells = 4096;

  BetaTable(double a, double b) : a_(a), b_(b) {
    if (!(a > 0.0) || !(b > 0.0)) throw ValidationError("beta", "Beta shape parameters must be > 0");
    constexpr double h = 1.0 / kCells;
    cdf_[0] = 0.0;
    for (std::size_t i = 0; i < kCells; ++i) {
      const double x = (static_cast<double>(i) + 0.5) * h;
      cdf_[i + 1] = cdf_[i] + std::exp((a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x)) * h;
    }
    const double total = cdf_[kCells];
    for (auto& v : cdf_) v /= total;
    cdf_[kCells] = 1.0;
  }

  double cdf(double x) const {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double pos = x * kCells;
    const auto i = static_cast<std::size_t>(pos);
    return cdf_[i] + (pos - static_cast<double>(i)) * (cdf_[i + 1] - cdf_[i]);
  }

  double inverse(double u) const {
    if (u <= 0.0) return 0.0;
    if (u >= 1.0) return 1.0;
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    const auto i = static_cast<std::size_t>(it - cdf_.begin()) - 1;
    const double w = cdf_[i + 1] - cdf_[i];
    const double frac = w > 0.0 ? (u - cdf_[i]) / w : 0.0;
    return (static_cast<double>(i) + frac) / kCells;
  }

  double sample(SplitMix64& rng) const { return inverse(rng.uniform()); }

  double alpha() const { return a_; }
  double beta() const { return b_; }

private:
  double a_, b_;
  std::array<double, kCells + 1> cdf_{};
};

// k = max(floor(x * n_layers), 1), capped at n_layers.
inline std::size_t layer_from_draw(double x, std::size_t n_layers) {
  const auto k = static_cast<std::size_t>(std::floor(x * static_cast<double>(n_layers)));
  return std::clamp<std::size_t>(k, 1, n_layers);
}

enum class PenaltyNormalization {
  PairSumOverMSquared,  // lambda * (sum over included pairs) / M^2
  MeanOverIncluded,     // lambda * (sum over included pairs) / included
};

struct KCRegConfig {
  double beta_a = 2.0;
  double beta_b = 1.0;
  double lambda = 0.0;
  std::size_t M = 32;
  PenaltyNormalization normalization = PenaltyNormalization::PairSumOverMSquared;
  bool stop_gradient_denominator = false;
  double zero_tol = 1e-12;
};

inline void validate(const KCRegConfig& c) {
  if (!(c.beta_a > 0.0) || !(c.beta_b > 0.0)) throw ValidationError("kcreg", "Beta shape parameters must be > 0");
  if (!(c.lambda >= 0.0)) throw ValidationError("kcreg", "lambda must be >= 0");
  if (c.M < 2) throw ValidationError("kcreg", "M must be >= 2");
}

struct KCRegResult {
  double objective = 0.0;
  double mean_loss = 0.0;
  double penalty = 0.0;
  std::size_t layer = 0;
  double sigma_hat = std::numeric_limits<double>::quiet_NaN();  // mean over included pairs
  std::size_t included_pairs = 0;
  std::size_t skipped_pairs = 0;
  Gradients grad;
};

// Evaluates the objective on a batch and its exact gradient. The layer draw and
// the M-subset come from SplitMix64(seed) in that order. With lambda = 0 the
// objective and gradient are those of plain mean cross-entropy; the volatility
// of the drawn layer is still measured for monitoring.
inline KCRegResult kcreg_loss(const ToyNet& net, const LabeledData& batch, const KCRegConfig& cfg, std::uint64_t seed,
                              const BetaTable* table = nullptr) {
  validate(cfg);
  const std::size_t N = batch.size();
  if (N < cfg.M)
    throw ValidationError("kcreg", "batch size " + std::to_string(N) + " is smaller than M=" + std::to_string(cfg.M));
  std::optional<BetaTable> owned;
  if (!table) table = &owned.emplace(cfg.beta_a, cfg.beta_b);

  SplitMix64 rng(seed);
  KCRegResult r;
  r.layer = layer_from_draw(table->sample(rng), net.num_layers());
  const auto subset = sample_subset(rng, N, cfg.M);

  const auto trace = forward(net, batch.X);
  Eigen::MatrixXd dlogits;
  const Eigen::VectorXd loss = cross_entropy(trace.logits(), batch.y, &dlogits);
  r.mean_loss = loss.mean();

  const Eigen::MatrixXd& H = trace.post[r.layer - 1];
  Eigen::VectorXd dloss = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(N));
  Eigen::MatrixXd dH = Eigen::MatrixXd::Zero(H.rows(), H.cols());
  double pair_sum = 0.0;
  for (std::size_t a = 0; a < subset.size(); ++a) {
    const auto i = static_cast<Eigen::Index>(subset[a]);
    for (std::size_t c = 0; c < subset.size(); ++c) {
      if (c == a) continue;
      const auto j = static_cast<Eigen::Index>(subset[c]);
      const Eigen::RowVectorXd diff = H.row(i) - H.row(j);
      const double d = diff.norm();
      if (d < cfg.zero_tol) {
        ++r.skipped_pairs;
        continue;
      }
      ++r.included_pairs;
      const double dl = loss(i) - loss(j);
      const double ratio = std::abs(dl) / d;
      pair_sum += ratio;
      const double sgn = dl > 0.0 ? 1.0 : (dl < 0.0 ? -1.0 : 0.0);
      dloss(i) += sgn / d;
      dloss(j) -= sgn / d;
      if (!cfg.stop_gradient_denominator) {
        // d(|dl| / d) / dh_i = -|dl| / d^3 * (h_i - h_j)
        const Eigen::RowVectorXd g = (-ratio / (d * d)) * diff;
        dH.row(i) += g;
        dH.row(j) -= g;
      }
    }
  }
  if (r.included_pairs > 0) r.sigma_hat = pair_sum / static_cast<double>(r.included_pairs);

  double scale = 0.0;
  if (cfg.lambda > 0.0) {
    if (r.included_pairs == 0)
      throw RuntimeError("no-admissible-pairs", "all sampled pairs collide at layer " + std::to_string(r.layer));
    const double m = static_cast<double>(cfg.M);
    scale = cfg.normalization == PenaltyNormalization::PairSumOverMSquared
                ? cfg.lambda / (m * m)
                : cfg.lambda / static_cast<double>(r.included_pairs);
    r.penalty = scale * pair_sum;
  }
  r.objective = r.mean_loss + r.penalty;

  const double inv_n = 1.0 / static_cast<double>(N);
  Eigen::VectorXd coeff = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(N), inv_n);
  std::vector<Eigen::MatrixXd> extra;
  if (scale > 0.0) {
    coeff += scale * dloss;
    extra.resize(net.num_layers());
    extra[r.layer - 1] = scale * dH;
  }
  const Eigen::MatrixXd upstream = coeff.asDiagonal() * dlogits;
  r.grad = backward(net, trace, upstream, extra);
  return r;
}

}  // namespace kc
