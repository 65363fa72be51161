#pragma once

// Closed-form robustness bounds and the bootstrap certification procedure.
//
// Two denominators appear below. theorem_bound uses the concentration bound
//   V = 1 - 2 exp(-(2/B^2) (delta - B sqrt(log(2/P[A]) / 2))^2)
// while certify reproduces the test-time procedure literally, with coefficient
// 1 on the exponential, P[A] = 1/n and the factor eta folded into V.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
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
#include "kc/volatility.hpp"

namespace kc {

// Inverse standard normal CDF: Acklam's rational approximation followed by
// one Halley step against erfc.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("quantile", "normal quantile requires p in (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  if (p == 0.5) return 0.0;
  constexpr double lo = 0.02425, hi = 1.0 - lo;
  double x = 0.0;
  if (p < lo) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p > hi) {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

namespace detail {
inline void require_positive(double v, const char* name) {
  if (!(v > 0.0) || std::isnan(v))
    throw ValidationError("bound-argument", std::string(name) + " must be > 0");
}
inline void require_measure(double p_a) {
  if (!(p_a > 0.0 && p_a <= 1.0)) throw ValidationError("bound-argument", "P[A] must lie in (0, 1]");
}
}  // namespace detail

// B * sqrt(log(2 / P[A]) / 2): radius below which the tail bound is vacuous.
inline double tail_threshold(double B, double p_a) { return B * std::sqrt(0.5 * std::log(2.0 / p_a)); }

// Upper bound on P[d(x, A) >= delta] for a space of diameter below B.
inline double mcdiarmid_tail(double B, double delta, double p_a) {
  detail::require_positive(B, "B");
  detail::require_positive(delta, "delta");
  detail::require_measure(p_a);
  const double t = tail_threshold(B, p_a);
  if (delta <= t) return 1.0;
  const double gap = delta - t;
  return std::min(1.0, 2.0 * std::exp(-(2.0 / (B * B)) * gap * gap));
}

struct TheoremBound {
  double value = 1.0;
  double denominator = 0.0;  // V
  bool vacuous = true;
};

inline TheoremBound theorem_bound_detail(double eps, double delta, double eta, double B, double p_a) {
  if (!(eps >= 0.0)) throw ValidationError("bound-argument", "eps must be >= 0");
  detail::require_positive(delta, "delta");
  detail::require_positive(eta, "eta");
  detail::require_positive(B, "B");
  detail::require_measure(p_a);
  TheoremBound r;
  const double t = tail_threshold(B, p_a);
  if (delta <= t) return r;
  const double gap = delta - t;
  r.denominator = 1.0 - 2.0 * std::exp(-(2.0 / (B * B)) * gap * gap);
  if (!(r.denominator > 0.0)) return r;
  r.vacuous = false;
  r.value = std::min(1.0, eps * delta / (eta * r.denominator));
  return r;
}

// Bound on P[A' | d_k(f^k(x), f^k(A)) < delta] from an expected-volatility
// bound eps; 1 outside the valid regime.
inline double theorem_bound(double eps, double delta, double eta, double B, double p_a) {
  return theorem_bound_detail(eps, delta, eta, B, p_a).value;
}

// Unbounded representation space (B -> inf limit).
inline double corollary_bound_unbounded(double eps, double delta, double eta, double p_a) {
  if (!(eps >= 0.0) || !(delta >= 0.0)) throw ValidationError("bound-argument", "eps and delta must be >= 0");
  detail::require_positive(eta, "eta");
  if (!(p_a >= 0.0 && p_a < 1.0)) throw ValidationError("bound-argument", "P[A] must lie in [0, 1)");
  return std::min(1.0, eps * delta / (eta * (1.0 - p_a)));
}

// Zero-measure reference set (additionally P[A] -> 0).
inline double corollary_bound_zero_measure(double eps, double delta, double eta) {
  if (!(eps >= 0.0) || !(delta >= 0.0)) throw ValidationError("bound-argument", "eps and delta must be >= 0");
  detail::require_positive(eta, "eta");
  return std::min(1.0, eps * delta / eta);
}

struct UpperConfBound {
  double value = 0.0;
  double mean = 0.0;
  double stddev = 0.0;  // sample std (n - 1)
  std::size_t resamples = 0;
  std::size_t degenerate_resamples = 0;
};

inline void check_ucb_args(std::size_t k_boot, double confidence) {
  if (k_boot < 2) throw ValidationError("k-boot", "k_boot must be >= 2");
  if (!(confidence >= 0.5 && confidence < 1.0))
    throw ValidationError("confidence", "confidence must lie in [0.5, 1)");
}

// Bootstrap volatilities of layer j; resample r uses SplitMix64(derive_seed(seed, r)).
inline std::vector<std::optional<double>> bootstrap_volatilities(const DistanceMatrix& dm,
                                                                 std::span<const double> losses,
                                                                 double zero_tol, std::size_t k_boot,
                                                                 std::uint64_t seed) {
  std::vector<std::optional<double>> out(k_boot);
  const std::size_t n = dm.n;
  parallel_blocks(k_boot, 1, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      SplitMix64 rng(derive_seed(seed, r));
      const auto idx = sample_with_replacement(rng, n);
      const auto ps = accumulate_pairs(
          idx, losses, [&](std::size_t a, std::size_t b) { return dm(a, b); }, zero_tol, false);
      if (ps.included > 0) out[r] = ps.sum / static_cast<double>(ps.included);
    }
  });
  return out;
}

inline UpperConfBound upper_conf_bound_from(const std::vector<std::optional<double>>& vols, double confidence) {
  std::vector<double> u;
  for (const auto& v : vols)
    if (v) u.push_back(*v);
  UpperConfBound r;
  r.degenerate_resamples = vols.size() - u.size();
  r.resamples = u.size();
  if (u.empty()) throw RuntimeError("degenerate-resamples", "every bootstrap resample had only collisions");
  double s = 0.0;
  for (double v : u) s += v;
  r.mean = s / static_cast<double>(u.size());
  if (u.size() > 1) {
    double ss = 0.0;
    for (double v : u) ss += (v - r.mean) * (v - r.mean);
    r.stddev = std::sqrt(ss / static_cast<double>(u.size() - 1));
  }
  const double z = normal_quantile(confidence);
  r.value = r.mean + z * r.stddev / std::sqrt(static_cast<double>(u.size()));
  return r;
}

inline UpperConfBound upper_conf_bound(const ActivationDataset& ds, std::size_t j, std::size_t k_boot,
                                       double confidence, std::uint64_t seed) {
  check_ucb_args(k_boot, confidence);
  const auto& block = ds.layer(j);
  const auto dm = pairwise(block);
  return upper_conf_bound_from(bootstrap_volatilities(dm, ds.losses, block.metric.zero_tol, k_boot, seed),
                               confidence);
}

struct Certificate {
  std::size_t layer = 1;
  double delta = 0.0;
  double eta = 0.0;
  double confidence = 0.95;
  std::size_t k_boot = 0;
  std::uint64_t seed = 0;
  double B_hat = 0.0;
  double eps_upper = 0.0;
  double certified_prob = 0.0;
  bool vacuous = true;
  // Reference set is the n sample points, taken to have measure 1/n.
  double reference_measure = 0.0;
  double threshold = 0.0;  // B * sqrt(log(2n) / 2)
  std::vector<std::string> warnings;
};

// Applies the certification rule to an already-computed eps_U.
inline Certificate certificate_from(double eps_upper, double B_hat, std::size_t n, double delta, double eta) {
  detail::require_positive(delta, "delta");
  detail::require_positive(eta, "eta");
  Certificate c;
  c.delta = delta;
  c.eta = eta;
  c.B_hat = B_hat;
  c.eps_upper = eps_upper;
  c.reference_measure = 1.0 / static_cast<double>(n);
  c.threshold = B_hat * std::sqrt(0.5 * std::log(2.0 * static_cast<double>(n)));
  if (!(delta > c.threshold)) return c;
  const double gap = delta - c.threshold;
  const double V = eta * (1.0 - std::exp(-(2.0 / (B_hat * B_hat)) * gap * gap));
  if (!(V > 0.0)) return c;
  c.vacuous = false;
  c.certified_prob = std::clamp(1.0 - eps_upper * delta / V, 0.0, 1.0);
  return c;
}

struct CertifyRequest {
  std::size_t layer = 1;
  std::vector<double> deltas;
  std::vector<double> etas;
  double confidence = 0.95;
  std::size_t k_boot = 100;
  std::uint64_t seed = 0;
};

// Certificates for every (delta, eta) cell, delta-major; eps_U is computed once.
inline std::vector<Certificate> certify_grid(const ActivationDataset& ds, const CertifyRequest& req) {
  check_ucb_args(req.k_boot, req.confidence);
  for (double d : req.deltas) detail::require_positive(d, "delta");
  for (double e : req.etas) detail::require_positive(e, "eta");
  const auto& block = ds.layer(req.layer);
  const auto dm = pairwise(block);
  const double B_hat = dm.max_entry();
  if (!(B_hat >= block.metric.zero_tol))
    throw RuntimeError("degenerate-layer", "layer " + std::to_string(req.layer) + " has only collisions");

  std::vector<std::string> warnings;
  const bool zero_one = std::all_of(ds.losses.begin(), ds.losses.end(), [](double l) { return l <= 1.0; });
  for (double e : req.etas)
    if (e <= 1.0 && !zero_one) {
      warnings.push_back("losses exceed 1 while eta <= 1 is read as a 0-1 loss deviation");
      break;
    }

  const auto ucb = upper_conf_bound_from(
      bootstrap_volatilities(dm, ds.losses, block.metric.zero_tol, req.k_boot, req.seed), req.confidence);
  std::vector<Certificate> out;
  for (double d : req.deltas)
    for (double e : req.etas) {
      auto c = certificate_from(ucb.value, B_hat, ds.n(), d, e);
      c.layer = req.layer;
      c.confidence = req.confidence;
      c.k_boot = req.k_boot;
      c.seed = req.seed;
      c.warnings = warnings;
      out.push_back(std::move(c));
    }
  return out;
}

inline Certificate certify(const ActivationDataset& ds, std::size_t j, double delta, double eta, double confidence,
                           std::size_t k_boot, std::uint64_t seed) {
  CertifyRequest req{j, {delta}, {eta}, confidence, k_boot, seed};
  return certify_grid(ds, req).front();
}

inline std::vector<std::string> certificate_header() {
  return {"layer", "delta", "eta", "confidence", "k_boot", "seed", "B_hat", "eps_upper", "certified_prob", "vacuous"};
}

inline std::vector<std::string> certificate_row(const Certificate& c) {
  return {std::to_string(c.layer), csv::num(c.delta),  csv::num(c.eta),       csv::num(c.confidence),
          std::to_string(c.k_boot), std::to_string(c.seed), csv::num(c.B_hat), csv::num(c.eps_upper),
          csv::num(c.certified_prob), c.vacuous ? "1" : "0"};
}

inline std::string to_csv(const std::vector<Certificate>& certs) {
  csv::Table t;
  t.header = certificate_header();
  for (const auto& c : certs) t.rows.push_back(certificate_row(c));
  return t.str();
}

inline std::string to_text(const Certificate& c) {
  std::string s;
  s += "certificate:\n";
  s += "  layer: " + std::to_string(c.layer) + "\n";
  s += "  delta: " + csv::num(c.delta) + "\n";
  s += "  eta: " + csv::num(c.eta) + "\n";
  s += "  confidence: " + csv::num(c.confidence) + "\n";
  s += "  k_boot: " + std::to_string(c.k_boot) + "\n";
  s += "  seed: " + std::to_string(c.seed) + "\n";
  s += "  B_hat: " + csv::num(c.B_hat) + "\n";
  s += "  eps_upper: " + csv::num(c.eps_upper) + "\n";
  s += "  certified_prob: " + csv::num(c.certified_prob) + "\n";
  s += std::string("  vacuous: ") + (c.vacuous ? "true" : "false") + "\n";
  s += "  reference_measure: 1/n = " + csv::num(c.reference_measure) + "\n";
  s += "  threshold: " + csv::num(c.threshold) + "\n";
  for (const auto& w : c.warnings) s += "  warning: " + w + "\n";
  return s;
}

}  // namespace kc
