#pragma once

// SplitMix64 and the sampling helpers every stochastic routine is built on.
// All randomness in the library flows through these so that results are
// reproducible bit-for-bit across platforms and worker counts.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace kc {

class SplitMix64 {
public:
  explicit SplitMix64(std::uint64_t seed = 0) noexcept : state_(seed) {}

  std::uint64_t operator()() noexcept {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, bound) by Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t bound) noexcept {
    if (bound <= 1) return 0;
    __uint128_t m = static_cast<__uint128_t>((*this)()) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
      const std::uint64_t threshold = (0 - bound) % bound;
      while (low < threshold) {
        m = static_cast<__uint128_t>((*this)()) * bound;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  // Standard normal via Box-Muller (one value per call, second discarded).
  double normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::uint64_t state() const noexcept { return state_; }

private:
  std::uint64_t state_;
};

// Derives an independent stream seed from a parent seed and a tag. Used for
// the command -> module -> task chain (per-layer, per-resample, per-trial).
inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) noexcept {
  SplitMix64 g(parent ^ (tag * 0xd1342543de82ef95ULL + 0x632be59bd9b4e019ULL));
  g();
  return g();
}

// Uniform M-subset of [0, n) without replacement via a partial Fisher-Yates
// pass. The result is returned sorted so that M == n yields the identity order.
inline std::vector<std::size_t> sample_subset(SplitMix64& rng, std::size_t n, std::size_t m) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < m && i + 1 < n; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// n draws from [0, n) with replacement (bootstrap resample).
inline std::vector<std::size_t> sample_with_replacement(SplitMix64& rng, std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (auto& v : idx) v = static_cast<std::size_t>(rng.below(n));
  return idx;
}

// Full Fisher-Yates permutation of [0, n).
inline std::vector<std::size_t> permutation(SplitMix64& rng, std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace kc
