#include <gtest/gtest.h>

#include <random>

#include "kc/volatility.hpp"
#include "oracle.hpp"

using kc::MetricSpec;

TEST(PointVolatility, WorkedValue) {
  const auto ds = oracle::three_point();
  const auto pv = kc::point_volatility(ds, 1, 0);
  const double brute = oracle::point_volatility(oracle::points_of(ds.layers[0]), ds.losses, MetricSpec::l1(), 0);
  EXPECT_NEAR(brute, 5.0 / 6.0, 1e-15);
  EXPECT_NEAR(pv.sigma, 5.0 / 6.0, 1e-15);
  EXPECT_EQ(pv.partners, 2u);
  EXPECT_FALSE(pv.sparsity_term.has_value());  // loss 0
}

TEST(PointVolatility, DecompositionMatchesDirectForm) {
  auto ds = oracle::random_dataset(31, {12, {3}});
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const auto pv = kc::point_volatility(ds, 1, i);
    ASSERT_TRUE(pv.decomposed_sigma.has_value());
    EXPECT_NEAR(*pv.decomposed_sigma, pv.sigma, 1e-12 * std::max(1.0, pv.sigma));
    EXPECT_NEAR(pv.sigma, oracle::point_volatility(oracle::points_of(ds.layers[0]), ds.losses, MetricSpec::l2(), i),
                1e-12);
  }
}

TEST(PointVolatility, ConstantLossesGiveZero) {
  auto ds = oracle::random_dataset(32, {6, {2}});
  std::fill(ds.losses.begin(), ds.losses.end(), 0.3);
  for (std::size_t i = 0; i < ds.n(); ++i) EXPECT_EQ(kc::point_volatility(ds, 1, i).sigma, 0.0);
}

TEST(PointVolatility, DiscreteIsMeanLossGapOverC) {
  auto ds = oracle::random_dataset(33, {7, {2}}, MetricSpec::discrete(4.0));
  for (std::size_t i = 0; i < ds.n(); ++i) {
    double gap = 0.0;
    for (std::size_t j = 0; j < ds.n(); ++j)
      if (j != i) gap += std::abs(ds.losses[i] - ds.losses[j]);
    EXPECT_NEAR(kc::point_volatility(ds, 1, i).sigma, gap / 6.0 / 4.0, 1e-15);
  }
}

TEST(PointVolatility, AllPartnersCollide) {
  kc::ActivationDataset ds;
  ds.example_ids = {0, 1};
  ds.losses = {0.0, 1.0};
  ds.layers.push_back({1, 1, {2.0, 2.0}, MetricSpec::l2()});
  try {
    kc::point_volatility(ds, 1, 0);
    FAIL();
  } catch (const kc::RuntimeError& e) {
    EXPECT_EQ(e.code(), "no-admissible-partner");
  }
}

TEST(ExactVolatility, ThirteenEighteenths) {
  const auto ds = oracle::three_point();
  EXPECT_NEAR(oracle::volatility(ds, 1), 13.0 / 18.0, 1e-15);
  const auto e = kc::expected_volatility_exact(ds, 1);
  EXPECT_NEAR(e.value, 13.0 / 18.0, 1e-12);
  EXPECT_TRUE(e.exact);
  EXPECT_EQ(e.included_pairs, 6u);
  EXPECT_EQ(e.skipped_pairs, 0u);
}

TEST(ExactVolatility, MatchesBruteForce) {
  std::mt19937_64 gen(34);
  const MetricSpec ms[] = {MetricSpec::l1(), MetricSpec::l2(), MetricSpec::linf(), MetricSpec::cosine(),
                           MetricSpec::discrete(3)};
  for (int t = 0; t < 40; ++t) {
    const auto& m = ms[t % 5];
    const auto ds = oracle::random_dataset(gen(), {2 + gen() % 40, {1 + gen() % 4}}, m);
    EXPECT_NEAR(kc::expected_volatility_exact(ds, 1).value, oracle::volatility(ds, 1),
                1e-10 * std::max(1.0, oracle::volatility(ds, 1)));
  }
}

TEST(ExactVolatility, CollisionsAreSkippedAndCounted) {
  kc::ActivationDataset ds;
  ds.example_ids = {0, 1, 2};
  ds.losses = {0.0, 1.0, 4.0};
  ds.layers.push_back({1, 1, {0.0, 0.0, 2.0}, MetricSpec::l1()});
  const auto e = kc::expected_volatility_exact(ds, 1);
  EXPECT_EQ(e.skipped_pairs, 2u);
  EXPECT_EQ(e.included_pairs, 4u);
  EXPECT_DOUBLE_EQ(e.value, (2.0 + 1.5 + 2.0 + 1.5) / 4.0);
}

TEST(ExactVolatility, ConstantLossesGiveZero) {
  auto ds = oracle::random_dataset(35, {9, {2}});
  std::fill(ds.losses.begin(), ds.losses.end(), 1.0);
  EXPECT_EQ(kc::expected_volatility_exact(ds, 1).value, 0.0);
}

TEST(ExactVolatility, DiscreteLawIsExact) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto base = oracle::random_dataset(seed, {10, {2}}, MetricSpec::discrete(1.0));
    const double v1 = kc::expected_volatility_exact(base, 1).value;
    for (double c : {0.5, 1.0, 10.0, 1e6}) {
      auto ds = base;
      ds.layers[0].metric = MetricSpec::discrete(c);
      EXPECT_EQ(kc::expected_volatility_exact(ds, 1).value, v1 / c) << "c=" << c;
      EXPECT_EQ(kc::est_k_vol(ds, 1, 5, seed).value, kc::est_k_vol(base, 1, 5, seed).value / c);
    }
  }
}

TEST(ExactVolatility, L2ScalingByTen) {
  auto ds = oracle::random_dataset(36, {15, {3, 3}});
  for (std::size_t i = 0; i < ds.layers[1].values.size(); ++i) ds.layers[1].values[i] = 10.0 * ds.layers[0].values[i];
  const double e1 = kc::expected_volatility_exact(ds, 1).value;
  const double e2 = kc::expected_volatility_exact(ds, 2).value;
  EXPECT_NEAR(e2, e1 / 10.0, 1e-9 * e1 / 10.0);
}

TEST(ExactVolatility, ShiftInvariantInLossesAndRepresentation) {
  auto ds = oracle::random_dataset(37, {11, {2}});
  auto shifted = ds;
  for (auto& l : shifted.losses) l += 3.0;
  for (auto& v : shifted.layers[0].values) v += 0.25;
  EXPECT_NEAR(kc::expected_volatility_exact(ds, 1).value, kc::expected_volatility_exact(shifted, 1).value, 1e-12);
}

TEST(EstKVol, FullSubsetEqualsExact) {
  std::mt19937_64 gen(38);
  for (int t = 0; t < 30; ++t) {
    const auto ds = oracle::random_dataset(gen(), {2 + gen() % 63, {2, 3}});
    for (std::size_t k = 1; k <= 2; ++k)
      EXPECT_NEAR(kc::est_k_vol(ds, k, ds.n(), gen()).value, kc::expected_volatility_exact(ds, k).value, 1e-12);
  }
}

TEST(EstKVol, MatchesBruteForceOnSubset) {
  const auto ds = oracle::random_dataset(39, {40, {3}});
  const auto e = kc::est_k_vol(ds, 1, 9, 123);
  kc::SplitMix64 rng(123 ^ 1u);
  const auto idx = kc::sample_subset(rng, 40, 9);
  EXPECT_NEAR(e.value, oracle::volatility(oracle::points_of(ds.layers[0]), ds.losses, MetricSpec::l2(), &idx), 1e-12);
  EXPECT_FALSE(e.exact);
  EXPECT_EQ(e.mc.M, 9u);
  EXPECT_EQ(e.mc.seed, 123u);
}

TEST(EstKVol, DeterministicAndSeedSensitive) {
  const auto a = oracle::random_dataset(40, {30, {2}});
  const auto b = oracle::random_dataset(40, {30, {2}});
  EXPECT_EQ(kc::est_k_vol(a, 1, 8, 5).value, kc::est_k_vol(b, 1, 8, 5).value);
  EXPECT_NE(kc::est_k_vol(a, 1, 8, 5).value, kc::est_k_vol(a, 1, 8, 6).value);
}

TEST(EstKVol, PreconditionsAndRetries) {
  const auto ds = oracle::random_dataset(41, {5, {2}});
  EXPECT_THROW(kc::est_k_vol(ds, 1, 1, 0), kc::ValidationError);
  EXPECT_THROW(kc::est_k_vol(ds, 1, 6, 0), kc::ValidationError);
  EXPECT_THROW(kc::est_k_vol(ds, 2, 2, 0), kc::ValidationError);

  kc::ActivationDataset flat;
  flat.example_ids = {0, 1, 2};
  flat.losses = {0.0, 1.0, 2.0};
  flat.layers.push_back({1, 1, {1.0, 1.0, 1.0}, MetricSpec::l2()});
  EXPECT_THROW(kc::est_k_vol(flat, 1, 2, 0), kc::RuntimeError);
  EXPECT_THROW(kc::expected_volatility_exact(flat, 1), kc::RuntimeError);
}

TEST(EstKVol, IndependentOfWorkerCount) {
  const auto ds = oracle::random_dataset(42, {150, {4}});
  setenv("KC_THREADS", "1", 1);
  const double one = kc::est_k_vol(ds, 1, 100, 3).value;
  const double exact_one = kc::expected_volatility_exact(ds, 1).value;
  setenv("KC_THREADS", "7", 1);
  EXPECT_EQ(kc::est_k_vol(ds, 1, 100, 3).value, one);
  EXPECT_EQ(kc::expected_volatility_exact(ds, 1).value, exact_one);
  unsetenv("KC_THREADS");
}

TEST(LayerProfile, SingleLayerAndRelativeDepth) {
  const auto ds = oracle::random_dataset(43, {10, {2}});
  const auto p = kc::layer_profile(ds, 4, 1);
  ASSERT_EQ(p.entries.size(), 1u);
  EXPECT_EQ(p.entries[0].relative_depth, 1.0);

  const auto ds4 = oracle::random_dataset(44, {10, {2, 2, 2, 2}});
  const auto p4 = kc::layer_profile(ds4, 10, 9);
  ASSERT_EQ(p4.entries.size(), 4u);
  for (std::size_t k = 1; k <= 4; ++k) {
    EXPECT_EQ(p4.entries[k - 1].relative_depth, k / 4.0);
    EXPECT_NEAR(p4.entries[k - 1].estimate.value, kc::expected_volatility_exact(ds4, k).value, 1e-12);
  }
}

TEST(LayerProfile, ErrorsNameTheLayer) {
  auto ds = oracle::random_dataset(45, {3, {2, 1}});
  ds.layers[1].values = {1.0, 1.0, 1.0};
  try {
    kc::layer_profile(ds, 0, 0, true);
    FAIL();
  } catch (const kc::RuntimeError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 2"), std::string::npos);
  }
}

TEST(LayerProfile, CsvColumns) {
  const auto csv = kc::to_csv(kc::layer_profile(oracle::three_point(), 0, 0, true));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "layer,relative_depth,epsilon,mode,M,seed,included_pairs,skipped_pairs");
  EXPECT_NE(csv.find("1,1,0.72222222222222"), std::string::npos);
}
