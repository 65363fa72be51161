#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "kc/kcreg.hpp"

namespace {

// Flattened views over every weight and bias of a net.
std::vector<double*> params(kc::ToyNet& net) {
  std::vector<double*> p;
  for (auto& l : net.layers) {
    for (Eigen::Index i = 0; i < l.W.size(); ++i) p.push_back(l.W.data() + i);
    for (Eigen::Index i = 0; i < l.b.size(); ++i) p.push_back(l.b.data() + i);
  }
  return p;
}

std::vector<double> flat(const kc::Gradients& g) {
  std::vector<double> v;
  for (std::size_t l = 0; l < g.dW.size(); ++l) {
    v.insert(v.end(), g.dW[l].data(), g.dW[l].data() + g.dW[l].size());
    v.insert(v.end(), g.db[l].data(), g.db[l].data() + g.db[l].size());
  }
  return v;
}

// max_i |analytic_i - numeric_i| / max_i |numeric_i|, central differences with step h.
double fd_relative_error(kc::ToyNet net, const std::function<double(const kc::ToyNet&)>& f,
                         const std::vector<double>& analytic, double h = 1e-6) {
  auto p = params(net);
  double err = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = *p[i];
    *p[i] = keep + h;
    const double up = f(net);
    *p[i] = keep - h;
    const double down = f(net);
    *p[i] = keep;
    const double num = (up - down) / (2 * h);
    err = std::max(err, std::abs(num - analytic[i]));
    scale = std::max(scale, std::abs(num));
  }
  return err / scale;
}

kc::LabeledData random_batch(std::uint64_t seed, std::size_t n) {
  kc::SplitMix64 rng(seed);
  kc::LabeledData d;
  d.X.resize(static_cast<Eigen::Index>(n), 2);
  for (Eigen::Index i = 0; i < d.X.size(); ++i) d.X.data()[i] = rng.normal();
  for (std::size_t i = 0; i < n; ++i) d.y.push_back(static_cast<int>(rng.below(2)));
  return d;
}

}  // namespace

TEST(BetaTable, CdfAndInverse) {
  const kc::BetaTable t(2.0, 1.0);
  for (double x : {0.1, 0.25, 0.5, 0.9}) {
    EXPECT_NEAR(t.cdf(x), x * x, 1e-6);
    EXPECT_NEAR(t.inverse(x * x), x, 1e-5);
  }
  const kc::BetaTable u(1.0, 1.0);
  EXPECT_NEAR(u.inverse(0.3), 0.3, 1e-12);
  EXPECT_EQ(t.inverse(0.0), 0.0);
  EXPECT_EQ(t.inverse(1.0), 1.0);
  EXPECT_THROW(kc::BetaTable(0.0, 1.0), kc::ValidationError);
}

TEST(BetaTable, SampleMeanMatchesDistribution) {
  const kc::BetaTable t(2.0, 5.0);
  kc::SplitMix64 rng(3);
  double s = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) s += t.sample(rng);
  EXPECT_NEAR(s / n, 2.0 / 7.0, 3e-3);
}

TEST(LayerDraw, Examples) {
  EXPECT_EQ(kc::layer_from_draw(0.5, 12), 6u);
  EXPECT_EQ(kc::layer_from_draw(0.01, 12), 1u);
  EXPECT_EQ(kc::layer_from_draw(1.0, 12), 12u);
  EXPECT_EQ(kc::layer_from_draw(0.999, 3), 2u);
}

TEST(KCRegLoss, LambdaZeroIsPlainCrossEntropy) {
  const auto net = kc::make_net({2, 8, 8, 2}, kc::Activation::Tanh, 1);
  const auto batch = random_batch(2, 16);
  const auto r = kc::kcreg_loss(net, batch, {2.0, 1.0, 0.0, 8}, 5);
  const auto t = kc::forward(net, batch.X);
  Eigen::MatrixXd d;
  const double ce = kc::cross_entropy(t.logits(), batch.y, &d).mean();
  EXPECT_EQ(r.objective, ce);
  EXPECT_EQ(r.penalty, 0.0);
  const auto g = kc::backward(net, t, d / 16.0);
  EXPECT_EQ(flat(r.grad), flat(g));
  EXPECT_TRUE(std::isfinite(r.sigma_hat));
}

TEST(KCRegLoss, PenaltyIsScaledPairSum) {
  const auto net = kc::make_net({2, 8, 8, 2}, kc::Activation::Tanh, 3);
  const auto batch = random_batch(4, 16);
  kc::KCRegConfig cfg{2.0, 1.0, 0.7, 6};
  const auto r = kc::kcreg_loss(net, batch, cfg, 9);
  EXPECT_EQ(r.included_pairs, 30u);
  EXPECT_NEAR(r.penalty, 0.7 * r.sigma_hat * 30 / 36.0, 1e-14);
  cfg.normalization = kc::PenaltyNormalization::MeanOverIncluded;
  EXPECT_NEAR(kc::kcreg_loss(net, batch, cfg, 9).penalty, 0.7 * r.sigma_hat, 1e-14);
}

// sigma_hat recomputed from the trace with the same layer and subset draws.
TEST(KCRegLoss, SigmaMatchesSubsetVolatility) {
  const auto net = kc::make_net({2, 6, 6, 6, 2}, kc::Activation::Tanh, 5);
  const auto batch = random_batch(6, 20);
  const kc::KCRegConfig cfg{2.0, 1.0, 1.0, 10};
  const auto r = kc::kcreg_loss(net, batch, cfg, 13);
  kc::SplitMix64 rng(13);
  const kc::BetaTable table(2.0, 1.0);
  const auto k = kc::layer_from_draw(table.sample(rng), 4);
  const auto sub = kc::sample_subset(rng, 20, 10);
  EXPECT_EQ(r.layer, k);
  const auto t = kc::forward(net, batch.X);
  const auto loss = kc::cross_entropy(t.logits(), batch.y);
  double s = 0.0;
  for (auto i : sub)
    for (auto j : sub)
      if (i != j)
        s += std::abs(loss(i) - loss(j)) / (t.post[k - 1].row(i) - t.post[k - 1].row(j)).norm();
  EXPECT_NEAR(r.sigma_hat, s / 90.0, 1e-12);
}

TEST(KCRegLoss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const auto net = kc::make_net({2, 8, 8, 2}, kc::Activation::Tanh, 100 + trial);
    const auto batch = random_batch(200 + trial, 16);
    kc::KCRegConfig cfg{2.0, 1.0, 2.0, 8};
    if (trial % 2) cfg.normalization = kc::PenaltyNormalization::MeanOverIncluded;
    const auto r = kc::kcreg_loss(net, batch, cfg, trial);
    ASSERT_GT(r.penalty, 0.0);
    const double rel = fd_relative_error(
        net, [&](const kc::ToyNet& n) { return kc::kcreg_loss(n, batch, cfg, trial).objective; }, flat(r.grad));
    EXPECT_LT(rel, 1e-4) << "trial " << trial << " layer " << r.layer;
  }
}

// With the denominator held fixed the gradient differs from the full one.
TEST(KCRegLoss, StopGradientDenominator) {
  const auto net = kc::make_net({2, 8, 8, 2}, kc::Activation::Tanh, 1);
  const auto batch = random_batch(3, 16);
  kc::KCRegConfig cfg{2.0, 1.0, 2.0, 8};
  const auto full = kc::kcreg_loss(net, batch, cfg, 0);
  cfg.stop_gradient_denominator = true;
  const auto stop = kc::kcreg_loss(net, batch, cfg, 0);
  EXPECT_EQ(full.objective, stop.objective);
  EXPECT_NE(flat(full.grad), flat(stop.grad));
}

TEST(KCRegLoss, Preconditions) {
  const auto net = kc::make_net({2, 4, 2}, kc::Activation::ReLU, 0);
  const auto batch = random_batch(1, 4);
  EXPECT_THROW(kc::kcreg_loss(net, batch, {2.0, 1.0, 1.0, 8}, 0), kc::ValidationError);
  EXPECT_THROW(kc::kcreg_loss(net, batch, {2.0, 1.0, -1.0, 2}, 0), kc::ValidationError);
  EXPECT_THROW(kc::kcreg_loss(net, batch, {2.0, 1.0, 1.0, 1}, 0), kc::ValidationError);
  EXPECT_THROW(kc::kcreg_loss(net, batch, {0.0, 1.0, 1.0, 2}, 0), kc::ValidationError);
}

TEST(KCRegLoss, AllPairsCollide) {
  auto net = kc::make_net({2, 4, 2}, kc::Activation::ReLU, 0);
  for (auto& l : net.layers) l.W.setZero();
  auto batch = random_batch(1, 8);
  try {
    kc::kcreg_loss(net, batch, {2.0, 1.0, 1.0, 4}, 0);
    FAIL();
  } catch (const kc::RuntimeError& e) {
    EXPECT_EQ(e.code(), "no-admissible-pairs");
  }
  EXPECT_NO_THROW(kc::kcreg_loss(net, batch, {2.0, 1.0, 0.0, 4}, 0));
}
