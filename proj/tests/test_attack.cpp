#include <gtest/gtest.h>

#include "kc/attack.hpp"
#include "kc/train.hpp"

namespace {

kc::LabeledData points(std::uint64_t seed, std::size_t n, std::size_t dim = 2) {
  kc::SplitMix64 rng(seed);
  kc::LabeledData d;
  d.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < d.X.size(); ++i) d.X.data()[i] = rng.normal();
  for (std::size_t i = 0; i < n; ++i) d.y.push_back(static_cast<int>(rng.below(2)));
  return d;
}

}  // namespace

TEST(Fgsm, ZeroRadiusIsIdentity) {
  const auto net = kc::make_net({2, 8, 2}, kc::Activation::ReLU, 1);
  const auto d = points(2, 20);
  EXPECT_EQ(kc::fgsm(net, d, 0.0), d.X);
  EXPECT_THROW(kc::fgsm(net, d, -0.1), kc::ValidationError);
}

// Logistic (single linear layer) model: the input gradient of the
// cross-entropy is (1 - p_y)(w_other - w_y), so the step is its sign.
TEST(Fgsm, LinearModelClosedForm) {
  const auto net = kc::make_net({3, 2}, kc::Activation::ReLU, 3);
  ASSERT_EQ(net.layers[0].act, kc::Activation::Identity);
  const auto d = points(4, 30, 3);
  const double eps = 0.25;
  const auto adv = kc::fgsm(net, d, eps);
  const auto& W = net.layers[0].W;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const int y = d.y[i];
    const Eigen::RowVectorXd diff = W.row(1 - y) - W.row(y);
    for (Eigen::Index c = 0; c < 3; ++c) {
      const double s = diff(c) > 0 ? 1.0 : -1.0;
      EXPECT_EQ(adv(i, c), d.X(i, c) + eps * s);
    }
  }
}

TEST(Fgsm, PerturbationWithinRadius) {
  const auto net = kc::make_net({2, 16, 16, 2}, kc::Activation::Tanh, 5);
  const auto d = points(6, 50);
  for (double eps : {0.01, 0.3, 2.0}) {
    EXPECT_LE((kc::fgsm(net, d, eps) - d.X).cwiseAbs().maxCoeff(), eps * (1 + 1e-15));
    const Eigen::MatrixXd delta = kc::fgsm(net, d, eps, kc::AttackNorm::L2Projected) - d.X;
    for (Eigen::Index i = 0; i < delta.rows(); ++i) EXPECT_LE(delta.row(i).norm(), eps * (1 + 1e-12));
  }
}

TEST(Robustness, ZeroRadiusHasNoSuccess) {
  const auto net = kc::make_net({2, 8, 2}, kc::Activation::ReLU, 7);
  const auto d = kc::two_moons(100, 0.1, 8);
  const auto curve = kc::evaluate_robustness(net, d, {0.0, 0.2});
  EXPECT_EQ(curve[0].success_rate, 0.0);
  EXPECT_EQ(curve[0].flipped, 0u);
  EXPECT_EQ(curve[0].correct, curve[1].correct);
  EXPECT_EQ(curve[0].correct, static_cast<std::size_t>(std::lround(kc::accuracy(net, d) * 100)));
}

TEST(Robustness, ProjectedVariantIsMonotone) {
  const auto net = kc::make_net({2, 16, 16, 2}, kc::Activation::ReLU, 9);
  const auto d = kc::two_moons(200, 0.2, 10);
  const std::vector<double> grid{0.5, 0.0, 0.1, 0.05, 1.0, 0.3, 2.0};
  const auto curve = kc::evaluate_robustness(net, d, grid, kc::AttackNorm::L2Projected);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    EXPECT_EQ(curve[i].eps, grid[i]);
    for (std::size_t j = 0; j < grid.size(); ++j)
      if (grid[i] <= grid[j]) EXPECT_LE(curve[i].success_rate, curve[j].success_rate);
  }
}

TEST(Robustness, CsvLayout) {
  const auto net = kc::make_net({2, 4, 2}, kc::Activation::ReLU, 1);
  const auto csv = kc::to_csv(kc::evaluate_robustness(net, kc::two_moons(20, 0.1, 2), {0.0, 0.1}));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "eps,success_rate,correct,flipped");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(LipschitzRatios, IdentityNetwork) {
  auto net = kc::make_net({2, 2, 2}, kc::Activation::Identity, 0);
  for (auto& l : net.layers) l.W.setIdentity();
  const auto r = kc::empirical_lipschitz_ratios(net, points(1, 30), 1);
  EXPECT_NEAR(r.layer_over_input.max, 1.0, 1e-12);
  EXPECT_NEAR(r.layer_over_input.mean, 1.0, 1e-12);
  EXPECT_NEAR(r.output_over_input.max, 1.0, 1e-12);
  EXPECT_EQ(r.layer_over_input.pairs, 30u * 29 / 2);
}

TEST(LipschitzRatios, ZeroWeights) {
  auto net = kc::make_net({2, 4, 2}, kc::Activation::Tanh, 0);
  for (auto& l : net.layers) l.W.setZero();
  const auto r = kc::empirical_lipschitz_ratios(net, points(2, 20), 2);
  EXPECT_EQ(r.output_over_input.max, 0.0);
  EXPECT_EQ(r.output_over_input.mean, 0.0);
  EXPECT_EQ(r.loss_over_layer.pairs, 0u);
}

TEST(LipschitzRatios, FiniteOnRandomNet) {
  const auto net = kc::make_net({2, 8, 2}, kc::Activation::Tanh, 3);
  const auto r = kc::empirical_lipschitz_ratios(net, points(4, 100), 1);
  EXPECT_TRUE(r.output_over_input.all_finite);
  EXPECT_TRUE(r.layer_over_input.all_finite);
  EXPECT_TRUE(r.loss_over_layer.all_finite);
  EXPECT_EQ(r.output_over_input.pairs, 4950u);
  EXPECT_NE(kc::to_text(r).find("loss_over_layer"), std::string::npos);
  EXPECT_THROW(kc::empirical_lipschitz_ratios(net, points(4, 10), 3), kc::ValidationError);
}
