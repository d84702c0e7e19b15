#include "affspace/optim.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace affspace;

namespace {

Params<double> scalar_params(double w, double b) {
  Params<double> p;
  p.add("layer.weight", Tensor<double>({1}, {w}));
  p.add("layer.bias", Tensor<double>({1}, {b}));
  return p;
}

}  // namespace

TEST(PolyLr, SpotValues) {
  EXPECT_EQ(poly_lr(2.5e-4, 0, 3000, 0.9), 2.5e-4);
  EXPECT_EQ(poly_lr(2.5e-4, 3000, 3000, 0.9), 0.0);
  EXPECT_NEAR(poly_lr(2.5e-4, 1500, 3000, 0.9), 2.5e-4 * std::pow(0.5, 0.9), 1e-18);
  EXPECT_NEAR(poly_lr(2.5e-4, 1500, 3000, 0.9), 1.3397e-4, 1e-8);
  EXPECT_THROW(poly_lr(2.5e-4, -1, 3000, 0.9), std::out_of_range);
  EXPECT_THROW(poly_lr(2.5e-4, 3001, 3000, 0.9), std::out_of_range);
}

TEST(PolyLr, StrictlyDecreasing) {
  for (double power : {0.5, 0.9, 2.0})
    for (int i = 0; i < 100; ++i) EXPECT_GT(poly_lr(1.0, i, 100, power), poly_lr(1.0, i + 1, 100, power));
}

TEST(Sgd, ZeroGradLeavesParams) {
  auto p = scalar_params(1.5, -0.5);
  const auto before = p;
  auto v = p.zeros_like();
  sgd_step(p, p.zeros_like(), v, 0.1, 0.9, 0.0);
  EXPECT_EQ(p, before);
}

TEST(Sgd, SingleAndMomentumSteps) {
  auto p = scalar_params(1.0, 1.0);
  auto v = p.zeros_like();
  auto g = p.zeros_like();
  g[0][0] = 1.0;
  sgd_step(p, g, v, 0.1, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(p[0][0], 0.9);

  p = scalar_params(1.0, 1.0);
  v = p.zeros_like();
  sgd_step(p, g, v, 0.1, 0.9, 0.0);
  sgd_step(p, g, v, 0.1, 0.9, 0.0);
  EXPECT_NEAR(1.0 - p[0][0], 0.29, 1e-15);
}

TEST(Sgd, WeightDecaySkipsBiases) {
  auto p = scalar_params(2.0, 2.0);
  auto v = p.zeros_like();
  sgd_step(p, p.zeros_like(), v, 0.1, 0.0, 0.5);
  EXPECT_DOUBLE_EQ(p["layer.weight"][0], 2.0 - 0.1 * 0.5 * 2.0);
  EXPECT_DOUBLE_EQ(p["layer.bias"][0], 2.0);
}

TEST(Sgd, LayoutMismatchThrows) {
  auto p = scalar_params(1, 1);
  auto v = p.zeros_like();
  Params<double> g;
  g.add("layer.weight", Tensor<double>({2}));
  g.add("layer.bias", Tensor<double>({1}));
  EXPECT_THROW(sgd_step(p, g, v, 0.1, 0.9, 0.0), ShapeError);
}

TEST(Adam, ZeroGradLeavesParams) {
  auto p = scalar_params(0.3, 0.1);
  const auto before = p;
  auto st = AdamState<double>::for_params(p);
  adam_step(p, p.zeros_like(), st, 1e-4, 0.9, 0.99);
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  for (double g : {3.0, -0.02, 1e-3}) {
    auto p = scalar_params(0.0, 0.0);
    auto st = AdamState<double>::for_params(p);
    auto grads = p.zeros_like();
    grads[0][0] = g;
    adam_step(p, grads, st, 1e-4, 0.9, 0.99);
    EXPECT_NEAR(p[0][0], -1e-4 * (g > 0 ? 1 : -1), 1e-8) << g;
  }
}

TEST(Adam, DeterministicTrajectory) {
  auto run = [] {
    auto p = scalar_params(0.5, -0.2);
    auto st = AdamState<double>::for_params(p);
    for (int i = 0; i < 50; ++i) {
      auto g = p.zeros_like();
      g[0][0] = std::sin(i) + p[0][0];
      g[1][0] = std::cos(i);
      adam_step(p, g, st, 1e-2, 0.9, 0.99);
    }
    return p;
  };
  EXPECT_EQ(run(), run());
}
