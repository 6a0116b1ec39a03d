#include "fracsim/optim.hpp"

#include <gtest/gtest.h>

using fracsim::RealTensor;
using fracsim::Sgd;

TEST(Sgd, PlainStep) {
  RealTensor p({3}, Eigen::Vector3d(1.0, -2.0, 0.5));
  p.set_grad(Eigen::Vector3d(0.4, 1.0, -3.0));
  Sgd opt(0.1, 0.0);
  std::vector<RealTensor*> params{&p};
  opt.step(params);
  EXPECT_EQ(p.data(), Eigen::Vector3d(1.0 - 0.1 * 0.4, -2.0 - 0.1 * 1.0, 0.5 - 0.1 * -3.0));
}

TEST(Sgd, ZeroGradientLeavesParametersUnchanged) {
  RealTensor p({2}, Eigen::Vector2d(3.0, 4.0));
  p.zero_grad();
  RealTensor untouched({2}, Eigen::Vector2d(5.0, 6.0));  // no gradient at all
  Sgd opt(0.5, 0.9);
  std::vector<RealTensor*> params{&p, &untouched};
  opt.step(params);
  opt.step(params);
  EXPECT_EQ(p.data(), Eigen::Vector2d(3.0, 4.0));
  EXPECT_EQ(untouched.data(), Eigen::Vector2d(5.0, 6.0));
}

TEST(Sgd, TwoMomentumStepsMatchHandUnroll) {
  const double lr = 0.05, mu = 0.9;
  const double p0 = 1.25, g1 = 0.8, g2 = -0.3;
  RealTensor p({1}, Eigen::VectorXd::Constant(1, p0));
  Sgd opt(lr, mu);
  std::vector<RealTensor*> params{&p};
  p.set_grad(Eigen::VectorXd::Constant(1, g1));
  opt.step(params);
  p.set_grad(Eigen::VectorXd::Constant(1, g2));
  opt.step(params);
  // v1 = g1; p1 = p0 - lr v1; v2 = mu v1 + g2; p2 = p1 - lr v2.
  const double v1 = g1;
  const double p1 = p0 - lr * v1;
  const double v2 = mu * v1 + g2;
  EXPECT_EQ(p[0], p1 - lr * v2);
}

TEST(Sgd, RejectsBadHyperparameters) {
  EXPECT_THROW(Sgd(0.0, 0.5), std::invalid_argument);
  EXPECT_THROW(Sgd(0.1, 1.0), std::invalid_argument);
  EXPECT_THROW(Sgd(0.1, -0.1), std::invalid_argument);
}
