#include "fracsim/autodiff.hpp"

#include "support/op_cases.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using fracsim::Conv2dParams;
using fracsim::Graph;
using fracsim::Index;
using fracsim::NodeId;
using fracsim::RealTensor;

namespace {

// Six nested loops over (n, o, y, x, c, ky/kx), straight from the definition.
RealTensor loop_conv(const RealTensor& in, const RealTensor& w, const Conv2dParams& p) {
  const Index n_batch = in.dim(0), c_in = in.dim(1), h = in.dim(2), wd = in.dim(3);
  const Index c_out = w.dim(0), k = w.dim(2);
  const Index ho = fracsim::conv_output_extent(h, k, p), wo = fracsim::conv_output_extent(wd, k, p);
  RealTensor out({n_batch, c_out, ho, wo});
  for (Index n = 0; n < n_batch; ++n)
    for (Index o = 0; o < c_out; ++o)
      for (Index y = 0; y < ho; ++y)
        for (Index x = 0; x < wo; ++x)
          for (Index c = 0; c < c_in; ++c)
            for (Index ky = 0; ky < k; ++ky)
              for (Index kx = 0; kx < k; ++kx) {
                const Index iy = y * p.stride + ky * p.dilation - p.padding;
                const Index ix = x * p.stride + kx * p.dilation - p.padding;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                out.at(n, o, y, x) += in.at(n, c, iy, ix) * w.at(o, c, ky, kx);
              }
  return out;
}

RealTensor eval_conv(const RealTensor& in, const RealTensor& w, const Conv2dParams& p) {
  Graph g;
  return g.value(fracsim::conv2d(g, g.constant(in), g.constant(w), p));
}

}  // namespace

TEST(Conv2d, AllOnesCenterSumsNine) {
  const RealTensor ones = RealTensor::constant({1, 1, 3, 3}, 1.0);
  const RealTensor out = eval_conv(ones, ones, Conv2dParams{1, 1, 1});
  ASSERT_EQ(out.shape(), (fracsim::Shape{1, 1, 3, 3}));
  EXPECT_EQ(out.at(0, 0, 1, 1), 9.0);
  EXPECT_EQ(out.at(0, 0, 0, 0), 4.0);
}

TEST(Conv2d, DilationTwoHasFiveByFiveField) {
  std::mt19937_64 rng(1);
  const RealTensor x = RealTensor::normal({1, 1, 5, 5}, rng);
  const RealTensor w = RealTensor::normal({1, 1, 3, 3}, rng);
  const RealTensor out = eval_conv(x, w, Conv2dParams{1, 2, 0});
  ASSERT_EQ(out.shape(), (fracsim::Shape{1, 1, 1, 1}));
  double expect = 0.0;
  for (Index ky = 0; ky < 3; ++ky)
    for (Index kx = 0; kx < 3; ++kx) expect += w.at(0, 0, ky, kx) * x.at(0, 0, 2 * ky, 2 * kx);
  EXPECT_NEAR(out[0], expect, 1e-12);
}

TEST(Conv2d, MatchesLoopOracle) {
  std::mt19937_64 rng(2);
  const RealTensor x = RealTensor::normal({2, 4, 8, 8}, rng);
  const RealTensor w = RealTensor::normal({6, 4, 3, 3}, rng);
  for (Conv2dParams p : {Conv2dParams{1, 1, 0}, Conv2dParams{1, 1, 1}, Conv2dParams{2, 1, 1}, Conv2dParams{1, 2, 2}}) {
    const RealTensor got = eval_conv(x, w, p);
    const RealTensor want = loop_conv(x, w, p);
    ASSERT_EQ(got.shape(), want.shape());
    EXPECT_LE((got.data() - want.data()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Conv2d, DilationEqualsZeroInterleavedKernel) {
  std::mt19937_64 rng(3);
  const RealTensor x = RealTensor::normal({2, 3, 11, 9}, rng);
  const RealTensor w = RealTensor::normal({2, 3, 3, 3}, rng);
  for (Index d = 2; d <= 3; ++d) {
    // A (2d+1)-wide kernel is not a supported conv2d size, so the interleaved
    // reference goes through the loop oracle.
    const Index k = 2 * d + 1;
    RealTensor wide({2, 3, k, k});
    for (Index o = 0; o < 2; ++o)
      for (Index c = 0; c < 3; ++c)
        for (Index ky = 0; ky < 3; ++ky)
          for (Index kx = 0; kx < 3; ++kx) wide.at(o, c, ky * d, kx * d) = w.at(o, c, ky, kx);
    const RealTensor dilated = eval_conv(x, w, Conv2dParams{1, d, 1});
    const RealTensor interleaved = loop_conv(x, wide, Conv2dParams{1, 1, 1});
    ASSERT_EQ(dilated.shape(), interleaved.shape());
    EXPECT_EQ(dilated.data(), interleaved.data()) << "dilation " << d;
  }
}

TEST(Conv2d, ShapeErrorsNameTheAxis) {
  Graph g;
  const NodeId x = g.constant(RealTensor({1, 3, 5, 5}));
  try {
    fracsim::conv2d(g, x, g.constant(RealTensor({2, 4, 3, 3})), {});
    FAIL() << "expected DimensionError";
  } catch (const fracsim::DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("axis C"), std::string::npos) << e.what();
  }
  EXPECT_THROW(fracsim::conv2d(g, x, g.constant(RealTensor({2, 3, 5, 5})), {}), fracsim::DimensionError);
  EXPECT_THROW(fracsim::conv2d(g, x, g.constant(RealTensor({2, 3, 3, 3})), Conv2dParams{1, 4, 0}), fracsim::DimensionError);
}

TEST(Dense, IdentityAndZeroWeight) {
  std::mt19937_64 rng(4);
  const RealTensor x = RealTensor::normal({3, 4}, rng);
  const RealTensor b = RealTensor::normal({4}, rng);
  RealTensor eye({4, 4});
  for (Index i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
  Graph g;
  const RealTensor same = g.value(fracsim::dense(g, g.constant(x), g.constant(eye), g.constant(RealTensor({4}))));
  EXPECT_EQ(same.data(), x.data());
  const RealTensor bias_only = g.value(fracsim::dense(g, g.constant(x), g.constant(RealTensor({4, 4})), g.constant(b)));
  for (Index n = 0; n < 3; ++n)
    for (Index j = 0; j < 4; ++j) EXPECT_EQ(bias_only.at(n, j), b[j]);
}

TEST(Dense, MatchesDotProducts) {
  std::mt19937_64 rng(5);
  const RealTensor x = RealTensor::normal({3, 5}, rng);
  const RealTensor w = RealTensor::normal({5, 2}, rng);
  const RealTensor b = RealTensor::normal({2}, rng);
  Graph g;
  const RealTensor out = g.value(fracsim::dense(g, g.constant(x), g.constant(w), g.constant(b)));
  for (Index n = 0; n < 3; ++n)
    for (Index j = 0; j < 2; ++j) {
      double acc = b[j];
      for (Index f = 0; f < 5; ++f) acc += x.at(n, f) * w.at(f, j);
      EXPECT_NEAR(out.at(n, j), acc, 1e-12);
    }
  EXPECT_THROW(fracsim::dense(g, g.constant(x), g.constant(RealTensor({4, 2})), g.constant(b)), fracsim::DimensionError);
}

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLogK) {
  Graph g;
  const std::vector<int> labels{0, 3};
  const NodeId loss = fracsim::softmax_cross_entropy(g, g.constant(RealTensor::constant({2, 4}, 0.7)), labels);
  EXPECT_NEAR(g.value(loss)[0], std::log(4.0), 1e-15);
}

TEST(SoftmaxCrossEntropy, GrowingMarginDrivesLossToZero) {
  double previous = INFINITY;
  const std::vector<int> labels{1};
  for (double margin = 0.0; margin <= 30.0; margin += 2.0) {
    Graph g;
    RealTensor z({1, 3});
    z.at(0, 1) = margin;
    const double loss = g.value(fracsim::softmax_cross_entropy(g, g.constant(z), labels))[0];
    EXPECT_LT(loss, previous);
    previous = loss;
  }
  EXPECT_LT(previous, 1e-12);  // 2 e^-30 ~ 1.9e-13; beyond this the loss rounds to 0
}

TEST(SoftmaxCrossEntropy, MatchesFormula) {
  std::mt19937_64 rng(6);
  const RealTensor z = RealTensor::normal({4, 3}, rng, 2.0);
  const std::vector<int> labels{0, 2, 1, 2};
  Graph g;
  const double got = g.value(fracsim::softmax_cross_entropy(g, g.constant(z), labels))[0];
  double want = 0.0;
  for (Index n = 0; n < 4; ++n) {
    double denom = 0.0;
    for (Index k = 0; k < 3; ++k) denom += std::exp(z.at(n, k));
    want += -std::log(std::exp(z.at(n, labels[static_cast<std::size_t>(n)])) / denom);
  }
  EXPECT_NEAR(got, want / 4.0, 1e-12);
  const std::vector<int> bad{0, 3, 1, 2};
  EXPECT_THROW(fracsim::softmax_cross_entropy(g, g.constant(z), bad), std::out_of_range);
}

TEST(Relu, SubgradientAtZeroIsZero) {
  Graph g;
  const NodeId x = g.parameter(RealTensor({3}, Eigen::Vector3d(-1.0, 0.0, 2.0)));
  g.backward(fracsim::sum(g, fracsim::relu(g, x)));
  EXPECT_EQ(g.grad(x), Eigen::Vector3d(0.0, 0.0, 1.0));
}

TEST(Backward, SumGivesOnes) {
  std::mt19937_64 rng(7);
  Graph g;
  const NodeId w = g.parameter(RealTensor::normal({3, 4}, rng));
  g.backward(fracsim::sum(g, w));
  EXPECT_EQ(g.grad(w), Eigen::VectorXd::Ones(12));
}

TEST(Backward, SumOfSquaresGivesTwiceTheValue) {
  std::mt19937_64 rng(8);
  Graph g;
  const NodeId w = g.parameter(RealTensor::normal({5}, rng));
  g.backward(fracsim::sum(g, fracsim::mul(g, w, w)));
  EXPECT_EQ(g.grad(w), 2.0 * g.value(w).data());
}

TEST(Backward, RejectsNonScalarLoss) {
  Graph g;
  const NodeId w = g.parameter(RealTensor({3}));
  EXPECT_THROW(g.backward(fracsim::relu(g, w)), fracsim::DimensionError);
}

TEST(Backward, VisitsEveryNodeOnceInReverseOrder) {
  std::mt19937_64 rng(9);
  Graph g;
  const NodeId a = g.parameter(RealTensor::normal({4}, rng));
  const NodeId b = g.parameter(RealTensor::normal({4}, rng));
  const NodeId c = fracsim::mul(g, a, b);
  const NodeId d = fracsim::add(g, c, a);  // a feeds two consumers
  const NodeId e = fracsim::tanh(g, d);
  const NodeId loss = fracsim::sum(g, fracsim::mul(g, e, c));
  for (NodeId id = 0; id < g.size(); ++id) {
    for (NodeId in : g.inputs(id)) EXPECT_LT(in, id);
  }
  g.backward(loss);
  // Ops: mul, add, tanh, mul, sum.
  EXPECT_EQ(g.backward_visits(), 5u);
}

TEST(Backward, Deterministic) {
  const auto run = [] {
    std::mt19937_64 rng(10);
    Graph g;
    const NodeId x = g.constant(RealTensor::normal({2, 3, 6, 6}, rng));
    const NodeId w = g.parameter(RealTensor::normal({4, 3, 3, 3}, rng));
    const NodeId y = fracsim::relu(g, fracsim::conv2d(g, x, w, Conv2dParams{1, 2, 2}));
    const std::vector<int> labels{1, 3};
    g.backward(fracsim::softmax_cross_entropy(g, fracsim::global_avg_pool(g, y), labels));
    return g.grad(w);
  };
  EXPECT_EQ(run(), run());
}

TEST(FakeQuantOp, ForwardIsQuantizerAndGradientIsClippedSte) {
  const fracsim::QuantSpec<double> spec{3, {0.5}, std::nullopt};  // clamp range |x| < 1.75
  Graph g;
  const NodeId x = g.parameter(RealTensor({4}, Eigen::Vector4d(0.3, -1.2, 2.0, -0.74)));
  const NodeId q = fracsim::fake_quant(g, x, spec);
  EXPECT_EQ(g.value(q).data(), Eigen::Vector4d(0.5, -1.0, 1.5, -0.5));
  g.backward(fracsim::testing::weighted_sum(g, q, g.constant(RealTensor({4}, Eigen::Vector4d(1.0, 2.0, 3.0, 4.0)))));
  EXPECT_EQ(g.grad(x), Eigen::Vector4d(1.0, 2.0, 0.0, 4.0));
}

TEST(RecurrentTanh, MatchesStepLoopWithHiddenQuantization) {
  std::mt19937_64 rng(11);
  const RealTensor x = RealTensor::normal({2, 2, 4, 3}, rng);
  const RealTensor wx = RealTensor::normal({6, 5}, rng, 0.4);
  const RealTensor wh = RealTensor::normal({5, 5}, rng, 0.4);
  const RealTensor b = RealTensor::normal({5}, rng);
  const double hs = 1.0 / 127.0;
  Graph g;
  const RealTensor out = g.value(fracsim::recurrent_tanh(g, g.constant(x), g.constant(wx), g.constant(wh), g.constant(b), hs));
  ASSERT_EQ(out.shape(), (fracsim::Shape{2, 5, 4, 1}));
  for (Index n = 0; n < 2; ++n) {
    std::vector<double> h(5, 0.0);
    for (Index t = 0; t < 4; ++t) {
      std::vector<double> next(5);
      for (Index j = 0; j < 5; ++j) {
        double acc = b[j];
        for (Index c = 0; c < 2; ++c)
          for (Index f = 0; f < 3; ++f) acc += x.at(n, c, t, f) * wx.at(c * 3 + f, j);
        for (Index i = 0; i < 5; ++i) acc += fracsim::fake_quant_scalar(h[static_cast<std::size_t>(i)], hs, 8) * wh.at(i, j);
        next[static_cast<std::size_t>(j)] = std::tanh(acc);
      }
      h = next;
      for (Index j = 0; j < 5; ++j) EXPECT_NEAR(out.at(n, j, t, 0), h[static_cast<std::size_t>(j)], 1e-12);
    }
  }
}

TEST(GradCheck, EveryDifferentiableOpMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  for (const auto& op : fracsim::testing::differentiable_op_cases()) {
    for (int point = 0; point < 5; ++point) {
      const auto result = fracsim::testing::check_gradients(op.build, op.make(rng), 1e-5, 0, 7, op.skip);
      EXPECT_LE(result.max_rel_error, 1e-4) << op.name << " point " << point;
      EXPECT_GT(result.checked, 0) << op.name;
    }
  }
}
