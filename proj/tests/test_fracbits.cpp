#include "fracsim/fracbits.hpp"

#include "support/gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using fracsim::Index;
using fracsim::LayerBitwidthState;
using fracsim::QuantSpec;
using fracsim::RealTensor;
using fracsim::SizeLossConfig;
using fracsim::SizeTerm;

namespace {

std::vector<double> max_abs_rows(const RealTensor& w) { return fracsim::channel_max_abs(w, Index{0}); }

// f_n(x) calibrated independently of bracket_specs.
RealTensor fq(const RealTensor& x, int bits) { return fracsim::fake_quant(x, fracsim::calibrated_spec(x, bits, Index{0})); }

SizeLossConfig bytes_only(double target) {
  SizeLossConfig cfg;
  cfg.s_target_bytes = target;
  cfg.include_bias = false;
  cfg.unit_bytes = 1.0;
  return cfg;
}

}  // namespace

TEST(InterpFakeQuant, IntegerBitwidthCollapsesToQuantizer) {
  std::mt19937_64 rng(1);
  for (int n = 2; n <= 8; ++n) {
    const RealTensor x = RealTensor::normal({4, 9}, rng);
    const auto [lo, hi] = fracsim::bracket_specs(n, max_abs_rows(x), Index{0});
    EXPECT_EQ(lo.bitwidth, n);
    EXPECT_EQ(hi.bitwidth, n);
    EXPECT_EQ(fracsim::interp_fake_quant(x, n, lo, hi).data(), fq(x, n).data());
  }
}

TEST(InterpFakeQuant, FractionalMixesNeighbouringQuantizers) {
  std::mt19937_64 rng(2);
  const RealTensor x = RealTensor::normal({3, 20}, rng);
  const auto [lo, hi] = fracsim::bracket_specs(4.3, max_abs_rows(x), Index{0});
  const RealTensor out = fracsim::interp_fake_quant(x, 4.3, lo, hi);
  const Eigen::VectorXd want = 0.7 * fq(x, 4).data() + 0.3 * fq(x, 5).data();
  EXPECT_LE((out.data() - want).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(InterpFakeQuant, ZeroStaysZero) {
  const RealTensor x({2, 3});
  for (double n : {2.0, 2.5, 3.7, 6.01, 8.0}) {
    const auto [lo, hi] = fracsim::bracket_specs(n, {1.0, 0.5}, Index{0});
    EXPECT_TRUE(fracsim::interp_fake_quant(x, n, lo, hi).data().isZero(0.0));
  }
}

TEST(InterpFakeQuant, RejectsSpecsThatDoNotBracket) {
  const RealTensor x({4});
  const QuantSpec<double> s3{3, {1.0}, std::nullopt}, s4{4, {1.0}, std::nullopt}, s5{5, {1.0}, std::nullopt};
  EXPECT_THROW(fracsim::interp_fake_quant(x, 3.5, s4, s5), std::invalid_argument);
  EXPECT_THROW(fracsim::interp_fake_quant(x, 3.5, s3, s5), std::invalid_argument);
  EXPECT_NO_THROW(fracsim::interp_fake_quant(x, 3.5, s3, s4));
  EXPECT_THROW(fracsim::bracket_specs(1.5, {1.0}, std::nullopt), std::invalid_argument);
}

TEST(InterpFakeQuant, OutputIsAffineInsideABracket) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> frac(0.0, 0.999);
  for (int t = 0; t < 50; ++t) {
    const RealTensor x = RealTensor::normal({2, 8}, rng);
    const int base = 2 + t % 6;
    std::array<double, 3> n{base + frac(rng), base + frac(rng), base + frac(rng)};
    std::sort(n.begin(), n.end());
    if (n[2] - n[0] < 1e-3) continue;
    const auto eval = [&](double v) {
      const auto [lo, hi] = fracsim::bracket_specs(v, max_abs_rows(x), Index{0});
      return fracsim::interp_fake_quant(x, v, lo, hi).data();
    };
    const Eigen::VectorXd a = eval(n[0]), b = eval(n[1]), c = eval(n[2]);
    const Eigen::VectorXd line = a + (n[1] - n[0]) / (n[2] - n[0]) * (c - a);
    EXPECT_LE((b - line).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(BitwidthGrad, ZeroWhenBothGridsAgree) {
  // Codes of a 3-bit grid with max 3 also lie on the 4-bit grid when the
  // scales coincide, so pin both specs to one scale.
  const RealTensor x({5}, (Eigen::VectorXd(5) << -3.0, -1.0, 0.0, 2.0, 3.0).finished());
  const QuantSpec<double> s3{3, {1.0}, std::nullopt}, s4{4, {1.0}, std::nullopt};
  EXPECT_EQ(fracsim::bitwidth_grad(RealTensor::constant({5}, 2.0), x, s3, s4), 0.0);
}

TEST(BitwidthGrad, MatchesFiniteDifferenceAndIsLinearInUpstream) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> frac(0.05, 0.95);
  for (int t = 0; t < 100; ++t) {
    const RealTensor x = RealTensor::normal({3, 7}, rng);
    const RealTensor up = RealTensor::normal({3, 7}, rng);
    const double n = 2 + t % 6 + frac(rng);
    const auto [lo, hi] = fracsim::bracket_specs(n, max_abs_rows(x), Index{0});
    const double analytic = fracsim::bitwidth_grad(up, x, lo, hi);
    const double eps = 1e-4;
    // Difference elementwise before contracting: subtracting two large dot
    // products loses more digits than the check allows.
    const Eigen::VectorXd diff =
        fracsim::interp_fake_quant(x, n + eps, lo, hi).data() - fracsim::interp_fake_quant(x, n - eps, lo, hi).data();
    const double numeric = up.data().dot(diff) / (2.0 * eps);
    EXPECT_LE(fracsim::testing::relative_error(analytic, numeric), 1e-8) << "n " << n;
    RealTensor up3 = up;
    up3.data() *= 3.0;
    EXPECT_NEAR(fracsim::bitwidth_grad(up3, x, lo, hi), 3.0 * analytic, 1e-12 * (1.0 + std::abs(analytic)));
  }
}

TEST(InterpFakeQuantOp, GradientsAreInterpolatedSteAndBitwidthGrad) {
  std::mt19937_64 rng(5);
  const RealTensor x = RealTensor::normal({2, 6}, rng);
  const RealTensor up = RealTensor::normal({2, 6}, rng);
  const std::vector<double> max_abs{0.8, 0.9};  // below the data maximum: some entries clip
  fracsim::Graph g;
  const auto xn = g.parameter(x);
  const auto nn = g.parameter(RealTensor({}, Eigen::VectorXd::Constant(1, 3.25)));
  g.backward(fracsim::testing::weighted_sum(g, fracsim::interp_fake_quant(g, xn, nn, max_abs, Index{0}), g.constant(up)));
  const auto [lo, hi] = fracsim::bracket_specs(3.25, max_abs, Index{0});
  const Eigen::VectorXd want = 0.75 * fracsim::ste_grad(up, x, lo).data() + 0.25 * fracsim::ste_grad(up, x, hi).data();
  EXPECT_LE((g.grad(xn) - want).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_DOUBLE_EQ(g.grad(nn)[0], fracsim::bitwidth_grad(up, x, lo, hi));
}

TEST(SizeLoss, ZeroAtTarget) {
  const std::vector<SizeTerm> terms{{1000, 4.0, 8, 0}, {64, 6.5, 4, 0}};
  const SizeLossConfig cfg = bytes_only(fracsim::fractional_footprint(terms, bytes_only(1.0)));
  EXPECT_EQ(fracsim::size_loss(terms, cfg), 0.0);
}

TEST(SizeLoss, HandComputedSingleLayer) {
  const std::vector<SizeTerm> terms{{1000, 4.0, 8, 0}};
  EXPECT_DOUBLE_EQ(fracsim::size_loss(terms, bytes_only(1000.0)), 468.0);
  SizeLossConfig kb = bytes_only(1000.0);
  kb.unit_bytes = 1024.0;
  EXPECT_DOUBLE_EQ(fracsim::size_loss(terms, kb), 468.0 / 1024.0);
  SizeLossConfig with_bias = bytes_only(1000.0);
  with_bias.include_bias = true;
  const std::vector<SizeTerm> biased{{1000, 4.0, 8, 8}};
  EXPECT_DOUBLE_EQ(fracsim::size_loss(biased, with_bias), 468.0 - 32.0);
}

TEST(SizeLoss, GradientMatchesFiniteDifferenceAwayFromKink) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> bits(2.0, 8.0);
  for (int t = 0; t < 50; ++t) {
    std::vector<SizeTerm> terms{{1200, bits(rng), 16, 16}, {300, bits(rng), 8, 8}, {90, bits(rng), 10, 10}};
    SizeLossConfig cfg;
    cfg.s_target_bytes = 700.0;
    if (std::abs(fracsim::fractional_footprint(terms, cfg) - cfg.s_target_bytes) < 1.0) continue;
    const auto grads = fracsim::size_loss_grad(terms, cfg);
    for (std::size_t i = 0; i < terms.size(); ++i) {
      auto plus = terms, minus = terms;
      plus[i].bits += 1e-5;
      minus[i].bits -= 1e-5;
      const double numeric = (fracsim::size_loss(plus, cfg) - fracsim::size_loss(minus, cfg)) / 2e-5;
      EXPECT_LE(fracsim::testing::relative_error(grads[i], numeric), 1e-6);
    }
  }
}

TEST(SizeLoss, GraphOpOnlyDifferentiatesSearchingTerms) {
  fracsim::Graph g;
  const auto b0 = g.parameter(RealTensor({}, Eigen::VectorXd::Constant(1, 5.5)));
  std::vector<SizeTerm> terms{{800, 0.0, 8, 8}, {160, 8.0, 4, 4}};
  SizeLossConfig cfg;
  cfg.s_target_bytes = 100.0;
  const std::vector<std::optional<fracsim::NodeId>> slots{b0, std::nullopt};
  const auto loss = fracsim::size_loss(g, slots, terms, cfg);
  terms[0].bits = 5.5;
  EXPECT_DOUBLE_EQ(g.value(loss)[0], fracsim::size_loss(terms, cfg));
  g.backward(loss);
  EXPECT_DOUBLE_EQ(g.grad(b0)[0], 800.0 / 8.0 / 1024.0);
}

TEST(TotalLoss, WeightsTheSizeTerm) {
  EXPECT_EQ(fracsim::total_loss(1.3, 99.0, 0.0), 1.3);
  EXPECT_DOUBLE_EQ(fracsim::total_loss(1.0, 250.0, 0.1), 26.0);
  EXPECT_EQ(fracsim::total_loss(0.7, 0.0), 0.7);
  EXPECT_DOUBLE_EQ(fracsim::total_loss(1.0, 250.0), 26.0);
}

TEST(RoundAndFreeze, RoundsHalfUpAndClamps) {
  EXPECT_EQ(fracsim::round_half_up_bits(4.3), 4);
  EXPECT_EQ(fracsim::round_half_up_bits(4.5), 5);
  EXPECT_EQ(fracsim::round_half_up_bits(8.0), 8);
  EXPECT_EQ(fracsim::round_half_up_bits(2.0), 2);
  EXPECT_EQ(fracsim::round_half_up_bits(2.49), 2);
  std::vector<LayerBitwidthState> states(3);
  states[0].n_frac = 4.3;
  states[1].n_frac = 4.5;
  states[2].n_frac = 8.0;
  EXPECT_EQ(fracsim::round_and_freeze(states), (std::vector<int>{4, 5, 8}));
  EXPECT_EQ(states[1].frozen(), 5);
  LayerBitwidthState s;
  EXPECT_THROW(s.frozen(), std::logic_error);
  s.n_frac = 9.3;
  s.clamp();
  EXPECT_EQ(s.n_frac, 8.0);
  s.n_frac = 1.2;
  s.clamp();
  EXPECT_EQ(s.n_frac, 2.0);
}

// Rounding moves each layer by at most half a bit, i.e. weight_count / 16
// bytes; the frozen byte count then adds under one byte of ceil per layer.
TEST(RoundAndFreeze, FootprintMovesAtMostHalfABitPerLayer) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> bits(2.0, 8.0);
  std::uniform_int_distribution<int> count(1, 5000);
  for (int t = 0; t < 200; ++t) {
    std::vector<SizeTerm> terms(4);
    std::vector<LayerBitwidthState> states(4);
    double bound = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      terms[i] = SizeTerm{count(rng), bits(rng), 8, 8};
      states[i].n_frac = terms[i].bits;
      bound += static_cast<double>(terms[i].weight_count) / 16.0;
    }
    const SizeLossConfig cfg;
    const double fractional = fracsim::fractional_footprint(terms, cfg);
    const auto frozen_bits = fracsim::round_and_freeze(states);
    auto rounded = terms;
    for (std::size_t i = 0; i < 4; ++i) rounded[i].bits = frozen_bits[i];
    const double at_integers = fracsim::fractional_footprint(rounded, cfg);
    EXPECT_LE(std::abs(at_integers - fractional), bound + 1e-9);
    const auto bytes = static_cast<double>(fracsim::frozen_footprint(rounded, cfg));
    EXPECT_GE(bytes, at_integers);
    EXPECT_LT(bytes, at_integers + 4.0);
  }
}

TEST(FrozenFootprint, RequiresIntegerBits) {
  const std::vector<SizeTerm> terms{{10, 4.5, 1, 1}};
  EXPECT_THROW(fracsim::frozen_footprint(terms, SizeLossConfig{}), std::invalid_argument);
  const std::vector<SizeTerm> ok{{10, 3.0, 1, 1}};
  EXPECT_EQ(fracsim::frozen_footprint(ok, SizeLossConfig{}), 4 + 4 + 4);
}
