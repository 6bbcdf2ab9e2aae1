#include <gtest/gtest.h>

#include "str/wiener.hpp"

using namespace str;

namespace {

constexpr double kB = 10e6;

double mid_suppression(int K, double spacing) {
  const TapLayout l = TapLayout::uniform(K, spacing, kB);
  return wiener_weights({0.5 * spacing / kB, 0, 0}, l).suppression_db;
}

}  // namespace

// 60-digit reference values from oracles/wiener_oracle.py: echo halfway
// between the first two taps of a uniform K-tap layout (for K = 1 the echo
// sits half a spacing from the single tap).
struct Frozen {
  int K;
  double spacing;
  double db;
  double tol;
};

class WienerFrozen : public ::testing::TestWithParam<Frozen> {};

TEST_P(WienerFrozen, MatchesExtendedPrecision) {
  const Frozen f = GetParam();
  EXPECT_NEAR(mid_suppression(f.K, f.spacing), f.db, f.tol) << "K=" << f.K << " spacing=" << f.spacing;
}

INSTANTIATE_TEST_SUITE_P(Grid, WienerFrozen,
                         ::testing::Values(Frozen{1, 0.3, 11.434841, 1e-4}, Frozen{1, 0.01, 40.848958, 1e-4},
                                           Frozen{2, 0.3, 29.421477, 1e-4}, Frozen{2, 0.1, 48.666950, 1e-4},
                                           Frozen{2, 0.03, 69.600643, 1e-3}, Frozen{2, 0.01, 88.687126, 1e-2},
                                           Frozen{3, 0.3, 41.783237, 1e-3}, Frozen{3, 0.1, 70.635270, 1e-2},
                                           Frozen{3, 0.03, 102.033402, 0.05}, Frozen{4, 0.3, 52.390923, 1e-2},
                                           Frozen{4, 0.1, 90.733705, 0.05}));

TEST(Wiener, SingleTapClosedForm) {
  // K = 1: residual is 1 - sinc^2(B (tau - tau_1))
  const TapLayout l = TapLayout::uniform(1, 1.0, kB);
  for (double off : {0.05, 0.2, 0.45}) {
    const double want = -10 * std::log10(1 - sinc(off) * sinc(off));
    EXPECT_NEAR(wiener_weights({off / kB, 0, 0}, l).suppression_db, want, 1e-6);
  }
}

TEST(Wiener, TwoTapClosedForm) {
  // symmetric echo: residual 1 - 2 s^2 / (1 + r), s = sinc(d/2), r = sinc(d)
  for (double d : {0.5, 0.2, 0.05}) {
    const double s = sinc(d / 2), r = sinc(d);
    const double want = -10 * std::log10(1 - 2 * s * s / (1 + r));
    EXPECT_NEAR(mid_suppression(2, d), want, 1e-3) << d;
  }
}

TEST(Wiener, ProjectionAgreesWithDirectWhereWellConditioned) {
  const TapLayout l = TapLayout::uniform(3, 0.4, kB);
  for (double pos : {0.1, 0.3, 0.55, 0.9}) {
    const double direct = direct_residual(pos / kB, l);
    const double proj = wiener_weights({pos / kB, 0, 0}, l).residual_power_rel;
    EXPECT_NEAR(proj / direct, 1.0, 1e-6) << pos;
  }
}

TEST(Wiener, CoincidentTapIsExact) {
  const TapLayout l = TapLayout::uniform(3, 0.1, kB);
  const WienerResult r = wiener_weights({l.tap_delays_s[1], -3.0, 0.7}, l);
  EXPECT_TRUE(r.exact);
  EXPECT_GT(r.suppression_db, 150.0);
  // all weight on the coincident tap, scaled by the echo gain and phase
  EXPECT_NEAR(std::abs(r.weights[1]), db2amp(-3.0), 1e-9);
  EXPECT_NEAR(std::abs(r.weights[0]), 0.0, 1e-9);
  EXPECT_NEAR(std::abs(r.weights[2]), 0.0, 1e-9);
}

TEST(Wiener, WeightsScaleWithEchoGain) {
  const TapLayout l = TapLayout::uniform(2, 0.2, kB);
  const auto a = wiener_weights({0.1 / kB, 0.0, 0.0}, l);
  const auto b = wiener_weights({0.1 / kB, -20.0, 0.0}, l);
  for (int k = 0; k < 2; ++k) EXPECT_NEAR(std::abs(b.weights[k]) / std::abs(a.weights[k]), 0.1, 1e-12);
  EXPECT_NEAR(a.suppression_db, b.suppression_db, 1e-12);
}

TEST(Wiener, SuppressionGrowsAsSpacingShrinks) {
  for (int K : {2, 3}) {
    double prev = 0;
    for (double s : {1.0, 0.5, 0.2, 0.1, 0.05, 0.02}) {
      const double v = mid_suppression(K, s);
      EXPECT_GT(v, prev) << "K=" << K << " s=" << s;
      prev = v;
    }
  }
}

TEST(Wiener, MoreTapsNeverHurt) {
  for (double s : {0.5, 0.1, 0.03}) {
    double prev = 0;
    for (int K = 1; K <= 4; ++K) {
      const double v = mid_suppression(K, s);
      EXPECT_GE(v, prev - 1e-9) << "K=" << K << " s=" << s;
      prev = v;
    }
  }
}

TEST(Wiener, ResidualIsBounded) {
  const TapLayout l = TapLayout::uniform(3, 0.3, kB);
  for (double pos = -2.0; pos <= 3.0; pos += 0.173) {
    const auto r = wiener_weights({pos / kB, 0, 0}, l);
    EXPECT_GE(r.residual_power_rel, 0.0);
    EXPECT_LE(r.residual_power_rel, 1.0);
  }
}

TEST(Wiener, PositionSweepIsSymmetricAboutLayoutCentre) {
  const auto rows = suppression_position_sweep(2, 0.2, {0.05, 0.15}, kB);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_NEAR(rows[0].suppression_db, rows[1].suppression_db, 1e-6);
}

TEST(Wiener, RejectsDegenerateLayouts) {
  TapLayout l;
  l.tap_delays_s = {1e-9, 1e-9};
  EXPECT_THROW(wiener_weights({0, 0, 0}, l), DegenerateLayout);
  l.tap_delays_s.clear();
  EXPECT_THROW(wiener_weights({0, 0, 0}, l), ConfigError);
  l.tap_delays_s = {0.0};
  l.bandwidth_hz = 0;
  EXPECT_THROW(wiener_weights({0, 0, 0}, l), ConfigError);
}

TEST(Wiener, IllConditionedLayoutStillSolves) {
  // five taps 1e-3 apart: the bare Sinc matrix is numerically singular
  const TapLayout l = TapLayout::uniform(5, 1e-3, kB);
  const auto r = wiener_weights({0.5e-3 / kB, 0, 0}, l);
  EXPECT_TRUE(r.regularized);
  EXPECT_GT(r.suppression_db, 150.0);
}

TEST(Wiener, TwoEchoSecondCopyRaisesMse) {
  const TapLayout l = TapLayout::uniform(2, 0.1, kB);
  const auto one = two_echo_worst_case(l, 0.01 / kB, false);
  EXPECT_DOUBLE_EQ(one.mse1, one.mse2);
  const auto two = two_echo_worst_case(l, 0.01 / kB);
  EXPECT_GT(two.mse2, 0.0);
  EXPECT_THROW(two_echo_worst_case(l, 0.2 / kB), DomainError);
}

TEST(Wiener, MonteCarloMatchesClosedForm) {
  SignalConfig sc;
  sc.oversampling = 16;
  TapLayout l = TapLayout::uniform(2, 0.2, sc.occupied_bandwidth(), sc.carrier_hz, 20e-9);
  const EchoTap echo{0.5 * (l.tap_delays_s[0] + l.tap_delays_s[1]), 0, 0.4};
  const double closed = wiener_weights(echo, l).suppression_db;
  const double mc = monte_carlo_suppression(echo, l, sc, 20, 3);
  EXPECT_NEAR(mc, closed, 0.5);
}
