#include <gtest/gtest.h>

#include "str/csma.hpp"

using namespace str;

namespace {

MacScenario poisson(MacProtocol p, double G, double duration = 2e4) {
  MacScenario s;
  s.protocol = p;
  s.G = G;
  s.backoff_mean = 0;
  s.warmup = 100;
  s.duration = duration;
  return s;
}

}  // namespace

TEST(IdealThroughput, ClosedForms) {
  EXPECT_DOUBLE_EQ(ideal_csma_throughput(1.0), 0.5);
  EXPECT_DOUBLE_EQ(ideal_csma_throughput(0.0), 0.0);
  EXPECT_DOUBLE_EQ(ideal_csma_throughput(std::numeric_limits<double>::infinity()), 1.0);
  EXPECT_DOUBLE_EQ(ideal_dstr_throughput(2.0, 0.5), 1.0);
  EXPECT_DOUBLE_EQ(ideal_dstr_throughput(3.0, 1.0), 0.75);
  EXPECT_NEAR(ideal_dstr_throughput(1e12, 0.5), 2.0, 1e-9);
  EXPECT_THROW(ideal_csma_throughput(-1.0), DomainError);
  EXPECT_THROW(ideal_dstr_throughput(1.0, 1.5), DomainError);
}

TEST(IdealThroughput, DstrNeverBelowSingleChannel) {
  for (double G : {0.1, 1.0, 10.0, 100.0})
    for (double p : {0.0, 0.3, 0.5, 0.8, 1.0}) EXPECT_GE(ideal_dstr_throughput(G, p) + 1e-12, ideal_csma_throughput(G));
}

TEST(MacSim, SingleCellDownlinkMatchesLossFormula) {
  // every packet leaves the AP, so nothing is hidden
  for (double G : {0.3, 1.0, 4.0}) {
    MacScenario s = poisson(MacProtocol::NonSTR, G);
    s.p_dl = 1.0;
    const auto r = run_mac(s, 3);
    EXPECT_NEAR(r.S, ideal_csma_throughput(G), 0.03 * ideal_csma_throughput(G) + 0.005) << G;
  }
}

TEST(MacSim, SingleCellSstrMatchesLossFormula) {
  MacScenario s = poisson(MacProtocol::S_STR, 2.0);
  s.p_dl = 0.8;
  EXPECT_NEAR(run_mac(s, 4).S, 2.0 / 3.0, 0.03);
}

TEST(MacSim, DstrPairsOppositeDirections) {
  MacScenario s = poisson(MacProtocol::D_STR, 4.0);
  s.p_dl = 0.5;
  s.b = 1.0;
  const auto r = run_mac(s, 5);
  EXPECT_NEAR(r.S, ideal_dstr_throughput(4.0, 0.5), 0.05 * ideal_dstr_throughput(4.0, 0.5));
  EXPECT_GT(r.S_dl, 0.3 * r.S);
  EXPECT_GT(r.S_ul, 0.3 * r.S);
}

TEST(MacSim, DstrWithoutPairingIsNoBetterThanCarrierSense) {
  MacScenario s = poisson(MacProtocol::D_STR, 4.0);
  s.b = 0.0;
  const double none = run_mac(s, 6).S;
  s.b = 1.0;
  EXPECT_GT(run_mac(s, 6).S, none + 0.2);
  EXPECT_NEAR(none, ideal_csma_throughput(4.0), 0.04);
}

TEST(MacSim, HiddenUplinkTerminalsCollide) {
  // two UEs on opposite edges do not hear each other
  MacScenario s = poisson(MacProtocol::NonSTR, 4.0);
  s.p_dl = 0.0;
  const auto r = run_mac(s, 3);
  EXPECT_LT(r.S, ideal_csma_throughput(4.0) - 0.02);
  EXPECT_GT(r.collisions, 0);
}

TEST(MacSim, HeaderTimeCostsThroughput) {
  MacScenario s = poisson(MacProtocol::NonSTR, 5.0);
  const double clean = run_mac(s, 7).S;
  s.h = 0.1;
  const auto r = run_mac(s, 7);
  EXPECT_LT(r.S, clean);
  EXPECT_GT(r.collisions, 0);
}

TEST(MacSim, CountsAreConsistent) {
  MacScenario s = poisson(MacProtocol::I_STR, 3.0);
  s.layout = MacLayout::SevenCell;
  s.h = 0.05;
  s.duration = 3000;
  const auto r = run_mac(s, 8);
  EXPECT_LE(r.S, r.G_measured);
  EXPECT_NEAR(r.S, r.S_dl + r.S_ul, 1e-12);
  EXPECT_LE(r.aborted, r.collisions);
  EXPECT_GT(r.successes, 0);
}

TEST(MacSim, Deterministic) {
  MacScenario s = poisson(MacProtocol::S_STR, 2.0, 2000);
  s.layout = MacLayout::SevenCell;
  s.h = 0.05;
  const auto a = run_mac(s, 9), b = run_mac(s, 9);
  EXPECT_EQ(a.successes, b.successes);
  EXPECT_EQ(a.collisions, b.collisions);
  EXPECT_NE(run_mac(s, 10).successes, a.successes);
}

TEST(MacSim, BackoffRetriesRaiseAttemptRate) {
  MacScenario s = poisson(MacProtocol::NonSTR, 2.0, 5000);
  const auto once = run_mac(s, 11);
  s.backoff_mean = 10;
  const auto retry = run_mac(s, 11);
  EXPECT_GT(retry.G_measured, once.G_measured * 1.2);
}

TEST(MacSim, FixedTerminalsSupported) {
  MacScenario s = poisson(MacProtocol::S_STR, 1.0, 3000);
  s.n_terminals = 5;
  const auto r = run_mac(s, 12);
  EXPECT_GT(r.S, 0.3);
}

TEST(MacSim, RejectsBadScenario) {
  MacScenario s;
  s.p_dl = 1.5;
  EXPECT_THROW(run_mac(s, 1), ConfigError);
  s = MacScenario{};
  s.h = 1.0;
  EXPECT_THROW(run_mac(s, 1), ConfigError);
  s = MacScenario{};
  s.G = -1;
  EXPECT_THROW(run_mac(s, 1), ConfigError);
}

TEST(MaxThroughput, GridAndGainRow) {
  const auto g = log_grid(0.1, 10, 3);
  ASSERT_EQ(g.size(), 3u);
  EXPECT_NEAR(g[1], 1.0, 1e-12);
  EXPECT_THROW(log_grid(0, 1, 3), ConfigError);
  MacScenario s = poisson(MacProtocol::NonSTR, 1.0, 2000);
  s.p_dl = 0.5;
  const GainRow r = max_throughput_gain(s, {1.0, 10.0}, 1);
  EXPECT_GT(r.baseline_S, 0.4);
  // ideal single cell: pairing roughly doubles the peak
  EXPECT_GT(r.gain_d100, 0.6);
  EXPECT_GT(r.gain_d100, r.gain_d25);
}
