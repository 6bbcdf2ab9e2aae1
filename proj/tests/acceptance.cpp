// Acceptance run: one PASS/FAIL line per criterion, details indented.
// Usage: acceptance [criterion ...]   (no arguments: all of them)

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>

#include "str/io.hpp"

using namespace str;

namespace {

#ifndef STRSIM_PRESET_DIR
#define STRSIM_PRESET_DIR "presets"
#endif

struct Result {
  bool pass = true;
  std::vector<std::string> lines;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    lines.push_back(std::string(ok ? "ok   " : "MISS ") + what);
  }
  void note(const std::string& s) { lines.push_back("     " + s); }
};

std::string f2(double v) {
  char b[64];
  std::snprintf(b, sizeof b, "%.2f", v);
  return b;
}

io::Scenario preset(const std::string& name, const std::vector<std::string>& sets = {}) {
  io::Scenario s = io::Scenario::load(std::string(STRSIM_PRESET_DIR) + "/" + name + ".cfg");
  for (const auto& kv : sets) s.set_override(kv);
  return s;
}

const io::Table& table(const io::RunOutput& out, const std::string& name) {
  for (const auto& [n, t] : out.files)
    if (n == name) return t;
  throw std::runtime_error("no output " + name);
}

double col(const io::Table& t, std::size_t row, const std::string& c) {
  for (std::size_t i = 0; i < t.columns.size(); ++i)
    if (t.columns[i] == c) return io::parse_num(t.rows.at(row)[i]);
  throw std::runtime_error("no column " + c);
}

std::string scol(const io::Table& t, std::size_t row, const std::string& c) {
  for (std::size_t i = 0; i < t.columns.size(); ++i)
    if (t.columns[i] == c) return t.rows.at(row)[i];
  throw std::runtime_error("no column " + c);
}

/// row of a cellular gains table by (p_lo, case)
std::size_t find_row(const io::Table& t, double p, const std::string& name) {
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    if (std::abs(col(t, r, "p_lo") - p) < 1e-9 && scol(t, r, "case") == name) return r;
  throw std::runtime_error("no row " + name);
}

// ---------------------------------------------------------------------

Result c1_wiener() {
  Result r;
  const TapLayout l = TapLayout::uniform(2, 0.01);
  const double mid = 0.5 * (l.tap_delays_s[0] + l.tap_delays_s[1]);
  const double s = wiener_weights({mid, 0, 0}, l).suppression_db;
  r.check(std::abs(s - 90) <= 3, "2 taps, B*dtau=0.01, echo midway: " + f2(s) + " dB (90 +- 3)");
  const TapLayout c = TapLayout::uniform(2, 0.1);
  const double rel = projection_residual({c.tap_delays_s[0]}, {1.0}, c);
  const double sc = suppression_from_residual(rel);
  r.check(sc > 150, "2 taps, B*dtau=0.1, echo on a tap: " + f2(sc) + " dB (> 150)");
  return r;
}

Result c2_monte_carlo() {
  Result r;
  const io::RunOutput out = io::run_engine(preset("wiener_mc"));
  const io::Table& t = table(out, "wiener.csv");
  int n = 0;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const double cf = col(t, i, "suppression_db"), mc = col(t, i, "mc_suppression_db");
    if (cf > 80) continue;
    ++n;
    r.check(std::abs(cf - mc) <= 1.0, "K=" + scol(t, i, "taps") + " spacing " + scol(t, i, "norm_spacing") + ": closed " +
                                           f2(cf) + " dB, simulated " + f2(mc) + " dB");
  }
  r.check(n >= 5, std::to_string(n) + " points at or below 80 dB");
  return r;
}

Result c3_ideal() {
  Result r;
  const io::RunOutput out = io::run_engine(preset("fig4a"));
  const io::Table& t = table(out, "summary.csv");
  const double fin = col(t, 0, "final_residual_dbm"), sup = col(t, 0, "suppression_db");
  r.check(fin < -104, "final residual " + f2(fin) + " dBm (< -104)");
  r.check(sup > 110, "suppression " + f2(sup) + " dB (> 110)");
  return r;
}

Result c4_full() {
  Result r;
  {
    const io::RunOutput out = io::run_engine(preset("fig4b"));
    const double fin = col(table(out, "summary.csv"), 0, "final_residual_dbm");
    r.check(fin <= -88, "analog only, mu halved at 1.5e5: " + f2(fin) + " dBm (<= -88)");
    const io::Table& tr = table(out, "trace.csv");
    double at30 = 0;
    for (std::size_t i = 25; i < 31; ++i) at30 = std::min(at30, col(tr, i, "residual_dbm"));
    r.note("best residual in symbols 25..30: " + f2(at30) + " dBm");
  }
  {
    const io::RunOutput out = io::run_engine(preset("fig5"));
    const io::Table& t = table(out, "summary.csv");
    const double d = col(t, 0, "digital_final_dbm");
    r.check(col(t, 0, "digital_start") >= 0, "digital stage engaged at symbol " + scol(t, 0, "digital_start"));
    r.check(d < -104, "analog + digital: " + f2(d) + " dBm (< -104)");
  }
  return r;
}

Result c5_closed_form() {
  Result r;
  Rng rng(2024);
  const int n_draws = 10;
  const long N = 400000;
  double worst = 0, worst_common = 0, worst_factor = 0;
  for (int k = 0; k < n_draws; ++k) {
    UpdateImpairments q;
    q.g_xi = db2amp(rng.uniform(-1, 1));
    q.g_xq = db2amp(rng.uniform(-1, 1));
    q.g_zi = db2amp(rng.uniform(-1, 1));
    q.g_zq = db2amp(rng.uniform(-1, 1));
    q.phi_xi = rng.uniform(-1, 1) * kDeg;
    q.phi_xq = rng.uniform(-1, 1) * kDeg;
    q.phi_zi = rng.uniform(-1, 1) * kDeg;
    q.phi_zq = rng.uniform(-1, 1) * kDeg;
    const double th_km = rng.uniform(-12, 12) * kDeg;   // shifter phase error folded into H
    const double Delta = rng.uniform(-30, 30) * kDeg;
    const double absH = db2amp(rng.uniform(-10, 0));
    const double thH = th_km + rng.uniform(-0.25, 0.25) * kPi;
    const cplx H = absH * expj(thH);
    for (double sdeg : {0.0, 2.0}) {
      const double sig = sdeg * kDeg;
      double acc = 0, acc_c = 0;
      Rng g(Rng::derive(99, k * 2 + (sdeg > 0)));
      for (long i = 0; i < N; ++i) {
        const cplx X = g.cnormal(1.0);
        const double ex = sig * g.normal(), ez = sig * g.normal();
        acc += update_driver(q, X, H, Delta, ex, ez);
        acc_c += update_driver(q, X, H, Delta, ex, ex);
      }
      const double mc = acc / N, mcc = acc_c / N;
      const double cf = expected_update(q, absH, thH, Delta, sig);
      const double cfc = expected_update(q, absH, thH, Delta, sig, 1.0, true);
      worst = std::max(worst, std::abs(mc / cf - 1));
      worst_common = std::max(worst_common, std::abs(mcc / cfc - 1));
      if (sdeg > 0) worst_factor = std::max(worst_factor, std::abs((mc / mcc) / std::exp(-sig * sig) - 1));
    }
  }
  r.check(worst <= 0.01, "independent oscillators: worst relative error " + f2(100 * worst) + "% over 10 draws x 2 sigmas");
  r.check(worst_common <= 0.01, "common oscillator: worst relative error " + f2(100 * worst_common) + "%");
  r.check(worst_factor <= 0.01, "independent/common ratio vs exp(-sigma^2): worst " + f2(100 * worst_factor) + "%");
  return r;
}

Result c6_phase_noise() {
  Result r;
  const double a = col(table(io::run_engine(preset("phase_noise")), "summary.csv"), 0, "final_residual_dbm");
  const double b = col(table(io::run_engine(preset("phase_noise", {"phase_noise_deg=0"})), "summary.csv"), 0, "final_residual_dbm");
  r.check(std::abs(a - b) <= 3, "sigma=2 deg " + f2(a) + " dBm vs sigma=0 " + f2(b) + " dBm (within 3 dB)");
  return r;
}

Result c7_mac_formulas() {
  Result r;
  MacScenario s;
  s.layout = MacLayout::SingleCell;
  s.backoff_mean = 0;
  s.warmup = 1e3;
  // 1e6 packet-times, capped at 1e7 attempts for the heavy loads
  auto dur = [](double G) { return std::min(1e6, 1e7 / G); };
  double worst = 0;
  for (double G : log_grid(0.1, 100, 7)) {
    s.protocol = MacProtocol::S_STR;
    s.G = G;
    s.duration = dur(G);
    s.p_dl = 0.8;
    const double S = run_mac(s, Rng::derive(7, static_cast<std::uint64_t>(G * 1000))).S;
    worst = std::max(worst, std::abs(S / ideal_csma_throughput(G) - 1));
  }
  r.check(worst <= 0.02, "s-STR h=0 vs G/(1+G), G in [0.1, 100]: worst " + f2(100 * worst) + "% (<= 2%)");
  double worst_d = 0;
  for (double G : log_grid(0.1, 100, 7)) {
    s.protocol = MacProtocol::D_STR;
    s.b = 1;
    s.p_dl = 0.5;
    s.G = G;
    s.duration = dur(G);
    const double S = run_mac(s, Rng::derive(8, static_cast<std::uint64_t>(G * 1000))).S;
    worst_d = std::max(worst_d, std::abs(S / ideal_dstr_throughput(G, 0.5) - 1));
  }
  r.check(worst_d <= 0.03, "d-STR b=1 h=0 vs closed form: worst " + f2(100 * worst_d) + "% (<= 3%)");
  const double lim = ideal_dstr_throughput(std::numeric_limits<double>::infinity(), 0.5);
  r.check(std::abs(lim - 2) < 1e-12 && std::abs(ideal_dstr_throughput(1e9, 0.5) - 2) < 1e-8,
          "d-STR ideal curve limit at p=0.5: " + f2(lim));
  return r;
}

Result c8_mac_tables() {
  Result r;
  // paper values, percent: [table][layout][h] -> s, i, d25, d100
  const double paper[2][2][4][4] = {
      {{{22.8, 22.8, 143, 145}, {14.0, 22.6, 107, 149}, {7.9, 21.2, 62.2, 166}, {5.4, 18.8, 46.2, 185}},
       {{32.1, 47.2, 66.6, 67.9}, {20.4, 45.3, 52.8, 58.6}, {10.7, 37.3, 40.9, 46.6}, {5.7, 29.6, 33.2, 41.1}}},
      {{{63.2, 63.2, 224, 226}, {43.0, 60.0, 188, 231}, {27.2, 49.6, 119, 253}, {19.0, 39.2, 84.6, 279}},
       {{76.0, 89.2, 115, 116}, {49.1, 83.9, 95.5, 101}, {26.9, 64.2, 73.1, 81.4}, {16.3, 46.7, 56.1, 67.4}}}};
  const char* names[2][2] = {{"table2", "table2_multi"}, {"table3", "table3_multi"}};
  const double hs[4] = {0, 0.01, 0.05, 0.1};
  const char* cols[4] = {"s_str_pct", "i_str_pct", "d_str_b25_pct", "d_str_b100_pct"};
  int within = 0, total = 0;
  bool order = true;
  double spot1 = 0, spot2 = 0;
  for (int t = 0; t < 2; ++t)
    for (int l = 0; l < 2; ++l)
      for (int h = 0; h < 4; ++h) {
        const io::RunOutput out = io::run_engine(preset(names[t][l], {"h=" + io::fmt(hs[h])}));
        const io::Table& g = table(out, "gains.csv");
        std::string line = std::string(names[t][l]) + " h=" + io::fmt(hs[h]) + ":";
        double v[4];
        for (int c = 0; c < 4; ++c) {
          v[c] = col(g, 0, cols[c]);
          const bool ok = std::abs(v[c] / paper[t][l][h][c] - 1) <= 0.15;
          within += ok;
          ++total;
          line += " " + f2(v[c]) + (ok ? "" : "*") + "/" + f2(paper[t][l][h][c]);
        }
        if (v[1] < v[0]) order = false;
        if (t == 0 && l == 0 && h == 0) spot1 = v[0];
        if (t == 1 && l == 0 && h == 3) spot2 = v[3];
        r.note(line);
      }
  r.note("cells: s / i / d25 / d100 as simulated/paper, * outside 15%");
  r.check(within == total, std::to_string(within) + "/" + std::to_string(total) + " cells within +-15%");
  r.check(std::abs(spot1 / 22.8 - 1) <= 0.15, "spot: single-cell s-STR h=0 DL80% " + f2(spot1) + "% (~22.8%)");
  r.check(std::abs(spot2 / 279 - 1) <= 0.15, "spot: single-cell d-STR b=100% h=10% DL50% " + f2(spot2) + "% (~279%)");
  r.check(order, "i-STR >= s-STR in every row");
  return r;
}

Result c9_null_forming() {
  Result r;
  const io::RunOutput out = io::run_engine(preset("nullforming"));
  const io::Table& b = table(out, "bs_bs.csv");
  for (std::size_t i = 0; i < b.rows.size(); ++i)
    r.note(scol(b, i, "case") + ": median " + f2(col(b, i, "median_dbm")) + " dBm, below floor " +
           f2(100 * col(b, i, "fraction_below_floor")) + "%");
  for (std::size_t i = 0; i < b.rows.size(); ++i)
    if (scol(b, i, "case") == "str12_null") {
      const double f = col(b, i, "fraction_below_floor");
      r.check(f >= 0.95, "N=12 with nulls: " + f2(100 * f) + "% of first-tier BS-BS links below " + f2(col(b, i, "noise_floor_dbm")) +
                             " dBm (>= 95%)");
    }
  const io::Table& q = table(out, "cdf.csv");
  double base = NAN, str = NAN;
  for (std::size_t i = 0; i < q.rows.size(); ++i) {
    if (std::abs(col(q, i, "quantile") - 0.5) > 1e-9) continue;
    if (scol(q, i, "case") == "nonstr") base = col(q, i, "ul");
    if (scol(q, i, "case") == "str8") str = col(q, i, "ul");
  }
  r.check(str < 0.5 * base, "median UL without nulls " + f2(str) + " vs non-STR " + f2(base) + " bit/s/Hz (< 0.5x)");
  return r;
}

Result c10_cellular() {
  Result r;
  const CellDeployment L = CellDeployment::large();
  const double a1 = pathloss_ue_ue(115, 0.25, L), a2 = pathloss_bs_ue(115, L);
  r.check(std::abs(a1 - 75) <= 2, "UE-UE(115 m, p=0.25) = " + f2(a1) + " dB (75 +- 2)");
  r.check(std::abs(a2 - 113) <= 2, "BS-UE(115 m) = " + f2(a2) + " dB (113 +- 2)");

  int signs = 0, cells = 0;
  auto cmp = [&](const std::string& tag, double sim, double pap) {
    const bool ok = (sim > 0) == (pap > 0);
    signs += ok;
    ++cells;
    return tag + " " + f2(sim) + (ok ? "" : "!") + "/" + f2(pap);
  };
  {
    const double paper[2][8] = {{100.6, -35.0, 103.0, 0.2, 103.8, 17.5, 42.8, -50.0},
                                {116.8, 2.2, 119.3, 46.7, 120.1, 66.7, 90.9, 32.8}};
    const io::RunOutput out = io::run_engine(preset("table5"));
    const io::Table& g = table(out, "gains.csv");
    const double ps[3] = {0.25, 0.37, 0.5};
    for (int n = 0; n < 2; ++n) {
      const std::string cs = n ? "str12_null" : "str8_null";
      std::string line = "V  N=" + std::string(n ? "12" : "8") + ":";
      for (int p = 0; p < 3; ++p) {
        const std::size_t row = find_row(g, ps[p], cs);
        const double m = col(g, row, "dl_mean_pct");
        line += cmp(" DL", m, paper[n][2 * p]) + cmp("", col(g, row, "dl_edge_pct"), paper[n][2 * p + 1]);
        if (n == 1) r.check(std::abs(m - paper[1][2 * p]) <= 20, "V 12-antenna DL mean p>" + io::fmt(ps[p]) + ": " + f2(m) + "% vs " + f2(paper[1][2 * p]) + "%");
      }
      const std::size_t row = find_row(g, 0.25, cs);
      line += cmp(" UL", col(g, row, "ul_mean_pct"), paper[n][6]) + cmp("", col(g, row, "ul_edge_pct"), paper[n][7]);
      r.note(line);
    }
  }
  {
    const double paper[2][6] = {{37.7, -92.6, 69.8, -80.9, 55.8, -27.5}, {55.3, -82.4, 84.8, -59.7, 83.5, 36.2}};
    const io::RunOutput out = io::run_engine(preset("table6"));
    const io::Table& g = table(out, "gains.csv");
    for (int n = 0; n < 2; ++n) {
      const std::string cs = n ? "str12_null" : "str8_null";
      std::string line = "VI N=" + std::string(n ? "12" : "8") + ":";
      for (int p = 0; p < 2; ++p) {
        const std::size_t row = find_row(g, p ? 0.37 : 0.25, cs);
        line += cmp(" DL", col(g, row, "dl_mean_pct"), paper[n][2 * p]) + cmp("", col(g, row, "dl_edge_pct"), paper[n][2 * p + 1]);
      }
      const std::size_t row = find_row(g, 0.25, cs);
      line += cmp(" UL", col(g, row, "ul_mean_pct"), paper[n][4]) + cmp("", col(g, row, "ul_edge_pct"), paper[n][5]);
      r.note(line);
    }
  }
  {
    const double paper[2][8] = {{64.6, 2.0, 81.1, -0.9, 0.2, -53.2, 27.9, -45.7}, {71.3, 6.9, 92.1, 17.1, 44.6, 8.4, 63.7, 16.3}};
    const io::RunOutput out = io::run_engine(preset("table7"));
    const io::Table& g = table(out, "gains.csv");
    for (int n = 0; n < 2; ++n) {
      const std::string cs = n ? "rb12" : "rb8";
      std::string line = "VII N=" + std::string(n ? "12" : "8") + ":";
      for (int p = 0; p < 2; ++p) {
        const std::size_t row = find_row(g, p ? 0.37 : 0.25, cs);
        line += cmp(" DL", col(g, row, "dl_mean_pct"), paper[n][2 * p]) + cmp("", col(g, row, "dl_edge_pct"), paper[n][2 * p + 1]);
      }
      for (int p = 0; p < 2; ++p) {
        const std::size_t row = find_row(g, p ? 0.37 : 0.25, cs);
        line += cmp(" UL", col(g, row, "ul_mean_pct"), paper[n][4 + 2 * p]) + cmp("", col(g, row, "ul_edge_pct"), paper[n][5 + 2 * p]);
      }
      r.note(line);
    }
  }
  r.note("cells: simulated/paper %, ! wrong sign");
  r.check(signs == cells, std::to_string(signs) + "/" + std::to_string(cells) + " cells of Tables V-VII with the paper's sign");
  return r;
}

Result c11_determinism() {
  Result r;
  // the presets, shrunk so the check stays cheap
  const std::vector<std::pair<std::string, std::vector<std::string>>> runs = {
      {"fig1a", {}},
      {"wiener_coincident", {}},
      {"wiener_mc", {"mc_symbols=8"}},
      {"fig4a", {"n_symbols=200", "final_window=50", "oversampling=16"}},
      {"fig4b", {"n_symbols=200", "final_window=50", "mu_halve_at=100"}},
      {"fig5", {"n_symbols=200", "digital_symbols=120"}},
      {"digital_avg1", {"n_symbols=200", "digital_symbols=20"}},
      {"phase_noise", {"n_symbols=100", "final_window=50"}},
      {"tracking", {"n_symbols=200", "final_window=50"}},
      {"tx_iq", {"n_symbols=200", "final_window=50"}},
      {"mac_curve", {"duration=500", "G_grid=0.1:10:4:log"}},
      {"table2", {"duration=300", "G_grid=0.5:30:4:log", "h=0.05"}},
      {"table2_multi", {"duration=200", "G_grid=0.5:30:3:log"}},
      {"table3", {"duration=300", "G_grid=0.5:30:4:log", "h=0.1"}},
      {"table3_multi", {"duration=200", "G_grid=0.5:30:3:log"}},
      {"table5", {"n_snapshots=3", "p_lo=0.25"}},
      {"table6", {"n_snapshots=3", "p_lo=0.37"}},
      {"table7", {"n_snapshots=2", "p_lo=0.25", "antennas=12"}},
      {"nullforming", {"n_snapshots=3", "bs_bs_draws=5"}},
  };
  auto render = [](const io::Scenario& s, const io::RunOutput& o) {
    std::string all;
    for (const auto& [n, t] : o.files) all += n + "\n" + io::to_csv(t, io::csv_meta(s));
    return all;
  };
  int same = 0;
  for (const auto& [name, sets] : runs) {
    const io::Scenario s = preset(name, sets);
    const std::string a = render(s, io::run_engine(s, 1));
    const std::string b = render(s, io::run_engine(s, 3));
    const std::string c = render(s, io::run_engine(s, 1));
    const bool ok = a == b && a == c;
    same += ok;
    if (!ok) r.note(name + " differs between reruns");
  }
  r.check(same == static_cast<int>(runs.size()),
          std::to_string(same) + "/" + std::to_string(runs.size()) + " presets byte-identical across reruns and 1 vs 3 threads");
  const io::Scenario m = preset("mac_curve", {"duration=300", "protocol=s"});
  const io::Axis ax = io::parse_axis("G=0.1:100:20:log", m);
  const std::string s1 = io::to_csv(io::run_sweep(m, ax, 1), {}), s8 = io::to_csv(io::run_sweep(m, ax, 8), {});
  const std::string s1b = io::to_csv(io::run_sweep(m, ax, 1), {});
  r.check(s1 == s8 && s1 == s1b, "20-point G sweep identical at parallelism 1 and 8 and on rerun");
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Result()>>> all = {
      {"Wiener oracle", c1_wiener},
      {"Monte Carlo matches closed form", c2_monte_carlo},
      {"ideal-mode canceller", c3_ideal},
      {"full-impairment canceller and digital stage", c4_full},
      {"expected update closed form", c5_closed_form},
      {"phase noise robustness", c6_phase_noise},
      {"MAC closed forms", c7_mac_formulas},
      {"MAC gain tables", c8_mac_tables},
      {"null forming", c9_null_forming},
      {"cellular tables and path-loss anchors", c10_cellular},
      {"determinism", c11_determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Result res;
    try {
      res = all[i].second();
    } catch (const std::exception& e) {
      res.check(false, std::string("exception: ") + e.what());
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %d: %s (%.1f s)\n", res.pass ? "PASS" : "FAIL", id, all[i].first.c_str(), dt);
    for (const auto& l : res.lines) std::printf("    %s\n", l.c_str());
    std::fflush(stdout);
    failed += !res.pass;
  }
  std::printf("%d criteria failed\n", failed);
  return failed ? 1 : 0;
}
