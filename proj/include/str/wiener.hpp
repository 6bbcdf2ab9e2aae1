#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <utility>

#include "str/common.hpp"
#include "str/signal.hpp"

namespace str {

struct EchoTap {
  double delay_s = 0.0;
  double gain_db = 0.0;
  double phase_rad = 0.0;
};

struct TapLayout {
  std::vector<double> tap_delays_s;
  double bandwidth_hz = 10e6;
  double carrier_hz = 2e9;

  int K() const { return static_cast<int>(tap_delays_s.size()); }

  void validate() const {
    if (tap_delays_s.empty()) throw ConfigError("layout needs at least one tap");
    if (!(bandwidth_hz > 0)) throw ConfigError("bandwidth_hz must be positive");
    for (std::size_t i = 1; i < tap_delays_s.size(); ++i)
      if (!(bandwidth_hz * (tap_delays_s[i] - tap_delays_s[i - 1]) > 0))
        throw DegenerateLayout("tap delays must be strictly increasing");
  }

  /// K taps, first at tau0, spaced by norm_spacing / B.
  static TapLayout uniform(int K, double norm_spacing, double bandwidth_hz = 10e6,
                           double carrier_hz = 2e9, double tau0 = 0.0) {
    TapLayout l;
    l.bandwidth_hz = bandwidth_hz;
    l.carrier_hz = carrier_hz;
    for (int k = 0; k < K; ++k) l.tap_delays_s.push_back(tau0 + k * norm_spacing / bandwidth_hz);
    return l;
  }
};

struct WienerResult {
  Eigen::VectorXcd weights;
  double suppression_db = 0.0;
  double residual_power_rel = 1.0;
  bool regularized = false;
  bool exact = false;
};

inline constexpr double kSuppressionCapDb = 300.0;

inline Eigen::VectorXd cross_corr(double tau, const TapLayout& l) {
  Eigen::VectorXd r(l.K());
  for (int k = 0; k < l.K(); ++k) r[k] = sinc(l.bandwidth_hz * (tau - l.tap_delays_s[k]));
  return r;
}

inline Eigen::MatrixXd autocorr(const TapLayout& l) {
  l.validate();
  const int K = l.K();
  Eigen::MatrixXd R(K, K);
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) R(i, j) = sinc(l.bandwidth_hz * (l.tap_delays_s[i] - l.tap_delays_s[j]));
  return R;
}

namespace detail {

inline double min_norm_spacing(const TapLayout& l) {
  double m = std::numeric_limits<double>::infinity();
  for (int k = 1; k < l.K(); ++k) m = std::min(m, l.bandwidth_hz * (l.tap_delays_s[k] - l.tap_delays_s[k - 1]));
  return m;
}

/// Gauss-Legendre nodes/weights on [-1/2, 1/2].
inline const std::pair<std::vector<double>, std::vector<double>>& gauss_legendre() {
  static const auto table = [] {
    constexpr int n = 96;
    std::vector<double> x(n), w(n);
    for (int i = 0; i < n; ++i) {
      double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
      double dp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = z;
        for (int k = 2; k <= n; ++k) {
          const double p2 = ((2 * k - 1) * z * p1 - (k - 1) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        dp = n * (z * p1 - p0) / (z * z - 1.0);
        const double dz = p1 / dp;
        z -= dz;
        if (std::abs(dz) < 1e-16) break;
      }
      x[i] = 0.5 * z;
      w[i] = 0.5 * 2.0 / ((1.0 - z * z) * dp * dp);
    }
    return std::make_pair(x, w);
  }();
  return table;
}

}  // namespace detail

/// Normalized residual min_c E|Y - sum_k c_k X_k|^2 for a flat spectrum
/// over B, where Y = sum_e a_e X(t - d_e). Evaluated as an orthogonal
/// projection on a spectral quadrature so that residuals far below the
/// conditioning limit of the Sinc matrix stay accurate.
inline double projection_residual(const std::vector<double>& echo_delays, const std::vector<double>& echo_amps,
                                  const TapLayout& l) {
  const auto& [f, w] = detail::gauss_legendre();
  const int n = static_cast<int>(f.size());
  const int K = l.K();
  const double ref = l.tap_delays_s.front();
  Eigen::MatrixXcd A(n, K);
  Eigen::VectorXcd b(n);
  for (int i = 0; i < n; ++i) {
    const double sw = std::sqrt(w[i]);
    for (int k = 0; k < K; ++k) A(i, k) = sw * expj(-2 * kPi * f[i] * l.bandwidth_hz * (l.tap_delays_s[k] - ref));
    cplx y{};
    for (std::size_t e = 0; e < echo_delays.size(); ++e)
      y += echo_amps[e] * expj(-2 * kPi * f[i] * l.bandwidth_hz * (echo_delays[e] - ref));
    b[i] = sw * y;
  }
  Eigen::HouseholderQR<Eigen::MatrixXcd> qr(A);
  Eigen::VectorXcd qtb = qr.householderQ().adjoint() * b;
  return qtb.tail(n - K).squaredNorm();
}

inline double suppression_from_residual(double rel) {
  if (rel <= 0) return kSuppressionCapDb;
  return std::min(kSuppressionCapDb, -10.0 * std::log10(rel));
}

/// Wiener weights for a single echo. Weights come from an LDLT solve of
/// the Sinc autocorrelation system; the residual uses the projection
/// form, which agrees with 1 - r R^-1 r^T where the latter is accurate.
inline WienerResult wiener_weights(const EchoTap& echo, const TapLayout& l) {
  l.validate();
  Eigen::MatrixXd R = autocorr(l);
  WienerResult res;
  if (l.K() > 1 && detail::min_norm_spacing(l) < 1e-3) {
    R.diagonal().array() += 1e-12;
    res.regularized = true;
  }
  auto bad = [](const Eigen::LDLT<Eigen::MatrixXd>& f) {
    return f.info() != Eigen::Success || !f.isPositive() || f.vectorD().minCoeff() <= 0;
  };
  Eigen::LDLT<Eigen::MatrixXd> ldlt(R);
  // distinct taps can still round to a semidefinite Sinc matrix
  if (bad(ldlt) && !res.regularized && l.K() > 1) {
    R.diagonal().array() += 1e-12;
    res.regularized = true;
    ldlt.compute(R);
  }
  if (bad(ldlt)) throw DegenerateLayout("tap autocorrelation is singular");
  const Eigen::VectorXd r = cross_corr(echo.delay_s, l);
  const Eigen::VectorXd c = ldlt.solve(r);
  const double w = 2 * kPi * l.carrier_hz;
  const cplx g = db2amp(echo.gain_db) * expj(echo.phase_rad);
  res.weights.resize(l.K());
  for (int k = 0; k < l.K(); ++k) res.weights[k] = g * expj(w * (echo.delay_s - l.tap_delays_s[k])) * c[k];

  bool coincident = false;
  for (double t : l.tap_delays_s)
    if (std::abs(l.bandwidth_hz * (echo.delay_s - t)) < 1e-12) coincident = true;
  if (coincident) {
    res.exact = true;
    res.residual_power_rel = 0.0;
    res.suppression_db = kSuppressionCapDb;
    return res;
  }
  const double rel = std::clamp(projection_residual({echo.delay_s}, {1.0}, l), 0.0, 1.0);
  res.residual_power_rel = rel;
  res.suppression_db = suppression_from_residual(rel);
  return res;
}

/// 1 - r R^-1 r^T straight from the Sinc system.
inline double direct_residual(double tau, const TapLayout& l) {
  const Eigen::VectorXd r = cross_corr(tau, l);
  return 1.0 - r.dot(autocorr(l).ldlt().solve(r));
}

struct SweepRow {
  int K;
  double norm_spacing;
  double echo_position;  // B (tau - tau_1)
  double suppression_db;
};

/// Echo midway between taps 1 and 2, for every (K, spacing).
inline std::vector<SweepRow> suppression_sweep(const std::vector<int>& Ks, const std::vector<double>& spacings,
                                               double bandwidth_hz = 10e6) {
  std::vector<SweepRow> rows;
  for (int K : Ks)
    for (double s : spacings) {
      const TapLayout l = TapLayout::uniform(K, s, bandwidth_hz);
      const double tau = K > 1 ? 0.5 * (l.tap_delays_s[0] + l.tap_delays_s[1]) : 0.5 * s / bandwidth_hz;
      rows.push_back({K, s, bandwidth_hz * tau, wiener_weights({tau, 0, 0}, l).suppression_db});
    }
  return rows;
}

/// Echo delay sweep over normalized positions B (tau - tau_1).
inline std::vector<SweepRow> suppression_position_sweep(int K, double spacing, const std::vector<double>& positions,
                                                        double bandwidth_hz = 10e6) {
  std::vector<SweepRow> rows;
  const TapLayout l = TapLayout::uniform(K, spacing, bandwidth_hz);
  for (double p : positions)
    rows.push_back({K, spacing, p, wiener_weights({p / bandwidth_hz, 0, 0}, l).suppression_db});
  return rows;
}

struct TwoEchoMse {
  double mse1;
  double mse2;
};

/// Residuals of one mid-tap echo versus a power-normalized pair (mid-tap
/// plus a copy delta later, in phase), for a 2-tap layout.
inline TwoEchoMse two_echo_worst_case(const TapLayout& l, double delta_s, bool include_second = true) {
  l.validate();
  if (l.K() != 2) throw ConfigError("two-echo analysis needs a 2-tap layout");
  const double t1 = l.tap_delays_s[0], t2 = l.tap_delays_s[1];
  if (!(delta_s > 0 && delta_s < 0.5 * (t2 - t1))) throw DomainError("delta out of range");
  const double B = l.bandwidth_hz;
  const double tau = 0.5 * (t1 + t2);
  const Eigen::MatrixXd R = autocorr(l);
  const auto ldlt = R.ldlt();
  const Eigen::VectorXd r1 = cross_corr(tau, l);
  const Eigen::VectorXd r2 = cross_corr(tau + delta_s, l);
  const Eigen::VectorXd c1 = ldlt.solve(r1);
  const double mse1 = 1.0 - r1.dot(c1);
  if (!include_second) return {mse1, mse1};
  const double mse0 = 1.0 - r2.dot(ldlt.solve(r2));
  const double sd = sinc(B * delta_s);
  const double mse2 = (mse1 + mse0 + 2.0 * (sd - r2.dot(c1))) / (2.0 + 2.0 * sd);
  return {mse1, mse2};
}


/// Suppression measured on a rendered OFDM stream when the closed-form
/// weights drive the canceller. The layout bandwidth is taken as the
/// occupied band of `sc`; edges of the stream are dropped before the
/// in-band power is measured.
inline double monte_carlo_suppression(const EchoTap& echo, TapLayout l, const SignalConfig& sc, int n_symbols,
                                      std::uint64_t seed) {
  l.bandwidth_hz = sc.occupied_bandwidth();
  l.carrier_hz = sc.carrier_hz;
  const WienerResult wr = wiener_weights(echo, l);
  const Signal x = generate_ofdm(sc, n_symbols, seed);
  Signal y = delay_signal(x, echo.delay_s, l.carrier_hz);
  const cplx g = db2amp(echo.gain_db) * expj(echo.phase_rad);
  for (auto& v : y.samples) v *= g;
  Signal r = y;
  for (int k = 0; k < l.K(); ++k) {
    const Signal xk = delay_signal(x, l.tap_delays_s[k], l.carrier_hz);
    for (std::size_t i = 0; i < r.size(); ++i) r.samples[i] -= wr.weights[k] * xk.samples[i];
  }
  const std::size_t edge = static_cast<std::size_t>(FractionalDelay::kTaps) + sc.symbol_len();
  if (r.size() <= 2 * edge) throw ConfigError("stream too short for the measurement");
  auto trim = [&](const Signal& s) {
    Signal o;
    o.sample_rate_hz = s.sample_rate_hz;
    o.samples.assign(s.samples.begin() + edge, s.samples.end() - edge);
    return o;
  };
  const double half = 0.5 * sc.occupied_bandwidth();
  const Band band{-half, half};
  return measure_power_dbm(trim(y), band) - measure_power_dbm(trim(r), band);
}

}  // namespace str
