#pragma once

#include <Eigen/Dense>
#include <boost/random/normal_distribution.hpp>

#include <algorithm>
#include <bit>
#include <optional>

#include "str/common.hpp"
#include "str/fft.hpp"
#include "str/signal.hpp"
#include "str/wiener.hpp"

namespace str {

/// M fixed phase shifters per tap; nominal phase pi*m/M for m = 1..M.
/// Arrays are row-major [k*M + m] with m zero-based.
struct PhaseShifterBank {
  int K = 3;
  int M = 3;
  std::vector<double> gain_db;
  std::vector<double> phase_imbalance_deg;

  static PhaseShifterBank ideal(int K, int M) {
    PhaseShifterBank b;
    b.K = K;
    b.M = M;
    b.gain_db.assign(K * M, 0.0);
    b.phase_imbalance_deg.assign(K * M, 0.0);
    return b;
  }

  double gain(int k, int m) const { return db2amp(gain_db[k * M + m]); }
  double theta(int k, int m) const { return kPi * (m + 1) / M + phase_imbalance_deg[k * M + m] * kDeg; }

  void validate() const {
    if (K < 1 || M < 1) throw ConfigError("bank needs K, M >= 1");
    if (static_cast<int>(gain_db.size()) != K * M || static_cast<int>(phase_imbalance_deg.size()) != K * M)
      throw ConfigError("bank arrays must have K*M entries");
  }

  /// true when no two shifters of a tap share a phase (mod 2 pi)
  bool phases_distinct() const {
    for (int k = 0; k < K; ++k)
      for (int a = 0; a < M; ++a)
        for (int b = a + 1; b < M; ++b) {
          const double d = std::remainder(theta(k, a) - theta(k, b), 2 * kPi);
          if (std::abs(d) < 1e-9) return false;
        }
    return true;
  }
};

/// Quadrature downconverter with I/Q gain and phase imbalance:
/// out = g_i Re{X e^{-j phi_i}} + j g_q Im{X e^{-j phi_q}} = alpha X + beta X*.
struct DownconverterModel {
  double gain_i_db = 0.0;
  double gain_q_db = 0.0;
  double phase_i_deg = 0.0;
  double phase_q_deg = 0.0;
  double delta_deg = 0.0;
  double phase_noise_rms_deg = 0.0;
  bool common_oscillator = false;

  cplx alpha() const {
    return 0.5 * (db2amp(gain_i_db) * expj(-phase_i_deg * kDeg) + db2amp(gain_q_db) * expj(-phase_q_deg * kDeg));
  }
  cplx beta() const {
    return 0.5 * (db2amp(gain_i_db) * expj(phase_i_deg * kDeg) - db2amp(gain_q_db) * expj(phase_q_deg * kDeg));
  }
  /// direct I/Q form, with an extra common oscillator phase `pn`
  cplx apply(cplx x, double pn = 0.0) const {
    const double gi = db2amp(gain_i_db), gq = db2amp(gain_q_db);
    const cplx ri = x * expj(-(phase_i_deg * kDeg + pn));
    const cplx rq = x * expj(-(phase_q_deg * kDeg + pn));
    return {gi * ri.real(), gq * rq.imag()};
  }
  void validate() const {
    if (!(std::abs(delta_deg) < 45.0)) throw ConfigError("|delta| must be below 45 degrees");
    if (phase_noise_rms_deg < 0) throw ConfigError("phase noise rms must be non-negative");
  }
};

/// Variable attenuator. Weight magnitude lives in
/// [10^(-max/20), 10^(-min/20)]; phase distortion is linear in dB.
struct AttenuatorModel {
  double min_atten_db = 3.0;
  double max_atten_db = 38.0;
  bool unlimited = false;
  bool phase_distortion = true;
  double phase_at_min_deg = 0.0;
  double phase_at_max_deg = 50.0;
  /// dB span over which the distortion law is defined (stays 3..38 dB
  /// even when the usable range changes)
  double law_min_db = 3.0;
  double law_max_db = 38.0;

  double w_min() const { return unlimited ? 0.0 : db2amp(-max_atten_db); }
  double w_max() const { return unlimited ? std::numeric_limits<double>::infinity() : db2amp(-min_atten_db); }

  /// integrator state -> applied weight. Magnitudes below the range snap
  /// to its edge, so a sign change jumps across the dead zone.
  double apply(double v) const {
    if (unlimited) return v;
    const double wmax = w_max(), wmin = w_min();
    const double c = std::clamp(v, -wmax, wmax);
    const double mag = std::max(std::abs(c), wmin);
    return c < 0 ? -mag : mag;
  }
  double saturate(double v) const {
    if (unlimited) return v;
    return std::clamp(v, -w_max(), w_max());
  }

  double phase_rad(double w) const {
    if (!phase_distortion || w == 0.0) return 0.0;
    const double att = std::clamp(-20.0 * std::log10(std::abs(w)), law_min_db, law_max_db);
    const double slope = (phase_at_max_deg - phase_at_min_deg) / (law_max_db - law_min_db);
    return (phase_at_min_deg + slope * (att - law_min_db)) * kDeg;
  }

  void validate() const {
    if (!unlimited && !(max_atten_db > min_atten_db)) throw ConfigError("attenuator range is empty");
  }
};

/// Gains, losses and noise sources of the canceller. Levels are referred
/// to the canceller input: tap signals at 0 dBm, echo at its own level.
struct NoiseBudget {
  bool enabled = true;
  bool tx_noise = true;
  bool rx_noise = true;
  bool downconverter_noise = true;
  bool baseband_noise = true;
  double tx_power_dbm = 11.0;
  double tx_noise_dbm_hz = -154.0;
  double thermal_dbm_hz = kThermalDbmHz;
  double downconverter_nf_db = 9.0;
  double baseband_excess_noise_db = 20.0;
  double x_gain_db = 0.0;
  double z_gain_db = 30.0;
  /// integrator output level that maps to unit weight
  double weight_fullscale_dbm = 10.0;
  /// extra loss in the estimation path on top of the K*M-way combiner
  double estimate_path_loss_db = 0.0;

  bool on(bool flag) const { return enabled && flag; }
  double combiner_loss_db(int K, int M) const { return 10.0 * std::log10(static_cast<double>(K * M)); }

  static NoiseBudget none() {
    NoiseBudget n;
    n.enabled = false;
    return n;
  }
};

struct TxImpairment {
  bool enabled = false;
  double gain_q_db = 0.8;
  double phase_q_deg = 1.5;
};

/// Per-symbol offsets added to each echo: gain_db[symbol][echo],
/// phase_rad[symbol][echo]. The last row holds past the end.
struct TimeProfile {
  std::vector<std::vector<double>> gain_db;
  std::vector<std::vector<double>> phase_rad;

  bool empty() const { return gain_db.empty(); }
  std::size_t length() const { return gain_db.size(); }
};

struct EchoChannel {
  std::vector<EchoTap> taps;
  TimeProfile profile;

  void validate() const {
    if (taps.empty()) throw ConfigError("echo channel needs at least one tap");
    for (std::size_t i = 0; i < taps.size(); ++i) {
      if (!(taps[i].delay_s >= 0)) throw ConfigError("echo delays must be non-negative");
      if (i && !(taps[i].delay_s > taps[i - 1].delay_s)) throw ConfigError("echo delays must increase");
      if (!std::isfinite(taps[i].gain_db)) throw ConfigError("echo gains must be finite");
    }
    if (!profile.empty()) {
      if (profile.phase_rad.size() != profile.gain_db.size()) throw ConfigError("profile shape mismatch");
      for (std::size_t s = 0; s < profile.length(); ++s)
        if (profile.gain_db[s].size() != taps.size() || profile.phase_rad[s].size() != taps.size())
          throw ConfigError("profile row must have one entry per echo");
    }
  }

  cplx gain(std::size_t e, long symbol) const {
    double gdb = taps[e].gain_db, ph = taps[e].phase_rad;
    if (!profile.empty()) {
      const std::size_t s = std::min<std::size_t>(static_cast<std::size_t>(symbol), profile.length() - 1);
      gdb += profile.gain_db[s][e];
      ph += profile.phase_rad[s][e];
    }
    return db2amp(gdb) * expj(ph);
  }
};

struct AdaptationConfig {
  /// integrator gain per symbol duration
  double mu = 40.0;
  /// (symbol index, multiplier) steps, applied cumulatively
  std::vector<std::pair<long, double>> mu_schedule;
  /// samples per weight update
  int update_block = 8;
  long n_symbols = 1000;
  /// keep weights every n-th symbol in the trace
  int trace_every = 100;
  /// trailing symbols averaged into the final residual
  long final_window = 1000;
  /// symbols averaged into the exported spectrum
  int spectrum_symbols = 64;

  bool digital = false;
  double digital_threshold_dbm = -70.0;
  int digital_averaging = 100;
  /// symbols to run after the digital stage starts
  long digital_symbols = 500;

  double divergence_margin_db = 10.0;

  void validate() const {
    if (!(mu > 0)) throw ConfigError("mu must be positive");
    if (update_block < 1) throw ConfigError("update_block must be >= 1");
    if (n_symbols < 1) throw ConfigError("n_symbols must be >= 1");
    if (digital_averaging < 1) throw ConfigError("digital_averaging must be >= 1");
  }

  double mu_at(long symbol) const {
    double m = mu;
    for (const auto& [s, f] : mu_schedule)
      if (symbol >= s) m *= f;
    return m;
  }
};

struct CancellerScenario {
  SignalConfig signal;
  EchoChannel echo;
  TapLayout layout;
  PhaseShifterBank bank;
  std::vector<DownconverterModel> x_dc;  // one per (k,m)
  DownconverterModel z_dc;
  AttenuatorModel atten;
  NoiseBudget noise;
  TxImpairment tx;
  AdaptationConfig adapt;
  std::uint64_t seed = 1;

  void validate() const {
    signal.validate();
    echo.validate();
    layout.validate();
    bank.validate();
    atten.validate();
    adapt.validate();
    if (layout.K() != bank.K) throw ConfigError("layout and bank disagree on K");
    if (static_cast<int>(x_dc.size()) != bank.K * bank.M) throw ConfigError("need one downconverter per shifter");
    for (const auto& d : x_dc) d.validate();
    z_dc.validate();
  }
};

struct CancellerTrace {
  std::vector<double> residual_dbm;  // every symbol, analog stage
  std::vector<long> weight_symbol;
  std::vector<std::vector<double>> weights;  // applied weights, row-major K*M
  std::vector<double> spectrum_freq_hz;
  std::vector<double> spectrum_z_dbm_hz;
  std::vector<double> spectrum_residual_dbm_hz;
  double echo_power_dbm = 0.0;
  double final_residual_dbm = 0.0;
  double suppression_db = 0.0;
  long digital_start = -1;
  std::vector<double> digital_residual_dbm;
  double digital_final_dbm = 0.0;
};

// ---------------------------------------------------------------------
// Paper-faithful presets

/// Table I imbalances. Returns (bank, per-shifter downconverters).
inline std::pair<PhaseShifterBank, std::vector<DownconverterModel>> table1_impairments() {
  // phase: phi_km, phi_x_i, phi_x_q, delta ; gain dB: g_km, g_x_i, g_x_q
  static const double ph[9][4] = {{-1, 0.6, 0.3, 30},   {10, 0.1, 1.1, -30},  {5, 0.25, -0.75, 15},
                                  {11, -0.5, 0.5, 10},  {-2, 0.5, -0.4, 23},  {2, -0.15, 0.8, -17},
                                  {2, -0.8, 0.2, -25},  {12, -0.2, 0.8, 19},  {-5, 0.7, -0.2, -30}};
  static const double gn[9][3] = {{-0.5, 0.2, 0.7}, {1, 0.1, 0.6},    {1, 0.23, -0.27},
                                  {-1, -0.1, 0.4},  {0.5, 0.5, -0.1}, {2, 1, 0.5},
                                  {1.5, -0.3, 0.2}, {-0.2, -0.2, 0.3}, {2, 0.4, -0.1}};
  PhaseShifterBank b = PhaseShifterBank::ideal(3, 3);
  std::vector<DownconverterModel> dcs(9);
  for (int i = 0; i < 9; ++i) {
    b.phase_imbalance_deg[i] = ph[i][0];
    b.gain_db[i] = gn[i][0];
    dcs[i].phase_i_deg = ph[i][1];
    dcs[i].phase_q_deg = ph[i][2];
    dcs[i].delta_deg = ph[i][3];
    dcs[i].gain_i_db = gn[i][1];
    dcs[i].gain_q_db = gn[i][2];
  }
  return {b, dcs};
}

inline DownconverterModel table1_z_downconverter() {
  DownconverterModel z;
  z.phase_i_deg = -0.9;
  z.phase_q_deg = 0.1;
  z.gain_i_db = -0.1;
  z.gain_q_db = 0.4;
  return z;
}

/// Three taps at normalized spacing 0.025, echoes midway between taps
/// 1-2 (-4.2 dBm) and 2-3 (-44 dBm), Table I impairments.
inline CancellerScenario fig4_scenario(bool ideal) {
  CancellerScenario s;
  s.signal.oversampling = 16;
  s.layout = TapLayout::uniform(3, 0.025, s.signal.bandwidth_hz, s.signal.carrier_hz, 1.0e-9);
  const auto& t = s.layout.tap_delays_s;
  s.echo.taps = {{0.5 * (t[0] + t[1]), -4.2, 0.3}, {0.5 * (t[1] + t[2]), -44.0, 1.9}};
  auto [bank, dcs] = table1_impairments();
  s.bank = bank;
  s.x_dc = dcs;
  s.z_dc = table1_z_downconverter();
  if (ideal) {
    s.noise = NoiseBudget::none();
    s.atten.unlimited = true;
  }
  return s;
}

// ---------------------------------------------------------------------
// Stream-level operations

/// g_km X(t - tau_k) e^{j(omega tau_k + theta_km)} for every (k, m).
inline std::vector<Signal> shifter_outputs(const Signal& x, const PhaseShifterBank& bank, const TapLayout& layout) {
  bank.validate();
  if (layout.K() != bank.K) throw ConfigError("layout and bank disagree on K");
  std::vector<Signal> out;
  out.reserve(bank.K * bank.M);
  for (int k = 0; k < bank.K; ++k) {
    const Signal d = delay_signal(x, layout.tap_delays_s[k], layout.carrier_hz);
    for (int m = 0; m < bank.M; ++m) {
      Signal s = d;
      const cplx f = bank.gain(k, m) * expj(bank.theta(k, m));
      for (auto& v : s.samples) v *= f;
      out.push_back(std::move(s));
    }
  }
  return out;
}

/// sum_km w_km e^{j phi(w_km)} x_km(t), scaled by the estimate-path gain.
inline Signal estimate_echo(const Eigen::MatrixXd& w, const std::vector<Signal>& xs, const AttenuatorModel* atten = nullptr,
                            double path_gain = 1.0) {
  if (xs.empty()) return {};
  const int M = static_cast<int>(w.cols());
  Signal e;
  e.sample_rate_hz = xs.front().sample_rate_hz;
  e.samples.assign(xs.front().size(), cplx{});
  for (int k = 0; k < w.rows(); ++k)
    for (int m = 0; m < M; ++m) {
      const double wk = w(k, m);
      if (wk == 0.0) continue;
      const cplx c = path_gain * wk * (atten ? expj(atten->phase_rad(wk)) : cplx{1.0});
      const auto& x = xs[k * M + m].samples;
      for (std::size_t i = 0; i < x.size(); ++i) e.samples[i] += c * x[i];
    }
  return e;
}

/// One steepest-descent step from a block of downconverted signals:
/// w += mu * mean Re{x~* z~ e^{j delta}}, saturated to the attenuator.
inline Eigen::MatrixXd lms_step(const Eigen::MatrixXd& w, const std::vector<Signal>& x_dc, const Signal& z_dc,
                                double mu, const std::vector<double>& delta_deg, const AttenuatorModel& atten) {
  Eigen::MatrixXd out = w;
  const int M = static_cast<int>(w.cols());
  const std::size_t n = z_dc.size();
  if (n == 0) return out;
  for (int k = 0; k < w.rows(); ++k)
    for (int m = 0; m < M; ++m) {
      const int i = k * M + m;
      const cplx rot = expj(delta_deg[i] * kDeg);
      double acc = 0.0;
      const auto& x = x_dc[i].samples;
      for (std::size_t t = 0; t < n; ++t) acc += (std::conj(x[t]) * z_dc.samples[t] * rot).real();
      out(k, m) = atten.saturate(w(k, m) + mu * acc / static_cast<double>(n));
    }
  return out;
}

inline Signal downconvert(const Signal& s, const DownconverterModel& d) {
  Signal o = s;
  const cplx a = d.alpha(), b = d.beta();
  for (auto& v : o.samples) v = a * v + b * std::conj(v);
  return o;
}

// ---------------------------------------------------------------------
// Appendix-B expected update

struct UpdateImpairments {
  double g_xi = 1, g_xq = 1, g_zi = 1, g_zq = 1;             // linear gains
  double phi_xi = 0, phi_xq = 0, phi_zi = 0, phi_zq = 0;     // radians
};

/// Ensemble mean of Re{X~* Z~ e^{j Delta}} for Z = H X, E|X|^2 = P,
/// with independent white phase noise of rms sigma (rad) on both
/// downconverters. With `common` the oscillators are shared and the
/// exp(-sigma^2) factor drops out.
inline double expected_update(const UpdateImpairments& q, double abs_h, double theta_h, double Delta, double sigma,
                              double P = 1.0, bool common = false) {
  const double dii = q.phi_xi - q.phi_zi, dqq = q.phi_xq - q.phi_zq;
  const double diq = q.phi_xi - q.phi_zq, dqi = q.phi_xq - q.phi_zi;
  const double ct = std::cos(theta_h), st = std::sin(theta_h);
  const double a = ct * (q.g_xi * q.g_zi * std::cos(dii) + q.g_xq * q.g_zq * std::cos(dqq)) -
                   st * (q.g_xi * q.g_zi * std::sin(dii) + q.g_xq * q.g_zq * std::sin(dqq));
  const double b = ct * (q.g_xi * q.g_zq * std::sin(diq) + q.g_xq * q.g_zi * std::sin(dqi)) +
                   st * (q.g_xi * q.g_zq * std::cos(diq) + q.g_xq * q.g_zi * std::cos(dqi));
  const double scale = common ? 1.0 : std::exp(-sigma * sigma);
  return scale * abs_h * P / 2.0 * (a * std::cos(Delta) - b * std::sin(Delta));
}

/// Instantaneous update driver for one sample X, H, with phase noises
/// eps_x, eps_z on the two downconverters (the per-sample form whose
/// average is expected_update).
inline double update_driver(const UpdateImpairments& q, cplx X, cplx H, double Delta, double eps_x, double eps_z) {
  const cplx Z = H * X;
  const cplx xr = X * expj(-(q.phi_xi + eps_x)), xq = X * expj(-(q.phi_xq + eps_x));
  const cplx zr = Z * expj(-(q.phi_zi + eps_z)), zq = Z * expj(-(q.phi_zq + eps_z));
  const cplx xt{q.g_xi * xr.real(), q.g_xq * xq.imag()};
  const cplx zt{q.g_zi * zr.real(), q.g_zq * zq.imag()};
  return (std::conj(xt) * zt * expj(Delta)).real();
}

// ---------------------------------------------------------------------
// Closed-loop engine

namespace detail {

/// e^{j phi(w)} by table lookup: log2|w| from the exponent and mantissa bits, then the
/// phasor on the attenuation axis, both linearly interpolated.
class PhaseLawTable {
 public:
  explicit PhaseLawTable(const AttenuatorModel& a) : on_(a.phase_distortion) {
    if (!on_) return;
    lo_db_ = a.law_min_db;
    hi_db_ = a.law_max_db;
    lo_ = expj(a.phase_rad(db2amp(-lo_db_)));
    hi_ = expj(a.phase_rad(db2amp(-hi_db_)));
    step_ = (hi_db_ - lo_db_) / kPhasorBins;
    phasor_.resize(kPhasorBins + 2);
    for (int i = 0; i <= kPhasorBins + 1; ++i) phasor_[i] = expj(a.phase_rad(db2amp(-(lo_db_ + i * step_))));
    log2m_.resize(kMantBins + 2);
    for (int i = 0; i <= kMantBins + 1; ++i) log2m_[i] = std::log2(1.0 + static_cast<double>(i) / kMantBins);
    inv_step_ = 1.0 / step_;
  }

  cplx phasor(double w) const {
    if (!on_ || w == 0.0) return 1.0;
    const auto bits = std::bit_cast<std::uint64_t>(std::abs(w));
    const int e = static_cast<int>(bits >> 52) - 1023;
    const int j = static_cast<int>((bits >> (52 - kMantLog2)) & (kMantBins - 1));
    const double u = static_cast<double>(bits & ((std::uint64_t{1} << (52 - kMantLog2)) - 1)) * kFracScale;
    const double l2 = e + log2m_[j] + u * (log2m_[j + 1] - log2m_[j]);
    const double att = -kDbPerOctave * l2;
    if (att <= lo_db_) return lo_;
    if (att >= hi_db_) return hi_;
    const double x = (att - lo_db_) * inv_step_;
    const int i = static_cast<int>(x);
    return phasor_[i] + (x - i) * (phasor_[i + 1] - phasor_[i]);
  }

 private:
  static constexpr int kPhasorBins = 1 << 16;
  static constexpr int kMantLog2 = 12;
  static constexpr int kMantBins = 1 << kMantLog2;
  static constexpr double kFracScale = 1.0 / static_cast<double>(std::uint64_t{1} << (52 - kMantLog2));
  static constexpr double kDbPerOctave = 6.020599913279624;
  bool on_;
  double lo_db_ = 0, hi_db_ = 0, step_ = 1, inv_step_ = 1;
  cplx lo_, hi_;
  cvec phasor_;
  std::vector<double> log2m_;
};

/// Everything the sample loop needs for one run, precomputed.
class CancellerEngine {
 public:
  explicit CancellerEngine(const CancellerScenario& s)
      : s_(s),
        c_(s.signal),
        K_(s.bank.K),
        M_(s.bank.M),
        KM_(K_ * M_),
        nu_(c_.useful_len()),
        ncp_(c_.cp_len()),
        ns_(c_.symbol_len()),
        fs_(c_.sample_rate()),
        render_(c_),
        fwd_(Fft::of(nu_)),
        rng_(Rng::derive(s.seed, 0xC0FFEE)) {
    s.validate();
    const double w = 2 * kPi * s.layout.carrier_hz;
    tone_amp_ = tone_amplitude(c_, 0.0);
    for (int b = 0; b < nu_; ++b) freq_.push_back(c_.bin_freq(b < nu_ / 2 ? b : b - nu_));
    active_.assign(nu_, 0);
    for (int k = 0; k < c_.n_active_subcarriers; ++k) active_[wrap_bin(c_.active_bin(k), nu_)] = 1;

    auto ramp = [&](double tau) {
      cvec r(nu_);
      for (int b = 0; b < nu_; ++b) r[b] = expj(-2 * kPi * freq_[b] * tau);
      return r;
    };
    for (int k = 0; k < K_; ++k) tap_ramp_.push_back(ramp(s.layout.tap_delays_s[k]));
    for (const auto& e : s.echo.taps) {
      echo_ramp_.push_back(ramp(e.delay_s));
      echo_carrier_.push_back(expj(w * e.delay_s));
    }

    const double gcomb = db2amp(-s.noise.combiner_loss_db(K_, M_) - s.noise.estimate_path_loss_db);
    gx_ = db2amp(s.noise.x_gain_db);
    gz_ = db2amp(s.noise.z_gain_db);
    za_ = s.z_dc.alpha();
    zb_ = s.z_dc.beta();
    for (int k = 0; k < K_; ++k)
      for (int m = 0; m < M_; ++m) {
        const int i = k * M_ + m;
        const cplx sk = s.bank.gain(k, m) * expj(w * s.layout.tap_delays_s[k] + s.bank.theta(k, m));
        shift_.push_back(sk);
        est_coef_.push_back(gcomb * sk);
        const cplx rot = expj(s.x_dc[i].delta_deg * kDeg);
        xa_.push_back(s.x_dc[i].alpha());
        xb_.push_back(s.x_dc[i].beta());
        c1_.push_back(gx_ * std::conj(s.x_dc[i].alpha() * sk) * rot);
        c2_.push_back(gx_ * std::conj(s.x_dc[i].beta() * std::conj(sk)) * rot);
        delta_rot_.push_back(rot);
      }

    const NoiseBudget& nb = s.noise;
    const double kt = dbm2mw(nb.thermal_dbm_hz);
    const double fnf = db2lin(nb.downconverter_nf_db);
    var_tx_bin_ = nb.on(nb.tx_noise) ? dbm2mw(nb.tx_noise_dbm_hz - nb.tx_power_dbm) * fs_ / nu_ : 0.0;
    var_rx_ = nb.on(nb.rx_noise) ? kt * fs_ : 0.0;
    var_zdc_ = nb.on(nb.downconverter_noise) ? kt * (fnf - 1.0) * fs_ : 0.0;
    var_xdc_ = nb.on(nb.downconverter_noise) ? kt * (fnf - 1.0) * fs_ * gx_ * gx_ : 0.0;
    const double bb = nb.on(nb.baseband_noise) ? kt * db2lin(nb.baseband_excess_noise_db) * fs_ / 2.0 : 0.0;
    var_pre_ = bb;
    var_post_ = bb / dbm2mw(nb.weight_fullscale_dbm);

    pn_sigma_z_ = s.z_dc.phase_noise_rms_deg * kDeg;
    for (const auto& d : s.x_dc) pn_sigma_x_.push_back(d.phase_noise_rms_deg * kDeg);
    common_osc_ = s.z_dc.common_oscillator;
    phase_noise_ = pn_sigma_z_ > 0;
    for (double v : pn_sigma_x_) phase_noise_ = phase_noise_ || v > 0;

    unlimited_ = s.atten.unlimited;
    wmin_ = s.atten.w_min();
    wmax_ = s.atten.w_max();
    v_.assign(KM_, s.atten.unlimited ? 0.0 : s.atten.w_min());
    w_applied_.assign(KM_, 0.0);
    C_.assign(K_, cplx{});
    X_.assign(K_, cvec(ns_));
    y_.resize(ns_);
    est_.resize(ns_);
    znoisy_.resize(ns_);
    spec_.resize(nu_);
    tmp_.resize(nu_);
    tmp2_.resize(nu_);
    S1_.assign(K_, cplx{});
    S2_.assign(K_, cplx{});
    sd_post_ = std::sqrt(var_post_ / s.adapt.update_block);
    deshift_.resize(nu_);
    for (int n = 0; n < nu_; ++n) deshift_[n] = expj(-2 * kPi * c_.bin_offset() * n / nu_);
    refresh_estimate(false);
  }

  CancellerTrace run() {
    CancellerTrace tr;
    const auto& ad = s_.adapt;
    tr.echo_power_dbm = echo_power_dbm(0);
    const double diverge = dbm2mw(tr.echo_power_dbm + ad.divergence_margin_db);
    std::vector<double> psd_z(nu_, 0.0), psd_r(nu_, 0.0);
    int spec_count = 0;
    bool digital_on = false;
    long analog_end = ad.n_symbols;
    for (long i = 0; i < ad.n_symbols; ++i) {
      prepare_symbol(i);
      const double mu_s = ad.mu_at(i) / ns_ / (gx_ * gz_);
      if (phase_noise_) sample_loop<true>(mu_s);
      else sample_loop<false>(mu_s);
      const double p = residual_mw();
      if (!(p < diverge)) throw DivergenceError("residual exceeded echo power by " + std::to_string(ad.divergence_margin_db) + " dB at symbol " + std::to_string(i));
      tr.residual_dbm.push_back(mw2dbm(p));
      if (i % ad.trace_every == 0 || i + 1 == ad.n_symbols) {
        snapshot_weights();
        tr.weight_symbol.push_back(i);
        tr.weights.push_back(w_applied_);
      }
      if (i >= ad.n_symbols - ad.spectrum_symbols) {
        accumulate_psd(psd_z, psd_r);
        ++spec_count;
      }
      if (ad.digital && p + zt_noise_inband() < dbm2mw(ad.digital_threshold_dbm)) {
        digital_on = true;
        analog_end = i + 1;
        break;
      }
    }
    const long n_an = static_cast<long>(tr.residual_dbm.size());
    const long from = std::max<long>(0, n_an - ad.final_window);
    double acc = 0.0;
    for (long i = from; i < n_an; ++i) acc += dbm2mw(tr.residual_dbm[i]);
    tr.final_residual_dbm = mw2dbm(acc / static_cast<double>(n_an - from));
    tr.suppression_db = tr.echo_power_dbm - tr.final_residual_dbm;

    if (spec_count) finish_spectrum(tr, psd_z, psd_r, spec_count);
    if (digital_on) run_digital(tr, analog_end);
    return tr;
  }

 private:
  // in-band noise a symbol brings at z, used for the enable decision
  double zt_noise_inband() const { return (var_rx_ + var_zdc_) / fs_ * c_.occupied_bandwidth(); }

  double echo_power_dbm(long sym) const {
    // tone power of the echo, in band
    double p = 0.0;
    for (int b = 0; b < nu_; ++b) {
      if (!active_[b]) continue;
      cplx h{};
      for (std::size_t e = 0; e < echo_ramp_.size(); ++e) h += s_.echo.gain(e, sym) * echo_carrier_[e] * echo_ramp_[e][b];
      p += std::norm(h);
    }
    return mw2dbm(p * tone_amp_ * tone_amp_);
  }

  void prepare_symbol(long i) {
    const cvec a = qpsk_symbol(c_, s_.seed, static_cast<std::uint64_t>(i));
    std::fill(spec_.begin(), spec_.end(), cplx{});
    for (int k = 0; k < c_.n_active_subcarriers; ++k) spec_[wrap_bin(c_.active_bin(k), nu_)] = tone_amp_ * a[k];
    // the renderer sums bins, so a bin variance v gives nu*v per sample
    if (var_tx_bin_ > 0)
      for (int b = 0; b < nu_; ++b) spec_[b] += rng_.cnormal(var_tx_bin_);
    if (s_.tx.enabled) apply_tx_iq();
    for (int k = 0; k < K_; ++k) {
      for (int b = 0; b < nu_; ++b) tmp_[b] = spec_[b] * tap_ramp_[k][b];
      render_.render(tmp_, X_[k].data());
    }
    std::fill(tmp_.begin(), tmp_.end(), cplx{});
    for (std::size_t e = 0; e < echo_ramp_.size(); ++e) {
      const cplx g = s_.echo.gain(e, i) * echo_carrier_[e];
      for (int b = 0; b < nu_; ++b) tmp_[b] += spec_[b] * g * echo_ramp_[e][b];
    }
    render_.render(tmp_, y_.data());
  }

  void apply_tx_iq() {
    DownconverterModel t;
    t.gain_q_db = s_.tx.gain_q_db;
    t.phase_q_deg = s_.tx.phase_q_deg;
    const cplx a = t.alpha(), b = t.beta();
    const int shift = c_.bin_offset() != 0.0 ? 1 : 0;
    for (int bi = 0; bi < nu_; ++bi) {
      const int g = bi < nu_ / 2 ? bi : bi - nu_;
      tmp2_[bi] = a * spec_[bi] + b * std::conj(spec_[wrap_bin(-g - shift, nu_)]);
    }
    spec_.swap(tmp2_);
  }

  void refresh_estimate(bool with_noise) {
    for (int k = 0; k < K_; ++k) C_[k] = {};
    const bool noisy = with_noise && var_post_ > 0 && !frozen_;
    for (int i = 0; i < KM_; ++i) {
      double v = v_[i];
      if (noisy) v += sd_post_ * gauss();
      const double wa = apply(v);
      C_[i / M_] += wa * phase_.phasor(wa) * est_coef_[i];
    }
  }

  double gauss() { return gauss_(rng_); }
  // AttenuatorModel::apply/saturate with the range edges cached
  double saturate(double v) const { return unlimited_ ? v : std::clamp(v, -wmax_, wmax_); }
  double apply(double v) const {
    if (unlimited_) return v;
    const double c = std::clamp(v, -wmax_, wmax_);
    const double mag = std::max(std::abs(c), wmin_);
    return c < 0 ? -mag : mag;
  }

  void snapshot_weights() {
    for (int i = 0; i < KM_; ++i) w_applied_[i] = apply(v_[i]);
  }

  template <bool PN>
  void sample_loop(double mu_s) {
    const int L = s_.adapt.update_block;
    const double sd_rx = std::sqrt(var_rx_ / 2), sd_zdc = std::sqrt(var_zdc_ / 2);
    const bool rxn = var_rx_ > 0, zdn = var_zdc_ > 0;
    const bool any_noise = var_xdc_ > 0 || var_pre_ > 0 || var_post_ > 0;
    int t = 0;
    while (t < ns_) {
      const int end = std::min(ns_, t + L);
      const int len = end - t;
      double ez = 0.0;
      if constexpr (!PN) {
        for (int k = 0; k < K_; ++k) S1_[k] = S2_[k] = {};
      } else {
        pn_acc_.assign(KM_, 0.0);
      }
      for (; t < end; ++t) {
        cplx e{};
        for (int k = 0; k < K_; ++k) e += C_[k] * X_[k][t];
        est_[t] = e;
        cplx z = y_[t] - e;
        if (rxn) z += cplx{sd_rx * gauss(), sd_rx * gauss()};
        znoisy_[t] = z;
        cplx zt;
        double pz = 0.0;
        if constexpr (PN) {
          pz = pn_sigma_z_ * gauss();
          const cplx u = expj(-pz);
          zt = gz_ * (za_ * z * u + zb_ * std::conj(z * u));
        } else {
          zt = gz_ * (za_ * z + zb_ * std::conj(z));
        }
        if (zdn) zt += gz_ * cplx{sd_zdc * gauss(), sd_zdc * gauss()};
        ez += std::norm(zt);
        if constexpr (PN) {
          for (int i = 0; i < KM_; ++i) {
            const double px = common_osc_ ? pz : pn_sigma_x_[i] * gauss();
            const cplx xs = shift_[i] * X_[i / M_][t] * expj(-px);
            const cplx xt = gx_ * (xa_[i] * xs + xb_[i] * std::conj(xs));
            pn_acc_[i] += (std::conj(xt) * zt * delta_rot_[i]).real();
          }
        } else {
          for (int k = 0; k < K_; ++k) {
            S1_[k] += std::conj(X_[k][t]) * zt;
            S2_[k] += X_[k][t] * zt;
          }
        }
      }
      if (frozen_) continue;
      // x-downconverter and pre-integrator noise are independent, so one draw carries both
      const double sd_d = std::sqrt(var_pre_ * len + var_xdc_ / 2 * ez);
      for (int i = 0; i < KM_; ++i) {
        double d;
        if constexpr (PN) d = pn_acc_[i];
        else {
          const int k = i / M_;
          d = (c1_[i] * S1_[k] + c2_[i] * S2_[k]).real();
        }
        if (any_noise && sd_d > 0) d += sd_d * gauss();
        v_[i] = saturate(v_[i] + mu_s * d);
      }
      refresh_estimate(true);
    }
  }

  /// in-band power of the echo residual y - e of the current symbol
  double residual_mw() {
    for (int n = 0; n < nu_; ++n) tmp_[n] = (y_[ncp_ + n] - est_[ncp_ + n]) * deshift_[n];
    fwd_.forward(tmp_.data(), tmp2_.data());
    double p = 0.0;
    for (int b = 0; b < nu_; ++b)
      if (active_[b]) p += std::norm(tmp2_[b]);
    return p / (double(nu_) * nu_);
  }

  void accumulate_psd(std::vector<double>& pz, std::vector<double>& pr) {
    for (int n = 0; n < nu_; ++n) tmp_[n] = znoisy_[ncp_ + n] * deshift_[n];
    fwd_.forward(tmp_.data(), tmp2_.data());
    for (int b = 0; b < nu_; ++b) pz[b] += std::norm(tmp2_[b]);
    for (int n = 0; n < nu_; ++n) tmp_[n] = (y_[ncp_ + n] - est_[ncp_ + n]) * deshift_[n];
    fwd_.forward(tmp_.data(), tmp2_.data());
    for (int b = 0; b < nu_; ++b) pr[b] += std::norm(tmp2_[b]);
  }

  void finish_spectrum(CancellerTrace& tr, const std::vector<double>& pz, const std::vector<double>& pr, int count) {
    const double df = fs_ / nu_;
    const double norm = 1.0 / (double(nu_) * nu_ * df * count);
    for (int j = 0; j < nu_; ++j) {
      const int b = wrap_bin(j - nu_ / 2, nu_);
      tr.spectrum_freq_hz.push_back(freq_[b]);
      tr.spectrum_z_dbm_hz.push_back(mw2dbm(pz[b] * norm));
      tr.spectrum_residual_dbm_hz.push_back(mw2dbm(pr[b] * norm));
    }
  }

  /// Analog weights frozen without post-integrator noise; per-subcarrier
  /// least-squares channel estimate averaged over the first L symbols.
  void run_digital(CancellerTrace& tr, long start) {
    const auto& ad = s_.adapt;
    tr.digital_start = start;
    frozen_ = true;
    refresh_estimate(false);
    const int na = c_.n_active_subcarriers;
    std::vector<cplx> hsum(na, cplx{});
    int navg = 0;
    double acc = 0.0;
    long counted = 0;
    for (long j = 0; j < ad.digital_symbols; ++j) {
      const long i = start + j;
      prepare_symbol(i);
      sample_loop<false>(0.0);
      const cvec a = qpsk_symbol(c_, s_.seed, static_cast<std::uint64_t>(i));
      for (int n = 0; n < nu_; ++n) tmp_[n] = znoisy_[ncp_ + n] * deshift_[n];
      fwd_.forward(tmp_.data(), tmp2_.data());
      cvec zb(na);
      const double scale = 1.0 / nu_;
      for (int k = 0; k < na; ++k) zb[k] = tmp2_[wrap_bin(c_.active_bin(k), nu_)] * scale;
      if (navg < ad.digital_averaging) {
        for (int k = 0; k < na; ++k) hsum[k] += zb[k] / (tone_amp_ * a[k]);
        ++navg;
      }
      // echo-only residual after subtracting the current estimate
      for (int n = 0; n < nu_; ++n) tmp_[n] = (y_[ncp_ + n] - est_[ncp_ + n]) * deshift_[n];
      fwd_.forward(tmp_.data(), tmp2_.data());
      double p = 0.0;
      for (int k = 0; k < na; ++k) {
        const cplx h = hsum[k] / double(navg);
        const cplx r = tmp2_[wrap_bin(c_.active_bin(k), nu_)] * scale - h * tone_amp_ * a[k];
        p += std::norm(r);
      }
      tr.digital_residual_dbm.push_back(mw2dbm(p));
      if (navg >= ad.digital_averaging) {
        acc += p;
        ++counted;
      }
    }
    tr.digital_final_dbm = counted ? mw2dbm(acc / counted) : tr.digital_residual_dbm.empty() ? 0.0 : tr.digital_residual_dbm.back();
  }

  const CancellerScenario& s_;
  const SignalConfig& c_;
  int K_, M_, KM_, nu_, ncp_, ns_;
  double fs_;
  SymbolRenderer render_;
  const Fft& fwd_;
  Rng rng_;
  boost::random::normal_distribution<double> gauss_;
  bool unlimited_ = false;
  double wmin_ = 0, wmax_ = 0;
  double tone_amp_ = 1.0;
  std::vector<double> freq_;
  std::vector<char> active_;
  std::vector<cvec> tap_ramp_, echo_ramp_;
  cvec echo_carrier_;
  double gx_ = 1, gz_ = 1;
  cplx za_, zb_;
  cvec shift_, est_coef_, xa_, xb_, c1_, c2_, delta_rot_;
  PhaseLawTable phase_{s_.atten};
  double sd_post_ = 0;
  double var_tx_bin_ = 0, var_rx_ = 0, var_zdc_ = 0, var_xdc_ = 0, var_pre_ = 0, var_post_ = 0;
  double pn_sigma_z_ = 0;
  std::vector<double> pn_sigma_x_;
  bool common_osc_ = false, phase_noise_ = false, frozen_ = false;
  std::vector<double> v_, w_applied_, pn_acc_;
  cvec C_;
  std::vector<cvec> X_;
  cvec y_, est_, znoisy_, spec_, tmp_, tmp2_, S1_, S2_, deshift_;
};

}  // namespace detail

inline CancellerTrace run_adaptation(const CancellerScenario& s) {
  detail::CancellerEngine eng(s);
  return eng.run();
}

inline CancellerTrace run_with_phase_noise(CancellerScenario s, double sigma_deg, bool independent_oscillators) {
  for (auto& d : s.x_dc) {
    d.phase_noise_rms_deg = sigma_deg;
    d.common_oscillator = !independent_oscillators;
  }
  s.z_dc.phase_noise_rms_deg = sigma_deg;
  s.z_dc.common_oscillator = !independent_oscillators;
  return run_adaptation(s);
}

inline CancellerTrace run_time_varying(const CancellerScenario& s) {
  if (!s.echo.profile.empty() && static_cast<long>(s.echo.profile.length()) < s.adapt.n_symbols)
    throw ConfigError("time profile shorter than the run");
  return run_adaptation(s);
}

/// Time profile shaped like the tracking experiment: the first echo
/// swings over 4.7 dB, the second grows by 14 dB across the run, both
/// with slow phase drift.
inline TimeProfile tracking_profile(long n_symbols, std::size_t n_echoes = 2) {
  TimeProfile p;
  p.gain_db.resize(n_symbols);
  p.phase_rad.resize(n_symbols);
  for (long i = 0; i < n_symbols; ++i) {
    const double u = static_cast<double>(i) / std::max<long>(1, n_symbols - 1);
    std::vector<double> g(n_echoes, 0.0), ph(n_echoes, 0.0);
    g[0] = 2.35 * std::sin(2 * kPi * 1.5 * u);
    ph[0] = 0.4 * std::sin(2 * kPi * u);
    if (n_echoes > 1) {
      g[1] = 14.0 * u;
      ph[1] = 2 * kPi * 0.5 * u;
    }
    p.gain_db[i] = g;
    p.phase_rad[i] = ph;
  }
  return p;
}

/// Per-subcarrier least-squares echo cancellation on symbol-domain data.
/// z[i][k] received tone k of symbol i, x[i][k] known transmit tone.
/// The channel estimate is averaged over the first `averaging_len`
/// symbols and subtracted from every symbol. Zero-power tones are left
/// untouched and reported in `skipped`.
struct DigitalResult {
  std::vector<cvec> residual;
  std::vector<int> skipped;
};

inline DigitalResult digital_cancel(const std::vector<cvec>& z, const std::vector<cvec>& x, int averaging_len) {
  if (averaging_len < 1) throw ConfigError("averaging_len must be >= 1");
  if (z.size() != x.size()) throw ConfigError("z and x must have the same symbol count");
  DigitalResult out;
  if (z.empty()) return out;
  const std::size_t nk = z.front().size();
  cvec h(nk, cplx{});
  std::vector<int> cnt(nk, 0);
  const std::size_t L = std::min<std::size_t>(averaging_len, z.size());
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t k = 0; k < nk; ++k)
      if (std::norm(x[i][k]) > 0) {
        h[k] += z[i][k] / x[i][k];
        ++cnt[k];
      }
  for (std::size_t k = 0; k < nk; ++k) {
    if (cnt[k]) h[k] /= double(cnt[k]);
    else out.skipped.push_back(static_cast<int>(k));
  }
  out.residual.resize(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    out.residual[i].resize(nk);
    for (std::size_t k = 0; k < nk; ++k) out.residual[i][k] = z[i][k] - h[k] * x[i][k];
  }
  return out;
}

}  // namespace str
