#pragma once

#include <algorithm>
#include <optional>

#include "str/common.hpp"
#include "str/fft.hpp"

namespace str {

enum class Constellation { QPSK };

/// OFDM excitation parameters. The symbol grid is fft_size bins at the
/// channel bandwidth, so subcarrier spacing is bandwidth/fft_size and the
/// occupied band is n_active * spacing, centred on the carrier.
struct SignalConfig {
  double bandwidth_hz = 10e6;
  double carrier_hz = 2e9;
  int oversampling = 40;
  int n_active_subcarriers = 102;
  int fft_size = 128;
  double guard_fraction = 0.125;
  Constellation constellation = Constellation::QPSK;

  void validate() const {
    if (!(bandwidth_hz > 0)) throw ConfigError("bandwidth_hz must be positive");
    if (oversampling < 16) throw ConfigError("oversampling must be >= 16");
    if (fft_size < 2) throw ConfigError("fft_size must be >= 2");
    if (n_active_subcarriers < 1 || n_active_subcarriers >= fft_size)
      throw ConfigError("n_active_subcarriers must be in [1, fft_size)");
    if (!(guard_fraction >= 0 && guard_fraction < 0.5))
      throw ConfigError("guard_fraction must be in [0, 0.5)");
  }

  double sample_rate() const { return bandwidth_hz * oversampling; }
  double spacing() const { return bandwidth_hz / fft_size; }
  int useful_len() const { return fft_size * oversampling; }
  int cp_len() const { return static_cast<int>(std::lround(guard_fraction * useful_len())); }
  int symbol_len() const { return useful_len() + cp_len(); }
  double symbol_duration() const { return symbol_len() / sample_rate(); }
  double occupied_bandwidth() const { return n_active_subcarriers * spacing(); }
  /// half-bin offset that centres an even number of active tones
  double bin_offset() const { return n_active_subcarriers % 2 == 0 ? 0.5 : 0.0; }
  /// integer grid index of active subcarrier k
  int active_bin(int k) const { return k - n_active_subcarriers / 2; }
  /// baseband frequency of integer grid index b
  double bin_freq(int b) const { return (b + bin_offset()) * spacing(); }
};

/// Oversampled complex baseband stream; unit mean-square is 0 dBm.
struct Signal {
  cvec samples;
  double sample_rate_hz = 1.0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration() const { return samples.size() / sample_rate_hz; }
};

struct Band {
  double lo_hz;
  double hi_hz;
};

/// Renders one OFDM symbol (cyclic prefix first) from its tone
/// coefficients on the useful_len()-point grid. Sample n is at time
/// (n - cp_len)/fs relative to the start of the useful part, so the
/// prefix is the continuous waveform evaluated at negative time.
class SymbolRenderer {
 public:
  explicit SymbolRenderer(const SignalConfig& c)
      : nu_(c.useful_len()), ncp_(c.cp_len()), fft_(Fft::of(nu_)), tmp_(nu_), rot_(c.symbol_len()) {
    const double s = c.bin_offset();
    for (int n = 0; n < c.symbol_len(); ++n) rot_[n] = expj(2 * kPi * s * (n - ncp_) / nu_);
    shifted_ = s != 0.0;
  }

  int useful_len() const { return nu_; }
  int symbol_len() const { return nu_ + ncp_; }

  /// bins[b mod nu] holds the coefficient of grid index b
  void render(const cvec& bins, cplx* out) {
    fft_.inverse(bins.data(), tmp_.data());
    for (int n = 0; n < nu_ + ncp_; ++n) {
      int m = n - ncp_;
      if (m < 0) m += nu_;
      out[n] = shifted_ ? tmp_[m] * rot_[n] : tmp_[m];
    }
  }

 private:
  int nu_, ncp_;
  const Fft& fft_;
  cvec tmp_, rot_;
  bool shifted_ = false;
};

inline int wrap_bin(int b, int n) {
  b %= n;
  return b < 0 ? b + n : b;
}

/// QPSK symbols of OFDM symbol `index`, unit modulus. Each symbol has its
/// own derived stream so any symbol can be regenerated independently.
inline cvec qpsk_symbol(const SignalConfig& c, std::uint64_t seed, std::uint64_t index) {
  Rng rng(Rng::derive(seed, index));
  cvec a(c.n_active_subcarriers);
  const double h = std::sqrt(0.5);
  for (auto& v : a) {
    const std::uint64_t bits = rng.next() >> 62;
    v = {(bits & 1) ? h : -h, (bits & 2) ? h : -h};
  }
  return a;
}

/// Tone amplitude giving mean power `power_dbm`.
inline double tone_amplitude(const SignalConfig& c, double power_dbm) {
  return std::sqrt(dbm2mw(power_dbm) / c.n_active_subcarriers);
}

inline Signal generate_ofdm(const SignalConfig& c, int n_symbols, std::uint64_t seed,
                            double power_dbm = 0.0) {
  c.validate();
  if (n_symbols < 0) throw ConfigError("n_symbols must be non-negative");
  Signal out;
  out.sample_rate_hz = c.sample_rate();
  const int nu = c.useful_len();
  const int ns = c.symbol_len();
  out.samples.resize(static_cast<std::size_t>(ns) * n_symbols);
  SymbolRenderer r(c);
  const double amp = tone_amplitude(c, power_dbm);
  cvec bins(nu);
  for (int i = 0; i < n_symbols; ++i) {
    const cvec a = qpsk_symbol(c, seed, i);
    std::fill(bins.begin(), bins.end(), cplx{});
    for (int k = 0; k < c.n_active_subcarriers; ++k) bins[wrap_bin(c.active_bin(k), nu)] = amp * a[k];
    r.render(bins, out.samples.data() + static_cast<std::size_t>(i) * ns);
  }
  return out;
}

/// Kaiser-windowed sinc fractional-delay interpolator.
class FractionalDelay {
 public:
  static constexpr int kTaps = 64;
  static constexpr double kBeta = 9.0;

  /// coefficients h[i], i = 0..kTaps-1, applied as y[n] = sum h[i] x[n - D - (i - kTaps/2 + 1)]
  static std::vector<double> taps(double frac) {
    std::vector<double> h(kTaps);
    const double half = kTaps / 2.0;
    const double i0b = std::cyl_bessel_i(0.0, kBeta);
    for (int i = 0; i < kTaps; ++i) {
      const double t = (i - kTaps / 2 + 1) - frac;
      const double r = t / half;
      const double w = std::abs(r) < 1.0 ? std::cyl_bessel_i(0.0, kBeta * std::sqrt(1.0 - r * r)) / i0b : 0.0;
      h[i] = sinc(t) * w;
    }
    return h;
  }
};

/// X(t - tau) e^{j omega tau}, band-limited interpolation of the stream.
inline Signal delay_signal(const Signal& sig, double tau_s, double carrier_hz) {
  if (tau_s < 0) throw DomainError("delay must be non-negative");
  if (tau_s > sig.duration()) throw DomainError("delay exceeds signal duration");
  Signal out;
  out.sample_rate_hz = sig.sample_rate_hz;
  const std::size_t n = sig.size();
  out.samples.assign(n, cplx{});
  const cplx rot = expj(2 * kPi * carrier_hz * tau_s);
  const double d = tau_s * sig.sample_rate_hz;
  const long di = static_cast<long>(std::floor(d));
  const double frac = d - static_cast<double>(di);
  const auto& x = sig.samples;
  if (frac < 1e-12) {
    for (std::size_t i = static_cast<std::size_t>(di); i < n; ++i) out.samples[i] = x[i - di] * rot;
    return out;
  }
  const auto h = FractionalDelay::taps(frac);
  constexpr int T = FractionalDelay::kTaps;
  for (long i = 0; i < static_cast<long>(n); ++i) {
    cplx acc{};
    for (int t = 0; t < T; ++t) {
      const long m = i - di - (t - T / 2 + 1);
      if (m >= 0 && m < static_cast<long>(n)) acc += h[t] * x[m];
    }
    out.samples[i] = acc * rot;
  }
  return out;
}

/// Adds circular white Gaussian noise of the given density over the whole
/// simulated bandwidth (the sample rate).
inline Signal add_noise(const Signal& sig, double psd_dbm_hz, std::uint64_t seed) {
  Signal out = sig;
  if (std::isinf(psd_dbm_hz) && psd_dbm_hz < 0) return out;
  const double var = dbm2mw(psd_dbm_hz) * sig.sample_rate_hz;
  Rng rng(seed);
  for (auto& v : out.samples) v += rng.cnormal(var);
  return out;
}

/// Mean-square power in dBm. With a band, integrates a Hann-windowed
/// Welch periodogram (50% overlap) over [lo, hi].
inline double measure_power_dbm(const Signal& sig, std::optional<Band> band = std::nullopt) {
  if (sig.empty()) throw DomainError("empty signal");
  if (!band) return mw2dbm(mean_square(sig.samples));
  const int n = static_cast<int>(sig.size());
  const int seg = std::min(n, 8192);
  const int hop = std::max(1, seg / 2);
  std::vector<double> w(seg);
  double w2 = 0.0;
  for (int i = 0; i < seg; ++i) {
    w[i] = seg > 1 ? 0.5 - 0.5 * std::cos(2 * kPi * (i + 0.5) / seg) : 1.0;
    w2 += w[i] * w[i];
  }
  const Fft& f = Fft::of(seg);
  cvec in(seg), out(seg);
  std::vector<double> acc(seg, 0.0);
  int count = 0;
  for (int start = 0; start + seg <= n; start += hop) {
    for (int i = 0; i < seg; ++i) in[i] = sig.samples[start + i] * w[i];
    f.forward(in.data(), out.data());
    for (int i = 0; i < seg; ++i) acc[i] += std::norm(out[i]);
    ++count;
  }
  double p = 0.0;
  for (int i = 0; i < seg; ++i) {
    const int b = i < (seg + 1) / 2 ? i : i - seg;
    const double fr = b * sig.sample_rate_hz / seg;
    if (fr >= band->lo_hz && fr <= band->hi_hz) p += acc[i];
  }
  return mw2dbm(p / (count * w2 * seg));
}

}  // namespace str
