#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <array>

#include "str/common.hpp"

namespace str {

// ---------------------------------------------------------------------
// Deployment

enum class BsUeModel { Macro, Pico };

struct CellDeployment {
  int n_sites = 19;
  int sectors_per_site = 3;
  double isd_m = 500;
  double bs_height_m = 25;
  double ue_height_m = 1.5;
  double bs_tx_dbm = 46;
  double ue_tx_dbm = 23;
  double bs_ant_gain_dbi = 14;
  double nf_bs_db = 5;
  double nf_ue_db = 9;
  double bandwidth_hz = 10e6;
  double carrier_hz = 2e9;
  double noise_psd_dbm_hz = kThermalDbmHz;
  double min_ue_distance_m = 35;
  double shadow_std_db = 8;
  double shadow_site_corr = 0.5;
  double penetration_db = 20;
  double ue_ue_penetration_prob = 0.5;
  double urban_correction_db = 6.8;
  BsUeModel bs_ue_model = BsUeModel::Macro;
  bool wraparound = true;
  /// keep a drop only if its own sector is the strongest server
  bool best_server = true;

  double cell_radius_m() const { return isd_m / std::sqrt(3.0); }
  double wavelength_m() const { return 299792458.0 / carrier_hz; }
  int n_sectors() const { return n_sites * sectors_per_site; }
  double noise_dbm(double nf_db) const { return noise_psd_dbm_hz + 10 * std::log10(bandwidth_hz) + nf_db; }

  static CellDeployment large() { return {}; }
  static CellDeployment small() {
    CellDeployment d;
    d.isd_m = 122;
    d.bs_height_m = 7.25;
    d.bs_tx_dbm = 23;
    d.ue_tx_dbm = 0;
    d.min_ue_distance_m = 10;
    return d;
  }

  void validate() const {
    if (n_sites != 1 && n_sites != 7 && n_sites != 19) throw ConfigError("n_sites must be 1, 7 or 19");
    if (sectors_per_site != 3 && sectors_per_site != 1) throw ConfigError("sectors_per_site must be 1 or 3");
    if (!(isd_m > 0 && bs_height_m > 0 && ue_height_m > 0)) throw ConfigError("geometry must be positive");
    if (!(min_ue_distance_m >= 0 && min_ue_distance_m < 0.5 * isd_m)) throw ConfigError("min_ue_distance_m out of range");
    if (!(shadow_std_db >= 0) || !(shadow_site_corr >= 0 && shadow_site_corr <= 1))
      throw ConfigError("shadowing parameters out of range");
    if (!(ue_ue_penetration_prob >= 0 && ue_ue_penetration_prob <= 1)) throw ConfigError("penetration probability out of range");
  }
};

// ---------------------------------------------------------------------
// Path loss

inline constexpr double kCoSiteLossDb = 40.0;

/// BS-UE, distance in metres, including building penetration.
inline double pathloss_bs_ue(double d_m, const CellDeployment& dep = {}) {
  if (!(d_m > 0)) throw DomainError("distance must be positive");
  if (d_m < 1.0) return 40.0;
  const double dk = d_m / 1000.0;
  const double base = dep.bs_ue_model == BsUeModel::Macro ? 128.1 + 37.6 * std::log10(dk) : 140.7 + 36.7 * std::log10(dk);
  return base + dep.penetration_db;
}

inline double free_space_loss_db(double d_m, double wavelength_m) { return 20 * std::log10(4 * kPi * d_m / wavelength_m); }

/// BS-BS: free space to the 4 h1 h2 / lambda breakpoint, 40 dB/decade after.
inline double pathloss_bs_bs(double d_m, const CellDeployment& dep = {}) {
  if (!(d_m > 0)) throw DomainError("distance must be positive");
  if (d_m < 1.0) return 40.0;
  const double lam = dep.wavelength_m();
  const double bp = 4 * dep.bs_height_m * dep.bs_height_m / lam;
  if (d_m <= bp) return free_space_loss_db(d_m, lam);
  return free_space_loss_db(bp, lam) + 40 * std::log10(d_m / bp);
}

/// P.1411 site-general loss between two below-rooftop terminals, for
/// location percentage p in (0, 1). No penetration term.
inline double pathloss_ue_ue(double d_m, double p, const CellDeployment& dep = {}) {
  if (!(d_m > 0)) throw DomainError("distance must be positive");
  if (!(p > 0 && p < 1)) throw DomainError("location percentage must be in (0, 1)");
  if (d_m < 1.0) return 40.0;
  const double f_mhz = dep.carrier_hz / 1e6;
  constexpr double sigma = 7.0, w = 20.0;
  const double lp = std::log10(p);
  const double d_los = p < 0.45 ? 212 * lp * lp - 64 * lp : 79.2 - 70 * p;
  auto los = [&](double d) {
    return 32.45 + 20 * std::log10(f_mhz) + 20 * std::log10(d / 1000.0) +
           1.5624 * sigma * (std::sqrt(-2 * std::log(1 - p)) - 1.1774);
  };
  const double q = boost::math::quantile(boost::math::normal(), p);
  auto nlos = [&](double d) {
    return 9.5 + 45 * std::log10(f_mhz) + 40 * std::log10(d / 1000.0) + dep.urban_correction_db + sigma * q;
  };
  if (d_m < d_los) return los(d_m);
  if (d_m > d_los + w) return nlos(d_m);
  const double a = los(d_los), b = nlos(d_los + w);
  return a + (b - a) * (d_m - d_los) / w;
}

// ---------------------------------------------------------------------
// Antennas. theta from zenith (90 deg = horizon, larger = downward),
// phi local azimuth with boresight at 90 deg and the front half-space
// in [0, 180].

inline double element_pattern(double theta, double phi, double backlobe_db = 25.0) {
  const double a = sinc(std::cos(theta) / 2) * sinc(std::sin(theta) * std::cos(phi) / 2);
  double g = a * a;
  const double s = std::remainder(phi, 2 * kPi);
  if (s < 0) g *= db2lin(-backlobe_db);
  return g;
}

inline cvec steering(int N, double theta) {
  cvec a(N);
  for (int n = 0; n < N; ++n) a[n] = expj(n * kPi * std::cos(theta));
  return a;
}

/// |1/(MN) sum_m sum_n w_mn e^{j m pi sin(theta) cos(phi)} e^{j n pi cos(theta)}|^2
/// for separable weights with unit horizontal weights.
inline double array_factor(const cvec& wv, int M, double theta, double phi) {
  const int N = static_cast<int>(wv.size());
  cplx v{}, h{};
  for (int n = 0; n < N; ++n) v += wv[n] * expj(n * kPi * std::cos(theta));
  for (int m = 0; m < M; ++m) h += expj(m * kPi * std::sin(theta) * std::cos(phi));
  return std::norm(h * v) / (double(M) * M * N * N);
}

/// Full weight-matrix form of the same sum, for non-separable weights.
inline double array_factor(const Eigen::MatrixXcd& w, double theta, double phi) {
  const int M = static_cast<int>(w.rows()), N = static_cast<int>(w.cols());
  cplx s{};
  for (int m = 0; m < M; ++m)
    for (int n = 0; n < N; ++n)
      s += w(m, n) * expj(m * kPi * std::sin(theta) * std::cos(phi)) * expj(n * kPi * std::cos(theta));
  return std::norm(s) / (double(M) * M * N * N);
}

/// Element times array factor, scaled by M N so that uniform weights
/// keep the radiated energy of one element.
inline double array_pattern(const cvec& wv, int M, double theta, double phi, double backlobe_db = 25.0) {
  return M * double(wv.size()) * array_factor(wv, M, theta, phi) * element_pattern(theta, phi, backlobe_db);
}

inline cvec tilt_weights(int N, double tilt_deg) {
  const double th = (90.0 + tilt_deg) * kDeg;
  cvec w(N);
  for (int n = 0; n < N; ++n) w[n] = expj(-n * kPi * std::cos(th));
  return w;
}

struct NullFormingResult {
  cvec weights;
  double epsilon = 0;
  double depth_db = 0;      // worst window gain relative to the unnulled peak
  double edge_loss_db = 0;  // gain change toward the cell edge
};

inline std::vector<double> null_window(double lo_deg, double hi_deg, int n) {
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = (n == 1 ? 0.5 * (lo_deg + hi_deg) : lo_deg + (hi_deg - lo_deg) * i / (n - 1)) * kDeg;
  return v;
}

/// w = a^H(theta0) (a a^H + sum_k a_k a_k^H + eps I)^-1, scaled so that
/// max |w_n| = 1.
inline cvec null_forming_weights(double theta0, const std::vector<double>& nulls, double epsilon, int N) {
  if (N < 1) throw ConfigError("N must be >= 1");
  if (!(epsilon >= 0)) throw ConfigError("epsilon must be non-negative");
  using Vec = Eigen::VectorXcd;
  auto vec = [&](double th) {
    Vec a(N);
    for (int n = 0; n < N; ++n) a[n] = expj(n * kPi * std::cos(th));
    return a;
  };
  const Vec a0 = vec(theta0);
  Eigen::MatrixXcd R = a0 * a0.adjoint() + epsilon * Eigen::MatrixXcd::Identity(N, N);
  for (double t : nulls) {
    const Vec a = vec(t);
    R += a * a.adjoint();
  }
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(R);
  const auto& sv = svd.singularValues();
  if (epsilon == 0 && !(sv(sv.size() - 1) > 1e-13 * sv(0))) throw DomainError("null constraints make the system singular");
  // row vector a0^H R^-1, R Hermitian
  const Vec x = R.ldlt().solve(a0);
  cvec w(N);
  double mx = 0;
  for (int n = 0; n < N; ++n) {
    w[n] = std::conj(x[n]);
    mx = std::max(mx, std::abs(w[n]));
  }
  if (!(mx > 0)) throw DomainError("null forming produced zero weights");
  for (auto& v : w) v /= mx;
  return w;
}

inline double vertical_power(const cvec& x, double th) {
  cplx s{};
  for (std::size_t n = 0; n < x.size(); ++n) s += x[n] * expj(n * kPi * std::cos(th));
  return std::norm(s);
}

inline double vertical_peak(const cvec& x) {
  double peak = 0;
  for (int i = 0; i <= 1800; ++i) peak = std::max(peak, vertical_power(x, i * kPi / 1800));
  return peak;
}

inline NullFormingResult evaluate_null_forming(int N, double tilt_deg, double epsilon, const std::vector<double>& nulls,
                                               double edge_theta) {
  if (nulls.empty()) throw ConfigError("null window is empty");
  NullFormingResult r;
  r.epsilon = epsilon;
  const double th0 = (90.0 + tilt_deg) * kDeg;
  r.weights = null_forming_weights(th0, nulls, epsilon, N);
  const cvec ref = tilt_weights(N, tilt_deg);
  const double peak = vertical_peak(ref);
  double worst = 0;
  // dense check across the window, not only the constraint points
  const double lo = *std::min_element(nulls.begin(), nulls.end());
  const double hi = *std::max_element(nulls.begin(), nulls.end());
  for (int i = 0; i <= 200; ++i) worst = std::max(worst, vertical_power(r.weights, lo + (hi - lo) * i / 200));
  r.depth_db = lin2db(worst / peak);
  r.edge_loss_db = lin2db(vertical_power(r.weights, edge_theta) / vertical_power(ref, edge_theta));
  return r;
}

/// Epsilon on a log grid that keeps the most gain toward the cell edge
/// while the whole window stays at or below target_db.
inline NullFormingResult tune_null_forming(int N, double tilt_deg, double target_db, const std::vector<double>& nulls,
                                           double edge_theta) {
  NullFormingResult best;
  bool found = false;
  double deepest = 0;
  for (int k = 0; k <= 280; ++k) {
    const double eps = std::pow(10.0, -10.0 + 0.05 * k);
    NullFormingResult r = evaluate_null_forming(N, tilt_deg, eps, nulls, edge_theta);
    deepest = k == 0 ? r.depth_db : std::min(deepest, r.depth_db);
    if (r.depth_db <= target_db && (!found || r.edge_loss_db > best.edge_loss_db)) {
      best = std::move(r);
      found = true;
    }
  }
  if (!found)
    throw DomainError("null depth target " + std::to_string(target_db) + " dB not reachable; best " +
                      std::to_string(deepest) + " dB");
  return best;
}

struct ArrayConfig {
  int m_horizontal = 4;
  int n_vertical = 8;
  double tilt_deg = 15;
  bool null_forming = false;
  double null_lo_deg = 89;
  double null_hi_deg = 91;
  int n_null_points = 21;
  /// 0 tunes epsilon to depth_target_db
  double epsilon = 0;
  /// NaN: derived from the deployment's link budget
  double depth_target_db = std::numeric_limits<double>::quiet_NaN();
  double backlobe_db = 25;

  void validate() const {
    if (m_horizontal < 1 || n_vertical < 1) throw ConfigError("array dimensions must be positive");
    if (!(null_hi_deg > null_lo_deg)) throw ConfigError("null window is empty");
    if (n_null_points < 1) throw ConfigError("n_null_points must be >= 1");
    if (!(epsilon >= 0)) throw ConfigError("epsilon must be non-negative");
  }
};

/// Depth targets from the link budget: the BS-BS coupling at one ISD
/// through two equal nulls must land at the receiver noise floor.
inline double derived_depth_target_db(const CellDeployment& d) {
  const double rx = d.bs_tx_dbm + 2 * d.bs_ant_gain_dbi - pathloss_bs_bs(d.isd_m, d);
  return 0.5 * (d.noise_dbm(d.nf_bs_db) - rx);
}

/// Elevation toward the farthest point of a sector from its own site.
inline double cell_edge_theta(const CellDeployment& d) {
  return kPi / 2 + std::atan2(d.bs_height_m - d.ue_height_m, d.cell_radius_m());
}

/// One sector antenna: vertical weights, a gain constant fixed by the
/// reference array, boresight azimuth.
class SectorAntenna {
 public:
  SectorAntenna() = default;
  SectorAntenna(cvec wv, int M, double g0, double backlobe_db) : wv_(std::move(wv)), M_(M), g0_(g0), back_(backlobe_db) {}

  /// linear gain toward (theta, local phi)
  double gain(double theta, double phi) const { return g0_ * array_pattern(wv_, M_, theta, phi, back_); }
  const cvec& weights() const { return wv_; }

 private:
  cvec wv_;
  int M_ = 4;
  double g0_ = 1;
  double back_ = 25;
};

/// Gain constant putting the tilted 8-element peak at the table gain.
inline double antenna_g0(const CellDeployment& d, const ArrayConfig& a) {
  const cvec w = tilt_weights(8, a.tilt_deg);
  double peak = 0;
  for (int i = 0; i <= 3600; ++i) {
    const double th = i * kPi / 3600;
    peak = std::max(peak, array_pattern(w, a.m_horizontal, th, kPi / 2, a.backlobe_db));
  }
  return db2lin(d.bs_ant_gain_dbi) / peak;
}

inline SectorAntenna make_antenna(const CellDeployment& d, const ArrayConfig& a, NullFormingResult* info = nullptr) {
  a.validate();
  cvec w = tilt_weights(a.n_vertical, a.tilt_deg);
  if (a.null_forming) {
    const auto nulls = null_window(a.null_lo_deg, a.null_hi_deg, a.n_null_points);
    const NullFormingResult r = a.epsilon > 0
                                    ? evaluate_null_forming(a.n_vertical, a.tilt_deg, a.epsilon, nulls, cell_edge_theta(d))
                                    : tune_null_forming(a.n_vertical, a.tilt_deg,
                                                        std::isnan(a.depth_target_db) ? derived_depth_target_db(d) : a.depth_target_db,
                                                        nulls, cell_edge_theta(d));
    w = r.weights;
    if (info) *info = r;
  }
  return SectorAntenna(w, a.m_horizontal, antenna_g0(d, a), a.backlobe_db);
}

// ---------------------------------------------------------------------
// Geometry

struct Vec2 {
  double x = 0, y = 0;
};

inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

class HexLayout {
 public:
  explicit HexLayout(const CellDeployment& d) : d_(d) {
    d.validate();
    const double s = d.isd_m;
    a_ = {s * std::cos(kPi / 6), s * std::sin(kPi / 6)};
    b_ = {0, s};
    const int rings = d.n_sites == 1 ? 0 : d.n_sites == 7 ? 1 : 2;
    for (int q = -rings; q <= rings; ++q)
      for (int r = -rings; r <= rings; ++r)
        if (std::abs(q + r) <= rings) sites_.push_back({q * a_.x + r * b_.x, q * a_.y + r * b_.y});
    // the origin first
    std::stable_sort(sites_.begin(), sites_.end(), [](Vec2 u, Vec2 v) { return norm(u) < norm(v) - 1e-9; });
    shifts_.push_back({0, 0});
    if (d.wraparound && d.n_sites > 1) {
      const int i = d.n_sites == 7 ? 2 : 3, j = d.n_sites == 7 ? 1 : 2;
      const Vec2 t{i * a_.x + j * b_.x, i * a_.y + j * b_.y};
      for (int k = 0; k < 6; ++k) {
        const double c = std::cos(k * kPi / 3), sn = std::sin(k * kPi / 3);
        shifts_.push_back({c * t.x - sn * t.y, sn * t.x + c * t.y});
      }
    }
  }

  int n_sites() const { return static_cast<int>(sites_.size()); }
  const Vec2& site(int i) const { return sites_[i]; }
  static double boresight(int sector) { return (30.0 + 120.0 * sector) * kDeg; }

  /// shortest vector from `from` to any image of `to`
  Vec2 wrap(Vec2 from, Vec2 to) const {
    Vec2 best = to - from;
    double bn = norm(best);
    for (std::size_t k = 1; k < shifts_.size(); ++k) {
      const Vec2 v = to + shifts_[k] - from;
      const double n = norm(v);
      if (n < bn - 1e-9) {
        best = v;
        bn = n;
      }
    }
    return best;
  }

  /// true if v (relative to a site) is inside that site's hexagon
  bool in_hexagon(Vec2 v) const {
    const double h = 0.5 * d_.isd_m;
    for (int k = 0; k < 6; ++k) {
      const double ang = kPi / 6 + k * kPi / 3;
      if (v.x * std::cos(ang) + v.y * std::sin(ang) > h) return false;
    }
    return true;
  }

  /// uniform point in the 120 degree wedge of `sector`, relative to its site
  Vec2 drop(int sector, Rng& rng) const {
    const double R = d_.cell_radius_m();
    const double bs = d_.sectors_per_site == 1 ? 0.0 : boresight(sector);
    const double half = d_.sectors_per_site == 1 ? kPi : kPi / 3;
    for (;;) {
      const Vec2 v{rng.uniform(-R, R), rng.uniform(-R, R)};
      const double r = norm(v);
      if (r < d_.min_ue_distance_m || !in_hexagon(v)) continue;
      const double off = std::remainder(std::atan2(v.y, v.x) - bs, 2 * kPi);
      if (std::abs(off) <= half) return v;
    }
  }

  /// number of sites adjacent to site 0
  std::vector<int> first_tier() const {
    std::vector<int> out;
    for (int i = 1; i < n_sites(); ++i)
      if (std::abs(norm(wrap(sites_[0], sites_[i])) - d_.isd_m) < 1e-6 * d_.isd_m) out.push_back(i);
    return out;
  }

 private:
  const CellDeployment& d_;
  Vec2 a_, b_;
  std::vector<Vec2> sites_, shifts_;
};

/// local antenna azimuth of the direction `v` for a sector boresight
inline double local_phi(Vec2 v, double boresight) {
  const double az = std::atan2(v.y, v.x);
  return kPi / 2 - std::remainder(az - boresight, 2 * kPi);
}

// ---------------------------------------------------------------------
// Snapshots

/// Random state of one drop: positions and every per-link draw, so
/// that all modes and antenna options see the same channel.
struct Snapshot {
  int n_sectors = 0;
  std::vector<Vec2> dl_ue, ul_ue;           // absolute positions, one per sector
  std::vector<double> shadow_dl, shadow_ul;  // [ue * n_sites + site], dB
  std::vector<double> fade_bs_dl, fade_bs_ul;  // [sector * S + ue], linear power
  std::vector<double> ue_ue_loss_db;         // [dl ue * S + ul ue], incl. penetration
  std::vector<double> bs_bs_alpha;           // [rx sector * S + tx sector], radians
};

struct LocationRange {
  double lo = 0.25;
  double hi = 0.99;
};

/// Long-term gain (dB) from sector b of site to a UE at pos, with the
/// UE's shadowing toward that site.
inline double long_term_gain_db(const CellDeployment& d, const HexLayout& hex, const SectorAntenna& ant, int b, Vec2 pos,
                                double shadow_db) {
  const int ns = d.sectors_per_site;
  const Vec2 v = hex.wrap(hex.site(b / ns), pos);
  const double r = std::max(norm(v), 1.0), dh = d.bs_height_m - d.ue_height_m;
  const double bore = ns == 1 ? kPi / 2 : HexLayout::boresight(b % ns);
  const double g = ant.gain(kPi / 2 + std::atan2(dh, r), local_phi(v, bore));
  return lin2db(g) - pathloss_bs_ue(std::hypot(r, dh), d) - shadow_db;
}

/// One scheduled UE per sector, serving both directions. A UE is
/// dropped in the sector's wedge and kept only when that sector is its
/// strongest long-term server under `assoc`.
inline Snapshot drop_and_schedule(const CellDeployment& d, const HexLayout& hex, std::uint64_t seed, LocationRange p,
                                  const SectorAntenna& assoc) {
  Rng rng(seed);
  Snapshot s;
  const int ns = d.sectors_per_site, S = hex.n_sites() * ns, nsite = hex.n_sites();
  s.n_sectors = S;
  s.dl_ue.resize(S);
  s.ul_ue.resize(S);
  s.shadow_dl.resize(static_cast<std::size_t>(S) * nsite);
  s.shadow_ul.resize(static_cast<std::size_t>(S) * nsite);
  const double rho = std::sqrt(d.shadow_site_corr), rho2 = std::sqrt(1 - d.shadow_site_corr);
  std::vector<double> sh(nsite);
  for (int dir = 0; dir < 1; ++dir)
    for (int i = 0; i < S; ++i) {
      const Vec2 c = hex.site(i / ns);
      for (int attempt = 0;; ++attempt) {
        const Vec2 pos = c + hex.drop(i % ns, rng);
        const double common = rng.normal();
        for (int x = 0; x < nsite; ++x) sh[x] = d.shadow_std_db * (rho * common + rho2 * rng.normal());
        const double own = long_term_gain_db(d, hex, assoc, i, pos, sh[i / ns]);
        bool best = true;
        for (int b = 0; b < S && best; ++b)
          if (b != i && long_term_gain_db(d, hex, assoc, b, pos, sh[b / ns]) > own) best = false;
        if (best || !d.best_server || attempt >= 10000) {
          (dir == 0 ? s.dl_ue : s.ul_ue)[i] = pos;
          std::copy(sh.begin(), sh.end(), (dir == 0 ? s.shadow_dl : s.shadow_ul).begin() + static_cast<long>(i) * nsite);
          break;
        }
      }
    }
  s.ul_ue = s.dl_ue;
  s.shadow_ul = s.shadow_dl;
  // same-frequency links are reciprocal
  s.fade_bs_dl.resize(static_cast<std::size_t>(S) * S);
  for (auto& f : s.fade_bs_dl) f = rng.exponential(1.0);
  s.fade_bs_ul = s.fade_bs_dl;
  s.ue_ue_loss_db.resize(static_cast<std::size_t>(S) * S);
  for (int a = 0; a < S; ++a)
    for (int b = 0; b < S; ++b) {
      if (a == b) continue;  // a UE's own uplink is its echo
      const double dist = norm(hex.wrap(s.ul_ue[b], s.dl_ue[a]));
      const double pl = rng.uniform(p.lo, p.hi);
      double loss = pathloss_ue_ue(std::max(dist, 1e-3), pl, d);
      if (rng.uniform() < d.ue_ue_penetration_prob) loss += d.penetration_db;
      s.ue_ue_loss_db[a * S + b] = loss - lin2db(rng.exponential(1.0));
    }
  s.bs_bs_alpha.resize(static_cast<std::size_t>(S) * S);
  for (auto& a : s.bs_bs_alpha) a = rng.uniform(-1.0, 1.0) * kDeg;
  return s;
}

enum class DuplexMode { NonSTR, STR };

/// Per-sector capacities of one snapshot, bps/Hz.
struct LinkCapacities {
  std::vector<double> dl, ul;
};

/// Which links transmit in one resource: dl_on[s], ul_on[s].
struct Activity {
  std::vector<char> dl_on, ul_on;
};

/// Precomputed received powers of a snapshot for one antenna choice.
class LinkBudget {
 public:
  LinkBudget(const CellDeployment& d, const HexLayout& hex, const Snapshot& s, const SectorAntenna& ant)
      : S_(s.n_sectors), ns_(d.sectors_per_site) {
    const int nsite = hex.n_sites();
    bs_dl_.assign(static_cast<std::size_t>(S_) * S_, 0.0);
    bs_ul_.assign(static_cast<std::size_t>(S_) * S_, 0.0);
    bs_bs_.assign(static_cast<std::size_t>(S_) * S_, 0.0);
    ue_ue_.assign(static_cast<std::size_t>(S_) * S_, 0.0);
    const double dh = d.bs_height_m - d.ue_height_m;
    for (int b = 0; b < S_; ++b) {
      const int site = b / ns_;
      const Vec2 c = hex.site(site);
      const double bore = ns_ == 1 ? kPi / 2 : HexLayout::boresight(b % ns_);
      for (int u = 0; u < S_; ++u) {
        for (int dir = 0; dir < 2; ++dir) {
          const Vec2 pos = dir == 0 ? s.dl_ue[u] : s.ul_ue[u];
          const Vec2 v = hex.wrap(c, pos);
          const double r = std::max(norm(v), 1.0);
          const double theta = kPi / 2 + std::atan2(dh, r);
          const double g = ant.gain(theta, local_phi(v, bore));
          const double pl = pathloss_bs_ue(std::hypot(r, dh), d);
          const double shadow = (dir == 0 ? s.shadow_dl : s.shadow_ul)[u * nsite + site];
          const double fade = (dir == 0 ? s.fade_bs_dl : s.fade_bs_ul)[b * S_ + u];
          const double tx = dir == 0 ? d.bs_tx_dbm : d.ue_tx_dbm;
          (dir == 0 ? bs_dl_ : bs_ul_)[b * S_ + u] = dbm2mw(tx - pl - shadow) * g * fade;
        }
      }
      for (int t = 0; t < S_; ++t) {
        if (t == b) continue;
        const double a = s.bs_bs_alpha[b * S_ + t];
        if (t / ns_ == site) {
          // co-site panels: 1 m apart, each behind the other
          const double g = ant.gain(kPi / 2 - a, 1.5 * kPi) * ant.gain(kPi / 2 + a, 1.5 * kPi);
          bs_bs_[b * S_ + t] = dbm2mw(d.bs_tx_dbm - kCoSiteLossDb) * g;
          continue;
        }
        const Vec2 v = hex.wrap(c, hex.site(t / ns_));
        const double boreT = ns_ == 1 ? kPi / 2 : HexLayout::boresight(t % ns_);
        const double g_rx = ant.gain(kPi / 2 - a, local_phi(v, bore));
        const double g_tx = ant.gain(kPi / 2 + a, local_phi(Vec2{-v.x, -v.y}, boreT));
        bs_bs_[b * S_ + t] = dbm2mw(d.bs_tx_dbm - pathloss_bs_bs(norm(v), d)) * g_rx * g_tx;
      }
    }
    for (int a = 0; a < S_; ++a)
      for (int b = 0; b < S_; ++b) ue_ue_[a * S_ + b] = dbm2mw(d.ue_tx_dbm - s.ue_ue_loss_db[a * S_ + b]);
    n_ue_ = dbm2mw(d.noise_dbm(d.nf_ue_db));
    n_bs_ = dbm2mw(d.noise_dbm(d.nf_bs_db));
  }

  /// DL power from sector b at the DL UE of sector u
  double dl(int b, int u) const { return bs_dl_[b * S_ + u]; }
  /// UL power from the UL UE of sector u at sector b
  double ul(int b, int u) const { return bs_ul_[b * S_ + u]; }
  /// BS-BS power from sector t at sector b
  double bs_bs(int b, int t) const { return bs_bs_[b * S_ + t]; }
  /// UE-UE power from UL UE b at DL UE a
  double ue_ue(int a, int b) const { return ue_ue_[a * S_ + b]; }
  int n_sectors() const { return S_; }

  double dl_sinr(int s, const Activity& act) const {
    double i = 0;
    for (int b = 0; b < S_; ++b)
      if (b != s && act.dl_on[b]) i += dl(b, s);
    for (int u = 0; u < S_; ++u)
      if (u != s && act.ul_on[u]) i += ue_ue(s, u);
    return dl(s, s) / (i + n_ue_);
  }

  double ul_sinr(int s, const Activity& act) const {
    double i = 0;
    for (int u = 0; u < S_; ++u)
      if (u != s && act.ul_on[u]) i += ul(s, u);
    for (int t = 0; t < S_; ++t)
      if (t != s && act.dl_on[t]) i += bs_bs(s, t);
    return ul(s, s) / (i + n_bs_);
  }

  double bs_noise_mw() const { return n_bs_; }

 private:
  int S_, ns_;
  std::vector<double> bs_dl_, bs_ul_, bs_bs_, ue_ue_;
  double n_ue_ = 1, n_bs_ = 1;
};

inline double shannon(double sinr) { return std::log2(1.0 + sinr); }

inline LinkCapacities compute_capacity(const LinkBudget& lb, DuplexMode mode) {
  const int S = lb.n_sectors();
  LinkCapacities c;
  c.dl.resize(S);
  c.ul.resize(S);
  Activity all{std::vector<char>(S, 1), std::vector<char>(S, 1)};
  Activity dl_only{std::vector<char>(S, 1), std::vector<char>(S, 0)};
  Activity ul_only{std::vector<char>(S, 0), std::vector<char>(S, 1)};
  for (int s = 0; s < S; ++s) {
    if (mode == DuplexMode::STR) {
      c.dl[s] = shannon(lb.dl_sinr(s, all));
      c.ul[s] = shannon(lb.ul_sinr(s, all));
    } else {
      // reuse 2: each direction gets half the resource
      c.dl[s] = 0.5 * shannon(lb.dl_sinr(s, dl_only));
      c.ul[s] = 0.5 * shannon(lb.ul_sinr(s, ul_only));
    }
  }
  return c;
}

// ---------------------------------------------------------------------
// DL/UL-centric resource blocks

struct ResourceBlockPolicy {
  double t_d_fraction = 0.5;
  double thr_dl_db = -std::numeric_limits<double>::infinity();
  double thr_ul_db = -std::numeric_limits<double>::infinity();

  double t_u_fraction() const { return 1.0 - t_d_fraction; }
  void validate() const {
    if (!(t_d_fraction > 0 && t_d_fraction < 1)) throw ConfigError("t_d_fraction must be in (0, 1)");
  }
};

/// DL zone: every DL link on; a sector also serves its UL UE when its DL
/// UE's SINR with all UE-UE interferers present clears thr_dl. UL zone:
/// every UL link on; DL is added where the same test clears thr_ul.
inline LinkCapacities resource_block_capacity(const LinkBudget& lb, const ResourceBlockPolicy& pol) {
  pol.validate();
  const int S = lb.n_sectors();
  Activity all{std::vector<char>(S, 1), std::vector<char>(S, 1)};
  std::vector<double> probe(S);
  for (int s = 0; s < S; ++s) probe[s] = lin2db(lb.dl_sinr(s, all));
  Activity zd{std::vector<char>(S, 1), std::vector<char>(S, 0)};
  Activity zu{std::vector<char>(S, 0), std::vector<char>(S, 1)};
  for (int s = 0; s < S; ++s) {
    zd.ul_on[s] = probe[s] >= pol.thr_dl_db;
    zu.dl_on[s] = probe[s] >= pol.thr_ul_db;
  }
  LinkCapacities c;
  c.dl.resize(S);
  c.ul.resize(S);
  const double td = pol.t_d_fraction, tu = pol.t_u_fraction();
  for (int s = 0; s < S; ++s) {
    c.dl[s] = td * shannon(lb.dl_sinr(s, zd)) + (zu.dl_on[s] ? tu * shannon(lb.dl_sinr(s, zu)) : 0.0);
    c.ul[s] = (zd.ul_on[s] ? td * shannon(lb.ul_sinr(s, zd)) : 0.0) + tu * shannon(lb.ul_sinr(s, zu));
  }
  return c;
}

// ---------------------------------------------------------------------
// Reports

struct CapacityStats {
  double mean = 0;
  double edge = 0;  // 5th percentile
};

inline CapacityStats stats(std::vector<double> v) {
  CapacityStats s;
  if (v.empty()) return s;
  double acc = 0;
  for (double x : v) acc += x;
  s.mean = acc / v.size();
  std::sort(v.begin(), v.end());
  const double pos = 0.05 * (v.size() - 1);
  const std::size_t i = static_cast<std::size_t>(pos);
  const double f = pos - i;
  s.edge = i + 1 < v.size() ? v[i] * (1 - f) + v[i + 1] * f : v[i];
  return s;
}

struct CapacityReport {
  std::vector<double> dl, ul;  // every link of every snapshot
  CapacityStats dl_stats() const { return stats(dl); }
  CapacityStats ul_stats() const { return stats(ul); }
};

inline double gain_pct(double v, double base) { return 100.0 * (v / base - 1.0); }

struct GainCell {
  double mean_pct, edge_pct;
};

inline GainCell gains(const CapacityStats& s, const CapacityStats& base) {
  return {gain_pct(s.mean, base.mean), gain_pct(s.edge, base.edge)};
}

/// One evaluated configuration in a snapshot study.
struct CellularCase {
  std::string name;
  ArrayConfig array;
  DuplexMode mode = DuplexMode::STR;
  bool resource_blocks = false;
  ResourceBlockPolicy policy;
};

struct CellularStudy {
  CellDeployment deployment;
  LocationRange p_range;
  long n_snapshots = 200;
  std::uint64_t seed = 1;
  int threads = 1;
};

/// Every case over the same snapshots; reports by case, links ordered by
/// (snapshot, sector).
inline std::vector<CapacityReport> run_study(const CellularStudy& st, const std::vector<CellularCase>& cases) {
  const HexLayout hex(st.deployment);
  std::vector<SectorAntenna> ants;
  for (const auto& c : cases) ants.push_back(make_antenna(st.deployment, c.array));
  const SectorAntenna assoc = make_antenna(st.deployment, ArrayConfig{});
  const int S = hex.n_sites() * st.deployment.sectors_per_site;
  std::vector<std::vector<LinkCapacities>> per(cases.size(), std::vector<LinkCapacities>(st.n_snapshots));
  parallel_for(st.n_snapshots, st.threads, [&](long i) {
    // association through the reference beam keeps one drop for all cases
    const Snapshot snap = drop_and_schedule(st.deployment, hex, Rng::derive(st.seed, i), st.p_range, assoc);
    for (std::size_t c = 0; c < cases.size(); ++c) {
      const LinkBudget lb(st.deployment, hex, snap, ants[c]);
      per[c][i] = cases[c].resource_blocks ? resource_block_capacity(lb, cases[c].policy) : compute_capacity(lb, cases[c].mode);
    }
  });
  std::vector<CapacityReport> out(cases.size());
  for (std::size_t c = 0; c < cases.size(); ++c) {
    out[c].dl.reserve(static_cast<std::size_t>(S) * st.n_snapshots);
    for (const auto& lc : per[c]) {
      out[c].dl.insert(out[c].dl.end(), lc.dl.begin(), lc.dl.end());
      out[c].ul.insert(out[c].ul.end(), lc.ul.begin(), lc.ul.end());
    }
  }
  return out;
}

struct ResourceBlockSearch {
  std::vector<double> thr_dl_db;
  std::vector<double> thr_ul_db;
  std::vector<double> t_d;

  static ResourceBlockSearch standard() {
    const double inf = std::numeric_limits<double>::infinity();
    ResourceBlockSearch g;
    g.thr_dl_db = {-inf, -5, 0, 5, 10, 15, 20, 25, inf};
    g.thr_ul_db = {-inf, -5, 0, 5, 10, 15, 20, 25, inf};
    g.t_d = {0.3, 0.4, 0.5, 0.6, 0.7};
    return g;
  }
};

struct ResourceBlockResult {
  ResourceBlockPolicy policy;
  GainCell dl, ul;
  double objective = 0;
  bool found = false;
};

/// Grid search over thresholds and zone split maximising the sum of DL
/// and UL mean and edge gains against `baseline`.
inline ResourceBlockResult resource_block_optimize(const CellularStudy& st, const ArrayConfig& array,
                                                   const ResourceBlockSearch& grid, const CapacityReport& baseline) {
  const HexLayout hex(st.deployment);
  const SectorAntenna ant = make_antenna(st.deployment, array);
  const SectorAntenna assoc = make_antenna(st.deployment, ArrayConfig{});
  std::vector<LinkBudget> budgets;
  budgets.reserve(st.n_snapshots);
  for (long i = 0; i < st.n_snapshots; ++i)
    budgets.emplace_back(st.deployment, hex, drop_and_schedule(st.deployment, hex, Rng::derive(st.seed, i), st.p_range, assoc), ant);
  const CapacityStats bdl = baseline.dl_stats(), bul = baseline.ul_stats();
  ResourceBlockResult best;
  best.objective = -std::numeric_limits<double>::infinity();
  for (double td : grid.t_d)
    for (double a : grid.thr_dl_db)
      for (double b : grid.thr_ul_db) {
        ResourceBlockPolicy pol{td, a, b};
        CapacityReport r;
        for (const auto& lb : budgets) {
          const LinkCapacities c = resource_block_capacity(lb, pol);
          r.dl.insert(r.dl.end(), c.dl.begin(), c.dl.end());
          r.ul.insert(r.ul.end(), c.ul.begin(), c.ul.end());
        }
        const GainCell gd = gains(r.dl_stats(), bdl), gu = gains(r.ul_stats(), bul);
        const double obj = gd.mean_pct + gd.edge_pct + gu.mean_pct + gu.edge_pct;
        if (std::isfinite(obj) && obj > best.objective) best = {pol, gd, gu, obj, true};
      }
  if (!best.found) best.policy = ResourceBlockPolicy{0.5, std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  return best;
}

/// BS-BS coupling at site 0's sectors from every sector of the first
/// tier, dBm, one entry per (rx sector, tx sector, draw).
inline std::vector<double> first_tier_bs_bs_dbm(const CellDeployment& d, const SectorAntenna& ant, int draws, std::uint64_t seed) {
  const HexLayout hex(d);
  Rng rng(seed);
  std::vector<double> out;
  const int ns = d.sectors_per_site;
  for (int b = 0; b < ns; ++b)
    for (int site : hex.first_tier())
      for (int t = 0; t < ns; ++t) {
        const Vec2 v = hex.wrap(hex.site(0), hex.site(site));
        const double bore = ns == 1 ? kPi / 2 : HexLayout::boresight(b);
        const double boreT = ns == 1 ? kPi / 2 : HexLayout::boresight(t);
        for (int k = 0; k < draws; ++k) {
          const double a = rng.uniform(-1.0, 1.0) * kDeg;
          const double g = ant.gain(kPi / 2 - a, local_phi(v, bore)) * ant.gain(kPi / 2 + a, local_phi(Vec2{-v.x, -v.y}, boreT));
          out.push_back(d.bs_tx_dbm + lin2db(g) - pathloss_bs_bs(norm(v), d));
        }
      }
  return out;
}

}  // namespace str
