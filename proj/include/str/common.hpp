#pragma once

#include <atomic>
#include <cmath>
#include <complex>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace str {

using cplx = std::complex<double>;
using cvec = std::vector<cplx>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kDeg = kPi / 180.0;
// thermal noise density, dBm/Hz
inline constexpr double kThermalDbmHz = -174.0;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateLayout : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline double db2lin(double db) { return std::pow(10.0, db / 10.0); }
inline double lin2db(double x) { return 10.0 * std::log10(x); }
inline double db2amp(double db) { return std::pow(10.0, db / 20.0); }
inline double dbm2mw(double dbm) { return db2lin(dbm); }
inline double mw2dbm(double mw) {
  return mw > 0 ? lin2db(mw) : -std::numeric_limits<double>::infinity();
}

/// sin(pi x)/(pi x)
inline double sinc(double x) {
  if (std::abs(x) < 1e-8) {
    const double px = kPi * x;
    return 1.0 - px * px / 6.0;
  }
  return std::sin(kPi * x) / (kPi * x);
}

inline cplx expj(double phase) { return {std::cos(phase), std::sin(phase)}; }

/// xoshiro256** seeded through splitmix64. Kept in-house (with its own
/// normal/exponential draws) so streams depend only on the seed and not
/// on the standard library's distribution implementations.
class Rng {
 public:
  using result_type = std::uint64_t;
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() { return next(); }

  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t z = seed;
    for (auto& w : s_) w = splitmix(z);
    have_spare_ = false;
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// uniform on [0,1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }
  /// uniform on (0,1]
  double uniform_open0() { return (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53; }

  std::uint64_t below(std::uint64_t n) { return n ? next() % n : 0; }

  double exponential(double mean) { return -mean * std::log(uniform_open0()); }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // polar Box-Muller
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    have_spare_ = true;
    return u * f;
  }

  /// circular complex Gaussian with E|n|^2 = var
  cplx cnormal(double var) {
    const double sd = std::sqrt(var / 2.0);
    const double re = normal();
    return {sd * re, sd * normal()};
  }

  /// derive an independent stream for sub-task `index`
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed ^ (0x9e3779b97f4a7c15ULL * (index + 1));
    return splitmix(z);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  static std::uint64_t splitmix(std::uint64_t& z) {
    z += 0x9e3779b97f4a7c15ULL;
    std::uint64_t r = z;
    r = (r ^ (r >> 30)) * 0xbf58476d1ce4e5b9ULL;
    r = (r ^ (r >> 27)) * 0x94d049bb133111ebULL;
    return r ^ (r >> 31);
  }

  std::uint64_t s_[4]{};
  double spare_ = 0.0;
  bool have_spare_ = false;
};

inline double mean_square(const cvec& x) {
  double acc = 0.0;
  for (const auto& v : x) acc += std::norm(v);
  return x.empty() ? 0.0 : acc / static_cast<double>(x.size());
}

/// Runs f(i) for i in [0, n) on `threads` workers; results land by
/// index so the output does not depend on scheduling.
template <class F>
void parallel_for(long n, int threads, F&& f) {
  if (threads <= 1 || n <= 1) {
    for (long i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<long> next{0};
  std::mutex mu;
  std::exception_ptr err;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (long i = next++; i < n; i = next++) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!err) err = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace str
