#pragma once

#include <fftw3.h>

#include <map>
#include <memory>
#include <mutex>

#include "str/common.hpp"

namespace str {

/// Unnormalized 1-D complex DFT of fixed size. Plans are made once per size
/// with FFTW_ESTIMATE (no timing, so plan choice is reproducible) and
/// shared; the FFTW planner is not thread-safe, execution is.
class Fft {
 public:
  static const Fft& of(int n) {
    static std::mutex mu;
    static std::map<int, std::unique_ptr<Fft>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[n];
    if (!slot) slot.reset(new Fft(n));
    return *slot;
  }

  int size() const { return n_; }

  void forward(const cplx* in, cplx* out) const {
    fftw_execute_dft(fwd_, cast(in), reinterpret_cast<fftw_complex*>(out));
  }
  void inverse(const cplx* in, cplx* out) const {
    fftw_execute_dft(inv_, cast(in), reinterpret_cast<fftw_complex*>(out));
  }

  Fft(const Fft&) = delete;
  Fft& operator=(const Fft&) = delete;
  ~Fft() {
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
  }

 private:
  explicit Fft(int n) : n_(n) {
    if (n <= 0) throw ConfigError("fft size must be positive");
    cvec a(n), b(n);
    auto* pa = reinterpret_cast<fftw_complex*>(a.data());
    auto* pb = reinterpret_cast<fftw_complex*>(b.data());
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    fwd_ = fftw_plan_dft_1d(n, pa, pb, FFTW_FORWARD, flags);
    inv_ = fftw_plan_dft_1d(n, pa, pb, FFTW_BACKWARD, flags);
  }

  static fftw_complex* cast(const cplx* p) {
    return reinterpret_cast<fftw_complex*>(const_cast<cplx*>(p));
  }

  int n_;
  fftw_plan fwd_{};
  fftw_plan inv_{};
};

}  // namespace str
