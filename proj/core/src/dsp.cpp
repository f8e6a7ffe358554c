#include "loramp/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <utility>

namespace loramp {
namespace {

// Plans are created once per size (planning is not thread safe in FFTW);
// fftw_execute_dft on a shared plan is.
fftw_plan forward_plan(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, fftw_plan> plans;
  std::lock_guard lock(mutex);
  auto it = plans.find(n);
  if (it != plans.end()) return it->second;
  auto* in = fftw_alloc_complex(n);
  auto* out = fftw_alloc_complex(n);
  fftw_plan plan = fftw_plan_dft_1d(static_cast<int>(n), in, out, FFTW_FORWARD,
                                    FFTW_ESTIMATE | FFTW_UNALIGNED);
  fftw_free(in);
  fftw_free(out);
  plans.emplace(n, plan);
  return plan;
}

}  // namespace

void fft_into(std::span<const Complex> in, std::span<Complex> out) {
  // Out-of-place c2c transforms leave the input untouched.
  auto* src = reinterpret_cast<fftw_complex*>(const_cast<Complex*>(in.data()));
  auto* dst = reinterpret_cast<fftw_complex*>(out.data());
  if (in.size() == out.size() && in.data() != out.data()) {
    fftw_execute_dft(forward_plan(out.size()), src, dst);
    return;
  }
  std::vector<Complex> padded(out.size());
  std::copy_n(in.begin(), std::min(in.size(), out.size()), padded.begin());
  fftw_execute_dft(forward_plan(out.size()), reinterpret_cast<fftw_complex*>(padded.data()), dst);
}

std::vector<Complex> fft(std::span<const Complex> in, std::size_t size) {
  std::vector<Complex> out(size);
  fft_into(in, out);
  return out;
}

Complex unit_phasor(double cycles) {
  const double frac = cycles - std::floor(cycles);
  const double angle = 2.0 * std::numbers::pi * frac;
  return {std::cos(angle), std::sin(angle)};
}

ChirpTable::ChirpTable(int sf, int osr) : sf_(sf), osr_(osr) {
  const long long n_chips = 1LL << sf;
  const long long len = n_chips * osr;
  // Phase in cycles: (n^2 - n*N*osr) / (2*N*osr^2), reduced exactly first.
  const long long den = 2 * n_chips * osr * osr;
  up_.resize(static_cast<std::size_t>(len));
  for (long long n = 0; n < len; ++n) {
    long long num = (n * n - n * n_chips * osr) % den;
    if (num < 0) num += den;
    up_[static_cast<std::size_t>(n)] = unit_phasor(static_cast<double>(num) / static_cast<double>(den));
  }
  // exp(-j*pi*(s^2/N - s)) = exp(-j*2*pi*(s^2 - s*N) / (2N))
  phase_.resize(static_cast<std::size_t>(n_chips));
  for (long long s = 0; s < n_chips; ++s) {
    long long num = (s * s - s * n_chips) % (2 * n_chips);
    if (num < 0) num += 2 * n_chips;
    phase_[static_cast<std::size_t>(s)] =
        unit_phasor(-static_cast<double>(num) / static_cast<double>(2 * n_chips));
  }
}

std::vector<Complex> ChirpTable::symbol(std::uint32_t s) const {
  std::vector<Complex> out(up_.size());
  for (std::size_t n = 0; n < out.size(); ++n) out[n] = symbol_sample(s, n);
  return out;
}

const ChirpTable& chirp_table(int sf, int osr) {
  static std::mutex mutex;
  static std::map<std::pair<int, int>, std::unique_ptr<ChirpTable>> tables;
  std::lock_guard lock(mutex);
  auto& slot = tables[{sf, osr}];
  if (!slot) slot = std::make_unique<ChirpTable>(sf, osr);
  return *slot;
}

}  // namespace loramp
