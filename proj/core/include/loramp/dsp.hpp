#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "loramp/params.hpp"

namespace loramp {

// Forward DFT (FFTW sign convention, unnormalised). The input is zero padded
// to `size` when shorter.
std::vector<Complex> fft(std::span<const Complex> in, std::size_t size);
void fft_into(std::span<const Complex> in, std::span<Complex> out);

// Base upchirp sampled at `osr` samples per chip, plus the per-symbol phase
// constants that turn a cyclic shift of it into a modulated symbol.
class ChirpTable {
 public:
  ChirpTable(int sf, int osr);

  int sf() const noexcept { return sf_; }
  int osr() const noexcept { return osr_; }
  std::uint32_t chips() const noexcept { return 1u << sf_; }
  std::size_t size() const noexcept { return up_.size(); }

  std::span<const Complex> upchirp() const noexcept { return up_; }
  Complex up(std::size_t n) const noexcept { return up_[n]; }

  // exp(-j*pi*(s^2/N - s))
  Complex symbol_phase(std::uint32_t s) const noexcept { return phase_[s]; }

  // Sample n of the chirp carrying symbol s.
  Complex symbol_sample(std::uint32_t s, std::size_t n) const noexcept {
    std::size_t idx = n + std::size_t{s} * osr_;
    if (idx >= up_.size()) idx -= up_.size();
    return phase_[s] * up_[idx];
  }

  std::vector<Complex> symbol(std::uint32_t s) const;

 private:
  int sf_;
  int osr_;
  std::vector<Complex> up_;
  std::vector<Complex> phase_;
};

// Shared, lazily built tables. Thread safe; returned references stay valid
// for the lifetime of the process.
const ChirpTable& chirp_table(int sf, int osr);

// exp(j*2*pi*cycles) with the integer part of `cycles` removed first.
Complex unit_phasor(double cycles);

}  // namespace loramp
