#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace loramp {

using Complex = std::complex<double>;

// The start frame delimiter is two full downchirps and a quarter downchirp.
inline constexpr int kSfdQuarters = 9;

struct LoraParams {
  int sf = 10;
  double bw = 125e3;
  int cr = 8;  // codeword length n_c of the (n_c, 4) code
  int osr_rx = 2;
  int osr_rec = 10;
  int preamble_len = 10;
  int payload_bytes = 12;

  std::uint32_t chips() const noexcept { return 1u << sf; }
  double symbol_duration() const noexcept { return static_cast<double>(chips()) / bw; }
  double chirp_slope() const noexcept { return bw / symbol_duration(); }
  double rx_rate() const noexcept { return osr_rx * bw; }
  double rec_rate() const noexcept { return osr_rec * bw; }
  std::size_t rx_symbol_len() const noexcept { return std::size_t{chips()} * osr_rx; }
  std::size_t rec_symbol_len() const noexcept { return std::size_t{chips()} * osr_rec; }
  int decimation() const noexcept { return osr_rec / osr_rx; }

  // Throws ConfigError on out-of-range values.
  void validate() const;
};

struct BinShifts {
  double cfo_bins = 0.0;
  double to_bins = 0.0;
};

BinShifts bin_shifts(const LoraParams& params, double cfo_hz, double to_s);

// Data symbols per packet, including interleaver-block padding.
int symbol_count(const LoraParams& params);

// Samples before the first data symbol at the given oversampling.
std::size_t data_offset(const LoraParams& params, int osr);
std::size_t frame_length(const LoraParams& params, int osr);

// Start time of data symbol i relative to the frame origin.
double data_symbol_time(const LoraParams& params, int i);

// Packet airtime.
double packet_duration(const LoraParams& params);

// Delay in reconstruction-grid samples, round(to * osr_rec * bw).
long long rec_grid_shift(double to_s, const LoraParams& params);

struct IqBuffer {
  std::vector<Complex> samples;
  double rate = 0.0;

  std::size_t size() const noexcept { return samples.size(); }
};

struct NodeTxState {
  Complex h{1.0, 0.0};
  double cfo = 0.0;       // Hz
  double to = 0.0;        // seconds, >= 0
  double power_db = 0.0;  // receive power relative to the reference user
  std::vector<std::uint8_t> payload;

  // Complex amplitude h * 10^(power_db / 20).
  Complex gain() const;
};

}  // namespace loramp
