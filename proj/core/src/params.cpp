#include "loramp/params.hpp"

#include <cmath>
#include <string>

#include "loramp/error.hpp"

namespace loramp {

void LoraParams::validate() const {
  if (sf < 6 || sf > 12) throw ConfigError("sf must be in 6..12, got " + std::to_string(sf));
  if (bw != 125e3 && bw != 250e3 && bw != 500e3)
    throw ConfigError("bw must be 125e3, 250e3 or 500e3");
  if (cr < 5 || cr > 8) throw ConfigError("cr (codeword length) must be in 5..8");
  if (osr_rx < 2) throw ConfigError("osr_rx must be >= 2");
  if (osr_rec < osr_rx || osr_rec % osr_rx != 0)
    throw ConfigError("osr_rec must be a multiple of osr_rx");
  if (preamble_len < 10) throw ConfigError("preamble_len must be >= 10");
  if (payload_bytes < 3) throw ConfigError("payload_bytes must be >= 3 (data plus CRC)");
}

BinShifts bin_shifts(const LoraParams& params, double cfo_hz, double to_s) {
  return {static_cast<double>(params.chips()) * cfo_hz / params.bw, to_s * params.bw};
}

int symbol_count(const LoraParams& params) {
  const int nibbles = 2 * params.payload_bytes;
  const int blocks = (nibbles + params.sf - 1) / params.sf;
  return blocks * params.cr;
}

std::size_t data_offset(const LoraParams& params, int osr) {
  const std::size_t quarter = std::size_t{params.chips()} * osr / 4;
  return std::size_t(params.preamble_len) * 4 * quarter + kSfdQuarters * quarter;
}

std::size_t frame_length(const LoraParams& params, int osr) {
  return data_offset(params, osr) + std::size_t(symbol_count(params)) * params.chips() * osr;
}

double data_symbol_time(const LoraParams& params, int i) {
  return (params.preamble_len + kSfdQuarters / 4.0 + i) * params.symbol_duration();
}

double packet_duration(const LoraParams& params) {
  return data_symbol_time(params, symbol_count(params));
}

long long rec_grid_shift(double to_s, const LoraParams& params) {
  return std::llround(to_s * params.rec_rate());
}

Complex NodeTxState::gain() const { return h * std::pow(10.0, power_db / 20.0); }

}  // namespace loramp
