#pragma once

#include <cstdint>
#include <limits>
#include <span>

#include "loramp/params.hpp"

namespace loramp {

// Gain, CFO rotation, delay on the reconstruction grid, decimation to the
// receiver grid. `frame` must be sampled at params.rec_rate().
IqBuffer apply_impairments(const IqBuffer& frame, const NodeTxState& node,
                           const LoraParams& params);

IqBuffer superimpose(std::span<const IqBuffer> frames);

double noise_variance(double snr_db, double ref_power, int osr);

// snr_db = +inf leaves the signal untouched.
IqBuffer add_awgn(const IqBuffer& signal, double snr_db, double ref_power, int osr,
                  std::uint64_t seed);

inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();

}  // namespace loramp
