#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "loramp/params.hpp"

namespace loramp {

struct OffsetEstimate {
  double cfo_hat = 0.0;  // Hz
  double to_hat = 0.0;   // seconds, relative to the window start
  double f_up = 0.0;     // preamble peak, native bins
  double f_down = 0.0;   // SFD peak, native bins
  double amp = 0.0;
};

struct ChannelEstimate {
  Complex h_hat;
  double residual = 0.0;
};

// First sample of the earliest frame, or nullopt when no stable preamble bin
// is found.
std::optional<std::size_t> detect_preamble(const IqBuffer& signal, const LoraParams& params);

// Per-user offsets from the preamble and SFD that start at `start`. Users are
// ordered by descending preamble amplitude. Throws EstimationError when fewer
// than `users` peaks can be resolved.
std::vector<OffsetEstimate> estimate_offsets(const IqBuffer& signal, std::size_t start, int users,
                                             const LoraParams& params);

// Share of the energy in the two full SFD windows that the users'
// synthesized SFDs capture, with per-window least-squares gains.
double sfd_fit_fraction(const IqBuffer& signal, std::size_t start,
                        std::span<const OffsetEstimate> offsets, const LoraParams& params);

// Builds an estimate from a preamble/SFD peak pair, unwrapping the bins into
// the TO range [-N/4, N/4) and the CFO range [-N/2, N/2).
OffsetEstimate offsets_from_peaks(double f_up, double f_down, double amp, const LoraParams& params);

// One receiver-rate symbol window of a user, as seen by a receiver whose
// window starts `t_start` after the user's frame origin minus `to`.
IqBuffer reconstruct_symbol(std::uint32_t s, double cfo, double to, Complex h,
                            const LoraParams& params, double t_start = 0.0);

// Cached variant of reconstruct_symbol for one user: the CFO rotation over a
// window is tabulated once.
class SymbolSynth {
 public:
  SymbolSynth(const LoraParams& params, double cfo, double to, Complex h);

  // Writes rx_symbol_len() samples.
  void render(std::uint32_t s, double t_start, std::span<Complex> out) const;

 private:
  LoraParams params_;
  double cfo_;
  long long shift_;
  Complex h_;
  std::vector<Complex> rotation_;
};

// Least-squares channel coefficients over preamble windows 1..8, using the
// same truncated dechirp as demodulation.
std::vector<ChannelEstimate> estimate_channels(const IqBuffer& signal, std::size_t start,
                                               std::span<const OffsetEstimate> offsets,
                                               const LoraParams& params, std::size_t trunc);

}  // namespace loramp
