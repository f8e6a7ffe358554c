#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "loramp/params.hpp"
#include "loramp/sync.hpp"

namespace loramp {

enum class Strategy { VPeak, MPeak, MFullPeak };

Strategy parse_strategy(std::string_view name);
std::string_view to_string(Strategy strategy);

// ceil(to_max_frac * N * osr_rx) samples.
std::size_t default_truncation(const LoraParams& params, double to_max_frac = 0.1);

std::vector<Complex> dechirp_truncated(std::span<const Complex> window, const LoraParams& params,
                                       std::size_t trunc);

// |S[b]| + |S[b - N]| folded onto the N native bins.
std::vector<double> paired_magnitude(std::span<const Complex> spectrum, const LoraParams& params);

// Same fold on a zero-padded spectrum: `bins` native bins, `pad` points per bin.
std::vector<double> paired_magnitude(std::span<const Complex> spectrum, std::uint32_t bins,
                                     std::size_t pad);

struct WindowPeaks {
  std::vector<double> bins;  // fractional native bins, descending magnitude
  std::vector<double> mags;

  std::size_t count() const noexcept { return bins.size(); }
};

inline constexpr std::size_t kDefaultPeakCap = 8;

WindowPeaks extract_peaks(std::span<const double> pm, Strategy strategy, int users,
                          double noise_threshold, std::size_t cap = kDefaultPeakCap);

struct NoiseFloor {
  double mean = 0.0;
  double stddev = 0.0;
  double threshold() const noexcept { return mean + 3.0 * stddev; }
};

// Statistics of the paired magnitude of noise-only windows.
NoiseFloor measure_noise_floor(const LoraParams& params, double sigma2, std::size_t trunc,
                               std::uint64_t seed, int windows = 64);

// Per-node peak indices.
using Assignment = std::vector<std::uint8_t>;

std::vector<Assignment> enumerate_sequences(std::size_t peaks, int users, Strategy strategy);

// f(m, v): surjections of m nodes onto v peaks.
std::uint64_t surjection_count(int users, int peaks);
std::uint64_t full_peak_count(int users, int peaks);

struct NodeEstimate {
  double cfo = 0.0;
  double to = 0.0;
  Complex h{1.0, 0.0};
};

// Round half toward zero.
double round_half_to_zero(double x) noexcept;
std::uint32_t symbol_from_peak(double peak_bin, double cfo, double to, const LoraParams& params);

// -sum |Y - Y~|^2 with Y~ rebuilt from scratch for the hypothesised symbols.
double sequence_loglik(std::span<const Complex> spectrum, std::span<const std::uint32_t> symbols,
                       std::span<const NodeEstimate> nodes, int symbol_index,
                       const LoraParams& params, std::size_t trunc);

struct CandidateSequence {
  std::vector<double> assignment;  // chosen peak bin per node
  std::vector<std::uint32_t> symbols;
  double loglik = 0.0;
};

struct TopK {
  std::vector<CandidateSequence> candidates;  // descending loglik

  bool erased() const noexcept { return candidates.empty(); }
};

struct DemodOptions {
  Strategy strategy = Strategy::MFullPeak;
  int top_k = 2;
  std::size_t trunc = 0;
  double noise_threshold = 0.0;
  std::size_t peak_cap = kDefaultPeakCap;
};

// Scores candidates for data windows of one packet. Reconstructions of each
// (node, peak) pair are computed once per window; candidate spectra are sums
// of those, scored through their Gram matrix.
class WindowDemodulator {
 public:
  WindowDemodulator(const LoraParams& params, std::span<const NodeEstimate> nodes,
                    const DemodOptions& options);

  // Y is the truncated-dechirp spectrum of data window `symbol_index`.
  TopK demodulate(std::span<const Complex> spectrum, const WindowPeaks& peaks,
                  int symbol_index) const;

  // Dechirp, peak extraction and scoring of a raw receiver-rate window.
  TopK demodulate_window(std::span<const Complex> window, int symbol_index) const;

 private:
  LoraParams params_;
  std::vector<NodeEstimate> nodes_;
  std::vector<SymbolSynth> synths_;
  DemodOptions options_;
};

TopK demod_window(std::span<const Complex> spectrum, const WindowPeaks& peaks,
                  std::span<const NodeEstimate> nodes, int symbol_index,
                  const LoraParams& params, const DemodOptions& options);

}  // namespace loramp
