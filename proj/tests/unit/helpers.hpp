#pragma once

#include <complex>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "loramp/coding.hpp"
#include "loramp/dsp.hpp"
#include "loramp/params.hpp"

namespace loramp::testing {

inline std::vector<std::uint8_t> random_bytes(std::size_t count, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> byte(0, 255);
  std::vector<std::uint8_t> out(count);
  for (auto& b : out) b = static_cast<std::uint8_t>(byte(rng));
  return out;
}

inline double max_abs_diff(std::span<const Complex> a, std::span<const Complex> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// Dechirps one receiver-rate window with the base downchirp and returns the
// argmax of the paired spectrum in native bins.
inline std::size_t dechirp_argmax(std::span<const Complex> window, const LoraParams& params) {
  const auto& table = chirp_table(params.sf, params.osr_rx);
  std::vector<Complex> mixed(window.size());
  for (std::size_t n = 0; n < window.size(); ++n) mixed[n] = window[n] * std::conj(table.up(n));
  const auto spec = fft(mixed, mixed.size());
  const std::size_t bins = params.chips();
  std::size_t best = 0;
  double best_mag = -1.0;
  for (std::size_t b = 0; b < bins; ++b) {
    const double mag = std::abs(spec[b]) + std::abs(spec[(b + spec.size() - bins) % spec.size()]);
    if (mag > best_mag) {
      best_mag = mag;
      best = b;
    }
  }
  return best;
}

}  // namespace loramp::testing

#include "loramp/channel.hpp"
#include "loramp/tx_chain.hpp"

namespace loramp::testing {

// Frames of `nodes` starting `lead` receiver samples into the buffer, with
// `tail` zero samples after the longest one and AWGN referenced to the
// weakest user.
inline IqBuffer compose(const LoraParams& params, const std::vector<NodeTxState>& nodes,
                        std::size_t lead, double snr_db = kNoNoise, std::uint64_t seed = 1,
                        std::size_t tail = 4096) {
  std::vector<IqBuffer> frames;
  double weakest = std::numeric_limits<double>::infinity();
  for (auto node : nodes) {
    weakest = std::min(weakest, std::norm(node.gain()));
    node.to += static_cast<double>(lead) / params.rx_rate();
    frames.push_back(apply_impairments(build_frame(node.payload, params, params.osr_rec), node, params));
  }
  auto sum = superimpose(frames);
  sum.samples.resize(sum.size() + tail, Complex{});
  return add_awgn(sum, snr_db, weakest, params.osr_rx, seed);
}

inline std::vector<std::uint8_t> fixed_payload(const LoraParams& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto data = random_bytes(static_cast<std::size_t>(params.payload_bytes - 2), rng);
  data.push_back(0);
  data.push_back(0);
  const auto crc = crc16(std::span<const std::uint8_t>(data.data(), data.size() - 2));
  data[data.size() - 2] = static_cast<std::uint8_t>(crc >> 8);
  data.back() = static_cast<std::uint8_t>(crc & 0xFF);
  return data;
}

}  // namespace loramp::testing
