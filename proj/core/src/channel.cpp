#include "loramp/channel.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "loramp/dsp.hpp"
#include "loramp/error.hpp"

namespace loramp {
namespace {

bool same_rate(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(a, b); }

}  // namespace

IqBuffer apply_impairments(const IqBuffer& frame, const NodeTxState& node,
                           const LoraParams& params) {
  if (node.to < 0.0) throw DomainError("time offset must be >= 0");
  if (!same_rate(frame.rate, params.rec_rate()))
    throw DomainError("frame must be sampled on the reconstruction grid");

  const long long shift = rec_grid_shift(node.to, params);
  const long long dec = params.decimation();
  const long long len = static_cast<long long>(frame.size());
  const Complex gain = node.gain();
  const double cycles_per_sample = node.cfo / params.rec_rate();

  IqBuffer out;
  out.rate = params.rx_rate();
  out.samples.assign(static_cast<std::size_t>((len + shift + dec - 1) / dec), Complex{});
  // Only the samples kept by the decimator are computed; the rotation is
  // indexed by the frame's own sample so it is continuous across symbols.
  for (std::size_t r = 0; r < out.samples.size(); ++r) {
    const long long n = static_cast<long long>(r) * dec - shift;
    if (n < 0 || n >= len) continue;
    out.samples[r] = gain * frame.samples[static_cast<std::size_t>(n)] *
                     unit_phasor(cycles_per_sample * static_cast<double>(n));
  }
  return out;
}

IqBuffer superimpose(std::span<const IqBuffer> frames) {
  IqBuffer out;
  if (frames.empty()) return out;
  out.rate = frames.front().rate;
  std::size_t len = 0;
  for (const auto& f : frames) {
    if (!same_rate(f.rate, out.rate)) throw DomainError("cannot superimpose mixed sample rates");
    len = std::max(len, f.size());
  }
  out.samples.assign(len, Complex{});
  for (const auto& f : frames)
    for (std::size_t i = 0; i < f.size(); ++i) out.samples[i] += f.samples[i];
  return out;
}

double noise_variance(double snr_db, double ref_power, int osr) {
  return ref_power * osr / std::pow(10.0, snr_db / 10.0);
}

IqBuffer add_awgn(const IqBuffer& signal, double snr_db, double ref_power, int osr,
                  std::uint64_t seed) {
  IqBuffer out = signal;
  if (std::isinf(snr_db) && snr_db > 0) return out;
  if (!(ref_power > 0.0)) throw DomainError("reference power must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, std::sqrt(noise_variance(snr_db, ref_power, osr) / 2.0));
  for (auto& x : out.samples) {
    const double re = gauss(rng);
    const double im = gauss(rng);
    x += Complex{re, im};
  }
  return out;
}

}  // namespace loramp
