#include "loramp/receiver.hpp"

#include <algorithm>
#include <cmath>

#include "loramp/error.hpp"
#include "window.hpp"

namespace loramp {
namespace {

// The same estimate seen from a window that starts `dt` seconds later.
OffsetEstimate shift_window(const OffsetEstimate& est, double dt, const LoraParams& params) {
  OffsetEstimate out = est;
  out.to_hat = est.to_hat - dt;
  const auto bins = bin_shifts(params, out.cfo_hat, out.to_hat);
  out.f_up = bins.cfo_bins - bins.to_bins;
  out.f_down = bins.cfo_bins + bins.to_bins;
  return out;
}

}  // namespace

ReceiveResult synchronize_at(const IqBuffer& signal, std::size_t start, int users,
                             const LoraParams& params, const ReceiverOptions& options) {
  ReceiveResult result;
  result.start = start;
  const std::size_t trunc = default_truncation(params, options.to_max_frac);
  try {
    result.offsets = estimate_offsets(signal, result.start, users, params);
    // A window one symbol off still sees preamble upchirps; the SFD decides.
    const std::size_t len = params.rx_symbol_len();
    const double here = sfd_fit_fraction(signal, result.start, result.offsets, params);
    std::size_t better = result.start;
    double better_fit = here;
    for (long long dir : {-1LL, 1LL}) {
      const long long cand = static_cast<long long>(result.start) + dir * static_cast<long long>(len);
      if (cand < 0) continue;
      const double e = sfd_fit_fraction(signal, static_cast<std::size_t>(cand), result.offsets, params);
      if (e > better_fit) {
        better_fit = e;
        better = static_cast<std::size_t>(cand);
      }
    }
    if (better != result.start) {
      result.start = better;
      result.offsets = estimate_offsets(signal, result.start, users, params);
    }
    // Re-align the window with the earliest user.
    double earliest = result.offsets.front().to_hat;
    for (const auto& est : result.offsets) earliest = std::min(earliest, est.to_hat);
    const long long shift = std::llround(earliest * params.rx_rate());
    const long long moved = static_cast<long long>(result.start) + shift;
    if (shift != 0 && moved >= 0 &&
        std::abs(earliest) <= 0.25 * params.symbol_duration()) {
      result.start = static_cast<std::size_t>(moved);
      const double dt = static_cast<double>(shift) / params.rx_rate();
      for (auto& est : result.offsets) est = shift_window(est, dt, params);
    }
    result.channels = estimate_channels(signal, result.start, result.offsets, params, trunc);
  } catch (const EstimationError& e) {
    result.status = RxStatus::EstimationFailed;
    result.message = e.what();
    return result;
  }
  result.status = RxStatus::Ok;
  for (std::size_t m = 0; m < result.offsets.size(); ++m)
    result.nodes.push_back({result.offsets[m].cfo_hat, result.offsets[m].to_hat,
                            result.channels[m].h_hat});
  return result;
}

ReceiveResult receive_at(const IqBuffer& signal, std::size_t start, int users,
                         const LoraParams& params, const ReceiverOptions& options) {
  ReceiveResult result = synchronize_at(signal, start, users, params, options);
  if (result.status != RxStatus::Ok) return result;
  const std::size_t trunc = default_truncation(params, options.to_max_frac);

  DemodOptions demod;
  demod.strategy = options.strategy;
  demod.top_k = options.top_k;
  demod.trunc = trunc;
  demod.noise_threshold = options.noise_threshold;
  demod.peak_cap = options.peak_cap;
  const WindowDemodulator demodulator(params, result.nodes, demod);

  const int windows = symbol_count(params);
  const std::size_t len = params.rx_symbol_len();
  const auto first = static_cast<long long>(result.start + data_offset(params, params.osr_rx));
  result.windows.reserve(static_cast<std::size_t>(windows));
  for (int i = 0; i < windows; ++i) {
    const auto win = detail::window_at(signal, first + static_cast<long long>(i) * static_cast<long long>(len), len);
    result.windows.push_back(demodulator.demodulate_window(win, i));
  }

  result.hard_symbols.assign(static_cast<std::size_t>(users), {});
  for (int m = 0; m < users; ++m) {
    auto& symbols = result.hard_symbols[static_cast<std::size_t>(m)];
    for (const auto& w : result.windows)
      symbols.push_back(w.erased() ? 0u : w.candidates.front().symbols[static_cast<std::size_t>(m)]);
    result.hard.push_back(hard_path(symbols, params));
    result.soft.push_back(soft_path(result.windows, m, params));
  }
  return result;
}

namespace {

ReceiveResult not_detected() {
  ReceiveResult result;
  result.status = RxStatus::NotDetected;
  result.message = "no preamble found";
  return result;
}

}  // namespace

ReceiveResult synchronize(const IqBuffer& signal, int users, const LoraParams& params,
                          const ReceiverOptions& options) {
  const auto start = detect_preamble(signal, params);
  return start ? synchronize_at(signal, *start, users, params, options) : not_detected();
}

ReceiveResult receive(const IqBuffer& signal, int users, const LoraParams& params,
                      const ReceiverOptions& options) {
  const auto start = detect_preamble(signal, params);
  return start ? receive_at(signal, *start, users, params, options) : not_detected();
}

}  // namespace loramp
