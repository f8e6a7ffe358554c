#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "loramp/demod.hpp"
#include "loramp/params.hpp"
#include "loramp/rx_decoder.hpp"
#include "loramp/sync.hpp"

namespace loramp {

struct ReceiverOptions {
  Strategy strategy = Strategy::MFullPeak;
  int top_k = 2;
  double to_max_frac = 0.1;
  double noise_threshold = 0.0;  // used by the V-peak strategy
  std::size_t peak_cap = kDefaultPeakCap;
};

enum class RxStatus { Ok, NotDetected, EstimationFailed };

struct ReceiveResult {
  RxStatus status = RxStatus::NotDetected;
  std::string message;
  std::size_t start = 0;
  std::vector<OffsetEstimate> offsets;
  std::vector<ChannelEstimate> channels;
  std::vector<NodeEstimate> nodes;
  std::vector<TopK> windows;
  std::vector<std::vector<std::uint32_t>> hard_symbols;  // [node][window]
  std::vector<DecodedPacket> hard;
  std::vector<DecodedPacket> soft;
};

// Detection, offset and channel estimation, per-window demodulation, hard and
// soft decoding of `users` superimposed packets.
ReceiveResult receive(const IqBuffer& signal, int users, const LoraParams& params,
                      const ReceiverOptions& options);

// Offset and channel estimation only (no demodulation), from a known window
// start. The start moves by one symbol when the preamble and SFD fit better
// there, and the window is re-aligned to the earliest estimated user.
ReceiveResult synchronize_at(const IqBuffer& signal, std::size_t start, int users,
                             const LoraParams& params, const ReceiverOptions& options);

// Detection followed by synchronize_at.
ReceiveResult synchronize(const IqBuffer& signal, int users, const LoraParams& params,
                          const ReceiverOptions& options);

// Same pipeline from a known window start.
ReceiveResult receive_at(const IqBuffer& signal, std::size_t start, int users,
                         const LoraParams& params, const ReceiverOptions& options);

}  // namespace loramp
