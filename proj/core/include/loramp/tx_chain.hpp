#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "loramp/params.hpp"

namespace loramp {

// Payload bytes -> chirp symbol values (whitening, Hamming, interleaving,
// inverse Gray mapping). Payload length must equal params.payload_bytes.
std::vector<std::uint32_t> encode_symbols(std::span<const std::uint8_t> payload,
                                          const LoraParams& params);

IqBuffer css_modulate(std::uint32_t s, const LoraParams& params, int osr);

// Preamble, SFD and data chirps at `osr` samples per chip.
IqBuffer build_frame(std::span<const std::uint8_t> payload, const LoraParams& params, int osr);
IqBuffer build_frame_symbols(std::span<const std::uint32_t> symbols, const LoraParams& params,
                             int osr);

}  // namespace loramp
