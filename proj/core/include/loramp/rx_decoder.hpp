#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "loramp/demod.hpp"
#include "loramp/params.hpp"

namespace loramp {

// p_zero[n] = probability that bit n (LSB first) is 0.
struct SoftSymbol {
  std::vector<double> p_zero;
};

SoftSymbol symbol_to_bit_probs(std::span<const std::uint32_t> values,
                               std::span<const double> logliks, int sf);

// Probabilities of the bits of (s - 1) mod N given those of s.
SoftSymbol soft_gray_shift(const SoftSymbol& p);

// Probabilities of the bits of s' ^ (s' >> 1) given those of s'.
SoftSymbol soft_gray_xor(const SoftSymbol& p);

std::uint8_t soft_hamming_decode(std::span<const double> p_zero, int n_c);

struct DecodedPacket {
  std::vector<std::uint8_t> payload;
  bool crc_ok = false;
};

DecodedPacket hard_path(std::span<const std::uint32_t> symbols, const LoraParams& params);

// One node's candidates in one window. Empty = erased window.
struct SymbolCandidates {
  std::vector<std::uint32_t> values;
  std::vector<double> logliks;
};

SymbolCandidates node_candidates(const TopK& topk, int node);

// Candidate log-probabilities normalized over the list. Logliks are negated
// squared distances over `bins` FFT bins; the best candidate's distance per
// bin serves as the noise variance.
std::vector<double> candidate_log_probs(std::span<const double> logliks, std::size_t bins);

// Candidates carry raw logliks; they are normalized with candidate_log_probs
// before the bit conversion.
DecodedPacket soft_path(std::span<const SymbolCandidates> windows, const LoraParams& params);
DecodedPacket soft_path(std::span<const TopK> windows, int node, const LoraParams& params);

}  // namespace loramp
