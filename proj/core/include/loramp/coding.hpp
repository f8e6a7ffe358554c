#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace loramp {

// Whitening keystream: one byte per payload byte, LFSR x^8+x^6+x^5+x^4+1
// seeded with 0xFF. Byte k is the register contents after k clocks.
std::vector<std::uint8_t> whitening_sequence(std::size_t count);
std::vector<std::uint8_t> whiten(std::span<const std::uint8_t> bytes);

// Nibble-stream whitening (nibble 2k takes the low half of keystream byte k,
// nibble 2k+1 the high half). Self-inverse.
void whiten_nibbles(std::span<std::uint8_t> nibbles);

// CRC-16/CCITT-FALSE.
std::uint16_t crc16(std::span<const std::uint8_t> bytes);

// Data bytes followed by their CRC (big-endian).
std::vector<std::uint8_t> append_crc(std::span<const std::uint8_t> data);
bool crc_matches(std::span<const std::uint8_t> payload);

// Systematic (n_c, 4) Hamming family. Codeword bit j holds position j of
// [d1 d2 d3 d4 | parity...]; d1 is the nibble's least significant bit.
class HammingCode {
 public:
  explicit HammingCode(int n_c);

  int length() const noexcept { return n_c_; }
  std::uint8_t encode(std::uint8_t nibble) const noexcept { return codewords_[nibble & 0xF]; }
  unsigned syndrome(std::uint8_t word) const noexcept;
  std::uint8_t decode_hard(std::uint8_t word) const noexcept;

  // p_zero[j] = probability that codeword position j is 0.
  std::uint8_t decode_soft(std::span<const double> p_zero) const;

  // Error patterns sharing a syndrome, in tie-break order.
  std::span<const std::uint8_t> coset(unsigned syndrome) const { return cosets_[syndrome]; }

 private:
  int n_c_;
  std::uint8_t codewords_[16];
  std::vector<std::vector<std::uint8_t>> cosets_;
};

const HammingCode& hamming_code(int n_c);

std::uint8_t hamming_encode(std::uint8_t nibble, int n_c);

// Diagonal interleaver: symbol j bit ((i + j) mod sf) = codeword i bit j.
std::vector<std::uint32_t> interleave(std::span<const std::uint8_t> codewords, int sf, int n_c);
std::vector<std::uint8_t> deinterleave(std::span<const std::uint32_t> symbols, int sf, int n_c);

// Receiver-side Gray map (s' = s - 1 mod N, then s' ^ (s' >> 1)) and its
// transmitter-side inverse.
std::uint32_t gray_map_rx(std::uint32_t s, int sf) noexcept;
std::uint32_t gray_encode_tx(std::uint32_t s_g, int sf) noexcept;

}  // namespace loramp
