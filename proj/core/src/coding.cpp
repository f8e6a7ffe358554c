#include "loramp/coding.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <memory>
#include <string>

#include "loramp/error.hpp"

namespace loramp {

std::vector<std::uint8_t> whitening_sequence(std::size_t count) {
  std::vector<std::uint8_t> key(count);
  std::uint8_t state = 0xFF;
  for (std::size_t k = 0; k < count; ++k) {
    key[k] = state;
    const unsigned feedback = ((state >> 7) ^ (state >> 5) ^ (state >> 4) ^ (state >> 3)) & 1u;
    state = static_cast<std::uint8_t>((state << 1) | feedback);
  }
  return key;
}

std::vector<std::uint8_t> whiten(std::span<const std::uint8_t> bytes) {
  const auto key = whitening_sequence(bytes.size());
  std::vector<std::uint8_t> out(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = bytes[i] ^ key[i];
  return out;
}

void whiten_nibbles(std::span<std::uint8_t> nibbles) {
  const auto key = whitening_sequence((nibbles.size() + 1) / 2);
  for (std::size_t i = 0; i < nibbles.size(); ++i) {
    const std::uint8_t k = key[i / 2];
    nibbles[i] ^= (i % 2 == 0) ? (k & 0x0F) : (k >> 4);
  }
}

std::uint16_t crc16(std::span<const std::uint8_t> bytes) {
  std::uint16_t crc = 0xFFFF;
  for (std::uint8_t b : bytes) {
    crc ^= static_cast<std::uint16_t>(b) << 8;
    for (int i = 0; i < 8; ++i)
      crc = (crc & 0x8000) ? static_cast<std::uint16_t>((crc << 1) ^ 0x1021)
                           : static_cast<std::uint16_t>(crc << 1);
  }
  return crc;
}

std::vector<std::uint8_t> append_crc(std::span<const std::uint8_t> data) {
  std::vector<std::uint8_t> out(data.begin(), data.end());
  const std::uint16_t crc = crc16(data);
  out.push_back(static_cast<std::uint8_t>(crc >> 8));
  out.push_back(static_cast<std::uint8_t>(crc & 0xFF));
  return out;
}

bool crc_matches(std::span<const std::uint8_t> payload) {
  if (payload.size() < 2) return false;
  const auto data = payload.first(payload.size() - 2);
  const std::uint16_t crc = crc16(data);
  return payload[payload.size() - 2] == (crc >> 8) && payload.back() == (crc & 0xFF);
}

namespace {

std::uint8_t encode_word(std::uint8_t nibble, int n_c) {
  const unsigned d1 = nibble & 1u, d2 = (nibble >> 1) & 1u, d3 = (nibble >> 2) & 1u,
                 d4 = (nibble >> 3) & 1u;
  unsigned word = nibble & 0xFu;
  if (n_c == 5) return static_cast<std::uint8_t>(word | ((d1 ^ d2 ^ d3 ^ d4) << 4));
  const unsigned p1 = d1 ^ d2 ^ d4, p2 = d1 ^ d3 ^ d4, p3 = d2 ^ d3 ^ d4;
  word |= (p1 << 4) | (p2 << 5);
  if (n_c >= 7) word |= p3 << 6;
  if (n_c == 8) word |= (static_cast<unsigned>(std::popcount(word)) & 1u) << 7;
  return static_cast<std::uint8_t>(word);
}

constexpr double kProbClamp = 1e-12;

}  // namespace

HammingCode::HammingCode(int n_c) : n_c_(n_c) {
  if (n_c < 5 || n_c > 8) throw ConfigError("codeword length must be in 5..8");
  for (unsigned d = 0; d < 16; ++d) codewords_[d] = encode_word(static_cast<std::uint8_t>(d), n_c);
  cosets_.resize(std::size_t{1} << (n_c - 4));
  for (unsigned e = 0; e < (1u << n_c); ++e)
    cosets_[syndrome(static_cast<std::uint8_t>(e))].push_back(static_cast<std::uint8_t>(e));
  for (auto& coset : cosets_) {
    std::sort(coset.begin(), coset.end(), [](std::uint8_t a, std::uint8_t b) {
      const int wa = std::popcount(a), wb = std::popcount(b);
      if (wa != wb) return wa < wb;
      const int da = std::popcount(static_cast<unsigned>(a & 0xF));
      const int db = std::popcount(static_cast<unsigned>(b & 0xF));
      if (da != db) return da < db;
      return a < b;
    });
  }
}

unsigned HammingCode::syndrome(std::uint8_t word) const noexcept {
  return static_cast<unsigned>(word ^ codewords_[word & 0xF]) >> 4;
}

std::uint8_t HammingCode::decode_hard(std::uint8_t word) const noexcept {
  const std::uint8_t leader = cosets_[syndrome(word)].front();
  return static_cast<std::uint8_t>((word ^ leader) & 0xF);
}

std::uint8_t HammingCode::decode_soft(std::span<const double> p_zero) const {
  std::array<double, 8> reliability{};
  std::uint8_t word = 0;
  for (int j = 0; j < n_c_; ++j) {
    const double p = p_zero[static_cast<std::size_t>(j)];
    if (p < 0.5) word |= static_cast<std::uint8_t>(1u << j);
    // Symmetric in p and 1 - p so that equally confident zeros and ones tie.
    const double doubt = std::clamp(std::min(p, 1.0 - p), kProbClamp, 0.5);
    reliability[static_cast<std::size_t>(j)] = std::log((1.0 - doubt) / doubt);
  }
  std::uint8_t best = 0;
  double best_cost = 0.0;
  bool first = true;
  for (std::uint8_t e : cosets_[syndrome(word)]) {
    double cost = 0.0;
    for (int j = 0; j < n_c_; ++j)
      if (e & (1u << j)) cost += reliability[static_cast<std::size_t>(j)];
    if (first || cost < best_cost) {
      best = e;
      best_cost = cost;
      first = false;
    }
  }
  return static_cast<std::uint8_t>((word ^ best) & 0xF);
}

const HammingCode& hamming_code(int n_c) {
  static const std::array<HammingCode, 4> codes{HammingCode(5), HammingCode(6), HammingCode(7),
                                                HammingCode(8)};
  if (n_c < 5 || n_c > 8) throw ConfigError("codeword length must be in 5..8");
  return codes[static_cast<std::size_t>(n_c - 5)];
}

std::uint8_t hamming_encode(std::uint8_t nibble, int n_c) {
  return hamming_code(n_c).encode(nibble);
}

std::vector<std::uint32_t> interleave(std::span<const std::uint8_t> codewords, int sf, int n_c) {
  std::vector<std::uint32_t> symbols(static_cast<std::size_t>(n_c), 0);
  for (int i = 0; i < sf; ++i)
    for (int j = 0; j < n_c; ++j)
      if ((codewords[static_cast<std::size_t>(i)] >> j) & 1u)
        symbols[static_cast<std::size_t>(j)] |= 1u << ((i + j) % sf);
  return symbols;
}

std::vector<std::uint8_t> deinterleave(std::span<const std::uint32_t> symbols, int sf, int n_c) {
  std::vector<std::uint8_t> codewords(static_cast<std::size_t>(sf), 0);
  for (int i = 0; i < sf; ++i)
    for (int j = 0; j < n_c; ++j)
      if ((symbols[static_cast<std::size_t>(j)] >> ((i + j) % sf)) & 1u)
        codewords[static_cast<std::size_t>(i)] |= static_cast<std::uint8_t>(1u << j);
  return codewords;
}

std::uint32_t gray_map_rx(std::uint32_t s, int sf) noexcept {
  const std::uint32_t mask = (1u << sf) - 1u;
  const std::uint32_t shifted = (s + mask) & mask;
  return shifted ^ (shifted >> 1);
}

std::uint32_t gray_encode_tx(std::uint32_t s_g, int sf) noexcept {
  std::uint32_t b = s_g;
  for (unsigned shift = 1; shift < 32; shift <<= 1) b ^= b >> shift;
  return (b + 1u) & ((1u << sf) - 1u);
}

}  // namespace loramp
