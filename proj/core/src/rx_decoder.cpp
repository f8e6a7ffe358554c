#include "loramp/rx_decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "loramp/coding.hpp"
#include "loramp/error.hpp"

namespace loramp {

SoftSymbol symbol_to_bit_probs(std::span<const std::uint32_t> values,
                               std::span<const double> logliks, int sf) {
  SoftSymbol out;
  out.p_zero.resize(static_cast<std::size_t>(sf));
  for (int n = 0; n < sf; ++n) {
    double l0 = 0.0, l1 = 0.0;
    std::size_t c0 = 0, c1 = 0;
    for (std::size_t k = 0; k < values.size(); ++k) {
      if ((values[k] >> n) & 1u) {
        l1 += logliks[k];
        ++c1;
      } else {
        l0 += logliks[k];
        ++c0;
      }
    }
    double p;
    if (c1 == 0) p = 1.0;
    else if (c0 == 0) p = 0.0;
    else if (l0 + l1 == 0.0) p = 0.5;
    else p = l1 / (l0 + l1);
    out.p_zero[static_cast<std::size_t>(n)] = p;
  }
  return out;
}

SoftSymbol soft_gray_shift(const SoftSymbol& p) {
  SoftSymbol out;
  const auto& in = p.p_zero;
  out.p_zero.resize(in.size());
  if (in.empty()) return out;
  out.p_zero[0] = 1.0 - in[0];
  double lower_all_zero = in[0];
  for (std::size_t n = 1; n < in.size(); ++n) {
    out.p_zero[n] = (1.0 - in[n]) * lower_all_zero + in[n] * (1.0 - lower_all_zero);
    lower_all_zero *= in[n];
  }
  return out;
}

SoftSymbol soft_gray_xor(const SoftSymbol& p) {
  SoftSymbol out;
  const auto& in = p.p_zero;
  out.p_zero.resize(in.size());
  for (std::size_t n = 0; n + 1 < in.size(); ++n)
    out.p_zero[n] = in[n] * in[n + 1] + (1.0 - in[n]) * (1.0 - in[n + 1]);
  if (!in.empty()) out.p_zero.back() = in.back();
  return out;
}

std::uint8_t soft_hamming_decode(std::span<const double> p_zero, int n_c) {
  if (p_zero.size() != static_cast<std::size_t>(n_c))
    throw DomainError("codeword probability count must equal the codeword length");
  return hamming_code(n_c).decode_soft(p_zero);
}

namespace {

DecodedPacket finish(std::vector<std::uint8_t> nibbles, const LoraParams& params) {
  whiten_nibbles(nibbles);
  DecodedPacket out;
  out.payload.resize(static_cast<std::size_t>(params.payload_bytes));
  for (std::size_t i = 0; i < out.payload.size(); ++i)
    out.payload[i] = static_cast<std::uint8_t>(nibbles[2 * i] | (nibbles[2 * i + 1] << 4));
  out.crc_ok = crc_matches(out.payload);
  return out;
}

void check_length(std::size_t windows, const LoraParams& params) {
  if (windows != static_cast<std::size_t>(symbol_count(params)))
    throw DomainError("expected " + std::to_string(symbol_count(params)) + " symbols, got " +
                      std::to_string(windows));
}

}  // namespace

DecodedPacket hard_path(std::span<const std::uint32_t> symbols, const LoraParams& params) {
  check_length(symbols.size(), params);
  const int sf = params.sf;
  const auto n_c = static_cast<std::size_t>(params.cr);
  const auto& code = hamming_code(params.cr);
  std::vector<std::uint8_t> nibbles;
  std::vector<std::uint32_t> block(n_c);
  for (std::size_t base = 0; base < symbols.size(); base += n_c) {
    for (std::size_t j = 0; j < n_c; ++j) block[j] = gray_map_rx(symbols[base + j], sf);
    for (std::uint8_t cw : deinterleave(block, sf, params.cr)) nibbles.push_back(code.decode_hard(cw));
  }
  return finish(std::move(nibbles), params);
}

SymbolCandidates node_candidates(const TopK& topk, int node) {
  SymbolCandidates out;
  for (const auto& cand : topk.candidates) {
    out.values.push_back(cand.symbols[static_cast<std::size_t>(node)]);
    out.logliks.push_back(cand.loglik);
  }
  return out;
}

std::vector<double> candidate_log_probs(std::span<const double> logliks, std::size_t bins) {
  constexpr double kFloor = -700.0;
  std::vector<double> out(logliks.size());
  if (logliks.empty()) return out;
  const double best = *std::max_element(logliks.begin(), logliks.end());
  const double noise = std::max(-best / static_cast<double>(bins), std::numeric_limits<double>::min());
  double total = 0.0;
  for (std::size_t k = 0; k < logliks.size(); ++k) {
    out[k] = (logliks[k] - best) / noise;
    total += std::exp(out[k]);
  }
  const double norm = std::log(total);
  for (auto& v : out) v = std::max(v - norm, kFloor);
  return out;
}

DecodedPacket soft_path(std::span<const SymbolCandidates> windows, const LoraParams& params) {
  check_length(windows.size(), params);
  const int sf = params.sf;
  const auto n_c = static_cast<std::size_t>(params.cr);
  const auto& code = hamming_code(params.cr);

  std::vector<SoftSymbol> bits(windows.size());
  for (std::size_t w = 0; w < windows.size(); ++w) {
    if (windows[w].values.empty()) {
      bits[w].p_zero.assign(static_cast<std::size_t>(sf), 0.5);
      continue;
    }
    const auto log_probs = candidate_log_probs(windows[w].logliks, params.rx_symbol_len());
    bits[w] = soft_gray_xor(soft_gray_shift(symbol_to_bit_probs(windows[w].values, log_probs, sf)));
  }

  std::vector<std::uint8_t> nibbles;
  std::vector<double> word(n_c);
  for (std::size_t base = 0; base < windows.size(); base += n_c) {
    for (int i = 0; i < sf; ++i) {
      for (std::size_t j = 0; j < n_c; ++j)
        word[j] = bits[base + j].p_zero[(static_cast<std::size_t>(i) + j) % static_cast<std::size_t>(sf)];
      nibbles.push_back(code.decode_soft(word));
    }
  }
  return finish(std::move(nibbles), params);
}

DecodedPacket soft_path(std::span<const TopK> windows, int node, const LoraParams& params) {
  std::vector<SymbolCandidates> per_window;
  per_window.reserve(windows.size());
  for (const auto& w : windows) per_window.push_back(node_candidates(w, node));
  return soft_path(per_window, params);
}

}  // namespace loramp
