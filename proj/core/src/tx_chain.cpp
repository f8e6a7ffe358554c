#include "loramp/tx_chain.hpp"

#include <algorithm>
#include <string>

#include "loramp/coding.hpp"
#include "loramp/dsp.hpp"
#include "loramp/error.hpp"

namespace loramp {

std::vector<std::uint32_t> encode_symbols(std::span<const std::uint8_t> payload,
                                          const LoraParams& params) {
  if (payload.size() != static_cast<std::size_t>(params.payload_bytes))
    throw ConfigError("payload must be " + std::to_string(params.payload_bytes) + " bytes");
  const int sf = params.sf;
  const int n_c = params.cr;

  std::vector<std::uint8_t> nibbles;
  nibbles.reserve(payload.size() * 2 + static_cast<std::size_t>(sf));
  for (std::uint8_t b : payload) {
    nibbles.push_back(b & 0x0F);
    nibbles.push_back(b >> 4);
  }
  while (nibbles.size() % static_cast<std::size_t>(sf) != 0) nibbles.push_back(0);
  whiten_nibbles(nibbles);

  const auto& code = hamming_code(n_c);
  std::vector<std::uint32_t> symbols;
  symbols.reserve(static_cast<std::size_t>(symbol_count(params)));
  std::vector<std::uint8_t> block(static_cast<std::size_t>(sf));
  for (std::size_t base = 0; base < nibbles.size(); base += static_cast<std::size_t>(sf)) {
    for (int i = 0; i < sf; ++i) block[static_cast<std::size_t>(i)] = code.encode(nibbles[base + i]);
    for (std::uint32_t s_g : interleave(block, sf, n_c)) symbols.push_back(gray_encode_tx(s_g, sf));
  }
  return symbols;
}

IqBuffer css_modulate(std::uint32_t s, const LoraParams& params, int osr) {
  if (osr < 1) throw ConfigError("osr must be >= 1");
  return {chirp_table(params.sf, osr).symbol(s), osr * params.bw};
}

IqBuffer build_frame_symbols(std::span<const std::uint32_t> symbols, const LoraParams& params,
                             int osr) {
  const auto& table = chirp_table(params.sf, osr);
  const auto up = table.upchirp();
  const std::size_t len = table.size();

  IqBuffer frame;
  frame.rate = osr * params.bw;
  frame.samples.reserve(data_offset(params, osr) + symbols.size() * len);
  for (int p = 0; p < params.preamble_len; ++p)
    frame.samples.insert(frame.samples.end(), up.begin(), up.end());
  for (int q = 0; q < kSfdQuarters; ++q) {
    const std::size_t begin = (q % 4) * len / 4;
    for (std::size_t n = begin; n < begin + len / 4; ++n) frame.samples.push_back(std::conj(up[n]));
  }
  for (std::uint32_t s : symbols)
    for (std::size_t n = 0; n < len; ++n) frame.samples.push_back(table.symbol_sample(s, n));
  return frame;
}

IqBuffer build_frame(std::span<const std::uint8_t> payload, const LoraParams& params, int osr) {
  const auto symbols = encode_symbols(payload, params);
  return build_frame_symbols(symbols, params, osr);
}

}  // namespace loramp
