#include "loramp/trace_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "loramp/error.hpp"

namespace loramp {
namespace {

using nlohmann::json;

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big)
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  return v;
}

std::string to_hex(const std::vector<std::uint8_t>& bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  for (auto b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

std::vector<std::uint8_t> from_hex(const std::string& text) {
  if (text.size() % 2 != 0) throw FormatError("payload hex string has odd length");
  auto digit = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw FormatError("invalid hex digit in payload");
  };
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i < text.size(); i += 2)
    out.push_back(static_cast<std::uint8_t>(digit(text[i]) * 16 + digit(text[i + 1])));
  return out;
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  auto out = path;
  out += ".json";
  return out;
}

void write_trace(const std::filesystem::path& path, const IqBuffer& signal,
                 const TraceMetadata& meta) {
  std::ofstream bin(path, std::ios::binary | std::ios::trunc);
  if (!bin) throw FormatError("cannot open " + path.string() + " for writing");
  for (const auto& x : signal.samples) {
    for (float f : {static_cast<float>(x.real()), static_cast<float>(x.imag())}) {
      const std::uint32_t word = to_le(std::bit_cast<std::uint32_t>(f));
      bin.write(reinterpret_cast<const char*>(&word), sizeof word);
    }
  }
  if (!bin) throw FormatError("failed writing " + path.string());

  json doc;
  doc["format"] = "cf32le";
  doc["rate"] = signal.rate;
  doc["samples"] = signal.size();
  doc["sf"] = meta.params.sf;
  doc["bw"] = meta.params.bw;
  doc["cr"] = meta.params.cr;
  doc["osr_rx"] = meta.params.osr_rx;
  doc["osr_rec"] = meta.params.osr_rec;
  doc["preamble_len"] = meta.params.preamble_len;
  doc["payload_bytes"] = meta.params.payload_bytes;
  doc["users"] = meta.users;
  doc["snr_db"] = std::isfinite(meta.snr_db) ? json(meta.snr_db) : json(nullptr);
  doc["nodes"] = json::array();
  for (const auto& n : meta.nodes) {
    doc["nodes"].push_back({{"cfo", n.cfo},
                            {"to", n.to},
                            {"power_db", n.power_db},
                            {"h_re", n.h.real()},
                            {"h_im", n.h.imag()},
                            {"payload", to_hex(n.payload)}});
  }
  std::ofstream side(sidecar_path(path), std::ios::trunc);
  if (!side) throw FormatError("cannot write sidecar for " + path.string());
  side << doc.dump(2) << '\n';
}

Trace read_trace(const std::filesystem::path& path) {
  const auto side_path = sidecar_path(path);
  std::ifstream side(side_path);
  if (!side) throw FormatError("missing trace sidecar " + side_path.string());

  Trace trace;
  std::size_t count = 0;
  try {
    const json doc = json::parse(side);
    if (doc.value("format", "") != "cf32le") throw FormatError("unsupported sample format");
    auto& p = trace.meta.params;
    p.sf = doc.at("sf").get<int>();
    p.bw = doc.at("bw").get<double>();
    p.cr = doc.at("cr").get<int>();
    p.osr_rx = doc.at("osr_rx").get<int>();
    p.osr_rec = doc.value("osr_rec", p.osr_rec);
    p.preamble_len = doc.value("preamble_len", p.preamble_len);
    p.payload_bytes = doc.value("payload_bytes", p.payload_bytes);
    trace.meta.rate = doc.at("rate").get<double>();
    trace.meta.users = doc.at("users").get<int>();
    trace.meta.snr_db = doc.contains("snr_db") && doc["snr_db"].is_number()
                            ? doc["snr_db"].get<double>()
                            : std::numeric_limits<double>::infinity();
    count = doc.at("samples").get<std::size_t>();
    for (const auto& n : doc.value("nodes", json::array())) {
      TraceNode node;
      node.cfo = n.at("cfo").get<double>();
      node.to = n.at("to").get<double>();
      node.power_db = n.at("power_db").get<double>();
      node.h = {n.at("h_re").get<double>(), n.at("h_im").get<double>()};
      node.payload = from_hex(n.at("payload").get<std::string>());
      trace.meta.nodes.push_back(std::move(node));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed trace metadata: ") + e.what());
  }
  try {
    trace.meta.params.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid trace parameters: ") + e.what());
  }

  std::error_code ec;
  const auto bytes = std::filesystem::file_size(path, ec);
  if (ec) throw FormatError("missing trace samples " + path.string());
  if (bytes != count * 8) throw FormatError("trace sample file is truncated or oversized");

  std::ifstream bin(path, std::ios::binary);
  trace.signal.rate = trace.meta.rate;
  trace.signal.samples.resize(count);
  std::vector<std::uint32_t> words(count * 2);
  bin.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(bytes));
  if (!bin) throw FormatError("failed reading trace samples");
  for (std::size_t i = 0; i < count; ++i) {
    const float re = std::bit_cast<float>(to_le(words[2 * i]));
    const float im = std::bit_cast<float>(to_le(words[2 * i + 1]));
    trace.signal.samples[i] = {re, im};
  }
  return trace;
}

}  // namespace loramp
