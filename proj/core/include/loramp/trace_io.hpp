#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "loramp/params.hpp"

namespace loramp {

struct TraceNode {
  double cfo = 0.0;
  double to = 0.0;
  double power_db = 0.0;
  Complex h{1.0, 0.0};
  std::vector<std::uint8_t> payload;
};

struct TraceMetadata {
  LoraParams params;
  double rate = 0.0;
  int users = 0;
  double snr_db = 0.0;
  std::vector<TraceNode> nodes;  // ground truth, empty for captures
};

struct Trace {
  IqBuffer signal;
  TraceMetadata meta;
};

// Samples go to `path` as interleaved little-endian float32 I/Q, metadata to
// the sidecar `path` + ".json".
void write_trace(const std::filesystem::path& path, const IqBuffer& signal,
                 const TraceMetadata& meta);
Trace read_trace(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& path);

}  // namespace loramp
