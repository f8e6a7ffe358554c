#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "loramp/params.hpp"

namespace loramp::detail {

// len samples starting at `start`, zero-filled outside the buffer.
inline std::vector<Complex> window_at(const IqBuffer& signal, long long start, std::size_t len) {
  std::vector<Complex> out(len);
  const long long size = static_cast<long long>(signal.size());
  const long long lo = std::max(start, 0LL);
  const long long hi = std::min(start + static_cast<long long>(len), size);
  for (long long i = lo; i < hi; ++i)
    out[static_cast<std::size_t>(i - start)] = signal.samples[static_cast<std::size_t>(i)];
  return out;
}

}  // namespace loramp::detail
