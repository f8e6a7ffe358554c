#include "loramp/aggregator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "loramp/error.hpp"

namespace loramp {

AggregateFn parse_aggregate_fn(std::string_view name) {
  if (name == "sum") return AggregateFn::Sum;
  if (name == "average") return AggregateFn::Average;
  if (name == "min") return AggregateFn::Min;
  if (name == "max") return AggregateFn::Max;
  throw ConfigError("unknown aggregate function '" + std::string(name) + "'");
}

std::string_view to_string(AggregateFn fn) {
  switch (fn) {
    case AggregateFn::Sum: return "sum";
    case AggregateFn::Average: return "average";
    case AggregateFn::Min: return "min";
    case AggregateFn::Max: return "max";
  }
  return "?";
}

std::optional<AggregateResult> aggregate(std::span<const double> values, AggregateFn fn) {
  if (values.empty()) return std::nullopt;
  AggregateResult out;
  out.count = values.size();
  switch (fn) {
    case AggregateFn::Sum: out.value = std::accumulate(values.begin(), values.end(), 0.0); break;
    case AggregateFn::Average:
      out.value = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
      break;
    case AggregateFn::Min: out.value = *std::min_element(values.begin(), values.end()); break;
    case AggregateFn::Max: out.value = *std::max_element(values.begin(), values.end()); break;
  }
  return out;
}

double decode_reading(std::span<const std::uint8_t> payload) {
  if (payload.size() < 2) throw DomainError("payload too short for a reading");
  const auto raw = static_cast<std::int16_t>((payload[0] << 8) | payload[1]);
  return raw * kReadingScale;
}

void encode_reading(double value, std::span<std::uint8_t> payload) {
  if (payload.size() < 2) throw DomainError("payload too short for a reading");
  const long scaled = std::lround(value / kReadingScale);
  const auto raw = static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(scaled, -32768L, 32767L)));
  payload[0] = static_cast<std::uint8_t>(raw >> 8);
  payload[1] = static_cast<std::uint8_t>(raw & 0xFF);
}

}  // namespace loramp
