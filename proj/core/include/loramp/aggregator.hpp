#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace loramp {

enum class AggregateFn { Sum, Average, Min, Max };

AggregateFn parse_aggregate_fn(std::string_view name);
std::string_view to_string(AggregateFn fn);

struct AggregateResult {
  double value = 0.0;
  std::size_t count = 0;
};

// nullopt when there are no contributors.
std::optional<AggregateResult> aggregate(std::span<const double> values, AggregateFn fn);

// Readings are int16 big-endian in payload bytes 0..1, scaled by 0.01.
inline constexpr double kReadingScale = 0.01;
double decode_reading(std::span<const std::uint8_t> payload);
void encode_reading(double value, std::span<std::uint8_t> payload);

}  // namespace loramp
