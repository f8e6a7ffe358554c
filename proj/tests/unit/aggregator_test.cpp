#include <doctest.h>

#include <algorithm>
#include <random>

#include "loramp/aggregator.hpp"
#include "loramp/error.hpp"

using namespace loramp;

TEST_SUITE("aggregator") {
  TEST_CASE("examples") {
    const std::vector<double> three{1.0, 2.0, 3.0};
    const auto sum = aggregate(three, AggregateFn::Sum);
    REQUIRE(sum);
    CHECK(sum->value == 6.0);
    CHECK(sum->count == 3);
    const std::vector<double> single{-7.25};
    CHECK(aggregate(single, AggregateFn::Average)->value == -7.25);
    const std::vector<double> pair{-1.0, 4.0};
    CHECK(aggregate(pair, AggregateFn::Max)->value == 4.0);
    CHECK(aggregate(pair, AggregateFn::Min)->value == -1.0);
  }

  TEST_CASE("no contributors signals no data") {
    for (auto fn : {AggregateFn::Sum, AggregateFn::Average, AggregateFn::Min, AggregateFn::Max})
      CHECK_FALSE(aggregate(std::span<const double>{}, fn).has_value());
  }

  TEST_CASE("permutation invariance and sum = count * average") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> reading(-300.0, 300.0);
    for (int t = 0; t < 200; ++t) {
      std::vector<double> v(1 + t % 9);
      for (auto& x : v) x = reading(rng);
      auto shuffled = v;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      for (auto fn : {AggregateFn::Sum, AggregateFn::Average, AggregateFn::Min, AggregateFn::Max}) {
        const double a = aggregate(v, fn)->value, b = aggregate(shuffled, fn)->value;
        CHECK(a == doctest::Approx(b).epsilon(1e-12));
      }
      const auto sum = aggregate(v, AggregateFn::Sum)->value;
      const auto avg = aggregate(v, AggregateFn::Average);
      CHECK(std::abs(sum - static_cast<double>(avg->count) * avg->value) <= 1e-12 * (1.0 + std::abs(sum)));
    }
  }

  TEST_CASE("function names") {
    for (auto fn : {AggregateFn::Sum, AggregateFn::Average, AggregateFn::Min, AggregateFn::Max})
      CHECK(parse_aggregate_fn(to_string(fn)) == fn);
    CHECK_THROWS_AS(parse_aggregate_fn("median"), ConfigError);
  }

  TEST_CASE("fixed-point readings") {
    std::vector<std::uint8_t> payload(12, 0xAA);
    encode_reading(-12.34, payload);
    CHECK(payload[0] == 0xFB);  // -1234 = 0xFB2E
    CHECK(payload[1] == 0x2E);
    CHECK(payload[2] == 0xAA);
    CHECK(decode_reading(payload) == doctest::Approx(-12.34));
    for (double v : {0.0, 0.01, -0.01, 327.67, -327.68, 21.5}) {
      encode_reading(v, payload);
      CHECK(decode_reading(payload) == doctest::Approx(v));
    }
    encode_reading(1e6, payload);
    CHECK(decode_reading(payload) == doctest::Approx(327.67));
    std::vector<std::uint8_t> tiny(1);
    CHECK_THROWS_AS(decode_reading(tiny), DomainError);
  }
}
