#include <doctest.h>

#include "helpers.hpp"
#include "loramp/error.hpp"
#include "loramp/receiver.hpp"
#include "loramp/sim.hpp"
#include "loramp/tx_chain.hpp"

using namespace loramp;
using loramp::testing::compose;
using loramp::testing::fixed_payload;

TEST_SUITE("receiver") {
  TEST_CASE("single user loopback over 100 payloads") {
    const LoraParams p;
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> cfo(-5000.0, 5000.0), to(0.0, 0.1 * p.symbol_duration());
    int decoded = 0;
    for (int t = 0; t < 100; ++t) {
      NodeTxState node;
      node.payload = fixed_payload(p, rng());
      node.cfo = cfo(rng);
      node.to = to(rng);
      node.h = std::polar(1.0, 0.1 * t);
      const auto rx = receive(compose(p, {node}, 3000), 1, p, ReceiverOptions{});
      REQUIRE(rx.status == RxStatus::Ok);
      REQUIRE(rx.hard.size() == 1);
      const bool ok = rx.hard[0].crc_ok && rx.hard[0].payload == node.payload &&
                      rx.soft[0].crc_ok && rx.soft[0].payload == node.payload;
      decoded += ok;
      CHECK(rx.hard_symbols[0] == encode_symbols(node.payload, p));
    }
    CHECK(decoded == 100);
  }

  TEST_CASE("two users at high SNR decode") {
    const LoraParams p;
    ScenarioOptions so;
    so.users = 2;
    so.snr_db = 20.0;
    so.to_max_s = 0.1 * p.symbol_duration();
    for (std::uint64_t t = 0; t < 10; ++t) {
      auto rng = trial_rng(3, 0, t);
      const auto s = make_scenario(p, so, rng);
      const auto rx = receive(s.signal, 2, p, ReceiverOptions{});
      REQUIRE(rx.status == RxStatus::Ok);
      REQUIRE(rx.offsets.size() == 2);
      const auto match = match_users(rx.offsets, s, rx.start, p);
      for (std::size_t m = 0; m < 2; ++m) {
        const auto truth = static_cast<std::size_t>(match[m]);
        CHECK(rx.soft[m].crc_ok);
        CHECK(rx.soft[m].payload == s.nodes[truth].payload);
        CHECK(rx.hard_symbols[m] == s.symbols[truth]);
      }
    }
  }

  TEST_CASE("pipeline stages agree") {
    const LoraParams p;
    ScenarioOptions so;
    so.users = 2;
    so.snr_db = 15.0;
    so.to_max_s = 0.1 * p.symbol_duration();
    auto rng = trial_rng(4, 0, 0);
    const auto s = make_scenario(p, so, rng);
    const ReceiverOptions opts;
    const auto full = receive(s.signal, 2, p, opts);
    const auto sync = synchronize(s.signal, 2, p, opts);
    REQUIRE(full.status == RxStatus::Ok);
    REQUIRE(sync.status == RxStatus::Ok);
    CHECK(sync.start == full.start);
    CHECK(sync.windows.empty());
    const auto at = receive_at(s.signal, full.start, 2, p, opts);
    CHECK(at.hard_symbols == full.hard_symbols);
    REQUIRE(full.windows.size() == static_cast<std::size_t>(symbol_count(p)));
    for (const auto& w : full.windows) CHECK(w.candidates.size() <= 2);
  }

  TEST_CASE("noise alone is not detected") {
    const LoraParams p;
    IqBuffer silence;
    silence.rate = p.rx_rate();
    silence.samples.assign(frame_length(p, p.osr_rx) + 4096, Complex{});
    const auto noise = add_awgn(silence, 0.0, 1.0, p.osr_rx, 9);
    const auto rx = receive(noise, 2, p, ReceiverOptions{});
    CHECK(rx.status == RxStatus::NotDetected);
    CHECK(rx.hard.empty());
  }
}
