#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "loramp/demod.hpp"
#include "loramp/dsp.hpp"
#include "loramp/receiver.hpp"
#include "loramp/sim.hpp"
#include "loramp/sync.hpp"

using namespace loramp;

namespace {

Scenario scenario(int users, double snr_db, std::uint64_t seed) {
  const LoraParams p;
  ScenarioOptions so;
  so.users = users;
  so.snr_db = snr_db;
  so.to_max_s = 0.1 * p.symbol_duration();
  auto rng = trial_rng(seed, 0, 0);
  return make_scenario(p, so, rng);
}

void BM_Fft(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<Complex> in(n, Complex{1.0, 0.5});
  for (auto _ : state) benchmark::DoNotOptimize(fft(in, n));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_Fft)->Arg(2048)->Arg(8192);

void BM_DechirpTruncated(benchmark::State& state) {
  const LoraParams p;
  const auto s = scenario(2, 10.0, 1);
  const std::span<const Complex> win(s.signal.samples.data() + s.lead, p.rx_symbol_len());
  const auto trunc = default_truncation(p);
  for (auto _ : state) benchmark::DoNotOptimize(dechirp_truncated(win, p, trunc));
}
BENCHMARK(BM_DechirpTruncated);

// One data window, ML demodulation of `users` superimposed symbols.
void BM_DemodWindow(benchmark::State& state) {
  const LoraParams p;
  const int users = static_cast<int>(state.range(0));
  const auto s = scenario(users, 20.0, 2);
  const auto sync = synchronize_at(s.signal, s.lead, users, p, ReceiverOptions{});
  if (sync.status != RxStatus::Ok) {
    state.SkipWithError("synchronization failed");
    return;
  }
  DemodOptions opts;
  opts.trunc = default_truncation(p);
  const WindowDemodulator demod(p, sync.nodes, opts);
  const std::size_t first = sync.start + data_offset(p, p.osr_rx);
  int i = 0;
  for (auto _ : state) {
    const std::span<const Complex> win(s.signal.samples.data() + first + static_cast<std::size_t>(i) * p.rx_symbol_len(),
                                       p.rx_symbol_len());
    benchmark::DoNotOptimize(demod.demodulate_window(win, i));
    i = (i + 1) % symbol_count(p);
  }
}
BENCHMARK(BM_DemodWindow)->Arg(2)->Arg(4)->Unit(benchmark::kMicrosecond);

void BM_EstimateOffsets(benchmark::State& state) {
  const LoraParams p;
  const int users = static_cast<int>(state.range(0));
  const auto s = scenario(users, 10.0, 3);
  for (auto _ : state) benchmark::DoNotOptimize(estimate_offsets(s.signal, s.lead, users, p));
}
BENCHMARK(BM_EstimateOffsets)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_ReceivePacket(benchmark::State& state) {
  const LoraParams p;
  const int users = static_cast<int>(state.range(0));
  const auto s = scenario(users, 15.0, 4);
  for (auto _ : state) benchmark::DoNotOptimize(receive(s.signal, users, p, ReceiverOptions{}));
}
BENCHMARK(BM_ReceivePacket)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
