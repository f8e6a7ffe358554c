// Acceptance run. Prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails. Tolerances and trial counts are fixed here.
//
// Usage: loramp_acceptance [criterion...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "loramp/channel.hpp"
#include "loramp/coding.hpp"
#include "loramp/demod.hpp"
#include "loramp/receiver.hpp"
#include "loramp/rx_decoder.hpp"
#include "loramp/sim.hpp"
#include "loramp/sync.hpp"
#include "loramp/tx_chain.hpp"

using namespace loramp;

namespace {

// Pinned tolerances.
constexpr double kOffsetMaeBins = 0.0375;      // 0.025 plus 50% slack
constexpr double kOffsetMaePaperBins = 0.025;  // reported only
constexpr double kSingleUserChannelRelErr = 1e-6;
constexpr double kTwoUserChannelRelErr = 1e-2;
constexpr double kColocatedMinProb = 0.75;  // > 0.8 within 5 points
constexpr double kIdealMapFourUserMinPer = 0.6;
constexpr double kIdealMapTwoUserMaxPer = 0.05;
constexpr double kTwoUserHighSnrMaxSer = 0.005;
constexpr double kStrategySerGap = 0.01;
constexpr double kSoftHardBerRatio = 0.5;
constexpr double kSoftHardMinHardBer = 1e-4;
constexpr double kNetMinFractionOfIdeal = 0.9;
constexpr double kNetIdealBitS = 1220.0;
constexpr double kNetIdealRelTol = 0.02;
constexpr double kNetMaxDelayP95 = 0.35;

// Pinned trial counts.
constexpr int kLoopbackPayloads = 50;
constexpr int kEstimationTrials = 1000;
constexpr int kStudyPackets = 1000;
constexpr int kPhyTrials = 1000;  // two packets per trial
constexpr int kStrategyTrials = 500;
constexpr double kNetDuration = 300.0;
constexpr double kNetSnr = 25.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

// Shared two-user M-full-peak PHY run used by several criteria.
const std::vector<MetricsRow>& two_user_phy() {
  static const std::vector<MetricsRow> rows = [] {
    ExperimentConfig c;
    c.users = 2;
    c.snr_db = {0.0, 5.0, 10.0, 15.0, 20.0, 25.0};
    c.trials = kPhyTrials;
    c.strategy = Strategy::MFullPeak;
    c.top_k = 2;
    c.seed = 2024;
    return run_phy(c);
  }();
  return rows;
}

const MetricsRow& row_for(const std::vector<MetricsRow>& rows, const std::string& decoder, double snr) {
  for (const auto& r : rows)
    if (r.decoder == decoder && r.snr_db == snr) return r;
  std::fprintf(stderr, "missing row %s @ %g dB\n", decoder.c_str(), snr);
  std::abort();
}

const std::vector<EstimationStats>& estimation_study() {
  static const std::vector<EstimationStats> stats = [] {
    ExperimentConfig c;
    c.users = 2;
    c.snr_db = {-5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0};
    c.trials = kEstimationTrials;
    c.seed = 31;
    return run_estimation_study(c);
  }();
  return stats;
}

Outcome loopback() {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> byte(0, 255);
  long symbol_errors = 0, bit_errors = 0, packets = 0, undetected = 0;
  for (int sf = 6; sf <= 12; ++sf) {
    for (int cr = 5; cr <= 8; ++cr) {
      LoraParams p;
      p.sf = sf;
      p.cr = cr;
      for (int t = 0; t < kLoopbackPayloads; ++t) {
        std::vector<std::uint8_t> payload(static_cast<std::size_t>(p.payload_bytes - 2));
        for (auto& b : payload) b = static_cast<std::uint8_t>(byte(rng));
        payload = append_crc(payload);
        const auto symbols = encode_symbols(payload, p);
        constexpr std::size_t kLead = 1000;
        auto signal = build_frame(payload, p, p.osr_rx);
        signal.samples.insert(signal.samples.begin(), kLead, Complex{});
        signal.samples.resize(signal.size() + p.rx_symbol_len(), Complex{});
        const auto rx = receive_at(signal, kLead, 1, p, ReceiverOptions{});
        ++packets;
        if (rx.status != RxStatus::Ok) {
          ++undetected;
          continue;
        }
        for (std::size_t i = 0; i < symbols.size(); ++i) symbol_errors += rx.hard_symbols[0][i] != symbols[i];
        for (std::size_t i = 0; i < payload.size(); ++i)
          bit_errors += std::popcount(static_cast<unsigned>(payload[i] ^ rx.hard[0].payload[i])) +
                        std::popcount(static_cast<unsigned>(payload[i] ^ rx.soft[0].payload[i]));
      }
    }
  }
  return {symbol_errors == 0 && bit_errors == 0 && undetected == 0,
          fmt("%ld packets over SF 6..12 x CR 5..8: %ld symbol errors, %ld bit errors, %ld lost",
              packets, symbol_errors, bit_errors, undetected)};
}

Outcome enumeration() {
  bool ok = full_peak_count(4, 4) == 75 && full_peak_count(6, 6) == 4683;
  std::string detail = fmt("M=4: %zu, M=6: %zu;", full_peak_count(4, 4), full_peak_count(6, 6));
  for (int m = 1; m <= 6; ++m) {
    // Brute force: assignments of M users to M peaks whose used peaks are
    // exactly the V strongest.
    std::size_t brute = 0, total = 1;
    for (int k = 0; k < m; ++k) total *= static_cast<std::size_t>(m);
    for (std::size_t code = 0; code < total; ++code) {
      std::set<std::size_t> used;
      for (std::size_t c = code, k = 0; k < static_cast<std::size_t>(m); ++k, c /= static_cast<std::size_t>(m))
        used.insert(c % static_cast<std::size_t>(m));
      brute += *used.rbegin() + 1 == used.size();
    }
    std::size_t recurrence = 0;
    for (int v = 1; v <= m; ++v) recurrence += surjection_count(m, v);
    const std::size_t enumerated = enumerate_sequences(static_cast<std::size_t>(m), m, Strategy::MFullPeak).size();
    ok = ok && brute == recurrence && recurrence == full_peak_count(m, m) && enumerated == brute;
    detail += fmt(" M=%d %zu/%zu/%zu", m, recurrence, brute, enumerated);
  }
  return {ok, detail + " (recurrence/brute force/enumerated)"};
}

Outcome offset_estimation() {
  bool ok = true;
  double worst = 0.0;
  std::string detail;
  for (const auto& s : estimation_study()) {
    const double mae = std::max(s.cfo_mae_bins, s.to_mae_bins);
    worst = std::max(worst, mae);
    ok = ok && s.cfo_mae_bins < kOffsetMaeBins && s.to_mae_bins < kOffsetMaeBins;
    detail += fmt(" %gdB cfo=%.4f to=%.4f fail=%d;", s.snr_db, s.cfo_mae_bins, s.to_mae_bins, s.failures);
  }
  return {ok, fmt("worst MAE %.4f bins (bar %.4f, unslacked %.3f %s):", worst, kOffsetMaeBins,
                  kOffsetMaePaperBins, worst < kOffsetMaePaperBins ? "met" : "missed") +
                  detail};
}

Outcome channel_estimation() {
  const LoraParams p;
  constexpr std::size_t kLead = 2048;
  auto compose = [&](const std::vector<NodeTxState>& nodes) {
    std::vector<IqBuffer> frames;
    for (auto n : nodes) {
      n.to += static_cast<double>(kLead) / p.rx_rate();
      frames.push_back(apply_impairments(build_frame(n.payload, p, p.osr_rec), n, p));
    }
    auto sum = superimpose(frames);
    sum.samples.resize(sum.size() + 4096, Complex{});
    return sum;
  };
  auto exact = [&](const NodeTxState& n) {
    const auto bins = bin_shifts(p, n.cfo, n.to);
    OffsetEstimate e;
    e.cfo_hat = n.cfo;
    e.to_hat = n.to;
    e.f_up = bins.cfo_bins - bins.to_bins;
    e.f_down = bins.cfo_bins + bins.to_bins;
    return e;
  };
  const std::vector<std::uint8_t> payload(static_cast<std::size_t>(p.payload_bytes), 0x5A);
  const auto trunc = default_truncation(p);

  NodeTxState one;
  one.payload = payload;
  one.cfo = -1800.0;
  one.to = 40.0 / p.rx_rate();
  one.h = {0.7, -0.2};
  const std::vector<OffsetEstimate> one_off{exact(one)};
  const auto ch1 = estimate_channels(compose({one}), kLead, one_off, p, trunc);
  const double err1 = std::abs(ch1[0].h_hat - one.gain()) / std::abs(one.gain());

  NodeTxState a = one, b = one;
  a.cfo = 1200.0;
  a.to = 13.0 / p.rec_rate();
  a.h = {1.0, 0.0};
  b.cfo = -2600.0;
  b.to = 57.0 / p.rec_rate();
  b.h = {0.1, 0.8};
  b.power_db = 2.0;
  const std::vector<OffsetEstimate> two_off{exact(a), exact(b)};
  const auto ch2 = estimate_channels(compose({a, b}), kLead, two_off, p, trunc);
  const double err2 = std::max(std::abs(ch2[0].h_hat - a.gain()) / std::abs(a.gain()),
                               std::abs(ch2[1].h_hat - b.gain()) / std::abs(b.gain()));

  const auto& stats = estimation_study();
  bool decreasing = true;
  std::string mse;
  for (std::size_t k = 0; k < stats.size(); ++k) {
    if (k > 0) decreasing = decreasing && stats[k].channel_mse < stats[k - 1].channel_mse;
    mse += fmt(" %g", stats[k].channel_mse);
  }
  return {err1 < kSingleUserChannelRelErr && err2 < kTwoUserChannelRelErr && decreasing,
          fmt("single-user rel err %.2e (bar %.0e), two-user %.2e (bar %.0e), MSE over SNR", err1,
              kSingleUserChannelRelErr, err2, kTwoUserChannelRelErr) +
              mse + (decreasing ? " strictly decreasing" : " NOT strictly decreasing")};
}

Outcome colocated() {
  ExperimentConfig c;
  c.trials = kStudyPackets;
  c.users_sweep = {4};
  c.sf_sweep = {8, 10, 12};
  c.seed = 5;
  const auto rows = run_colocated_study(c);
  std::map<int, double> prob;
  for (const auto& r : rows) prob[r.sf] = r.per;
  const bool monotone = prob[8] >= prob[10] && prob[10] >= prob[12];
  return {prob[10] > kColocatedMinProb && monotone,
          fmt("M=4 probability SF8 %.3f, SF10 %.3f (bar > %.2f), SF12 %.3f, %s", prob[8], prob[10],
              kColocatedMinProb, prob[12], monotone ? "non-increasing in SF" : "NOT monotone in SF")};
}

Outcome ideal_mapping() {
  ExperimentConfig c;
  c.trials = kStudyPackets;
  c.users_sweep = {2, 4};
  c.sf_sweep = {10};
  c.seed = 6;
  const auto rows = run_ideal_mapping_study(c);
  std::map<int, double> per;
  for (const auto& r : rows) per[r.users] = r.per;
  return {per[4] > kIdealMapFourUserMinPer && per[2] < kIdealMapTwoUserMaxPer,
          fmt("PER M=4 %.4f (bar > %.2f), M=2 %.4f (bar < %.2f)", per[4], kIdealMapFourUserMinPer, per[2],
              kIdealMapTwoUserMaxPer)};
}

Outcome two_user_ser() {
  const auto& rows = two_user_phy();
  bool ok = true;
  std::string detail;
  for (double snr : {20.0, 25.0}) {
    const auto& r = row_for(rows, "mpr-hard", snr);
    ok = ok && r.ser < kTwoUserHighSnrMaxSer;
    detail += fmt(" %gdB SER %.5f (fail %d);", snr, r.ser, r.failures);
  }
  return {ok, fmt("%d trials, bar < %.3f:", kPhyTrials, kTwoUserHighSnrMaxSer) + detail};
}

Outcome strategy_equivalence() {
  ExperimentConfig c;
  c.users = 2;
  c.snr_db = {5.0, 10.0, 15.0, 20.0, 25.0};
  c.trials = kStrategyTrials;
  c.strategy = Strategy::VPeak;
  c.seed = 2024;  // same scenarios as the M-full-peak run
  const auto vpeak = run_phy(c);
  const auto& full = two_user_phy();
  bool ok = true;
  std::string detail;
  for (double snr : c.snr_db) {
    const double gap = row_for(full, "mpr-hard", snr).ser - row_for(vpeak, "mpr-hard", snr).ser;
    ok = ok && gap < kStrategySerGap;
    detail += fmt(" %gdB full %.5f vpeak %.5f;", snr, row_for(full, "mpr-hard", snr).ser,
                  row_for(vpeak, "mpr-hard", snr).ser);
  }
  return {ok, fmt("SER(M-full) - SER(V-peak) < %.2f:", kStrategySerGap) + detail};
}

Outcome soft_vs_hard() {
  const auto& rows = two_user_phy();
  bool ok = true, tenfold = true;
  std::string detail;
  for (double snr : {0.0, 5.0, 10.0, 15.0, 20.0, 25.0}) {
    const double hard = row_for(rows, "mpr-hard", snr).ber, soft = row_for(rows, "mpr-soft", snr).ber;
    ok = ok && soft <= hard;
    if (hard >= kSoftHardMinHardBer) {
      ok = ok && soft <= kSoftHardBerRatio * hard;
      tenfold = tenfold && soft <= 0.1 * hard;
    }
    detail += fmt(" %gdB hard %.2e soft %.2e;", snr, hard, soft);
  }
  return {ok, fmt("%d packets per SNR:", 2 * kPhyTrials) + detail +
                  (tenfold ? " 10x gap met" : " 10x gap not met")};
}

Outcome network() {
  ExperimentConfig c;
  c.users = 4;
  c.mode = Mode::Net;
  c.transmission = Transmission::Coordinated;
  c.decoder = "mpr-soft";
  c.duration_s = kNetDuration;
  c.seed = 8;
  const double ideal = ideal_net_throughput(c);
  const auto res = run_net_sim(c, kNetSnr);
  const bool ideal_ok = std::abs(ideal - kNetIdealBitS) / kNetIdealBitS < kNetIdealRelTol;
  const bool ok = ideal_ok && res.row.net_bit_s >= kNetMinFractionOfIdeal * ideal &&
                  res.row.delay_p95_s <= kNetMaxDelayP95;
  return {ok, fmt("ideal %.1f bit/s, achieved %.1f bit/s (%.3f of ideal, bar %.2f), delay p50 %.3f s p95 %.3f s "
                  "(bar %.2f), %d rounds",
                  ideal, res.row.net_bit_s, res.row.net_bit_s / ideal, kNetMinFractionOfIdeal,
                  res.row.delay_p50_s, res.row.delay_p95_s, kNetMaxDelayP95, res.rounds)};
}

Outcome properties() {
  std::vector<std::string> failed;
  auto expect = [&](bool cond, const char* name) {
    if (!cond) failed.emplace_back(name);
  };

  // Probability-domain preservation.
  {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    bool ok = true;
    for (int t = 0; t < 10000; ++t) {
      SoftSymbol p;
      p.p_zero.resize(static_cast<std::size_t>(6 + t % 7));
      for (auto& v : p.p_zero) v = unit(rng);
      for (double v : soft_gray_xor(soft_gray_shift(p)).p_zero) ok = ok && v >= 0.0 && v <= 1.0;
    }
    expect(ok, "probability domain");
  }
  // Deterministic-limit Gray equivalence.
  {
    bool ok = true;
    for (int sf = 2; sf <= 8; ++sf) {
      for (std::uint32_t s = 0; s < (1u << sf); ++s) {
        SoftSymbol p;
        for (int n = 0; n < sf; ++n) p.p_zero.push_back(((s >> n) & 1u) ? 0.0 : 1.0);
        const auto out = soft_gray_xor(soft_gray_shift(p));
        std::uint32_t v = 0;
        for (int n = 0; n < sf; ++n) {
          const double q = out.p_zero[static_cast<std::size_t>(n)];
          ok = ok && (q == 0.0 || q == 1.0);
          if (q == 0.0) v |= 1u << n;
        }
        ok = ok && v == gray_map_rx(s, sf);
      }
    }
    expect(ok, "Gray deterministic limit");
  }
  // Hamming single-error correction.
  {
    bool ok = true;
    for (int n_c = 7; n_c <= 8; ++n_c) {
      const auto& code = hamming_code(n_c);
      for (std::uint8_t d = 0; d < 16; ++d)
        for (int j = 0; j < n_c; ++j)
          ok = ok && code.decode_hard(static_cast<std::uint8_t>(code.encode(d) ^ (1u << j))) == d;
    }
    expect(ok, "Hamming single-error correction");
  }
  // Interleaver bijection.
  {
    bool ok = true;
    for (int sf = 6; sf <= 12; ++sf) {
      for (int n_c = 5; n_c <= 8; ++n_c) {
        std::set<std::vector<std::uint32_t>> images;
        for (int k = 0; k < sf * n_c; ++k) {
          std::vector<std::uint8_t> words(static_cast<std::size_t>(sf), 0);
          words[static_cast<std::size_t>(k / n_c)] = static_cast<std::uint8_t>(1u << (k % n_c));
          const auto syms = interleave(words, sf, n_c);
          ok = ok && deinterleave(syms, sf, n_c) == words;
          std::size_t bits = 0;
          for (auto s : syms) bits += static_cast<std::size_t>(std::popcount(s));
          ok = ok && bits == 1;
          images.insert(syms);
        }
        ok = ok && images.size() == static_cast<std::size_t>(sf * n_c);
      }
    }
    expect(ok, "interleaver bijection");
  }
  // CFO phase continuity across symbol boundaries.
  {
    const LoraParams p;
    const std::vector<std::uint8_t> payload(static_cast<std::size_t>(p.payload_bytes), 0x33);
    const auto frame = build_frame(payload, p, p.osr_rec);
    NodeTxState node;
    node.cfo = 3100.0;
    const auto out = apply_impairments(frame, node, p);
    const double step = 2.0 * std::numbers::pi * node.cfo / p.rx_rate();
    const std::size_t len = p.rx_symbol_len();
    const auto dec = static_cast<std::size_t>(p.decimation());
    double worst = 0.0;
    for (std::size_t i = 1; i * len < out.size(); ++i) {
      const std::size_t last = i * len - 1, next = i * len;
      const Complex a = out.samples[last] / frame.samples[last * dec];
      const Complex b = out.samples[next] / frame.samples[next * dec];
      worst = std::max(worst, std::abs(std::arg(b / a) - step));
    }
    expect(worst < 1e-9, "CFO phase continuity");
  }
  // Seed determinism of the CSV.
  {
    ExperimentConfig c;
    c.users = 2;
    c.snr_db = {0.0, 15.0};
    c.trials = 5;
    c.seed = 99;
    auto csv = [&] {
      std::ostringstream out;
      write_csv(out, run_phy(c));
      return out.str();
    };
    expect(csv() == csv(), "seed determinism");
  }

  std::string detail = "probability domain, Gray limit (sf<=8), Hamming, interleaver, CFO phase, seed determinism";
  for (const auto& f : failed) detail += "; failed: " + f;
  return {failed.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, loopback},           {2, enumeration},          {3, offset_estimation}, {4, channel_estimation},
      {5, colocated},          {6, ideal_mapping},        {7, two_user_ser},      {8, strategy_equivalence},
      {9, soft_vs_hard},       {10, network},             {11, properties}};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& [id, run] : criteria) {
    if (!selected.empty() && !selected.contains(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !out.pass;
    std::printf("%s criterion %d: %s [%.1f s]\n", out.pass ? "PASS" : "FAIL", id, out.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
