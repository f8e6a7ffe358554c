#include <doctest.h>

#include <numbers>

#include "helpers.hpp"
#include "loramp/channel.hpp"
#include "loramp/error.hpp"
#include "loramp/sim.hpp"
#include "loramp/tx_chain.hpp"

using namespace loramp;
using loramp::testing::max_abs_diff;

namespace {

IqBuffer sample_frame(const LoraParams& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return build_frame(random_payload(p, rng), p, p.osr_rec);
}

}  // namespace

TEST_SUITE("channel") {
  TEST_CASE("identity impairment is plain decimation") {
    const LoraParams p;
    const auto frame = sample_frame(p, 1);
    const auto out = apply_impairments(frame, NodeTxState{}, p);
    CHECK(out.rate == doctest::Approx(p.rx_rate()));
    REQUIRE(out.size() == frame.size() / 5);
    double worst = 0.0;
    for (std::size_t r = 0; r < out.size(); ++r) worst = std::max(worst, std::abs(out.samples[r] - frame.samples[r * 5]));
    CHECK(worst == 0.0);
  }

  TEST_CASE("integer receiver-sample delay shifts the output") {
    const LoraParams p;
    const auto frame = sample_frame(p, 2);
    NodeTxState node;
    node.cfo = 1234.0;
    node.h = {0.3, -0.7};
    const auto base = apply_impairments(frame, node, p);
    node.to = 3.0 / p.rx_rate();
    const auto delayed = apply_impairments(frame, node, p);
    REQUIRE(delayed.size() == base.size() + 3);
    for (int r = 0; r < 3; ++r) CHECK(delayed.samples[static_cast<std::size_t>(r)] == Complex{});
    double worst = 0.0;
    for (std::size_t r = 0; r < base.size(); ++r) worst = std::max(worst, std::abs(delayed.samples[r + 3] - base.samples[r]));
    CHECK(worst < 1e-12);
  }

  TEST_CASE("CFO moves the dechirped preamble peak by 40.96 bins") {
    const LoraParams p;
    NodeTxState node;
    node.cfo = 5000.0;
    const auto out = apply_impairments(css_modulate(0, p, p.osr_rec), node, p);
    const auto& table = chirp_table(p.sf, p.osr_rx);
    std::vector<Complex> mixed(out.size());
    for (std::size_t n = 0; n < out.size(); ++n) mixed[n] = out.samples[n] * std::conj(table.up(n));
    constexpr std::size_t kPad = 16;
    const auto spec = fft(mixed, mixed.size() * kPad);
    std::size_t best = 0;
    for (std::size_t k = 0; k < spec.size() / 2; ++k)
      if (std::abs(spec[k]) > std::abs(spec[best])) best = k;
    const double a = std::abs(spec[best - 1]), b = std::abs(spec[best]), c = std::abs(spec[best + 1]);
    const double peak = (static_cast<double>(best) + 0.5 * (a - c) / (a - 2 * b + c)) / kPad;
    CHECK(std::abs(peak - 40.96) < 0.05);
    CHECK(std::abs(peak - bin_shifts(p, node.cfo, 0.0).cfo_bins) < 0.05);
  }

  TEST_CASE("impairments are linear in h") {
    const LoraParams p;
    const auto frame = sample_frame(p, 3);
    NodeTxState node;
    node.cfo = -4321.0;
    node.to = 37.0 / p.rec_rate();
    node.h = {0.8, 0.1};
    const auto base = apply_impairments(frame, node, p);
    const Complex alpha{-1.7, 0.4};
    node.h *= alpha;
    const auto scaled = apply_impairments(frame, node, p);
    double worst = 0.0;
    for (std::size_t r = 0; r < base.size(); ++r) worst = std::max(worst, std::abs(scaled.samples[r] - alpha * base.samples[r]));
    CHECK(worst < 1e-12);
  }

  TEST_CASE("CFO phase is continuous across symbol boundaries") {
    const LoraParams p;
    const auto frame = sample_frame(p, 4);
    NodeTxState node;
    node.cfo = 3100.0;
    const auto out = apply_impairments(frame, node, p);
    const double expected = 2.0 * std::numbers::pi * node.cfo / p.rx_rate();
    const std::size_t len = p.rx_symbol_len();
    double worst = 0.0;
    for (std::size_t i = 1; i * len < out.size(); ++i) {
      const std::size_t last = i * len - 1, next = i * len;
      const Complex rot_last = out.samples[last] / frame.samples[last * 5];
      const Complex rot_next = out.samples[next] / frame.samples[next * 5];
      worst = std::max(worst, std::abs(std::arg(rot_next / rot_last) - expected));
    }
    CHECK(worst < 1e-9);
  }

  TEST_CASE("negative delay and wrong rate are rejected") {
    const LoraParams p;
    NodeTxState node;
    node.to = -1e-6;
    CHECK_THROWS_AS(apply_impairments(css_modulate(0, p, p.osr_rec), node, p), DomainError);
    CHECK_THROWS_AS(apply_impairments(css_modulate(0, p, 2), NodeTxState{}, p), DomainError);
  }

  TEST_CASE("superposition") {
    const LoraParams p;
    const auto x = apply_impairments(sample_frame(p, 5), NodeTxState{}, p);
    NodeTxState other;
    other.to = 100.0 / p.rec_rate();
    other.cfo = 700.0;
    const auto y = apply_impairments(sample_frame(p, 6), other, p);

    const std::vector<IqBuffer> single{x};
    CHECK(superimpose(single).samples == x.samples);

    IqBuffer neg = x;
    for (auto& v : neg.samples) v = -v;
    const std::vector<IqBuffer> cancel{x, neg};
    for (const auto& v : superimpose(cancel).samples) CHECK(v == Complex{});

    const std::vector<IqBuffer> xy{x, y}, yx{y, x};
    const auto a = superimpose(xy), b = superimpose(yx);
    CHECK(a.size() == std::max(x.size(), y.size()));
    CHECK(max_abs_diff(a.samples, b.samples) == 0.0);

    IqBuffer other_rate = x;
    other_rate.rate *= 2;
    const std::vector<IqBuffer> mixed{x, other_rate};
    CHECK_THROWS_AS(superimpose(mixed), DomainError);
  }

  TEST_CASE("AWGN power, determinism and the noiseless limit") {
    IqBuffer zeros;
    zeros.rate = 250e3;
    zeros.samples.assign(1'000'000, Complex{});
    const double snr = 3.0, ref = 0.5;
    const auto noisy = add_awgn(zeros, snr, ref, 2, 99);
    double power = 0.0;
    for (const auto& v : noisy.samples) power += std::norm(v);
    power /= static_cast<double>(noisy.size());
    const double sigma2 = noise_variance(snr, ref, 2);
    CHECK(sigma2 == doctest::Approx(ref * 2 / std::pow(10.0, 0.3)));
    CHECK(std::abs(power / sigma2 - 1.0) < 0.01);

    const auto again = add_awgn(zeros, snr, ref, 2, 99);
    CHECK(again.samples == noisy.samples);
    const auto other = add_awgn(zeros, snr, ref, 2, 100);
    CHECK(other.samples != noisy.samples);

    const LoraParams p;
    const auto x = apply_impairments(sample_frame(p, 7), NodeTxState{}, p);
    CHECK(add_awgn(x, kNoNoise, 1.0, 2, 1).samples == x.samples);
  }
}
