#include "loramp/demod.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <utility>

#include "loramp/dsp.hpp"
#include "loramp/error.hpp"

namespace loramp {
namespace {

// Shared-peak hypotheses polished per window besides the leading ones.
constexpr std::size_t kMergedPolish = 4;
// Symbol distance covered by one polishing move.
constexpr int kPolishReach = 2;

}  // namespace

Strategy parse_strategy(std::string_view name) {
  if (name == "v-peak") return Strategy::VPeak;
  if (name == "m-peak") return Strategy::MPeak;
  if (name == "m-full-peak") return Strategy::MFullPeak;
  throw ConfigError("unknown strategy '" + std::string(name) + "' (v-peak, m-peak, m-full-peak)");
}

std::string_view to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::VPeak: return "v-peak";
    case Strategy::MPeak: return "m-peak";
    case Strategy::MFullPeak: return "m-full-peak";
  }
  return "?";
}

std::size_t default_truncation(const LoraParams& params, double to_max_frac) {
  return static_cast<std::size_t>(
      std::ceil(to_max_frac * params.chips() * params.osr_rx - 1e-9));
}

std::vector<Complex> dechirp_truncated(std::span<const Complex> window, const LoraParams& params,
                                       std::size_t trunc) {
  const std::size_t len = params.rx_symbol_len();
  const auto up = chirp_table(params.sf, params.osr_rx).upchirp();
  std::vector<Complex> buf(len);
  const std::size_t avail = std::min(window.size(), len);
  for (std::size_t n = trunc; n < avail; ++n) buf[n] = window[n] * std::conj(up[n]);
  return fft(buf, len);
}

std::vector<double> paired_magnitude(std::span<const Complex> spectrum, std::uint32_t bins,
                                     std::size_t pad) {
  const std::size_t size = std::size_t{bins} * pad;
  if (spectrum.size() < 2 * size)
    throw ConfigError("paired magnitude needs at least two samples per chip");
  const std::size_t total = spectrum.size();
  std::vector<double> out(size);
  for (std::size_t u = 0; u < size; ++u)
    out[u] = std::abs(spectrum[u]) + std::abs(spectrum[(u + total - size) % total]);
  return out;
}

std::vector<double> paired_magnitude(std::span<const Complex> spectrum, const LoraParams& params) {
  if (params.osr_rx < 2) throw ConfigError("paired magnitude needs osr_rx >= 2");
  return paired_magnitude(spectrum, params.chips(), 1);
}

WindowPeaks extract_peaks(std::span<const double> pm, Strategy strategy, int users,
                          double noise_threshold, std::size_t cap) {
  const std::size_t n = pm.size();
  std::vector<std::size_t> maxima;
  for (std::size_t b = 0; b < n; ++b) {
    const double left = pm[(b + n - 1) % n];
    const double right = pm[(b + 1) % n];
    if (pm[b] > left && pm[b] >= right) maxima.push_back(b);
  }
  std::sort(maxima.begin(), maxima.end(), [&](std::size_t a, std::size_t b) {
    return pm[a] != pm[b] ? pm[a] > pm[b] : a < b;
  });

  std::size_t keep = 0;
  if (strategy == Strategy::VPeak) {
    while (keep < maxima.size() && keep < cap && pm[maxima[keep]] > noise_threshold) ++keep;
  } else {
    keep = std::min(maxima.size(), static_cast<std::size_t>(std::max(users, 0)));
  }

  WindowPeaks peaks;
  for (std::size_t k = 0; k < keep; ++k) {
    const std::size_t b = maxima[k];
    const double y0 = pm[b];
    const double yl = pm[(b + n - 1) % n];
    const double yr = pm[(b + 1) % n];
    // Two-point ratio estimator, exact for a rectangular-window tone.
    const double delta = yr >= yl ? yr / (y0 + yr) : -yl / (y0 + yl);
    double bin = static_cast<double>(b) + delta;
    if (bin < 0) bin += static_cast<double>(n);
    peaks.bins.push_back(bin);
    peaks.mags.push_back(y0);
  }
  return peaks;
}

NoiseFloor measure_noise_floor(const LoraParams& params, double sigma2, std::size_t trunc,
                               std::uint64_t seed, int windows) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, std::sqrt(sigma2 / 2.0));
  std::vector<Complex> win(params.rx_symbol_len());
  double sum = 0.0, sum2 = 0.0;
  std::size_t count = 0;
  for (int w = 0; w < windows; ++w) {
    for (auto& x : win) {
      const double re = gauss(rng);
      x = Complex{re, gauss(rng)};
    }
    for (double v : paired_magnitude(dechirp_truncated(win, params, trunc), params)) {
      sum += v;
      sum2 += v * v;
      ++count;
    }
  }
  NoiseFloor floor;
  floor.mean = sum / static_cast<double>(count);
  floor.stddev = std::sqrt(std::max(0.0, sum2 / static_cast<double>(count) - floor.mean * floor.mean));
  return floor;
}

std::uint64_t surjection_count(int users, int peaks) {
  if (peaks <= 0 || peaks > users) return 0;
  if (peaks == 1) return 1;
  return static_cast<std::uint64_t>(peaks) *
         (surjection_count(users - 1, peaks) + surjection_count(users - 1, peaks - 1));
}

std::uint64_t full_peak_count(int users, int peaks) {
  std::uint64_t total = 0;
  for (int v = 1; v <= std::min(users, peaks); ++v) total += surjection_count(users, v);
  return total;
}

namespace {

std::vector<Assignment> build_assignments(std::size_t peaks, int users, Strategy strategy) {
  std::vector<Assignment> out;
  if (peaks == 0 || users <= 0) return out;
  const auto m = static_cast<std::size_t>(users);

  // All tuples over `v` peaks, optionally only the surjective ones.
  auto emit = [&](std::size_t v, bool surjective) {
    Assignment a(m, 0);
    while (true) {
      bool ok = true;
      if (surjective) {
        std::vector<bool> used(v, false);
        for (auto x : a) used[x] = true;
        ok = std::all_of(used.begin(), used.end(), [](bool b) { return b; });
      }
      if (ok) out.push_back(a);
      std::size_t pos = 0;
      while (pos < m && ++a[pos] == v) a[pos++] = 0;
      if (pos == m) break;
    }
  };

  switch (strategy) {
    case Strategy::VPeak: emit(peaks, false); break;
    case Strategy::MPeak: emit(std::min(peaks, m), false); break;
    case Strategy::MFullPeak:
      for (std::size_t v = 1; v <= std::min(peaks, m); ++v) emit(v, true);
      break;
  }
  return out;
}

}  // namespace

std::vector<Assignment> enumerate_sequences(std::size_t peaks, int users, Strategy strategy) {
  static std::mutex mutex;
  static std::map<std::tuple<std::size_t, int, Strategy>, std::vector<Assignment>> cache;
  std::lock_guard lock(mutex);
  auto key = std::make_tuple(peaks, users, strategy);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, build_assignments(peaks, users, strategy)).first;
  return it->second;
}

double round_half_to_zero(double x) noexcept {
  const double t = std::trunc(x);
  const double frac = x - t;
  if (frac > 0.5) return t + 1.0;
  if (frac < -0.5) return t - 1.0;
  return t;
}

std::uint32_t symbol_from_peak(double peak_bin, double cfo, double to, const LoraParams& params) {
  const auto shifts = bin_shifts(params, cfo, to);
  const auto n = static_cast<long long>(params.chips());
  const auto r = static_cast<long long>(round_half_to_zero(peak_bin - (shifts.cfo_bins - shifts.to_bins)));
  return static_cast<std::uint32_t>(((r % n) + n) % n);
}

double sequence_loglik(std::span<const Complex> spectrum, std::span<const std::uint32_t> symbols,
                       std::span<const NodeEstimate> nodes, int symbol_index,
                       const LoraParams& params, std::size_t trunc) {
  const double t = data_symbol_time(params, symbol_index);
  std::vector<Complex> sum(params.rx_symbol_len());
  for (std::size_t m = 0; m < nodes.size(); ++m) {
    const auto rec = reconstruct_symbol(symbols[m], nodes[m].cfo, nodes[m].to, nodes[m].h, params, t);
    for (std::size_t r = 0; r < sum.size(); ++r) sum[r] += rec.samples[r];
  }
  const auto model = dechirp_truncated(sum, params, trunc);
  double dist = 0.0;
  for (std::size_t b = 0; b < model.size(); ++b) dist += std::norm(spectrum[b] - model[b]);
  return -dist;
}

WindowDemodulator::WindowDemodulator(const LoraParams& params, std::span<const NodeEstimate> nodes,
                                     const DemodOptions& options)
    : params_(params), nodes_(nodes.begin(), nodes.end()), options_(options) {
  if (options.top_k < 1) throw ConfigError("top-K must be >= 1");
  for (const auto& node : nodes_) synths_.emplace_back(params_, node.cfo, node.to, node.h);
}

TopK WindowDemodulator::demodulate(std::span<const Complex> spectrum, const WindowPeaks& peaks,
                                   int symbol_index) const {
  TopK result;
  if (peaks.count() == 0 || nodes_.empty()) return result;
  const LoraParams& params = params_;
  const std::size_t users = nodes_.size();
  const std::size_t v_count = peaks.count();
  const std::size_t len = params.rx_symbol_len();
  const double t = data_symbol_time(params, symbol_index);
  const long long n = params.chips();

  // Distinct (node, symbol) reconstructions with their inner products against
  // Y and against other nodes' reconstructions, built on demand.
  std::vector<std::map<std::uint32_t, std::size_t>> seen(users);
  std::vector<std::size_t> owner;
  std::vector<std::vector<Complex>> spectra;
  std::vector<double> y_proj, energy;
  std::vector<std::vector<double>> cross;
  std::vector<Complex> buf(len);
  auto inner = [&](std::span<const Complex> a, std::span<const Complex> b) {
    Complex acc{};
    for (std::size_t i = 0; i < len; ++i) acc += std::conj(a[i]) * b[i];
    return acc.real();
  };
  auto spectrum_of = [&](std::size_t m, std::uint32_t s) {
    auto [it, inserted] = seen[m].emplace(s, spectra.size());
    if (!inserted) return it->second;
    synths_[m].render(s, t, buf);
    const std::size_t k = spectra.size();
    spectra.push_back(dechirp_truncated(buf, params, options_.trunc));
    owner.push_back(m);
    y_proj.push_back(inner(spectra[k], spectrum));
    energy.push_back(inner(spectra[k], spectra[k]));
    cross.emplace_back(k + 1, 0.0);
    for (std::size_t l = 0; l < k; ++l) {
      const double c = owner[l] == m ? 0.0 : inner(spectra[k], spectra[l]);
      cross[k][l] = c;
      cross[l].push_back(c);
    }
    return k;
  };
  double y_energy = 0.0;
  for (std::size_t i = 0; i < len; ++i) y_energy += std::norm(spectrum[i]);
  // -|Y - sum of reconstructions|^2, clamped at 0 against rounding.
  auto score = [&](std::span<const std::uint32_t> symbols) {
    double dist = y_energy;
    std::vector<std::size_t> idx(users);
    for (std::size_t m = 0; m < users; ++m) {
      idx[m] = spectrum_of(m, symbols[m]);
      dist += energy[idx[m]] - 2.0 * y_proj[idx[m]];
      for (std::size_t q = 0; q < m; ++q) dist += 2.0 * cross[idx[m]][idx[q]];
    }
    return std::min(0.0, -dist);
  };

  std::vector<std::vector<std::uint32_t>> symbol_of(users, std::vector<std::uint32_t>(v_count));
  for (std::size_t m = 0; m < users; ++m)
    for (std::size_t v = 0; v < v_count; ++v)
      symbol_of[m][v] = symbol_from_peak(peaks.bins[v], nodes_[m].cfo, nodes_[m].to, params);

  const auto assignments = enumerate_sequences(v_count, static_cast<int>(users), options_.strategy);
  std::vector<CandidateSequence> pool;
  pool.reserve(assignments.size());
  for (const auto& a : assignments) {
    CandidateSequence cand;
    for (std::size_t m = 0; m < users; ++m) {
      cand.assignment.push_back(peaks.bins[a[m]]);
      cand.symbols.push_back(symbol_of[m][a[m]]);
    }
    cand.loglik = score(cand.symbols);
    pool.push_back(std::move(cand));
  }
  auto by_loglik = [](const CandidateSequence& x, const CandidateSequence& y) {
    return x.loglik > y.loglik;
  };
  std::stable_sort(pool.begin(), pool.end(), by_loglik);

  // Merged peaks sit between the users' tones, so rounding can miss a
  // symbol by a bin or two; the leading candidates are polished by a local
  // search over neighbouring symbols.
  std::vector<std::size_t> polish;
  std::size_t shared = 0;
  for (std::size_t c = 0; c < pool.size(); ++c) {
    auto bins = pool[c].assignment;
    std::sort(bins.begin(), bins.end());
    const bool merged = std::adjacent_find(bins.begin(), bins.end()) != bins.end();
    if (c <= static_cast<std::size_t>(options_.top_k) || (merged && shared < kMergedPolish)) {
      polish.push_back(c);
      shared += merged;
    }
  }
  for (std::size_t c : polish) {
    CandidateSequence cand = pool[c];
    auto moved = [&](std::uint32_t s, int d) {
      return static_cast<std::uint32_t>((static_cast<long long>(s) + d + n) % n);
    };
    // Best-improvement steps over single-node moves and joint moves of node
    // pairs whose tones overlap too much for either to improve alone.
    for (bool improved = true; improved;) {
      improved = false;
      std::vector<std::uint32_t> best = cand.symbols;
      double best_ll = cand.loglik;
      auto consider = [&](std::vector<std::uint32_t>&& trial) {
        const double ll = score(trial);
        if (ll > best_ll) {
          best_ll = ll;
          best = std::move(trial);
        }
      };
      for (std::size_t a = 0; a < users; ++a) {
        for (int da = -kPolishReach; da <= kPolishReach; ++da) {
          if (da == 0) continue;
          auto trial = cand.symbols;
          trial[a] = moved(trial[a], da);
          consider(std::move(trial));
          for (std::size_t b = a + 1; b < users; ++b) {
            for (int db = -kPolishReach; db <= kPolishReach; ++db) {
              if (db == 0) continue;
              auto pair = cand.symbols;
              pair[a] = moved(pair[a], da);
              pair[b] = moved(pair[b], db);
              consider(std::move(pair));
            }
          }
        }
      }
      if (best_ll > cand.loglik) {
        cand.symbols = std::move(best);
        cand.loglik = best_ll;
        improved = true;
      }
    }
    pool.push_back(std::move(cand));
  }
  std::stable_sort(pool.begin(), pool.end(), by_loglik);

  std::set<std::vector<std::uint32_t>> taken;
  for (auto& cand : pool) {
    if (!taken.insert(cand.symbols).second) continue;
    result.candidates.push_back(std::move(cand));
    if (result.candidates.size() == static_cast<std::size_t>(options_.top_k)) break;
  }
  return result;
}

TopK WindowDemodulator::demodulate_window(std::span<const Complex> window, int symbol_index) const {
  const auto spectrum = dechirp_truncated(window, params_, options_.trunc);
  const auto pm = paired_magnitude(spectrum, params_);
  const auto peaks = extract_peaks(pm, options_.strategy, static_cast<int>(nodes_.size()),
                                   options_.noise_threshold, options_.peak_cap);
  return demodulate(spectrum, peaks, symbol_index);
}

TopK demod_window(std::span<const Complex> spectrum, const WindowPeaks& peaks,
                  std::span<const NodeEstimate> nodes, int symbol_index,
                  const LoraParams& params, const DemodOptions& options) {
  return WindowDemodulator(params, nodes, options).demodulate(spectrum, peaks, symbol_index);
}

}  // namespace loramp
