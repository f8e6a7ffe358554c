#include "loramp/sync.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "loramp/demod.hpp"
#include "loramp/dsp.hpp"
#include "loramp/error.hpp"
#include "loramp/tx_chain.hpp"
#include "window.hpp"

namespace loramp {
namespace {

constexpr int kFirstPreambleWindow = 1;
constexpr int kPreambleWindows = 8;
constexpr int kSfdWindows = 2;
constexpr std::size_t kEstimationPad = 16;
constexpr std::size_t kDetectionPad = 4;

// Joint refinement.
constexpr std::size_t kGrowKeep = 3;
constexpr int kRefineSweeps = 8;
constexpr double kConverged = 1e-7;
constexpr int kScanSweeps = 2;
constexpr int kCoherentSweeps = 2;
constexpr long long kScanSteps = 6;
constexpr long long kScanStride = 2;

// Detection thresholds.
constexpr int kStableWindows = 6;
constexpr double kMinPeakToMean = 4.0;
// Bins a tracked peak may drift between windows; two users a couple of bins
// apart beat and move the merged maximum.
constexpr long long kRunTolerance = 2;

// Peak acceptance on Hann-windowed spectra.
constexpr double kNoiseFloorFactor = 3.5;
constexpr double kSidelobeLevel = 0.06;
constexpr double kMinSeparationBins = 2.0;

struct SpectralPeak {
  double bin = 0.0;
  double mag = 0.0;
};

double wrap_bins(double x, double n) {
  x = std::fmod(x, n);
  if (x < 0) x += n;
  return x;
}

const std::vector<double>& hann(std::size_t len) {
  thread_local std::vector<double> w;
  if (w.size() != len) {
    w.resize(len);
    for (std::size_t n = 0; n < len; ++n)
      w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(len));
  }
  return w;
}

// Average paired magnitude of `count` consecutive windows starting at window
// index `first`. Upchirp windows are dechirped with the downchirp and vice
// versa.
std::vector<double> averaged_spectrum(const IqBuffer& signal, long long start, int first,
                                      int count, bool sfd, std::size_t pad,
                                      const LoraParams& params) {
  const std::size_t len = params.rx_symbol_len();
  const auto up = chirp_table(params.sf, params.osr_rx).upchirp();
  const auto& taper = hann(len);
  std::vector<double> avg(std::size_t{params.chips()} * pad, 0.0);
  std::vector<Complex> buf(len * pad);
  std::vector<Complex> spec(len * pad);
  for (int k = 0; k < count; ++k) {
    auto win = detail::window_at(signal, start + static_cast<long long>((first + k) * len), len);
    std::fill(buf.begin(), buf.end(), Complex{});
    for (std::size_t n = 0; n < len; ++n)
      buf[n] = win[n] * (sfd ? up[n] : std::conj(up[n])) * taper[n];
    fft_into(buf, spec);
    const auto pm = paired_magnitude(spec, params.chips(), pad);
    for (std::size_t u = 0; u < avg.size(); ++u) avg[u] += pm[u];
  }
  for (auto& v : avg) v /= count;
  return avg;
}

// Local maxima that stand above the noise floor and are not sidelobes of a
// stronger peak, strongest first, refined by parabolic interpolation.
std::vector<SpectralPeak> resolve_peaks(const std::vector<double>& pm, std::size_t pad,
                                        std::size_t max_peaks, double rel_floor) {
  const std::size_t size = pm.size();
  const double bins = static_cast<double>(size) / static_cast<double>(pad);
  std::vector<std::size_t> maxima;
  for (std::size_t u = 0; u < size; ++u) {
    const double left = pm[(u + size - 1) % size];
    const double right = pm[(u + 1) % size];
    if (pm[u] > left && pm[u] >= right) maxima.push_back(u);
  }
  std::sort(maxima.begin(), maxima.end(), [&](std::size_t a, std::size_t b) {
    return pm[a] != pm[b] ? pm[a] > pm[b] : a < b;
  });

  std::vector<double> sorted(pm);
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(size / 2), sorted.end());
  const double floor = kNoiseFloorFactor * sorted[size / 2];
  const double strongest = maxima.empty() ? 0.0 : pm[maxima.front()];

  std::vector<std::size_t> accepted;
  for (std::size_t u : maxima) {
    if (accepted.size() == max_peaks) break;
    const double v = pm[u];
    if (v <= floor || v < rel_floor * strongest) break;
    bool keep = true;
    for (std::size_t a : accepted) {
      const std::size_t diff = u > a ? u - a : a - u;
      const double dist = static_cast<double>(std::min(diff, size - diff)) / static_cast<double>(pad);
      if (dist < kMinSeparationBins || v < kSidelobeLevel * pm[a]) {
        keep = false;
        break;
      }
    }
    if (keep) accepted.push_back(u);
  }

  std::vector<SpectralPeak> peaks;
  for (std::size_t u : accepted) {
    const double ym = pm[(u + size - 1) % size];
    const double y0 = pm[u];
    const double yp = pm[(u + 1) % size];
    const double denom = ym - 2.0 * y0 + yp;
    const double delta = denom != 0.0 ? 0.5 * (ym - yp) / denom : 0.0;
    peaks.push_back({wrap_bins((static_cast<double>(u) + delta) / static_cast<double>(pad), bins), y0});
  }
  return peaks;
}

// Pairs preamble and SFD peaks by amplitude rank; equal amplitudes are
// resolved by frequency proximity.
std::vector<OffsetEstimate> pair_peaks(std::vector<SpectralPeak> up, std::vector<SpectralPeak> down,
                                       std::size_t count, const LoraParams& params) {
  const double n = params.chips();
  for (std::size_t i = 0; i + 1 < count; ++i) {
    if (up[i].mag != up[i + 1].mag) continue;
    auto dist = [&](double a, double b) {
      const double d = wrap_bins(a - b, n);
      return std::min(d, n - d);
    };
    const double keep = dist(up[i].bin, down[i].bin) + dist(up[i + 1].bin, down[i + 1].bin);
    const double swap = dist(up[i].bin, down[i + 1].bin) + dist(up[i + 1].bin, down[i].bin);
    if (swap < keep) std::swap(down[i], down[i + 1]);
  }
  std::vector<OffsetEstimate> out;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(offsets_from_peaks(up[i].bin, down[i].bin, up[i].mag, params));
  return out;
}

std::vector<double> window_paired_magnitude(const IqBuffer& signal, long long start, bool sfd,
                                            const LoraParams& params) {
  const std::size_t len = params.rx_symbol_len();
  const auto up = chirp_table(params.sf, params.osr_rx).upchirp();
  auto win = detail::window_at(signal, start, len);
  for (std::size_t n = 0; n < len; ++n) win[n] *= sfd ? up[n] : std::conj(up[n]);
  const auto spec = fft(win, len);
  return paired_magnitude(spec, params);
}

// Joint least-squares fit of all users to the preamble and SFD windows. Each
// user is a synthesized preamble/SFD waveform with its own CFO and a delay on
// the reconstruction grid; complex gains are solved per window, so the fit
// only needs CFO accuracy within a symbol. The objective is the signal energy
// captured by the users' span.
class PreambleFit {
 public:
  PreambleFit(const IqBuffer& signal, std::size_t start, std::size_t users,
              const LoraParams& params)
      : params_(params),
        len_(params.rx_symbol_len()),
        users_(users),
        active_(users),
        frame_(build_frame_symbols({}, params, params.osr_rec).samples),
        cols_(users, std::vector<Complex>(kFitWindows * len_)),
        periodic_(users, false),
        step_(users, Complex{1.0, 0.0}),
        gram_(kFitWindows, Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(users),
                                                  static_cast<Eigen::Index>(users))),
        proj_(kFitWindows, Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(users))) {
    y_.reserve(kFitWindows * len_);
    for (std::size_t j = 0; j < kFitWindows; ++j) {
      const auto win = detail::window_at(
          signal, static_cast<long long>(start + window_index(j) * len_), len_);
      y_.insert(y_.end(), win.begin(), win.end());
    }
  }

  // Sets user m's column and updates the cached inner products.
  void set(std::size_t m, double cfo, long long shift) {
    const long long period = static_cast<long long>(len_) * params_.decimation();
    // Within the preamble a column repeats from window to window up to the
    // CFO rotation over one symbol.
    periodic_[m] = params_.preamble_len > kFirstPreambleWindow + kPreambleWindows &&
                   std::abs(shift) < period - params_.decimation();
    step_[m] = unit_phasor(cfo * static_cast<double>(period) / params_.rec_rate());
    render(cfo, shift, periodic_[m], cols_[m]);

    const auto mi = static_cast<Eigen::Index>(m);
    for (std::size_t k = 0; k < users_; ++k) {
      const auto ki = static_cast<Eigen::Index>(k);
      const bool repeat = periodic_[k] && periodic_[m];
      const Complex rel = std::conj(step_[k]) * step_[m];
      Complex turn{1.0, 0.0};
      Complex first{};
      for (std::size_t j = 0; j < kFitWindows; ++j) {
        Complex g;
        if (repeat && j > 0 && j < kRepeatWindows) {
          turn *= rel;
          g = first * turn;
        } else if (j < kRepeatWindows && (periodic_[k] || periodic_[m])) {
          // One side is stored as its first window only.
          g = dot(cols_[k], periodic_[k] ? 0 : j, cols_[m], periodic_[m] ? 0 : j);
          if (periodic_[k]) g *= std::pow(std::conj(step_[k]), static_cast<int>(j));
          if (periodic_[m]) g *= std::pow(step_[m], static_cast<int>(j));
          first = g;
        } else {
          g = dot(cols_[k], j, cols_[m], j);
          first = g;
        }
        gram_[j](ki, mi) = g;
        gram_[j](mi, ki) = std::conj(g);
      }
    }
    Complex turn{1.0, 0.0};
    for (std::size_t j = 0; j < kFitWindows; ++j) {
      if (periodic_[m] && j < kRepeatWindows) {
        proj_[j](mi) = dot(cols_[m], 0, y_, j) * turn;
        turn *= std::conj(step_[m]);
      } else {
        proj_[j](mi) = dot(cols_[m], j, y_, j);
      }
    }
  }

  // With `coherent` set, each user has one gain over all windows, which ties
  // the SFD peaks to the preamble peaks through amplitude and CFO phase.
  double energy(bool coherent = false) const {
    const auto a = static_cast<Eigen::Index>(active_);
    auto captured = [a](const Eigen::MatrixXcd& g, const Eigen::VectorXcd& p) {
      // Light diagonal loading keeps coincident users from blowing up the solve.
      Eigen::MatrixXcd block = g.topLeftCorner(a, a);
      const double load = kLoading * std::max(block.diagonal().real().maxCoeff(), 1e-300);
      block.diagonal().array() += load;
      const Eigen::VectorXcd head = p.head(a);
      return std::real(head.dot(block.ldlt().solve(head)));
    };
    if (coherent) {
      Eigen::MatrixXcd g = gram_.front();
      Eigen::VectorXcd p = proj_.front();
      for (std::size_t j = 1; j < kFitWindows; ++j) {
        g += gram_[j];
        p += proj_[j];
      }
      return captured(g, p);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < kFitWindows; ++j) total += captured(gram_[j], proj_[j]);
    return total;
  }

  // Share of the SFD windows' energy captured with per-window gains.
  double sfd_fraction() const {
    const auto a = static_cast<Eigen::Index>(active_);
    double captured = 0.0, total = 0.0;
    for (std::size_t j = kPreambleWindows; j < kFitWindows; ++j) {
      Eigen::MatrixXcd block = gram_[j].topLeftCorner(a, a);
      block.diagonal().array() += kLoading * std::max(block.diagonal().real().maxCoeff(), 1e-300);
      const Eigen::VectorXcd head = proj_[j].head(a);
      captured += std::real(head.dot(block.ldlt().solve(head)));
      total += std::real(dot(y_, j, y_, j));
    }
    return total > 0.0 ? captured / total : 0.0;
  }

  // Only the first k users enter the energy.
  void set_active(std::size_t k) { active_ = k; }

  // Energy with user m moved to (cfo, shift); the fit is left in that state.
  double try_at(std::size_t m, double cfo, long long shift, bool coherent = false) {
    set(m, cfo, shift);
    return energy(coherent);
  }

 private:
  static constexpr std::size_t kFitWindows = kPreambleWindows + kSfdWindows;
  static constexpr double kLoading = 1e-9;
  static constexpr std::size_t kRepeatWindows = kPreambleWindows;

  std::size_t window_index(std::size_t j) const {
    return j < static_cast<std::size_t>(kPreambleWindows)
               ? kFirstPreambleWindow + j
               : static_cast<std::size_t>(params_.preamble_len) + (j - kPreambleWindows);
  }

  // Inner product of window ja of a with window jb of b.
  Complex dot(const std::vector<Complex>& a, std::size_t ja, const std::vector<Complex>& b,
              std::size_t jb) const {
    const auto n = static_cast<Eigen::Index>(len_);
    const Eigen::Map<const Eigen::VectorXcd> va(a.data() + ja * len_, n);
    const Eigen::Map<const Eigen::VectorXcd> vb(b.data() + jb * len_, n);
    return va.dot(vb);
  }

  // A periodic column keeps only the first preamble window and the SFD.
  void render(double cfo, long long shift, bool periodic, std::vector<Complex>& out) const {
    const long long dec = params_.decimation();
    const long long size = static_cast<long long>(frame_.size());
    const double rate = params_.rec_rate();
    const Complex step = unit_phasor(cfo * static_cast<double>(dec) / rate);
    for (std::size_t j = 0; j < kFitWindows; ++j) {
      if (periodic && j > 0 && j < kRepeatWindows) continue;
      const long long first = static_cast<long long>(window_index(j) * len_) * dec - shift;
      Complex rot = unit_phasor(cfo * static_cast<double>(first) / rate);
      for (std::size_t q = 0; q < len_; ++q, rot *= step) {
        const long long n = first + static_cast<long long>(q) * dec;
        out[j * len_ + q] = (n < 0 || n >= size) ? Complex{} : frame_[static_cast<std::size_t>(n)] * rot;
      }
    }
  }

  LoraParams params_;
  std::size_t len_;
  std::size_t users_;
  std::size_t active_;
  std::vector<Complex> frame_;
  std::vector<Complex> y_;
  std::vector<std::vector<Complex>> cols_;
  std::vector<bool> periodic_;
  std::vector<Complex> step_;
  std::vector<Eigen::MatrixXcd> gram_;
  std::vector<Eigen::VectorXcd> proj_;
};

struct FitPoint {
  double cfo = 0.0;
  long long shift = 0;
};

OffsetEstimate estimate_from_fit(const FitPoint& pt, double amp, const LoraParams& params) {
  const double n = params.chips();
  OffsetEstimate est;
  est.cfo_hat = pt.cfo;
  est.to_hat = static_cast<double>(pt.shift) / params.rec_rate();
  const double cfo_bins = pt.cfo * n / params.bw;
  const double to_bins = est.to_hat * params.bw;
  est.f_up = cfo_bins - to_bins;
  est.f_down = cfo_bins + to_bins;
  est.amp = amp;
  return est;
}

// Parabolic line search over user m's CFO at a fixed delay with shrinking
// steps (in bins); returns the CFO and its energy in `e_out`.
double search_cfo_at(PreambleFit& fit, std::size_t m, long long shift, double cfo,
                     std::span<const double> steps, double bin_hz, bool coherent, double& e_out) {
  double e0 = fit.try_at(m, cfo, shift, coherent);
  for (double step_bins : steps) {
    const double s = step_bins * bin_hz;
    const double em = fit.try_at(m, cfo - s, shift, coherent);
    const double ep = fit.try_at(m, cfo + s, shift, coherent);
    double next = cfo;
    double e_next = e0;
    const double curv = em - 2.0 * e0 + ep;
    if (curv < 0.0) {
      const double cand = cfo + std::clamp(0.5 * (em - ep) / curv, -2.0, 2.0) * s;
      const double ec = fit.try_at(m, cand, shift, coherent);
      if (ec > e_next) {
        next = cand;
        e_next = ec;
      }
    }
    if (em > e_next) {
      next = cfo - s;
      e_next = em;
    }
    if (ep > e_next) {
      next = cfo + s;
      e_next = ep;
    }
    cfo = next;
    e0 = e_next;
  }
  fit.set(m, cfo, shift);
  e_out = e0;
  return cfo;
}

// Fine CFO under the coherent fit, whose phase continuity over the preamble
// and SFD pins the CFO far tighter than single windows.
void refine_cfo_coherent(PreambleFit& fit, std::vector<FitPoint>& pts, const LoraParams& params) {
  const double bin_hz = params.bw / params.chips();
  constexpr double kSteps[] = {0.01, 0.003, 0.001, 0.0003, 0.0001};
  constexpr double kWalkSteps[] = {0.01, 0.003};
  constexpr int kCoarseSteps = 10;
  constexpr double kCoarseBins = 0.05;
  for (int sweep = 0; sweep < kCoherentSweeps; ++sweep) {
    // Pairs whose peaks merge on one side: the split of the merged peak is
    // scanned by moving the two users' peaks on that side in opposite
    // directions, which also crosses them over.
    double e_pair = fit.energy(true);
    constexpr long long kSplitSteps = 8;
    constexpr double kMergedBins = 2.0;
    for (std::size_t a = 0; a < pts.size(); ++a) {
      for (std::size_t b = a + 1; b < pts.size(); ++b) {
        for (double hold : {1.0, -1.0}) {
          // Peak on the moving side: f_down when f_up is held and vice versa.
          auto moving_peak = [&](const FitPoint& pt) {
            return pt.cfo / bin_hz + hold * static_cast<double>(pt.shift) / params.osr_rec;
          };
          if (std::abs(moving_peak(pts[a]) - moving_peak(pts[b])) > kMergedBins) continue;
          const FitPoint base_a = pts[a], base_b = pts[b];
          for (long long d = -kSplitSteps; d <= kSplitSteps; ++d) {
            if (d == 0) continue;
            const auto moved = [&](const FitPoint& pt, long long k) {
              return FitPoint{pt.cfo + hold * static_cast<double>(k) / params.osr_rec * bin_hz, pt.shift + k};
            };
            FitPoint pa = moved(base_a, d), pb = moved(base_b, -d);
            fit.set(b, pb.cfo, pb.shift);
            double e_probe = 0.0;
            pa.cfo = search_cfo_at(fit, a, pa.shift, pa.cfo, kWalkSteps, bin_hz, true, e_probe);
            pb.cfo = search_cfo_at(fit, b, pb.shift, pb.cfo, kWalkSteps, bin_hz, true, e_probe);
            if (e_probe > e_pair) {
              pts[a] = pa;
              pts[b] = pb;
              e_pair = e_probe;
            }
          }
          fit.set(a, pts[a].cfo, pts[a].shift);
          fit.set(b, pts[b].cfo, pts[b].shift);
        }
      }
    }
    for (std::size_t m = 0; m < pts.size(); ++m) {
      // Coarse scan first: with merged peaks the per-window fit can leave the
      // CFO a few tenths of a bin off, beyond reach of the fine search.
      double e = fit.try_at(m, pts[m].cfo, pts[m].shift, true);
      const double centre = pts[m].cfo;
      for (int k = -kCoarseSteps; k <= kCoarseSteps; ++k) {
        const double cand = centre + k * kCoarseBins * bin_hz;
        const double ec = k == 0 ? e : fit.try_at(m, cand, pts[m].shift, true);
        if (ec > e) {
          e = ec;
          pts[m].cfo = cand;
        }
      }
      pts[m].cfo = search_cfo_at(fit, m, pts[m].shift, pts[m].cfo, kSteps, bin_hz, true, e);
      if (pts.size() < 2) continue;
      // Delay walk with one chirp direction's peak held fixed; per-window
      // gains leave the split of merged peaks between users loosely pinned.
      // hold = 0 walks the delay at fixed CFO.
      for (double hold : {1.0, -1.0, 0.0}) {
        for (long long dir : {-1LL, 1LL}) {
          while (true) {
            FitPoint probe{pts[m].cfo + hold * static_cast<double>(dir) / params.osr_rec * bin_hz,
                           pts[m].shift + dir};
            double e_probe = 0.0;
            probe.cfo = search_cfo_at(fit, m, probe.shift, probe.cfo, kWalkSteps, bin_hz, true, e_probe);
            if (e_probe <= e) break;
            pts[m] = probe;
            e = e_probe;
          }
          fit.set(m, pts[m].cfo, pts[m].shift);
        }
      }
      pts[m].cfo = search_cfo_at(fit, m, pts[m].shift, pts[m].cfo, kSteps, bin_hz, true, e);
    }
  }
}

// Coordinate ascent: for each user, a walk over grid delays with a parabolic
// CFO search at each delay.
double refine_fit(PreambleFit& fit, std::vector<FitPoint>& pts, const LoraParams& params,
                  int sweeps, std::size_t first = 0, bool coarse = false) {
  const double bin_hz = params.bw / params.chips();
  constexpr double kFine[] = {0.2, 0.05, 0.0125, 0.003};
  const std::span<const double> steps = coarse ? std::span<const double>(kFine, 2) : std::span<const double>(kFine);
  double best = fit.energy();
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    const double before = best;
    for (std::size_t m = first; m < pts.size(); ++m) {
      auto search_cfo = [&](long long shift, double cfo, double& e_out) {
        return search_cfo_at(fit, m, shift, cfo, steps, bin_hz, false, e_out);
      };

      FitPoint cur = pts[m];
      if (sweep < kScanSweeps) {
        // Walk the delay with one chirp direction's peak held fixed, which
        // recovers a peak that was merged with another user's.
        double e_scan = fit.try_at(m, cur.cfo, cur.shift);
        const FitPoint origin = cur;
        for (double hold : {1.0, -1.0}) {
          for (long long k = -kScanSteps; k <= kScanSteps; ++k) {
            const long long delta = k * kScanStride;
            const FitPoint probe{origin.cfo + hold * static_cast<double>(delta) / params.osr_rec * bin_hz,
                                 origin.shift + delta};
            const double e = fit.try_at(m, probe.cfo, probe.shift);
            if (e > e_scan) {
              e_scan = e;
              cur = probe;
            }
          }
        }
      }
      double e_cur = 0.0;
      cur.cfo = search_cfo(cur.shift, cur.cfo, e_cur);
      for (int dir : {-1, 1}) {
        FitPoint probe = cur;
        while (true) {
          probe.shift += dir;
          double e = 0.0;
          probe.cfo = search_cfo(probe.shift, probe.cfo, e);
          if (e <= e_cur) break;
          cur = probe;
          e_cur = e;
        }
      }
      pts[m] = cur;
      fit.set(m, cur.cfo, cur.shift);
      best = e_cur;
    }
    if (best <= before * (1.0 + kConverged)) break;
  }
  return best;
}

}  // namespace

OffsetEstimate offsets_from_peaks(double f_up, double f_down, double amp, const LoraParams& params) {
  const double n = params.chips();
  const double diff = wrap_bins(f_down - f_up, n);
  const double to_bins = diff / 2.0 < n / 4.0 ? diff / 2.0 : (diff - n) / 2.0;
  double cfo_bins = wrap_bins(f_up + to_bins, n);
  if (cfo_bins >= n / 2.0) cfo_bins -= n;

  OffsetEstimate est;
  est.f_up = cfo_bins - to_bins;
  est.f_down = cfo_bins + to_bins;
  est.amp = amp;
  est.cfo_hat = (est.f_up + est.f_down) / 2.0 * params.bw / n;
  est.to_hat = (est.f_down - est.f_up) / 2.0 / params.bw;
  return est;
}

namespace {

// Per-window gains cannot tell which user owns which SFD peak; exchanging the
// SFD peaks of a pair is kept when the coherent fit prefers it.
void resolve_sfd_swaps(PreambleFit& fit, std::vector<FitPoint>& pts, const LoraParams& params) {
  const double bin_hz = params.bw / params.chips();
  auto peaks = [&](const FitPoint& pt) {
    const double to_bins = static_cast<double>(pt.shift) / params.osr_rec;
    const double cfo_bins = pt.cfo / bin_hz;
    return std::pair{cfo_bins - to_bins, cfo_bins + to_bins};
  };
  auto from_peaks = [&](double f_up, double f_down) {
    const long long shift = std::llround((f_down - f_up) / 2.0 * params.osr_rec);
    const double to_bins = static_cast<double>(shift) / params.osr_rec;
    return FitPoint{(f_up + to_bins) * bin_hz, shift};
  };
  double best = fit.energy(true);
  for (std::size_t a = 0; a < pts.size(); ++a) {
    for (std::size_t b = a + 1; b < pts.size(); ++b) {
      const auto [up_a, down_a] = peaks(pts[a]);
      const auto [up_b, down_b] = peaks(pts[b]);
      const FitPoint new_a = from_peaks(up_a, down_b);
      const FitPoint new_b = from_peaks(up_b, down_a);
      fit.set(a, new_a.cfo, new_a.shift);
      fit.set(b, new_b.cfo, new_b.shift);
      const double e = fit.energy(true);
      if (e > best) {
        best = e;
        pts[a] = new_a;
        pts[b] = new_b;
      } else {
        fit.set(a, pts[a].cfo, pts[a].shift);
        fit.set(b, pts[b].cfo, pts[b].shift);
      }
    }
  }
}

}  // namespace

namespace {

// Refinement followed by SFD swap resolution; returns the per-window energy.
double polish(PreambleFit& fit, std::vector<FitPoint>& pts, const LoraParams& params) {
  double e = refine_fit(fit, pts, params, kRefineSweeps);
  if (pts.size() < 2) {
    refine_cfo_coherent(fit, pts, params);
    return e;
  }
  const auto before = pts;
  resolve_sfd_swaps(fit, pts, params);
  const bool swapped = !std::equal(before.begin(), before.end(), pts.begin(),
                                   [](const FitPoint& x, const FitPoint& y) {
                                     return x.shift == y.shift && x.cfo == y.cfo;
                                   });
  if (swapped) e = refine_fit(fit, pts, params, kRefineSweeps);
  refine_cfo_coherent(fit, pts, params);
  return e;
}

// Adds users one at a time. Each step refines every unused preamble/SFD peak
// pair as the next user against the earlier ones, refines the most promising
// few jointly with all users and keeps the one capturing the most energy.
void grow_users(PreambleFit& fit, const std::vector<SpectralPeak>& up,
                const std::vector<SpectralPeak>& down, std::size_t count,
                const LoraParams& params, std::vector<FitPoint>& pts, std::vector<double>& amps) {
  struct Option {
    double energy;
    std::size_t i, j;
    FitPoint pt;
  };
  std::vector<std::pair<std::size_t, std::size_t>> used;
  for (std::size_t k = 0; k < count; ++k) {
    fit.set_active(k + 1);
    std::vector<Option> options;
    for (std::size_t i = 0; i < up.size(); ++i) {
      for (std::size_t j = 0; j < down.size(); ++j) {
        if (std::find(used.begin(), used.end(), std::pair{i, j}) != used.end()) continue;
        const auto est = offsets_from_peaks(up[i].bin, down[j].bin, up[i].mag, params);
        // Quick look: the new user alone is refined against the others.
        std::vector<FitPoint> trial = pts;
        trial.push_back({est.cfo_hat, std::llround(est.to_hat * params.rec_rate())});
        fit.set(k, trial.back().cfo, trial.back().shift);
        const double e = refine_fit(fit, trial, params, 1, k, true);
        options.push_back({e, i, j, trial.back()});
      }
    }
    std::sort(options.begin(), options.end(),
              [](const Option& a, const Option& b) { return a.energy > b.energy; });
    options.resize(std::min(options.size(), kGrowKeep));
    double best = -1.0;
    Option chosen = options.front();
    std::vector<FitPoint> chosen_pts;
    for (const auto& opt : options) {
      auto trial = pts;
      trial.push_back(opt.pt);
      for (std::size_t m = 0; m <= k; ++m) fit.set(m, trial[m].cfo, trial[m].shift);
      const double e = refine_fit(fit, trial, params, 1, 0, true);
      if (e > best) {
        best = e;
        chosen = opt;
        chosen_pts = std::move(trial);
      }
    }
    used.emplace_back(chosen.i, chosen.j);
    pts = std::move(chosen_pts);
    amps.push_back(up[chosen.i].mag);
    for (std::size_t m = 0; m <= k; ++m) fit.set(m, pts[m].cfo, pts[m].shift);
  }
  fit.set_active(count);
}

// Users whose peaks merge on both sides: peaks are reused round-robin and the
// duplicates are pushed apart along one of four directions before refinement.
std::vector<OffsetEstimate> refine_merged(const IqBuffer& signal, std::size_t start,
                                          const std::vector<SpectralPeak>& up,
                                          const std::vector<SpectralPeak>& down,
                                          std::size_t count, const LoraParams& params) {
  const double bin_hz = params.bw / params.chips();
  const double grid_per_bin = params.osr_rec;
  constexpr double kSpread = 0.7;
  constexpr double kDirections[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};

  PreambleFit fit(signal, start, count, params);
  std::vector<FitPoint> best_pts;
  double best_energy = -1.0;
  for (const auto& dir : kDirections) {
    std::vector<FitPoint> pts;
    for (std::size_t m = 0; m < count; ++m) {
      const auto est = offsets_from_peaks(up[m % up.size()].bin, down[m % down.size()].bin,
                                          up[m % up.size()].mag, params);
      const double k = static_cast<double>(m / std::max(up.size(), down.size())) *
                       (m % 2 == 0 ? 1.0 : -1.0);
      pts.push_back({est.cfo_hat + k * kSpread * dir[0] * bin_hz,
                     std::llround(est.to_hat * params.rec_rate() + k * kSpread * dir[1] * grid_per_bin)});
      fit.set(m, pts[m].cfo, pts[m].shift);
    }
    const double e = polish(fit, pts, params);
    if (e > best_energy) {
      best_energy = e;
      best_pts = pts;
    }
  }
  std::vector<OffsetEstimate> out;
  for (const auto& pt : best_pts) out.push_back(estimate_from_fit(pt, up.front().mag, params));
  return out;
}

}  // namespace

double sfd_fit_fraction(const IqBuffer& signal, std::size_t start,
                        std::span<const OffsetEstimate> offsets, const LoraParams& params) {
  PreambleFit fit(signal, start, offsets.size(), params);
  for (std::size_t m = 0; m < offsets.size(); ++m)
    fit.set(m, offsets[m].cfo_hat, rec_grid_shift(offsets[m].to_hat, params));
  return fit.sfd_fraction();
}

std::vector<OffsetEstimate> estimate_offsets(const IqBuffer& signal, std::size_t start, int users,
                                             const LoraParams& params) {
  if (users < 1) throw DomainError("users must be >= 1");
  const auto count = static_cast<std::size_t>(users);
  const auto s = static_cast<long long>(start);
  const auto up = resolve_peaks(averaged_spectrum(signal, s, kFirstPreambleWindow, kPreambleWindows,
                                                  false, kEstimationPad, params),
                                kEstimationPad, count, 0.0);
  const auto down = resolve_peaks(
      averaged_spectrum(signal, s, params.preamble_len, kSfdWindows, true, kEstimationPad, params),
      kEstimationPad, count, 0.0);
  if (up.empty() || down.empty()) throw EstimationError("no preamble/SFD peak found");

  PreambleFit fit(signal, start, count, params);
  std::vector<FitPoint> best_pts;
  std::vector<double> best_amps;
  if (up.size() == count && down.size() == count) {
    for (const auto& est : pair_peaks(up, down, count, params)) {
      best_pts.push_back({est.cfo_hat, std::llround(est.to_hat * params.rec_rate())});
      best_amps.push_back(est.amp);
      fit.set(best_pts.size() - 1, best_pts.back().cfo, best_pts.back().shift);
    }
  } else {
    // Fewer peaks than users on one side: some users share a merged peak.
    if (up.size() * down.size() < count) return refine_merged(signal, start, up, down, count, params);
    grow_users(fit, up, down, count, params, best_pts, best_amps);
  }
  polish(fit, best_pts, params);

  std::vector<OffsetEstimate> out;
  for (std::size_t m = 0; m < count; ++m)
    out.push_back(estimate_from_fit(best_pts[m], best_amps[m], params));
  std::stable_sort(out.begin(), out.end(),
                   [](const OffsetEstimate& a, const OffsetEstimate& b) { return a.amp > b.amp; });
  return out;
}

std::optional<std::size_t> detect_preamble(const IqBuffer& signal, const LoraParams& params) {
  const std::size_t len = params.rx_symbol_len();
  const long long n_chips = params.chips();
  const std::size_t windows = signal.size() / len;

  // A bin that stays a significant peak over consecutive windows. Several
  // users may each hold one, so every significant local maximum is tracked.
  const long long size = static_cast<long long>(n_chips);
  std::vector<int> prev_run(static_cast<std::size_t>(size), 0);
  std::vector<int> run(static_cast<std::size_t>(size), 0);
  long long run_first = -1;
  long long run_bin = 0;
  for (std::size_t w = 0; w < windows && run_first < 0; ++w) {
    const auto pm = window_paired_magnitude(signal, static_cast<long long>(w * len), false, params);
    const double mean = std::accumulate(pm.begin(), pm.end(), 0.0) / static_cast<double>(pm.size());
    std::fill(run.begin(), run.end(), 0);
    if (mean > 0.0) {
      for (long long u = 0; u < size; ++u) {
        const double v = pm[static_cast<std::size_t>(u)];
        if (v < kMinPeakToMean * mean || v < pm[static_cast<std::size_t>((u + size - 1) % size)] ||
            v < pm[static_cast<std::size_t>((u + 1) % size)])
          continue;
        int longest = 0;
        for (long long d = -kRunTolerance; d <= kRunTolerance; ++d)
          longest = std::max(longest, prev_run[static_cast<std::size_t>((u + d + size) % size)]);
        run[static_cast<std::size_t>(u)] = longest + 1;
        if (longest + 1 >= kStableWindows && run_first < 0) {
          run_first = static_cast<long long>(w) - (kStableWindows - 1);
          run_bin = u;
        }
      }
    }
    std::swap(run, prev_run);
  }
  if (run_first < 0) return std::nullopt;

  // Zero-CFO back-solve; the symbol index is picked by SFD energy.
  const long long l = static_cast<long long>(len);
  const long long offset = ((n_chips - run_bin) % n_chips) * params.osr_rx;
  long long best = -1;
  double best_score = -1.0;
  for (long long q = run_first - 2; q <= run_first + 3; ++q) {
    const long long a = q * l + offset;
    if (a < 0 || a + (params.preamble_len + kSfdWindows) * l > static_cast<long long>(signal.size()))
      continue;
    double score = 0.0;
    for (int k = 0; k < kSfdWindows; ++k) {
      const auto pm = window_paired_magnitude(signal, a + (params.preamble_len + k) * l, true, params);
      score += *std::max_element(pm.begin(), pm.end());
    }
    if (score > best_score) {
      best_score = score;
      best = a;
    }
  }
  if (best < 0) return std::nullopt;

  // The dominant user's CFO shifts the back-solved start; its TO relative to
  // `best` follows from the preamble/SFD peak pair.
  {
    const auto up = resolve_peaks(averaged_spectrum(signal, best, kFirstPreambleWindow,
                                                    kPreambleWindows, false, kDetectionPad, params),
                                  kDetectionPad, 1, 0.0);
    const auto down = resolve_peaks(averaged_spectrum(signal, best, params.preamble_len, kSfdWindows,
                                                      true, kDetectionPad, params),
                                    kDetectionPad, 1, 0.0);
    if (up.empty() || down.empty()) return std::nullopt;
    const auto est = offsets_from_peaks(up[0].bin, down[0].bin, up[0].mag, params);
    best += std::llround(est.to_hat * params.rx_rate());
  }

  // Move to the earliest significant user.
  {
    constexpr std::size_t kMaxUsers = 8;
    constexpr double kSignificant = 0.15;
    const auto up = resolve_peaks(averaged_spectrum(signal, best, kFirstPreambleWindow,
                                                    kPreambleWindows, false, kDetectionPad, params),
                                  kDetectionPad, kMaxUsers, kSignificant);
    const auto down = resolve_peaks(averaged_spectrum(signal, best, params.preamble_len, kSfdWindows,
                                                      true, kDetectionPad, params),
                                    kDetectionPad, kMaxUsers, kSignificant);
    const std::size_t count = std::min(up.size(), down.size());
    if (count > 1) {
      double earliest = 0.0;
      for (const auto& est : pair_peaks(up, down, count, params))
        earliest = std::min(earliest, est.to_hat);
      const double limit = -0.25 * params.symbol_duration();
      best += std::llround(std::max(earliest, limit) * params.rx_rate());
    }
  }
  if (best < 0) best = 0;
  return static_cast<std::size_t>(best);
}

IqBuffer reconstruct_symbol(std::uint32_t s, double cfo, double to, Complex h,
                            const LoraParams& params, double t_start) {
  const auto& table = chirp_table(params.sf, params.osr_rec);
  const long long shift = rec_grid_shift(to, params);
  const long long dec = params.decimation();
  const long long len = static_cast<long long>(table.size());
  const double rate = params.rec_rate();

  IqBuffer out;
  out.rate = params.rx_rate();
  out.samples.assign(params.rx_symbol_len(), Complex{});
  for (std::size_t r = 0; r < out.samples.size(); ++r) {
    const long long n = static_cast<long long>(r) * dec - shift;
    if (n < 0 || n >= len) continue;
    const double cycles = cfo * t_start + cfo * static_cast<double>(n) / rate;
    out.samples[r] = h * table.symbol_sample(s, static_cast<std::size_t>(n)) * unit_phasor(cycles);
  }
  return out;
}

SymbolSynth::SymbolSynth(const LoraParams& params, double cfo, double to, Complex h)
    : params_(params), cfo_(cfo), shift_(rec_grid_shift(to, params)), h_(h) {
  rotation_.resize(params.rx_symbol_len());
  for (std::size_t r = 0; r < rotation_.size(); ++r)
    rotation_[r] = unit_phasor(cfo * static_cast<double>(r) / params.rx_rate());
}

void SymbolSynth::render(std::uint32_t s, double t_start, std::span<Complex> out) const {
  const auto& table = chirp_table(params_.sf, params_.osr_rec);
  const long long dec = params_.decimation();
  const long long len = static_cast<long long>(table.size());
  const Complex c =
      h_ * unit_phasor(cfo_ * t_start - cfo_ * static_cast<double>(shift_) / params_.rec_rate());
  for (std::size_t r = 0; r < out.size(); ++r) {
    const long long n = static_cast<long long>(r) * dec - shift_;
    out[r] = (n < 0 || n >= len)
                 ? Complex{}
                 : c * table.symbol_sample(s, static_cast<std::size_t>(n)) * rotation_[r];
  }
}

std::vector<ChannelEstimate> estimate_channels(const IqBuffer& signal, std::size_t start,
                                               std::span<const OffsetEstimate> offsets,
                                               const LoraParams& params, std::size_t trunc) {
  const std::size_t len = params.rx_symbol_len();
  const std::size_t users = offsets.size();
  const std::size_t rows = len * kPreambleWindows;
  const double ts = params.symbol_duration();

  Eigen::MatrixXcd e(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(users));
  Eigen::VectorXcd y(static_cast<Eigen::Index>(rows));
  std::vector<Complex> buf(len);
  for (std::size_t m = 0; m < users; ++m) {
    const SymbolSynth synth(params, offsets[m].cfo_hat, offsets[m].to_hat, Complex{1.0, 0.0});
    for (int j = 0; j < kPreambleWindows; ++j) {
      synth.render(0, (kFirstPreambleWindow + j) * ts, buf);
      const auto spec = dechirp_truncated(buf, params, trunc);
      for (std::size_t b = 0; b < len; ++b)
        e(static_cast<Eigen::Index>(j * len + b), static_cast<Eigen::Index>(m)) = spec[b];
    }
  }
  for (int j = 0; j < kPreambleWindows; ++j) {
    const auto win = detail::window_at(
        signal, static_cast<long long>(start + (kFirstPreambleWindow + j) * len), len);
    const auto spec = dechirp_truncated(win, params, trunc);
    for (std::size_t b = 0; b < len; ++b) y(static_cast<Eigen::Index>(j * len + b)) = spec[b];
  }

  const Eigen::MatrixXcd gram = e.adjoint() * e;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(gram, Eigen::EigenvaluesOnly);
  const auto& lambda = eig.eigenvalues();
  if (!(lambda.minCoeff() > 1e-10 * lambda.maxCoeff()))
    throw EstimationError("channel estimation matrix is rank deficient");
  const Eigen::VectorXcd h = gram.ldlt().solve(e.adjoint() * y);
  const double residual = (y - e * h).norm();

  std::vector<ChannelEstimate> out;
  for (std::size_t m = 0; m < users; ++m) out.push_back({h(static_cast<Eigen::Index>(m)), residual});
  return out;
}

}  // namespace loramp
