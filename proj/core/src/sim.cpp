#include "loramp/sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "loramp/aggregator.hpp"
#include "loramp/coding.hpp"
#include "loramp/error.hpp"
#include "loramp/rx_decoder.hpp"
#include "loramp/tx_chain.hpp"

namespace loramp {

Mode parse_mode(std::string_view name) {
  if (name == "phy") return Mode::Phy;
  if (name == "colocated") return Mode::Colocated;
  if (name == "ideal-map") return Mode::IdealMap;
  if (name == "net") return Mode::Net;
  throw ConfigError("unknown mode '" + std::string(name) + "'");
}

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::Phy: return "phy";
    case Mode::Colocated: return "colocated";
    case Mode::IdealMap: return "ideal-map";
    case Mode::Net: return "net";
  }
  return "?";
}

Transmission parse_transmission(std::string_view name) {
  if (name == "co") return Transmission::Coordinated;
  if (name == "unco") return Transmission::Uncoordinated;
  throw ConfigError("unknown transmission '" + std::string(name) + "' (co, unco)");
}

std::string_view to_string(Transmission tx) {
  return tx == Transmission::Coordinated ? "co" : "unco";
}

void ExperimentConfig::validate() const {
  params.validate();
  if (users < 1 || users > 8) throw ConfigError("users must be in 1..8");
  if (trials < 1) throw ConfigError("trials must be >= 1");
  if (snr_db.empty()) throw ConfigError("snr grid must not be empty");
  if (top_k < 1) throw ConfigError("topk must be >= 1");
  if (cfo_max < 0.0) throw ConfigError("cfo_max must be >= 0");
  if (to_max < 0.0 || to_max > 0.2) throw ConfigError("to_max must be in [0, 0.2] symbols");
  if (power_step_min_db < 0.0 || power_step_max_db < power_step_min_db)
    throw ConfigError("invalid power step range");
  if (duration_s <= 0.0) throw ConfigError("duration must be positive");
  if (decoder != "ideal" && decoder != "mpr-hard" && decoder != "mpr-soft")
    throw ConfigError("decoder must be ideal, mpr-hard or mpr-soft");
  for (int m : users_sweep)
    if (m < 1 || m > 8) throw ConfigError("users sweep entries must be in 1..8");
  for (int sf : sf_sweep)
    if (sf < 6 || sf > 12) throw ConfigError("sf sweep entries must be in 6..12");
  if (study_payload_bytes < 3) throw ConfigError("study payload must be >= 3 bytes");
}

ExperimentConfig config_from_json(std::string_view text, ExperimentConfig base) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c = std::move(base);
  try {
    for (const auto& [key, v] : doc.items()) {
      if (key == "sf") c.params.sf = v.get<int>();
      else if (key == "bw") c.params.bw = v.get<double>();
      else if (key == "cr") c.params.cr = v.get<int>();
      else if (key == "osr_rx") c.params.osr_rx = v.get<int>();
      else if (key == "osr_rec") c.params.osr_rec = v.get<int>();
      else if (key == "preamble_len") c.params.preamble_len = v.get<int>();
      else if (key == "payload_bytes") c.params.payload_bytes = v.get<int>();
      else if (key == "users") c.users = v.get<int>();
      else if (key == "snr") c.snr_db = v.is_array() ? v.get<std::vector<double>>() : std::vector<double>{v.get<double>()};
      else if (key == "trials") c.trials = v.get<int>();
      else if (key == "cfo_max") c.cfo_max = v.get<double>();
      else if (key == "to_max") c.to_max = v.get<double>();
      else if (key == "strategy") c.strategy = parse_strategy(v.get<std::string>());
      else if (key == "topk") c.top_k = v.get<int>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "mode") c.mode = parse_mode(v.get<std::string>());
      else if (key == "power_step_min_db") c.power_step_min_db = v.get<double>();
      else if (key == "power_step_max_db") c.power_step_max_db = v.get<double>();
      else if (key == "users_sweep") c.users_sweep = v.get<std::vector<int>>();
      else if (key == "sf_sweep") c.sf_sweep = v.get<std::vector<int>>();
      else if (key == "study_payload_bytes") c.study_payload_bytes = v.get<int>();
      else if (key == "transmission") c.transmission = parse_transmission(v.get<std::string>());
      else if (key == "duration") c.duration_s = v.get<double>();
      else if (key == "decoder") c.decoder = v.get<std::string>();
      else if (key == "threads") c.threads = v.get<unsigned>();
      else throw ConfigError("unknown config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config value has the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str(), std::move(base));
}

std::string_view csv_header() {
  return "decoder,mode,sf,cr,users,snr_db,trials,failures,ser,ber,per,phy_sym_s,net_bit_s,"
         "delay_p50_s,delay_p95_s";
}

namespace {

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string csv_line(const MetricsRow& r) {
  std::ostringstream out;
  out << r.decoder << ',' << r.mode << ',' << r.sf << ',' << r.cr << ',' << r.users << ','
      << num(r.snr_db) << ',' << r.trials << ',' << r.failures << ',' << num(r.ser) << ','
      << num(r.ber) << ',' << num(r.per) << ',' << num(r.phy_sym_s) << ',' << num(r.net_bit_s)
      << ',' << num(r.delay_p50_s) << ',' << num(r.delay_p95_s);
  return out.str();
}

void write_csv(std::ostream& out, std::span<const MetricsRow> rows) {
  out << csv_header() << '\n';
  for (const auto& r : rows) out << csv_line(r) << '\n';
}

std::mt19937_64 trial_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t trial) {
  auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xFFFFFFFFu); };
  auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
  std::seed_seq seq{lo(seed), hi(seed), lo(stream), hi(stream), lo(trial), hi(trial)};
  return std::mt19937_64(seq);
}

namespace {

// Runs fn(i) for i in [0, count) on a worker pool. Each index is processed
// exactly once; callers store results by index.
template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      try {
        for (std::size_t i = next++; i < count; i = next++) fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = count;
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Receive powers: the weakest user at 0 dB, each next one 1..3 dB above,
// assigned to users in random order.
std::vector<double> draw_powers(int users, double step_min, double step_max, std::mt19937_64& rng) {
  std::vector<double> powers(static_cast<std::size_t>(users), 0.0);
  for (std::size_t k = 1; k < powers.size(); ++k)
    powers[k] = powers[k - 1] + uniform(rng, step_min, step_max);
  std::shuffle(powers.begin(), powers.end(), rng);
  return powers;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

LoraParams study_params(const ExperimentConfig& config, int sf) {
  LoraParams p = config.params;
  p.sf = sf;
  p.payload_bytes = config.study_payload_bytes;
  return p;
}

}  // namespace

std::vector<std::uint8_t> random_payload(const LoraParams& params, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> byte(0, 255);
  std::vector<std::uint8_t> data(static_cast<std::size_t>(params.payload_bytes - 2));
  for (auto& b : data) b = static_cast<std::uint8_t>(byte(rng));
  return append_crc(data);
}

double Scenario::to_relative(std::size_t m, std::size_t start, const LoraParams& params) const {
  const double grid = static_cast<double>(static_cast<long long>(lead) * params.decimation() +
                                          rec_grid_shift(nodes[m].to, params));
  return grid / params.rec_rate() - static_cast<double>(start) / params.rx_rate();
}

Scenario make_scenario(const LoraParams& params, const ScenarioOptions& options,
                       std::mt19937_64& rng) {
  Scenario sc;
  const std::size_t len = params.rx_symbol_len();
  const auto powers = draw_powers(options.users, options.power_step_min_db,
                                  options.power_step_max_db, rng);
  for (int m = 0; m < options.users; ++m) {
    NodeTxState node;
    node.payload = random_payload(params, rng);
    node.cfo = uniform(rng, -options.cfo_max, options.cfo_max);
    node.to = options.to_max_s > 0.0 ? uniform(rng, 0.0, options.to_max_s) : 0.0;
    node.h = std::polar(1.0, uniform(rng, 0.0, 2.0 * std::numbers::pi));
    node.power_db = powers[static_cast<std::size_t>(m)];
    sc.symbols.push_back(encode_symbols(node.payload, params));
    sc.nodes.push_back(std::move(node));
  }
  sc.lead = std::uniform_int_distribution<std::size_t>(len, 2 * len - 1)(rng);

  std::vector<IqBuffer> rx;
  for (std::size_t m = 0; m < sc.nodes.size(); ++m) {
    NodeTxState delayed = sc.nodes[m];
    delayed.to = (static_cast<double>(static_cast<long long>(sc.lead) * params.decimation()) +
                  static_cast<double>(rec_grid_shift(sc.nodes[m].to, params))) /
                 params.rec_rate();
    rx.push_back(apply_impairments(build_frame_symbols(sc.symbols[m], params, params.osr_rec),
                                   delayed, params));
  }
  sc.signal = superimpose(rx);
  sc.signal.samples.resize(sc.signal.size() + 2 * len);
  const std::uint64_t noise_seed = rng();
  if (std::isfinite(options.snr_db)) {
    sc.sigma2 = noise_variance(options.snr_db, 1.0, params.osr_rx);
    sc.signal = add_awgn(sc.signal, options.snr_db, 1.0, params.osr_rx, noise_seed);
  }
  return sc;
}

std::vector<int> match_users(std::span<const OffsetEstimate> estimates, const Scenario& scenario,
                             std::size_t start, const LoraParams& params) {
  const std::size_t m = estimates.size();
  std::vector<int> perm(scenario.nodes.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best;
  double best_cost = 0.0;
  do {
    double cost = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      const auto& node = scenario.nodes[static_cast<std::size_t>(perm[k])];
      const auto truth = bin_shifts(params, node.cfo,
                                    scenario.to_relative(static_cast<std::size_t>(perm[k]), start, params));
      const auto est = bin_shifts(params, estimates[k].cfo_hat, estimates[k].to_hat);
      cost += std::abs(est.cfo_bins - truth.cfo_bins) + std::abs(est.to_bins - truth.to_bins);
    }
    if (best.empty() || cost < best_cost) {
      best_cost = cost;
      best.assign(perm.begin(), perm.begin() + static_cast<long>(m));
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

namespace {

ScenarioOptions scenario_options(const ExperimentConfig& config, int users, double snr_db) {
  ScenarioOptions o;
  o.users = users;
  o.snr_db = snr_db;
  o.cfo_max = config.cfo_max;
  o.to_max_s = config.to_max * config.params.symbol_duration();
  o.power_step_min_db = config.power_step_min_db;
  o.power_step_max_db = config.power_step_max_db;
  return o;
}

ReceiverOptions receiver_options(const ExperimentConfig& config) {
  ReceiverOptions o;
  o.strategy = config.strategy;
  o.top_k = config.top_k;
  o.to_max_frac = config.to_max;
  return o;
}

int bit_errors(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  int errors = 0;
  for (std::size_t i = 0; i < a.size(); ++i) errors += std::popcount(static_cast<unsigned>(a[i] ^ b[i]));
  return errors;
}

struct PhyTrial {
  bool failed = false;
  long long symbol_errors = 0;
  long long bit_errors_hard = 0;
  long long bit_errors_soft = 0;
  int packets_ok_hard = 0;
  int packets_ok_soft = 0;
};

// Noise-only threshold for the V-peak strategy at one SNR.
double vpeak_threshold(const ExperimentConfig& config, double snr_db, std::uint64_t stream) {
  if (!std::isfinite(snr_db)) return 0.0;
  const auto& p = config.params;
  const double sigma2 = noise_variance(snr_db, 1.0, p.osr_rx);
  auto rng = trial_rng(config.seed, stream, 0xF100D);
  return measure_noise_floor(p, sigma2, default_truncation(p, config.to_max), rng()).threshold();
}

}  // namespace

std::vector<MetricsRow> run_phy(const ExperimentConfig& config) {
  config.validate();
  const auto& params = config.params;
  const int users = config.users;
  const int n_sym = symbol_count(params);
  const int payload_bits = params.payload_bytes * 8;
  std::vector<MetricsRow> rows;

  for (std::size_t si = 0; si < config.snr_db.size(); ++si) {
    const double snr = config.snr_db[si];
    ReceiverOptions rx_opts = receiver_options(config);
    if (config.strategy == Strategy::VPeak) rx_opts.noise_threshold = vpeak_threshold(config, snr, si);

    std::vector<PhyTrial> results(static_cast<std::size_t>(config.trials));
    parallel_for(results.size(), config.threads, [&](std::size_t t) {
      auto rng = trial_rng(config.seed, si, t);
      const auto sc = make_scenario(params, scenario_options(config, users, snr), rng);
      const auto rx = receive(sc.signal, users, params, rx_opts);
      PhyTrial& out = results[t];
      if (rx.status != RxStatus::Ok) {
        out.failed = true;
        return;
      }
      const auto match = match_users(rx.offsets, sc, rx.start, params);
      for (int k = 0; k < users; ++k) {
        const auto truth = static_cast<std::size_t>(match[static_cast<std::size_t>(k)]);
        const auto& sent = sc.symbols[truth];
        const auto& got = rx.hard_symbols[static_cast<std::size_t>(k)];
        for (int i = 0; i < n_sym; ++i)
          out.symbol_errors += sent[static_cast<std::size_t>(i)] != got[static_cast<std::size_t>(i)];
        const auto& payload = sc.nodes[truth].payload;
        const auto& hard = rx.hard[static_cast<std::size_t>(k)];
        const auto& soft = rx.soft[static_cast<std::size_t>(k)];
        out.bit_errors_hard += bit_errors(hard.payload, payload);
        out.bit_errors_soft += bit_errors(soft.payload, payload);
        out.packets_ok_hard += hard.crc_ok && hard.payload == payload;
        out.packets_ok_soft += soft.crc_ok && soft.payload == payload;
      }
    });

    // Deterministic reduction in trial order.
    long long failures = 0, sym_err = 0, bits_hard = 0, bits_soft = 0, ok_hard = 0, ok_soft = 0;
    for (const auto& r : results) {
      failures += r.failed;
      sym_err += r.symbol_errors;
      bits_hard += r.bit_errors_hard;
      bits_soft += r.bit_errors_soft;
      ok_hard += r.packets_ok_hard;
      ok_soft += r.packets_ok_soft;
    }
    const long long demodulated = config.trials - failures;
    const double symbols = static_cast<double>(demodulated) * users * n_sym;
    const double bits = static_cast<double>(demodulated) * users * payload_bits;
    const double packets = static_cast<double>(config.trials) * users;
    const double ser = symbols > 0 ? static_cast<double>(sym_err) / symbols : 1.0;
    const double throughput = (symbols - static_cast<double>(sym_err)) /
                              (n_sym * params.symbol_duration() * config.trials);

    MetricsRow base;
    base.mode = "phy";
    base.sf = params.sf;
    base.cr = params.cr;
    base.users = users;
    base.snr_db = snr;
    base.trials = config.trials;
    base.failures = static_cast<int>(failures);
    base.ser = ser;
    base.phy_sym_s = throughput;

    MetricsRow hard = base;
    hard.decoder = "mpr-hard";
    hard.ber = bits > 0 ? static_cast<double>(bits_hard) / bits : 0.5;
    hard.per = 1.0 - static_cast<double>(ok_hard) / packets;
    MetricsRow soft = base;
    soft.decoder = "mpr-soft";
    soft.ber = bits > 0 ? static_cast<double>(bits_soft) / bits : 0.5;
    soft.per = 1.0 - static_cast<double>(ok_soft) / packets;
    rows.push_back(hard);
    rows.push_back(soft);
  }
  return rows;
}

namespace {

struct StudyPacket {
  std::vector<std::vector<std::uint32_t>> symbols;
  std::vector<std::vector<std::uint8_t>> payloads;
  std::vector<double> offsets;  // peak shift in bins, cfo minus to
};

StudyPacket draw_study_packet(const ExperimentConfig& config, const LoraParams& params, int users,
                              std::mt19937_64& rng) {
  StudyPacket pk;
  const double to_max_s = config.to_max * params.symbol_duration();
  for (int m = 0; m < users; ++m) {
    pk.payloads.push_back(random_payload(params, rng));
    pk.symbols.push_back(encode_symbols(pk.payloads.back(), params));
    const double cfo = uniform(rng, -config.cfo_max, config.cfo_max);
    const double to = to_max_s > 0.0 ? uniform(rng, 0.0, to_max_s) : 0.0;
    const auto shifts = bin_shifts(params, cfo, to);
    pk.offsets.push_back(shifts.cfo_bins - shifts.to_bins);
  }
  return pk;
}

long long peak_bin(std::uint32_t s, double offset, long long n) {
  const auto b = static_cast<long long>(std::floor(static_cast<double>(s) + offset + 0.5));
  return ((b % n) + n) % n;
}

}  // namespace

std::vector<MetricsRow> run_colocated_study(const ExperimentConfig& config) {
  config.validate();
  std::vector<MetricsRow> rows;
  for (int sf : config.sf_sweep) {
    const LoraParams params = study_params(config, sf);
    params.validate();
    const auto n = static_cast<long long>(params.chips());
    for (int users : config.users_sweep) {
      std::vector<char> hit(static_cast<std::size_t>(config.trials), 0);
      parallel_for(hit.size(), config.threads, [&](std::size_t t) {
        auto rng = trial_rng(config.seed, static_cast<std::uint64_t>(sf * 100 + users), t);
        const auto pk = draw_study_packet(config, params, users, rng);
        for (std::size_t i = 0; i < pk.symbols.front().size() && !hit[t]; ++i) {
          std::set<long long> bins;
          for (int m = 0; m < users; ++m)
            bins.insert(peak_bin(pk.symbols[static_cast<std::size_t>(m)][i],
                                 pk.offsets[static_cast<std::size_t>(m)], n));
          hit[t] = bins.size() < static_cast<std::size_t>(users);
        }
      });
      MetricsRow row;
      row.decoder = "none";
      row.mode = "colocated";
      row.sf = sf;
      row.cr = params.cr;
      row.users = users;
      row.snr_db = kNoNoise;
      row.trials = config.trials;
      row.per = static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / config.trials;
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<MetricsRow> run_ideal_mapping_study(const ExperimentConfig& config) {
  config.validate();
  std::vector<MetricsRow> rows;
  for (int sf : config.sf_sweep) {
    const LoraParams params = study_params(config, sf);
    params.validate();
    const auto n = static_cast<long long>(params.chips());
    for (int users : config.users_sweep) {
      std::vector<int> errors(static_cast<std::size_t>(config.trials), 0);
      parallel_for(errors.size(), config.threads, [&](std::size_t t) {
        auto rng = trial_rng(config.seed, static_cast<std::uint64_t>(sf * 100 + users), t);
        const auto pk = draw_study_packet(config, params, users, rng);
        auto decoded = pk.symbols;
        for (std::size_t i = 0; i < pk.symbols.front().size(); ++i) {
          std::vector<long long> bins;
          for (int m = 0; m < users; ++m)
            bins.push_back(peak_bin(pk.symbols[static_cast<std::size_t>(m)][i],
                                    pk.offsets[static_cast<std::size_t>(m)], n));
          std::vector<long long> distinct(bins);
          std::sort(distinct.begin(), distinct.end());
          distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
          if (distinct.size() == bins.size()) continue;
          // Co-located window: every user takes a random peak of the window.
          std::uniform_int_distribution<std::size_t> pick(0, distinct.size() - 1);
          for (int m = 0; m < users; ++m) {
            const double peak = static_cast<double>(distinct[pick(rng)]);
            const auto v = static_cast<long long>(
                round_half_to_zero(peak - pk.offsets[static_cast<std::size_t>(m)]));
            decoded[static_cast<std::size_t>(m)][i] = static_cast<std::uint32_t>(((v % n) + n) % n);
          }
        }
        for (int m = 0; m < users; ++m) {
          const auto pkt = hard_path(decoded[static_cast<std::size_t>(m)], params);
          errors[t] += !(pkt.crc_ok && pkt.payload == pk.payloads[static_cast<std::size_t>(m)]);
        }
      });
      MetricsRow row;
      row.decoder = "ideal-map";
      row.mode = "ideal-map";
      row.sf = sf;
      row.cr = params.cr;
      row.users = users;
      row.snr_db = kNoNoise;
      row.trials = config.trials;
      row.per = static_cast<double>(std::accumulate(errors.begin(), errors.end(), 0LL)) /
                (static_cast<double>(config.trials) * users);
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<EstimationStats> run_estimation_study(const ExperimentConfig& config) {
  config.validate();
  const auto& params = config.params;
  const int users = config.users;
  std::vector<EstimationStats> out;
  for (std::size_t si = 0; si < config.snr_db.size(); ++si) {
    const double snr = config.snr_db[si];
    struct Result {
      bool failed = false;
      double cfo_err = 0.0, to_err = 0.0, h_err = 0.0;
    };
    std::vector<Result> results(static_cast<std::size_t>(config.trials));
    parallel_for(results.size(), config.threads, [&](std::size_t t) {
      auto rng = trial_rng(config.seed, si, t);
      const auto sc = make_scenario(params, scenario_options(config, users, snr), rng);
      const auto rx = synchronize(sc.signal, users, params, receiver_options(config));
      if (rx.status != RxStatus::Ok) {
        results[t].failed = true;
        return;
      }
      const auto match = match_users(rx.offsets, sc, rx.start, params);
      for (int k = 0; k < users; ++k) {
        const auto truth = static_cast<std::size_t>(match[static_cast<std::size_t>(k)]);
        const auto est = bin_shifts(params, rx.offsets[static_cast<std::size_t>(k)].cfo_hat,
                                    rx.offsets[static_cast<std::size_t>(k)].to_hat);
        const auto real = bin_shifts(params, sc.nodes[truth].cfo, sc.to_relative(truth, rx.start, params));
        results[t].cfo_err += std::abs(est.cfo_bins - real.cfo_bins);
        results[t].to_err += std::abs(est.to_bins - real.to_bins);
        results[t].h_err += std::norm(rx.channels[static_cast<std::size_t>(k)].h_hat - sc.nodes[truth].gain());
      }
    });
    EstimationStats st;
    st.snr_db = snr;
    st.trials = config.trials;
    double cfo = 0.0, to = 0.0, h = 0.0;
    for (const auto& r : results) {
      st.failures += r.failed;
      cfo += r.cfo_err;
      to += r.to_err;
      h += r.h_err;
    }
    const double n = static_cast<double>(config.trials - st.failures) * users;
    st.cfo_mae_bins = n > 0 ? cfo / n : 0.0;
    st.to_mae_bins = n > 0 ? to / n : 0.0;
    st.channel_mse = n > 0 ? h / n : 0.0;
    out.push_back(st);
  }
  return out;
}

double net_round_duration(const ExperimentConfig& config) {
  const double tp = packet_duration(config.params);
  const double spread = config.transmission == Transmission::Coordinated
                            ? config.to_max * config.params.symbol_duration()
                            : 0.25 * tp;
  return (tp + spread) * 1.05;
}

double ideal_net_throughput(const ExperimentConfig& config) {
  return config.users * config.params.payload_bytes * 8.0 / net_round_duration(config);
}

NetResult run_net_sim(const ExperimentConfig& config, double snr_db) {
  config.validate();
  const auto& params = config.params;
  const int users = config.users;
  const double tp = packet_duration(params);
  const double round = net_round_duration(config);
  const int rounds = static_cast<int>(std::floor(config.duration_s / round));
  const bool coordinated = config.transmission == Transmission::Coordinated;
  const std::uint64_t stream = 0x4E45540000ull + (coordinated ? 0 : 1);

  struct RoundResult {
    bool failed = false;
    std::vector<double> delays;
    std::vector<double> readings;
  };
  std::vector<RoundResult> results(static_cast<std::size_t>(rounds));
  parallel_for(results.size(), config.threads, [&](std::size_t r) {
    auto rng = trial_rng(config.seed, stream, r);
    ScenarioOptions opts = scenario_options(config, users, snr_db);
    if (!coordinated) opts.to_max_s = 0.25 * tp;
    auto& out = results[r];
    if (config.decoder == "ideal") {
      // Offsets are drawn exactly as for a decoded round.
      const auto powers = draw_powers(users, opts.power_step_min_db, opts.power_step_max_db, rng);
      (void)powers;
      for (int m = 0; m < users; ++m) {
        const auto payload = random_payload(params, rng);
        const double to = opts.to_max_s > 0.0 ? uniform(rng, 0.0, opts.to_max_s) : 0.0;
        out.delays.push_back(to + tp);
        out.readings.push_back(decode_reading(payload));
      }
      return;
    }
    const auto sc = make_scenario(params, opts, rng);
    const auto rx = receive(sc.signal, users, params, receiver_options(config));
    if (rx.status != RxStatus::Ok) {
      out.failed = true;
      return;
    }
    const auto match = match_users(rx.offsets, sc, rx.start, params);
    for (int k = 0; k < users; ++k) {
      const auto truth = static_cast<std::size_t>(match[static_cast<std::size_t>(k)]);
      const auto& pkt = config.decoder == "mpr-soft" ? rx.soft[static_cast<std::size_t>(k)]
                                                     : rx.hard[static_cast<std::size_t>(k)];
      if (!pkt.crc_ok) continue;
      // CRC passing is what the network layer sees; a wrong payload that
      // passes CRC still counts as delivered but not as correct bits.
      if (pkt.payload == sc.nodes[truth].payload) out.delays.push_back(sc.nodes[truth].to + tp);
      out.readings.push_back(decode_reading(pkt.payload));
    }
  });

  NetResult res;
  res.rounds = rounds;
  res.round_duration_s = round;
  res.ideal_bit_s = ideal_net_throughput(config);
  long long delivered = 0;
  int failures = 0;
  for (std::size_t r = 0; r < results.size(); ++r) {
    const auto& rr = results[r];
    failures += rr.failed;
    delivered += static_cast<long long>(rr.delays.size());
    res.delays.insert(res.delays.end(), rr.delays.begin(), rr.delays.end());
    RoundAggregate agg;
    agg.round = static_cast<int>(r);
    agg.contributors = rr.readings.size();
    if (auto v = aggregate(rr.readings, AggregateFn::Sum)) agg.sum = v->value;
    if (auto v = aggregate(rr.readings, AggregateFn::Average)) agg.average = v->value;
    if (auto v = aggregate(rr.readings, AggregateFn::Min)) agg.min = v->value;
    if (auto v = aggregate(rr.readings, AggregateFn::Max)) agg.max = v->value;
    res.aggregates.push_back(agg);
  }
  const double elapsed = rounds * round;
  const double packets = static_cast<double>(rounds) * users;

  MetricsRow& row = res.row;
  row.decoder = config.decoder;
  row.mode = coordinated ? "net-co" : "net-unco";
  row.sf = params.sf;
  row.cr = params.cr;
  row.users = users;
  row.snr_db = snr_db;
  row.trials = rounds;
  row.failures = failures;
  row.per = packets > 0 ? 1.0 - static_cast<double>(delivered) / packets : 0.0;
  row.net_bit_s = elapsed > 0 ? static_cast<double>(delivered) * params.payload_bytes * 8.0 / elapsed : 0.0;
  row.delay_p50_s = percentile(res.delays, 0.50);
  row.delay_p95_s = percentile(res.delays, 0.95);
  return res;
}

}  // namespace loramp
