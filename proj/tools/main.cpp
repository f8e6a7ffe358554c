// Command-line driver for the simulation studies and trace tooling.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "loramp/aggregator.hpp"
#include "loramp/error.hpp"
#include "loramp/receiver.hpp"
#include "loramp/sim.hpp"
#include "loramp/trace_io.hpp"

namespace {

using namespace loramp;

// Flags shared by every subcommand. Values given on the command line override
// the config file, which overrides built-in defaults.
struct CommonFlags {
  std::optional<int> sf, cr, users, trials, topk;
  std::optional<double> bw, cfo_max, to_max;
  std::optional<std::vector<double>> snr;
  std::optional<std::string> strategy;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::string config;
  std::string out;

  void attach(CLI::App& cmd) {
    cmd.add_option("--sf", sf, "Spreading factor (6..12)");
    cmd.add_option("--bw", bw, "Bandwidth in Hz");
    cmd.add_option("--cr", cr, "Codeword length of the Hamming code (5..8)");
    cmd.add_option("--users", users, "Number of concurrent users");
    cmd.add_option("--snr", snr, "SNR grid in dB")->delimiter(',');
    cmd.add_option("--trials", trials, "Monte Carlo trials per point");
    cmd.add_option("--strategy", strategy, "Peak enumeration: v-peak, m-peak, m-full-peak");
    cmd.add_option("--topk", topk, "Candidates kept per window");
    cmd.add_option("--seed", seed, "Base random seed");
    cmd.add_option("--cfo-max", cfo_max, "Maximum CFO magnitude in Hz");
    cmd.add_option("--to-max", to_max, "Maximum TO as a fraction of a symbol");
    cmd.add_option("--threads", threads, "Worker threads (0 = hardware concurrency)");
    cmd.add_option("--config", config, "JSON config file")->check(CLI::ExistingFile);
    cmd.add_option("--out", out, "Output CSV (stdout when omitted)");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c;
    if (!config.empty()) c = load_config(config, c);
    if (sf) c.params.sf = *sf;
    if (bw) c.params.bw = *bw;
    if (cr) c.params.cr = *cr;
    if (users) c.users = *users;
    if (snr) c.snr_db = *snr;
    if (trials) c.trials = *trials;
    if (strategy) c.strategy = parse_strategy(*strategy);
    if (topk) c.top_k = *topk;
    if (seed) c.seed = *seed;
    if (cfo_max) c.cfo_max = *cfo_max;
    if (to_max) c.to_max = *to_max;
    if (threads) c.threads = *threads;
    c.validate();
    return c;
  }
};

void emit_rows(const std::string& out, std::span<const MetricsRow> rows) {
  if (out.empty() || out == "-") {
    write_csv(std::cout, rows);
    return;
  }
  std::ofstream file(out);
  if (!file) throw ConfigError("cannot write " + out);
  write_csv(file, rows);
}

void emit_aggregates(const std::string& path, double snr_db, const NetResult& res, bool header,
                     std::ofstream& file) {
  if (path.empty()) return;
  if (header) file << "snr_db,round,contributors,sum,average,min,max\n";
  for (const auto& a : res.aggregates) {
    file << snr_db << ',' << a.round << ',' << a.contributors << ',' << a.sum << ',' << a.average
         << ',' << a.min << ',' << a.max << '\n';
  }
}

std::string hex(std::span<const std::uint8_t> bytes) {
  std::string s;
  char buf[3];
  for (auto b : bytes) {
    std::snprintf(buf, sizeof buf, "%02x", b);
    s += buf;
  }
  return s;
}

int run(int argc, char** argv) {
  CLI::App app{"Multi-packet LoRa reception simulator"};
  app.require_subcommand(1);

  CommonFlags phy_flags, colo_flags, ideal_flags, net_flags, make_flags, decode_flags;

  auto* phy = app.add_subcommand("phy-sim", "PHY Monte Carlo: SER, BER, PER, throughput per SNR");
  phy_flags.attach(*phy);

  auto* colo = app.add_subcommand("colocated-study", "Probability of co-located peaks per SF and M");
  colo_flags.attach(*colo);
  std::vector<int> colo_users, colo_sfs;
  colo->add_option("--users-sweep", colo_users, "Users to sweep")->delimiter(',');
  colo->add_option("--sf-sweep", colo_sfs, "Spreading factors to sweep")->delimiter(',');

  auto* ideal = app.add_subcommand("ideal-mapping-study", "PER with an oracle peak-to-user mapping");
  ideal_flags.attach(*ideal);
  std::vector<int> ideal_users, ideal_sfs;
  ideal->add_option("--users-sweep", ideal_users, "Users to sweep")->delimiter(',');
  ideal->add_option("--sf-sweep", ideal_sfs, "Spreading factors to sweep")->delimiter(',');

  auto* net = app.add_subcommand("net-sim", "Round-based network simulation");
  net_flags.attach(*net);
  std::string transmission, decoder, aggregate_out;
  std::optional<double> duration;
  net->add_option("--transmission", transmission, "co or unco");
  net->add_option("--decoder", decoder, "ideal, mpr-hard or mpr-soft");
  net->add_option("--duration", duration, "Simulated seconds");
  net->add_option("--aggregate-out", aggregate_out, "Per-round aggregate CSV");

  auto* make = app.add_subcommand("make-trace", "Write a synthetic concurrent transmission trace");
  make_flags.attach(*make);
  std::string make_path;
  make->add_option("--trace", make_path, "Sample file path (metadata goes to <path>.json)")
      ->required();

  auto* decode = app.add_subcommand("decode-trace", "Decode a recorded or synthetic trace");
  decode_flags.attach(*decode);
  std::string decode_path;
  decode->add_option("--trace", decode_path, "Sample file path")->required();

  CLI11_PARSE(app, argc, argv);

  if (*phy) {
    const auto c = phy_flags.resolve();
    emit_rows(phy_flags.out, run_phy(c));
  } else if (*colo) {
    auto c = colo_flags.resolve();
    if (!colo_users.empty()) c.users_sweep = colo_users;
    if (!colo_sfs.empty()) c.sf_sweep = colo_sfs;
    c.validate();
    emit_rows(colo_flags.out, run_colocated_study(c));
  } else if (*ideal) {
    auto c = ideal_flags.resolve();
    if (!ideal_users.empty()) c.users_sweep = ideal_users;
    if (!ideal_sfs.empty()) c.sf_sweep = ideal_sfs;
    c.validate();
    emit_rows(ideal_flags.out, run_ideal_mapping_study(c));
  } else if (*net) {
    auto c = net_flags.resolve();
    if (!transmission.empty()) c.transmission = parse_transmission(transmission);
    if (!decoder.empty()) c.decoder = decoder;
    if (duration) c.duration_s = *duration;
    c.validate();
    std::vector<MetricsRow> rows;
    std::ofstream agg;
    if (!aggregate_out.empty()) {
      agg.open(aggregate_out);
      if (!agg) throw ConfigError("cannot write " + aggregate_out);
    }
    for (std::size_t i = 0; i < c.snr_db.size(); ++i) {
      const auto res = run_net_sim(c, c.snr_db[i]);
      rows.push_back(res.row);
      emit_aggregates(aggregate_out, c.snr_db[i], res, i == 0, agg);
      std::cerr << "snr " << c.snr_db[i] << " dB: " << res.rounds << " rounds of "
                << res.round_duration_s << " s, ideal " << res.ideal_bit_s << " bit/s\n";
    }
    emit_rows(net_flags.out, rows);
  } else if (*make) {
    const auto c = make_flags.resolve();
    ScenarioOptions o;
    o.users = c.users;
    o.snr_db = c.snr_db.front();
    o.cfo_max = c.cfo_max;
    o.to_max_s = c.to_max * c.params.symbol_duration();
    o.power_step_min_db = c.power_step_min_db;
    o.power_step_max_db = c.power_step_max_db;
    auto rng = trial_rng(c.seed, 0, 0);
    const auto sc = make_scenario(c.params, o, rng);
    TraceMetadata meta;
    meta.params = c.params;
    meta.rate = sc.signal.rate;
    meta.users = c.users;
    meta.snr_db = o.snr_db;
    for (const auto& n : sc.nodes) {
      // Ground-truth TO is stored relative to the start of the file.
      const double to = static_cast<double>(static_cast<long long>(sc.lead) * c.params.decimation() +
                                            rec_grid_shift(n.to, c.params)) /
                        c.params.rec_rate();
      meta.nodes.push_back({n.cfo, to, n.power_db, n.h, n.payload});
    }
    write_trace(make_path, sc.signal, meta);
    std::cerr << "wrote " << sc.signal.size() << " samples to " << make_path << '\n';
  } else if (*decode) {
    auto trace = read_trace(decode_path);
    ExperimentConfig c = decode_flags.resolve();
    // The trace's own parameters win over defaults but not over explicit flags.
    LoraParams p = trace.meta.params;
    if (decode_flags.sf) p.sf = *decode_flags.sf;
    if (decode_flags.bw) p.bw = *decode_flags.bw;
    if (decode_flags.cr) p.cr = *decode_flags.cr;
    p.validate();
    const int users = decode_flags.users ? *decode_flags.users : trace.meta.users;
    ReceiverOptions ro;
    ro.strategy = c.strategy;
    ro.top_k = c.top_k;
    ro.to_max_frac = c.to_max;
    const auto rx = receive(trace.signal, users, p, ro);
    nlohmann::json report;
    report["status"] = rx.status == RxStatus::Ok ? "ok" : rx.message;
    report["start"] = rx.start;
    for (std::size_t k = 0; k < rx.hard.size(); ++k) {
      report["users"].push_back({{"cfo_hz", rx.offsets[k].cfo_hat},
                                 {"to_s", rx.offsets[k].to_hat},
                                 {"hard", {{"payload", hex(rx.hard[k].payload)}, {"crc_ok", rx.hard[k].crc_ok}}},
                                 {"soft", {{"payload", hex(rx.soft[k].payload)}, {"crc_ok", rx.soft[k].crc_ok}}},
                                 {"reading", decode_reading(rx.soft[k].payload)}});
    }
    std::cout << report.dump(2) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const loramp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const loramp::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
