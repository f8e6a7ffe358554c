#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "loramp/channel.hpp"
#include "loramp/demod.hpp"
#include "loramp/params.hpp"
#include "loramp/receiver.hpp"

namespace loramp {

enum class Mode { Phy, Colocated, IdealMap, Net };
enum class Transmission { Coordinated, Uncoordinated };

Mode parse_mode(std::string_view name);
std::string_view to_string(Mode mode);
Transmission parse_transmission(std::string_view name);
std::string_view to_string(Transmission tx);

struct ExperimentConfig {
  LoraParams params;
  int users = 2;
  std::vector<double> snr_db{-5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0};
  int trials = 2000;
  double cfo_max = 5000.0;  // Hz
  double to_max = 0.1;      // fraction of a symbol
  Strategy strategy = Strategy::MFullPeak;
  int top_k = 2;
  std::uint64_t seed = 1;
  Mode mode = Mode::Phy;
  double power_step_min_db = 1.0;
  double power_step_max_db = 3.0;

  // colocated / ideal-map sweeps
  std::vector<int> users_sweep{2, 3, 4, 5, 6};
  std::vector<int> sf_sweep{8, 10, 12};
  int study_payload_bytes = 20;

  // net
  Transmission transmission = Transmission::Coordinated;
  double duration_s = 300.0;
  std::string decoder = "mpr-soft";  // ideal | mpr-hard | mpr-soft

  unsigned threads = 0;  // 0 = one per hardware thread

  void validate() const;
};

// Keys mirror the CLI flags (sf, bw, cr, users, snr, trials, strategy, topk,
// seed, ...). Unknown keys are rejected.
ExperimentConfig config_from_json(std::string_view text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});

struct MetricsRow {
  std::string decoder;
  std::string mode;
  int sf = 0;
  int cr = 0;
  int users = 0;
  double snr_db = 0.0;
  int trials = 0;
  int failures = 0;
  double ser = 0.0;
  double ber = 0.0;
  double per = 0.0;
  double phy_sym_s = 0.0;
  double net_bit_s = 0.0;
  double delay_p50_s = 0.0;
  double delay_p95_s = 0.0;
};

std::string_view csv_header();
std::string csv_line(const MetricsRow& row);
void write_csv(std::ostream& out, std::span<const MetricsRow> rows);

// Per-trial generator (seed, stream, trial).
std::mt19937_64 trial_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t trial);

// Random concurrent transmission at the receiver.
struct Scenario {
  std::vector<NodeTxState> nodes;
  std::vector<std::vector<std::uint32_t>> symbols;
  IqBuffer signal;
  std::size_t lead = 0;  // receiver samples before the frame origin
  double sigma2 = 0.0;

  // True TO of node m relative to a window starting at receiver sample `start`.
  double to_relative(std::size_t m, std::size_t start, const LoraParams& params) const;
};

struct ScenarioOptions {
  int users = 2;
  double snr_db = kNoNoise;
  double cfo_max = 5000.0;
  double to_max_s = 0.0;
  double power_step_min_db = 1.0;
  double power_step_max_db = 3.0;
};

Scenario make_scenario(const LoraParams& params, const ScenarioOptions& options,
                       std::mt19937_64& rng);

// Random payload with valid CRC.
std::vector<std::uint8_t> random_payload(const LoraParams& params, std::mt19937_64& rng);

// Matches estimated users to true users (minimum total offset distance).
std::vector<int> match_users(std::span<const OffsetEstimate> estimates, const Scenario& scenario,
                             std::size_t start, const LoraParams& params);

// Rows per SNR: one for the hard and one for the soft decoder.
std::vector<MetricsRow> run_phy(const ExperimentConfig& config);

// Row per (sf, users); `per` holds the co-located-transmission probability.
std::vector<MetricsRow> run_colocated_study(const ExperimentConfig& config);

// Row per (sf, users) with the PER of an oracle peak-to-user mapping.
std::vector<MetricsRow> run_ideal_mapping_study(const ExperimentConfig& config);

struct EstimationStats {
  double snr_db = 0.0;
  int trials = 0;
  int failures = 0;
  double cfo_mae_bins = 0.0;
  double to_mae_bins = 0.0;
  double channel_mse = 0.0;
};

// Offset and channel estimation accuracy per SNR.
std::vector<EstimationStats> run_estimation_study(const ExperimentConfig& config);

struct RoundAggregate {
  int round = 0;
  std::size_t contributors = 0;
  double sum = 0.0;
  double average = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct NetResult {
  MetricsRow row;
  double ideal_bit_s = 0.0;
  double round_duration_s = 0.0;
  int rounds = 0;
  std::vector<double> delays;
  std::vector<RoundAggregate> aggregates;
};

NetResult run_net_sim(const ExperimentConfig& config, double snr_db);

// Ideal network throughput for the configured schedule.
double net_round_duration(const ExperimentConfig& config);
double ideal_net_throughput(const ExperimentConfig& config);

}  // namespace loramp
