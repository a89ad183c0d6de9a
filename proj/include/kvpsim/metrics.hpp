#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kvpsim/config.hpp"
#include "kvpsim/kernelsim.hpp"

namespace kvpsim {

/// Profiler-style summary of one kernel run. Hit rates count demand loads
/// only and are std::nullopt when the level saw no demand probes.
struct MetricSet {
  double duration_cycles = 0.0;
  double compute_throughput = 0.0;        // busy compute warp-cycles / (duration * resident warps)
  double memory_throughput = 0.0;         // HBM bytes (demand + prefetch) / (duration * bw_hbm)
  double memory_throughput_demand = 0.0;  // demand fills only
  std::optional<double> l1_hit_rate;
  std::optional<double> l2_hit_rate;
  double cpi = 0.0;                       // active warp cycles / instructions
  double stall_long_scoreboard = 0.0;     // scoreboard stall cycles / instructions
  std::optional<double> speedup;

  friend bool operator==(const MetricSet&, const MetricSet&) = default;
};

MetricSet derive_metrics(const SimReport& report, const HardwareConfig& hw);

/// baseline.duration / optimized.duration.
double speedup(const MetricSet& baseline, const MetricSet& optimized);
double speedup(double baseline_duration, double optimized_duration);

/// Whole-run speedup when only a fraction of the time is attention:
/// 1 / ((1 - f) + f / s).
double amdahl_e2e(double kernel_speedup, double attention_fraction);

/// "1.84"-style rendering used in tables and CSV speedup columns.
std::string format_ratio(double value);

std::string to_json(const MetricSet& metrics);

/// Aligned two-column table, rows in profiler order (duration first, stall
/// last, speedup appended when present).
std::string to_table(const MetricSet& metrics);

/// Side-by-side table, one column per run, with a final speedup row measured
/// against the first column.
std::string to_comparison_table(const std::vector<std::string>& names,
                                const std::vector<MetricSet>& runs);

}  // namespace kvpsim
