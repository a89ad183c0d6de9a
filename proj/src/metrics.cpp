#include "kvpsim/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>

#include "json.hpp"

namespace kvpsim {
namespace {

std::optional<double> ratio_or_undefined(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

std::string percent(const std::optional<double>& v) {
  return v ? fmt::format("{:.2f}", *v * 100.0) : std::string("n/a");
}

struct Row {
  std::string label;
  std::string (*render)(const MetricSet&);
};

const std::vector<Row>& rows() {
  static const std::vector<Row> kRows{
      {"Duration (cycles)", [](const MetricSet& m) { return fmt::format("{:.0f}", m.duration_cycles); }},
      {"Compute Throughput (%)", [](const MetricSet& m) { return percent(m.compute_throughput); }},
      {"Memory Throughput (%)", [](const MetricSet& m) { return percent(m.memory_throughput); }},
      {"L1 Cache Hit Rate (%)", [](const MetricSet& m) { return percent(m.l1_hit_rate); }},
      {"L2 Cache Hit Rate (%)", [](const MetricSet& m) { return percent(m.l2_hit_rate); }},
      {"Cycles Per Instruction (cycle)", [](const MetricSet& m) { return fmt::format("{:.2f}", m.cpi); }},
      {"Stall Long Scoreboard (cycle)",
       [](const MetricSet& m) { return fmt::format("{:.2f}", m.stall_long_scoreboard); }},
  };
  return kRows;
}

std::string render_table(const std::vector<std::string>& header,
                         const std::vector<std::vector<std::string>>& body) {
  std::vector<std::size_t> width(header.size(), 0);
  auto widen = [&](const std::vector<std::string>& line) {
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  };
  widen(header);
  for (const auto& line : body) widen(line);

  std::string out;
  auto emit = [&](const std::vector<std::string>& line) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (i == 0) {
        out += fmt::format("{:<{}}", line[i], width[i]);
      } else {
        out += fmt::format("  {:>{}}", line[i], width[i]);
      }
    }
    out += '\n';
  };
  emit(header);
  std::string rule;
  for (std::size_t i = 0; i < width.size(); ++i) rule += std::string(width[i] + (i ? 2 : 0), '-');
  out += rule + '\n';
  for (const auto& line : body) emit(line);
  return out;
}

}  // namespace

MetricSet derive_metrics(const SimReport& r, const HardwareConfig& hw) {
  MetricSet m;
  const double duration = static_cast<double>(r.duration_cycles);
  m.duration_cycles = duration;
  m.l1_hit_rate = ratio_or_undefined(r.memory.l1_demand.hits, r.memory.l1_demand.probes);
  m.l2_hit_rate = ratio_or_undefined(r.memory.l2_demand.hits, r.memory.l2_demand.probes);
  const double instructions = static_cast<double>(r.total.instructions);
  m.cpi = safe_div(static_cast<double>(r.total.active_cycles()), instructions);
  m.stall_long_scoreboard = safe_div(static_cast<double>(r.total.stall_long_scoreboard), instructions);
  const double link = duration * static_cast<double>(hw.bw_hbm);
  m.memory_throughput = safe_div(static_cast<double>(r.memory.hbm_bytes()), link);
  m.memory_throughput_demand = safe_div(static_cast<double>(r.memory.hbm_bytes_demand), link);
  m.compute_throughput = safe_div(static_cast<double>(r.total.compute_cycles),
                                  duration * static_cast<double>(r.resident_warp_slots));
  return m;
}

double speedup(double baseline_duration, double optimized_duration) {
  return baseline_duration / optimized_duration;
}

double speedup(const MetricSet& baseline, const MetricSet& optimized) {
  return speedup(baseline.duration_cycles, optimized.duration_cycles);
}

double amdahl_e2e(double kernel_speedup, double attention_fraction) {
  return 1.0 / ((1.0 - attention_fraction) + attention_fraction / kernel_speedup);
}

std::string format_ratio(double value) { return fmt::format("{:.2f}", value); }

std::string to_json(const MetricSet& m) {
  nlohmann::ordered_json j;
  auto opt = [](const std::optional<double>& v) -> nlohmann::ordered_json {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  j["duration_cycles"] = m.duration_cycles;
  j["compute_throughput"] = m.compute_throughput;
  j["memory_throughput"] = m.memory_throughput;
  j["memory_throughput_demand"] = m.memory_throughput_demand;
  j["l1_hit_rate"] = opt(m.l1_hit_rate);
  j["l2_hit_rate"] = opt(m.l2_hit_rate);
  j["cpi"] = m.cpi;
  j["stall_long_scoreboard"] = m.stall_long_scoreboard;
  if (m.speedup) j["speedup"] = *m.speedup;
  return j.dump(2);
}

std::string to_table(const MetricSet& m) {
  std::vector<std::vector<std::string>> body;
  for (const Row& row : rows()) body.push_back({row.label, row.render(m)});
  if (m.speedup) body.push_back({"Speedup", format_ratio(*m.speedup) + "x"});
  return render_table({"Metric", "Value"}, body);
}

std::string to_comparison_table(const std::vector<std::string>& names,
                                const std::vector<MetricSet>& runs) {
  std::vector<std::string> header{"Metric"};
  header.insert(header.end(), names.begin(), names.end());
  std::vector<std::vector<std::string>> body;
  for (const Row& row : rows()) {
    std::vector<std::string> line{row.label};
    for (const auto& run : runs) line.push_back(row.render(run));
    body.push_back(std::move(line));
  }
  std::vector<std::string> line{"Speedup"};
  for (const auto& run : runs) line.push_back(format_ratio(speedup(runs.front(), run)) + "x");
  body.push_back(std::move(line));
  return render_table(header, body);
}

}  // namespace kvpsim
