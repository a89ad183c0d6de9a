#include "kvpsim/cli.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "kvpsim/config.hpp"
#include "kvpsim/kernelsim.hpp"
#include "kvpsim/kvlayout.hpp"
#include "kvpsim/metrics.hpp"

namespace kvpsim::cli {
namespace {

// Thrown when a simulation breaks one of its own invariants (exit code 1).
class InternalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ScenarioFlags {
  std::string scenario_file;
  std::string model;
  std::string hardware;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  bool json = false;
  std::string out_file;
};

void add_scenario_flags(CLI::App* cmd, ScenarioFlags& f) {
  cmd->add_option("--scenario", f.scenario_file, "Scenario JSON file");
  cmd->add_option("--model", f.model, "Model preset (llama2-7b, llama3-8b, qwen2.5-7b, qwen2.5-14b)");
  cmd->add_option("--hardware", f.hardware, "Hardware preset (h20, h100, custom-small)");
  cmd->add_option("--set", f.sets, "Override section.key=value (repeatable)");
  cmd->add_option("--seed", f.seed, "Allocation seed (default: $KVPSIM_SEED or 0)");
  cmd->add_flag("--json", f.json, "Machine-readable JSON output");
  cmd->add_option("--out", f.out_file, "Write output to FILE instead of stdout");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot read scenario file \"{}\"", path));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv("KVPSIM_SEED");
  if (raw == nullptr || *raw == '\0') return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(raw, &end, 10);
  if (end == nullptr || *end != '\0') throw ConfigError("KVPSIM_SEED: expected an integer");
  return v;
}

// Variant argument "kind" or "kind:priority", e.g. "prefetch_kv:evict_first".
KernelVariant parse_variant_arg(const std::string& text) {
  KernelVariant v;
  const auto colon = text.find(':');
  v.kind = parse_kernel_kind(text.substr(0, colon));
  if (colon != std::string::npos) {
    v.eviction_priority = parse_eviction_priority(text.substr(colon + 1));
  }
  return v;
}

// Used when no --scenario file is given.
constexpr const char* kDefaultScenario = R"({"model": {"preset": "llama2-7b"}})";

// File first, then the convenience flags, then --set, then validation.
Scenario build_scenario(const ScenarioFlags& f, const std::vector<std::string>& extra) {
  const std::string text = f.scenario_file.empty() ? std::string(kDefaultScenario) : read_file(f.scenario_file);
  std::vector<std::string> overrides;
  if (!f.model.empty()) overrides.push_back("model.preset=\"" + f.model + "\"");
  if (!f.hardware.empty()) overrides.push_back("hardware.preset=\"" + f.hardware + "\"");
  if (auto seed = f.seed ? f.seed : env_seed()) {
    overrides.push_back(fmt::format("workload.seed={}", *seed));
  }
  overrides.insert(overrides.end(), extra.begin(), extra.end());
  overrides.insert(overrides.end(), f.sets.begin(), f.sets.end());
  return parse_scenario(text, overrides);
}

class Output {
 public:
  Output(const std::string& path, std::ostream& fallback) : stream_(&fallback) {
    if (!path.empty()) {
      file_.open(path, std::ios::binary);
      if (!file_) throw ConfigError(fmt::format("cannot open output file \"{}\"", path));
      stream_ = &file_;
    }
  }
  std::ostream& operator*() { return *stream_; }

 private:
  std::ofstream file_;
  std::ostream* stream_;
};

SimReport simulate(const Scenario& s, const RunOptions& options = {}) {
  SimReport report = run_kernel(s, options);
  std::string why;
  if (!check_conservation(report, &why)) throw InternalError("conservation violated: " + why);
  return report;
}

// ---------------------------------------------------------------------------

int cmd_run(const ScenarioFlags& f, const std::optional<std::uint32_t>& batch,
            const std::optional<std::uint32_t>& tokens, const std::string& variant,
            const std::string& timeline_file, const std::string& mem_trace_file,
            std::ostream& out) {
  std::vector<std::string> extra;
  if (batch) extra.push_back(fmt::format("workload.batch={}", *batch));
  if (tokens) extra.push_back(fmt::format("workload.seq_len={}", *tokens));
  Scenario s = build_scenario(f, extra);
  if (!variant.empty()) {
    const KernelVariant v = parse_variant_arg(variant);
    s.variant.kind = v.kind;
    if (variant.find(':') != std::string::npos) s.variant.eviction_priority = v.eviction_priority;
    validate(s);
  }

  std::ofstream timeline;
  std::ofstream mem_trace;
  RunOptions options;
  if (!timeline_file.empty()) {
    timeline.open(timeline_file, std::ios::binary);
    options.timeline = [&](Cycle c, std::uint32_t w, WarpPhase p) {
      timeline << timeline_json_line(c, w, p) << '\n';
    };
  }
  if (!mem_trace_file.empty()) {
    mem_trace.open(mem_trace_file, std::ios::binary);
    options.mem_events = [&](const MemEvent& e) { mem_trace << to_json_line(e) << '\n'; };
  }

  const MetricSet m = derive_metrics(simulate(s, options), s.hardware);
  Output sink(f.out_file, out);
  *sink << (f.json ? to_json(m) + "\n" : to_table(m));
  return kExitOk;
}

struct SweepCell {
  std::uint32_t batch;
  std::uint32_t tokens;
  Cycle baseline = 0;
  Cycle optimized = 0;
};

int cmd_sweep(const ScenarioFlags& f, std::vector<std::uint32_t> batches,
              std::vector<std::uint32_t> tokens, const std::vector<std::string>& variants,
              unsigned jobs, std::ostream& out) {
  if (batches.empty() || tokens.empty()) throw ConfigError("sweep: --batch and --output-tokens need values");
  if (variants.size() != 2) throw ConfigError("sweep: --variant takes exactly two variants (baseline,optimized)");
  std::sort(batches.begin(), batches.end());
  batches.erase(std::unique(batches.begin(), batches.end()), batches.end());
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());

  const Scenario base = build_scenario(f, {});
  const KernelVariant first = parse_variant_arg(variants[0]);
  const KernelVariant second = parse_variant_arg(variants[1]);

  std::vector<SweepCell> cells;
  std::vector<Scenario> scenarios;
  for (std::uint32_t b : batches) {
    for (std::uint32_t t : tokens) {
      cells.push_back(SweepCell{b, t});
      Scenario s = base;
      s.workload.batch = b;
      s.workload.seq_len = t;
      validate(s);
      scenarios.push_back(s);
    }
  }

  // Cells are independent; results land in their slot so output order is fixed.
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        Scenario a = scenarios[i];
        a.variant = first;
        Scenario b = scenarios[i];
        b.variant = second;
        cells[i].baseline = simulate(a).duration_cycles;
        cells[i].optimized = simulate(b).duration_cycles;
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next = cells.size();
      }
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(cells.size())));
  std::vector<std::thread> pool;
  for (unsigned i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);

  Output sink(f.out_file, out);
  *sink << "batch,output_tokens,duration_baseline,duration_prefetch,speedup\n";
  for (const SweepCell& c : cells) {
    *sink << fmt::format("{},{},{},{},{:.6f}\n", c.batch, c.tokens, c.baseline, c.optimized,
                         speedup(static_cast<double>(c.baseline), static_cast<double>(c.optimized)));
  }
  return kExitOk;
}

int cmd_capacity(const ScenarioFlags& f, const std::optional<std::uint32_t>& batch,
                 std::ostream& out) {
  std::vector<std::string> extra;
  if (batch) extra.push_back(fmt::format("workload.batch={}", *batch));
  const Scenario s = build_scenario(f, extra);
  const CapacityReport report = capacity_report(s.model, s.hardware, s.workload.batch);
  Output sink(f.out_file, out);
  *sink << to_json(report) << '\n';
  return kExitOk;
}

int cmd_compare(const ScenarioFlags& f, const std::optional<std::uint32_t>& batch,
                const std::optional<std::uint32_t>& tokens, const std::vector<std::string>& variants,
                std::ostream& out) {
  if (variants.size() < 2) throw ConfigError("compare: --variant needs at least two variants");
  std::vector<std::string> extra;
  if (batch) extra.push_back(fmt::format("workload.batch={}", *batch));
  if (tokens) extra.push_back(fmt::format("workload.seq_len={}", *tokens));
  const Scenario base = build_scenario(f, extra);

  std::vector<MetricSet> runs;
  for (const auto& arg : variants) {
    Scenario s = base;
    const KernelVariant v = parse_variant_arg(arg);
    s.variant.kind = v.kind;
    s.variant.eviction_priority = v.eviction_priority;
    validate(s);
    MetricSet m = derive_metrics(simulate(s), s.hardware);
    m.speedup = runs.empty() ? 1.0 : speedup(runs.front(), m);
    runs.push_back(m);
  }

  Output sink(f.out_file, out);
  if (f.json) {
    nlohmann::ordered_json j;
    j["variants"] = variants;
    j["runs"] = nlohmann::ordered_json::array();
    for (const auto& m : runs) j["runs"].push_back(nlohmann::ordered_json::parse(to_json(m)));
    *sink << j.dump(2) << '\n';
  } else {
    *sink << to_comparison_table(variants, runs);
  }
  return kExitOk;
}

}  // namespace

int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Paged-attention KV-cache prefetch simulator", "kvpsim"};
  app.require_subcommand(1);

  ScenarioFlags run_flags;
  std::optional<std::uint32_t> run_batch;
  std::optional<std::uint32_t> run_tokens;
  std::string run_variant;
  std::string timeline_file;
  std::string mem_trace_file;
  CLI::App* run = app.add_subcommand("run", "Simulate one scenario and print its metrics");
  add_scenario_flags(run, run_flags);
  run->add_option("--batch", run_batch, "Sequences in the batch");
  run->add_option("--output-tokens", run_tokens, "KV length per sequence, in tokens");
  run->add_option("--variant", run_variant, "baseline | prefetch_k | prefetch_kv [:evict_first]");
  run->add_option("--timeline", timeline_file, "Write per-warp phase timeline (JSON lines)");
  run->add_option("--mem-trace", mem_trace_file, "Write memory events (JSON lines)");

  ScenarioFlags sweep_flags;
  std::vector<std::uint32_t> sweep_batches;
  std::vector<std::uint32_t> sweep_tokens;
  std::vector<std::string> sweep_variants{"baseline", "prefetch_kv"};
  unsigned jobs = 1;
  CLI::App* sweep = app.add_subcommand("sweep", "Batch x output-token grid, CSV of speedups");
  add_scenario_flags(sweep, sweep_flags);
  sweep->add_option("--batch", sweep_batches, "Batch sizes (comma separated)")->delimiter(',')->required();
  sweep->add_option("--output-tokens", sweep_tokens, "Token counts (comma separated)")
      ->delimiter(',')
      ->required();
  sweep->add_option("--variant", sweep_variants, "Baseline and optimized variant")->delimiter(',');
  sweep->add_option("--jobs", jobs, "Parallel simulations");

  ScenarioFlags cap_flags;
  std::optional<std::uint32_t> cap_batch;
  CLI::App* capacity = app.add_subcommand("capacity", "Block footprint and L2 residency bound");
  add_scenario_flags(capacity, cap_flags);
  capacity->add_option("--batch", cap_batch, "Batch size for m_total");

  ScenarioFlags cmp_flags;
  std::optional<std::uint32_t> cmp_batch;
  std::optional<std::uint32_t> cmp_tokens;
  std::vector<std::string> cmp_variants{"baseline", "prefetch_k"};
  CLI::App* compare = app.add_subcommand("compare", "Side-by-side metrics for several variants");
  add_scenario_flags(compare, cmp_flags);
  compare->add_option("--batch", cmp_batch, "Sequences in the batch");
  compare->add_option("--output-tokens", cmp_tokens, "KV length per sequence, in tokens");
  compare->add_option("--variant", cmp_variants, "Variants to compare (comma separated)")->delimiter(',');

  try {
    app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_flags, run_batch, run_tokens, run_variant, timeline_file, mem_trace_file, out);
    if (*sweep) return cmd_sweep(sweep_flags, sweep_batches, sweep_tokens, sweep_variants, jobs, out);
    if (*capacity) return cmd_capacity(cap_flags, cap_batch, out);
    if (*compare) return cmd_compare(cmp_flags, cmp_batch, cmp_tokens, cmp_variants, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitConfig;
}

}  // namespace kvpsim::cli
