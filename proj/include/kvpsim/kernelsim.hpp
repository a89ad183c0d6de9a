#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kvpsim/config.hpp"
#include "kvpsim/kvlayout.hpp"
#include "kvpsim/memsim.hpp"

namespace kvpsim {

enum class WarpPhase { kIssueLoadK, kWaitK, kComputeQK, kIssueLoadV, kWaitV, kComputeLV, kDone };

std::string_view to_string(WarpPhase phase);

struct WarpCounters {
  std::uint64_t instructions = 0;
  std::uint64_t load_instructions = 0;
  std::uint64_t prefetch_instructions = 0;
  std::uint64_t compute_instructions = 0;
  Cycle issue_cycles = 0;
  Cycle compute_cycles = 0;
  Cycle stall_long_scoreboard = 0;
  Cycle stall_other = 0;
  Cycle idle_cycles = 0;
  Cycle start = 0;
  Cycle finish = 0;

  Cycle active_cycles() const {
    return issue_cycles + compute_cycles + stall_long_scoreboard + stall_other;
  }
  friend bool operator==(const WarpCounters&, const WarpCounters&) = default;
};

/// Grid of (q_head, sequence) thread blocks; q_head varies fastest, so block
/// id = sequence * q_heads + q_head. Warp i of a block handles block ordinals
/// i, i + warps_per_block, ... below blocks_per_sequence.
struct KernelLaunch {
  std::uint32_t q_heads = 0;
  std::uint32_t batch = 0;
  std::uint32_t warps_per_block = 0;
  std::uint64_t blocks_per_sequence = 0;

  std::uint32_t thread_blocks() const { return q_heads * batch; }
  std::uint32_t q_head_of(std::uint32_t block) const { return block % q_heads; }
  std::uint32_t sequence_of(std::uint32_t block) const { return block / q_heads; }
};

KernelLaunch make_launch(const Scenario& scenario);

struct WarpState {
  std::uint32_t id = 0;  // block * warps_per_block + warp_index
  std::uint32_t thread_block = 0;
  std::uint32_t warp_index = 0;
  std::uint32_t sm = 0;
  std::uint64_t block_idx = 0;
  WarpPhase phase = WarpPhase::kDone;
  std::optional<RequestId> pending;
  Cycle wait_since = 0;
  Cycle compute_left = 0;
  WarpCounters counters;
};

/// Read-only data a warp needs to run.
struct WarpContext {
  const Scenario* scenario = nullptr;
  const KvBlockTables* tables = nullptr;
  KernelLaunch launch;
  Bytes block_bytes = 0;
};

struct IssuedAccess {
  AccessKind kind = AccessKind::kDemand;
  Bytes addr = 0;
  std::optional<RequestId> request;  // demand loads only
  PrefetchOutcome prefetch = PrefetchOutcome::kIssued;
};

/// Activates a warp of `block` resident on `sm` at cycle `now`. Warps without
/// any block ordinal finish immediately.
WarpState make_warp(const WarpContext& ctx, std::uint32_t block, std::uint32_t warp_index,
                    std::uint32_t sm, Cycle now);

/// Advances one warp by exactly one cycle (the memory clock is the current
/// cycle). Loads are issued on issue_load_* cycles; the next-block prefetch
/// is issued on the first compute cycle (or with the load when the variant
/// says so). A wait cycle whose load completes at that cycle is spent on
/// compute, not on a stall.
std::vector<IssuedAccess> step_warp(WarpState& warp, const WarpContext& ctx,
                                    MemoryHierarchy& mem);

struct BlockAssignment {
  std::uint32_t block = 0;
  std::uint32_t sm = 0;
  Cycle start = 0;
  Cycle finish = 0;
};

/// Round-robin initial placement, at most max_blocks_per_sm per SM; when a
/// block finishes, the next pending block (grid order) starts on that SM at
/// the same cycle. Blocks finishing at the same cycle are handled in block id
/// order.
class BlockScheduler {
 public:
  BlockScheduler(std::uint32_t total_blocks, const HardwareConfig& hw);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> initial();  // (block, sm)
  std::optional<std::uint32_t> next_for(std::uint32_t sm);
  std::uint32_t resident_capacity() const { return capacity_; }

 private:
  std::uint32_t total_;
  std::uint32_t sm_count_;
  std::uint32_t capacity_;
  std::uint32_t next_ = 0;
};

/// Timeline for blocks with fixed durations (block b runs durations[b] cycles).
std::vector<BlockAssignment> schedule_thread_blocks(const KernelLaunch& launch,
                                                    const HardwareConfig& hw,
                                                    std::span<const Cycle> durations);

struct SimReport {
  Cycle duration_cycles = 0;
  std::vector<WarpCounters> warps;
  WarpCounters total;  // sums over warps (start/finish unused)
  MemCounters memory;
  std::uint64_t resident_warp_slots = 0;
  std::uint64_t thread_blocks = 0;

  friend bool operator==(const SimReport&, const SimReport&) = default;
};

/// Aggregates and memory counters as a JSON object (per-warp data omitted).
std::string to_json(const SimReport& report);

/// For every warp: issue + compute + stall + idle == duration, and the
/// totals equal the per-warp sums.
bool check_conservation(const SimReport& report, std::string* why = nullptr);

struct RunOptions {
  std::function<void(Cycle, std::uint32_t, WarpPhase)> timeline;  // JSON-lines dump hook
  std::function<void(const MemEvent&)> mem_events;
};

/// Event-driven simulation of the whole grid.
SimReport run_kernel(const Scenario& scenario, const RunOptions& options = {});

/// Same model stepped one cycle at a time through step_warp. Slow; used to
/// cross-check run_kernel on small scenarios.
SimReport run_kernel_cycle_stepped(const Scenario& scenario);

std::string timeline_json_line(Cycle cycle, std::uint32_t warp, WarpPhase phase);

}  // namespace kvpsim
