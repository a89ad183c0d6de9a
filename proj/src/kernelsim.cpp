#include "kvpsim/kernelsim.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <map>
#include <queue>
#include <tuple>
#include <unordered_map>

#include "json.hpp"

namespace kvpsim {

std::string_view to_string(WarpPhase phase) {
  switch (phase) {
    case WarpPhase::kIssueLoadK: return "issue_load_k";
    case WarpPhase::kWaitK: return "wait_k";
    case WarpPhase::kComputeQK: return "compute_qk";
    case WarpPhase::kIssueLoadV: return "issue_load_v";
    case WarpPhase::kWaitV: return "wait_v";
    case WarpPhase::kComputeLV: return "compute_lv";
    case WarpPhase::kDone: return "done";
  }
  return "?";
}

std::string timeline_json_line(Cycle cycle, std::uint32_t warp, WarpPhase phase) {
  return fmt::format(R"({{"cycle":{},"warp":{},"phase":"{}"}})", cycle, warp, to_string(phase));
}

KernelLaunch make_launch(const Scenario& s) {
  KernelLaunch launch;
  launch.q_heads = s.model.q_heads;
  launch.batch = s.workload.batch;
  launch.warps_per_block = s.model.warps_per_block();
  launch.blocks_per_sequence = blocks_per_sequence(s.workload.seq_len, s.model.tokens_per_block);
  return launch;
}

// ---------------------------------------------------------------------------
// Warp behaviour shared by the event-driven and the cycle-stepped engines.
// ---------------------------------------------------------------------------
namespace {

Bytes block_address(const WarpContext& ctx, const WarpState& w, bool v_block,
                    std::uint64_t ordinal) {
  const std::uint32_t seq = ctx.launch.sequence_of(w.thread_block);
  const std::uint32_t kv_head = kv_head_for_q_head(ctx.launch.q_head_of(w.thread_block),
                                                   ctx.scenario->model);
  const BlockTable& table = v_block ? ctx.tables->v : ctx.tables->k;
  return table.at(seq, kv_head, ordinal);
}

// KV data is dead once it sits in registers; the evict_first variant tags the
// consumed lines so that lines prefetched but not yet read outlive them.
EvictionPriority demand_priority(const KernelVariant& v) { return v.eviction_priority; }
constexpr EvictionPriority kPrefetchPriority = EvictionPriority::kNormal;

bool wants_prefetch(const WarpContext& ctx, const WarpState& w, bool v_block) {
  const KernelVariant& variant = ctx.scenario->variant;
  const bool enabled = v_block ? variant.prefetches_v() : variant.prefetches_k();
  return enabled && w.block_idx + ctx.launch.warps_per_block < ctx.launch.blocks_per_sequence;
}

void issue_prefetch(WarpState& w, const WarpContext& ctx, MemoryHierarchy& mem, bool v_block,
                    std::vector<IssuedAccess>* out) {
  const Bytes addr = block_address(ctx, w, v_block, w.block_idx + ctx.launch.warps_per_block);
  const PrefetchOutcome outcome = mem.prefetch_l2(addr, ctx.block_bytes, kPrefetchPriority);
  ++w.counters.instructions;
  ++w.counters.prefetch_instructions;
  if (out) out->push_back(IssuedAccess{AccessKind::kPrefetch, addr, std::nullopt, outcome});
}

void issue_load(WarpState& w, const WarpContext& ctx, MemoryHierarchy& mem, bool v_block,
                std::vector<IssuedAccess>* out) {
  const Bytes addr = block_address(ctx, w, v_block, w.block_idx);
  const RequestId req = mem.demand_load(w.sm, addr, ctx.block_bytes,
                                        demand_priority(ctx.scenario->variant));
  ++w.counters.instructions;
  ++w.counters.load_instructions;
  ++w.counters.issue_cycles;
  if (out) out->push_back(IssuedAccess{AccessKind::kDemand, addr, req, PrefetchOutcome::kIssued});
  if (ctx.scenario->variant.prefetch_at_load_issue && wants_prefetch(ctx, w, v_block)) {
    issue_prefetch(w, ctx, mem, v_block, out);
  }
  w.pending = req;
  w.wait_since = mem.clock() + 1;
  w.phase = v_block ? WarpPhase::kWaitV : WarpPhase::kWaitK;
}

void enter_compute(WarpState& w, const WarpContext& ctx, MemoryHierarchy& mem, bool v_block,
                   std::vector<IssuedAccess>* out) {
  if (!ctx.scenario->variant.prefetch_at_load_issue && wants_prefetch(ctx, w, v_block)) {
    issue_prefetch(w, ctx, mem, v_block, out);
  }
  w.pending.reset();
  const WorkloadConfig& wl = ctx.scenario->workload;
  w.compute_left = v_block ? wl.compute_cycles_lv : wl.compute_cycles_qk;
  w.phase = v_block ? WarpPhase::kComputeLV : WarpPhase::kComputeQK;
}

// Called once the last compute cycle of a V phase is accounted; `next` is the
// first cycle after it.
void end_iteration(WarpState& w, const WarpContext& ctx, Cycle next) {
  w.block_idx += ctx.launch.warps_per_block;
  if (w.block_idx >= ctx.launch.blocks_per_sequence) {
    w.phase = WarpPhase::kDone;
    w.counters.finish = next;
  } else {
    w.phase = WarpPhase::kIssueLoadK;
  }
}

void compute_one_cycle(WarpState& w, const WarpContext& ctx, Cycle now) {
  ++w.counters.compute_cycles;
  ++w.counters.compute_instructions;
  ++w.counters.instructions;
  if (--w.compute_left == 0) {
    if (w.phase == WarpPhase::kComputeQK) {
      w.phase = WarpPhase::kIssueLoadV;
    } else {
      end_iteration(w, ctx, now + 1);
    }
  }
}

WarpContext make_context(const Scenario& s, const KvBlockTables& tables) {
  WarpContext ctx;
  ctx.scenario = &s;
  ctx.tables = &tables;
  ctx.launch = make_launch(s);
  ctx.block_bytes = block_footprint(s.model);
  return ctx;
}

SimReport finalize(std::vector<WarpState>& warps, const MemoryHierarchy& mem, Cycle duration,
                   const KernelLaunch& launch, std::uint32_t resident_blocks) {
  SimReport r;
  r.duration_cycles = duration;
  r.thread_blocks = launch.thread_blocks();
  r.resident_warp_slots =
      static_cast<std::uint64_t>(std::min(resident_blocks, launch.thread_blocks())) *
      launch.warps_per_block;
  r.warps.reserve(warps.size());
  for (auto& w : warps) {
    WarpCounters& c = w.counters;
    c.idle_cycles = c.start + (duration - c.finish);
    r.warps.push_back(c);
    r.total.instructions += c.instructions;
    r.total.load_instructions += c.load_instructions;
    r.total.prefetch_instructions += c.prefetch_instructions;
    r.total.compute_instructions += c.compute_instructions;
    r.total.issue_cycles += c.issue_cycles;
    r.total.compute_cycles += c.compute_cycles;
    r.total.stall_long_scoreboard += c.stall_long_scoreboard;
    r.total.stall_other += c.stall_other;
    r.total.idle_cycles += c.idle_cycles;
  }
  r.memory = mem.counters();
  return r;
}

}  // namespace

WarpState make_warp(const WarpContext& ctx, std::uint32_t block, std::uint32_t warp_index,
                    std::uint32_t sm, Cycle now) {
  WarpState w;
  w.id = block * ctx.launch.warps_per_block + warp_index;
  w.thread_block = block;
  w.warp_index = warp_index;
  w.sm = sm;
  w.block_idx = warp_index;
  w.counters.start = now;
  if (warp_index < ctx.launch.blocks_per_sequence) {
    w.phase = WarpPhase::kIssueLoadK;
  } else {
    w.phase = WarpPhase::kDone;
    w.counters.finish = now;
  }
  return w;
}

std::vector<IssuedAccess> step_warp(WarpState& w, const WarpContext& ctx, MemoryHierarchy& mem) {
  std::vector<IssuedAccess> issued;
  const Cycle now = mem.clock();
  switch (w.phase) {
    case WarpPhase::kIssueLoadK:
      issue_load(w, ctx, mem, /*v_block=*/false, &issued);
      break;
    case WarpPhase::kIssueLoadV:
      issue_load(w, ctx, mem, /*v_block=*/true, &issued);
      break;
    case WarpPhase::kWaitK:
    case WarpPhase::kWaitV: {
      const auto done = mem.completion_of(*w.pending);
      if (!done || *done > now) {
        ++w.counters.stall_long_scoreboard;
        break;
      }
      enter_compute(w, ctx, mem, w.phase == WarpPhase::kWaitV, &issued);
      compute_one_cycle(w, ctx, now);
      break;
    }
    case WarpPhase::kComputeQK:
    case WarpPhase::kComputeLV:
      compute_one_cycle(w, ctx, now);
      break;
    case WarpPhase::kDone:
      break;
  }
  return issued;
}

// ---------------------------------------------------------------------------

BlockScheduler::BlockScheduler(std::uint32_t total_blocks, const HardwareConfig& hw)
    : total_(total_blocks), sm_count_(hw.sm_count), capacity_(hw.sm_count * hw.max_blocks_per_sm) {}

std::vector<std::pair<std::uint32_t, std::uint32_t>> BlockScheduler::initial() {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  while (next_ < total_ && next_ < capacity_) {
    out.emplace_back(next_, next_ % sm_count_);
    ++next_;
  }
  return out;
}

std::optional<std::uint32_t> BlockScheduler::next_for(std::uint32_t) {
  if (next_ >= total_) return std::nullopt;
  return next_++;
}

std::vector<BlockAssignment> schedule_thread_blocks(const KernelLaunch& launch,
                                                    const HardwareConfig& hw,
                                                    std::span<const Cycle> durations) {
  const std::uint32_t total = launch.thread_blocks();
  BlockScheduler scheduler(total, hw);
  std::vector<BlockAssignment> timeline(total);
  // (finish cycle, block) ordered the same way the kernel engines order them.
  std::priority_queue<std::pair<Cycle, std::uint32_t>, std::vector<std::pair<Cycle, std::uint32_t>>,
                      std::greater<>>
      running;
  auto start = [&](std::uint32_t block, std::uint32_t sm, Cycle now) {
    timeline[block] = BlockAssignment{block, sm, now, now + durations[block]};
    running.emplace(now + durations[block], block);
  };
  for (auto [block, sm] : scheduler.initial()) start(block, sm, 0);
  while (!running.empty()) {
    auto [finish, block] = running.top();
    running.pop();
    if (auto next = scheduler.next_for(timeline[block].sm)) start(*next, timeline[block].sm, finish);
  }
  return timeline;
}

// ---------------------------------------------------------------------------

std::string to_json(const SimReport& r) {
  nlohmann::ordered_json j;
  j["duration_cycles"] = r.duration_cycles;
  j["thread_blocks"] = r.thread_blocks;
  j["warps"] = r.warps.size();
  j["resident_warp_slots"] = r.resident_warp_slots;
  j["instructions"] = r.total.instructions;
  j["load_instructions"] = r.total.load_instructions;
  j["prefetch_instructions"] = r.total.prefetch_instructions;
  j["compute_instructions"] = r.total.compute_instructions;
  j["issue_cycles"] = r.total.issue_cycles;
  j["compute_cycles"] = r.total.compute_cycles;
  j["stall_long_scoreboard_cycles"] = r.total.stall_long_scoreboard;
  j["stall_other_cycles"] = r.total.stall_other;
  j["idle_cycles"] = r.total.idle_cycles;
  const MemCounters& m = r.memory;
  j["l1_demand_probes"] = m.l1_demand.probes;
  j["l1_demand_hits"] = m.l1_demand.hits;
  j["l2_demand_probes"] = m.l2_demand.probes;
  j["l2_demand_hits"] = m.l2_demand.hits;
  j["l2_prefetch_probes"] = m.l2_prefetch.probes;
  j["l2_prefetch_hits"] = m.l2_prefetch.hits;
  j["l1_bytes_demand"] = m.l1_bytes_demand;
  j["l2_bytes_demand"] = m.l2_bytes_demand;
  j["hbm_bytes_demand"] = m.hbm_bytes_demand;
  j["hbm_bytes_prefetch"] = m.hbm_bytes_prefetch;
  j["prefetches_issued"] = m.prefetches_issued;
  j["dropped_prefetches"] = m.dropped_prefetches;
  j["promoted_prefetch_fills"] = m.promoted_prefetch_fills;
  return j.dump(2);
}

bool check_conservation(const SimReport& r, std::string* why) {
  auto fail = [&](std::string msg) {
    if (why) *why = std::move(msg);
    return false;
  };
  WarpCounters sum;
  for (std::size_t i = 0; i < r.warps.size(); ++i) {
    const WarpCounters& c = r.warps[i];
    if (c.finish < c.start || c.finish > r.duration_cycles) {
      return fail(fmt::format("warp {}: start {} finish {} outside [0, {}]", i, c.start, c.finish,
                              r.duration_cycles));
    }
    if (c.active_cycles() != c.finish - c.start) {
      return fail(fmt::format("warp {}: active cycles {} != residency {}", i, c.active_cycles(),
                              c.finish - c.start));
    }
    if (c.active_cycles() + c.idle_cycles != r.duration_cycles) {
      return fail(fmt::format("warp {}: issue+compute+stall+idle = {} != duration {}", i,
                              c.active_cycles() + c.idle_cycles, r.duration_cycles));
    }
    if (c.instructions != c.load_instructions + c.prefetch_instructions + c.compute_instructions) {
      return fail(fmt::format("warp {}: instruction classes do not add up", i));
    }
    sum.instructions += c.instructions;
    sum.issue_cycles += c.issue_cycles;
    sum.compute_cycles += c.compute_cycles;
    sum.stall_long_scoreboard += c.stall_long_scoreboard;
    sum.idle_cycles += c.idle_cycles;
  }
  if (sum.instructions != r.total.instructions || sum.issue_cycles != r.total.issue_cycles ||
      sum.compute_cycles != r.total.compute_cycles ||
      sum.stall_long_scoreboard != r.total.stall_long_scoreboard ||
      sum.idle_cycles != r.total.idle_cycles) {
    return fail("aggregate counters differ from the per-warp sums");
  }
  return true;
}

// ---------------------------------------------------------------------------
// Event-driven engine.
// ---------------------------------------------------------------------------

SimReport run_kernel(const Scenario& scenario, const RunOptions& options) {
  validate(scenario);
  const KvBlockTables tables =
      build_block_tables(scenario.model, scenario.workload, scenario.hardware);
  const WarpContext ctx = make_context(scenario, tables);
  const KernelLaunch& launch = ctx.launch;
  const std::uint32_t w = launch.warps_per_block;

  MemoryHierarchy mem(scenario.hardware);
  if (options.mem_events) mem.set_event_sink(options.mem_events);

  std::vector<WarpState> warps(static_cast<std::size_t>(launch.thread_blocks()) * w);
  struct BlockRun {
    std::uint32_t sm = 0;
    std::uint32_t finished_warps = 0;
    Cycle finish = 0;
  };
  std::vector<BlockRun> blocks(launch.thread_blocks());

  // (cycle, class, id): class 0 = a block finished (its SM admits the next
  // block), class 1 = a warp acts.
  using Event = std::tuple<Cycle, int, std::uint32_t>;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events;
  std::unordered_map<RequestId, std::uint32_t> waiting;  // request -> warp
  Cycle duration = 0;

  auto note = [&](const WarpState& ws, Cycle at) {
    if (options.timeline) options.timeline(at, ws.id, ws.phase);
  };
  auto warp_finished = [&](const WarpState& ws) {
    BlockRun& b = blocks[ws.thread_block];
    b.finish = std::max(b.finish, ws.counters.finish);
    duration = std::max(duration, ws.counters.finish);
    if (++b.finished_warps == w) events.emplace(b.finish, 0, ws.thread_block);
  };
  auto activate = [&](std::uint32_t block, std::uint32_t sm, Cycle now) {
    blocks[block].sm = sm;
    for (std::uint32_t i = 0; i < w; ++i) {
      WarpState& ws = warps[block * w + i];
      ws = make_warp(ctx, block, i, sm, now);
      note(ws, now);
      if (ws.phase == WarpPhase::kDone) {
        warp_finished(ws);
      } else {
        events.emplace(now, 1, ws.id);
      }
    }
  };
  auto wait_for = [&](WarpState& ws) {
    if (auto done = mem.completion_of(*ws.pending)) {
      events.emplace(*done, 1, ws.id);
    } else {
      waiting.emplace(*ws.pending, ws.id);
    }
  };
  // Runs a warp from `now` until it blocks on memory or on its own compute.
  auto act = [&](WarpState& ws, Cycle now) {
    switch (ws.phase) {
      case WarpPhase::kIssueLoadK:
      case WarpPhase::kIssueLoadV:
        issue_load(ws, ctx, mem, ws.phase == WarpPhase::kIssueLoadV, nullptr);
        note(ws, now + 1);
        wait_for(ws);
        return;
      case WarpPhase::kWaitK:
      case WarpPhase::kWaitV: {
        const bool v_block = ws.phase == WarpPhase::kWaitV;
        ws.counters.stall_long_scoreboard += now - ws.wait_since;
        enter_compute(ws, ctx, mem, v_block, nullptr);
        note(ws, now);
        const Cycle n = ws.compute_left;
        ws.counters.compute_cycles += n;
        ws.counters.compute_instructions += n;
        ws.counters.instructions += n;
        ws.compute_left = 0;
        if (!v_block) {
          ws.phase = WarpPhase::kIssueLoadV;
          events.emplace(now + n, 1, ws.id);
        } else {
          end_iteration(ws, ctx, now + n);
          if (ws.phase == WarpPhase::kDone) {
            warp_finished(ws);
          } else {
            events.emplace(now + n, 1, ws.id);
          }
        }
        note(ws, now + n);
        return;
      }
      default:
        return;
    }
  };

  BlockScheduler scheduler(launch.thread_blocks(), scenario.hardware);
  for (auto [block, sm] : scheduler.initial()) activate(block, sm, 0);

  while (!events.empty() || !waiting.empty()) {
    Cycle now = events.empty() ? ~Cycle{0} : std::get<0>(events.top());
    if (auto m = mem.next_event()) now = std::min(now, *m);
    for (const Completion& c : mem.advance_to(now)) {
      if (auto it = waiting.find(c.id); it != waiting.end()) {
        events.emplace(c.cycle, 1, it->second);
        waiting.erase(it);
      }
    }
    while (!events.empty() && std::get<0>(events.top()) == now) {
      auto [at, kind, id] = events.top();
      events.pop();
      if (kind == 0) {
        if (auto next = scheduler.next_for(blocks[id].sm)) activate(*next, blocks[id].sm, now);
      } else {
        act(warps[id], now);
      }
    }
  }
  mem.advance_to(std::max(duration, mem.clock()));
  return finalize(warps, mem, duration, launch, scheduler.resident_capacity());
}

// ---------------------------------------------------------------------------
// Cycle-stepped engine.
// ---------------------------------------------------------------------------

SimReport run_kernel_cycle_stepped(const Scenario& scenario) {
  validate(scenario);
  const KvBlockTables tables =
      build_block_tables(scenario.model, scenario.workload, scenario.hardware);
  const WarpContext ctx = make_context(scenario, tables);
  const KernelLaunch& launch = ctx.launch;
  const std::uint32_t w = launch.warps_per_block;

  MemoryHierarchy mem(scenario.hardware);
  std::vector<WarpState> warps(static_cast<std::size_t>(launch.thread_blocks()) * w);
  std::vector<bool> active(warps.size(), false);
  std::vector<std::uint32_t> block_sm(launch.thread_blocks(), 0);
  std::vector<std::uint32_t> done_warps(launch.thread_blocks(), 0);
  std::map<Cycle, std::vector<std::uint32_t>> block_finishes;
  std::uint32_t finished_blocks = 0;
  Cycle duration = 0;

  auto track_done = [&](const WarpState& ws) {
    duration = std::max(duration, ws.counters.finish);
    if (++done_warps[ws.thread_block] == w) {
      Cycle finish = 0;
      for (std::uint32_t i = 0; i < w; ++i) {
        finish = std::max(finish, warps[ws.thread_block * w + i].counters.finish);
      }
      block_finishes[finish].push_back(ws.thread_block);
      ++finished_blocks;
    }
  };
  auto activate = [&](std::uint32_t block, std::uint32_t sm, Cycle now) {
    block_sm[block] = sm;
    for (std::uint32_t i = 0; i < w; ++i) {
      WarpState& ws = warps[block * w + i];
      ws = make_warp(ctx, block, i, sm, now);
      active[ws.id] = ws.phase != WarpPhase::kDone;
      if (!active[ws.id]) track_done(ws);
    }
  };

  BlockScheduler scheduler(launch.thread_blocks(), scenario.hardware);
  for (auto [block, sm] : scheduler.initial()) activate(block, sm, 0);

  for (Cycle now = 0; finished_blocks < launch.thread_blocks() || !block_finishes.empty(); ++now) {
    mem.advance_to(now);
    if (auto it = block_finishes.find(now); it != block_finishes.end()) {
      auto finished = std::move(it->second);
      block_finishes.erase(it);
      std::sort(finished.begin(), finished.end());
      for (std::uint32_t block : finished) {
        if (auto next = scheduler.next_for(block_sm[block])) activate(*next, block_sm[block], now);
      }
    }
    for (std::size_t id = 0; id < warps.size(); ++id) {
      if (!active[id]) continue;
      WarpState& ws = warps[id];
      step_warp(ws, ctx, mem);
      if (ws.phase == WarpPhase::kDone) {
        active[id] = false;
        track_done(ws);
      }
    }
  }
  mem.advance_to(std::max(duration, mem.clock()));
  return finalize(warps, mem, duration, launch, scheduler.resident_capacity());
}

}  // namespace kvpsim
