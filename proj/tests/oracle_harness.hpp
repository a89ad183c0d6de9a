#pragma once

// Random trace generation and lock-step comparison of MemoryHierarchy against
// the reference model.

#include <fmt/format.h>

#include <random>
#include <string>

#include "kvpsim/memsim.hpp"
#include "reference_memsim.hpp"

namespace kvpsim::reference {

struct TraceLimits {
  std::size_t max_ops = 10000;
  std::uint64_t max_lines = 64;
};

inline HardwareConfig random_hardware(std::mt19937_64& rng) {
  auto pick = [&](std::uint64_t lo, std::uint64_t hi) {
    return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng);
  };
  HardwareConfig hw;
  hw.line_size = std::uint64_t{32} << pick(0, 2);
  hw.l1_capacity = hw.line_size * pick(1, 8);
  hw.l2_capacity = hw.line_size * pick(2, 32);
  hw.sm_count = static_cast<std::uint32_t>(pick(1, 4));
  hw.lat_l1 = pick(1, 8);
  hw.lat_l2 = hw.lat_l1 + pick(1, 30);
  hw.lat_hbm = hw.lat_l2 + pick(1, 120);
  hw.bw_hbm = pick(8, 300);
  hw.bw_l2 = hw.bw_hbm * 4;
  hw.prefetch_queue_depth = static_cast<std::uint32_t>(pick(0, 3) == 0 ? 1000 : pick(1, 4));
  return hw;
}

/// Runs one random trace through both models. Returns an empty string when
/// they agree, otherwise a description of the first divergence.
inline std::string compare_random_trace(std::uint64_t seed, const TraceLimits& limits = {}) {
  std::mt19937_64 rng(seed);
  auto pick = [&](std::uint64_t lo, std::uint64_t hi) {
    return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng);
  };
  const HardwareConfig hw = random_hardware(rng);
  MemoryHierarchy fast(hw);
  ReferenceMemory slow(hw);
  std::vector<MemEvent> fast_events;
  fast.set_event_sink([&](const MemEvent& e) { fast_events.push_back(e); });

  const std::size_t ops = pick(1, limits.max_ops);
  const Bytes span = limits.max_lines * hw.line_size;
  auto where = [&](std::size_t op) { return fmt::format("seed {} op {}", seed, op); };

  for (std::size_t op = 0; op < ops; ++op) {
    const auto roll = pick(0, 99);
    if (roll < 45 || roll < 70) {
      const Bytes len = pick(1, 3 * hw.line_size);
      const Bytes addr = pick(0, span - len);
      const auto prio = pick(0, 3) == 0 ? EvictionPriority::kEvictFirst : EvictionPriority::kNormal;
      if (roll < 45) {
        const auto sm = static_cast<std::uint32_t>(pick(0, hw.sm_count - 1));
        const RequestId a = fast.demand_load(sm, addr, len, prio);
        const std::uint64_t b = slow.demand_load(sm, addr, len, prio);
        if (a != b) return where(op) + ": request ids differ";
      } else {
        const PrefetchOutcome a = fast.prefetch_l2(addr, len, prio);
        const PrefetchOutcome b = slow.prefetch_l2(addr, len, prio);
        if (a != b) return where(op) + ": prefetch outcome differs";
      }
    } else {
      const Cycle step = pick(0, 9) == 0 ? pick(0, 2 * hw.lat_hbm) : pick(0, 12);
      if (fast.advance(step) != slow.advance(step)) return where(op) + ": completions differ";
    }
  }
  if (fast.run_until_idle() != slow.run_until_idle()) return where(ops) + ": drain completions differ";
  if (fast_events != slow.events()) return where(ops) + ": hit/miss streams differ";
  for (std::uint64_t id = 0; id < fast.counters().l1_demand.probes + 1; ++id) {
    if (fast.completion_of(id) != slow.completion_of(id)) {
      return fmt::format("seed {}: completion of request {} differs", seed, id);
    }
  }
  const MemCounters& c = fast.counters();
  if (c.l1_demand.hits != slow.l1_hits || c.l1_demand.probes != slow.l1_probes ||
      c.l2_demand.hits != slow.l2_hits || c.l2_demand.probes != slow.l2_probes ||
      c.l2_prefetch.hits != slow.prefetch_hits || c.l2_prefetch.probes != slow.prefetch_probes ||
      c.dropped_prefetches != slow.dropped || c.hbm_bytes_demand != slow.hbm_demand ||
      c.hbm_bytes_prefetch != slow.hbm_prefetch) {
    return fmt::format("seed {}: counters differ", seed);
  }
  return {};
}

}  // namespace kvpsim::reference
