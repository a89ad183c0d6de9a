#include "doctest.h"
#include "kvpsim/memsim.hpp"
#include "oracle_harness.hpp"

using namespace kvpsim;

namespace {

HardwareConfig small_hw() {
  HardwareConfig hw;
  hw.l1_capacity = 4 * 1024;
  hw.l2_capacity = 64 * 1024;
  hw.sm_count = 2;
  return hw;
}

Cycle complete(MemoryHierarchy& mem, RequestId id) {
  mem.run_until_idle();
  return mem.completion_of(id).value();
}

}  // namespace

TEST_CASE("cold line miss completes after the HBM latency") {
  const HardwareConfig hw = small_hw();
  MemoryHierarchy mem(hw);
  const RequestId id = mem.demand_load(0, 0, 128);
  CHECK(complete(mem, id) == hw.lat_hbm);
  CHECK(mem.counters().l1_demand.probes == 1);
  CHECK(mem.counters().l1_demand.hits == 0);
  CHECK(mem.counters().l2_demand.probes == 1);
  CHECK(mem.counters().l2_demand.hits == 0);
}

TEST_CASE("repeat load on the same SM hits L1") {
  const HardwareConfig hw = small_hw();
  MemoryHierarchy mem(hw);
  mem.run_until_idle();
  complete(mem, mem.demand_load(0, 0, 128));
  const Cycle issued = mem.clock();
  const RequestId again = mem.demand_load(0, 0, 128);
  CHECK(complete(mem, again) == issued + hw.lat_l1);
  CHECK(mem.counters().l1_demand.hits == 1);
}

TEST_CASE("bulk load serializes on the link") {
  HardwareConfig hw = small_hw();
  hw.bw_hbm = 64;
  MemoryHierarchy mem(hw);
  const RequestId id = mem.demand_load(0, 0, 4096);
  CHECK(complete(mem, id) == hw.lat_hbm + 64);
}

TEST_CASE("prefetched block is found in L2") {
  const HardwareConfig hw = small_hw();
  MemoryHierarchy mem(hw);
  CHECK(mem.prefetch_l2(0, 4096, EvictionPriority::kNormal) == PrefetchOutcome::kIssued);
  mem.run_until_idle();
  const Cycle issued = mem.clock();
  const auto before = mem.counters().l2_demand;
  const RequestId id = mem.demand_load(0, 0, 4096);
  CHECK(complete(mem, id) == issued + hw.lat_l2);
  CHECK(mem.counters().l2_demand.probes - before.probes == 32);
  CHECK(mem.counters().l2_demand.hits - before.hits == 32);
}

TEST_CASE("prefetch of a resident range moves no bytes") {
  MemoryHierarchy mem(small_hw());
  mem.prefetch_l2(0, 4096, EvictionPriority::kNormal);
  mem.run_until_idle();
  const Bytes before = mem.counters().hbm_bytes();
  CHECK(mem.prefetch_l2(0, 4096, EvictionPriority::kNormal) == PrefetchOutcome::kAllResident);
  mem.run_until_idle();
  CHECK(mem.counters().hbm_bytes() == before);
}

TEST_CASE("prefetch beyond the queue depth is dropped without side effects") {
  HardwareConfig hw = small_hw();
  hw.prefetch_queue_depth = 1;
  MemoryHierarchy mem(hw);
  CHECK(mem.prefetch_l2(0, 256, EvictionPriority::kNormal) == PrefetchOutcome::kIssued);
  const std::size_t lines = mem.l2_resident_lines();
  const std::size_t transfers = mem.transfers_in_flight();
  CHECK(mem.prefetch_l2(8192, 256, EvictionPriority::kNormal) == PrefetchOutcome::kDropped);
  CHECK(mem.counters().dropped_prefetches == 1);
  CHECK(mem.l2_resident_lines() == lines);
  CHECK(mem.transfers_in_flight() == transfers);
  CHECK_FALSE(mem.l2_priority_of(8192).has_value());
}

TEST_CASE("quiescent advance only moves the clock") {
  MemoryHierarchy mem(small_hw());
  CHECK(mem.advance(100).empty());
  CHECK(mem.clock() == 100);
}

TEST_CASE("single request completes exactly at issue + lat_hbm") {
  const HardwareConfig hw = small_hw();
  MemoryHierarchy mem(hw);
  mem.advance(7);
  const RequestId id = mem.demand_load(1, 1024, 128);
  CHECK(mem.advance(hw.lat_hbm - 1).empty());
  const auto done = mem.advance(1);
  REQUIRE(done.size() == 1);
  CHECK(done[0] == Completion{id, 7 + hw.lat_hbm});
}

TEST_CASE("demand traffic is not slowed by a competing prefetch") {
  HardwareConfig hw = small_hw();
  hw.bw_hbm = 32;
  MemoryHierarchy alone(hw);
  const Cycle solo = complete(alone, alone.demand_load(0, 0, 2048));

  MemoryHierarchy shared(hw);
  shared.prefetch_l2(16384, 4096, EvictionPriority::kNormal);
  shared.advance(3);
  const RequestId id = shared.demand_load(0, 0, 2048);
  CHECK(complete(shared, id) - 3 <= solo);
}

TEST_CASE("demand hit on a queued prefetch line promotes it") {
  HardwareConfig hw = small_hw();
  hw.bw_hbm = 16;
  MemoryHierarchy mem(hw);
  mem.prefetch_l2(0, 4096, EvictionPriority::kNormal);
  mem.advance(4);
  const RequestId id = mem.demand_load(0, 31 * 128, 128);
  // Line 31 would otherwise drain last (cycle 256). Promoted, it preempts the
  // half-sent line 0 and owns the link for 8 cycles.
  CHECK(complete(mem, id) == 4 + 8 + hw.lat_hbm);
  CHECK(mem.counters().promoted_prefetch_fills == 1);
  CHECK(mem.counters().l2_demand.hits == 1);
}

TEST_CASE("eviction policy: priority dominates recency") {
  PriorityLruCache<int> c(2);
  c.insert(1, EvictionPriority::kNormal, 0);
  c.insert(2, EvictionPriority::kEvictFirst, 0);
  CHECK(evict_policy_apply(c, 3) == std::optional<LineAddr>(2));
}

TEST_CASE("eviction policy: all normal is plain LRU") {
  PriorityLruCache<int> c(3);
  for (LineAddr l : {1, 2, 3}) c.insert(l, EvictionPriority::kNormal, 0);
  c.touch(1, EvictionPriority::kNormal);
  CHECK(evict_policy_apply(c, 4) == std::optional<LineAddr>(2));
  CHECK_FALSE(evict_policy_apply(c, 3).has_value());
}

TEST_CASE("eviction policy: all evict_first is LRU among them") {
  PriorityLruCache<int> c(3);
  for (LineAddr l : {1, 2, 3}) c.insert(l, EvictionPriority::kEvictFirst, 0);
  c.touch(1, EvictionPriority::kEvictFirst);
  CHECK(evict_policy_apply(c, 4) == std::optional<LineAddr>(2));
  auto gone = c.insert(4, EvictionPriority::kNormal, 0);
  REQUIRE(gone.has_value());
  CHECK(gone->line == 2);
}

TEST_CASE("HBM bytes equal line size times demand misses plus prefetch fills") {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    std::mt19937_64 rng(seed);
    const HardwareConfig hw = reference::random_hardware(rng);
    MemoryHierarchy mem(hw);
    for (int i = 0; i < 400; ++i) {
      const Bytes addr = rng() % (64 * hw.line_size);
      if (rng() % 3 == 0) {
        mem.prefetch_l2(addr, hw.line_size, EvictionPriority::kNormal);
      } else {
        mem.demand_load(static_cast<std::uint32_t>(rng() % hw.sm_count), addr, 1 + rng() % 256);
      }
      mem.advance(rng() % 5);
    }
    mem.run_until_idle();
    const MemCounters& c = mem.counters();
    CHECK(c.hbm_bytes() == hw.line_size * (c.l2_demand.misses() + c.prefetch_fills));
  }
}

TEST_CASE("matches the reference model on random traces") {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const std::string diff = reference::compare_random_trace(seed, {2000, 64});
    CHECK_MESSAGE(diff.empty(), diff);
  }
}
