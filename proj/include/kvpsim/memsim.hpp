#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <list>
#include <optional>
#include <queue>
#include <string>
#include <unordered_map>
#include <vector>

#include "kvpsim/config.hpp"

namespace kvpsim {

using LineAddr = std::uint64_t;
using RequestId = std::uint64_t;
using TransferId = std::uint64_t;

enum class AccessKind { kDemand, kPrefetch };
enum class Level { kL1, kL2, kHbm };

std::string_view to_string(AccessKind kind);
std::string_view to_string(Level level);

// ---------------------------------------------------------------------------
// Fully associative LRU cache split into two recency segments by eviction
// priority. Victims come from the evict_first segment (its LRU end) while it
// is non-empty, otherwise from the LRU end of the normal segment. Every
// reference moves the line to the MRU end of the segment named by the
// reference's priority.
// ---------------------------------------------------------------------------
template <typename Payload>
class PriorityLruCache {
 public:
  struct Evicted {
    LineAddr line;
    Payload payload;
  };

  explicit PriorityLruCache(std::size_t capacity_lines) : capacity_(capacity_lines) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return index_.size(); }
  bool full() const { return index_.size() >= capacity_; }
  bool contains(LineAddr line) const { return index_.count(line) != 0; }

  Payload* find(LineAddr line) {
    auto it = index_.find(line);
    return it == index_.end() ? nullptr : &it->second.node->payload;
  }

  std::optional<EvictionPriority> priority_of(LineAddr line) const {
    auto it = index_.find(line);
    if (it == index_.end()) return std::nullopt;
    return it->second.priority;
  }

  void touch(LineAddr line, EvictionPriority priority) {
    Slot& slot = index_.at(line);
    auto& from = segment(slot.priority);
    auto& to = segment(priority);
    to.splice(to.begin(), from, slot.node);
    slot.priority = priority;
  }

  /// The line that inserting `incoming` would displace, if any.
  std::optional<LineAddr> victim_for(LineAddr incoming) const {
    if (contains(incoming) || !full() || capacity_ == 0) return std::nullopt;
    if (!evict_first_.empty()) return evict_first_.back().line;
    if (!normal_.empty()) return normal_.back().line;
    return std::nullopt;
  }

  /// Inserts a line that is not present; returns what was evicted to make room.
  std::optional<Evicted> insert(LineAddr line, EvictionPriority priority, Payload payload) {
    if (capacity_ == 0) return std::nullopt;
    std::optional<Evicted> evicted;
    if (auto victim = victim_for(line)) {
      Slot& slot = index_.at(*victim);
      evicted = Evicted{*victim, slot.node->payload};
      segment(slot.priority).erase(slot.node);
      index_.erase(*victim);
    }
    auto& seg = segment(priority);
    seg.push_front(Node{line, std::move(payload)});
    index_.emplace(line, Slot{seg.begin(), priority});
    return evicted;
  }

  /// Lines from most to least likely to survive (normal MRU first).
  std::vector<LineAddr> retention_order() const {
    std::vector<LineAddr> out;
    for (const auto& n : normal_) out.push_back(n.line);
    for (const auto& n : evict_first_) out.push_back(n.line);
    return out;
  }

 private:
  struct Node {
    LineAddr line;
    Payload payload;
  };
  using List = std::list<Node>;
  struct Slot {
    typename List::iterator node;
    EvictionPriority priority;
  };

  List& segment(EvictionPriority p) {
    return p == EvictionPriority::kNormal ? normal_ : evict_first_;
  }

  std::size_t capacity_;
  List normal_;
  List evict_first_;
  std::unordered_map<LineAddr, Slot> index_;
};

/// Victim selection used by the L2: evict_first lines (LRU among them) go
/// before normal lines (LRU among them). Empty when the cache has room.
template <typename Payload>
std::optional<LineAddr> evict_policy_apply(const PriorityLruCache<Payload>& l2,
                                           LineAddr incoming) {
  return l2.victim_for(incoming);
}

// ---------------------------------------------------------------------------

struct ProbeCounters {
  std::uint64_t probes = 0;
  std::uint64_t hits = 0;
  std::uint64_t misses() const { return probes - hits; }
  friend bool operator==(const ProbeCounters&, const ProbeCounters&) = default;
};

struct MemCounters {
  ProbeCounters l1_demand;
  ProbeCounters l2_demand;
  ProbeCounters l2_prefetch;
  Bytes hbm_bytes_demand = 0;    // fills started by demand misses
  Bytes hbm_bytes_prefetch = 0;  // fills started by prefetches
  Bytes l2_bytes_demand = 0;     // bytes served to L1 from L2 (hits and fills)
  Bytes l1_bytes_demand = 0;     // bytes delivered to the SM
  std::uint64_t prefetch_fills = 0;
  std::uint64_t prefetches_issued = 0;
  std::uint64_t dropped_prefetches = 0;
  std::uint64_t promoted_prefetch_fills = 0;

  Bytes hbm_bytes() const { return hbm_bytes_demand + hbm_bytes_prefetch; }
  friend bool operator==(const MemCounters&, const MemCounters&) = default;
};

struct MemEvent {
  Cycle cycle = 0;
  AccessKind kind = AccessKind::kDemand;
  Level level = Level::kL1;
  Bytes addr = 0;
  Bytes len = 0;
  bool hit = false;
  friend bool operator==(const MemEvent&, const MemEvent&) = default;
};

/// One JSON-lines record: {"cycle":..,"kind":..,"level":..,"addr":..,"len":..,"hit":..}.
std::string to_json_line(const MemEvent& event);

struct Completion {
  RequestId id = 0;
  Cycle cycle = 0;
  friend bool operator==(const Completion&, const Completion&) = default;
};

enum class PrefetchOutcome { kIssued, kAllResident, kDropped };

// ---------------------------------------------------------------------------
// Per-SM L1s, a shared priority-tagged L2 and one HBM link.
//
// Timing:
//  * A line probe that hits L1 is ready lat_l1 after issue, an L2 hit lat_l2
//    after issue. A hit on a line whose fill is still in flight is ready at
//    the later of that and the fill's arrival.
//  * A double miss allocates the line in L2 and L1 at once (pending) and
//    queues a line_size transfer on the HBM link. The link serves bw_hbm bytes
//    per cycle as a fluid queue: demand transfers strictly before prefetch
//    transfers, FIFO within each class. A transfer whose last byte leaves the
//    link at time t has drained in cycle floor(t); its data arrives lat_hbm
//    cycles later.
//  * A demand probe that hits a line whose prefetch fill is still queued moves
//    the remainder of that transfer to the tail of the demand queue.
//  * A request completes when its last line is ready.
// ---------------------------------------------------------------------------
class MemoryHierarchy {
 public:
  explicit MemoryHierarchy(const HardwareConfig& hw);

  RequestId demand_load(std::uint32_t sm, Bytes addr, Bytes len,
                        EvictionPriority priority = EvictionPriority::kNormal);
  PrefetchOutcome prefetch_l2(Bytes addr, Bytes len, EvictionPriority priority);

  std::vector<Completion> advance(Cycle cycles);
  std::vector<Completion> advance_to(Cycle target);
  /// Advances until every transfer has drained and every completion has
  /// been delivered.
  std::vector<Completion> run_until_idle();

  /// Earliest cycle at which a not-yet-delivered completion can occur,
  /// assuming no new requests arrive before it.
  std::optional<Cycle> next_event() const;

  /// Completion cycle once known (it may still lie in the future).
  std::optional<Cycle> completion_of(RequestId id) const;

  Cycle clock() const { return clock_; }
  const MemCounters& counters() const { return counters_; }
  const HardwareConfig& hardware() const { return hw_; }
  std::size_t l2_resident_lines() const { return l2_.size(); }
  std::size_t l1_resident_lines(std::uint32_t sm) const { return l1_.at(sm).size(); }
  std::uint32_t inflight_prefetches() const { return inflight_prefetch_ops_; }
  std::size_t transfers_in_flight() const { return transfers_.size(); }
  std::optional<EvictionPriority> l2_priority_of(Bytes addr) const {
    return l2_.priority_of(addr / hw_.line_size);
  }

  void set_event_sink(std::function<void(const MemEvent&)> sink) { sink_ = std::move(sink); }

 private:
  struct Fill {
    Cycle base = 0;
    TransferId transfer = 0;  // 0: data already present (ready at base)
  };

  struct Transfer {
    LineAddr line = 0;
    Bytes remaining = 0;
    AccessKind queue = AccessKind::kDemand;
    AccessKind origin = AccessKind::kDemand;
    std::uint64_t prefetch_op = 0;
    std::vector<RequestId> waiters;
    std::vector<std::uint32_t> l1_sms;
  };

  struct PendingRequest {
    Cycle base = 0;
    std::uint32_t pending = 0;
  };

  TransferId start_transfer(LineAddr line, AccessKind origin, std::uint64_t prefetch_op);
  void promote(TransferId id);
  void process_link_to(Bytes target_scaled);
  void on_drained(TransferId id, Cycle drain_cycle);
  void settle_prefetch_op(std::uint64_t op);
  void finish_request(RequestId id, Cycle when);
  void emit(AccessKind kind, Level level, LineAddr line, bool hit);
  const Transfer* queue_head(AccessKind queue) const;

  HardwareConfig hw_;
  Cycle clock_ = 0;
  Bytes link_scaled_ = 0;  // link time already simulated, in units of 1/bw_hbm cycles

  std::vector<PriorityLruCache<Fill>> l1_;
  PriorityLruCache<Fill> l2_;

  std::unordered_map<TransferId, Transfer> transfers_;
  std::deque<TransferId> demand_queue_;
  std::deque<TransferId> prefetch_queue_;  // promoted ids are skipped lazily
  TransferId next_transfer_ = 1;

  std::unordered_map<std::uint64_t, std::uint32_t> prefetch_ops_;  // op -> queued fills
  std::uint64_t next_prefetch_op_ = 1;
  std::uint32_t inflight_prefetch_ops_ = 0;

  static constexpr Cycle kUnknown = ~Cycle{0};
  std::vector<Cycle> completion_;
  std::unordered_map<RequestId, PendingRequest> pending_requests_;
  std::priority_queue<std::pair<Cycle, RequestId>, std::vector<std::pair<Cycle, RequestId>>,
                      std::greater<>>
      ready_;

  MemCounters counters_;
  std::function<void(const MemEvent&)> sink_;
};

}  // namespace kvpsim
