#include "kvpsim/memsim.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cassert>

namespace kvpsim {

std::string_view to_string(AccessKind kind) {
  return kind == AccessKind::kDemand ? "demand_load" : "prefetch_l2";
}

std::string_view to_string(Level level) {
  switch (level) {
    case Level::kL1: return "l1";
    case Level::kL2: return "l2";
    case Level::kHbm: return "hbm";
  }
  return "?";
}

std::string to_json_line(const MemEvent& e) {
  return fmt::format(R"({{"cycle":{},"kind":"{}","level":"{}","addr":{},"len":{},"hit":{}}})",
                     e.cycle, to_string(e.kind), to_string(e.level), e.addr, e.len,
                     e.hit ? "true" : "false");
}

MemoryHierarchy::MemoryHierarchy(const HardwareConfig& hw)
    : hw_(hw), l2_(hw.l2_capacity / hw.line_size) {
  l1_.reserve(hw.sm_count);
  for (std::uint32_t i = 0; i < hw.sm_count; ++i) l1_.emplace_back(hw.l1_capacity / hw.line_size);
}

void MemoryHierarchy::emit(AccessKind kind, Level level, LineAddr line, bool hit) {
  if (sink_) sink_(MemEvent{clock_, kind, level, line * hw_.line_size, hw_.line_size, hit});
}

TransferId MemoryHierarchy::start_transfer(LineAddr line, AccessKind origin,
                                           std::uint64_t prefetch_op) {
  const TransferId id = next_transfer_++;
  Transfer& t = transfers_[id];
  t.line = line;
  t.remaining = hw_.line_size;
  t.queue = origin;
  t.origin = origin;
  t.prefetch_op = prefetch_op;
  (origin == AccessKind::kDemand ? demand_queue_ : prefetch_queue_).push_back(id);
  emit(origin, Level::kHbm, line, false);
  return id;
}

void MemoryHierarchy::settle_prefetch_op(std::uint64_t op) {
  auto it = prefetch_ops_.find(op);
  assert(it != prefetch_ops_.end());
  if (--it->second == 0) {
    prefetch_ops_.erase(it);
    --inflight_prefetch_ops_;
  }
}

void MemoryHierarchy::promote(TransferId id) {
  Transfer& t = transfers_.at(id);
  if (t.queue == AccessKind::kDemand) return;
  t.queue = AccessKind::kDemand;
  demand_queue_.push_back(id);
  ++counters_.promoted_prefetch_fills;
  if (t.prefetch_op != 0) {
    settle_prefetch_op(t.prefetch_op);
    t.prefetch_op = 0;
  }
}

void MemoryHierarchy::finish_request(RequestId id, Cycle when) {
  completion_[id] = when;
  ready_.emplace(when, id);
}

RequestId MemoryHierarchy::demand_load(std::uint32_t sm, Bytes addr, Bytes len,
                                       EvictionPriority priority) {
  assert(len > 0 && sm < l1_.size());
  const RequestId id = completion_.size();
  completion_.push_back(kUnknown);
  PendingRequest request{clock_, 0};

  auto& l1 = l1_[sm];
  const LineAddr first = addr / hw_.line_size;
  const LineAddr last = (addr + len - 1) / hw_.line_size;
  for (LineAddr line = first; line <= last; ++line) {
    Fill wait;
    ++counters_.l1_demand.probes;
    counters_.l1_bytes_demand += hw_.line_size;
    if (Fill* hit = l1.find(line)) {
      ++counters_.l1_demand.hits;
      emit(AccessKind::kDemand, Level::kL1, line, true);
      wait = Fill{std::max(clock_ + hw_.lat_l1, hit->base), hit->transfer};
      l1.touch(line, EvictionPriority::kNormal);
    } else {
      emit(AccessKind::kDemand, Level::kL1, line, false);
      ++counters_.l2_demand.probes;
      counters_.l2_bytes_demand += hw_.line_size;
      if (Fill* l2hit = l2_.find(line)) {
        ++counters_.l2_demand.hits;
        emit(AccessKind::kDemand, Level::kL2, line, true);
        if (l2hit->transfer != 0) promote(l2hit->transfer);
        wait = Fill{std::max(clock_ + hw_.lat_l2, l2hit->base), l2hit->transfer};
        l2_.touch(line, priority);
      } else {
        emit(AccessKind::kDemand, Level::kL2, line, false);
        const TransferId t = start_transfer(line, AccessKind::kDemand, 0);
        wait = Fill{0, t};
        l2_.insert(line, priority, wait);
      }
      l1.insert(line, EvictionPriority::kNormal, wait);
      if (wait.transfer != 0) transfers_.at(wait.transfer).l1_sms.push_back(sm);
    }
    request.base = std::max(request.base, wait.base);
    if (wait.transfer != 0) {
      transfers_.at(wait.transfer).waiters.push_back(id);
      ++request.pending;
    }
  }

  if (request.pending == 0) {
    finish_request(id, request.base);
  } else {
    pending_requests_.emplace(id, request);
  }
  return id;
}

PrefetchOutcome MemoryHierarchy::prefetch_l2(Bytes addr, Bytes len, EvictionPriority priority) {
  assert(len > 0);
  if (inflight_prefetch_ops_ >= hw_.prefetch_queue_depth) {
    ++counters_.dropped_prefetches;
    return PrefetchOutcome::kDropped;
  }
  ++counters_.prefetches_issued;
  const std::uint64_t op = next_prefetch_op_++;
  std::uint32_t queued = 0;
  const LineAddr first = addr / hw_.line_size;
  const LineAddr last = (addr + len - 1) / hw_.line_size;
  for (LineAddr line = first; line <= last; ++line) {
    ++counters_.l2_prefetch.probes;
    if (l2_.contains(line)) {
      ++counters_.l2_prefetch.hits;
      emit(AccessKind::kPrefetch, Level::kL2, line, true);
      l2_.touch(line, priority);
    } else {
      emit(AccessKind::kPrefetch, Level::kL2, line, false);
      const TransferId t = start_transfer(line, AccessKind::kPrefetch, op);
      ++counters_.prefetch_fills;
      l2_.insert(line, priority, Fill{0, t});
      ++queued;
    }
  }
  if (queued == 0) return PrefetchOutcome::kAllResident;
  prefetch_ops_.emplace(op, queued);
  ++inflight_prefetch_ops_;
  return PrefetchOutcome::kIssued;
}

const MemoryHierarchy::Transfer* MemoryHierarchy::queue_head(AccessKind queue) const {
  const auto& q = queue == AccessKind::kDemand ? demand_queue_ : prefetch_queue_;
  for (TransferId id : q) {
    auto it = transfers_.find(id);
    if (it != transfers_.end() && it->second.queue == queue) return &it->second;
  }
  return nullptr;
}

void MemoryHierarchy::process_link_to(Bytes target_scaled) {
  while (link_scaled_ < target_scaled) {
    // Promoted entries (possibly already drained) are skipped lazily.
    while (!prefetch_queue_.empty()) {
      auto it = transfers_.find(prefetch_queue_.front());
      if (it != transfers_.end() && it->second.queue == AccessKind::kPrefetch) break;
      prefetch_queue_.pop_front();
    }
    std::deque<TransferId>* queue = nullptr;
    if (!demand_queue_.empty()) {
      queue = &demand_queue_;
    } else if (!prefetch_queue_.empty()) {
      queue = &prefetch_queue_;
    } else {
      link_scaled_ = target_scaled;
      break;
    }
    const TransferId id = queue->front();
    Transfer& t = transfers_.at(id);
    const Bytes budget = target_scaled - link_scaled_;
    if (t.remaining > budget) {
      t.remaining -= budget;
      link_scaled_ = target_scaled;
      break;
    }
    link_scaled_ += t.remaining;
    t.remaining = 0;
    queue->pop_front();
    on_drained(id, link_scaled_ / hw_.bw_hbm);
  }
}

void MemoryHierarchy::on_drained(TransferId id, Cycle drain_cycle) {
  auto node = transfers_.extract(id);
  Transfer& t = node.mapped();
  const Cycle ready = drain_cycle + hw_.lat_hbm;
  if (t.origin == AccessKind::kDemand) {
    counters_.hbm_bytes_demand += hw_.line_size;
  } else {
    counters_.hbm_bytes_prefetch += hw_.line_size;
  }
  if (t.prefetch_op != 0) settle_prefetch_op(t.prefetch_op);

  auto settle = [&](Fill* fill) {
    if (fill != nullptr && fill->transfer == id) {
      fill->base = std::max(fill->base, ready);
      fill->transfer = 0;
    }
  };
  settle(l2_.find(t.line));
  for (std::uint32_t sm : t.l1_sms) settle(l1_[sm].find(t.line));

  for (RequestId rid : t.waiters) {
    auto it = pending_requests_.find(rid);
    PendingRequest& r = it->second;
    r.base = std::max(r.base, ready);
    if (--r.pending == 0) {
      finish_request(rid, r.base);
      pending_requests_.erase(it);
    }
  }
}

std::vector<Completion> MemoryHierarchy::advance(Cycle cycles) { return advance_to(clock_ + cycles); }

std::vector<Completion> MemoryHierarchy::advance_to(Cycle target) {
  assert(target >= clock_);
  process_link_to(target * hw_.bw_hbm);
  clock_ = target;
  std::vector<Completion> done;
  while (!ready_.empty() && ready_.top().first <= clock_) {
    done.push_back(Completion{ready_.top().second, ready_.top().first});
    ready_.pop();
  }
  return done;
}

std::vector<Completion> MemoryHierarchy::run_until_idle() {
  std::vector<Completion> all;
  while (!transfers_.empty() || !ready_.empty()) {
    Bytes queued = 0;
    for (const auto& [_, t] : transfers_) queued += t.remaining;
    Cycle target = (link_scaled_ + queued) / hw_.bw_hbm + hw_.lat_hbm;
    if (!ready_.empty()) target = std::max(target, ready_.top().first);
    // Completions already heaped may exceed the estimate; loop until drained.
    auto batch = advance_to(std::max(target, clock_ + 1));
    all.insert(all.end(), batch.begin(), batch.end());
  }
  return all;
}

std::optional<Cycle> MemoryHierarchy::next_event() const {
  std::optional<Cycle> next;
  if (!ready_.empty()) next = ready_.top().first;
  if (const Transfer* head = queue_head(AccessKind::kDemand)) {
    const Cycle when = (link_scaled_ + head->remaining) / hw_.bw_hbm + hw_.lat_hbm;
    next = next ? std::min(*next, when) : when;
  }
  return next;
}

std::optional<Cycle> MemoryHierarchy::completion_of(RequestId id) const {
  if (id >= completion_.size() || completion_[id] == kUnknown) return std::nullopt;
  return completion_[id];
}

}  // namespace kvpsim
