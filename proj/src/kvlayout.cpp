#include "kvpsim/kvlayout.hpp"

#include <fmt/format.h>

#include <numeric>
#include <random>

#include "json.hpp"

namespace kvpsim {
namespace {

// Unbiased draw in [0, bound) from the raw 64-bit engine output.
std::uint64_t draw_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % bound;
}

void fisher_yates(std::vector<Bytes>& slots, std::mt19937_64& rng) {
  for (std::size_t i = slots.size(); i > 1; --i) {
    const std::size_t j = draw_below(rng, i);
    std::swap(slots[i - 1], slots[j]);
  }
}

}  // namespace

Bytes block_footprint(const ModelConfig& model) {
  return model.bytes_per_param * model.head_dim * model.tokens_per_block;
}

Bytes per_iteration_footprint(const ModelConfig& model, std::uint64_t batch) {
  return block_footprint(model) * model.warps_per_block() * model.q_heads * batch;
}

Bytes per_iteration_distinct_footprint(const ModelConfig& model, std::uint64_t batch) {
  return block_footprint(model) * model.warps_per_block() * model.kv_heads * batch;
}

std::uint64_t l2_residency_bound(const ModelConfig& model, const HardwareConfig& hw) {
  return hw.l2_capacity / per_iteration_footprint(model, 1);
}

std::uint64_t blocks_per_sequence(std::uint64_t seq_len, std::uint64_t tokens_per_block) {
  return (seq_len + tokens_per_block - 1) / tokens_per_block;
}

std::uint32_t kv_head_for_q_head(std::uint32_t q_head, const ModelConfig& model) {
  return q_head / model.group_size();
}

CapacityReport capacity_report(const ModelConfig& model, const HardwareConfig& hw,
                               std::uint64_t batch) {
  CapacityReport r;
  r.m_block = block_footprint(model);
  r.m_total_per_batch = per_iteration_footprint(model, 1);
  r.m_total = r.m_total_per_batch * batch;
  r.residency_bound_batches = l2_residency_bound(model, hw);
  r.m_distinct_per_batch = per_iteration_distinct_footprint(model, 1);
  r.residency_bound_batches_distinct = hw.l2_capacity / r.m_distinct_per_batch;
  r.residency_bound_batches_kv = hw.l2_capacity / (2 * r.m_total_per_batch);
  return r;
}

std::string to_json(const CapacityReport& r) {
  nlohmann::ordered_json j;
  j["m_block_bytes"] = r.m_block;
  j["m_total_per_batch_bytes"] = r.m_total_per_batch;
  j["m_total_bytes"] = r.m_total;
  j["residency_bound_batches"] = r.residency_bound_batches;
  j["m_distinct_per_batch_bytes"] = r.m_distinct_per_batch;
  j["residency_bound_batches_distinct"] = r.residency_bound_batches_distinct;
  j["residency_bound_batches_kv"] = r.residency_bound_batches_kv;
  return j.dump(2);
}

BlockTable::BlockTable(std::uint32_t sequences, std::uint32_t kv_heads,
                       std::uint64_t blocks_per_seq, Bytes block_bytes,
                       std::vector<Bytes> addresses)
    : sequences_(sequences),
      kv_heads_(kv_heads),
      blocks_per_seq_(blocks_per_seq),
      block_bytes_(block_bytes),
      addresses_(std::move(addresses)) {}

KvBlockTables build_block_tables(const ModelConfig& model, const WorkloadConfig& workload,
                                 const HardwareConfig& hw) {
  const Bytes block_bytes = block_footprint(model);
  const Bytes stride = (block_bytes + hw.line_size - 1) / hw.line_size * hw.line_size;
  const std::uint64_t per_seq = blocks_per_sequence(workload.seq_len, model.tokens_per_block);
  const std::uint64_t count = per_seq * model.kv_heads * workload.batch;

  const Bytes region = count * stride;
  if (count != 0 && (region / count != stride || 2 * region > hw.hbm_capacity)) {
    throw ConfigError(fmt::format(
        "hardware.hbm_capacity: {} K+V blocks of {} bytes exceed the simulated HBM size of {} bytes",
        2 * count, stride, hw.hbm_capacity));
  }

  auto make_region = [&](Bytes base, std::uint64_t stream) {
    std::vector<Bytes> slots(count);
    for (std::uint64_t i = 0; i < count; ++i) slots[i] = base + i * stride;
    if (workload.allocation == AllocationPolicy::kShuffled) {
      std::mt19937_64 rng(workload.seed * 2 + stream);
      fisher_yates(slots, rng);
    }
    return BlockTable(workload.batch, model.kv_heads, per_seq, block_bytes, std::move(slots));
  };
  return {make_region(0, 0), make_region(region, 1)};
}

}  // namespace kvpsim
