#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kvpsim/config.hpp"

namespace kvpsim {

/// Bytes of one KV block: bytes_per_param * head_dim * tokens_per_block.
Bytes block_footprint(const ModelConfig& model);

/// Bytes of the blocks touched by one iteration of the whole grid:
/// M_block * warps_per_block * q_heads * batch. Each (q_head, sequence)
/// thread block requests its own blocks, so this is the demand-request view.
Bytes per_iteration_footprint(const ModelConfig& model, std::uint64_t batch);

/// Distinct bytes per iteration once GQA sharing is taken into account
/// (kv_heads instead of q_heads). Equals per_iteration_footprint under MHA.
Bytes per_iteration_distinct_footprint(const ModelConfig& model, std::uint64_t batch);

/// floor(l2_capacity / per_iteration_footprint(model, 1)).
std::uint64_t l2_residency_bound(const ModelConfig& model, const HardwareConfig& hw);

std::uint64_t blocks_per_sequence(std::uint64_t seq_len, std::uint64_t tokens_per_block);

std::uint32_t kv_head_for_q_head(std::uint32_t q_head, const ModelConfig& model);

struct CapacityReport {
  Bytes m_block = 0;
  Bytes m_total_per_batch = 0;
  Bytes m_total = 0;
  std::uint64_t residency_bound_batches = 0;
  // GQA view: bytes actually distinct per iteration, and the bound it implies.
  Bytes m_distinct_per_batch = 0;
  std::uint64_t residency_bound_batches_distinct = 0;
  // Both the K and the V blocks of an iteration held at once.
  std::uint64_t residency_bound_batches_kv = 0;
};

CapacityReport capacity_report(const ModelConfig& model, const HardwareConfig& hw,
                               std::uint64_t batch);

/// JSON object with keys m_block_bytes, m_total_per_batch_bytes,
/// m_total_bytes, residency_bound_batches (plus the GQA / K+V extras).
std::string to_json(const CapacityReport& report);

/// Physical addresses of the K (or V) blocks of every (sequence, kv_head)
/// pair, indexed by block ordinal.
class BlockTable {
 public:
  BlockTable() = default;
  BlockTable(std::uint32_t sequences, std::uint32_t kv_heads, std::uint64_t blocks_per_seq,
             Bytes block_bytes, std::vector<Bytes> addresses);

  Bytes at(std::uint32_t sequence, std::uint32_t kv_head, std::uint64_t ordinal) const {
    return addresses_[(static_cast<std::uint64_t>(sequence) * kv_heads_ + kv_head) *
                          blocks_per_seq_ +
                      ordinal];
  }

  std::uint32_t sequences() const { return sequences_; }
  std::uint32_t kv_heads() const { return kv_heads_; }
  std::uint64_t blocks_per_sequence() const { return blocks_per_seq_; }
  Bytes block_bytes() const { return block_bytes_; }
  std::size_t size() const { return addresses_.size(); }
  const std::vector<Bytes>& addresses() const { return addresses_; }

 private:
  std::uint32_t sequences_ = 0;
  std::uint32_t kv_heads_ = 0;
  std::uint64_t blocks_per_seq_ = 0;
  Bytes block_bytes_ = 0;
  std::vector<Bytes> addresses_;
};

struct KvBlockTables {
  BlockTable k;
  BlockTable v;
};

/// K blocks occupy the low half of the used address range and V blocks the
/// high half; slots are line-aligned and spaced by the block size rounded up
/// to a whole line. The shuffled policy permutes slots within each region
/// from the workload seed. Throws ConfigError when the tables do not fit in
/// hw.hbm_capacity.
KvBlockTables build_block_tables(const ModelConfig& model, const WorkloadConfig& workload,
                                 const HardwareConfig& hw);

}  // namespace kvpsim
