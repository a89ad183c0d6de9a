#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace kvpsim {

using Bytes = std::uint64_t;
using Cycle = std::uint64_t;

// Thrown for every user-facing configuration problem: syntax errors, unknown
// keys or presets, and invariant violations. The CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Attention / paged KV layout hyperparameters.
struct ModelConfig {
  Bytes bytes_per_param = 2;
  std::uint32_t head_dim = 128;
  std::uint32_t tokens_per_block = 16;
  std::uint32_t threads_per_block = 128;
  std::uint32_t q_heads = 32;
  std::uint32_t kv_heads = 32;

  std::uint32_t warps_per_block() const { return threads_per_block / 32; }
  std::uint32_t group_size() const { return q_heads / kv_heads; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct HardwareConfig {
  Bytes l1_capacity = 256 * 1024;       // per SM
  Bytes l2_capacity = 60ull << 20;      // shared
  Bytes line_size = 128;
  Cycle lat_l1 = 32;
  Cycle lat_l2 = 200;
  Cycle lat_hbm = 600;
  Bytes bw_l2 = 29345;                  // bytes per cycle
  Bytes bw_hbm = 8192;                  // bytes per cycle
  std::uint32_t sm_count = 78;
  std::uint32_t max_blocks_per_sm = 2;
  std::uint32_t prefetch_queue_depth = 4096;
  Bytes hbm_capacity = 4ull << 30;      // simulated address space

  friend bool operator==(const HardwareConfig&, const HardwareConfig&) = default;
};

enum class AllocationPolicy { kSequential, kShuffled };

struct WorkloadConfig {
  std::uint32_t batch = 1;
  std::uint32_t seq_len = 4096;
  Cycle compute_cycles_qk = 0;
  Cycle compute_cycles_lv = 0;
  AllocationPolicy allocation = AllocationPolicy::kSequential;
  std::uint64_t seed = 0;

  friend bool operator==(const WorkloadConfig&, const WorkloadConfig&) = default;
};

enum class KernelKind { kBaseline, kPrefetchK, kPrefetchKV };
enum class EvictionPriority { kNormal, kEvictFirst };

struct KernelVariant {
  KernelKind kind = KernelKind::kBaseline;
  EvictionPriority eviction_priority = EvictionPriority::kNormal;
  // Issue the next-block prefetch together with the current load instead of
  // at compute-phase entry.
  bool prefetch_at_load_issue = false;

  bool prefetches_k() const { return kind != KernelKind::kBaseline; }
  bool prefetches_v() const { return kind == KernelKind::kPrefetchKV; }

  friend bool operator==(const KernelVariant&, const KernelVariant&) = default;
};

struct Scenario {
  ModelConfig model;
  HardwareConfig hardware;
  WorkloadConfig workload;
  KernelVariant variant;

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

/// Throws ConfigError naming the offending field and rule.
void validate(const ModelConfig& model);
void validate(const HardwareConfig& hw);
void validate(const WorkloadConfig& workload);
void validate(const KernelVariant& variant, const HardwareConfig& hw);
void validate(const Scenario& scenario);

ModelConfig preset_model(std::string_view name);
HardwareConfig preset_hardware(std::string_view name);
std::vector<std::string> model_preset_names();
std::vector<std::string> hardware_preset_names();

/// FLOP-proportional default: ceil(2 * head_dim * tokens_per_block / 128).
Cycle default_compute_cycles(const ModelConfig& model);

std::string_view to_string(KernelKind kind);
std::string_view to_string(EvictionPriority priority);
std::string_view to_string(AllocationPolicy policy);
KernelKind parse_kernel_kind(std::string_view text);
EvictionPriority parse_eviction_priority(std::string_view text);
AllocationPolicy parse_allocation_policy(std::string_view text);

/// Parses a scenario JSON document. A section may name a "preset" and
/// override individual fields; omitted workload compute costs are derived
/// from the model. The result is validated.
Scenario parse_scenario(std::string_view text);

/// `overrides` are "section.key=value" strings applied on top of the document
/// before defaults and validation.
Scenario parse_scenario(std::string_view text,
                        const std::vector<std::string>& overrides);

/// Fully explicit JSON (no presets); parse_scenario(render_scenario(s)) == s.
std::string render_scenario(const Scenario& scenario);

}  // namespace kvpsim
