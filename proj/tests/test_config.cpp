#include <random>

#include "doctest.h"
#include "kvpsim/config.hpp"

using namespace kvpsim;

namespace {

std::string error_of(const std::string& text, const std::vector<std::string>& overrides = {}) {
  try {
    parse_scenario(text, overrides);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("llama2-7b preset document") {
  const Scenario s = parse_scenario(R"({"model": {"preset": "llama2-7b"}, "workload": {"batch": 1}})");
  CHECK(s.model.bytes_per_param == 2);
  CHECK(s.model.head_dim == 128);
  CHECK(s.model.tokens_per_block == 16);
  CHECK(s.model.threads_per_block == 128);
  CHECK(s.model.q_heads == 32);
  CHECK(s.model.kv_heads == 32);
  CHECK(s.workload.batch == 1);
  CHECK(s.hardware == preset_hardware("h20"));
  CHECK(s.workload.compute_cycles_qk == default_compute_cycles(s.model));
  CHECK(s.workload.compute_cycles_qk == 32);
}

TEST_CASE("empty document names the missing section") {
  CHECK(contains(error_of("{}"), "missing required section \"model\""));
}

TEST_CASE("threads_per_block must be a warp multiple") {
  const std::string e = error_of(R"({"model": {"preset": "llama2-7b", "threads_per_block": 100}})");
  CHECK(contains(e, "not divisible by 32"));
  CHECK(contains(e, "threads_per_block"));
}

TEST_CASE("other invalid documents") {
  CHECK(contains(error_of(R"({"model": {"preset": "llama2-7b"}, "extra": {}})"), "unknown key"));
  CHECK(contains(error_of(R"({"model": {"preset": "llama2-7b", "colour": 1}})"), "unknown key \"model.colour\""));
  CHECK(contains(error_of(R"({"model": {"preset": "nosuch"}})"), "unknown preset"));
  CHECK(contains(error_of(R"({"model": )"), "syntax error"));
  CHECK(contains(error_of(R"({"model": {"preset": "llama2-7b", "kv_heads": 5}})"), "q_heads"));
  CHECK(contains(error_of(R"({"model": {"preset": "llama2-7b"}, "workload": {"batch": 0}})"),
                 "workload.batch"));
  CHECK(contains(error_of(R"({"model": {"preset": "llama2-7b"}, "workload": {"batch": -1}})"),
                 "workload.batch"));
  CHECK(contains(error_of(R"({"model": {"preset": "llama2-7b"}, "hardware": {"lat_l2": 900}})"),
                 "lat_l1 < lat_l2 < lat_hbm"));
  CHECK(contains(error_of(R"({"model": {"preset": "llama2-7b"}, "hardware": {"bw_hbm": 40000}})"),
                 "bw_hbm"));
  CHECK(contains(error_of(R"({"model": {"preset": "llama2-7b"}, "hardware": {"l2_capacity": 1000}})"),
                 "multiple of line_size"));
  CHECK(contains(error_of(R"({"model": {"head_dim": 64}})"), "required when no preset"));
  CHECK(contains(error_of(R"({"model": {"preset": "llama2-7b"}, "variant": {"kernel": "warp9"}})"),
                 "unknown kernel variant"));
}

TEST_CASE("GQA model presets") {
  CHECK(preset_model("llama3-8b").q_heads == 32);
  CHECK(preset_model("llama3-8b").kv_heads == 8);
  CHECK(preset_model("qwen2.5-7b").q_heads == 28);
  CHECK(preset_model("qwen2.5-7b").kv_heads == 4);
  CHECK(preset_model("qwen2.5-14b").q_heads == 40);
  CHECK(preset_model("qwen2.5-14b").kv_heads == 8);
}

TEST_CASE("hardware preset L2 sizes") {
  CHECK(preset_hardware("h20").l2_capacity == 62914560);
  CHECK(preset_hardware("h100").l2_capacity == 62914560);
  CHECK(preset_hardware("custom-small").l2_capacity == 262144);
  const HardwareConfig h20 = preset_hardware("h20");
  CHECK(h20.lat_l1 == 32);
  CHECK(h20.lat_l2 == 200);
  CHECK(h20.lat_hbm == 600);
  CHECK(h20.sm_count == 78);
  CHECK(h20.max_blocks_per_sm == 2);
  // Tier ratio 12 : 3.35 within rounding.
  CHECK(static_cast<double>(h20.bw_l2) / static_cast<double>(h20.bw_hbm) ==
        doctest::Approx(12.0 / 3.35).epsilon(1e-3));
}

TEST_CASE("every preset satisfies its invariants") {
  for (const auto& m : model_preset_names()) CHECK_NOTHROW(validate(preset_model(m)));
  for (const auto& h : hardware_preset_names()) CHECK_NOTHROW(validate(preset_hardware(h)));
  CHECK(model_preset_names().size() == 4);
}

TEST_CASE("overrides apply after the document") {
  const Scenario s = parse_scenario(R"({"model": {"preset": "llama2-7b"}, "workload": {"batch": 3}})",
                                    {"workload.batch=5", "variant.kernel=prefetch_kv",
                                     "hardware.preset=\"custom-small\"", "model.q_heads=8",
                                     "model.kv_heads=2"});
  CHECK(s.workload.batch == 5);
  CHECK(s.variant.kind == KernelKind::kPrefetchKV);
  CHECK(s.hardware.l2_capacity == 262144);
  CHECK(s.model.group_size() == 4);
  CHECK(contains(error_of(R"({"model": {"preset": "llama2-7b"}})", {"batch=5"}), "section.key=value"));
  CHECK(contains(error_of(R"({"model": {"preset": "llama2-7b"}})", {"workload.nope=1"}), "unknown key"));
}

TEST_CASE("render then parse round-trips random valid scenarios") {
  std::mt19937_64 rng(42);
  auto pick = [&](std::uint64_t lo, std::uint64_t hi) {
    return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng);
  };
  for (int i = 0; i < 500; ++i) {
    Scenario s;
    s.model.bytes_per_param = pick(1, 4);
    s.model.head_dim = static_cast<std::uint32_t>(pick(1, 256));
    s.model.tokens_per_block = static_cast<std::uint32_t>(pick(1, 64));
    s.model.threads_per_block = static_cast<std::uint32_t>(32 * pick(1, 8));
    s.model.kv_heads = static_cast<std::uint32_t>(pick(1, 16));
    s.model.q_heads = s.model.kv_heads * static_cast<std::uint32_t>(pick(1, 8));
    s.hardware.line_size = pick(1, 4) * 32;
    s.hardware.l1_capacity = s.hardware.line_size * pick(1, 4096);
    s.hardware.l2_capacity = s.hardware.line_size * pick(1, 1 << 20);
    s.hardware.lat_l1 = pick(1, 50);
    s.hardware.lat_l2 = s.hardware.lat_l1 + pick(1, 500);
    s.hardware.lat_hbm = s.hardware.lat_l2 + pick(1, 2000);
    s.hardware.bw_hbm = pick(1, 10000);
    s.hardware.bw_l2 = s.hardware.bw_hbm + pick(1, 30000);
    s.hardware.sm_count = static_cast<std::uint32_t>(pick(1, 200));
    s.hardware.max_blocks_per_sm = static_cast<std::uint32_t>(pick(1, 16));
    s.hardware.prefetch_queue_depth = static_cast<std::uint32_t>(pick(1, 10000));
    s.hardware.hbm_capacity = pick(1, 1ull << 40);
    s.workload.batch = static_cast<std::uint32_t>(pick(1, 1024));
    s.workload.seq_len = static_cast<std::uint32_t>(pick(1, 1 << 17));
    s.workload.compute_cycles_qk = pick(1, 1000);
    s.workload.compute_cycles_lv = pick(1, 1000);
    s.workload.allocation = pick(0, 1) ? AllocationPolicy::kShuffled : AllocationPolicy::kSequential;
    s.workload.seed = rng();
    s.variant.kind = static_cast<KernelKind>(pick(0, 2));
    s.variant.eviction_priority = static_cast<EvictionPriority>(pick(0, 1));
    s.variant.prefetch_at_load_issue = pick(0, 1) == 1;
    REQUIRE_NOTHROW(validate(s));
    CHECK(parse_scenario(render_scenario(s)) == s);
  }
}

TEST_CASE("enum spellings round-trip") {
  for (auto k : {KernelKind::kBaseline, KernelKind::kPrefetchK, KernelKind::kPrefetchKV}) {
    CHECK(parse_kernel_kind(to_string(k)) == k);
  }
  for (auto p : {EvictionPriority::kNormal, EvictionPriority::kEvictFirst}) {
    CHECK(parse_eviction_priority(to_string(p)) == p);
  }
  for (auto a : {AllocationPolicy::kSequential, AllocationPolicy::kShuffled}) {
    CHECK(parse_allocation_policy(to_string(a)) == a);
  }
}
