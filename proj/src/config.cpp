#include "kvpsim/config.hpp"

#include <fmt/format.h>

#include <array>
#include <functional>
#include <map>

#include "json.hpp"

namespace kvpsim {
namespace {

using nlohmann::json;

// Bandwidths keep the L2:HBM ratio at 12 : 3.35. The absolute scale is chosen
// so that the default decode kernel is latency-bound rather than
// bandwidth-bound at desk-scale batch sizes.
constexpr Bytes kH20BwHbm = 8192;
constexpr Bytes kH20BwL2 = 29345;
constexpr Bytes kH100BwHbm = 6861;
constexpr Bytes kH100BwL2 = 24577;

[[noreturn]] void fail(const std::string& message) { throw ConfigError(message); }

void require_positive(std::uint64_t value, std::string_view field) {
  if (value == 0) fail(fmt::format("{}: must be strictly positive", field));
}

struct NamedModel {
  std::string_view name;
  std::uint32_t q_heads;
  std::uint32_t kv_heads;
};

constexpr std::array<NamedModel, 4> kModels{{
    {"llama2-7b", 32, 32},
    {"llama3-8b", 32, 8},
    {"qwen2.5-7b", 28, 4},
    {"qwen2.5-14b", 40, 8},
}};

HardwareConfig make_h20() {
  HardwareConfig hw;
  hw.l1_capacity = 256 * 1024;
  hw.l2_capacity = 60ull << 20;
  hw.line_size = 128;
  hw.lat_l1 = 32;
  hw.lat_l2 = 200;
  hw.lat_hbm = 600;
  hw.bw_hbm = kH20BwHbm;
  hw.bw_l2 = kH20BwL2;
  hw.sm_count = 78;
  hw.max_blocks_per_sm = 2;
  return hw;
}

HardwareConfig make_h100() {
  HardwareConfig hw = make_h20();
  hw.bw_hbm = kH100BwHbm;
  hw.bw_l2 = kH100BwL2;
  hw.sm_count = 132;
  return hw;
}

// Tiny L2 so capacity effects show up with a handful of sequences.
HardwareConfig make_custom_small() {
  HardwareConfig hw = make_h20();
  hw.l1_capacity = 32 * 1024;
  hw.l2_capacity = 256 * 1024;
  hw.bw_hbm = 2048;
  hw.bw_l2 = 7336;
  hw.sm_count = 16;
  hw.max_blocks_per_sm = 2;
  hw.prefetch_queue_depth = 1024;
  return hw;
}

// ---------------------------------------------------------------------------
// JSON field plumbing.
// ---------------------------------------------------------------------------

std::uint64_t get_uint(const json& value, std::string_view field) {
  if (!value.is_number_unsigned()) fail(fmt::format("{}: expected a non-negative integer", field));
  return value.get<std::uint64_t>();
}

std::uint32_t get_u32(const json& value, std::string_view field) {
  const std::uint64_t v = get_uint(value, field);
  if (v > 0xffffffffull) fail(fmt::format("{}: value out of range", field));
  return static_cast<std::uint32_t>(v);
}

std::string get_string(const json& value, std::string_view field) {
  if (!value.is_string()) fail(fmt::format("{}: expected a string", field));
  return value.get<std::string>();
}

bool get_bool(const json& value, std::string_view field) {
  if (!value.is_boolean()) fail(fmt::format("{}: expected true or false", field));
  return value.get<bool>();
}

const json& section_object(const json& doc, std::string_view name) {
  const json& section = doc.at(std::string(name));
  if (!section.is_object()) fail(fmt::format("{}: section must be an object", name));
  return section;
}

// Applies each key of `section` through `handlers`; anything else is an error.
template <typename Handlers>
void apply_keys(const json& section, std::string_view section_name, const Handlers& handlers) {
  for (const auto& [key, value] : section.items()) {
    if (key == "preset") continue;
    const auto it = handlers.find(key);
    if (it == handlers.end()) fail(fmt::format("unknown key \"{}.{}\"", section_name, key));
    it->second(value, fmt::format("{}.{}", section_name, key));
  }
}

using Handler = std::function<void(const json&, const std::string&)>;

ModelConfig model_from_json(const json& section) {
  ModelConfig model;
  const bool has_preset = section.contains("preset");
  if (has_preset) model = preset_model(get_string(section.at("preset"), "model.preset"));

  std::map<std::string, Handler, std::less<>> handlers{
      {"bytes_per_param", [&](const json& v, const std::string& f) { model.bytes_per_param = get_uint(v, f); }},
      {"head_dim", [&](const json& v, const std::string& f) { model.head_dim = get_u32(v, f); }},
      {"tokens_per_block", [&](const json& v, const std::string& f) { model.tokens_per_block = get_u32(v, f); }},
      {"threads_per_block", [&](const json& v, const std::string& f) { model.threads_per_block = get_u32(v, f); }},
      {"q_heads", [&](const json& v, const std::string& f) { model.q_heads = get_u32(v, f); }},
      {"kv_heads", [&](const json& v, const std::string& f) { model.kv_heads = get_u32(v, f); }},
  };
  if (!has_preset) {
    for (const auto& [key, _] : handlers) {
      if (!section.contains(key)) {
        fail(fmt::format("model.{}: required when no preset is given", key));
      }
    }
  }
  apply_keys(section, "model", handlers);
  return model;
}

HardwareConfig hardware_from_json(const json& section) {
  HardwareConfig hw = make_h20();
  if (section.contains("preset")) {
    hw = preset_hardware(get_string(section.at("preset"), "hardware.preset"));
  }
  std::map<std::string, Handler, std::less<>> handlers{
      {"l1_capacity", [&](const json& v, const std::string& f) { hw.l1_capacity = get_uint(v, f); }},
      {"l2_capacity", [&](const json& v, const std::string& f) { hw.l2_capacity = get_uint(v, f); }},
      {"line_size", [&](const json& v, const std::string& f) { hw.line_size = get_uint(v, f); }},
      {"lat_l1", [&](const json& v, const std::string& f) { hw.lat_l1 = get_uint(v, f); }},
      {"lat_l2", [&](const json& v, const std::string& f) { hw.lat_l2 = get_uint(v, f); }},
      {"lat_hbm", [&](const json& v, const std::string& f) { hw.lat_hbm = get_uint(v, f); }},
      {"bw_l2", [&](const json& v, const std::string& f) { hw.bw_l2 = get_uint(v, f); }},
      {"bw_hbm", [&](const json& v, const std::string& f) { hw.bw_hbm = get_uint(v, f); }},
      {"sm_count", [&](const json& v, const std::string& f) { hw.sm_count = get_u32(v, f); }},
      {"max_blocks_per_sm", [&](const json& v, const std::string& f) { hw.max_blocks_per_sm = get_u32(v, f); }},
      {"prefetch_queue_depth", [&](const json& v, const std::string& f) { hw.prefetch_queue_depth = get_u32(v, f); }},
      {"hbm_capacity", [&](const json& v, const std::string& f) { hw.hbm_capacity = get_uint(v, f); }},
  };
  apply_keys(section, "hardware", handlers);
  return hw;
}

WorkloadConfig workload_from_json(const json& section, const ModelConfig& model) {
  WorkloadConfig workload;
  std::optional<Cycle> qk;
  std::optional<Cycle> lv;
  std::map<std::string, Handler, std::less<>> handlers{
      {"batch", [&](const json& v, const std::string& f) { workload.batch = get_u32(v, f); }},
      {"seq_len", [&](const json& v, const std::string& f) { workload.seq_len = get_u32(v, f); }},
      {"compute_cycles_qk", [&](const json& v, const std::string& f) { qk = get_uint(v, f); }},
      {"compute_cycles_lv", [&](const json& v, const std::string& f) { lv = get_uint(v, f); }},
      {"allocation", [&](const json& v, const std::string& f) {
         workload.allocation = parse_allocation_policy(get_string(v, f));
       }},
      {"seed", [&](const json& v, const std::string& f) { workload.seed = get_uint(v, f); }},
  };
  apply_keys(section, "workload", handlers);
  if (section.contains("preset")) fail("unknown key \"workload.preset\"");
  workload.compute_cycles_qk = qk.value_or(default_compute_cycles(model));
  workload.compute_cycles_lv = lv.value_or(default_compute_cycles(model));
  return workload;
}

KernelVariant variant_from_json(const json& section) {
  KernelVariant variant;
  std::map<std::string, Handler, std::less<>> handlers{
      {"kernel", [&](const json& v, const std::string& f) { variant.kind = parse_kernel_kind(get_string(v, f)); }},
      {"eviction_priority", [&](const json& v, const std::string& f) {
         variant.eviction_priority = parse_eviction_priority(get_string(v, f));
       }},
      {"prefetch_at_load_issue", [&](const json& v, const std::string& f) {
         variant.prefetch_at_load_issue = get_bool(v, f);
       }},
  };
  apply_keys(section, "variant", handlers);
  if (section.contains("preset")) fail("unknown key \"variant.preset\"");
  return variant;
}

json parse_document(std::string_view text) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    fail(fmt::format("syntax error at byte {}: {}", e.byte, e.what()));
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq || dot == 0 || dot + 1 == eq) {
    fail(fmt::format("override \"{}\": expected section.key=value", assignment));
  }
  const std::string section = assignment.substr(0, dot);
  const std::string key = assignment.substr(dot + 1, eq - dot - 1);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = raw;
  if (!doc.contains(section)) doc[section] = json::object();
  if (!doc[section].is_object()) fail(fmt::format("{}: section must be an object", section));
  doc[section][key] = std::move(value);
}

}  // namespace

// ---------------------------------------------------------------------------

void validate(const ModelConfig& model) {
  require_positive(model.bytes_per_param, "model.bytes_per_param");
  require_positive(model.head_dim, "model.head_dim");
  require_positive(model.tokens_per_block, "model.tokens_per_block");
  require_positive(model.threads_per_block, "model.threads_per_block");
  require_positive(model.q_heads, "model.q_heads");
  require_positive(model.kv_heads, "model.kv_heads");
  if (model.threads_per_block % 32 != 0) {
    fail(fmt::format("model.threads_per_block: {} is not divisible by 32 (warp width)",
                     model.threads_per_block));
  }
  if (model.q_heads % model.kv_heads != 0) {
    fail(fmt::format("model.q_heads: {} is not divisible by kv_heads {}", model.q_heads,
                     model.kv_heads));
  }
}

void validate(const HardwareConfig& hw) {
  require_positive(hw.l1_capacity, "hardware.l1_capacity");
  require_positive(hw.l2_capacity, "hardware.l2_capacity");
  require_positive(hw.line_size, "hardware.line_size");
  require_positive(hw.lat_l1, "hardware.lat_l1");
  require_positive(hw.bw_l2, "hardware.bw_l2");
  require_positive(hw.bw_hbm, "hardware.bw_hbm");
  require_positive(hw.sm_count, "hardware.sm_count");
  require_positive(hw.max_blocks_per_sm, "hardware.max_blocks_per_sm");
  require_positive(hw.hbm_capacity, "hardware.hbm_capacity");
  if (!(hw.lat_l1 < hw.lat_l2 && hw.lat_l2 < hw.lat_hbm)) {
    fail("hardware.lat_l2: latencies must satisfy lat_l1 < lat_l2 < lat_hbm");
  }
  if (!(hw.bw_hbm < hw.bw_l2)) fail("hardware.bw_hbm: must be below bw_l2");
  if (hw.l1_capacity % hw.line_size != 0) {
    fail("hardware.l1_capacity: must be a multiple of line_size");
  }
  if (hw.l2_capacity % hw.line_size != 0) {
    fail("hardware.l2_capacity: must be a multiple of line_size");
  }
}

void validate(const WorkloadConfig& workload) {
  require_positive(workload.batch, "workload.batch");
  require_positive(workload.seq_len, "workload.seq_len");
  require_positive(workload.compute_cycles_qk, "workload.compute_cycles_qk");
  require_positive(workload.compute_cycles_lv, "workload.compute_cycles_lv");
}

void validate(const KernelVariant& variant, const HardwareConfig& hw) {
  if (variant.prefetches_k() && hw.prefetch_queue_depth == 0) {
    fail("variant.kernel: prefetch variants need hardware.prefetch_queue_depth >= 1");
  }
}

void validate(const Scenario& scenario) {
  validate(scenario.model);
  validate(scenario.hardware);
  validate(scenario.workload);
  validate(scenario.variant, scenario.hardware);
}

ModelConfig preset_model(std::string_view name) {
  for (const auto& entry : kModels) {
    if (entry.name == name) {
      ModelConfig model;
      model.bytes_per_param = 2;
      model.head_dim = 128;
      model.tokens_per_block = 16;
      model.threads_per_block = 128;
      model.q_heads = entry.q_heads;
      model.kv_heads = entry.kv_heads;
      return model;
    }
  }
  fail(fmt::format("unknown preset \"{}\" (model)", name));
}

HardwareConfig preset_hardware(std::string_view name) {
  if (name == "h20") return make_h20();
  if (name == "h100") return make_h100();
  if (name == "custom-small") return make_custom_small();
  fail(fmt::format("unknown preset \"{}\" (hardware)", name));
}

std::vector<std::string> model_preset_names() {
  std::vector<std::string> names;
  for (const auto& entry : kModels) names.emplace_back(entry.name);
  return names;
}

std::vector<std::string> hardware_preset_names() { return {"h20", "h100", "custom-small"}; }

Cycle default_compute_cycles(const ModelConfig& model) {
  const std::uint64_t flops = 2ull * model.head_dim * model.tokens_per_block;
  return (flops + 127) / 128;
}

std::string_view to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::kBaseline: return "baseline";
    case KernelKind::kPrefetchK: return "prefetch_k";
    case KernelKind::kPrefetchKV: return "prefetch_kv";
  }
  return "?";
}

std::string_view to_string(EvictionPriority priority) {
  return priority == EvictionPriority::kNormal ? "normal" : "evict_first";
}

std::string_view to_string(AllocationPolicy policy) {
  return policy == AllocationPolicy::kSequential ? "sequential" : "shuffled";
}

KernelKind parse_kernel_kind(std::string_view text) {
  if (text == "baseline") return KernelKind::kBaseline;
  if (text == "prefetch_k") return KernelKind::kPrefetchK;
  if (text == "prefetch_kv") return KernelKind::kPrefetchKV;
  fail(fmt::format("variant.kernel: unknown kernel variant \"{}\"", text));
}

EvictionPriority parse_eviction_priority(std::string_view text) {
  if (text == "normal") return EvictionPriority::kNormal;
  if (text == "evict_first") return EvictionPriority::kEvictFirst;
  fail(fmt::format("variant.eviction_priority: unknown priority \"{}\"", text));
}

AllocationPolicy parse_allocation_policy(std::string_view text) {
  if (text == "sequential") return AllocationPolicy::kSequential;
  if (text == "shuffled") return AllocationPolicy::kShuffled;
  fail(fmt::format("workload.allocation: unknown policy \"{}\"", text));
}

Scenario parse_scenario(std::string_view text) { return parse_scenario(text, {}); }

Scenario parse_scenario(std::string_view text, const std::vector<std::string>& overrides) {
  json doc = parse_document(text);
  if (doc.is_null()) doc = json::object();
  if (!doc.is_object()) fail("syntax error at byte 0: top level must be an object");
  for (const auto& assignment : overrides) apply_override(doc, assignment);

  for (const auto& [key, _] : doc.items()) {
    if (key != "model" && key != "hardware" && key != "workload" && key != "variant") {
      fail(fmt::format("unknown key \"{}\"", key));
    }
  }
  if (!doc.contains("model")) fail("missing required section \"model\"");

  Scenario scenario;
  scenario.model = model_from_json(section_object(doc, "model"));
  scenario.hardware =
      doc.contains("hardware") ? hardware_from_json(section_object(doc, "hardware")) : make_h20();
  validate(scenario.model);
  scenario.workload = workload_from_json(
      doc.contains("workload") ? section_object(doc, "workload") : json::object(), scenario.model);
  scenario.variant =
      variant_from_json(doc.contains("variant") ? section_object(doc, "variant") : json::object());
  validate(scenario);
  return scenario;
}

std::string render_scenario(const Scenario& s) {
  json doc;
  doc["model"] = {
      {"bytes_per_param", s.model.bytes_per_param},
      {"head_dim", s.model.head_dim},
      {"tokens_per_block", s.model.tokens_per_block},
      {"threads_per_block", s.model.threads_per_block},
      {"q_heads", s.model.q_heads},
      {"kv_heads", s.model.kv_heads},
  };
  doc["hardware"] = {
      {"l1_capacity", s.hardware.l1_capacity},
      {"l2_capacity", s.hardware.l2_capacity},
      {"line_size", s.hardware.line_size},
      {"lat_l1", s.hardware.lat_l1},
      {"lat_l2", s.hardware.lat_l2},
      {"lat_hbm", s.hardware.lat_hbm},
      {"bw_l2", s.hardware.bw_l2},
      {"bw_hbm", s.hardware.bw_hbm},
      {"sm_count", s.hardware.sm_count},
      {"max_blocks_per_sm", s.hardware.max_blocks_per_sm},
      {"prefetch_queue_depth", s.hardware.prefetch_queue_depth},
      {"hbm_capacity", s.hardware.hbm_capacity},
  };
  doc["workload"] = {
      {"batch", s.workload.batch},
      {"seq_len", s.workload.seq_len},
      {"compute_cycles_qk", s.workload.compute_cycles_qk},
      {"compute_cycles_lv", s.workload.compute_cycles_lv},
      {"allocation", std::string(to_string(s.workload.allocation))},
      {"seed", s.workload.seed},
  };
  doc["variant"] = {
      {"kernel", std::string(to_string(s.variant.kind))},
      {"eviction_priority", std::string(to_string(s.variant.eviction_priority))},
      {"prefetch_at_load_issue", s.variant.prefetch_at_load_issue},
  };
  return doc.dump(2);
}

}  // namespace kvpsim
