#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ilsim/history.hpp"
#include "ilsim/trace.hpp"

namespace ilsim {

struct OpClassTiming {
  uint32_t latency = 1;  // cycles in the functional unit (pipelined)
  uint32_t units = 1;    // issue slots per cycle for this class
};

struct ProcessorConfig {
  uint32_t fetch_width = 3;
  uint32_t issue_width = 8;
  uint32_t commit_width = 8;
  uint32_t rob_entries = 40;
  uint32_t iq_entries = 32;
  uint32_t lq_entries = 16;
  uint32_t sq_entries = 16;
  uint32_t frontend_depth = 3;  // refetch delay after a mispredicted branch
  uint64_t deadlock_cycles = 1u << 20;
  std::array<OpClassTiming, kOpClassCount> op_timing = default_op_timing();
  HistoryConfig history;

  static std::array<OpClassTiming, kOpClassCount> default_op_timing();
  void validate_or_throw() const;
};

ProcessorConfig parse_processor_config(const std::string& json_text);
ProcessorConfig load_processor_config(const std::string& path);
std::string processor_config_to_json(const ProcessorConfig& cfg);
uint64_t hash_processor_config(const ProcessorConfig& cfg);

struct DesStats {
  uint64_t branches = 0, mispredicts = 0;
  std::array<uint64_t, 4> fetch_level_count{};  // index 1..3
  std::array<uint64_t, 4> data_level_count{};
  uint64_t loads = 0, stores = 0;
  uint64_t fetch_stall_struct = 0;  // cycles fetch was blocked on a full structure

  double mispredict_rate() const {
    return branches ? static_cast<double>(mispredicts) / static_cast<double>(branches) : 0.0;
  }
};

struct DesResult {
  std::vector<AnnotatedInstruction> trace;
  uint64_t total_cycles = 0;
  double cpi = 0.0;
  DesStats stats;
};

// Cycle-stepped out-of-order model; emits ground-truth latency labels.
DesResult des_simulate(std::span<const StaticInstruction> program, const ProcessorConfig& config);

// Time-decomposition helper: (sum of fetch latencies, drain tail).
// total_cycles == sum_fetch + delta holds exactly on every run.
std::pair<uint64_t, uint64_t> total_time_identity(const DesResult& result);

}  // namespace ilsim
