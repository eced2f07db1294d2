#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ilsim/trace.hpp"

namespace ilsim {

enum class WorkloadKind { kMix, kLoopKernel, kPointerChase, kBranchy, kStreaming };

const char* to_string(WorkloadKind k);
WorkloadKind workload_kind_from_string(const std::string& s);

struct WorkloadSpec {
  WorkloadKind kind = WorkloadKind::kMix;
  uint64_t instruction_count = 1000;
  uint64_t seed = 1;
  uint64_t memory_footprint_bytes = 1 << 20;
  double branch_taken_bias = 0.6;
  double dependency_density = 0.35;
  // Weight per OpClass code; normalized internally. All-zero is invalid.
  std::array<double, kOpClassCount> op_class_mix = default_mix(WorkloadKind::kMix);

  static std::array<double, kOpClassCount> default_mix(WorkloadKind kind);
  void validate_or_throw() const;
};

WorkloadSpec parse_workload_spec(const std::string& json_text);
WorkloadSpec load_workload_spec(const std::string& path);

std::vector<StaticInstruction> generate(const WorkloadSpec& spec);

}  // namespace ilsim
