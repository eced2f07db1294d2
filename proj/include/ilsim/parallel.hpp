#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ilsim/simcore.hpp"

namespace ilsim {

struct PartitionPlan {
  uint64_t sub_trace_count = 1;
  std::vector<uint64_t> starts;  // one per sub-trace; contiguous, covering
  uint64_t trace_length = 0;

  uint64_t size_of(uint64_t i) const {
    return (i + 1 < starts.size() ? starts[i + 1] : trace_length) - starts[i];
  }
};

// Equally sized contiguous sub-traces; earlier sub-traces take the remainder.
PartitionPlan partition(uint64_t trace_length, uint64_t k);

struct ParallelConfig {
  uint64_t k = 1;              // number of sub-traces (0 = derive from subtrace_size)
  uint64_t subtrace_size = 0;  // 0 = derive from k; both set must be consistent
  size_t batch_max = 4096;     // max model inputs per predictor call
  SimConfig sim;
};

struct ParallelResult {
  std::vector<SimResult> sub_results;
  uint64_t total_cycles = 0;  // sum of per-sub-trace curTicks
  uint64_t instructions = 0;
  double cpi = 0.0;
  // Predicted fetch latencies in trace order (when sim.record_fetch).
  std::vector<uint32_t> predicted_fetch;
};

// Round-synchronous parallel simulation: every active sub-trace contributes
// one model input per round; inputs are batched into predictor calls in
// sub-trace order. Results are independent of worker count and scheduling.
ParallelResult simulate_parallel(std::span<const AnnotatedInstruction> trace,
                                 LatencyPredictor& predictor, const ParallelConfig& config);

struct ThroughputRow {
  uint64_t k = 1;
  uint64_t instructions = 0;
  double seconds = 0.0;
};

// MIPS per configuration; throws on non-positive durations.
std::string throughput_csv(std::span<const ThroughputRow> rows);

}  // namespace ilsim
