#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "ilsim/predictor.hpp"
#include "ilsim/trace.hpp"

namespace ilsim {

struct SimConfig {
  int max_context = 110;          // processor queue capacity
  uint32_t retire_bandwidth = 8;  // processor-queue retirements per cycle
  bool per_cycle_advance = false; // reference mode: advance fetch gaps cycle by cycle
  bool record_fetch = true;       // keep per-instruction predicted fetch latencies
  uint32_t line_size = 64;
  uint32_t page_size = 4096;
};

struct SimResult {
  uint64_t total_cycles = 0;
  uint64_t instructions = 0;
  double cpi = 0.0;
  uint64_t sum_fetch = 0;
  uint64_t delta = 0;  // total_cycles - sum_fetch: drain plus overflow stalls
  uint64_t drain_cycles = 0;
  uint64_t overflow_stall_cycles = 0;
  bool empty = false;  // empty trace: cpi reported as 0 with this flag set
  std::vector<uint32_t> predicted_fetch;
};

// One instruction-centric machine: a FIFO processor queue and a FIFO memory
// write queue of in-flight instructions plus the curTick cycle counter.
// Drives one trace (or sub-trace) through a latency predictor.
class SimCore {
public:
  SimCore(std::span<const AnnotatedInstruction> trace, uint64_t base_index,
          const SimConfig& config, LatencyPredictor& predictor);

  bool instructions_left() const { return pos_ < trace_.size(); }
  bool fully_drained() const { return !instructions_left() && drained_; }

  // Builds the model input for the next instruction and returns the request.
  // The buffer stays valid until the next call.
  PredictRequest next_request();
  // Applies a prediction for the instruction returned by next_request().
  void apply_step(const LatencyTriple& predicted);
  // After the last instruction, advances until both queues empty.
  void drain();

  SimResult result() const;

  // Instrumentation: every queued entry's residence must equal
  // cur_tick - its push tick. Used by tests.
  bool residence_invariant_holds() const;
  size_t queue_size() const { return proc_queue_.size() + write_queue_.size(); }

private:
  struct InFlight {
    uint32_t local_index;
    uint32_t residence;
    uint32_t execution;
    uint32_t store;
    bool is_store;
    uint64_t push_tick;
  };

  // Both return the number of queue transitions (retirements and moves).
  size_t advance_cycles(uint64_t cycles, uint64_t budget_cap, uint64_t* counter);
  size_t retire(uint64_t budget);
  uint64_t next_ready_gap() const;

  std::span<const AnnotatedInstruction> trace_;
  uint64_t base_index_;
  SimConfig cfg_;
  LatencyPredictor& predictor_;

  std::deque<InFlight> proc_queue_;
  std::deque<InFlight> write_queue_;
  uint64_t cur_tick_ = 0;
  uint64_t sum_fetch_ = 0;
  uint64_t overflow_stalls_ = 0;
  uint64_t drain_cycles_ = 0;
  size_t pos_ = 0;
  bool drained_ = false;
  std::vector<float> input_;
  std::vector<int32_t> raw_column_;
  std::vector<uint32_t> predicted_fetch_;
};

// Sequential simulation of a whole trace.
SimResult simulate_trace(std::span<const AnnotatedInstruction> trace, LatencyPredictor& predictor,
                         const SimConfig& config);

}  // namespace ilsim
