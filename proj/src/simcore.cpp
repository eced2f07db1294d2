#include "ilsim/simcore.hpp"

#include <algorithm>
#include <limits>

#include "ilsim/dataset.hpp"

namespace ilsim {

SimCore::SimCore(std::span<const AnnotatedInstruction> trace, uint64_t base_index,
                 const SimConfig& config, LatencyPredictor& predictor)
    : trace_(trace), base_index_(base_index), cfg_(config), predictor_(predictor) {
  if (cfg_.max_context < 1) throw Error("max_context must be >= 1");
  if (cfg_.retire_bandwidth < 1) throw Error("retire_bandwidth must be >= 1");
  raw_column_.resize(FeatureLayout::kSlots);
  if (predictor_.needs_input()) {
    if (!predictor_.norm_stats())
      throw Error("predictor requires inputs but provides no normalization stats");
    FeatureLayout layout{cfg_.max_context};
    input_.resize(layout.model_width());
  }
  if (cfg_.record_fetch) predicted_fetch_.reserve(trace.size());
}

PredictRequest SimCore::next_request() {
  if (pos_ >= trace_.size()) throw Error("next_request past end of trace");
  const AnnotatedInstruction& target = trace_[pos_];
  PredictRequest req;
  req.trace_index = base_index_ + pos_;
  req.target_is_store = target.stat.is_store();

  if (predictor_.needs_input()) {
    const NormStats& norm = *predictor_.norm_stats();
    std::fill(input_.begin(), input_.end(), 0.0f);
    auto emit_column = [&](int col, const AnnotatedInstruction& ai, int64_t residence,
                           int64_t execution, int64_t store,
                           const std::array<uint8_t, FeatureLayout::kDepFlagCount>& flags) {
      fill_raw_column(raw_column_.data(), ai.stat, ai.hist, residence, execution, store, flags);
      float* dst = input_.data() + static_cast<size_t>(col) * FeatureLayout::kSlots;
      for (int k = 0; k < FeatureLayout::kSlots; ++k) {
        // Clamp to the training regime: predicted latencies feed back into
        // these slots, and a single runaway value would otherwise cascade.
        const double z = (raw_column_[k] - norm.mean[k]) / norm.stdev[k];
        dst[k] = static_cast<float>(std::clamp(z, -10.0, 10.0));
      }
    };
    emit_column(0, target, 0, 0, 0, {});

    // Context: processor queue then memory write queue, newest first. Every
    // processor-queue entry is younger than every write-queue entry.
    int col = 1;
    const int max_cols = cfg_.max_context + 1;
    for (auto it = proc_queue_.rbegin(); it != proc_queue_.rend() && col < max_cols; ++it) {
      const AnnotatedInstruction& ctx = trace_[it->local_index];
      emit_column(col++, ctx, it->residence, it->execution, it->store,
                  memory_dependency_flags(target.stat, ctx.stat, cfg_.line_size, cfg_.page_size));
    }
    for (auto it = write_queue_.rbegin(); it != write_queue_.rend() && col < max_cols; ++it) {
      const AnnotatedInstruction& ctx = trace_[it->local_index];
      emit_column(col++, ctx, it->residence, it->execution, it->store,
                  memory_dependency_flags(target.stat, ctx.stat, cfg_.line_size, cfg_.page_size));
    }
    req.input = input_.data();
  }
  return req;
}

size_t SimCore::retire(uint64_t budget) {
  size_t events = 0;
  while (budget > 0 && !proc_queue_.empty()) {
    InFlight& head = proc_queue_.front();
    if (head.residence < head.execution) break;
    if (head.is_store) write_queue_.push_back(head);
    proc_queue_.pop_front();
    --budget;
    ++events;
  }
  while (!write_queue_.empty() &&
         write_queue_.front().residence >= write_queue_.front().store) {
    write_queue_.pop_front();
    ++events;
  }
  return events;
}

size_t SimCore::advance_cycles(uint64_t cycles, uint64_t budget, uint64_t* counter) {
  if (cycles == 0) return 0;
  cur_tick_ += cycles;
  if (counter) *counter += cycles;
  for (auto& e : proc_queue_) e.residence += cycles;
  for (auto& e : write_queue_) e.residence += cycles;
  return retire(budget);
}

uint64_t SimCore::next_ready_gap() const {
  uint64_t best = std::numeric_limits<uint64_t>::max();
  if (!proc_queue_.empty()) {
    const InFlight& h = proc_queue_.front();
    best = std::min(best, h.execution > h.residence
                              ? static_cast<uint64_t>(h.execution - h.residence)
                              : uint64_t{1});
  }
  if (!write_queue_.empty()) {
    const InFlight& h = write_queue_.front();
    best = std::min(best, h.store > h.residence
                              ? static_cast<uint64_t>(h.store - h.residence)
                              : uint64_t{1});
  }
  return best == std::numeric_limits<uint64_t>::max() ? 1 : std::max<uint64_t>(1, best);
}

void SimCore::apply_step(const LatencyTriple& predicted) {
  if (pos_ >= trace_.size()) throw Error("apply_step past end of trace");
  const AnnotatedInstruction& target = trace_[pos_];
  const uint32_t f = predicted.fetch;

  if (f > 0) {
    if (cfg_.per_cycle_advance) {
      for (uint32_t c = 0; c < f; ++c) advance_cycles(1, cfg_.retire_bandwidth, nullptr);
    } else {
      advance_cycles(f, static_cast<uint64_t>(cfg_.retire_bandwidth) * f, nullptr);
    }
  }

  // Forced stall: the new instruction needs a processor-queue slot. Jump to
  // the head's readiness when nothing can retire sooner.
  while (proc_queue_.size() >= static_cast<size_t>(cfg_.max_context)) {
    const size_t before = proc_queue_.size();
    const InFlight& h = proc_queue_.front();
    const uint64_t gap =
        h.execution > h.residence ? static_cast<uint64_t>(h.execution - h.residence) : uint64_t{1};
    advance_cycles(gap, cfg_.retire_bandwidth, &overflow_stalls_);
    if (proc_queue_.size() >= before)
      throw Error("processor queue stalled without progress at tick " +
                  std::to_string(cur_tick_));
  }

  InFlight entry;
  entry.local_index = static_cast<uint32_t>(pos_);
  entry.residence = 0;
  entry.execution = predicted.execution;
  entry.store = predicted.store;
  entry.is_store = target.stat.is_store();
  entry.push_tick = cur_tick_;
  proc_queue_.push_back(entry);

  sum_fetch_ += f;
  if (cfg_.record_fetch) predicted_fetch_.push_back(f);
  ++pos_;
}

void SimCore::drain() {
  if (pos_ < trace_.size()) throw Error("drain before all instructions were stepped");
  while (!proc_queue_.empty() || !write_queue_.empty()) {
    if (advance_cycles(next_ready_gap(), cfg_.retire_bandwidth, &drain_cycles_) == 0)
      throw Error("drain made no progress at tick " + std::to_string(cur_tick_));
  }
  drained_ = true;
}

SimResult SimCore::result() const {
  SimResult r;
  r.instructions = trace_.size();
  r.total_cycles = cur_tick_;
  r.sum_fetch = sum_fetch_;
  r.delta = cur_tick_ - sum_fetch_;
  r.drain_cycles = drain_cycles_;
  r.overflow_stall_cycles = overflow_stalls_;
  r.empty = trace_.empty();
  r.cpi = trace_.empty() ? 0.0
                         : static_cast<double>(cur_tick_) / static_cast<double>(trace_.size());
  r.predicted_fetch = predicted_fetch_;
  return r;
}

bool SimCore::residence_invariant_holds() const {
  for (const auto& q : {proc_queue_, write_queue_}) {
    for (const auto& e : q) {
      if (cur_tick_ - e.push_tick != e.residence) return false;
    }
  }
  return true;
}

SimResult simulate_trace(std::span<const AnnotatedInstruction> trace, LatencyPredictor& predictor,
                         const SimConfig& config) {
  SimCore core(trace, 0, config, predictor);
  LatencyTriple triple;
  while (core.instructions_left()) {
    const PredictRequest req = core.next_request();
    predictor.predict({&req, 1}, {&triple, 1});
    core.apply_step(triple);
  }
  core.drain();
  return core.result();
}

}  // namespace ilsim
