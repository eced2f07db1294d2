#include "ilsim/parallel.hpp"

#include <algorithm>
#include <memory>
#include <sstream>

namespace ilsim {

PartitionPlan partition(uint64_t trace_length, uint64_t k) {
  if (k < 1 || k > std::max<uint64_t>(trace_length, 1))
    throw Error("sub-trace count " + std::to_string(k) + " out of range for trace of " +
                std::to_string(trace_length));
  PartitionPlan plan;
  plan.sub_trace_count = k;
  plan.trace_length = trace_length;
  const uint64_t base = trace_length / k;
  const uint64_t rem = trace_length % k;
  uint64_t start = 0;
  for (uint64_t i = 0; i < k; ++i) {
    plan.starts.push_back(start);
    start += base + (i < rem ? 1 : 0);
  }
  return plan;
}

ParallelResult simulate_parallel(std::span<const AnnotatedInstruction> trace,
                                 LatencyPredictor& predictor, const ParallelConfig& config) {
  uint64_t k = config.k;
  const uint64_t n = trace.size();
  if (config.subtrace_size > 0) {
    const uint64_t derived = n == 0 ? 1 : (n + config.subtrace_size - 1) / config.subtrace_size;
    if (k == 0) {
      k = derived;
    } else if (k != derived) {
      throw Error("inconsistent partition: k=" + std::to_string(k) + " but subtrace size " +
                  std::to_string(config.subtrace_size) + " implies k=" + std::to_string(derived));
    }
  }
  if (k == 0) k = 1;
  if (config.batch_max == 0) throw Error("batch_max must be >= 1");

  ParallelResult result;
  result.instructions = n;
  if (n == 0) {
    SimResult r;
    r.empty = true;
    result.sub_results.push_back(r);
    return result;
  }

  const PartitionPlan plan = partition(n, k);
  std::vector<std::unique_ptr<SimCore>> cores;
  cores.reserve(k);
  for (uint64_t i = 0; i < k; ++i) {
    const uint64_t start = plan.starts[i];
    cores.push_back(std::make_unique<SimCore>(trace.subspan(start, plan.size_of(i)), start,
                                              config.sim, predictor));
  }

  std::vector<size_t> active;
  std::vector<PredictRequest> requests;
  std::vector<LatencyTriple> triples;
  for (;;) {
    active.clear();
    for (size_t i = 0; i < cores.size(); ++i)
      if (cores[i]->instructions_left()) active.push_back(i);
    if (active.empty()) break;

    requests.clear();
    for (size_t i : active) requests.push_back(cores[i]->next_request());
    triples.resize(requests.size());
    for (size_t off = 0; off < requests.size(); off += config.batch_max) {
      const size_t len = std::min(config.batch_max, requests.size() - off);
      predictor.predict({requests.data() + off, len}, {triples.data() + off, len});
    }
    for (size_t j = 0; j < active.size(); ++j) {
      SimCore& core = *cores[active[j]];
      core.apply_step(triples[j]);
      if (!core.instructions_left()) core.drain();
    }
  }

  for (auto& core : cores) {
    result.sub_results.push_back(core->result());
    result.total_cycles += result.sub_results.back().total_cycles;
    if (config.sim.record_fetch) {
      const auto& pf = result.sub_results.back().predicted_fetch;
      result.predicted_fetch.insert(result.predicted_fetch.end(), pf.begin(), pf.end());
    }
  }
  result.cpi = static_cast<double>(result.total_cycles) / static_cast<double>(n);
  return result;
}

std::string throughput_csv(std::span<const ThroughputRow> rows) {
  std::ostringstream out;
  out << "k,instructions,seconds,mips\n";
  for (const auto& row : rows) {
    if (row.seconds <= 0.0)
      throw Error("throughput row with non-positive duration (k=" + std::to_string(row.k) + ")");
    const double mips = static_cast<double>(row.instructions) / row.seconds / 1e6;
    out << row.k << ',' << row.instructions << ',' << row.seconds << ',' << mips << '\n';
  }
  return out.str();
}

}  // namespace ilsim
