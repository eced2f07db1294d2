#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "ilsim/cnn.hpp"
#include "ilsim/trace.hpp"

namespace ilsim {

struct PredictRequest {
  const float* input = nullptr;  // normalized model input, layout width
  uint64_t trace_index = 0;      // global instruction index in the input trace
  bool target_is_store = false;
};

class LatencyPredictor {
public:
  virtual ~LatencyPredictor() = default;
  virtual bool needs_input() const { return true; }
  virtual int max_context() const = 0;
  virtual const NormStats* norm_stats() const { return nullptr; }
  // Batched prediction; out.size() == requests.size(). Per-request results
  // must not depend on batch composition or thread count.
  virtual void predict(std::span<const PredictRequest> requests,
                       std::span<LatencyTriple> out) = 0;
};

class CnnPredictor final : public LatencyPredictor {
public:
  explicit CnnPredictor(ModelWeights weights);

  int max_context() const override { return weights_.config.max_context; }
  const NormStats* norm_stats() const override { return &weights_.norm; }
  void predict(std::span<const PredictRequest> requests, std::span<LatencyTriple> out) override;

  const ModelWeights& weights() const { return weights_; }

private:
  ModelWeights weights_;
};

// Test double realizing the premise that latency predictions are exact:
// returns each instruction's recorded ground-truth triple.
class OraclePredictor final : public LatencyPredictor {
public:
  explicit OraclePredictor(std::span<const AnnotatedInstruction> trace, int max_context = 110)
      : trace_(trace), max_context_(max_context) {}

  bool needs_input() const override { return false; }
  int max_context() const override { return max_context_; }
  void predict(std::span<const PredictRequest> requests, std::span<LatencyTriple> out) override;

private:
  std::span<const AnnotatedInstruction> trace_;
  int max_context_;
};

}  // namespace ilsim
