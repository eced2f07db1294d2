#include "ilsim/predictor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ilsim {

CnnPredictor::CnnPredictor(ModelWeights weights) : weights_(std::move(weights)) {
  weights_.config.validate_or_throw();
}

void CnnPredictor::predict(std::span<const PredictRequest> requests,
                           std::span<LatencyTriple> out) {
  if (requests.size() != out.size()) throw Error("predict: request/output size mismatch");
#ifdef _OPENMP
#pragma omp parallel
#endif
  {
    CnnWorkspace ws;
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
    for (int64_t i = 0; i < static_cast<int64_t>(requests.size()); ++i) {
      const PredictionOutput po = forward(weights_, requests[i].input, ws);
      out[i] = decode_hybrid(po, weights_.norm, requests[i].target_is_store);
    }
  }
}

void OraclePredictor::predict(std::span<const PredictRequest> requests,
                              std::span<LatencyTriple> out) {
  if (requests.size() != out.size()) throw Error("predict: request/output size mismatch");
  for (size_t i = 0; i < requests.size(); ++i) {
    const uint64_t idx = requests[i].trace_index;
    if (idx >= trace_.size())
      throw Error("oracle predictor: trace index " + std::to_string(idx) + " out of range");
    out[i] = trace_[idx].truth;
  }
}

}  // namespace ilsim
