#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ilsim/dataset.hpp"
#include "ilsim/trace.hpp"

namespace ilsim {

// 1D CNN over the instruction sequence: every conv layer has kernel 2 and
// stride 2 (inputs never overlap), followed by two fully connected layers.
// Heads: 3 regression outputs plus one classification head per latency.
struct CnnConfig {
  int input_channels = FeatureLayout::kSlots;
  int max_context = 110;
  int sequence_length = 128;  // zero-padded columns beyond max_context + 1
  std::vector<int> conv_channels = {64, 64, 64};
  int fc_hidden = 256;
  int class_fetch = 10;
  int class_exec = 10;
  int class_store = 10;
  bool residual_blocks = false;  // adds a linear k2/s2 shortcut per layer

  int conv_layers() const { return static_cast<int>(conv_channels.size()); }
  int output_dim() const { return 3 + class_fetch + class_exec + class_store; }
  int final_positions() const { return sequence_length >> conv_layers(); }
  int flat_dim() const { return conv_channels.back() * final_positions(); }
  void validate_or_throw() const;
  uint64_t hash() const;

  static CnnConfig preset_c3(int max_context = 110);
  // Tiny configuration for gradient checking and fast tests.
  static CnnConfig tiny(int channels = 4, int seq = 8);

  bool operator==(const CnnConfig&) const = default;
};

struct TensorShape {
  std::string name;
  size_t offset = 0;
  size_t rows = 0;
  size_t cols = 0;
  size_t count() const { return rows * cols; }
};

std::vector<TensorShape> tensor_table(const CnnConfig& cfg);
size_t param_count(const CnnConfig& cfg);
uint64_t model_flops(const CnnConfig& cfg);  // multiplications per forward pass

struct PredictionOutput {
  std::array<float, 3> regression{};  // normalized space: fetch, execution, store
  std::vector<float> fetch_logits, exec_logits, store_logits;
};

struct ModelWeights {
  CnnConfig config;
  NormStats norm;
  std::vector<float> params;
  std::vector<float> adam_m, adam_v;
  int64_t adam_step = 0;

  bool operator==(const ModelWeights&) const = default;
};

ModelWeights init_weights(const CnnConfig& cfg, const NormStats& norm, uint64_t seed);

// Scratch buffers reused across calls; one per thread.
class CnnWorkspace {
public:
  std::vector<float> act;   // activations for every layer, contiguous
  std::vector<float> grad;  // activation gradients
};

PredictionOutput forward(const ModelWeights& w, const float* input, CnnWorkspace& ws);

// Sum over heads of squared error (normalized regression) + cross-entropy.
double sample_loss(const ModelWeights& w, const float* input, const LatencyTriple& label,
                   CnnWorkspace& ws);

// Loss plus parameter-gradient accumulation (grad_accum += dL/dtheta).
double loss_and_grad(const ModelWeights& w, const float* input, const LatencyTriple& label,
                     float* grad_accum, CnnWorkspace& ws);

// Hybrid decode: per head, argmax class (ties -> smallest); dedicated classes
// predict their value, the overflow class falls back to the de-normalized,
// rounded regression output. Execution is floored at 1; store is 0 for
// non-stores.
LatencyTriple decode_hybrid(const PredictionOutput& out, const NormStats& norm,
                            bool target_is_store);

// Largest relative disagreement between analytic gradients and central finite
// differences (computed in double precision).
double gradient_check(const ModelWeights& w, const float* input, const LatencyTriple& label,
                      double step = 1e-4);

struct TrainParams {
  double learning_rate = 0.001;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  int epochs = 30;
  int batch_size = 256;
  uint64_t seed = 1;
  bool verbose = false;
};

struct TrainHistory {
  std::vector<double> train_loss, val_loss;
  int best_epoch = -1;
};

ModelWeights train_model(const Dataset& ds, const CnnConfig& cfg, const TrainParams& params,
                         TrainHistory* history = nullptr);

struct EvalResult {
  std::array<double, 3> mean_error{};     // |pred - truth| / (truth + 1), decoded
  std::array<double, 3> class_accuracy{}; // argmax class vs bucketed truth
  size_t count = 0;
};

EvalResult evaluate_model(const ModelWeights& w, std::span<const EncodedSample> samples,
                          const FeatureLayout& layout);

void save_model(const std::string& path, const ModelWeights& w);
ModelWeights load_model(const std::string& path);

}  // namespace ilsim
