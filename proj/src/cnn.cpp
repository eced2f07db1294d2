#include "ilsim/cnn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include <Eigen/Dense>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ilsim {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;
template <typename T>
using CMapM = Eigen::Map<const Mat<T>>;
template <typename T>
using MapV = Eigen::Map<Vec<T>>;
template <typename T>
using CMapV = Eigen::Map<const Vec<T>>;

// Fixed number of gradient-accumulation groups per batch. The reduction order
// is defined by group index, so results do not depend on the thread count.
constexpr int kGradGroups = 8;

struct Offsets {
  std::vector<size_t> conv_w, conv_b, conv_p;
  size_t fc1_w = 0, fc1_b = 0, fc2_w = 0, fc2_b = 0;
  size_t total = 0;
  // activation buffer offsets: input, each conv output, fc hidden, output
  std::vector<size_t> act;
  size_t act_h1 = 0, act_y = 0, act_total = 0;
};

Offsets make_offsets(const CnnConfig& cfg) {
  Offsets o;
  size_t p = 0;
  int in_c = cfg.input_channels;
  for (int l = 0; l < cfg.conv_layers(); ++l) {
    const int out_c = cfg.conv_channels[l];
    o.conv_w.push_back(p);
    p += static_cast<size_t>(out_c) * (2 * in_c);
    o.conv_b.push_back(p);
    p += out_c;
    if (cfg.residual_blocks) {
      o.conv_p.push_back(p);
      p += static_cast<size_t>(out_c) * (2 * in_c);
    }
    in_c = out_c;
  }
  o.fc1_w = p;
  p += static_cast<size_t>(cfg.fc_hidden) * cfg.flat_dim();
  o.fc1_b = p;
  p += cfg.fc_hidden;
  o.fc2_w = p;
  p += static_cast<size_t>(cfg.output_dim()) * cfg.fc_hidden;
  o.fc2_b = p;
  p += cfg.output_dim();
  o.total = p;

  size_t a = 0;
  int len = cfg.sequence_length;
  in_c = cfg.input_channels;
  o.act.push_back(a);
  a += static_cast<size_t>(in_c) * len;
  for (int l = 0; l < cfg.conv_layers(); ++l) {
    len /= 2;
    o.act.push_back(a);
    a += static_cast<size_t>(cfg.conv_channels[l]) * len;
  }
  o.act_h1 = a;
  a += cfg.fc_hidden;
  o.act_y = a;
  a += cfg.output_dim();
  o.act_total = a;
  return o;
}

// Forward through all layers. `act` must hold act_total entries with the
// padded input already in place at offset 0.
template <typename T>
void forward_core(const CnnConfig& cfg, const Offsets& o, const T* params, T* act) {
  int in_c = cfg.input_channels;
  int len = cfg.sequence_length;
  for (int l = 0; l < cfg.conv_layers(); ++l) {
    const int out_c = cfg.conv_channels[l];
    const int out_len = len / 2;
    // Kernel-2/stride-2 windows never overlap, so the column-major feature
    // map doubles as its own im2col matrix.
    CMapM<T> in(act + o.act[l], 2 * in_c, out_len);
    MapM<T> out(act + o.act[l + 1], out_c, out_len);
    CMapM<T> w(params + o.conv_w[l], out_c, 2 * in_c);
    CMapV<T> b(params + o.conv_b[l], out_c);
    out.noalias() = w * in;
    if (cfg.residual_blocks) {
      CMapM<T> proj(params + o.conv_p[l], out_c, 2 * in_c);
      out.noalias() += proj * in;
    }
    out.colwise() += b;
    out = out.cwiseMax(T(0));
    in_c = out_c;
    len = out_len;
  }
  CMapV<T> flat(act + o.act[cfg.conv_layers()], cfg.flat_dim());
  MapV<T> h1(act + o.act_h1, cfg.fc_hidden);
  CMapM<T> w1(params + o.fc1_w, cfg.fc_hidden, cfg.flat_dim());
  CMapV<T> b1(params + o.fc1_b, cfg.fc_hidden);
  h1.noalias() = w1 * flat;
  h1 += b1;
  h1 = h1.cwiseMax(T(0));
  MapV<T> y(act + o.act_y, cfg.output_dim());
  CMapM<T> w2(params + o.fc2_w, cfg.output_dim(), cfg.fc_hidden);
  CMapV<T> b2(params + o.fc2_b, cfg.output_dim());
  y.noalias() = w2 * h1;
  y += b2;
}

// Loss on the output vector; when dy != nullptr also writes dL/dy.
template <typename T>
double loss_core(const CnnConfig& cfg, const NormStats& norm, const T* y,
                 const LatencyTriple& label, T* dy) {
  const uint32_t raw[3] = {label.fetch, label.execution, label.store};
  const int classes[3] = {cfg.class_fetch, cfg.class_exec, cfg.class_store};
  double loss = 0.0;
  if (dy) std::fill(dy, dy + cfg.output_dim(), T(0));

  for (int h = 0; h < 3; ++h) {
    const double target = (std::log1p(static_cast<double>(raw[h])) - norm.label_mean[h]) /
                          norm.label_stdev[h];
    const double diff = static_cast<double>(y[h]) - target;
    loss += diff * diff;
    if (dy) dy[h] = static_cast<T>(2.0 * diff);
  }

  int base = 3;
  for (int h = 0; h < 3; ++h) {
    const int c = classes[h];
    const int target = static_cast<int>(std::min<uint32_t>(raw[h], c - 1));
    double max_z = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < c; ++k) max_z = std::max(max_z, static_cast<double>(y[base + k]));
    double denom = 0.0;
    for (int k = 0; k < c; ++k) denom += std::exp(static_cast<double>(y[base + k]) - max_z);
    const double log_p = static_cast<double>(y[base + target]) - max_z - std::log(denom);
    loss -= log_p;
    if (dy) {
      for (int k = 0; k < c; ++k) {
        const double p = std::exp(static_cast<double>(y[base + k]) - max_z) / denom;
        dy[base + k] = static_cast<T>(p - (k == target ? 1.0 : 0.0));
      }
    }
    base += c;
  }
  return loss;
}

// Backpropagation; gparams is accumulated (+=). gact must be act_total long;
// dL/dy is expected at gact + act_y.
template <typename T>
void backward_core(const CnnConfig& cfg, const Offsets& o, const T* params, const T* act,
                   T* gact, T* gparams) {
  CMapV<T> h1(act + o.act_h1, cfg.fc_hidden);
  CMapV<T> flat(act + o.act[cfg.conv_layers()], cfg.flat_dim());
  MapV<T> dy(gact + o.act_y, cfg.output_dim());
  MapV<T> dh1(gact + o.act_h1, cfg.fc_hidden);

  CMapM<T> w2(params + o.fc2_w, cfg.output_dim(), cfg.fc_hidden);
  MapM<T> gw2(gparams + o.fc2_w, cfg.output_dim(), cfg.fc_hidden);
  MapV<T> gb2(gparams + o.fc2_b, cfg.output_dim());
  gw2.noalias() += dy * h1.transpose();
  gb2 += dy;
  dh1.noalias() = w2.transpose() * dy;
  dh1.array() *= (h1.array() > T(0)).template cast<T>();

  CMapM<T> w1(params + o.fc1_w, cfg.fc_hidden, cfg.flat_dim());
  MapM<T> gw1(gparams + o.fc1_w, cfg.fc_hidden, cfg.flat_dim());
  MapV<T> gb1(gparams + o.fc1_b, cfg.fc_hidden);
  MapV<T> dflat(gact + o.act[cfg.conv_layers()], cfg.flat_dim());
  gw1.noalias() += dh1 * flat.transpose();
  gb1 += dh1;
  dflat.noalias() = w1.transpose() * dh1;

  int len = cfg.sequence_length >> cfg.conv_layers();
  for (int l = cfg.conv_layers() - 1; l >= 0; --l) {
    const int out_c = cfg.conv_channels[l];
    const int in_c = l == 0 ? cfg.input_channels : cfg.conv_channels[l - 1];
    const int out_len = len;
    MapM<T> dout(gact + o.act[l + 1], out_c, out_len);
    CMapM<T> out(act + o.act[l + 1], out_c, out_len);
    dout.array() *= (out.array() > T(0)).template cast<T>();

    CMapM<T> in(act + o.act[l], 2 * in_c, out_len);
    CMapM<T> w(params + o.conv_w[l], out_c, 2 * in_c);
    MapM<T> gw(gparams + o.conv_w[l], out_c, 2 * in_c);
    MapV<T> gb(gparams + o.conv_b[l], out_c);
    gw.noalias() += dout * in.transpose();
    gb += dout.rowwise().sum();

    MapM<T> din(gact + o.act[l], 2 * in_c, out_len);
    din.noalias() = w.transpose() * dout;
    if (cfg.residual_blocks) {
      CMapM<T> proj(params + o.conv_p[l], out_c, 2 * in_c);
      MapM<T> gproj(gparams + o.conv_p[l], out_c, 2 * in_c);
      gproj.noalias() += dout * in.transpose();
      din.noalias() += proj.transpose() * dout;
    }
    len *= 2;
  }
}

template <typename T>
void pad_input(const CnnConfig& cfg, const float* input, T* act0) {
  const size_t real = static_cast<size_t>(cfg.input_channels) * (cfg.max_context + 1);
  const size_t padded = static_cast<size_t>(cfg.input_channels) * cfg.sequence_length;
  for (size_t i = 0; i < real; ++i) act0[i] = static_cast<T>(input[i]);
  std::fill(act0 + real, act0 + padded, T(0));
}

double run_loss_and_grad(const ModelWeights& w, const Offsets& o, const float* input,
                         const LatencyTriple& label, float* grad_accum, CnnWorkspace& ws) {
  const CnnConfig& cfg = w.config;
  ws.act.resize(o.act_total);
  ws.grad.resize(o.act_total);
  pad_input(cfg, input, ws.act.data());
  forward_core<float>(cfg, o, w.params.data(), ws.act.data());
  const double loss = loss_core<float>(cfg, w.norm, ws.act.data() + o.act_y, label,
                                       ws.grad.data() + o.act_y);
  backward_core<float>(cfg, o, w.params.data(), ws.act.data(), ws.grad.data(), grad_accum);
  return loss;
}

}  // namespace

void CnnConfig::validate_or_throw() const {
  if (input_channels < 1) throw Error("input_channels must be >= 1");
  if (max_context < 0) throw Error("max_context must be >= 0");
  if (conv_channels.empty()) throw Error("at least one conv layer required");
  for (int c : conv_channels)
    if (c < 1) throw Error("conv channel counts must be >= 1");
  if (sequence_length < max_context + 1)
    throw Error("sequence_length smaller than max_context + 1");
  if (sequence_length % (1 << conv_layers()) != 0)
    throw Error("sequence_length must be divisible by 2^conv_layers");
  if (fc_hidden < 1) throw Error("fc_hidden must be >= 1");
  if (class_fetch < 2 || class_exec < 2 || class_store < 2)
    throw Error("class counts must be >= 2");
}

uint64_t CnnConfig::hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](uint64_t v) { h = fnv1a64(&v, sizeof(v), h); };
  mix(input_channels);
  mix(max_context);
  mix(sequence_length);
  for (int c : conv_channels) mix(c);
  mix(fc_hidden);
  mix(class_fetch);
  mix(class_exec);
  mix(class_store);
  mix(residual_blocks ? 1 : 0);
  return h;
}

CnnConfig CnnConfig::preset_c3(int max_context) {
  CnnConfig cfg;
  cfg.max_context = max_context;
  cfg.conv_channels = {64, 64, 64};
  cfg.fc_hidden = 256;
  int seq = 1;
  while (seq < max_context + 1) seq <<= 1;
  cfg.sequence_length = std::max(seq, 1 << cfg.conv_layers());
  return cfg;
}

CnnConfig CnnConfig::tiny(int channels, int seq) {
  CnnConfig cfg;
  cfg.input_channels = channels;
  cfg.max_context = seq - 1;
  cfg.sequence_length = seq;
  cfg.conv_channels = {6, 6};
  cfg.fc_hidden = 8;
  return cfg;
}

std::vector<TensorShape> tensor_table(const CnnConfig& cfg) {
  cfg.validate_or_throw();
  const Offsets o = make_offsets(cfg);
  std::vector<TensorShape> t;
  int in_c = cfg.input_channels;
  for (int l = 0; l < cfg.conv_layers(); ++l) {
    const int out_c = cfg.conv_channels[l];
    t.push_back({"conv" + std::to_string(l) + ".w", o.conv_w[l], static_cast<size_t>(out_c),
                 static_cast<size_t>(2 * in_c)});
    t.push_back({"conv" + std::to_string(l) + ".b", o.conv_b[l], static_cast<size_t>(out_c), 1});
    if (cfg.residual_blocks)
      t.push_back({"conv" + std::to_string(l) + ".p", o.conv_p[l], static_cast<size_t>(out_c),
                   static_cast<size_t>(2 * in_c)});
    in_c = out_c;
  }
  t.push_back({"fc1.w", o.fc1_w, static_cast<size_t>(cfg.fc_hidden),
               static_cast<size_t>(cfg.flat_dim())});
  t.push_back({"fc1.b", o.fc1_b, static_cast<size_t>(cfg.fc_hidden), 1});
  t.push_back({"fc2.w", o.fc2_w, static_cast<size_t>(cfg.output_dim()),
               static_cast<size_t>(cfg.fc_hidden)});
  t.push_back({"fc2.b", o.fc2_b, static_cast<size_t>(cfg.output_dim()), 1});
  return t;
}

size_t param_count(const CnnConfig& cfg) { return make_offsets(cfg).total; }

uint64_t model_flops(const CnnConfig& cfg) {
  uint64_t mults = 0;
  int in_c = cfg.input_channels;
  int len = cfg.sequence_length;
  for (int l = 0; l < cfg.conv_layers(); ++l) {
    const int out_c = cfg.conv_channels[l];
    len /= 2;
    uint64_t per_conv = static_cast<uint64_t>(out_c) * len * (2 * in_c);
    mults += cfg.residual_blocks ? 2 * per_conv : per_conv;
    in_c = out_c;
  }
  mults += static_cast<uint64_t>(cfg.fc_hidden) * cfg.flat_dim();
  mults += static_cast<uint64_t>(cfg.output_dim()) * cfg.fc_hidden;
  return mults;
}

ModelWeights init_weights(const CnnConfig& cfg, const NormStats& norm, uint64_t seed) {
  cfg.validate_or_throw();
  ModelWeights w;
  w.config = cfg;
  w.norm = norm;
  const size_t n = param_count(cfg);
  w.params.resize(n);
  w.adam_m.assign(n, 0.0f);
  w.adam_v.assign(n, 0.0f);
  Rng rng(splitmix64(seed) ^ 0xC44u);
  for (const auto& t : tensor_table(cfg)) {
    // fan-in: weights use their column count; biases use the layer fan-in.
    const float bound = 1.0f / std::sqrt(static_cast<float>(std::max<size_t>(1, t.cols)));
    for (size_t i = 0; i < t.count(); ++i)
      w.params[t.offset + i] = rng.next_symmetric(bound);
  }
  return w;
}

PredictionOutput forward(const ModelWeights& w, const float* input, CnnWorkspace& ws) {
  const CnnConfig& cfg = w.config;
  const Offsets o = make_offsets(cfg);
  ws.act.resize(o.act_total);
  pad_input(cfg, input, ws.act.data());
  forward_core<float>(cfg, o, w.params.data(), ws.act.data());
  const float* y = ws.act.data() + o.act_y;
  PredictionOutput out;
  for (int h = 0; h < 3; ++h) out.regression[h] = y[h];
  out.fetch_logits.assign(y + 3, y + 3 + cfg.class_fetch);
  out.exec_logits.assign(y + 3 + cfg.class_fetch, y + 3 + cfg.class_fetch + cfg.class_exec);
  out.store_logits.assign(y + 3 + cfg.class_fetch + cfg.class_exec,
                          y + cfg.output_dim());
  return out;
}

double sample_loss(const ModelWeights& w, const float* input, const LatencyTriple& label,
                   CnnWorkspace& ws) {
  const CnnConfig& cfg = w.config;
  const Offsets o = make_offsets(cfg);
  ws.act.resize(o.act_total);
  pad_input(cfg, input, ws.act.data());
  forward_core<float>(cfg, o, w.params.data(), ws.act.data());
  return loss_core<float>(cfg, w.norm, ws.act.data() + o.act_y, label, nullptr);
}

double loss_and_grad(const ModelWeights& w, const float* input, const LatencyTriple& label,
                     float* grad_accum, CnnWorkspace& ws) {
  const Offsets o = make_offsets(w.config);
  return run_loss_and_grad(w, o, input, label, grad_accum, ws);
}

namespace {

int argmax_smallest_tie(std::span<const float> v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

uint32_t decode_head(std::span<const float> logits, float regression, double mean, double stdev) {
  const int cls = argmax_smallest_tie(logits);
  if (cls < static_cast<int>(logits.size()) - 1) return static_cast<uint32_t>(cls);
  // de-normalize out of log1p space, clamp at zero, round
  const double raw = std::max(0.0, std::expm1(std::min(regression * stdev + mean, 22.0)));
  const long long v = std::llround(std::min(raw, 4.0e9));
  return static_cast<uint32_t>(std::min<long long>(v, 0xffffffffLL));
}

}  // namespace

LatencyTriple decode_hybrid(const PredictionOutput& out, const NormStats& norm,
                            bool target_is_store) {
  LatencyTriple t;
  t.fetch = decode_head(out.fetch_logits, out.regression[0], norm.label_mean[0],
                        norm.label_stdev[0]);
  t.execution = std::max<uint32_t>(
      1, decode_head(out.exec_logits, out.regression[1], norm.label_mean[1], norm.label_stdev[1]));
  t.store = target_is_store ? decode_head(out.store_logits, out.regression[2], norm.label_mean[2],
                                          norm.label_stdev[2])
                            : 0;
  return t;
}

double gradient_check(const ModelWeights& w, const float* input, const LatencyTriple& label,
                      double step) {
  const CnnConfig& cfg = w.config;
  const Offsets o = make_offsets(cfg);
  std::vector<double> params(w.params.begin(), w.params.end());
  std::vector<double> act(o.act_total), gact(o.act_total), grad(o.total, 0.0);

  pad_input(cfg, input, act.data());
  forward_core<double>(cfg, o, params.data(), act.data());
  loss_core<double>(cfg, w.norm, act.data() + o.act_y, label, gact.data() + o.act_y);
  backward_core<double>(cfg, o, params.data(), act.data(), gact.data(), grad.data());

  auto eval = [&](const std::vector<double>& p) {
    pad_input(cfg, input, act.data());
    forward_core<double>(cfg, o, p.data(), act.data());
    return loss_core<double>(cfg, w.norm, act.data() + o.act_y, label, nullptr);
  };

  double max_rel = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    const double orig = params[i];
    params[i] = orig + step;
    const double lp = eval(params);
    params[i] = orig - step;
    const double lm = eval(params);
    params[i] = orig;
    const double fd = (lp - lm) / (2.0 * step);
    const double rel = std::abs(grad[i] - fd) / std::max({std::abs(grad[i]), std::abs(fd), 1e-4});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

ModelWeights train_model(const Dataset& ds, const CnnConfig& cfg, const TrainParams& tp,
                         TrainHistory* history) {
  cfg.validate_or_throw();
  if (ds.train.empty()) throw Error("training partition is empty");
  if (cfg.max_context != ds.layout.max_context)
    throw Error("model max_context does not match dataset layout");
  if (cfg.input_channels != FeatureLayout::kSlots)
    throw Error("training requires the 50-slot input layout");

  const Offsets o = make_offsets(cfg);
  ModelWeights w = init_weights(cfg, ds.norm, tp.seed);
  ModelWeights best = w;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;

  const size_t n = ds.train.size();
  const size_t input_width = static_cast<size_t>(ds.layout.model_width());
  std::vector<uint32_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = static_cast<uint32_t>(i);

  std::vector<std::vector<float>> group_grad(kGradGroups, std::vector<float>(o.total));
  std::vector<CnnWorkspace> wss(kGradGroups);
  std::vector<std::vector<float>> group_input(kGradGroups, std::vector<float>(input_width));
  std::vector<float> grad(o.total);

  for (int epoch = 0; epoch < tp.epochs; ++epoch) {
    Rng shuffle_rng(splitmix64(tp.seed + 0x9e3779b97f4aULL * static_cast<uint64_t>(epoch + 1)));
    for (size_t i = n; i > 1; --i) {
      const size_t j = shuffle_rng.next_below(i);
      std::swap(order[i - 1], order[j]);
    }

    double epoch_loss = 0.0;
    for (size_t batch_start = 0; batch_start < n; batch_start += tp.batch_size) {
      const size_t batch = std::min<size_t>(tp.batch_size, n - batch_start);
      std::array<double, kGradGroups> group_loss{};

#ifdef _OPENMP
#pragma omp parallel for schedule(static, 1)
#endif
      for (int g = 0; g < kGradGroups; ++g) {
        const size_t lo = batch * g / kGradGroups;
        const size_t hi = batch * (g + 1) / kGradGroups;
        if (lo == hi) continue;
        std::fill(group_grad[g].begin(), group_grad[g].end(), 0.0f);
        double loss = 0.0;
        for (size_t k = lo; k < hi; ++k) {
          const EncodedSample& s = ds.train[order[batch_start + k]];
          expand_normalized(s, ds.layout, ds.norm, group_input[g].data());
          loss += run_loss_and_grad(w, o, group_input[g].data(), s.label, group_grad[g].data(),
                                    wss[g]);
        }
        group_loss[g] = loss;
      }

      double batch_loss = 0.0;
      std::fill(grad.begin(), grad.end(), 0.0f);
      for (int g = 0; g < kGradGroups; ++g) {
        batch_loss += group_loss[g];
        const size_t lo = batch * g / kGradGroups;
        const size_t hi = batch * (g + 1) / kGradGroups;
        if (lo == hi) continue;
        MapV<float>(grad.data(), o.total) += CMapV<float>(group_grad[g].data(), o.total);
      }
      if (!std::isfinite(batch_loss))
        throw Error("training diverged (non-finite loss) at epoch " + std::to_string(epoch));
      epoch_loss += batch_loss;

      // Adam step on the mean gradient.
      const float scale = 1.0f / static_cast<float>(batch);
      ++w.adam_step;
      const double bc1 = 1.0 - std::pow(tp.beta1, static_cast<double>(w.adam_step));
      const double bc2 = 1.0 - std::pow(tp.beta2, static_cast<double>(w.adam_step));
      const float lr = static_cast<float>(tp.learning_rate);
      const float b1 = static_cast<float>(tp.beta1), b2 = static_cast<float>(tp.beta2);
      const float eps = static_cast<float>(tp.epsilon);
      const float inv_bc1 = static_cast<float>(1.0 / bc1), inv_bc2 = static_cast<float>(1.0 / bc2);
      for (size_t i = 0; i < o.total; ++i) {
        const float g = grad[i] * scale;
        w.adam_m[i] = b1 * w.adam_m[i] + (1.0f - b1) * g;
        w.adam_v[i] = b2 * w.adam_v[i] + (1.0f - b2) * g * g;
        const float mhat = w.adam_m[i] * inv_bc1;
        const float vhat = w.adam_v[i] * inv_bc2;
        w.params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
    epoch_loss /= static_cast<double>(n);

    // Validation loss selects the epoch; falls back to training loss.
    double val_loss = epoch_loss;
    if (!ds.validation.empty()) {
      std::vector<double> per(ds.validation.size());
#ifdef _OPENMP
#pragma omp parallel
#endif
      {
        CnnWorkspace vws;
        std::vector<float> vinput(input_width);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
        for (int64_t i = 0; i < static_cast<int64_t>(ds.validation.size()); ++i) {
          const EncodedSample& s = ds.validation[i];
          expand_normalized(s, ds.layout, ds.norm, vinput.data());
          per[i] = sample_loss(w, vinput.data(), s.label, vws);
        }
      }
      double sum = 0.0;
      for (double v : per) sum += v;
      val_loss = sum / static_cast<double>(ds.validation.size());
    }
    if (!std::isfinite(val_loss))
      throw Error("training diverged (non-finite validation loss) at epoch " +
                  std::to_string(epoch));

    if (history) {
      history->train_loss.push_back(epoch_loss);
      history->val_loss.push_back(val_loss);
    }
    if (val_loss < best_val) {
      best_val = val_loss;
      best = w;
      best_epoch = epoch;
    }
    if (tp.verbose)
      std::fprintf(stderr, "epoch %d train %.6f val %.6f%s\n", epoch, epoch_loss, val_loss,
                   best_epoch == epoch ? " *" : "");
  }
  if (history) history->best_epoch = best_epoch;
  return best;
}

EvalResult evaluate_model(const ModelWeights& w, std::span<const EncodedSample> samples,
                          const FeatureLayout& layout) {
  EvalResult r;
  r.count = samples.size();
  if (samples.empty()) return r;
  const size_t width = static_cast<size_t>(layout.model_width());
  const int classes[3] = {w.config.class_fetch, w.config.class_exec, w.config.class_store};

  std::vector<std::array<double, 6>> per(samples.size());
#ifdef _OPENMP
#pragma omp parallel
#endif
  {
    CnnWorkspace ws;
    std::vector<float> input(width);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
    for (int64_t i = 0; i < static_cast<int64_t>(samples.size()); ++i) {
      const EncodedSample& s = samples[i];
      expand_normalized(s, layout, w.norm, input.data());
      const PredictionOutput out = forward(w, input.data(), ws);
      const LatencyTriple pred = decode_hybrid(out, w.norm, s.target_is_store != 0);
      const uint32_t truth[3] = {s.label.fetch, s.label.execution, s.label.store};
      const uint32_t predv[3] = {pred.fetch, pred.execution, pred.store};
      const std::span<const float> logits[3] = {out.fetch_logits, out.exec_logits,
                                                out.store_logits};
      for (int h = 0; h < 3; ++h) {
        const double err = std::abs(static_cast<double>(predv[h]) - truth[h]) / (truth[h] + 1.0);
        const int true_class = static_cast<int>(std::min<uint32_t>(truth[h], classes[h] - 1));
        const bool correct = argmax_smallest_tie(logits[h]) == true_class;
        per[i][h] = err;
        per[i][3 + h] = correct ? 1.0 : 0.0;
      }
    }
  }
  std::array<double, 6> sums{};
  for (const auto& p : per)
    for (int k = 0; k < 6; ++k) sums[k] += p[k];
  for (int h = 0; h < 3; ++h) {
    r.mean_error[h] = sums[h] / static_cast<double>(samples.size());
    r.class_accuracy[h] = sums[3 + h] / static_cast<double>(samples.size());
  }
  return r;
}

namespace {
constexpr char kModelMagic[4] = {'I', 'L', 'M', 'D'};
constexpr uint32_t kModelVersion = 1;
}  // namespace

void save_model(const std::string& path, const ModelWeights& w) {
  BinaryWriter out(path);
  out.write_bytes(kModelMagic, 4);
  out.write<uint32_t>(kModelVersion);
  out.write<uint64_t>(w.config.hash());
  out.write<uint32_t>(w.config.input_channels);
  out.write<uint32_t>(w.config.max_context);
  out.write<uint32_t>(w.config.sequence_length);
  out.write<uint32_t>(static_cast<uint32_t>(w.config.conv_channels.size()));
  for (int c : w.config.conv_channels) out.write<uint32_t>(c);
  out.write<uint32_t>(w.config.fc_hidden);
  out.write<uint32_t>(w.config.class_fetch);
  out.write<uint32_t>(w.config.class_exec);
  out.write<uint32_t>(w.config.class_store);
  out.write<uint8_t>(w.config.residual_blocks ? 1 : 0);
  for (double m : w.norm.mean) out.write_f64(m);
  for (double s : w.norm.stdev) out.write_f64(s);
  for (double m : w.norm.label_mean) out.write_f64(m);
  for (double s : w.norm.label_stdev) out.write_f64(s);
  out.write<int64_t>(w.adam_step);
  out.write<uint64_t>(w.params.size());
  for (float v : w.params) out.write_f32(v);
  for (float v : w.adam_m) out.write_f32(v);
  for (float v : w.adam_v) out.write_f32(v);
  out.close();
}

ModelWeights load_model(const std::string& path) {
  BinaryReader in(path);
  char magic[4];
  in.read_bytes(magic, 4);
  if (std::memcmp(magic, kModelMagic, 4) != 0) throw Error("bad model magic in " + path);
  const uint32_t version = in.read<uint32_t>();
  if (version != kModelVersion) throw Error("unsupported model version");
  const uint64_t stored_hash = in.read<uint64_t>();
  ModelWeights w;
  w.config.input_channels = static_cast<int>(in.read<uint32_t>());
  w.config.max_context = static_cast<int>(in.read<uint32_t>());
  w.config.sequence_length = static_cast<int>(in.read<uint32_t>());
  const uint32_t layers = in.read<uint32_t>();
  w.config.conv_channels.resize(layers);
  for (auto& c : w.config.conv_channels) c = static_cast<int>(in.read<uint32_t>());
  w.config.fc_hidden = static_cast<int>(in.read<uint32_t>());
  w.config.class_fetch = static_cast<int>(in.read<uint32_t>());
  w.config.class_exec = static_cast<int>(in.read<uint32_t>());
  w.config.class_store = static_cast<int>(in.read<uint32_t>());
  w.config.residual_blocks = in.read<uint8_t>() != 0;
  if (w.config.hash() != stored_hash) throw Error("model config hash mismatch in " + path);
  for (double& m : w.norm.mean) m = in.read_f64();
  for (double& s : w.norm.stdev) s = in.read_f64();
  for (double& m : w.norm.label_mean) m = in.read_f64();
  for (double& s : w.norm.label_stdev) s = in.read_f64();
  w.adam_step = in.read<int64_t>();
  const uint64_t n = in.read<uint64_t>();
  if (n != param_count(w.config)) throw Error("model parameter count mismatch in " + path);
  w.params.resize(n);
  w.adam_m.resize(n);
  w.adam_v.resize(n);
  for (auto& v : w.params) v = in.read_f32();
  for (auto& v : w.adam_m) v = in.read_f32();
  for (auto& v : w.adam_v) v = in.read_f32();
  return w;
}

}  // namespace ilsim
