#include "ilsim/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_map>

namespace ilsim {

namespace {
constexpr uint64_t kSplitSalt = 0x5eed5a17ULL;
}

std::vector<SampleRef> build_samples(std::span<const AnnotatedInstruction> trace,
                                     int max_context) {
  const size_t n = trace.size();
  for (size_t i = 1; i < n; ++i) {
    if (trace[i].fetch_tick < trace[i - 1].fetch_tick)
      throw Error("trace violates timestamp monotonicity at record " + std::to_string(i));
    if (trace[i].fetch_tick - trace[i - 1].fetch_tick != trace[i].truth.fetch)
      throw Error("fetch_tick/fetch latency mismatch at record " + std::to_string(i));
  }

  std::vector<SampleRef> samples;
  samples.reserve(n);
  std::vector<uint32_t> live;  // candidate context, ascending index
  for (size_t i = 0; i < n; ++i) {
    const uint64_t t = trace[i].fetch_tick;
    live.erase(std::remove_if(live.begin(), live.end(),
                              [&](uint32_t j) { return trace[j].exit_tick() <= t; }),
               live.end());
    SampleRef s;
    s.target = static_cast<uint32_t>(i);
    // Every earlier, still-in-flight instruction is context. Same-cycle
    // fetch-group siblings appear at residence 0; without them, group members
    // and group leaders would be indistinguishable.
    for (auto it = live.rbegin(); it != live.rend(); ++it) {
      if (s.context.size() >= static_cast<size_t>(max_context)) break;
      s.context.push_back({*it, static_cast<uint32_t>(t - trace[*it].fetch_tick)});
    }
    samples.push_back(std::move(s));
    live.push_back(static_cast<uint32_t>(i));
  }
  return samples;
}

std::array<uint8_t, FeatureLayout::kDepFlagCount> memory_dependency_flags(
    const StaticInstruction& target, const StaticInstruction& ctx, uint32_t line_size,
    uint32_t page_size) {
  std::array<uint8_t, FeatureLayout::kDepFlagCount> f{};
  f[0] = (target.pc / line_size) == (ctx.pc / line_size);
  const bool both_mem = target.is_memory_op() && ctx.is_memory_op();
  if (both_mem) {
    f[1] = target.data_addr == ctx.data_addr;
    f[2] = (target.data_addr / line_size) == (ctx.data_addr / line_size);
    f[3] = (target.data_addr / page_size) == (ctx.data_addr / page_size);
  }
  f[4] = (target.pc / page_size) == (ctx.pc / page_size);
  return f;
}

void fill_raw_column(int32_t* out, const StaticInstruction& si, const HistoryFeatures& h,
                     int64_t residence, int64_t execution, int64_t store,
                     const std::array<uint8_t, FeatureLayout::kDepFlagCount>& flags) {
  int k = 0;
  for (int i = 0; i < kOpFeatureCount; ++i) out[k++] = si.op[i];
  for (int i = 0; i < kSrcRegCount; ++i) out[k++] = si.src[i];
  for (int i = 0; i < kDstRegCount; ++i) out[k++] = si.dst[i];
  for (int i = 0; i < kHistoryFeatureCount; ++i) out[k++] = h.v[i];
  out[k++] = static_cast<int32_t>(residence);
  out[k++] = static_cast<int32_t>(execution);
  out[k++] = static_cast<int32_t>(store);
  for (int i = 0; i < FeatureLayout::kDepFlagCount; ++i) out[k++] = flags[i];
  out[k++] = 0;  // reserved
}

uint64_t EncodedSample::hash() const {
  uint64_t h = fnv1a64(&label, sizeof(label));
  h = fnv1a64(&target_is_store, 1, h);
  h = fnv1a64(&ctx_count, 2, h);
  h = fnv1a64(values.data(), values.size() * sizeof(int32_t), h);
  return h;
}

EncodedSample encode_raw(std::span<const AnnotatedInstruction> trace, const SampleRef& sample,
                         const FeatureLayout& layout, uint32_t line_size, uint32_t page_size) {
  const AnnotatedInstruction& target = trace[sample.target];
  EncodedSample out;
  out.label = target.truth;
  out.target_is_store = target.stat.is_store();
  out.ctx_count = static_cast<uint16_t>(sample.context.size());
  out.values.resize((sample.context.size() + 1) * FeatureLayout::kSlots);

  // Column 0: the instruction to be predicted; latency and flag slots zeroed.
  fill_raw_column(out.values.data(), target.stat, target.hist, 0, 0, 0, {});
  for (size_t c = 0; c < sample.context.size(); ++c) {
    const auto& e = sample.context[c];
    const AnnotatedInstruction& ctx = trace[e.index];
    const auto flags = memory_dependency_flags(target.stat, ctx.stat, line_size, page_size);
    fill_raw_column(out.values.data() + (c + 1) * FeatureLayout::kSlots, ctx.stat, ctx.hist,
                    e.residence, ctx.truth.execution, ctx.stat.is_store() ? ctx.truth.store : 0,
                    flags);
  }
  return out;
}

namespace {

// Hash-bucketed exact dedup shared by the standalone op and the builder.
class Deduper {
public:
  // Returns true if the sample is new; stores it in `kept`.
  bool insert(EncodedSample&& s, std::vector<EncodedSample>& kept) {
    const uint64_t h = s.hash();
    auto& bucket = buckets_[h];
    for (uint32_t idx : bucket) {
      if (kept[idx] == s) return false;
    }
    bucket.push_back(static_cast<uint32_t>(kept.size()));
    kept.push_back(std::move(s));
    return true;
  }

private:
  std::unordered_map<uint64_t, std::vector<uint32_t>> buckets_;
};

}  // namespace

std::vector<EncodedSample> deduplicate(std::vector<EncodedSample> samples) {
  std::vector<EncodedSample> kept;
  kept.reserve(samples.size());
  Deduper dd;
  for (auto& s : samples) dd.insert(std::move(s), kept);
  return kept;
}

NormStats compute_norm_stats(std::span<const EncodedSample> train) {
  NormStats ns;
  std::array<double, FeatureLayout::kSlots> sum{}, sumsq{};
  uint64_t columns = 0;
  std::array<double, 3> lsum{}, lsumsq{};
  for (const auto& s : train) {
    const size_t cols = s.ctx_count + 1;
    for (size_t c = 0; c < cols; ++c) {
      const int32_t* col = s.values.data() + c * FeatureLayout::kSlots;
      for (int k = 0; k < FeatureLayout::kSlots; ++k) {
        const double v = col[k];
        sum[k] += v;
        sumsq[k] += v * v;
      }
    }
    columns += cols;
    // regression targets live in log1p space: the error metric is relative,
    // and latencies span four orders of magnitude
    const double lv[3] = {std::log1p(static_cast<double>(s.label.fetch)),
                          std::log1p(static_cast<double>(s.label.execution)),
                          std::log1p(static_cast<double>(s.label.store))};
    for (int k = 0; k < 3; ++k) {
      lsum[k] += lv[k];
      lsumsq[k] += lv[k] * lv[k];
    }
  }
  if (columns == 0) return ns;
  for (int k = 0; k < FeatureLayout::kSlots; ++k) {
    ns.mean[k] = sum[k] / static_cast<double>(columns);
    const double var = sumsq[k] / static_cast<double>(columns) - ns.mean[k] * ns.mean[k];
    ns.stdev[k] = std::max(1.0, std::sqrt(std::max(0.0, var)));
  }
  const double n = static_cast<double>(train.size());
  for (int k = 0; k < 3; ++k) {
    ns.label_mean[k] = lsum[k] / n;
    const double var = lsumsq[k] / n - ns.label_mean[k] * ns.label_mean[k];
    ns.label_stdev[k] = std::max(0.25, std::sqrt(std::max(0.0, var)));
  }
  return ns;
}

void expand_normalized(const EncodedSample& s, const FeatureLayout& layout, const NormStats& norm,
                       float* out) {
  const size_t width = static_cast<size_t>(layout.model_width());
  std::fill(out, out + width, 0.0f);
  const size_t cols = std::min<size_t>(s.ctx_count + 1, layout.columns());
  for (size_t c = 0; c < cols; ++c) {
    const int32_t* col = s.values.data() + c * FeatureLayout::kSlots;
    float* dst = out + c * FeatureLayout::kSlots;
    for (int k = 0; k < FeatureLayout::kSlots; ++k)
      dst[k] = static_cast<float>((col[k] - norm.mean[k]) / norm.stdev[k]);
  }
}

Dataset build_dataset(const std::vector<const std::vector<AnnotatedInstruction>*>& traces,
                      const FeatureLayout& layout, bool dedup, const SplitRatios& split,
                      DatasetBuildInfo* info) {
  if (split.train + split.validation + split.test != 100)
    throw Error("split ratios must sum to 100");
  Dataset ds;
  ds.layout = layout;

  std::vector<EncodedSample> unique;
  Deduper dd;
  uint64_t raw = 0;
  for (const auto* trace : traces) {
    auto samples = build_samples(*trace, layout.max_context);
    for (const auto& s : samples) {
      ++raw;
      EncodedSample enc = encode_raw(*trace, s, layout, ds.line_size, ds.page_size);
      if (dedup) {
        dd.insert(std::move(enc), unique);
      } else {
        unique.push_back(std::move(enc));
      }
    }
  }
  if (info) {
    info->raw_samples = raw;
    info->unique_samples = unique.size();
  }

  // Pseudo-random assignment by position in the deduplicated stream.
  for (size_t i = 0; i < unique.size(); ++i) {
    const uint64_t h = splitmix64(i ^ kSplitSalt) % 100;
    if (h < split.train) ds.train.push_back(std::move(unique[i]));
    else if (h < split.train + split.validation) ds.validation.push_back(std::move(unique[i]));
    else ds.test.push_back(std::move(unique[i]));
  }
  ds.norm = compute_norm_stats(ds.train);
  return ds;
}

namespace {
constexpr char kDatasetMagic[4] = {'I', 'L', 'D', 'S'};
constexpr uint32_t kDatasetVersion = 1;

void write_samples(BinaryWriter& w, const std::vector<EncodedSample>& v) {
  for (const auto& s : v) {
    w.write<uint32_t>(s.label.fetch);
    w.write<uint32_t>(s.label.execution);
    w.write<uint32_t>(s.label.store);
    w.write<uint8_t>(s.target_is_store);
    w.write<uint16_t>(s.ctx_count);
    for (int32_t x : s.values) w.write<int32_t>(x);
  }
}

void read_samples(BinaryReader& r, std::vector<EncodedSample>& v, uint64_t count) {
  v.resize(count);
  for (auto& s : v) {
    s.label.fetch = r.read<uint32_t>();
    s.label.execution = r.read<uint32_t>();
    s.label.store = r.read<uint32_t>();
    s.target_is_store = r.read<uint8_t>();
    s.ctx_count = r.read<uint16_t>();
    s.values.resize((s.ctx_count + 1) * FeatureLayout::kSlots);
    for (auto& x : s.values) x = r.read<int32_t>();
  }
}

}  // namespace

void save_dataset(const std::string& path, const Dataset& ds) {
  BinaryWriter w(path);
  w.write_bytes(kDatasetMagic, 4);
  w.write<uint32_t>(kDatasetVersion);
  w.write<uint32_t>(static_cast<uint32_t>(ds.layout.max_context));
  w.write<uint32_t>(ds.line_size);
  w.write<uint32_t>(ds.page_size);
  for (double m : ds.norm.mean) w.write_f64(m);
  for (double s : ds.norm.stdev) w.write_f64(s);
  for (double m : ds.norm.label_mean) w.write_f64(m);
  for (double s : ds.norm.label_stdev) w.write_f64(s);
  w.write<uint64_t>(ds.train.size());
  w.write<uint64_t>(ds.validation.size());
  w.write<uint64_t>(ds.test.size());
  write_samples(w, ds.train);
  write_samples(w, ds.validation);
  write_samples(w, ds.test);
  w.close();
}

Dataset load_dataset(const std::string& path) {
  BinaryReader r(path);
  char magic[4];
  r.read_bytes(magic, 4);
  if (std::memcmp(magic, kDatasetMagic, 4) != 0) throw Error("bad dataset magic in " + path);
  const uint32_t version = r.read<uint32_t>();
  if (version != kDatasetVersion)
    throw Error("unsupported dataset version " + std::to_string(version));
  Dataset ds;
  ds.layout.max_context = static_cast<int>(r.read<uint32_t>());
  ds.line_size = r.read<uint32_t>();
  ds.page_size = r.read<uint32_t>();
  for (double& m : ds.norm.mean) m = r.read_f64();
  for (double& s : ds.norm.stdev) s = r.read_f64();
  for (double& m : ds.norm.label_mean) m = r.read_f64();
  for (double& s : ds.norm.label_stdev) s = r.read_f64();
  const uint64_t n_train = r.read<uint64_t>();
  const uint64_t n_val = r.read<uint64_t>();
  const uint64_t n_test = r.read<uint64_t>();
  read_samples(r, ds.train, n_train);
  read_samples(r, ds.validation, n_val);
  read_samples(r, ds.test, n_test);
  return ds;
}

}  // namespace ilsim
