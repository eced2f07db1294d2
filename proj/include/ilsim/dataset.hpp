#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ilsim/trace.hpp"

namespace ilsim {

// One reconstructed sample: target instruction plus its in-flight context,
// newest first, with residences at the target's fetch tick.
struct SampleRef {
  uint32_t target = 0;
  struct Entry {
    uint32_t index;
    uint32_t residence;
  };
  std::vector<Entry> context;
};

std::vector<SampleRef> build_samples(std::span<const AnnotatedInstruction> trace, int max_context);

// [same PC cache line, same data addr, same data line, same data page, same PC page].
// Data flags require both instructions to be memory ops.
std::array<uint8_t, FeatureLayout::kDepFlagCount> memory_dependency_flags(
    const StaticInstruction& target, const StaticInstruction& ctx, uint32_t line_size,
    uint32_t page_size);

// Raw integer features for one 50-slot column.
void fill_raw_column(int32_t* out, const StaticInstruction& si, const HistoryFeatures& h,
                     int64_t residence, int64_t execution, int64_t store,
                     const std::array<uint8_t, FeatureLayout::kDepFlagCount>& flags);

struct EncodedSample {
  LatencyTriple label;
  uint8_t target_is_store = 0;
  uint16_t ctx_count = 0;
  std::vector<int32_t> values;  // (ctx_count + 1) * 50, column-major by instruction

  bool operator==(const EncodedSample&) const = default;
  uint64_t hash() const;
};

EncodedSample encode_raw(std::span<const AnnotatedInstruction> trace, const SampleRef& sample,
                         const FeatureLayout& layout, uint32_t line_size, uint32_t page_size);

// Exact-duplicate removal (input and label), first occurrence kept.
std::vector<EncodedSample> deduplicate(std::vector<EncodedSample> samples);

// Per-slot standardization statistics; stdev floored at 1.
struct NormStats {
  std::array<double, FeatureLayout::kSlots> mean{};
  std::array<double, FeatureLayout::kSlots> stdev;
  std::array<double, 3> label_mean{};
  std::array<double, 3> label_stdev;

  NormStats() {
    stdev.fill(1.0);
    label_stdev.fill(1.0);
  }
  bool operator==(const NormStats&) const = default;
};

NormStats compute_norm_stats(std::span<const EncodedSample> train);

// Expands a sample into the normalized model input of layout.model_width()
// floats; columns beyond the context stay exactly zero.
void expand_normalized(const EncodedSample& s, const FeatureLayout& layout, const NormStats& norm,
                       float* out);

struct Dataset {
  FeatureLayout layout;
  uint32_t line_size = 64;
  uint32_t page_size = 4096;
  NormStats norm;
  std::vector<EncodedSample> train, validation, test;

  size_t total() const { return train.size() + validation.size() + test.size(); }
};

struct SplitRatios {
  uint32_t train = 90, validation = 5, test = 5;
};

struct DatasetBuildInfo {
  uint64_t raw_samples = 0;
  uint64_t unique_samples = 0;
};

// Builds samples from one or more traces, optionally deduplicating on the
// fly, splits by sample-index hash, computes normalization from the training
// partition.
Dataset build_dataset(const std::vector<const std::vector<AnnotatedInstruction>*>& traces,
                      const FeatureLayout& layout, bool dedup, const SplitRatios& split,
                      DatasetBuildInfo* info = nullptr);

void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

}  // namespace ilsim
