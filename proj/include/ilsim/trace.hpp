#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ilsim/common.hpp"

namespace ilsim {

// Operation class codes, slot 0 of the op feature vector.
enum OpClass : uint8_t {
  kIntAlu = 0,
  kIntMult = 1,
  kIntDiv = 2,
  kFpAlu = 3,
  kFpMult = 4,
  kFpDiv = 5,
  kSimd = 6,
  kLoad = 7,
  kStore = 8,
  kBranch = 9,
};
constexpr int kOpClassCount = 10;

// Indices into StaticInstruction::op.
enum OpFeature : int {
  kOpOpClass = 0,
  kOpIsLoad = 1,
  kOpIsStore = 2,
  kOpIsBranch = 3,
  kOpIsDirectBranch = 4,
  kOpIsIndirectBranch = 5,
  kOpIsConditional = 6,
  kOpIsCall = 7,
  kOpIsReturn = 8,
  kOpIsMemBarrier = 9,
  kOpIsSerializing = 10,
  kOpIsFp = 11,
  kOpSimdWidth = 12,
};
constexpr int kOpFeatureCount = 13;
constexpr int kSrcRegCount = 8;
constexpr int kDstRegCount = 6;

struct StaticInstruction {
  uint64_t pc = 0;
  std::array<uint8_t, kOpFeatureCount> op{};
  std::array<uint16_t, kSrcRegCount> src{};  // 0 = none, register r stored as r+1
  std::array<uint16_t, kDstRegCount> dst{};
  bool has_data = false;
  uint64_t data_addr = 0;
  uint16_t data_size = 0;

  uint8_t op_class() const { return op[kOpOpClass]; }
  bool is_load() const { return op[kOpIsLoad] != 0; }
  bool is_store() const { return op[kOpIsStore] != 0; }
  bool is_branch() const { return op[kOpIsBranch] != 0; }
  bool is_conditional() const { return op[kOpIsConditional] != 0; }
  bool is_mem_barrier() const { return op[kOpIsMemBarrier] != 0; }
  bool is_serializing() const { return op[kOpIsSerializing] != 0; }
  bool is_memory_op() const { return is_load() || is_store(); }
};

// The 14 history features. Slot order follows the feature layout:
// [mispredict, fetch_level, fetch_walk x3, fetch_wb x2,
//  data_level, data_walk x3, data_wb x3]
struct HistoryFeatures {
  std::array<uint16_t, 14> v{};

  uint16_t& mispredict() { return v[0]; }
  uint16_t& fetch_level() { return v[1]; }
  uint16_t& fetch_walk(int i) { return v[2 + i]; }
  uint16_t& fetch_writeback(int i) { return v[5 + i]; }
  uint16_t& data_level() { return v[7]; }
  uint16_t& data_walk(int i) { return v[8 + i]; }
  uint16_t& data_writeback(int i) { return v[11 + i]; }

  uint16_t mispredict() const { return v[0]; }
  uint16_t fetch_level() const { return v[1]; }
  uint16_t data_level() const { return v[7]; }

  bool operator==(const HistoryFeatures&) const = default;
};
constexpr int kHistoryFeatureCount = 14;

struct LatencyTriple {
  uint32_t fetch = 0;
  uint32_t execution = 1;
  uint32_t store = 0;

  bool operator==(const LatencyTriple&) const = default;
};

struct AnnotatedInstruction {
  StaticInstruction stat;
  HistoryFeatures hist;
  LatencyTriple truth;
  uint64_t fetch_tick = 0;

  // Tick at which the instruction leaves the machine for context purposes:
  // stores exit when the store queue write completes, others at ROB readiness.
  uint64_t exit_tick() const {
    return fetch_tick + (stat.is_store() ? truth.store : truth.execution);
  }
};

// Canonical 50-slot feature layout shared by the dataset and the simulator.
struct FeatureLayout {
  static constexpr int kSlots = 50;
  static constexpr int kOpBase = 0;                          // 13 op features
  static constexpr int kRegBase = kOpFeatureCount;           // 8 src + 6 dst
  static constexpr int kHistBase = kRegBase + 14;            // 14 history
  static constexpr int kResidence = kHistBase + 14;          // 41
  static constexpr int kExecution = kResidence + 1;          // 42
  static constexpr int kStore = kExecution + 1;              // 43
  static constexpr int kDepFlagBase = kStore + 1;            // 44..48
  static constexpr int kDepFlagCount = 5;
  static constexpr int kReserved = kDepFlagBase + kDepFlagCount;  // 49

  int max_context = 110;

  int columns() const { return max_context + 1; }
  int model_width() const { return kSlots * columns(); }

  bool operator==(const FeatureLayout&) const = default;
};
static_assert(FeatureLayout::kReserved == 49);
static_assert(kOpFeatureCount + kSrcRegCount + kDstRegCount + kHistoryFeatureCount + 3 +
                  FeatureLayout::kDepFlagCount + 1 ==
              FeatureLayout::kSlots);

// Returns an error description for the first violated invariant, or nullopt.
std::optional<std::string> validate(const StaticInstruction& si);
std::optional<std::string> validate(const AnnotatedInstruction& ai);

struct TraceHeader {
  uint32_t version = 1;
  uint64_t config_hash = 0;
  uint64_t instruction_count = 0;
};

struct Trace {
  TraceHeader header;
  std::vector<AnnotatedInstruction> instructions;
};

void write_trace(const std::string& path, std::span<const AnnotatedInstruction> instructions,
                 uint64_t config_hash = 0);
Trace read_trace(const std::string& path);

// Program files hold bare StaticInstruction sequences (workload generator
// output, reference DES input).
void write_program(const std::string& path, std::span<const StaticInstruction> instructions);
std::vector<StaticInstruction> read_program(const std::string& path);

}  // namespace ilsim
