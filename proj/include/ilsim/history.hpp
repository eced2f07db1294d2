#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ilsim/trace.hpp"

namespace ilsim {

struct CacheLevelConfig {
  uint64_t size_bytes = 0;
  uint32_t ways = 1;
  uint32_t latency = 1;
};

struct HistoryConfig {
  uint32_t line_size = 64;
  CacheLevelConfig l1i{48 * 1024, 3, 1};
  CacheLevelConfig l1d{32 * 1024, 2, 5};
  CacheLevelConfig l2{1024 * 1024, 16, 29};
  // Two-stage TLBs per side, 4 KB pages; page walks probe a per-step walk
  // cache and fall through to the L2 cache via synthetic PTE addresses.
  uint32_t tlb_l1_entries = 64, tlb_l1_ways = 8;
  uint32_t tlb_l2_entries = 128, tlb_l2_ways = 8;
  uint32_t walk_cache_entries = 32, walk_cache_ways = 4;
  uint32_t walk_hit_latency = 1;
  uint32_t tlb_l2_latency = 2;
  uint32_t memory_latency = 100;
  // Bi-mode direction predictor plus a direct-mapped BTB.
  uint32_t bp_choice_bits = 12;
  uint32_t bp_global_bits = 12;
  uint32_t btb_bits = 10;

  void validate_or_throw() const;
};

enum class AccessKind { kIFetch, kLoad, kStore };

struct AccessResult {
  uint8_t level = 0;                     // 1..levels, levels+1 = memory
  uint8_t tlb_level = 0;                 // 1 = TLB L1 hit, 2 = TLB L2 hit, 3 = walked
  std::array<uint8_t, 3> walk_levels{};  // 0 = no walk; else 1 walk-cache, 2 L2, 3 memory
  uint8_t writebacks_l1 = 0;             // dirty evictions at L1 caused by this access
  uint8_t writebacks_l2 = 0;             // dirty evictions at L2 (access path only)
  uint8_t writebacks_walk = 0;           // dirty L2 evictions caused by the page walk

  uint8_t total_writebacks() const { return writebacks_l1 + writebacks_l2 + writebacks_walk; }
};

// Generic set-associative array of 64-bit keys with true-LRU replacement.
class SetAssoc {
public:
  SetAssoc(uint64_t sets, uint32_t ways);

  bool access(uint64_t key, bool dirty);  // hit: promote to MRU, or-in dirty
  // Inserts key as MRU. If a valid victim is evicted, reports it.
  void allocate(uint64_t key, bool dirty, uint64_t* victim_key, bool* victim_dirty);
  bool contains(uint64_t key) const;
  bool mark_dirty(uint64_t key);  // returns false if absent

  uint64_t sets() const { return sets_; }
  uint32_t ways() const { return ways_count_; }

private:
  struct Way {
    uint64_t tag = 0;
    uint64_t lru = 0;  // larger = more recently used
    bool valid = false;
    bool dirty = false;
  };
  uint64_t set_of(uint64_t key) const { return key % sets_; }
  uint64_t tag_of(uint64_t key) const { return key / sets_; }

  std::vector<Way> ways_;
  uint64_t sets_;
  uint32_t ways_count_;
  uint64_t tick_ = 0;
};

// Bi-mode direction predictor + direct-mapped BTB.
class BranchPredictor {
public:
  BranchPredictor(uint32_t choice_bits, uint32_t global_bits, uint32_t btb_bits);
  // Predicts, updates with the actual outcome, returns 1 on mispredict.
  int predict_and_update(uint64_t pc, bool conditional, bool taken, uint64_t target);

private:
  std::vector<uint8_t> choice_, taken_bank_, not_taken_bank_;
  struct BtbEntry {
    uint64_t tag = 0;
    uint64_t target = 0;
    bool valid = false;
  };
  std::vector<BtbEntry> btb_;
  uint64_t ghr_ = 0;
  uint64_t choice_mask_, global_mask_, btb_mask_;
};

// Long-term microarchitectural state: split L1s over a shared L2, two-stage
// TLBs and page-walk caches per side, branch predictor. Pure table lookups,
// no timing of its own.
class HistoryState {
public:
  explicit HistoryState(const HistoryConfig& cfg);

  AccessResult cache_access(uint64_t addr, AccessKind kind);
  int branch_predict_and_update(uint64_t pc, bool conditional, bool taken, uint64_t target);

  // All 14 history features for one instruction. Must be called in program
  // execution order. branch_taken/branch_target are ignored for non-branches.
  HistoryFeatures annotate(const StaticInstruction& si, bool branch_taken, uint64_t branch_target);

  // Cycles implied by an access result (cache level + TLB/walk steps), used
  // by the reference DES for timing.
  uint32_t access_delay(const AccessResult& r, bool data_side) const;

  const HistoryConfig& config() const { return cfg_; }

private:
  struct Side {
    SetAssoc tlb_l1, tlb_l2;
    std::array<SetAssoc, 3> walk;
  };

  AccessResult hierarchy_access(SetAssoc& l1, uint64_t addr, bool is_store, Side& side);
  // One page-walk step: walk cache, then L2 via a synthetic PTE line address.
  uint8_t walk_step(SetAssoc& cache, uint64_t pte_line, uint8_t* wb);

  HistoryConfig cfg_;
  SetAssoc l1i_, l1d_, l2_;
  Side iside_, dside_;
  BranchPredictor bp_;
};

uint64_t hash_history_config(const HistoryConfig& cfg);

}  // namespace ilsim
