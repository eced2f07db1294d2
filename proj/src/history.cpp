#include "ilsim/history.hpp"

namespace ilsim {

namespace {
constexpr uint32_t kPageBits = 12;  // 4 KB pages
// Synthetic PTE line keys live far above any workload data or code lines.
constexpr uint64_t kPteBase = 0xAAULL << 56;
}  // namespace

void HistoryConfig::validate_or_throw() const {
  auto check_cache = [&](const CacheLevelConfig& c, const char* name) {
    if (c.size_bytes == 0 || c.ways == 0) throw Error(std::string(name) + ": zero size or ways");
    if (c.size_bytes % (static_cast<uint64_t>(c.ways) * line_size) != 0)
      throw Error(std::string(name) + ": size not a multiple of ways * line_size");
  };
  if (line_size == 0 || (line_size & (line_size - 1)) != 0)
    throw Error("line_size must be a power of two");
  check_cache(l1i, "l1i");
  check_cache(l1d, "l1d");
  check_cache(l2, "l2");
  if (tlb_l1_entries % tlb_l1_ways != 0 || tlb_l2_entries % tlb_l2_ways != 0 ||
      walk_cache_entries % walk_cache_ways != 0)
    throw Error("tlb/walk cache entries must be a multiple of ways");
  if (bp_choice_bits == 0 || bp_choice_bits > 30 || bp_global_bits == 0 || bp_global_bits > 30 ||
      btb_bits == 0 || btb_bits > 30)
    throw Error("branch predictor table bits out of range");
}

SetAssoc::SetAssoc(uint64_t sets, uint32_t ways) : sets_(sets), ways_count_(ways) {
  if (sets == 0 || ways == 0) throw Error("SetAssoc: zero sets or ways");
  ways_.resize(sets * ways);
}

bool SetAssoc::access(uint64_t key, bool dirty) {
  const uint64_t base = set_of(key) * ways_count_;
  const uint64_t tag = tag_of(key);
  for (uint32_t w = 0; w < ways_count_; ++w) {
    auto& way = ways_[base + w];
    if (way.valid && way.tag == tag) {
      way.lru = ++tick_;
      way.dirty = way.dirty || dirty;
      return true;
    }
  }
  return false;
}

void SetAssoc::allocate(uint64_t key, bool dirty, uint64_t* victim_key, bool* victim_dirty) {
  const uint64_t set = set_of(key);
  const uint64_t base = set * ways_count_;
  const uint64_t tag = tag_of(key);
  uint32_t victim = 0;
  for (uint32_t w = 0; w < ways_count_; ++w) {
    auto& way = ways_[base + w];
    if (!way.valid) {
      victim = w;
      break;
    }
    if (way.lru < ways_[base + victim].lru) victim = w;
  }
  auto& way = ways_[base + victim];
  if (way.valid) {
    if (victim_key) *victim_key = way.tag * sets_ + set;
    if (victim_dirty) *victim_dirty = way.dirty;
  } else {
    if (victim_dirty) *victim_dirty = false;
  }
  way.tag = tag;
  way.valid = true;
  way.dirty = dirty;
  way.lru = ++tick_;
}

bool SetAssoc::contains(uint64_t key) const {
  const uint64_t base = set_of(key) * ways_count_;
  const uint64_t tag = tag_of(key);
  for (uint32_t w = 0; w < ways_count_; ++w) {
    const auto& way = ways_[base + w];
    if (way.valid && way.tag == tag) return true;
  }
  return false;
}

bool SetAssoc::mark_dirty(uint64_t key) {
  const uint64_t base = set_of(key) * ways_count_;
  const uint64_t tag = tag_of(key);
  for (uint32_t w = 0; w < ways_count_; ++w) {
    auto& way = ways_[base + w];
    if (way.valid && way.tag == tag) {
      way.dirty = true;
      return true;
    }
  }
  return false;
}

BranchPredictor::BranchPredictor(uint32_t choice_bits, uint32_t global_bits, uint32_t btb_bits)
    : choice_(1ULL << choice_bits, 1),
      taken_bank_(1ULL << global_bits, 2),     // weakly taken
      not_taken_bank_(1ULL << global_bits, 1), // weakly not taken
      btb_(1ULL << btb_bits),
      choice_mask_((1ULL << choice_bits) - 1),
      global_mask_((1ULL << global_bits) - 1),
      btb_mask_((1ULL << btb_bits) - 1) {}

int BranchPredictor::predict_and_update(uint64_t pc, bool conditional, bool taken,
                                        uint64_t target) {
  const uint64_t choice_idx = (pc >> 2) & choice_mask_;
  const uint64_t dir_idx = ((pc >> 2) ^ ghr_) & global_mask_;

  bool predicted_taken = true;
  if (conditional) {
    const bool use_taken_bank = choice_[choice_idx] >= 2;
    auto& bank = use_taken_bank ? taken_bank_ : not_taken_bank_;
    predicted_taken = bank[dir_idx] >= 2;

    auto bump = [](uint8_t& c, bool up) {
      if (up) {
        if (c < 3) ++c;
      } else if (c > 0) {
        --c;
      }
    };
    // Bi-mode update: the chosen bank always learns; the choice table learns
    // unless the chosen bank was right while the choice direction disagreed.
    const bool bank_correct = predicted_taken == taken;
    const bool choice_agrees = (choice_[choice_idx] >= 2) == taken;
    bump(bank[dir_idx], taken);
    if (!(bank_correct && !choice_agrees)) bump(choice_[choice_idx], taken);
    ghr_ = ((ghr_ << 1) | (taken ? 1 : 0)) & global_mask_;
  }

  bool target_hit = true;
  if (taken) {
    auto& entry = btb_[(pc >> 2) & btb_mask_];
    target_hit = entry.valid && entry.tag == pc && entry.target == target;
    entry.valid = true;
    entry.tag = pc;
    entry.target = target;
  }

  const bool mispredict = (predicted_taken != taken) || (taken && !target_hit);
  return mispredict ? 1 : 0;
}

HistoryState::HistoryState(const HistoryConfig& cfg)
    : cfg_((cfg.validate_or_throw(), cfg)),
      l1i_(cfg.l1i.size_bytes / (static_cast<uint64_t>(cfg.l1i.ways) * cfg.line_size), cfg.l1i.ways),
      l1d_(cfg.l1d.size_bytes / (static_cast<uint64_t>(cfg.l1d.ways) * cfg.line_size), cfg.l1d.ways),
      l2_(cfg.l2.size_bytes / (static_cast<uint64_t>(cfg.l2.ways) * cfg.line_size), cfg.l2.ways),
      iside_{SetAssoc(cfg.tlb_l1_entries / cfg.tlb_l1_ways, cfg.tlb_l1_ways),
             SetAssoc(cfg.tlb_l2_entries / cfg.tlb_l2_ways, cfg.tlb_l2_ways),
             {SetAssoc(cfg.walk_cache_entries / cfg.walk_cache_ways, cfg.walk_cache_ways),
              SetAssoc(cfg.walk_cache_entries / cfg.walk_cache_ways, cfg.walk_cache_ways),
              SetAssoc(cfg.walk_cache_entries / cfg.walk_cache_ways, cfg.walk_cache_ways)}},
      dside_{SetAssoc(cfg.tlb_l1_entries / cfg.tlb_l1_ways, cfg.tlb_l1_ways),
             SetAssoc(cfg.tlb_l2_entries / cfg.tlb_l2_ways, cfg.tlb_l2_ways),
             {SetAssoc(cfg.walk_cache_entries / cfg.walk_cache_ways, cfg.walk_cache_ways),
              SetAssoc(cfg.walk_cache_entries / cfg.walk_cache_ways, cfg.walk_cache_ways),
              SetAssoc(cfg.walk_cache_entries / cfg.walk_cache_ways, cfg.walk_cache_ways)}},
      bp_(cfg.bp_choice_bits, cfg.bp_global_bits, cfg.btb_bits) {}

uint8_t HistoryState::walk_step(SetAssoc& cache, uint64_t pte_line, uint8_t* wb) {
  if (cache.access(pte_line, false)) return 1;
  cache.allocate(pte_line, false, nullptr, nullptr);
  if (l2_.access(pte_line, false)) return 2;
  uint64_t victim;
  bool victim_dirty = false;
  l2_.allocate(pte_line, false, &victim, &victim_dirty);
  if (victim_dirty) ++*wb;
  return 3;
}

AccessResult HistoryState::hierarchy_access(SetAssoc& l1, uint64_t addr, bool is_store,
                                            Side& side) {
  AccessResult r;
  const uint64_t line = addr / cfg_.line_size;
  const uint64_t vpn = addr >> kPageBits;

  // Address translation first.
  if (side.tlb_l1.access(vpn, false)) {
    r.tlb_level = 1;
  } else if (side.tlb_l2.access(vpn, false)) {
    r.tlb_level = 2;
    side.tlb_l1.allocate(vpn, false, nullptr, nullptr);
  } else {
    r.tlb_level = 3;
    // Three-step radix walk; step k translates progressively lower vpn bits.
    for (int k = 0; k < 3; ++k) {
      const uint64_t pte_line =
          kPteBase + (static_cast<uint64_t>(k + 1) << 52) + (vpn >> (9 * (2 - k)));
      r.walk_levels[k] = walk_step(side.walk[k], pte_line, &r.writebacks_walk);
    }
    side.tlb_l2.allocate(vpn, false, nullptr, nullptr);
    side.tlb_l1.allocate(vpn, false, nullptr, nullptr);
  }

  // Then the cache lookup.
  if (l1.access(line, is_store)) {
    r.level = 1;
    return r;
  }
  const bool l2_hit = l2_.access(line, false);
  r.level = l2_hit ? 2 : 3;
  if (!l2_hit) {
    uint64_t victim;
    bool victim_dirty = false;
    l2_.allocate(line, false, &victim, &victim_dirty);
    if (victim_dirty) ++r.writebacks_l2;
  }
  uint64_t victim;
  bool victim_dirty = false;
  l1.allocate(line, is_store, &victim, &victim_dirty);
  if (victim_dirty) {
    ++r.writebacks_l1;
    // Write the victim back into L2 if it still holds the line; otherwise the
    // data goes straight to memory without allocating.
    l2_.mark_dirty(victim);
  }
  return r;
}

AccessResult HistoryState::cache_access(uint64_t addr, AccessKind kind) {
  switch (kind) {
    case AccessKind::kIFetch:
      return hierarchy_access(l1i_, addr, false, iside_);
    case AccessKind::kLoad:
      return hierarchy_access(l1d_, addr, false, dside_);
    case AccessKind::kStore:
      return hierarchy_access(l1d_, addr, true, dside_);
  }
  throw Error("bad access kind");
}

int HistoryState::branch_predict_and_update(uint64_t pc, bool conditional, bool taken,
                                            uint64_t target) {
  return bp_.predict_and_update(pc, conditional, taken, target);
}

HistoryFeatures HistoryState::annotate(const StaticInstruction& si, bool branch_taken,
                                       uint64_t branch_target) {
  HistoryFeatures h;
  const AccessResult fetch = cache_access(si.pc, AccessKind::kIFetch);
  h.fetch_level() = fetch.level;
  for (int k = 0; k < 3; ++k) h.fetch_walk(k) = fetch.walk_levels[k];
  h.fetch_writeback(0) = fetch.writebacks_l1;
  // Fetch has two writeback slots; walk-caused L2 evictions fold into slot 1.
  h.fetch_writeback(1) = static_cast<uint16_t>(fetch.writebacks_l2 + fetch.writebacks_walk);

  if (si.is_memory_op()) {
    const AccessResult data =
        cache_access(si.data_addr, si.is_store() ? AccessKind::kStore : AccessKind::kLoad);
    h.data_level() = data.level;
    for (int k = 0; k < 3; ++k) h.data_walk(k) = data.walk_levels[k];
    h.data_writeback(0) = data.writebacks_l1;
    h.data_writeback(1) = data.writebacks_l2;
    h.data_writeback(2) = data.writebacks_walk;
  }

  if (si.is_branch()) {
    h.mispredict() = static_cast<uint16_t>(
        branch_predict_and_update(si.pc, si.is_conditional(), branch_taken, branch_target));
  }
  return h;
}

uint32_t HistoryState::access_delay(const AccessResult& r, bool data_side) const {
  uint32_t d = 0;
  const auto& l1 = data_side ? cfg_.l1d : cfg_.l1i;
  switch (r.level) {
    case 1: d = l1.latency; break;
    case 2: d = cfg_.l2.latency; break;
    default: d = cfg_.memory_latency; break;
  }
  if (r.tlb_level == 2) d += cfg_.tlb_l2_latency;
  for (uint8_t wl : r.walk_levels) {
    if (wl == 1) d += cfg_.walk_hit_latency;
    else if (wl == 2) d += cfg_.l2.latency;
    else if (wl == 3) d += cfg_.memory_latency;
  }
  return d;
}

uint64_t hash_history_config(const HistoryConfig& c) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](uint64_t v) { h = fnv1a64(&v, sizeof(v), h); };
  mix(c.line_size);
  for (const auto* lvl : {&c.l1i, &c.l1d, &c.l2}) {
    mix(lvl->size_bytes);
    mix(lvl->ways);
    mix(lvl->latency);
  }
  mix(c.tlb_l1_entries);
  mix(c.tlb_l1_ways);
  mix(c.tlb_l2_entries);
  mix(c.tlb_l2_ways);
  mix(c.walk_cache_entries);
  mix(c.walk_cache_ways);
  mix(c.walk_hit_latency);
  mix(c.tlb_l2_latency);
  mix(c.memory_latency);
  mix(c.bp_choice_bits);
  mix(c.bp_global_bits);
  mix(c.btb_bits);
  return h;
}

}  // namespace ilsim
