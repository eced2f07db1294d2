#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <deque>
#include <map>
#include <vector>

#include "ilsim/common.hpp"
#include "ilsim/history.hpp"
#include "reference_models.hpp"

using namespace ilsim;

namespace {

using namespace ilsim::reference;

HistoryConfig small_config() {
  HistoryConfig c;
  c.l1i = {4 * 1024, 2, 1};
  c.l1d = {2 * 1024, 2, 5};
  c.l2 = {16 * 1024, 4, 29};
  c.tlb_l1_entries = 8;
  c.tlb_l1_ways = 4;
  c.tlb_l2_entries = 16;
  c.tlb_l2_ways = 4;
  c.walk_cache_entries = 8;
  c.walk_cache_ways = 2;
  return c;
}

}  // namespace

TEST_CASE("cold access misses to memory, repeat hits L1") {
  HistoryState h{HistoryConfig{}};
  const auto cold = h.cache_access(0x1234560, AccessKind::kLoad);
  CHECK(cold.level == 3);
  CHECK(cold.total_writebacks() == 0);
  const auto warm = h.cache_access(0x1234560, AccessKind::kLoad);
  CHECK(warm.level == 1);
  // inclusion: the line was allocated in L2 too; evict it from L1 and re-access
  HistoryConfig cfg;
  const uint64_t stride = cfg.l1d.size_bytes / cfg.l1d.ways;  // same L1 set, different tag
  h.cache_access(0x1234560 + stride, AccessKind::kLoad);
  h.cache_access(0x1234560 + 2 * stride, AccessKind::kLoad);
  const auto l2hit = h.cache_access(0x1234560, AccessKind::kLoad);
  CHECK(l2hit.level == 2);
}

TEST_CASE("2-way set: A,B,C then A misses again (LRU)") {
  SetAssoc cache(4, 2);
  auto touch = [&](uint64_t key) {
    if (!cache.access(key, false)) cache.allocate(key, false, nullptr, nullptr);
  };
  touch(0);   // set 0
  touch(4);   // set 0
  touch(8);   // set 0, evicts 0
  CHECK(!cache.contains(0));
  CHECK(cache.contains(4));
  CHECK(cache.contains(8));
  touch(4);   // refresh 4
  touch(12);  // evicts 8
  CHECK(cache.contains(4));
  CHECK(!cache.contains(8));
}

TEST_CASE("writebacks count dirty evictions") {
  HistoryConfig cfg = small_config();
  HistoryState h{cfg};
  const uint64_t stride = cfg.l1d.size_bytes / cfg.l1d.ways;
  h.cache_access(0x40000, AccessKind::kStore);  // dirty in L1
  const auto second = h.cache_access(0x40000 + stride, AccessKind::kLoad);
  CHECK(second.writebacks_l1 == 0);
  const auto evicting = h.cache_access(0x40000 + 2 * stride, AccessKind::kLoad);
  CHECK(evicting.writebacks_l1 == 1);  // the dirty line left L1
}

TEST_CASE("branch predictor: cold start, warmup, unconditional") {
  HistoryState h{HistoryConfig{}};
  // fresh state, first-ever branch taken -> mispredict (cold BTB)
  CHECK(h.branch_predict_and_update(0x400100, true, true, 0x400200) == 1);

  // same branch taken 10 consecutive times: mispredictions only among the
  // first 2 outcomes (hand-stepped 2-bit counters), then none
  HistoryState h2{HistoryConfig{}};
  int mispredicts_after_2 = 0;
  for (int i = 0; i < 10; ++i) {
    const int m = h2.branch_predict_and_update(0x400300, true, true, 0x400500);
    if (i >= 2) mispredicts_after_2 += m;
  }
  CHECK(mispredicts_after_2 == 0);

  // unconditional direct branch with warm BTB -> no mispredict
  HistoryState h3{HistoryConfig{}};
  h3.branch_predict_and_update(0x400700, false, true, 0x400900);
  CHECK(h3.branch_predict_and_update(0x400700, false, true, 0x400900) == 0);
}

TEST_CASE("branch predictor matches the reference on random sequences") {
  HistoryConfig cfg;
  cfg.bp_choice_bits = 6;
  cfg.bp_global_bits = 6;
  cfg.btb_bits = 4;
  HistoryState h{cfg};
  RefBimode ref(6, 6, 4);
  Rng rng(2024);
  for (int i = 0; i < 10000; ++i) {
    const uint64_t pc = 0x400000 + rng.next_below(256) * 4;
    const bool conditional = rng.next_bool(0.8);
    const bool taken = conditional ? rng.next_bool(0.6) : true;
    const uint64_t target = 0x400000 + rng.next_below(512) * 4;
    CHECK(h.branch_predict_and_update(pc, conditional, taken, target) ==
          ref.run(pc, conditional, taken, target));
  }
}

TEST_CASE("annotate: feature definitions") {
  HistoryState h{HistoryConfig{}};
  StaticInstruction alu;
  alu.pc = 0x400000;
  alu.op[kOpOpClass] = kIntAlu;
  h.annotate(alu, false, 0);  // warm the I-side
  const auto feats = h.annotate(alu, false, 0);
  CHECK(feats.mispredict() == 0);
  CHECK(feats.fetch_level() == 1);
  for (int i = 2; i < kHistoryFeatureCount; ++i) CHECK(feats.v[i] == 0);

  // load with an L2 data hit -> data_level 2
  HistoryConfig cfg;
  StaticInstruction load;
  load.pc = 0x400004;
  load.op[kOpOpClass] = kLoad;
  load.op[kOpIsLoad] = 1;
  load.has_data = true;
  load.data_addr = 0x80000;
  load.data_size = 8;
  const uint64_t stride = cfg.l1d.size_bytes / cfg.l1d.ways;
  h.annotate(load, false, 0);  // memory; allocates L1+L2
  load.data_addr = 0x80000 + stride;
  h.annotate(load, false, 0);
  load.data_addr = 0x80000 + 2 * stride;
  h.annotate(load, false, 0);  // evicts the first line from L1
  load.data_addr = 0x80000;
  const auto l2 = h.annotate(load, false, 0);
  CHECK(l2.data_level() == 2);
}

TEST_CASE("full access stream matches the brute-force reference") {
  const HistoryConfig cfg = small_config();
  HistoryState h{cfg};
  RefHistory ref(cfg);
  Rng rng(77);
  for (int i = 0; i < 10000; ++i) {
    const AccessKind kind = static_cast<AccessKind>(rng.next_below(3));
    // small footprint so sets collide and evictions are frequent
    const uint64_t addr = rng.next_below(64 * 1024) + (rng.next_bool(0.2) ? (1ull << 21) : 0);
    const AccessResult got = h.cache_access(addr, kind);
    const RefResult want = ref.access(addr, kind);
    REQUIRE(got.level == want.level);
    for (int k = 0; k < 3; ++k) REQUIRE(got.walk_levels[k] == want.walk[k]);
    REQUIRE(got.writebacks_l1 == want.wb_l1);
    REQUIRE(got.writebacks_l2 == want.wb_l2);
    REQUIRE(got.writebacks_walk == want.wb_walk);
  }
}

TEST_CASE("identical access sequences give identical features") {
  auto run = [] {
    HistoryState h{HistoryConfig{}};
    Rng rng(5);
    uint64_t acc = 0;
    for (int i = 0; i < 2000; ++i) {
      const auto r = h.cache_access(rng.next_below(1 << 22), static_cast<AccessKind>(i % 3));
      acc = fnv1a64(&r, sizeof(r), acc);
    }
    return acc;
  };
  CHECK(run() == run());
}
