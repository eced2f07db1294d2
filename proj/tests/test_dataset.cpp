#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "ilsim/dataset.hpp"
#include "reference_models.hpp"
#include "ilsim/des.hpp"
#include "ilsim/workload.hpp"

using namespace ilsim;

namespace {

std::vector<AnnotatedInstruction> des_trace(WorkloadKind kind, uint64_t n, uint64_t seed) {
  WorkloadSpec spec;
  spec.kind = kind;
  spec.op_class_mix = WorkloadSpec::default_mix(kind);
  spec.instruction_count = n;
  spec.seed = seed;
  spec.memory_footprint_bytes = 8ull << 20;
  return des_simulate(generate(spec), ProcessorConfig{}).trace;
}

AnnotatedInstruction stub_instruction(uint64_t tick, uint32_t fetch, uint32_t exec) {
  AnnotatedInstruction ai;
  ai.stat.pc = 0x400000 + tick * 4;
  ai.stat.op[kOpOpClass] = kIntAlu;
  ai.hist.fetch_level() = 1;
  ai.truth = {fetch, exec, 0};
  ai.fetch_tick = tick;
  return ai;
}

}  // namespace

TEST_CASE("first instruction has empty context") {
  const auto trace = des_trace(WorkloadKind::kMix, 100, 1);
  const auto samples = build_samples(trace, 110);
  REQUIRE(samples.size() == 100);
  CHECK(samples[0].context.empty());
}

TEST_CASE("forced membership on a three-instruction trace") {
  std::vector<AnnotatedInstruction> trace{stub_instruction(0, 0, 10), stub_instruction(1, 1, 10),
                                          stub_instruction(2, 1, 10)};
  const auto samples = build_samples(trace, 110);
  REQUIRE(samples.size() == 3);
  REQUIRE(samples[2].context.size() == 2);
  CHECK(samples[2].context[0].index == 1);
  CHECK(samples[2].context[0].residence == 1);
  CHECK(samples[2].context[1].index == 0);
  CHECK(samples[2].context[1].residence == 2);
}

TEST_CASE("membership matches the quadratic oracle on a 10k trace") {
  const auto trace = des_trace(WorkloadKind::kMix, 10000, 3);
  const auto fast = build_samples(trace, 110);
  const auto slow = reference::brute_force_samples(trace, 110);
  REQUIRE(fast.size() == slow.size());
  for (size_t i = 0; i < fast.size(); ++i) {
    REQUIRE(fast[i].context.size() == slow[i].context.size());
    for (size_t c = 0; c < fast[i].context.size(); ++c) {
      REQUIRE(fast[i].context[c].index == slow[i].context[c].index);
      REQUIRE(fast[i].context[c].residence == slow[i].context[c].residence);
    }
  }
}

TEST_CASE("context residences strictly increase from newest to oldest") {
  const auto trace = des_trace(WorkloadKind::kBranchy, 4000, 9);
  for (const auto& s : build_samples(trace, 110)) {
    for (size_t c = 1; c < s.context.size(); ++c)
      CHECK(s.context[c].residence >= s.context[c - 1].residence);
  }
}

TEST_CASE("monotonicity violations are reported") {
  std::vector<AnnotatedInstruction> trace{stub_instruction(5, 5, 4), stub_instruction(3, 1, 4)};
  CHECK_THROWS_AS(build_samples(trace, 110), Error);
}

TEST_CASE("memory dependency flags") {
  StaticInstruction load;
  load.op[kOpOpClass] = kLoad;
  load.op[kOpIsLoad] = 1;
  load.has_data = true;
  load.data_size = 8;

  SUBCASE("identical pc and data address: all five set") {
    StaticInstruction a = load;
    a.pc = 0x1000;
    a.data_addr = 0x2000;
    const auto f = memory_dependency_flags(a, a, 64, 4096);
    for (int i = 0; i < 5; ++i) CHECK(f[i] == 1);
  }
  SUBCASE("two non-memory ops in different pages: all zero") {
    StaticInstruction a, b;
    a.pc = 0x1000;
    b.pc = 0x9000;
    const auto f = memory_dependency_flags(a, b, 64, 4096);
    for (int i = 0; i < 5; ++i) CHECK(f[i] == 0);
  }
  SUBCASE("0x1040 load vs 0x1000 store: page shared, line and address not") {
    StaticInstruction a = load;
    a.pc = 0x400000;
    a.data_addr = 0x1040;
    StaticInstruction b = load;
    b.op[kOpOpClass] = kStore;
    b.op[kOpIsLoad] = 0;
    b.op[kOpIsStore] = 1;
    b.pc = 0x400004;
    b.data_addr = 0x1000;
    const auto f = memory_dependency_flags(a, b, 64, 4096);
    CHECK(f[1] == 0);
    CHECK(f[2] == 0);
    CHECK(f[3] == 1);
    CHECK(f[0] == 1);  // same 64-byte instruction line
    CHECK(f[4] == 1);
  }
}

TEST_CASE("deduplicate") {
  const auto trace = des_trace(WorkloadKind::kLoopKernel, 600, 5);
  const auto samples = build_samples(trace, 110);
  std::vector<EncodedSample> encoded;
  for (const auto& s : samples) encoded.push_back(encode_raw(trace, s, FeatureLayout{}, 64, 4096));

  SUBCASE("all-identical collapses to one") {
    std::vector<EncodedSample> k_copies(10, encoded[0]);
    CHECK(deduplicate(k_copies).size() == 1);
  }
  SUBCASE("no duplicates stays unchanged") {
    std::vector<EncodedSample> three{encoded[0], encoded[1], encoded[2]};
    if (!(three[0] == three[1]) && !(three[1] == three[2]) && !(three[0] == three[2]))
      CHECK(deduplicate(three).size() == 3);
  }
  SUBCASE("count matches the pairwise brute-force oracle, order stable") {
    const auto kept = deduplicate(encoded);
    // quadratic first-occurrence scan
    std::vector<EncodedSample> oracle;
    for (const auto& s : encoded) {
      bool seen = false;
      for (const auto& o : oracle)
        if (o == s) {
          seen = true;
          break;
        }
      if (!seen) oracle.push_back(s);
    }
    REQUIRE(kept.size() == oracle.size());
    for (size_t i = 0; i < kept.size(); ++i) REQUIRE(kept[i] == oracle[i]);
    CHECK(kept.size() < encoded.size());  // a loop kernel repeats itself
  }
}

TEST_CASE("encoding and normalization") {
  const auto trace = des_trace(WorkloadKind::kMix, 3000, 13);
  const auto samples = build_samples(trace, 110);
  std::vector<const std::vector<AnnotatedInstruction>*> refs{&trace};
  const Dataset ds = build_dataset(refs, FeatureLayout{}, true, SplitRatios{});

  SUBCASE("model input width is 5550 with defaults") {
    CHECK(ds.layout.model_width() == 5550);
    std::vector<float> input(ds.layout.model_width());
    expand_normalized(ds.train[0], ds.layout, ds.norm, input.data());
  }
  SUBCASE("empty context leaves every column but the first zero") {
    const auto enc = encode_raw(trace, samples[0], ds.layout, 64, 4096);
    REQUIRE(enc.ctx_count == 0);
    std::vector<float> input(ds.layout.model_width());
    expand_normalized(enc, ds.layout, ds.norm, input.data());
    for (int i = FeatureLayout::kSlots; i < ds.layout.model_width(); ++i)
      REQUIRE(input[i] == 0.0f);
  }
  SUBCASE("de-normalizing recovers raw integers exactly") {
    const auto& s = ds.train[1];
    std::vector<float> input(ds.layout.model_width());
    expand_normalized(s, ds.layout, ds.norm, input.data());
    for (int c = 0; c <= s.ctx_count; ++c) {
      for (int k = 0; k < FeatureLayout::kSlots; ++k) {
        const double denorm =
            input[c * FeatureLayout::kSlots + k] * ds.norm.stdev[k] + ds.norm.mean[k];
        REQUIRE(std::llround(denorm) == s.values[c * FeatureLayout::kSlots + k]);
      }
    }
  }
  SUBCASE("target column zeroes latency and flag slots") {
    for (const auto& s : ds.train) {
      REQUIRE(s.values[FeatureLayout::kResidence] == 0);
      REQUIRE(s.values[FeatureLayout::kExecution] == 0);
      REQUIRE(s.values[FeatureLayout::kStore] == 0);
      for (int f = 0; f < FeatureLayout::kDepFlagCount; ++f)
        REQUIRE(s.values[FeatureLayout::kDepFlagBase + f] == 0);
      REQUIRE(s.values[FeatureLayout::kReserved] == 0);
    }
  }
  SUBCASE("encoding is injective on deduplicated samples") {
    std::set<uint64_t> hashes;
    size_t n = 0;
    for (const auto* part : {&ds.train, &ds.validation, &ds.test}) {
      for (const auto& s : *part) {
        std::vector<float> input(ds.layout.model_width());
        expand_normalized(s, ds.layout, ds.norm, input.data());
        uint64_t h = fnv1a64(input.data(), input.size() * sizeof(float));
        h = fnv1a64(&s.label, sizeof(s.label), h);
        hashes.insert(h);
        ++n;
      }
    }
    CHECK(hashes.size() == n);
  }
}

TEST_CASE("split ratios are approximately 90/5/5 and deterministic") {
  std::vector<std::vector<AnnotatedInstruction>> traces;
  traces.push_back(des_trace(WorkloadKind::kMix, 8000, 21));
  std::vector<const std::vector<AnnotatedInstruction>*> refs{&traces[0]};
  const Dataset a = build_dataset(refs, FeatureLayout{}, false, SplitRatios{});
  const Dataset b = build_dataset(refs, FeatureLayout{}, false, SplitRatios{});
  CHECK(a.train.size() == b.train.size());
  CHECK(a.total() == 8000);
  const double frac = static_cast<double>(a.train.size()) / a.total();
  CHECK(frac > 0.85);
  CHECK(frac < 0.95);
  CHECK(a.validation.size() > 0);
  CHECK(a.test.size() > 0);
}

TEST_CASE("dataset files round trip byte-identically") {
  const auto trace = des_trace(WorkloadKind::kStreaming, 2000, 31);
  std::vector<const std::vector<AnnotatedInstruction>*> refs{&trace};
  const Dataset ds = build_dataset(refs, FeatureLayout{}, true, SplitRatios{});
  auto dir = std::filesystem::temp_directory_path() / "ilsim_test";
  std::filesystem::create_directories(dir);
  const auto p1 = (dir / "ds1.bin").string();
  const auto p2 = (dir / "ds2.bin").string();
  save_dataset(p1, ds);
  const Dataset back = load_dataset(p1);
  CHECK(back.norm == ds.norm);
  CHECK(back.train.size() == ds.train.size());
  save_dataset(p2, back);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::vector<char> b1{std::istreambuf_iterator<char>(f1), {}};
  const std::vector<char> b2{std::istreambuf_iterator<char>(f2), {}};
  CHECK(b1 == b2);
}
