#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ilsim/common.hpp"
#include "ilsim/trace.hpp"

using namespace ilsim;

namespace {

std::filesystem::path temp_file(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "ilsim_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

AnnotatedInstruction random_instruction(Rng& rng, uint64_t prev_tick) {
  AnnotatedInstruction ai;
  const int op_class = static_cast<int>(rng.next_below(kOpClassCount));
  ai.stat.pc = 0x400000 + rng.next_below(1 << 20) * 4;
  ai.stat.op[kOpOpClass] = static_cast<uint8_t>(op_class);
  ai.stat.op[kOpIsLoad] = op_class == kLoad;
  ai.stat.op[kOpIsStore] = op_class == kStore;
  ai.stat.op[kOpIsBranch] = op_class == kBranch;
  ai.stat.op[kOpIsConditional] = op_class == kBranch && rng.next_bool(0.7);
  ai.stat.op[kOpIsFp] = (op_class >= kFpAlu && op_class <= kFpDiv);
  ai.stat.op[kOpSimdWidth] = op_class == kSimd ? 4 : 0;
  for (auto& r : ai.stat.src) r = static_cast<uint16_t>(rng.next_below(49));
  for (auto& r : ai.stat.dst) r = static_cast<uint16_t>(rng.next_below(49));
  if (ai.stat.is_memory_op()) {
    ai.stat.has_data = true;
    ai.stat.data_addr = 0x10000000 + rng.next_below(1 << 22);
    ai.stat.data_size = 8;
    ai.hist.data_level() = static_cast<uint16_t>(1 + rng.next_below(3));
  }
  ai.hist.fetch_level() = static_cast<uint16_t>(1 + rng.next_below(3));
  if (ai.stat.is_branch()) ai.hist.mispredict() = rng.next_bool(0.1);
  ai.truth.fetch = static_cast<uint32_t>(rng.next_below(4));
  ai.truth.execution = static_cast<uint32_t>(1 + rng.next_below(40));
  ai.truth.store = ai.stat.is_store() ? ai.truth.execution + static_cast<uint32_t>(rng.next_below(100))
                                      : 0;
  ai.fetch_tick = prev_tick + ai.truth.fetch;
  return ai;
}

std::vector<AnnotatedInstruction> random_trace(uint64_t seed, size_t n) {
  Rng rng(seed);
  std::vector<AnnotatedInstruction> out;
  uint64_t tick = 0;
  for (size_t i = 0; i < n; ++i) {
    out.push_back(random_instruction(rng, tick));
    if (i == 0) out[0].fetch_tick = out[0].truth.fetch;
    tick = out.back().fetch_tick;
  }
  return out;
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("feature layout arithmetic") {
  FeatureLayout layout;
  CHECK(FeatureLayout::kSlots == 50);
  CHECK(layout.max_context == 110);
  CHECK(layout.model_width() == 5550);  // 50 x 111
}

TEST_CASE("empty trace round trips with header only") {
  const auto path = temp_file("empty.trace");
  write_trace(path.string(), {}, 42);
  const Trace t = read_trace(path.string());
  CHECK(t.header.instruction_count == 0);
  CHECK(t.header.config_hash == 42);
  CHECK(t.instructions.empty());
  CHECK(std::filesystem::file_size(path) == 24);  // magic + version + hash + count
}

TEST_CASE("single record round trips identically") {
  Rng rng(7);
  std::vector<AnnotatedInstruction> one{random_instruction(rng, 0)};
  one[0].fetch_tick = one[0].truth.fetch;
  const auto path = temp_file("one.trace");
  write_trace(path.string(), one, 1);
  const Trace t = read_trace(path.string());
  REQUIRE(t.instructions.size() == 1);
  const auto& a = t.instructions[0];
  const auto& b = one[0];
  CHECK(a.stat.pc == b.stat.pc);
  CHECK(a.stat.op == b.stat.op);
  CHECK(a.stat.src == b.stat.src);
  CHECK(a.stat.dst == b.stat.dst);
  CHECK(a.stat.data_addr == b.stat.data_addr);
  CHECK(a.hist == b.hist);
  CHECK(a.truth == b.truth);
  CHECK(a.fetch_tick == b.fetch_tick);
}

TEST_CASE("10k random records re-serialize byte-identically") {
  const auto trace = random_trace(123, 10000);
  const auto p1 = temp_file("big1.trace");
  const auto p2 = temp_file("big2.trace");
  write_trace(p1.string(), trace, 99);
  const Trace t = read_trace(p1.string());
  write_trace(p2.string(), t.instructions, t.header.config_hash);
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("timestamp and fetch latency stay consistent in generated traces") {
  const auto trace = random_trace(5, 2000);
  for (size_t i = 1; i < trace.size(); ++i)
    CHECK(trace[i].fetch_tick - trace[i - 1].fetch_tick == trace[i].truth.fetch);
}

TEST_CASE("wrong magic is rejected") {
  const auto path = temp_file("badmagic.trace");
  std::ofstream out(path, std::ios::binary);
  out << "NOPE" << std::string(20, '\0');
  out.close();
  CHECK_THROWS_WITH_AS(read_trace(path.string()), doctest::Contains("magic"), Error);
}

TEST_CASE("truncated file names the failing record") {
  const auto trace = random_trace(9, 10);
  const auto path = temp_file("trunc.trace");
  write_trace(path.string(), trace, 0);
  const auto bytes = slurp(path);
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 30));
  out.close();
  CHECK_THROWS_WITH_AS(read_trace(path.string()), doctest::Contains("record 9"), Error);
}

TEST_CASE("invalid records are rejected with their index") {
  auto trace = random_trace(11, 3);
  trace[1].truth.execution = 0;
  const auto path = temp_file("invalid.trace");
  CHECK_THROWS_WITH_AS(write_trace(path.string(), trace, 0), doctest::Contains("record 1"), Error);

  AnnotatedInstruction missing_data;
  missing_data.stat.op[kOpOpClass] = kLoad;
  missing_data.stat.op[kOpIsLoad] = 1;
  missing_data.stat.has_data = false;
  CHECK(validate(missing_data).has_value());

  AnnotatedInstruction bad_flag;
  bad_flag.stat.op[kOpOpClass] = kStore;
  bad_flag.stat.op[kOpIsStore] = 0;
  CHECK(validate(bad_flag.stat).has_value());
}

TEST_CASE("program files round trip") {
  Rng rng(21);
  std::vector<StaticInstruction> prog;
  for (int i = 0; i < 500; ++i) prog.push_back(random_instruction(rng, 0).stat);
  const auto path = temp_file("prog.bin");
  write_program(path.string(), prog);
  const auto back = read_program(path.string());
  REQUIRE(back.size() == prog.size());
  for (size_t i = 0; i < prog.size(); ++i) {
    CHECK(back[i].pc == prog[i].pc);
    CHECK(back[i].op == prog[i].op);
    CHECK(back[i].src == prog[i].src);
    CHECK(back[i].data_addr == prog[i].data_addr);
  }
}
