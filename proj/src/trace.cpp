#include "ilsim/trace.hpp"

#include <cstring>

namespace ilsim {

namespace {

constexpr char kTraceMagic[4] = {'S', 'N', 'T', '1'};
constexpr uint32_t kTraceVersion = 1;
constexpr char kProgramMagic[4] = {'I', 'L', 'P', 'G'};
constexpr uint32_t kProgramVersion = 1;

}  // namespace

std::optional<std::string> validate(const StaticInstruction& si) {
  if (si.op[kOpOpClass] >= kOpClassCount) return "op_class out of range";
  for (int i = kOpIsLoad; i <= kOpIsFp; ++i) {
    if (si.op[i] > 1) return "flag op feature not 0/1";
  }
  if (si.is_memory_op() != si.has_data) {
    return si.has_data ? "data_addr present on non-memory op" : "data_addr missing on memory op";
  }
  if (si.op_class() == kLoad && !si.is_load()) return "op_class load without is_load";
  if (si.op_class() == kStore && !si.is_store()) return "op_class store without is_store";
  if (si.op_class() == kBranch && !si.is_branch()) return "op_class branch without is_branch";
  return std::nullopt;
}

std::optional<std::string> validate(const AnnotatedInstruction& ai) {
  if (auto err = validate(ai.stat)) return err;
  if (ai.truth.execution < 1) return "execution latency must be >= 1";
  if (ai.stat.is_store()) {
    if (ai.truth.store < ai.truth.execution) return "store latency below execution latency";
  } else if (ai.truth.store != 0) {
    return "nonzero store latency on non-store";
  }
  if (!ai.stat.is_memory_op() && ai.hist.data_level() != 0)
    return "nonzero data_level on non-memory op";
  if (ai.stat.is_memory_op() && ai.hist.data_level() == 0)
    return "zero data_level on memory op";
  if (!ai.stat.is_branch() && ai.hist.mispredict() != 0)
    return "mispredict flag set on non-branch";
  return std::nullopt;
}

namespace {

void write_record(BinaryWriter& w, const AnnotatedInstruction& ai) {
  w.write<uint64_t>(ai.stat.pc);
  for (auto b : ai.stat.op) w.write<uint8_t>(b);
  for (auto r : ai.stat.src) w.write<uint16_t>(r);
  for (auto r : ai.stat.dst) w.write<uint16_t>(r);
  w.write<uint8_t>(ai.stat.has_data ? 1 : 0);
  w.write<uint64_t>(ai.stat.has_data ? ai.stat.data_addr : 0);
  w.write<uint16_t>(ai.stat.has_data ? ai.stat.data_size : 0);
  for (auto h : ai.hist.v) w.write<uint16_t>(h);
  w.write<uint32_t>(ai.truth.fetch);
  w.write<uint32_t>(ai.truth.execution);
  w.write<uint32_t>(ai.truth.store);
  w.write<uint64_t>(ai.fetch_tick);
}

AnnotatedInstruction read_record(BinaryReader& r) {
  AnnotatedInstruction ai;
  ai.stat.pc = r.read<uint64_t>();
  for (auto& b : ai.stat.op) b = r.read<uint8_t>();
  for (auto& s : ai.stat.src) s = r.read<uint16_t>();
  for (auto& d : ai.stat.dst) d = r.read<uint16_t>();
  ai.stat.has_data = r.read<uint8_t>() != 0;
  ai.stat.data_addr = r.read<uint64_t>();
  ai.stat.data_size = r.read<uint16_t>();
  if (!ai.stat.has_data) {
    ai.stat.data_addr = 0;
    ai.stat.data_size = 0;
  }
  for (auto& h : ai.hist.v) h = r.read<uint16_t>();
  ai.truth.fetch = r.read<uint32_t>();
  ai.truth.execution = r.read<uint32_t>();
  ai.truth.store = r.read<uint32_t>();
  ai.fetch_tick = r.read<uint64_t>();
  return ai;
}

}  // namespace

void write_trace(const std::string& path, std::span<const AnnotatedInstruction> instructions,
                 uint64_t config_hash) {
  for (size_t i = 0; i < instructions.size(); ++i) {
    if (auto err = validate(instructions[i]))
      throw Error("invalid record " + std::to_string(i) + ": " + *err);
  }
  BinaryWriter w(path);
  w.write_bytes(kTraceMagic, 4);
  w.write<uint32_t>(kTraceVersion);
  w.write<uint64_t>(config_hash);
  w.write<uint64_t>(instructions.size());
  for (const auto& ai : instructions) write_record(w, ai);
  w.close();
}

Trace read_trace(const std::string& path) {
  BinaryReader r(path);
  char magic[4];
  r.read_bytes(magic, 4);
  if (std::memcmp(magic, kTraceMagic, 4) != 0) throw Error("bad trace magic in " + path);
  Trace t;
  t.header.version = r.read<uint32_t>();
  if (t.header.version != kTraceVersion)
    throw Error("unsupported trace version " + std::to_string(t.header.version) + " in " + path);
  t.header.config_hash = r.read<uint64_t>();
  t.header.instruction_count = r.read<uint64_t>();
  t.instructions.reserve(t.header.instruction_count);
  for (uint64_t i = 0; i < t.header.instruction_count; ++i) {
    try {
      t.instructions.push_back(read_record(r));
    } catch (const Error&) {
      throw Error("trace truncated at record " + std::to_string(i) + " in " + path);
    }
  }
  if (!r.at_eof()) throw Error("trailing bytes after record " +
                               std::to_string(t.header.instruction_count) + " in " + path);
  return t;
}

void write_program(const std::string& path, std::span<const StaticInstruction> instructions) {
  for (size_t i = 0; i < instructions.size(); ++i) {
    if (auto err = validate(instructions[i]))
      throw Error("invalid instruction " + std::to_string(i) + ": " + *err);
  }
  BinaryWriter w(path);
  w.write_bytes(kProgramMagic, 4);
  w.write<uint32_t>(kProgramVersion);
  w.write<uint64_t>(instructions.size());
  for (const auto& si : instructions) {
    w.write<uint64_t>(si.pc);
    for (auto b : si.op) w.write<uint8_t>(b);
    for (auto r : si.src) w.write<uint16_t>(r);
    for (auto d : si.dst) w.write<uint16_t>(d);
    w.write<uint8_t>(si.has_data ? 1 : 0);
    w.write<uint64_t>(si.has_data ? si.data_addr : 0);
    w.write<uint16_t>(si.has_data ? si.data_size : 0);
  }
  w.close();
}

std::vector<StaticInstruction> read_program(const std::string& path) {
  BinaryReader r(path);
  char magic[4];
  r.read_bytes(magic, 4);
  if (std::memcmp(magic, kProgramMagic, 4) != 0) throw Error("bad program magic in " + path);
  const uint32_t version = r.read<uint32_t>();
  if (version != kProgramVersion)
    throw Error("unsupported program version " + std::to_string(version) + " in " + path);
  const uint64_t count = r.read<uint64_t>();
  std::vector<StaticInstruction> out;
  out.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    try {
      StaticInstruction si;
      si.pc = r.read<uint64_t>();
      for (auto& b : si.op) b = r.read<uint8_t>();
      for (auto& s : si.src) s = r.read<uint16_t>();
      for (auto& d : si.dst) d = r.read<uint16_t>();
      si.has_data = r.read<uint8_t>() != 0;
      si.data_addr = r.read<uint64_t>();
      si.data_size = r.read<uint16_t>();
      out.push_back(si);
    } catch (const Error&) {
      throw Error("program truncated at record " + std::to_string(i) + " in " + path);
    }
  }
  return out;
}

}  // namespace ilsim
