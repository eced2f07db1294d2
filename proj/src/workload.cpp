#include "ilsim/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ilsim {

namespace {
using json = nlohmann::json;

constexpr uint64_t kBasePc = 0x400000;
constexpr uint64_t kLineBytes = 64;
constexpr uint64_t kDataBase = 0x10000000;

}  // namespace

const char* to_string(WorkloadKind k) {
  switch (k) {
    case WorkloadKind::kMix: return "mix";
    case WorkloadKind::kLoopKernel: return "loop-kernel";
    case WorkloadKind::kPointerChase: return "pointer-chase";
    case WorkloadKind::kBranchy: return "branchy";
    case WorkloadKind::kStreaming: return "streaming";
  }
  return "?";
}

WorkloadKind workload_kind_from_string(const std::string& s) {
  if (s == "mix") return WorkloadKind::kMix;
  if (s == "loop-kernel") return WorkloadKind::kLoopKernel;
  if (s == "pointer-chase") return WorkloadKind::kPointerChase;
  if (s == "branchy") return WorkloadKind::kBranchy;
  if (s == "streaming") return WorkloadKind::kStreaming;
  throw Error("unknown workload kind: " + s);
}

std::array<double, kOpClassCount> WorkloadSpec::default_mix(WorkloadKind kind) {
  // indices: int-alu, int-mult, int-div, fp-alu, fp-mult, fp-div, simd, load, store, branch
  switch (kind) {
    case WorkloadKind::kLoopKernel:
      return {0.35, 0.06, 0.01, 0.15, 0.08, 0.01, 0.04, 0.16, 0.06, 0.08};
    case WorkloadKind::kPointerChase:
      return {0.30, 0.03, 0.00, 0.05, 0.02, 0.00, 0.00, 0.50, 0.04, 0.06};
    case WorkloadKind::kBranchy:
      return {0.45, 0.04, 0.01, 0.05, 0.02, 0.00, 0.00, 0.15, 0.06, 0.22};
    case WorkloadKind::kStreaming:
      return {0.18, 0.02, 0.00, 0.22, 0.12, 0.01, 0.08, 0.22, 0.10, 0.05};
    case WorkloadKind::kMix:
    default:
      return {0.32, 0.04, 0.01, 0.12, 0.06, 0.01, 0.03, 0.22, 0.09, 0.10};
  }
}

void WorkloadSpec::validate_or_throw() const {
  if (instruction_count < 1) throw Error("instruction_count must be >= 1");
  double total = 0.0;
  for (double w : op_class_mix) {
    if (w < 0.0 || !std::isfinite(w)) throw Error("op_class_mix weights must be non-negative");
    total += w;
  }
  if (total <= 0.0) throw Error("op_class_mix weights sum to zero");
  if (branch_taken_bias < 0.0 || branch_taken_bias > 1.0)
    throw Error("branch_taken_bias must be in [0,1]");
  if (dependency_density < 0.0 || dependency_density > 1.0)
    throw Error("dependency_density must be in [0,1]");
  if (memory_footprint_bytes == 0 && (op_class_mix[kLoad] > 0.0 || op_class_mix[kStore] > 0.0))
    throw Error("zero memory footprint with nonzero load/store weight");
}

WorkloadSpec parse_workload_spec(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(std::string("workload spec parse error: ") + e.what());
  }
  WorkloadSpec s;
  if (j.contains("kind")) s.kind = workload_kind_from_string(j.at("kind").get<std::string>());
  s.op_class_mix = WorkloadSpec::default_mix(s.kind);
  if (j.contains("instruction_count")) s.instruction_count = j.at("instruction_count").get<uint64_t>();
  if (j.contains("seed")) s.seed = j.at("seed").get<uint64_t>();
  if (j.contains("memory_footprint_bytes"))
    s.memory_footprint_bytes = j.at("memory_footprint_bytes").get<uint64_t>();
  if (j.contains("branch_taken_bias")) s.branch_taken_bias = j.at("branch_taken_bias").get<double>();
  if (j.contains("dependency_density"))
    s.dependency_density = j.at("dependency_density").get<double>();
  if (j.contains("op_class_mix")) {
    const auto& m = j.at("op_class_mix");
    if (m.size() != kOpClassCount) throw Error("op_class_mix must have 10 weights");
    for (int i = 0; i < kOpClassCount; ++i) s.op_class_mix[i] = m.at(i).get<double>();
  }
  s.validate_or_throw();
  return s;
}

WorkloadSpec load_workload_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open workload spec: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_workload_spec(ss.str());
}

namespace {

// Loop bodies are built once as templates so a given PC always decodes to the
// same operation and registers; only data addresses move between iterations.
class Generator {
public:
  explicit Generator(const WorkloadSpec& spec)
      : spec_(spec), rng_(splitmix64(spec.seed) ^ 0x1157a7e5u) {
    double total = 0.0;
    for (double w : spec.op_class_mix) total += w;
    double acc = 0.0;
    for (int i = 0; i < kOpClassCount; ++i) {
      acc += spec.op_class_mix[i] / total;
      cum_mix_[i] = acc;
    }
    cum_mix_[kOpClassCount - 1] = 1.0;
    footprint_lines_ = std::max<uint64_t>(1, spec.memory_footprint_bytes / kLineBytes);
    recent_dst_.fill(1);
  }

  std::vector<StaticInstruction> run() {
    switch (spec_.kind) {
      case WorkloadKind::kLoopKernel: loop_kernel(spec_.instruction_count); break;
      case WorkloadKind::kStreaming: streaming(spec_.instruction_count); break;
      case WorkloadKind::kPointerChase: pointer_chase(spec_.instruction_count); break;
      case WorkloadKind::kBranchy: branchy(spec_.instruction_count); break;
      case WorkloadKind::kMix: mix(); break;
    }
    if (out_.size() > spec_.instruction_count) out_.resize(spec_.instruction_count);
    while (out_.size() < spec_.instruction_count) emit(make_template(kIntAlu));
    fix_tail();
    return std::move(out_);
  }

private:
  int sample_class() {
    const double u = rng_.next_double();
    for (int i = 0; i < kOpClassCount; ++i)
      if (u < cum_mix_[i]) return i;
    return kIntAlu;
  }

  int nonbranch_class() {
    for (int tries = 0; tries < 16; ++tries) {
      int c = sample_class();
      if (c != kBranch) return c;
    }
    return kIntAlu;
  }

  uint16_t random_reg() { return static_cast<uint16_t>(1 + rng_.next_below(48)); }

  uint16_t source_reg() {
    if (rng_.next_bool(spec_.dependency_density))
      return recent_dst_[rng_.next_below(recent_dst_.size())];
    return random_reg();
  }

  void note_dst(uint16_t r) { recent_dst_[recent_pos_++ % recent_dst_.size()] = r; }

  // Template: everything except pc and data address.
  StaticInstruction make_template(int op_class) {
    StaticInstruction si;
    si.op[kOpOpClass] = static_cast<uint8_t>(op_class);
    si.op[kOpIsLoad] = op_class == kLoad;
    si.op[kOpIsStore] = op_class == kStore;
    si.op[kOpIsBranch] = op_class == kBranch;
    si.op[kOpIsFp] = (op_class == kFpAlu || op_class == kFpMult || op_class == kFpDiv);
    int n_src = 2, n_dst = 1;
    switch (op_class) {
      case kSimd:
        si.op[kOpIsFp] = rng_.next_bool(0.5);
        si.op[kOpSimdWidth] = static_cast<uint8_t>(2 << rng_.next_below(3));  // 2/4/8 lanes
        n_src = 3;
        break;
      case kLoad: n_src = 1; break;
      case kStore: n_src = 2; n_dst = 0; break;
      case kBranch: n_src = 1; n_dst = 0; break;
      default: break;
    }
    if (op_class == kIntAlu) {
      if (rng_.next_bool(0.002)) si.op[kOpIsMemBarrier] = 1;
      else if (rng_.next_bool(0.001)) si.op[kOpIsSerializing] = 1;
    }
    for (int i = 0; i < n_src; ++i) si.src[i] = source_reg();
    for (int i = 0; i < n_dst; ++i) {
      si.dst[i] = random_reg();
      note_dst(si.dst[i]);
    }
    return si;
  }

  void emit(StaticInstruction si) {
    si.pc = pc_;
    out_.push_back(si);
    pc_ += 4;
  }

  void emit_memory(StaticInstruction si, uint64_t line_index, uint64_t offset_in_line) {
    si.has_data = true;
    const uint16_t size = si.op[kOpSimdWidth] ? 16 : 8;
    si.data_addr = kDataBase + (line_index % footprint_lines_) * kLineBytes +
                   (offset_in_line & (kLineBytes - size));
    si.data_size = size;
    emit(si);
  }

  // Emits a conditional/unconditional branch. Jumps when taken.
  void emit_branch(StaticInstruction si, bool taken, uint64_t target_pc) {
    si.pc = pc_;
    out_.push_back(si);
    pc_ = taken ? target_pc : pc_ + 4;
  }

  StaticInstruction branch_template(bool conditional) {
    auto si = make_template(kBranch);
    si.op[kOpIsConditional] = conditional;
    si.op[kOpIsDirectBranch] = 1;
    if (!conditional) {
      si.src[0] = 0;
      if (rng_.next_bool(0.2)) {
        si.op[kOpIsCall] = rng_.next_bool(0.5);
        si.op[kOpIsReturn] = !si.op[kOpIsCall];
        if (si.op[kOpIsReturn]) {
          si.op[kOpIsDirectBranch] = 0;
          si.op[kOpIsIndirectBranch] = 1;
        }
      }
    }
    return si;
  }

  // Fixed body re-emitted per iteration; back-edge taken until budget is spent.
  void loop_kernel(uint64_t budget) {
    const uint64_t body = std::min<uint64_t>(12 + rng_.next_below(25), std::max<uint64_t>(budget, 2));
    std::vector<StaticInstruction> templates;
    for (uint64_t i = 0; i + 1 < body; ++i) templates.push_back(make_template(nonbranch_class()));
    const auto back_edge = branch_template(true);
    const uint64_t kernel_lines = std::min<uint64_t>(footprint_lines_, 512);
    const uint64_t loop_head = pc_;
    const uint64_t start = out_.size();
    uint64_t iter = 0;
    while (out_.size() - start + body <= budget) {
      pc_ = loop_head;
      uint64_t mem_slot = 0;
      for (const auto& t : templates) {
        if (t.is_memory_op()) {
          emit_memory(t, (iter + mem_slot * 29) % kernel_lines, mem_slot * 8);
          ++mem_slot;
        } else {
          emit(t);
        }
      }
      const bool more = out_.size() - start + 2 * body <= budget;
      emit_branch(back_edge, more, loop_head);
      ++iter;
    }
    while (out_.size() - start < budget) emit(make_template(kIntAlu));
  }

  // Unit-stride sweep over a large buffer with a fixed inner kernel.
  void streaming(uint64_t budget) {
    const uint64_t body = std::min<uint64_t>(24, std::max<uint64_t>(budget, 2));
    std::vector<StaticInstruction> templates;
    for (uint64_t i = 0; i + 1 < body; ++i) templates.push_back(make_template(nonbranch_class()));
    const auto back_edge = branch_template(true);
    const uint64_t loop_head = pc_;
    const uint64_t start = out_.size();
    uint64_t element = rng_.next_below(footprint_lines_) * (kLineBytes / 8);
    while (out_.size() - start + body <= budget) {
      pc_ = loop_head;
      for (const auto& t : templates) {
        if (t.is_memory_op()) {
          emit_memory(t, element / (kLineBytes / 8), (element % (kLineBytes / 8)) * 8);
          ++element;  // contiguous 8-byte elements; a new line every 8 accesses
        } else {
          emit(t);
        }
      }
      const bool more = out_.size() - start + 2 * body <= budget;
      emit_branch(back_edge, more, loop_head);
    }
    while (out_.size() - start < budget) emit(make_template(kIntAlu));
  }

  // Serialized load chain with far-apart addresses; each load feeds the next.
  void pointer_chase(uint64_t budget) {
    const uint64_t start = out_.size();
    // Additive odd step near the golden ratio of the footprint: every line is
    // visited once before any repeat, so no close-by window sees reuse.
    const uint64_t step = footprint_lines_ < 3 ? 1 : ((footprint_lines_ * 2) / 3) | 1;
    uint64_t line = rng_.next_below(footprint_lines_);
    const uint16_t chain_reg = random_reg();
    auto chase = make_template(kLoad);
    chase.src[0] = chain_reg;
    chase.dst[0] = chain_reg;
    const auto back_edge = branch_template(true);
    const uint64_t loop_head = pc_;
    while (out_.size() - start < budget) {
      const int c = sample_class();
      if (c == kLoad) {
        emit_memory(chase, line, 0);
        line = (line + step) % footprint_lines_;
      } else if (c == kStore) {
        emit_memory(make_template(kStore), line + 1, 0);
      } else if (c == kBranch) {
        if (out_.size() - start + 1 < budget)
          emit_branch(back_edge, true, loop_head);
        else
          emit(make_template(kIntAlu));
      } else {
        emit(make_template(c));
      }
    }
  }

  // A fixed region of short blocks, each ending in a conditional branch with
  // its own direction personality and a stable taken target. PCs repeat, so
  // the BTB warms up while hard sites keep the predictor honest.
  void branchy(uint64_t budget) {
    const uint64_t start = out_.size();
    constexpr int kBlocks = 48;
    struct Block {
      std::vector<StaticInstruction> body;
      StaticInstruction branch;
      uint64_t start_pc;
      int taken_next;
      int mode;  // 0: biased random, 1: alternating, 2: TNNT, 3: period-3
      double bias;
      uint64_t state = 0;
    };
    std::vector<Block> blocks(kBlocks);
    uint64_t layout_pc = pc_;
    for (int b = 0; b < kBlocks; ++b) {
      Block& blk = blocks[b];
      blk.start_pc = layout_pc;
      const uint64_t body_len = 2 + rng_.next_below(6);
      for (uint64_t i = 0; i < body_len; ++i) blk.body.push_back(make_template(nonbranch_class()));
      blk.branch = branch_template(true);
      blk.taken_next = static_cast<int>(rng_.next_below(kBlocks));
      if (blk.taken_next == (b + 1) % kBlocks) blk.taken_next = (b + 2) % kBlocks;
      blk.mode = rng_.next_bool(0.6) ? 0 : static_cast<int>(1 + rng_.next_below(3));
      const bool leans_taken = rng_.next_bool(spec_.branch_taken_bias);
      blk.bias = rng_.next_bool(0.1) ? 0.5 : (leans_taken ? 0.95 : 0.05);
      layout_pc += (body_len + 1) * 4;
    }
    // data accesses mix a hot set with cold sprays across the footprint
    const uint64_t hot_lines = std::min<uint64_t>(footprint_lines_, 1024);
    int b = 0;
    while (out_.size() - start < budget) {
      Block& blk = blocks[b];
      pc_ = blk.start_pc;
      for (const auto& t : blk.body) {
        if (out_.size() - start >= budget) return;
        if (t.is_memory_op()) {
          const uint64_t line = rng_.next_bool(0.8) ? rng_.next_below(hot_lines)
                                                    : rng_.next_below(footprint_lines_);
          emit_memory(t, line, rng_.next_below(8) * 8);
        } else {
          emit(t);
        }
      }
      if (out_.size() - start >= budget) return;
      bool taken;
      switch (blk.mode) {
        case 1: taken = (blk.state++ & 1) != 0; break;
        case 2: taken = ((blk.state++ >> 1) & 1) != 0; break;
        case 3: taken = (blk.state++ % 3) != 0; break;
        default: taken = rng_.next_bool(blk.bias); break;
      }
      const int next = taken ? blk.taken_next : (b + 1) % kBlocks;
      emit_branch(blk.branch, true, blocks[next].start_pc);
      b = next;
    }
  }

  void mix() {
    const uint64_t n = spec_.instruction_count;
    const int phases = n < 4000 ? 2 : 8;
    const uint64_t per = n / phases;
    for (int p = 0; p < phases; ++p) {
      const uint64_t budget = (p == phases - 1) ? n - out_.size() : per;
      if (budget == 0) continue;
      switch ((p + static_cast<int>(rng_.next_below(2))) % 4) {
        case 0: loop_kernel(budget); break;
        case 1: streaming(budget); break;
        case 2: pointer_chase(budget); break;
        default: branchy(budget); break;
      }
    }
  }

  // The final instruction must not be a taken branch cut off by the resize;
  // rewrite a trailing branch into a plain ALU op at the same pc.
  void fix_tail() {
    if (out_.empty()) return;
    auto& last = out_.back();
    if (last.is_branch()) {
      StaticInstruction si;
      si.pc = last.pc;
      si.op[kOpOpClass] = kIntAlu;
      si.src[0] = last.src[0] ? last.src[0] : uint16_t{1};
      si.dst[0] = 1;
      last = si;
    }
  }

  const WorkloadSpec& spec_;
  Rng rng_;
  std::array<double, kOpClassCount> cum_mix_{};
  uint64_t footprint_lines_ = 1;
  uint64_t pc_ = kBasePc;
  std::array<uint16_t, 8> recent_dst_{};
  size_t recent_pos_ = 0;
  std::vector<StaticInstruction> out_;
};

}  // namespace

std::vector<StaticInstruction> generate(const WorkloadSpec& spec) {
  spec.validate_or_throw();
  Generator gen(spec);
  auto program = gen.run();
  for (size_t i = 0; i < program.size(); ++i) {
    if (auto err = validate(program[i]))
      throw Error("generator produced invalid instruction " + std::to_string(i) + ": " + *err);
  }
  return program;
}

}  // namespace ilsim
