#include "ilsim/des.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ilsim {

namespace {
using json = nlohmann::json;
constexpr uint64_t kNotDone = std::numeric_limits<uint64_t>::max();
}  // namespace

std::array<OpClassTiming, kOpClassCount> ProcessorConfig::default_op_timing() {
  std::array<OpClassTiming, kOpClassCount> t{};
  t[kIntAlu] = {1, 4};
  t[kIntMult] = {3, 2};
  t[kIntDiv] = {20, 1};
  t[kFpAlu] = {2, 4};
  t[kFpMult] = {4, 2};
  t[kFpDiv] = {12, 1};
  t[kSimd] = {3, 2};
  t[kLoad] = {1, 2};
  t[kStore] = {1, 2};
  t[kBranch] = {1, 2};
  return t;
}

void ProcessorConfig::validate_or_throw() const {
  if (fetch_width < 1 || issue_width < 1 || commit_width < 1)
    throw Error("pipeline widths must be >= 1");
  if (rob_entries < 1 || iq_entries < 1 || lq_entries < 1 || sq_entries < 1)
    throw Error("queue capacities must be >= 1");
  for (const auto& t : op_timing) {
    if (t.latency < 1 || t.units < 1) throw Error("op timing latency/units must be >= 1");
  }
  history.validate_or_throw();
}

namespace {

const char* op_class_name(int c) {
  static const char* names[] = {"int-alu", "int-mult", "int-div", "fp-alu",  "fp-mult",
                                "fp-div",  "simd",     "load",    "store",   "branch"};
  return names[c];
}

void cache_from_json(const json& j, CacheLevelConfig& c) {
  if (j.contains("size_bytes")) c.size_bytes = j.at("size_bytes").get<uint64_t>();
  if (j.contains("ways")) c.ways = j.at("ways").get<uint32_t>();
  if (j.contains("latency")) c.latency = j.at("latency").get<uint32_t>();
}

}  // namespace

ProcessorConfig parse_processor_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(std::string("processor config parse error: ") + e.what());
  }
  ProcessorConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  get("fetch_width", c.fetch_width);
  get("issue_width", c.issue_width);
  get("commit_width", c.commit_width);
  get("rob_entries", c.rob_entries);
  get("iq_entries", c.iq_entries);
  get("lq_entries", c.lq_entries);
  get("sq_entries", c.sq_entries);
  get("frontend_depth", c.frontend_depth);
  get("deadlock_cycles", c.deadlock_cycles);
  if (j.contains("op_timing")) {
    for (int cls = 0; cls < kOpClassCount; ++cls) {
      const char* name = op_class_name(cls);
      if (j.at("op_timing").contains(name)) {
        const auto& t = j.at("op_timing").at(name);
        if (t.contains("latency")) c.op_timing[cls].latency = t.at("latency").get<uint32_t>();
        if (t.contains("units")) c.op_timing[cls].units = t.at("units").get<uint32_t>();
      }
    }
  }
  if (j.contains("history")) {
    const auto& h = j.at("history");
    auto geth = [&](const char* key, auto& field) {
      if (h.contains(key)) field = h.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    geth("line_size", c.history.line_size);
    if (h.contains("l1i")) cache_from_json(h.at("l1i"), c.history.l1i);
    if (h.contains("l1d")) cache_from_json(h.at("l1d"), c.history.l1d);
    if (h.contains("l2")) cache_from_json(h.at("l2"), c.history.l2);
    geth("tlb_l1_entries", c.history.tlb_l1_entries);
    geth("tlb_l1_ways", c.history.tlb_l1_ways);
    geth("tlb_l2_entries", c.history.tlb_l2_entries);
    geth("tlb_l2_ways", c.history.tlb_l2_ways);
    geth("walk_cache_entries", c.history.walk_cache_entries);
    geth("walk_cache_ways", c.history.walk_cache_ways);
    geth("walk_hit_latency", c.history.walk_hit_latency);
    geth("tlb_l2_latency", c.history.tlb_l2_latency);
    geth("memory_latency", c.history.memory_latency);
    geth("bp_choice_bits", c.history.bp_choice_bits);
    geth("bp_global_bits", c.history.bp_global_bits);
    geth("btb_bits", c.history.btb_bits);
  }
  c.validate_or_throw();
  return c;
}

ProcessorConfig load_processor_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open processor config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_processor_config(ss.str());
}

std::string processor_config_to_json(const ProcessorConfig& c) {
  json j;
  j["fetch_width"] = c.fetch_width;
  j["issue_width"] = c.issue_width;
  j["commit_width"] = c.commit_width;
  j["rob_entries"] = c.rob_entries;
  j["iq_entries"] = c.iq_entries;
  j["lq_entries"] = c.lq_entries;
  j["sq_entries"] = c.sq_entries;
  j["frontend_depth"] = c.frontend_depth;
  j["deadlock_cycles"] = c.deadlock_cycles;
  for (int cls = 0; cls < kOpClassCount; ++cls) {
    j["op_timing"][op_class_name(cls)] = {{"latency", c.op_timing[cls].latency},
                                          {"units", c.op_timing[cls].units}};
  }
  auto cache_json = [](const CacheLevelConfig& cc) {
    return json{{"size_bytes", cc.size_bytes}, {"ways", cc.ways}, {"latency", cc.latency}};
  };
  j["history"] = {{"line_size", c.history.line_size},
                  {"l1i", cache_json(c.history.l1i)},
                  {"l1d", cache_json(c.history.l1d)},
                  {"l2", cache_json(c.history.l2)},
                  {"tlb_l1_entries", c.history.tlb_l1_entries},
                  {"tlb_l1_ways", c.history.tlb_l1_ways},
                  {"tlb_l2_entries", c.history.tlb_l2_entries},
                  {"tlb_l2_ways", c.history.tlb_l2_ways},
                  {"walk_cache_entries", c.history.walk_cache_entries},
                  {"walk_cache_ways", c.history.walk_cache_ways},
                  {"walk_hit_latency", c.history.walk_hit_latency},
                  {"tlb_l2_latency", c.history.tlb_l2_latency},
                  {"memory_latency", c.history.memory_latency},
                  {"bp_choice_bits", c.history.bp_choice_bits},
                  {"bp_global_bits", c.history.bp_global_bits},
                  {"btb_bits", c.history.btb_bits}};
  return j.dump(2);
}

uint64_t hash_processor_config(const ProcessorConfig& cfg) {
  return fnv1a64(processor_config_to_json(cfg));
}

namespace {

struct InstrState {
  uint64_t fetch_tick = kNotDone;
  uint64_t complete_tick = kNotDone;  // execution done, ready to retire
  uint64_t commit_tick = kNotDone;
  uint64_t sq_complete_tick = kNotDone;  // stores only
  uint32_t data_delay = 0;               // memory ops: cycles beyond issue
  bool fetched = false;
  bool issued = false;
  bool committed = false;
  int barrier_dep = -1;  // most recent older memory barrier, -1 if none
  std::array<int, kSrcRegCount> src_producer{};
};

class DesMachine {
public:
  DesMachine(std::span<const StaticInstruction> program, const ProcessorConfig& cfg)
      : program_(program), cfg_(cfg), history_(cfg.history), state_(program.size()),
        features_(program.size()) {
    reg_producer_.assign(65536, -1);
  }

  DesResult run() {
    const size_t n = program_.size();
    DesResult result;
    if (n == 0) return result;
    precompute_branch_outcomes();

    uint64_t cur = 0;
    uint64_t last_progress = 0;
    uint64_t last_exit = 0;

    while (committed_ < n || !sq_.empty()) {
      bool progress = false;

      // Memory write queue drains at full bandwidth.
      while (!sq_.empty() && state_[sq_.front()].sq_complete_tick <= cur) {
        last_exit = std::max(last_exit, state_[sq_.front()].sq_complete_tick);
        sq_.pop_front();
        progress = true;
      }

      // In-order commit.
      uint32_t commits = 0;
      while (commits < cfg_.commit_width && commit_head_ < n) {
        InstrState& st = state_[commit_head_];
        if (!st.fetched || st.complete_tick > cur) break;
        const auto& si = program_[commit_head_];
        if (si.is_store()) {
          if (sq_.size() >= cfg_.sq_entries) break;
          st.sq_complete_tick = cur + std::max<uint32_t>(1, st.data_delay);
          sq_.push_back(commit_head_);
        }
        st.commit_tick = cur;
        st.committed = true;
        last_exit = std::max(last_exit, cur);
        if (si.is_load()) --lq_used_;
        --rob_used_;
        ++commit_head_;
        ++committed_;
        ++commits;
        progress = true;
      }

      // Fetch.
      progress |= do_fetch(cur);

      // Out-of-order issue.
      progress |= do_issue(cur);

      if (progress) last_progress = cur;
      if (cur - last_progress > cfg_.deadlock_cycles)
        throw Error("reference DES deadlock at cycle " + std::to_string(cur) +
                    " (fetched " + std::to_string(fetched_) + "/" + std::to_string(n) +
                    ", committed " + std::to_string(committed_) + ")");
      ++cur;
    }

    result.total_cycles = last_exit;
    result.cpi = static_cast<double>(last_exit) / static_cast<double>(n);
    result.stats = stats_;
    result.trace.resize(n);
    for (size_t i = 0; i < n; ++i) {
      AnnotatedInstruction ai;
      ai.stat = program_[i];
      ai.hist = features_[i];
      ai.fetch_tick = state_[i].fetch_tick;
      ai.truth.fetch = static_cast<uint32_t>(
          i == 0 ? state_[0].fetch_tick : state_[i].fetch_tick - state_[i - 1].fetch_tick);
      ai.truth.execution = static_cast<uint32_t>(state_[i].complete_tick - state_[i].fetch_tick);
      ai.truth.store = ai.stat.is_store()
                           ? static_cast<uint32_t>(state_[i].sq_complete_tick - state_[i].fetch_tick)
                           : 0;
      result.trace[i] = ai;
    }
    return result;
  }

private:
  void precompute_branch_outcomes() {
    const size_t n = program_.size();
    branch_taken_.assign(n, false);
    branch_target_.assign(n, 0);
    for (size_t i = 0; i < n; ++i) {
      if (!program_[i].is_branch()) continue;
      const uint64_t fallthrough = program_[i].pc + 4;
      const uint64_t next_pc = i + 1 < n ? program_[i + 1].pc : fallthrough;
      branch_taken_[i] = next_pc != fallthrough;
      branch_target_[i] = next_pc;
    }
  }

  bool structural_room(const StaticInstruction& si, uint32_t rob_extra, uint32_t iq_extra,
                       uint32_t lq_extra) const {
    if (rob_used_ + rob_extra >= cfg_.rob_entries) return false;
    if (iq_used_ + iq_extra >= cfg_.iq_entries) return false;
    if (si.is_load() && lq_used_ + lq_extra >= cfg_.lq_entries) return false;
    if (si.is_store() && sq_.size() >= cfg_.sq_entries) return false;
    return true;
  }

  bool do_fetch(uint64_t cur) {
    const size_t n = program_.size();
    if (fetched_ == n) return false;

    if (waiting_branch_ >= 0) {
      const InstrState& br = state_[waiting_branch_];
      if (!br.issued || cur < br.complete_tick + 1 + cfg_.frontend_depth) return false;
      waiting_branch_ = -1;
      fetch_ready_ = cur;
    }
    if (cur < fetch_ready_) return false;

    // The whole group must begin with a leader that has structural room.
    if (!structural_room(program_[fetched_], 0, 0, 0)) {
      ++stats_.fetch_stall_struct;
      return false;
    }

    const uint64_t line_mask = ~static_cast<uint64_t>(cfg_.history.line_size - 1);
    const uint64_t leader_line = program_[fetched_].pc & line_mask;
    uint32_t rob_extra = 0, iq_extra = 0, lq_extra = 0;
    uint64_t arrival = 0;
    bool took_group = false;

    for (uint32_t slot = 0; slot < cfg_.fetch_width && fetched_ < n; ++slot) {
      const StaticInstruction& si = program_[fetched_];
      if ((si.pc & line_mask) != leader_line) break;
      if (!structural_room(si, rob_extra, iq_extra, lq_extra)) break;

      // Annotate exactly once, in program order, when the instruction is
      // actually admitted into the machine.
      const size_t i = fetched_;
      const HistoryFeatures h = history_.annotate(si, branch_taken_[i], branch_target_[i]);
      features_[i] = h;
      tally(si, h);

      if (slot == 0) {
        AccessResult fr;
        fr.level = static_cast<uint8_t>(h.fetch_level());
        for (int k = 0; k < 3; ++k) fr.walk_levels[k] = static_cast<uint8_t>(h.v[2 + k]);
        arrival = cur + std::max<uint32_t>(1, history_.access_delay(fr, false));
      }

      InstrState& st = state_[i];
      st.fetched = true;
      st.fetch_tick = arrival;
      if (si.is_memory_op()) {
        AccessResult dr;
        dr.level = static_cast<uint8_t>(h.data_level());
        for (int k = 0; k < 3; ++k) dr.walk_levels[k] = static_cast<uint8_t>(h.v[8 + k]);
        st.data_delay = history_.access_delay(dr, true);
      }
      for (int s = 0; s < kSrcRegCount; ++s)
        st.src_producer[s] = si.src[s] ? reg_producer_[si.src[s]] : -1;
      st.barrier_dep = last_barrier_;
      for (int d = 0; d < kDstRegCount; ++d)
        if (si.dst[d]) reg_producer_[si.dst[d]] = static_cast<int>(i);
      if (si.is_mem_barrier()) last_barrier_ = static_cast<int>(i);

      iq_.push_back(static_cast<uint32_t>(i));
      ++rob_used_;
      ++iq_used_;
      ++rob_extra;
      ++iq_extra;
      if (si.is_load()) {
        ++lq_used_;
        ++lq_extra;
      }
      ++fetched_;
      took_group = true;

      if (si.is_branch()) {
        const bool mispredicted = h.mispredict() != 0;
        if (mispredicted) waiting_branch_ = static_cast<int>(i);
        if (mispredicted || branch_taken_[i]) break;
      }
    }

    if (took_group) fetch_ready_ = arrival;
    return took_group;
  }

  bool do_issue(uint64_t cur) {
    uint32_t issued_count = 0;
    std::array<uint32_t, kOpClassCount> units_used{};
    bool progress = false;

    // Advance the all-completed-prefix pointer used by serializing ops.
    while (completed_prefix_ < program_.size() &&
           state_[completed_prefix_].issued &&
           state_[completed_prefix_].complete_tick <= cur)
      ++completed_prefix_;

    for (auto it = iq_.begin(); it != iq_.end() && issued_count < cfg_.issue_width;) {
      const uint32_t i = *it;
      const StaticInstruction& si = program_[i];
      InstrState& st = state_[i];
      if (st.fetch_tick > cur) break;  // younger entries arrived no earlier
      const int cls = si.op_class();
      if (units_used[cls] >= cfg_.op_timing[cls].units) {
        ++it;
        continue;
      }
      if (si.is_serializing() && completed_prefix_ < i) {
        ++it;
        continue;
      }
      bool ready = true;
      for (int s = 0; s < kSrcRegCount && ready; ++s) {
        const int p = st.src_producer[s];
        if (p >= 0 && (!state_[p].issued || state_[p].complete_tick > cur)) ready = false;
      }
      if (ready && si.is_memory_op() && st.barrier_dep >= 0) {
        const InstrState& b = state_[st.barrier_dep];
        if (!b.issued || b.complete_tick > cur) ready = false;
      }
      if (!ready) {
        ++it;
        continue;
      }

      uint32_t latency = cfg_.op_timing[cls].latency;
      if (si.is_load()) latency = std::max<uint32_t>(1, latency + st.data_delay);
      st.issued = true;
      st.complete_tick = cur + latency;
      ++units_used[cls];
      ++issued_count;
      --iq_used_;
      it = iq_.erase(it);
      progress = true;
    }
    return progress;
  }

  void tally(const StaticInstruction& si, const HistoryFeatures& h) {
    stats_.fetch_level_count[std::min<uint16_t>(h.fetch_level(), 3)]++;
    if (si.is_branch()) {
      ++stats_.branches;
      stats_.mispredicts += h.mispredict();
    }
    if (si.is_load()) ++stats_.loads;
    if (si.is_store()) ++stats_.stores;
    if (si.is_memory_op()) stats_.data_level_count[std::min<uint16_t>(h.data_level(), 3)]++;
  }

  std::span<const StaticInstruction> program_;
  const ProcessorConfig& cfg_;
  HistoryState history_;
  std::vector<InstrState> state_;
  std::vector<HistoryFeatures> features_;
  std::vector<bool> branch_taken_;
  std::vector<uint64_t> branch_target_;
  std::vector<int> reg_producer_;

  std::deque<uint32_t> iq_;  // fetched, not yet issued (program order)
  std::deque<uint32_t> sq_;  // committed stores draining to memory
  size_t fetched_ = 0;
  size_t committed_ = 0;
  size_t commit_head_ = 0;
  size_t completed_prefix_ = 0;
  uint32_t rob_used_ = 0, iq_used_ = 0, lq_used_ = 0;
  uint64_t fetch_ready_ = 0;
  int waiting_branch_ = -1;
  int last_barrier_ = -1;
  DesStats stats_;
};

}  // namespace

DesResult des_simulate(std::span<const StaticInstruction> program, const ProcessorConfig& config) {
  config.validate_or_throw();
  for (size_t i = 0; i < program.size(); ++i) {
    if (auto err = validate(program[i]))
      throw Error("invalid program instruction " + std::to_string(i) + ": " + *err);
  }
  DesMachine machine(program, config);
  return machine.run();
}

std::pair<uint64_t, uint64_t> total_time_identity(const DesResult& result) {
  if (result.trace.empty()) return {0, 0};
  uint64_t sum_fetch = 0;
  for (const auto& ai : result.trace) sum_fetch += ai.truth.fetch;
  const uint64_t delta = result.total_cycles - result.trace.back().fetch_tick;
  return {sum_fetch, delta};
}

}  // namespace ilsim
