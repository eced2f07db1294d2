// Acceptance suite: end-to-end checks for the whole pipeline, one pass/fail
// line per criterion. Expensive artifacts (traces, dataset, trained model)
// are built once and shared. Runs from scratch; expect roughly half an hour,
// dominated by model training.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "ilsim/cnn.hpp"
#include "ilsim/dataset.hpp"
#include "ilsim/des.hpp"
#include "ilsim/metrics.hpp"
#include "ilsim/parallel.hpp"
#include "ilsim/predictor.hpp"
#include "ilsim/simcore.hpp"
#include "ilsim/trace.hpp"
#include "ilsim/workload.hpp"

#include "../reference_models.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace ilsim;

namespace {

struct Criterion {
  int id;
  std::string detail;
  bool pass = false;
};

std::vector<Criterion> g_results;
int g_identity_runs = 0;
int g_identity_failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("%s criterion-%d: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  g_results.push_back({id, detail, pass});
}

// Every simulate result must satisfy total == sum_fetch + delta exactly.
void check_identity(const SimResult& r) {
  ++g_identity_runs;
  if (r.total_cycles != r.sum_fetch + r.delta) ++g_identity_failures;
  if (r.delta != r.drain_cycles + r.overflow_stall_cycles) ++g_identity_failures;
}

void check_identity(const ParallelResult& r) {
  for (const auto& s : r.sub_results) check_identity(s);
}

struct Workload {
  WorkloadKind kind;
  uint64_t seed;
  std::vector<AnnotatedInstruction> trace;
  uint64_t des_total = 0;
  double des_cpi = 0.0;
};

std::vector<AnnotatedInstruction> make_trace(WorkloadKind kind, uint64_t n, uint64_t seed,
                                             uint64_t* total, double* cpi) {
  WorkloadSpec spec;
  spec.kind = kind;
  spec.op_class_mix = WorkloadSpec::default_mix(kind);
  spec.instruction_count = n;
  spec.seed = seed;
  spec.memory_footprint_bytes = 16ull << 20;
  const auto res = des_simulate(generate(spec), ProcessorConfig{});
  if (total) *total = res.total_cycles;
  if (cpi) *cpi = res.cpi;
  return res.trace;
}

double rel_diff(uint64_t a, uint64_t b) {
  return std::abs(static_cast<double>(a) - static_cast<double>(b)) / static_cast<double>(b);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

constexpr uint64_t kTraceLen = 200000;
const std::vector<std::pair<WorkloadKind, uint64_t>> kTrainKinds = {
    {WorkloadKind::kMix, 101}, {WorkloadKind::kPointerChase, 103}, {WorkloadKind::kBranchy, 104}};
const std::vector<std::pair<WorkloadKind, uint64_t>> kUnseenKinds = {
    {WorkloadKind::kLoopKernel, 102}, {WorkloadKind::kStreaming, 105}};

struct Artifacts {
  std::vector<Workload> all;  // train kinds then unseen kinds
  Dataset dataset;
  ModelWeights model;
  std::unique_ptr<CnnPredictor> predictor;
};

Artifacts build_artifacts() {
  Artifacts a;
  std::printf("# generating workloads and reference traces (5 x %llu instructions)\n",
              static_cast<unsigned long long>(kTraceLen));
  std::fflush(stdout);
  for (const auto& [kind, seed] : kTrainKinds) {
    Workload w{kind, seed};
    w.trace = make_trace(kind, kTraceLen, seed, &w.des_total, &w.des_cpi);
    a.all.push_back(std::move(w));
  }
  for (const auto& [kind, seed] : kUnseenKinds) {
    Workload w{kind, seed};
    w.trace = make_trace(kind, kTraceLen, seed, &w.des_total, &w.des_cpi);
    a.all.push_back(std::move(w));
  }

  std::printf("# building the training dataset (3 kinds, %llu instructions total)\n",
              static_cast<unsigned long long>(3 * kTraceLen));
  std::fflush(stdout);
  std::vector<const std::vector<AnnotatedInstruction>*> refs;
  for (size_t i = 0; i < kTrainKinds.size(); ++i) refs.push_back(&a.all[i].trace);
  DatasetBuildInfo info;
  a.dataset = build_dataset(refs, FeatureLayout{}, true, SplitRatios{}, &info);
  std::printf("# dataset: %llu raw, %llu unique, %zu/%zu/%zu split\n",
              static_cast<unsigned long long>(info.raw_samples),
              static_cast<unsigned long long>(info.unique_samples), a.dataset.train.size(),
              a.dataset.validation.size(), a.dataset.test.size());
  std::fflush(stdout);

  TrainParams tp;
  tp.epochs = 16;
  tp.batch_size = 256;
  tp.seed = 1;
  tp.verbose = true;
  TrainHistory hist;
  const auto t0 = std::chrono::steady_clock::now();
  a.model = train_model(a.dataset, CnnConfig::preset_c3(a.dataset.layout.max_context), tp, &hist);
  const double mins =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  std::printf("# trained C3 preset: %d epochs in %.1f min, best epoch %d (val %.4f)\n", tp.epochs,
              mins, hist.best_epoch, hist.val_loss[hist.best_epoch]);
  std::fflush(stdout);
  a.predictor = std::make_unique<CnnPredictor>(a.model);
  return a;
}

// 1. Clock identity on every run, any predictor.
void criterion_1(Artifacts& a) {
  OraclePredictor oracle(a.all[0].trace);
  check_identity(simulate_trace(a.all[0].trace, oracle, SimConfig{}));
  // random-weight model: still must satisfy the identity
  CnnConfig cfg = CnnConfig::preset_c3(110);
  cfg.conv_channels = {8, 8, 8};
  cfg.fc_hidden = 16;
  CnnPredictor random_model(init_weights(cfg, a.dataset.norm, 7));
  std::vector<AnnotatedInstruction> head(a.all[0].trace.begin(), a.all[0].trace.begin() + 20000);
  SimConfig sim;
  check_identity(simulate_trace(head, random_model, sim));
  const bool pass = g_identity_failures == 0 && g_identity_runs >= 2;
  report(1, pass, fmt("total == sum_fetch + delta exact on %d runs so far", g_identity_runs));
}

// 2. Oracle-driven simulator vs the reference DES, 5 workloads.
void criterion_2(Artifacts& a) {
  bool pass = true;
  std::string detail;
  for (auto& w : a.all) {
    OraclePredictor oracle(w.trace);
    const SimResult r = simulate_trace(w.trace, oracle, SimConfig{});
    check_identity(r);
    const double rel = rel_diff(r.total_cycles, w.des_total);
    pass = pass && rel <= 0.005;
    detail += fmt("%s %.4f%% ", to_string(w.kind), rel * 100.0);
  }
  report(2, pass, "oracle total-cycle diff vs DES (<=0.5%): " + detail);
}

// 3. Context reconstruction vs the quadratic oracle.
void criterion_3(Artifacts&) {
  uint64_t total = 0;
  const auto trace = make_trace(WorkloadKind::kMix, 10000, 777, &total, nullptr);
  const auto fast = build_samples(trace, 110);
  const auto slow = reference::brute_force_samples(trace, 110);
  uint64_t mismatches = fast.size() == slow.size() ? 0 : 1;
  for (size_t i = 0; mismatches == 0 && i < fast.size(); ++i) {
    if (fast[i].context.size() != slow[i].context.size()) {
      ++mismatches;
      break;
    }
    for (size_t c = 0; c < fast[i].context.size(); ++c) {
      if (fast[i].context[c].index != slow[i].context[c].index ||
          fast[i].context[c].residence != slow[i].context[c].residence) {
        ++mismatches;
        break;
      }
    }
  }
  report(3, mismatches == 0,
         fmt("build_samples vs O(n^2) oracle on 10k instructions: %llu mismatches",
             static_cast<unsigned long long>(mismatches)));
}

// 4. History-context structures vs brute-force references.
void criterion_4(Artifacts&) {
  HistoryConfig cfg;
  cfg.l1i = {4 * 1024, 2, 1};
  cfg.l1d = {2 * 1024, 2, 5};
  cfg.l2 = {16 * 1024, 4, 29};
  cfg.tlb_l1_entries = 8;
  cfg.tlb_l1_ways = 4;
  cfg.tlb_l2_entries = 16;
  cfg.tlb_l2_ways = 4;
  cfg.walk_cache_entries = 8;
  cfg.walk_cache_ways = 2;
  HistoryState h{cfg};
  reference::RefHistory ref(cfg);
  Rng rng(4242);
  uint64_t cache_mismatches = 0;
  for (int i = 0; i < 10000; ++i) {
    const AccessKind kind = static_cast<AccessKind>(rng.next_below(3));
    const uint64_t addr = rng.next_below(64 * 1024) + (rng.next_bool(0.2) ? (1ull << 21) : 0);
    const AccessResult got = h.cache_access(addr, kind);
    const reference::RefResult want = ref.access(addr, kind);
    const bool same = got.level == want.level && got.walk_levels[0] == want.walk[0] &&
                      got.walk_levels[1] == want.walk[1] && got.walk_levels[2] == want.walk[2] &&
                      got.writebacks_l1 == want.wb_l1 && got.writebacks_l2 == want.wb_l2 &&
                      got.writebacks_walk == want.wb_walk;
    if (!same) ++cache_mismatches;
  }

  HistoryConfig bp_cfg;
  bp_cfg.bp_choice_bits = 6;
  bp_cfg.bp_global_bits = 6;
  bp_cfg.btb_bits = 4;
  HistoryState hb{bp_cfg};
  reference::RefBimode refbp(6, 6, 4);
  uint64_t bp_mismatches = 0;
  Rng rng2(99);
  for (int i = 0; i < 10000; ++i) {
    const uint64_t pc = 0x400000 + rng2.next_below(256) * 4;
    const bool conditional = rng2.next_bool(0.8);
    const bool taken = conditional ? rng2.next_bool(0.6) : true;
    const uint64_t target = 0x400000 + rng2.next_below(512) * 4;
    if (hb.branch_predict_and_update(pc, conditional, taken, target) !=
        refbp.run(pc, conditional, taken, target))
      ++bp_mismatches;
  }
  report(4, cache_mismatches == 0 && bp_mismatches == 0,
         fmt("LRU/writeback mismatches: %llu, 2-bit predictor mismatches: %llu (10k each)",
             static_cast<unsigned long long>(cache_mismatches),
             static_cast<unsigned long long>(bp_mismatches)));
}

// 5. Analytic gradients vs central finite differences, 5 seeds.
void criterion_5(Artifacts&) {
  double worst = 0.0;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    const CnnConfig cfg = CnnConfig::tiny(4, 8);
    const ModelWeights w = init_weights(cfg, NormStats{}, seed);
    Rng rng(seed * 17);
    std::vector<float> input(static_cast<size_t>(cfg.input_channels) * (cfg.max_context + 1));
    for (auto& v : input) v = rng.next_symmetric(1.5f);
    const LatencyTriple label{static_cast<uint32_t>(rng.next_below(12)),
                              static_cast<uint32_t>(1 + rng.next_below(12)), 0};
    worst = std::max(worst, gradient_check(w, input.data(), label));
  }
  report(5, worst < 1e-3, fmt("max relative gradient error over 5 seeds: %.2e", worst));
}

// 6. Learned predictor quality on the held-out test partition.
void criterion_6(Artifacts& a) {
  const EvalResult r = evaluate_model(a.model, a.dataset.test, a.dataset.layout);
  const bool pass = r.class_accuracy[0] >= 0.80 && r.mean_error[0] <= 0.25 &&
                    r.mean_error[1] <= 0.25 && r.mean_error[2] <= 0.25;
  report(6, pass,
         fmt("fetch class accuracy %.3f (>=0.80); mean errors f=%.3f e=%.3f s=%.3f (<=0.25) on "
             "%zu test samples",
             r.class_accuracy[0], r.mean_error[0], r.mean_error[1], r.mean_error[2], r.count));
}

// 7. CPI on workload kinds excluded from training.
void criterion_7(Artifacts& a) {
  bool pass = true;
  std::string detail;
  for (size_t i = kTrainKinds.size(); i < a.all.size(); ++i) {
    Workload& w = a.all[i];
    SimConfig sim;
    sim.max_context = a.model.config.max_context;
    const SimResult r = simulate_trace(w.trace, *a.predictor, sim);
    check_identity(r);
    const double err = cpi_error_percent(r.cpi, w.des_cpi);
    pass = pass && err <= 15.0;
    detail += fmt("%s %.2f%% (cpi %.3f vs %.3f) ", to_string(w.kind), err, r.cpi, w.des_cpi);
  }
  report(7, pass, "unseen-workload CPI error (<=15%): " + detail);
}

// 8. Parallel simulation consistency.
void criterion_8(Artifacts& a) {
  const auto& trace = a.all[0].trace;  // mix
  SimConfig sim;
  sim.max_context = a.model.config.max_context;

  const SimResult seq = simulate_trace(trace, *a.predictor, sim);
  check_identity(seq);

  ParallelConfig p1;
  p1.k = 1;
  p1.sim = sim;
  const ParallelResult k1 = simulate_parallel(trace, *a.predictor, p1);
  check_identity(k1);
  const bool k1_exact = k1.total_cycles == seq.total_cycles &&
                        k1.sub_results[0].predicted_fetch == seq.predicted_fetch &&
                        k1.sub_results[0].delta == seq.delta;

  ParallelConfig pk;
  pk.subtrace_size = 3000;
  pk.sim = sim;
  const ParallelResult par = simulate_parallel(trace, *a.predictor, pk);
  check_identity(par);
  uint64_t sum = 0;
  for (const auto& s : par.sub_results) sum += s.total_cycles;
  const bool additive = sum == par.total_cycles;
  const double cpi_err = cpi_error_percent(par.cpi, seq.cpi);

  bool deterministic = true;
#ifdef _OPENMP
  for (int workers : {1, 2, 5, 8}) {
    omp_set_num_threads(workers);
    const ParallelResult again = simulate_parallel(trace, *a.predictor, pk);
    deterministic = deterministic && again.total_cycles == par.total_cycles &&
                    again.predicted_fetch == par.predicted_fetch;
  }
  omp_set_num_threads(omp_get_num_procs());
#endif
  const bool pass = k1_exact && additive && cpi_err <= 2.0 && deterministic;
  report(8, pass,
         fmt("K=1 bit-exact: %s; 3k-sub-trace CPI drift %.3f%% (<=2%%); additivity: %s; "
             "deterministic across 1..8 workers: %s",
             k1_exact ? "yes" : "NO", cpi_err, additive ? "exact" : "NO",
             deterministic ? "yes" : "NO"));
}

// 9. File round-trips and training determinism.
void criterion_9(Artifacts& a) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "ilsim_acceptance";
  fs::create_directories(dir);
  auto bytes_of = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>{std::istreambuf_iterator<char>(in), {}};
  };

  // trace round trip
  std::vector<AnnotatedInstruction> head(a.all[1].trace.begin(), a.all[1].trace.begin() + 20000);
  const auto t1 = dir / "t1.bin", t2 = dir / "t2.bin";
  write_trace(t1.string(), head, 5);
  write_trace(t2.string(), read_trace(t1.string()).instructions, 5);
  const bool trace_ok = bytes_of(t1) == bytes_of(t2);

  // dataset round trip
  std::vector<const std::vector<AnnotatedInstruction>*> refs{&head};
  const Dataset small = build_dataset(refs, FeatureLayout{}, true, SplitRatios{});
  const auto d1 = dir / "d1.bin", d2 = dir / "d2.bin";
  save_dataset(d1.string(), small);
  save_dataset(d2.string(), load_dataset(d1.string()));
  const bool ds_ok = bytes_of(d1) == bytes_of(d2);

  // model round trip
  const auto m1 = dir / "m1.bin", m2 = dir / "m2.bin";
  save_model(m1.string(), a.model);
  save_model(m2.string(), load_model(m1.string()));
  const bool model_ok = bytes_of(m1) == bytes_of(m2);

  // fixed-seed retraining reproduces bit-identical weights
  CnnConfig cfg = CnnConfig::preset_c3(small.layout.max_context);
  cfg.conv_channels = {16, 16, 16};
  cfg.fc_hidden = 32;
  TrainParams tp;
  tp.epochs = 2;
  tp.batch_size = 128;
  tp.seed = 5;
  Dataset clipped = small;
  clipped.train.resize(std::min<size_t>(clipped.train.size(), 4000));
  const ModelWeights w1 = train_model(clipped, cfg, tp);
  const ModelWeights w2 = train_model(clipped, cfg, tp);
  const bool train_ok = w1.params == w2.params && w1.adam_m == w2.adam_m && w1.adam_v == w2.adam_v;

  fs::remove_all(dir);
  report(9, trace_ok && ds_ok && model_ok && train_ok,
         fmt("round-trips byte-exact: trace %s, dataset %s, model %s; fixed-seed retrain "
             "bit-identical: %s",
             trace_ok ? "yes" : "NO", ds_ok ? "yes" : "NO", model_ok ? "yes" : "NO",
             train_ok ? "yes" : "NO"));
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int id) { return only.empty() || only.count(id) > 0; };

  try {
    Artifacts a = build_artifacts();
    // criterion 1 reports early but identity stays checked on every later run
    if (wanted(1)) criterion_1(a);
    if (wanted(2)) criterion_2(a);
    if (wanted(3)) criterion_3(a);
    if (wanted(4)) criterion_4(a);
    if (wanted(5)) criterion_5(a);
    if (wanted(6)) criterion_6(a);
    if (wanted(7)) criterion_7(a);
    if (wanted(8)) criterion_8(a);
    if (wanted(9)) criterion_9(a);

    if (g_identity_failures > 0) {
      std::printf("NOTE: %d identity violations across %d simulate runs\n", g_identity_failures,
                  g_identity_runs);
    } else if (wanted(1)) {
      std::printf("# clock identity held on all %d simulate runs\n", g_identity_runs);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "acceptance aborted: %s\n", e.what());
    return 2;
  }

  int failed = 0;
  for (const auto& c : g_results) failed += c.pass ? 0 : 1;
  std::printf("%s: %zu criteria run, %d failed\n", failed == 0 ? "ACCEPTANCE PASS" : "ACCEPTANCE FAIL",
              g_results.size(), failed);
  return failed == 0 ? 0 : 1;
}
