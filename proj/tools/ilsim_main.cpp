// Command line for the whole pipeline: workload generation, reference DES
// runs, dataset building, training, simulation, and evaluation reports.

#include <chrono>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "ilsim/cnn.hpp"
#include "ilsim/dataset.hpp"
#include "ilsim/des.hpp"
#include "ilsim/metrics.hpp"
#include "ilsim/parallel.hpp"
#include "ilsim/predictor.hpp"
#include "ilsim/simcore.hpp"
#include "ilsim/trace.hpp"
#include "ilsim/workload.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

using namespace ilsim;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path);
  out << text;
  if (!out) throw Error("write failed: " + path);
}

int cmd_gen_workload(const std::string& spec_path, const std::string& out_path) {
  const WorkloadSpec spec = load_workload_spec(spec_path);
  const auto program = generate(spec);
  write_program(out_path, program);
  std::cout << "generated " << program.size() << " instructions (" << to_string(spec.kind)
            << ", seed " << spec.seed << ") -> " << out_path << "\n";
  return 0;
}

int cmd_des_run(const std::string& program_path, const std::string& config_path,
                const std::string& out_path, const std::string& stats_path) {
  const auto program = read_program(program_path);
  const ProcessorConfig cfg =
      config_path.empty() ? ProcessorConfig{} : load_processor_config(config_path);
  const DesResult res = des_simulate(program, cfg);
  write_trace(out_path, res.trace, hash_processor_config(cfg));

  const auto [sum_fetch, delta] = total_time_identity(res);
  std::ostringstream csv;
  csv << "instructions,total_cycles,cpi,sum_fetch,delta,mispredict_rate,"
         "l1i_hit_rate,l2i_hit_rate,l1d_hit_rate,l2d_hit_rate\n";
  const auto& s = res.stats;
  const double fetches = static_cast<double>(s.fetch_level_count[1] + s.fetch_level_count[2] +
                                             s.fetch_level_count[3]);
  const double datas = static_cast<double>(s.data_level_count[1] + s.data_level_count[2] +
                                           s.data_level_count[3]);
  csv << res.trace.size() << ',' << res.total_cycles << ',' << res.cpi << ',' << sum_fetch << ','
      << delta << ',' << s.mispredict_rate() << ','
      << (fetches > 0 ? s.fetch_level_count[1] / fetches : 0.0) << ','
      << (fetches > 0 ? s.fetch_level_count[2] / fetches : 0.0) << ','
      << (datas > 0 ? s.data_level_count[1] / datas : 0.0) << ','
      << (datas > 0 ? s.data_level_count[2] / datas : 0.0) << '\n';
  if (!stats_path.empty()) write_text(stats_path, csv.str());
  std::cout << "des: " << res.trace.size() << " instructions, " << res.total_cycles
            << " cycles, cpi " << res.cpi << " -> " << out_path << "\n";
  return 0;
}

int cmd_build_dataset(const std::vector<std::string>& trace_paths, const std::string& layout_name,
                      bool dedup, const std::string& split_str, const std::string& out_path) {
  if (layout_name != "default") throw Error("unknown layout: " + layout_name);
  SplitRatios split;
  if (!split_str.empty()) {
    unsigned a, b, c;
    if (std::sscanf(split_str.c_str(), "%u,%u,%u", &a, &b, &c) != 3)
      throw Error("bad split spec (expected T,V,E): " + split_str);
    split = {a, b, c};
  }
  std::vector<std::vector<AnnotatedInstruction>> traces;
  for (const auto& p : trace_paths) traces.push_back(read_trace(p).instructions);
  std::vector<const std::vector<AnnotatedInstruction>*> refs;
  for (const auto& t : traces) refs.push_back(&t);

  DatasetBuildInfo info;
  const Dataset ds = build_dataset(refs, FeatureLayout{}, dedup, split, &info);
  save_dataset(out_path, ds);
  std::cout << "dataset: " << info.raw_samples << " samples, " << info.unique_samples
            << " unique, split " << ds.train.size() << "/" << ds.validation.size() << "/"
            << ds.test.size() << " -> " << out_path << "\n";
  return 0;
}

int cmd_train(const std::string& dataset_path, const std::string& preset, int epochs,
              uint64_t seed, int batch_size, double lr, const std::string& out_path,
              bool verbose) {
  const Dataset ds = load_dataset(dataset_path);
  CnnConfig cfg;
  if (preset == "c3") {
    cfg = CnnConfig::preset_c3(ds.layout.max_context);
  } else if (preset == "c3-rb") {
    cfg = CnnConfig::preset_c3(ds.layout.max_context);
    cfg.residual_blocks = true;
  } else {
    throw Error("unknown preset: " + preset);
  }
  TrainParams tp;
  tp.epochs = epochs;
  tp.seed = seed;
  tp.batch_size = batch_size;
  tp.learning_rate = lr;
  tp.verbose = verbose;
  TrainHistory hist;
  const ModelWeights w = train_model(ds, cfg, tp, &hist);
  save_model(out_path, w);
  std::cout << "trained " << preset << " for " << epochs << " epochs (best epoch "
            << hist.best_epoch << ", val loss "
            << (hist.best_epoch >= 0 ? hist.val_loss[hist.best_epoch] : 0.0) << ") -> "
            << out_path << "\n";
  return 0;
}

int cmd_simulate(const std::string& trace_path, const std::string& model_path, bool oracle,
                 uint64_t parallel_k, uint64_t subtrace_size, size_t batch_max, int workers,
                 uint64_t window, const std::string& report_path,
                 const std::string& phase_path_arg, const std::string& throughput_path) {
#ifdef _OPENMP
  if (workers > 0) omp_set_num_threads(workers);
#endif
  const Trace trace = read_trace(trace_path);
  std::unique_ptr<LatencyPredictor> predictor;
  SimConfig sim;
  if (oracle) {
    predictor = std::make_unique<OraclePredictor>(trace.instructions);
  } else {
    if (model_path.empty()) throw Error("simulate requires --model or --oracle");
    auto cnn = std::make_unique<CnnPredictor>(load_model(model_path));
    sim.max_context = cnn->max_context();
    predictor = std::move(cnn);
  }

  const auto t0 = std::chrono::steady_clock::now();
  SimResult aggregate;
  std::vector<uint32_t> fetch_series;
  if (parallel_k > 1 || subtrace_size > 0) {
    ParallelConfig pc;
    pc.k = parallel_k;
    pc.subtrace_size = subtrace_size;
    pc.batch_max = batch_max;
    pc.sim = sim;
    const ParallelResult pr = simulate_parallel(trace.instructions, *predictor, pc);
    aggregate.instructions = pr.instructions;
    aggregate.total_cycles = pr.total_cycles;
    aggregate.cpi = pr.cpi;
    for (const auto& r : pr.sub_results) {
      aggregate.sum_fetch += r.sum_fetch;
      aggregate.delta += r.delta;
      aggregate.drain_cycles += r.drain_cycles;
      aggregate.overflow_stall_cycles += r.overflow_stall_cycles;
    }
    aggregate.empty = trace.instructions.empty();
    fetch_series = pr.predicted_fetch;
  } else {
    aggregate = simulate_trace(trace.instructions, *predictor, sim);
    fetch_series = aggregate.predicted_fetch;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  write_text(report_path, sim_report_csv(aggregate));
  const uint64_t w = window > 0 ? window : std::max<uint64_t>(1, trace.instructions.size() / 100);
  if (!fetch_series.empty()) {
    const std::string phase_path =
        phase_path_arg.empty() ? report_path + ".phase.csv" : phase_path_arg;
    write_text(phase_path, phase_cpi_csv(phase_cpi(fetch_series, w)));
  }
  if (!throughput_path.empty()) {
    ThroughputRow row{std::max<uint64_t>(parallel_k, 1), aggregate.instructions, seconds};
    write_text(throughput_path, throughput_csv({&row, 1}));
  }
  std::cout << "simulated " << aggregate.instructions << " instructions: " << aggregate.total_cycles
            << " cycles, cpi " << aggregate.cpi << " (" << seconds << "s)\n";
  return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& dataset_path,
                 const std::string& report_path) {
  const ModelWeights w = load_model(model_path);
  const Dataset ds = load_dataset(dataset_path);
  const EvalResult r = evaluate_model(w, ds.test, ds.layout);
  std::ostringstream csv;
  csv << "head,mean_prediction_error,class_accuracy,samples\n";
  const char* heads[3] = {"fetch", "execution", "store"};
  for (int h = 0; h < 3; ++h)
    csv << heads[h] << ',' << r.mean_error[h] << ',' << r.class_accuracy[h] << ',' << r.count
        << '\n';
  write_text(report_path, csv.str());
  std::cout << "evaluate: fetch err " << r.mean_error[0] << " acc " << r.class_accuracy[0]
            << ", exec err " << r.mean_error[1] << ", store err " << r.mean_error[2] << " on "
            << r.count << " test samples\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"instruction-latency learning and trace-driven CPU simulation"};
  app.require_subcommand(1);

  std::string spec_path, out_path, program_path, config_path, stats_path;
  auto* gen = app.add_subcommand("gen-workload", "generate a synthetic instruction stream");
  gen->add_option("--spec", spec_path, "workload spec (json)")->required();
  gen->add_option("--out", out_path, "output program file")->required();

  auto* des = app.add_subcommand("des-run", "run the reference DES over a program");
  des->add_option("--program", program_path)->required();
  des->add_option("--config", config_path, "processor config json (defaults when omitted)");
  des->add_option("--out", out_path, "output trace file")->required();
  des->add_option("--stats", stats_path, "stats csv");

  std::vector<std::string> trace_paths;
  std::string layout_name = "default", split_str = "90,5,5", dataset_path;
  bool dedup = true;
  auto* bd = app.add_subcommand("build-dataset", "build training samples from traces");
  bd->add_option("--trace", trace_paths, "input trace file(s)")->required();
  bd->add_option("--layout", layout_name, "feature layout name");
  bd->add_flag("--dedup,!--no-dedup", dedup, "drop exact duplicate samples");
  bd->add_option("--split", split_str, "train,validation,test percentages");
  bd->add_option("--out", out_path, "output dataset file")->required();

  std::string preset = "c3", model_path;
  int epochs = 30, batch_size = 256;
  uint64_t seed = 1;
  double lr = 0.001;
  bool verbose = false;
  auto* tr = app.add_subcommand("train", "train the latency predictor");
  tr->add_option("--dataset", dataset_path)->required();
  tr->add_option("--preset", preset, "model preset (c3, c3-rb)");
  tr->add_option("--epochs", epochs);
  tr->add_option("--seed", seed);
  tr->add_option("--batch-size", batch_size);
  tr->add_option("--lr", lr);
  tr->add_flag("--verbose", verbose, "per-epoch loss on stderr");
  tr->add_option("--out", out_path, "output model file")->required();

  bool oracle = false;
  uint64_t parallel_k = 1, subtrace_size = 0, window = 0;
  size_t batch_max = 4096;
  int workers = 0;
  std::string report_path, phase_path, throughput_path;
  auto* sim = app.add_subcommand("simulate", "instruction-centric trace simulation");
  sim->add_option("--trace", spec_path)->required();
  sim->add_option("--model", model_path, "trained model file");
  sim->add_flag("--oracle", oracle, "use recorded ground-truth latencies");
  sim->add_option("--parallel", parallel_k, "number of sub-traces");
  sim->add_option("--subtrace-size", subtrace_size, "instructions per sub-trace");
  sim->add_option("--batch-max", batch_max, "max predictor batch size");
  sim->add_option("--workers", workers, "worker threads (default: all cores)");
  sim->add_option("--window", window, "phase CPI window (default: n/100)");
  sim->add_option("--report", report_path, "summary csv")->required();
  sim->add_option("--phase-report", phase_path, "phase CPI csv (default: <report>.phase.csv)");
  sim->add_option("--throughput", throughput_path, "throughput csv");

  std::string eval_report;
  auto* ev = app.add_subcommand("evaluate", "instruction-level errors on the test partition");
  ev->add_option("--model", model_path)->required();
  ev->add_option("--dataset", dataset_path)->required();
  ev->add_option("--report", eval_report)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_workload(spec_path, out_path);
    if (des->parsed()) return cmd_des_run(program_path, config_path, out_path, stats_path);
    if (bd->parsed())
      return cmd_build_dataset(trace_paths, layout_name, dedup, split_str, out_path);
    if (tr->parsed())
      return cmd_train(dataset_path, preset, epochs, seed, batch_size, lr, out_path, verbose);
    if (sim->parsed())
      return cmd_simulate(spec_path, model_path, oracle, parallel_k, subtrace_size, batch_max,
                          workers, window, report_path, phase_path, throughput_path);
    if (ev->parsed()) return cmd_evaluate(model_path, dataset_path, eval_report);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
