// Python bindings over the file-level pipeline operations plus a few pure
// helpers. Heavy calls release the GIL.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ilsim/cnn.hpp"
#include "ilsim/dataset.hpp"
#include "ilsim/des.hpp"
#include "ilsim/metrics.hpp"
#include "ilsim/parallel.hpp"
#include "ilsim/predictor.hpp"
#include "ilsim/simcore.hpp"
#include "ilsim/trace.hpp"
#include "ilsim/workload.hpp"

namespace py = pybind11;
using namespace ilsim;

namespace {

py::dict sim_result_dict(const SimResult& r) {
  py::dict d;
  d["instructions"] = r.instructions;
  d["total_cycles"] = r.total_cycles;
  d["cpi"] = r.cpi;
  d["sum_fetch"] = r.sum_fetch;
  d["delta"] = r.delta;
  d["drain_cycles"] = r.drain_cycles;
  d["overflow_stall_cycles"] = r.overflow_stall_cycles;
  d["empty"] = r.empty;
  return d;
}

uint64_t py_gen_workload(const std::string& spec_json, const std::string& out_path) {
  py::gil_scoped_release release;
  const WorkloadSpec spec = parse_workload_spec(spec_json);
  const auto program = generate(spec);
  write_program(out_path, program);
  return program.size();
}

py::dict py_des_run(const std::string& program_path, const std::string& trace_out,
                    const std::string& config_json) {
  DesResult res;
  uint64_t sum_fetch = 0, delta = 0;
  {
    py::gil_scoped_release release;
    const auto program = read_program(program_path);
    const ProcessorConfig cfg =
        config_json.empty() ? ProcessorConfig{} : parse_processor_config(config_json);
    res = des_simulate(program, cfg);
    write_trace(trace_out, res.trace, hash_processor_config(cfg));
    std::tie(sum_fetch, delta) = total_time_identity(res);
  }
  py::dict d;
  d["instructions"] = res.trace.size();
  d["total_cycles"] = res.total_cycles;
  d["cpi"] = res.cpi;
  d["sum_fetch"] = sum_fetch;
  d["delta"] = delta;
  d["mispredict_rate"] = res.stats.mispredict_rate();
  return d;
}

py::dict py_build_dataset(const std::vector<std::string>& trace_paths, const std::string& out_path,
                          bool dedup, uint32_t train_pct, uint32_t val_pct, uint32_t test_pct) {
  DatasetBuildInfo info;
  size_t n_train, n_val, n_test;
  {
    py::gil_scoped_release release;
    std::vector<std::vector<AnnotatedInstruction>> traces;
    for (const auto& p : trace_paths) traces.push_back(read_trace(p).instructions);
    std::vector<const std::vector<AnnotatedInstruction>*> refs;
    for (const auto& t : traces) refs.push_back(&t);
    const Dataset ds =
        build_dataset(refs, FeatureLayout{}, dedup, {train_pct, val_pct, test_pct}, &info);
    save_dataset(out_path, ds);
    n_train = ds.train.size();
    n_val = ds.validation.size();
    n_test = ds.test.size();
  }
  py::dict d;
  d["raw_samples"] = info.raw_samples;
  d["unique_samples"] = info.unique_samples;
  d["train"] = n_train;
  d["validation"] = n_val;
  d["test"] = n_test;
  return d;
}

py::dict py_train(const std::string& dataset_path, const std::string& model_out,
                  const std::string& preset, int epochs, uint64_t seed, int batch_size,
                  double learning_rate) {
  TrainHistory hist;
  {
    py::gil_scoped_release release;
    const Dataset ds = load_dataset(dataset_path);
    CnnConfig cfg = CnnConfig::preset_c3(ds.layout.max_context);
    if (preset == "c3-rb") cfg.residual_blocks = true;
    else if (preset != "c3") throw Error("unknown preset: " + preset);
    TrainParams tp;
    tp.epochs = epochs;
    tp.seed = seed;
    tp.batch_size = batch_size;
    tp.learning_rate = learning_rate;
    const ModelWeights w = train_model(ds, cfg, tp, &hist);
    save_model(model_out, w);
  }
  py::dict d;
  d["best_epoch"] = hist.best_epoch;
  d["train_loss"] = hist.train_loss;
  d["val_loss"] = hist.val_loss;
  return d;
}

py::dict py_simulate(const std::string& trace_path, const std::string& model_path, bool oracle,
                     uint64_t parallel, uint64_t subtrace_size, size_t batch_max) {
  py::gil_scoped_release release;
  const Trace trace = read_trace(trace_path);
  std::unique_ptr<LatencyPredictor> predictor;
  SimConfig sim;
  if (oracle) {
    predictor = std::make_unique<OraclePredictor>(trace.instructions);
  } else {
    if (model_path.empty()) throw Error("simulate requires a model path or oracle=True");
    auto cnn = std::make_unique<CnnPredictor>(load_model(model_path));
    sim.max_context = cnn->max_context();
    predictor = std::move(cnn);
  }
  if (parallel > 1 || subtrace_size > 0) {
    ParallelConfig pc;
    pc.k = parallel;
    pc.subtrace_size = subtrace_size;
    pc.batch_max = batch_max;
    pc.sim = sim;
    const ParallelResult pr = simulate_parallel(trace.instructions, *predictor, pc);
    SimResult agg;
    agg.instructions = pr.instructions;
    agg.total_cycles = pr.total_cycles;
    agg.cpi = pr.cpi;
    for (const auto& s : pr.sub_results) {
      agg.sum_fetch += s.sum_fetch;
      agg.delta += s.delta;
      agg.drain_cycles += s.drain_cycles;
      agg.overflow_stall_cycles += s.overflow_stall_cycles;
    }
    py::gil_scoped_acquire acquire;
    py::dict d = sim_result_dict(agg);
    d["sub_traces"] = pr.sub_results.size();
    return d;
  }
  const SimResult r = simulate_trace(trace.instructions, *predictor, sim);
  py::gil_scoped_acquire acquire;
  return sim_result_dict(r);
}

py::dict py_evaluate(const std::string& model_path, const std::string& dataset_path) {
  EvalResult r;
  {
    py::gil_scoped_release release;
    const ModelWeights w = load_model(model_path);
    const Dataset ds = load_dataset(dataset_path);
    r = evaluate_model(w, ds.test, ds.layout);
  }
  py::dict d;
  d["mean_error"] = std::vector<double>{r.mean_error[0], r.mean_error[1], r.mean_error[2]};
  d["class_accuracy"] =
      std::vector<double>{r.class_accuracy[0], r.class_accuracy[1], r.class_accuracy[2]};
  d["samples"] = r.count;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "instruction-latency learning and trace-driven CPU simulation";

  m.def("gen_workload", &py_gen_workload, py::arg("spec_json"), py::arg("out_path"),
        "Generate a synthetic instruction stream; returns the instruction count.");
  m.def("des_run", &py_des_run, py::arg("program_path"), py::arg("trace_out"),
        py::arg("config_json") = "",
        "Run the reference DES over a program file and write an annotated trace.");
  m.def("build_dataset", &py_build_dataset, py::arg("trace_paths"), py::arg("out_path"),
        py::arg("dedup") = true, py::arg("train_pct") = 90, py::arg("val_pct") = 5,
        py::arg("test_pct") = 5, "Build a training dataset from annotated traces.");
  m.def("train", &py_train, py::arg("dataset_path"), py::arg("model_out"),
        py::arg("preset") = "c3", py::arg("epochs") = 8, py::arg("seed") = 1,
        py::arg("batch_size") = 256, py::arg("learning_rate") = 0.001,
        "Train the CNN latency predictor; returns the loss history.");
  m.def("simulate", &py_simulate, py::arg("trace_path"), py::arg("model_path") = "",
        py::arg("oracle") = false, py::arg("parallel") = 1, py::arg("subtrace_size") = 0,
        py::arg("batch_max") = 4096,
        "Instruction-centric simulation of a trace; returns cycle counts and CPI.");
  m.def("evaluate", &py_evaluate, py::arg("model_path"), py::arg("dataset_path"),
        "Instruction-level prediction errors on the test partition.");

  m.def("prediction_error", &prediction_error, py::arg("predicted"), py::arg("truth"));
  m.def("cpi_error_percent", &cpi_error_percent, py::arg("cpi_model"), py::arg("cpi_reference"));
  m.def("partition_starts", [](uint64_t n, uint64_t k) { return partition(n, k).starts; },
        py::arg("trace_length"), py::arg("k"));
  m.def("model_flops", [](const std::string& preset) {
    CnnConfig cfg = CnnConfig::preset_c3();
    if (preset == "c3-rb") cfg.residual_blocks = true;
    else if (preset != "c3") throw Error("unknown preset: " + preset);
    return model_flops(cfg);
  }, py::arg("preset") = "c3");

  py::register_exception<Error>(m, "IlsimError");
  m.attr("__version__") = "0.1.0";
}
