#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ilsim/simcore.hpp"

namespace ilsim {

// Instruction-level prediction error: |predicted - truth| / (truth + 1).
// The +1 keeps the metric defined for the frequent zero-latency labels.
double prediction_error(double predicted, double truth);

// Normalized CPI difference in percent: |cpi_model / cpi_reference - 1| * 100.
double cpi_error_percent(double cpi_model, double cpi_reference);

struct PhaseCpi {
  std::vector<double> cpi;  // one entry per window, in order
  bool last_window_partial = false;
  uint64_t window = 0;
};

// Average CPI per consecutive window of instructions, computed from
// per-instruction fetch latencies (drain excluded). The final partial window
// is included and flagged.
PhaseCpi phase_cpi(std::span<const uint32_t> fetch_latencies, uint64_t window);

std::string sim_report_csv(const SimResult& r);
std::string phase_cpi_csv(const PhaseCpi& p);

}  // namespace ilsim
