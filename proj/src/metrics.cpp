#include "ilsim/metrics.hpp"

#include <cmath>
#include <sstream>

namespace ilsim {

double prediction_error(double predicted, double truth) {
  if (truth < 0.0) throw Error("prediction_error: negative truth");
  return std::abs(predicted - truth) / (truth + 1.0);
}

double cpi_error_percent(double cpi_model, double cpi_reference) {
  if (cpi_reference <= 0.0) throw Error("cpi_error_percent: non-positive reference CPI");
  return std::abs(cpi_model / cpi_reference - 1.0) * 100.0;
}

PhaseCpi phase_cpi(std::span<const uint32_t> fetch_latencies, uint64_t window) {
  if (window < 1) throw Error("phase_cpi: window must be >= 1");
  PhaseCpi out;
  out.window = window;
  const uint64_t n = fetch_latencies.size();
  for (uint64_t start = 0; start < n; start += window) {
    const uint64_t len = std::min(window, n - start);
    uint64_t sum = 0;
    for (uint64_t i = start; i < start + len; ++i) sum += fetch_latencies[i];
    out.cpi.push_back(static_cast<double>(sum) / static_cast<double>(len));
    if (len < window) out.last_window_partial = true;
  }
  return out;
}

std::string sim_report_csv(const SimResult& r) {
  std::ostringstream out;
  out << "instructions,total_cycles,cpi,sum_fetch,delta,drain_cycles,overflow_stall_cycles,empty\n";
  out << r.instructions << ',' << r.total_cycles << ',' << r.cpi << ',' << r.sum_fetch << ','
      << r.delta << ',' << r.drain_cycles << ',' << r.overflow_stall_cycles << ','
      << (r.empty ? 1 : 0) << '\n';
  return out.str();
}

std::string phase_cpi_csv(const PhaseCpi& p) {
  std::ostringstream out;
  out << "window_index,cpi\n";
  for (size_t i = 0; i < p.cpi.size(); ++i) out << i << ',' << p.cpi[i] << '\n';
  return out.str();
}

}  // namespace ilsim
