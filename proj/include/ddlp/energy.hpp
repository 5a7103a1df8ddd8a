#pragma once

#include <cstdint>

#include "ddlp/core.hpp"

namespace ddlp {

/// Host/device power draw and tariff. 17 processes at 5 W each models the
/// fully parallel host preprocessing configuration (main + 16 extras).
struct PowerModel {
  double p_cpu_process = 5.0;     // watts per CPU process
  std::uint32_t n_processes = 1;  // processes charged while the CPU prong runs
  double p_csd = 0.25;            // watts, storage-side preprocessing
  double price_per_kwh = 0.095;   // dollars

  void validate() const;  // throws std::invalid_argument on negatives / zero processes
};

/// E = (p_cpu_process * n_processes * cpu_active + p_csd * csd_busy) / n_total.
/// cpu_active is the CPU-prong busy time: full wall time for a pure-CPU run,
/// and only the CPU-side share when a CSD prong carries the rest. Wasted
/// storage-side work still burned power, so it stays in csd_busy.
double energy_per_batch(double cpu_active_seconds, double csd_busy_seconds,
                        const PowerModel& pm, std::uint64_t n_total_batches);

/// Same, fed from a report's aggregate busy times (n_total = batches x epochs).
double energy_per_batch(const RunReport& report, const PowerModel& pm);

/// Same, re-derived from raw trace intervals (reconstruction cross-check).
double energy_per_batch(const Trace& trace, const PowerModel& pm);

/// cost = e_per_batch * batches_per_epoch * epochs / 3.6e6 * price.
double electricity_cost(double e_per_batch_joules, std::uint64_t batches_per_epoch,
                        std::uint64_t epochs, double price_per_kwh);

/// Host-side preprocessing seconds per trained batch. Storage-side work and
/// staged reads cost the host (approximately) nothing, so only CPU-path
/// intervals count. Empty trace -> 0.
double host_usage_per_batch(const Trace& trace);

/// Fills the energy/cost/host-usage fields of a report in place.
void finalize_energy(RunReport& report, const Trace& trace, const PowerModel& pm);

}  // namespace ddlp
