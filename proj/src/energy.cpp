#include "ddlp/energy.hpp"

#include <stdexcept>

namespace ddlp {

void PowerModel::validate() const {
  if (p_cpu_process < 0 || p_csd < 0 || price_per_kwh < 0)
    throw std::invalid_argument("power model fields must be non-negative");
  if (n_processes == 0) throw std::invalid_argument("power model needs at least one process");
}

double energy_per_batch(double cpu_active_seconds, double csd_busy_seconds,
                        const PowerModel& pm, std::uint64_t n_total_batches) {
  pm.validate();
  if (cpu_active_seconds < 0 || csd_busy_seconds < 0)
    throw std::invalid_argument("busy times must be non-negative");
  if (n_total_batches == 0)
    throw std::domain_error("energy_per_batch: zero batches");
  double total = pm.p_cpu_process * pm.n_processes * cpu_active_seconds +
                 pm.p_csd * csd_busy_seconds;
  return total / static_cast<double>(n_total_batches);
}

double energy_per_batch(const RunReport& report, const PowerModel& pm) {
  return energy_per_batch(report.cpu_busy_preprocess_time, report.csd_busy_time, pm,
                          report.n_batches * report.epochs);
}

double energy_per_batch(const Trace& trace, const PowerModel& pm) {
  double cpu_active = 0.0;
  double csd_busy = 0.0;
  std::uint64_t consumed = 0;
  for (const TraceEvent& e : trace.events) {
    double span = micros_to_seconds(e.t_end - e.t_start);
    switch (e.source) {
      case SourceTag::CpuPath:
        cpu_active += span;
        ++consumed;
        break;
      case SourceTag::GdsPath:
        ++consumed;
        break;
      case SourceTag::CsdPre:
        csd_busy += span;
        break;
    }
  }
  return energy_per_batch(cpu_active, csd_busy, pm, consumed);
}

double electricity_cost(double e_per_batch_joules, std::uint64_t batches_per_epoch,
                        std::uint64_t epochs, double price_per_kwh) {
  if (e_per_batch_joules < 0 || price_per_kwh < 0)
    throw std::invalid_argument("cost inputs must be non-negative");
  double joules = e_per_batch_joules * static_cast<double>(batches_per_epoch) *
                  static_cast<double>(epochs);
  return joules / 3.6e6 * price_per_kwh;
}

double host_usage_per_batch(const Trace& trace) {
  double cpu_seconds = 0.0;
  std::uint64_t consumed = 0;
  for (const TraceEvent& e : trace.events) {
    if (e.source == SourceTag::CpuPath) {
      cpu_seconds += micros_to_seconds(e.t_end - e.t_start);
      ++consumed;
    } else if (e.source == SourceTag::GdsPath) {
      ++consumed;
    }
  }
  return consumed == 0 ? 0.0 : cpu_seconds / static_cast<double>(consumed);
}

void finalize_energy(RunReport& report, const Trace& trace, const PowerModel& pm) {
  double e_batch = energy_per_batch(report, pm);
  report.energy_joules_per_batch = e_batch;
  report.energy_joules = pm.p_cpu_process * pm.n_processes * report.cpu_busy_preprocess_time +
                         pm.p_csd * report.csd_busy_time;
  report.cost_dollars =
      electricity_cost(e_batch, report.n_batches, report.epochs, pm.price_per_kwh);
  report.host_usage_seconds_per_batch = host_usage_per_batch(trace);
}

}  // namespace ddlp
