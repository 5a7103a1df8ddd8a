#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ddlp/core.hpp"
#include "ddlp/scheduler.hpp"

namespace ddlp {

enum class CalibrationMode { Exact, Probe };

const char* to_string(CalibrationMode m);
CalibrationMode parse_calibration_mode(const std::string& s);

struct SimConfig {
  DatasetSpec spec;
  DeviceProfile profile;
  Policy policy = Policy::Mte;
  std::uint32_t epochs = 1;
  CalibrationMode calibration = CalibrationMode::Exact;
  /// Overrides the ratio-derived split for MTE (exact mode implied).
  std::optional<Split> forced_split;

  void validate() const;
};

struct SimResult {
  Trace trace;
  RunReport report;  // energy fields left 0; the energy model fills them
  std::optional<CalibrationReport> calibration;
  Micros makespan = 0;
};

/// Deterministic virtual-time execution of the full run.
SimResult simulate(const SimConfig& cfg);

/// Independent fixed-step oracle: re-derives the makespan with a tick loop and
/// device-busy counters (no scheduler reuse). dt must divide all three path
/// durations; probe calibration is out of scope (contract error).
Micros step_oracle(const SimConfig& cfg, Micros dt);

/// Structural checks over a trace: per-epoch exactly-once consumption,
/// non-overlap per timeline, staging-before-consumption causality.
/// Returns human-readable violations; empty means the trace is sound.
std::vector<std::string> verify_trace(const Trace& trace, std::uint64_t n_batches,
                                      std::uint32_t epochs);

/// Projected single-epoch outcomes for a profile, alongside the three factors
/// that control them.
struct WhatIfReport {
  double ratio_cpu_csd = 0.0;   // t_csd_pre / t_cpu_path: drives the split
  double gds_path_seconds = 0;  // staged-read cost per batch
  double ratio_gds_csd = 0.0;   // t_gds_path / t_csd_pre: staged drain headroom
  double makespan_cpu_only = 0.0;
  double makespan_mte = 0.0;
  double makespan_wrr = 0.0;
  double mte_speedup_vs_cpu = 0.0;  // makespan_cpu_only / makespan_mte - 1
  double wrr_speedup_vs_cpu = 0.0;
  double wrr_gain_vs_mte = 0.0;  // makespan_mte / makespan_wrr - 1

  std::string to_json() const;
};

WhatIfReport whatif_report(const DatasetSpec& spec, const DeviceProfile& profile);

/// Fraction as "12.3%" (one decimal).
std::string percent_1dp(double fraction);

}  // namespace ddlp
