#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace ddlp {

// All scheduling arithmetic runs on integer microseconds so that makespans of
// analytically derived scenarios compare exactly (no float drift).
using Micros = std::int64_t;

constexpr double micros_to_seconds(Micros t) { return static_cast<double>(t) / 1e6; }
Micros seconds_to_micros(double seconds);

/// Synthetic dataset description. Samples are generated, not loaded; `seed`
/// pins the content generator so every process derives identical bytes.
struct DatasetSpec {
  std::uint64_t n_samples = 0;
  std::uint64_t batch_size = 1;
  std::uint32_t height = 1;
  std::uint32_t width = 1;
  std::uint32_t channels = 3;
  std::uint64_t seed = 0;

  std::uint64_t n_batches() const;                            // ceil(n_samples / batch_size)
  std::uint64_t samples_in_batch(std::uint64_t batch) const;  // final batch may be short
  void validate() const;                                      // throws std::invalid_argument
};

/// Per-batch durations of the three data paths, microseconds.
///   t_cpu_path: CPU preprocess + transfer + consumer compute (one unit)
///   t_csd_pre : CSD preprocess + write to staging
///   t_gds_path: direct staged read + consumer compute
struct DeviceProfile {
  Micros t_cpu_path = 0;
  Micros t_csd_pre = 0;
  Micros t_gds_path = 0;

  void validate() const;
};

enum class SourceTag { CpuPath, CsdPre, GdsPath };

const char* to_string(SourceTag tag);
SourceTag parse_source_tag(const std::string& s);

struct TraceEvent {
  Micros t_start = 0;
  Micros t_end = 0;
  SourceTag source = SourceTag::CpuPath;
  std::uint64_t batch_index = 0;
  std::uint32_t epoch = 0;
};

/// Ordered log of everything that happened in a run. Consumer-side events
/// (CpuPath, GdsPath) share one timeline and must not overlap; CsdPre events
/// form the producer timeline.
struct Trace {
  std::vector<TraceEvent> events;

  void add(TraceEvent ev);
  Micros makespan() const;  // max consumer-side t_end, 0 if empty

  /// CSV with a header row; times as seconds with 6 decimals (exact micros).
  void write_csv(std::ostream& out) const;
  static Trace read_csv(std::istream& in);
};

enum class Side { Head, Tail };

/// Batch ids a prong touches: Head -> [0, count), Tail -> [n-1, n-count]
/// descending. count > n_batches() throws std::out_of_range.
std::vector<std::uint64_t> batch_indices(const DatasetSpec& spec, Side side, std::uint64_t count);
std::vector<std::uint64_t> batch_indices(std::uint64_t n_batches, Side side, std::uint64_t count);

/// Aggregated outcome of a simulated or real run. Times in seconds.
/// n_cpu_trained / n_csd_trained are per-epoch counts (every epoch is checked
/// to cover each batch exactly once; the first epoch's counts are reported).
struct RunReport {
  double makespan = 0.0;
  double avg_batch_time = 0.0;
  std::uint64_t n_cpu_trained = 0;
  std::uint64_t n_csd_trained = 0;
  std::uint64_t wasted_csd_batches = 0;
  double cpu_busy_preprocess_time = 0.0;
  double csd_busy_time = 0.0;
  double energy_joules = 0.0;  // filled by the energy model
  double cost_dollars = 0.0;   // filled by the energy model
  // Filled alongside energy_joules / cost_dollars:
  double energy_joules_per_batch = 0.0;
  double host_usage_seconds_per_batch = 0.0;
  // Run metadata.
  std::string policy;
  std::uint32_t epochs = 1;
  std::uint64_t n_batches = 0;
  bool degraded = false;

  std::string to_json() const;  // exact field names above
  static RunReport from_json(const std::string& text);
};

/// Derive counts/busy-times from a trace. Throws std::runtime_error if any
/// epoch does not consume each batch exactly once.
RunReport build_report(const Trace& trace, std::uint64_t n_batches, std::uint32_t epochs,
                       const std::string& policy);

}  // namespace ddlp
