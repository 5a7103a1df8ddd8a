#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ddlp/core.hpp"

namespace ddlp {

enum class Policy { Mte, Wrr, CpuOnly, CsdOnly };

const char* to_string(Policy p);
Policy parse_policy(const std::string& s);

inline constexpr std::uint64_t kProbeCount = 10;

/// Result of the two-sided probing phase.
struct CalibrationReport {
  double t_cpu_avg = 0.0;  // seconds per batch, CPU path
  double t_csd_avg = 0.0;  // seconds per batch, CSD preprocess
  double ratio = 0.0;      // t_csd_avg / t_cpu_avg
  std::uint64_t n_cpu = 0;
  std::uint64_t n_csd = 0;
};

/// ratio = t_csd_avg / t_cpu_avg; throws std::domain_error unless both > 0.
double perf_ratio(double t_cpu_avg, double t_csd_avg);

/// Integer split of n batches: n_cpu = round(n * ratio / (1 + ratio)), halves
/// toward the CPU side; n_csd = n - n_cpu.
struct Split {
  std::uint64_t n_cpu = 0;
  std::uint64_t n_csd = 0;
};
Split compute_split(std::uint64_t n_batches, double ratio);

/// Exactly kProbeCount positive durations per side; throws otherwise.
CalibrationReport calibrate(const std::vector<double>& cpu_probe_seconds,
                            const std::vector<double>& csd_probe_seconds,
                            std::uint64_t n_batches);

// ---------------------------------------------------------------------------
// Events in, actions out. The same reducers drive the virtual-time simulator
// and the concurrent runtime; executors own clocks and devices, schedulers own
// every decision.
// ---------------------------------------------------------------------------

enum class Prong { Cpu, Csd };

namespace ev {
struct EpochStart {
  std::uint32_t epoch = 0;
};
struct ProbeDone {
  Prong side = Prong::Cpu;
  double duration_seconds = 0.0;
};
struct CpuBatchDone {
  std::uint64_t batch_index = 0;
  std::uint32_t epoch = 0;
  double duration_seconds = 0.0;
};
struct CsdBatchStaged {
  std::uint64_t batch_index = 0;
  std::uint32_t epoch = 0;
  double duration_seconds = 0.0;
};
struct GdsBatchDone {
  std::uint64_t batch_index = 0;
  std::uint32_t epoch = 0;
};
struct CsdLost {};
}  // namespace ev

using SchedulerEvent = std::variant<ev::EpochStart, ev::ProbeDone, ev::CpuBatchDone,
                                    ev::CsdBatchStaged, ev::GdsBatchDone, ev::CsdLost>;

namespace act {
struct PreprocessOnCpu {
  std::uint64_t batch_index = 0;
};
struct PreprocessOnCsd {
  std::uint64_t batch_index = 0;
};
struct ConsumeCpuBatch {
  std::uint64_t batch_index = 0;
};
struct ConsumeStaged {
  std::uint64_t batch_index = 0;
};
struct SignalCsdStop {};
struct EpochDone {
  std::uint32_t epoch = 0;
};
}  // namespace act

using SchedulerAction = std::variant<act::PreprocessOnCpu, act::PreprocessOnCsd,
                                     act::ConsumeCpuBatch, act::ConsumeStaged,
                                     act::SignalCsdStop, act::EpochDone>;

class Scheduler {
 public:
  virtual ~Scheduler() = default;
  /// Deterministic reducer: same event sequence -> same action sequence.
  virtual std::vector<SchedulerAction> on_event(const SchedulerEvent& event) = 0;
  virtual bool calibrating() const { return false; }
  virtual std::optional<CalibrationReport> calibration() const { return std::nullopt; }
  virtual bool degraded() const { return false; }
};

/// Static-split policy. Exact mode takes the split up front; probe mode
/// measures kProbeCount batches per prong during epoch 0 (probe batches count
/// toward coverage, both prongs keep working speculatively while measuring,
/// and the epoch-0 boundary is clamped so already-trained head batches stay on
/// the CPU side). Later epochs reuse the computed split. CpuOnly/CsdOnly are
/// the degenerate splits (n, 0) / (0, n).
class MteScheduler final : public Scheduler {
 public:
  MteScheduler(std::uint64_t n_batches, Split exact_split);   // exact mode
  explicit MteScheduler(std::uint64_t n_batches);             // probe mode, needs n >= 20
  std::vector<SchedulerAction> on_event(const SchedulerEvent& event) override;
  bool calibrating() const override { return calibrating_; }
  std::optional<CalibrationReport> calibration() const override { return report_; }
  bool degraded() const override { return lost_; }

 private:
  void begin_epoch(std::uint32_t epoch, std::vector<SchedulerAction>& out);
  void emit_pair(std::uint64_t index, std::vector<SchedulerAction>& out);
  void finish_calibration(std::vector<SchedulerAction>& out);
  void drain_or_finish(std::vector<SchedulerAction>& out);
  bool consumer_idle() const;

  std::uint64_t n_;
  bool probe_mode_;
  Split split_{};  // exact mode: fixed; probe mode: computed at calibration
  std::optional<CalibrationReport> report_;
  bool lost_ = false;

  std::uint32_t epoch_ = 0;
  bool epoch_open_ = false;
  bool calibrating_ = false;
  std::vector<double> cpu_probes_, csd_probes_;
  std::uint64_t cpu_claimed_ = 0;  // head pairs emitted == next head index
  std::uint64_t cpu_done_ = 0;
  std::uint64_t csd_claimed_ = 0;  // tail stagings requested
  std::uint64_t csd_staged_ = 0;   // tail stagings completed this epoch
  std::uint64_t boundary_ = 0;     // effective n_cpu this epoch
  std::uint64_t quota_ = 0;        // effective n_csd this epoch
  std::deque<std::uint64_t> staged_;
  std::uint64_t gds_emitted_ = 0;
  std::uint64_t gds_done_ = 0;
};

/// Work-conserving policy: the consumer drains every currently staged batch
/// before taking the next head batch on the CPU path; a shared counter stops
/// the CSD once every batch of the epoch was consumed exactly once.
class WrrScheduler final : public Scheduler {
 public:
  explicit WrrScheduler(std::uint64_t n_batches);
  std::vector<SchedulerAction> on_event(const SchedulerEvent& event) override;
  bool degraded() const override { return lost_; }

 private:
  void decide(std::vector<SchedulerAction>& out);
  void account_consumption(std::vector<SchedulerAction>& out);

  std::uint64_t n_;
  bool lost_ = false;

  std::uint32_t epoch_ = 0;
  bool epoch_open_ = false;
  bool stopped_ = false;
  bool consumer_busy_ = false;
  std::uint64_t head_ = 0;     // next head index (CPU prong prefix [0, head_))
  std::uint64_t csd_low_ = 0;  // lowest index consumed from staging; init n
  std::uint64_t total_ = 0;
  std::deque<std::uint64_t> staged_;
};

/// Wires a policy to its scheduler. MTE without a forced split runs in probe
/// mode; with one (or for CpuOnly/CsdOnly) it runs exact.
std::unique_ptr<Scheduler> make_scheduler(Policy policy, std::uint64_t n_batches,
                                          std::optional<Split> exact_split);

}  // namespace ddlp
