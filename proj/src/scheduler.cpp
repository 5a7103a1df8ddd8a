#include "ddlp/scheduler.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ddlp {

const char* to_string(Policy p) {
  switch (p) {
    case Policy::Mte: return "mte";
    case Policy::Wrr: return "wrr";
    case Policy::CpuOnly: return "cpu";
    case Policy::CsdOnly: return "csd";
  }
  throw std::logic_error("bad Policy");
}

Policy parse_policy(const std::string& s) {
  if (s == "mte") return Policy::Mte;
  if (s == "wrr") return Policy::Wrr;
  if (s == "cpu") return Policy::CpuOnly;
  if (s == "csd") return Policy::CsdOnly;
  throw std::invalid_argument("unknown policy: " + s);
}

double perf_ratio(double t_cpu_avg, double t_csd_avg) {
  if (!(t_cpu_avg > 0.0) || !(t_csd_avg > 0.0))
    throw std::domain_error("perf_ratio: probe averages must be > 0");
  return t_csd_avg / t_cpu_avg;
}

Split compute_split(std::uint64_t n_batches, double ratio) {
  if (!(ratio > 0.0) || !std::isfinite(ratio))
    throw std::domain_error("compute_split: ratio must be positive and finite");
  const double x = static_cast<double>(n_batches) * ratio / (1.0 + ratio);
  auto n_cpu = static_cast<std::uint64_t>(std::floor(x + 0.5));  // halves toward CPU
  if (n_cpu > n_batches) n_cpu = n_batches;
  return Split{n_cpu, n_batches - n_cpu};
}

CalibrationReport calibrate(const std::vector<double>& cpu_probe_seconds,
                            const std::vector<double>& csd_probe_seconds,
                            std::uint64_t n_batches) {
  if (cpu_probe_seconds.size() != kProbeCount || csd_probe_seconds.size() != kProbeCount)
    throw std::invalid_argument("calibrate: expected exactly 10 probes per side");
  for (const double d : cpu_probe_seconds)
    if (!(d > 0.0)) throw std::invalid_argument("calibrate: non-positive CPU probe");
  for (const double d : csd_probe_seconds)
    if (!(d > 0.0)) throw std::invalid_argument("calibrate: non-positive CSD probe");
  CalibrationReport r;
  r.t_cpu_avg = std::accumulate(cpu_probe_seconds.begin(), cpu_probe_seconds.end(), 0.0) /
                static_cast<double>(kProbeCount);
  r.t_csd_avg = std::accumulate(csd_probe_seconds.begin(), csd_probe_seconds.end(), 0.0) /
                static_cast<double>(kProbeCount);
  r.ratio = perf_ratio(r.t_cpu_avg, r.t_csd_avg);
  const Split s = compute_split(n_batches, r.ratio);
  r.n_cpu = s.n_cpu;
  r.n_csd = s.n_csd;
  return r;
}

// ---------------------------------------------------------------------------
// MTE
// ---------------------------------------------------------------------------

MteScheduler::MteScheduler(std::uint64_t n_batches, Split exact_split)
    : n_(n_batches), probe_mode_(false), split_(exact_split) {
  if (n_ == 0) throw std::invalid_argument("scheduler: zero batches");
  if (split_.n_cpu + split_.n_csd != n_)
    throw std::invalid_argument("scheduler: split does not cover the dataset");
}

MteScheduler::MteScheduler(std::uint64_t n_batches) : n_(n_batches), probe_mode_(true) {
  if (n_ < 2 * kProbeCount)
    throw std::invalid_argument("scheduler: probe calibration needs at least 20 batches");
}

void MteScheduler::emit_pair(std::uint64_t index, std::vector<SchedulerAction>& out) {
  out.push_back(act::PreprocessOnCpu{index});
  out.push_back(act::ConsumeCpuBatch{index});
}

bool MteScheduler::consumer_idle() const {
  return !calibrating_ && cpu_done_ == cpu_claimed_ && gds_emitted_ == gds_done_;
}

void MteScheduler::begin_epoch(std::uint32_t epoch, std::vector<SchedulerAction>& out) {
  epoch_ = epoch;
  epoch_open_ = true;
  cpu_claimed_ = cpu_done_ = 0;
  csd_claimed_ = csd_staged_ = 0;
  gds_emitted_ = gds_done_ = 0;
  staged_.clear();

  if (probe_mode_ && epoch == 0 && !lost_) {
    calibrating_ = true;
    cpu_probes_.clear();
    csd_probes_.clear();
    for (std::uint64_t j = 0; j < kProbeCount; ++j) emit_pair(j, out);
    cpu_claimed_ = kProbeCount;
    for (std::uint64_t j = 0; j < kProbeCount; ++j)
      out.push_back(act::PreprocessOnCsd{n_ - 1 - j});
    csd_claimed_ = kProbeCount;
    return;
  }

  if (lost_) {
    boundary_ = n_;
    quota_ = 0;
  } else {
    boundary_ = split_.n_cpu;
    quota_ = split_.n_csd;
  }
  for (std::uint64_t i = 0; i < boundary_; ++i) emit_pair(i, out);
  cpu_claimed_ = boundary_;
  for (std::uint64_t j = 0; j < quota_; ++j) out.push_back(act::PreprocessOnCsd{n_ - 1 - j});
  csd_claimed_ = quota_;
  drain_or_finish(out);  // handles the (n, 0) and (0, n) degenerate splits
}

void MteScheduler::finish_calibration(std::vector<SchedulerAction>& out) {
  report_ = calibrate(cpu_probes_, csd_probes_, n_);
  split_ = Split{report_->n_cpu, report_->n_csd};
  // Head batches already claimed (trained or in flight) cannot move to the
  // CSD side, so the epoch-0 boundary only ever shifts toward the CPU.
  boundary_ = std::max(split_.n_cpu, cpu_claimed_);
  quota_ = n_ - boundary_;
  calibrating_ = false;

  for (std::uint64_t i = cpu_claimed_; i < boundary_; ++i) emit_pair(i, out);
  cpu_claimed_ = boundary_;
  for (std::uint64_t j = csd_claimed_; j < quota_; ++j)
    out.push_back(act::PreprocessOnCsd{n_ - 1 - j});
  csd_claimed_ = std::max(csd_claimed_, quota_);

  // Probe stagings that landed below the boundary are waste; drop them here so
  // the staged queue holds consumable indices only.
  std::deque<std::uint64_t> keep;
  for (const std::uint64_t k : staged_)
    if (k >= boundary_) keep.push_back(k);
  staged_ = std::move(keep);

  drain_or_finish(out);
}

void MteScheduler::drain_or_finish(std::vector<SchedulerAction>& out) {
  if (!epoch_open_ || calibrating_) return;
  if (consumer_idle() && cpu_done_ == boundary_ && !staged_.empty() && gds_emitted_ < quota_) {
    const std::uint64_t k = staged_.front();
    staged_.pop_front();
    ++gds_emitted_;
    out.push_back(act::ConsumeStaged{k});
    return;
  }
  if (cpu_done_ == boundary_ && gds_done_ == quota_) {
    epoch_open_ = false;
    out.push_back(act::EpochDone{epoch_});
  }
}

std::vector<SchedulerAction> MteScheduler::on_event(const SchedulerEvent& event) {
  std::vector<SchedulerAction> out;
  std::visit(
      [&](const auto& e) {
        using E = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<E, ev::EpochStart>) {
          begin_epoch(e.epoch, out);
        } else if constexpr (std::is_same_v<E, ev::ProbeDone>) {
          if (!calibrating_) return;  // stale measurement
          auto& probes = e.side == Prong::Cpu ? cpu_probes_ : csd_probes_;
          if (probes.size() < kProbeCount) probes.push_back(e.duration_seconds);
          if (cpu_probes_.size() == kProbeCount && csd_probes_.size() == kProbeCount)
            finish_calibration(out);
        } else if constexpr (std::is_same_v<E, ev::CpuBatchDone>) {
          if (!epoch_open_ || e.epoch != epoch_) return;
          ++cpu_done_;
          if (calibrating_) {
            if (cpu_claimed_ < n_) emit_pair(cpu_claimed_++, out);
            return;
          }
          drain_or_finish(out);
        } else if constexpr (std::is_same_v<E, ev::CsdBatchStaged>) {
          if (e.epoch != epoch_) return;  // stale epoch: trace already counts it as waste
          ++csd_staged_;
          if (calibrating_) {
            staged_.push_back(e.batch_index);
            // Keep the CSD busy while the CPU probes finish, but never cross
            // into the head range the CPU prong has already claimed.
            if (csd_staged_ >= kProbeCount && csd_claimed_ < n_ &&
                n_ - 1 - csd_claimed_ >= cpu_claimed_) {
              out.push_back(act::PreprocessOnCsd{n_ - 1 - csd_claimed_});
              ++csd_claimed_;
            }
            return;
          }
          if (e.batch_index < boundary_) return;  // waste: CPU side owns it
          staged_.push_back(e.batch_index);
          drain_or_finish(out);
        } else if constexpr (std::is_same_v<E, ev::GdsBatchDone>) {
          if (!epoch_open_ || e.epoch != epoch_) return;
          ++gds_done_;
          drain_or_finish(out);
        } else if constexpr (std::is_same_v<E, ev::CsdLost>) {
          if (lost_) return;
          lost_ = true;
          if (!epoch_open_) return;
          if (calibrating_) {
            calibrating_ = false;
            boundary_ = std::max(n_ - csd_staged_, cpu_claimed_);
          } else {
            boundary_ = std::max(n_ - csd_staged_, boundary_);
          }
          quota_ = n_ - boundary_;
          std::deque<std::uint64_t> keep;
          for (const std::uint64_t k : staged_)
            if (k >= boundary_) keep.push_back(k);
          staged_ = std::move(keep);
          for (std::uint64_t i = cpu_claimed_; i < boundary_; ++i) emit_pair(i, out);
          cpu_claimed_ = boundary_;
          drain_or_finish(out);
        }
      },
      event);
  return out;
}

// ---------------------------------------------------------------------------
// WRR
// ---------------------------------------------------------------------------

WrrScheduler::WrrScheduler(std::uint64_t n_batches) : n_(n_batches), csd_low_(n_batches) {
  if (n_ == 0) throw std::invalid_argument("scheduler: zero batches");
}

void WrrScheduler::decide(std::vector<SchedulerAction>& out) {
  if (!epoch_open_ || consumer_busy_) return;
  while (!staged_.empty() && staged_.front() < head_) staged_.pop_front();  // already trained
  if (!staged_.empty()) {
    const std::uint64_t k = staged_.front();
    staged_.pop_front();
    csd_low_ = k;
    consumer_busy_ = true;
    out.push_back(act::ConsumeStaged{k});
    return;
  }
  if (head_ < csd_low_) {
    const std::uint64_t i = head_++;
    consumer_busy_ = true;
    out.push_back(act::PreprocessOnCpu{i});
    out.push_back(act::ConsumeCpuBatch{i});
  }
  // head_ == csd_low_ with the consumer idle implies total_ == n_ (handled in
  // account_consumption), so falling through without an action is unreachable.
}

void WrrScheduler::account_consumption(std::vector<SchedulerAction>& out) {
  consumer_busy_ = false;
  ++total_;
  if (total_ > n_) throw std::logic_error("wrr: consumed more batches than the epoch holds");
  if (total_ == n_) {
    stopped_ = true;
    epoch_open_ = false;
    if (!lost_) out.push_back(act::SignalCsdStop{});
    out.push_back(act::EpochDone{epoch_});
    return;
  }
  decide(out);
}

std::vector<SchedulerAction> WrrScheduler::on_event(const SchedulerEvent& event) {
  std::vector<SchedulerAction> out;
  std::visit(
      [&](const auto& e) {
        using E = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<E, ev::EpochStart>) {
          epoch_ = e.epoch;
          epoch_open_ = true;
          stopped_ = false;
          consumer_busy_ = false;
          head_ = 0;
          csd_low_ = n_;
          total_ = 0;
          staged_.clear();
          if (!lost_)  // tail claims run until the stop signal cuts them off
            for (std::uint64_t j = 0; j < n_; ++j) out.push_back(act::PreprocessOnCsd{n_ - 1 - j});
          decide(out);
        } else if constexpr (std::is_same_v<E, ev::CpuBatchDone>) {
          if (!epoch_open_ || e.epoch != epoch_) return;
          account_consumption(out);
        } else if constexpr (std::is_same_v<E, ev::GdsBatchDone>) {
          if (!epoch_open_ || e.epoch != epoch_) return;
          account_consumption(out);
        } else if constexpr (std::is_same_v<E, ev::CsdBatchStaged>) {
          if (e.epoch != epoch_ || stopped_) return;
          if (e.batch_index < head_) return;  // waste: CPU prefix already covers it
          staged_.push_back(e.batch_index);
          decide(out);  // consumer is normally busy; this only matters in degraded corners
        } else if constexpr (std::is_same_v<E, ev::CsdLost>) {
          lost_ = true;
        } else if constexpr (std::is_same_v<E, ev::ProbeDone>) {
          // WRR does not calibrate.
        }
      },
      event);
  return out;
}

std::unique_ptr<Scheduler> make_scheduler(Policy policy, std::uint64_t n_batches,
                                          std::optional<Split> exact_split) {
  switch (policy) {
    case Policy::Mte:
      if (exact_split) return std::make_unique<MteScheduler>(n_batches, *exact_split);
      return std::make_unique<MteScheduler>(n_batches);
    case Policy::Wrr:
      return std::make_unique<WrrScheduler>(n_batches);
    case Policy::CpuOnly:
      return std::make_unique<MteScheduler>(n_batches, Split{n_batches, 0});
    case Policy::CsdOnly:
      return std::make_unique<MteScheduler>(n_batches, Split{0, n_batches});
  }
  throw std::logic_error("bad Policy");
}

}  // namespace ddlp
