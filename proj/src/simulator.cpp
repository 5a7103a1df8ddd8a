#include "ddlp/simulator.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <memory>
#include <deque>
#include <queue>
#include <stdexcept>
#include <unordered_map>
#include <variant>

#include <json.hpp>

namespace ddlp {

const char* to_string(CalibrationMode m) {
  return m == CalibrationMode::Exact ? "exact" : "probe";
}

CalibrationMode parse_calibration_mode(const std::string& s) {
  if (s == "exact") return CalibrationMode::Exact;
  if (s == "probe") return CalibrationMode::Probe;
  throw std::invalid_argument("unknown calibration mode: " + s);
}

void SimConfig::validate() const {
  spec.validate();
  profile.validate();
  if (epochs == 0) throw std::invalid_argument("epochs must be >= 1");
  if (calibration == CalibrationMode::Probe) {
    if (policy != Policy::Mte)
      throw std::invalid_argument("probe calibration applies to the mte policy only");
    if (spec.n_batches() < 2 * kProbeCount)
      throw std::invalid_argument("probe calibration needs at least 20 batches");
  }
  if (forced_split && policy == Policy::Mte) {
    if (forced_split->n_cpu + forced_split->n_csd != spec.n_batches())
      throw std::invalid_argument("forced split must cover every batch exactly once");
  }
}

namespace {

enum class JobKind { Cpu, Gds };

struct ConsumerJob {
  JobKind kind = JobKind::Cpu;
  std::uint64_t index = 0;
  std::uint32_t epoch = 0;
};

struct CsdJob {
  std::uint64_t index = 0;
  std::uint32_t epoch = 0;
};

enum class Completion { CsdDone, ConsumerDone };

// Queue entries snapshot everything about the finished unit of work so device
// state can be reused for the next unit before the entry is interpreted.
struct QEntry {
  Micros t = 0;
  int rank = 0;  // 0: staging completions land before same-instant consumer completions
  std::uint64_t seq = 0;
  Completion kind = Completion::ConsumerDone;
  std::uint64_t generation = 0;  // csd cancellation token
  JobKind consumer_kind = JobKind::Cpu;
  std::uint64_t index = 0;
  std::uint32_t epoch = 0;
  Micros started = 0;
};

struct QEntryAfter {
  bool operator()(const QEntry& a, const QEntry& b) const {
    if (a.t != b.t) return a.t > b.t;
    if (a.rank != b.rank) return a.rank > b.rank;
    return a.seq > b.seq;
  }
};

class SimDriver {
 public:
  explicit SimDriver(const SimConfig& cfg) : cfg_(cfg), n_(cfg.spec.n_batches()) {
    std::optional<Split> split;
    if (cfg_.policy == Policy::Mte) {
      if (cfg_.forced_split) {
        split = *cfg_.forced_split;
      } else if (cfg_.calibration == CalibrationMode::Exact) {
        double ratio = static_cast<double>(cfg_.profile.t_csd_pre) /
                       static_cast<double>(cfg_.profile.t_cpu_path);
        split = compute_split(n_, ratio);
      }
      // probe mode: leave empty, the scheduler measures its own split
    }
    scheduler_ = make_scheduler(cfg_.policy, n_, split);
    probe_mode_ = cfg_.policy == Policy::Mte && cfg_.calibration == CalibrationMode::Probe &&
                  !cfg_.forced_split;
  }

  SimResult run() {
    feed(ev::EpochStart{0});
    while (!queue_.empty()) {
      QEntry e = queue_.top();
      queue_.pop();
      now_ = e.t;
      if (e.kind == Completion::CsdDone) {
        if (e.generation != csd_generation_) continue;  // cancelled by a stop
        csd_busy_ = false;
        trace_.add({e.started, now_, SourceTag::CsdPre, e.index, e.epoch});
        if (!csd_pending_.empty()) start_csd();
        double dur = micros_to_seconds(cfg_.profile.t_csd_pre);
        if (probe_mode_ && e.epoch == 0 && csd_probe_count_ < kProbeCount) {
          ++csd_probe_count_;
          feed(ev::ProbeDone{Prong::Csd, dur});
        }
        feed(ev::CsdBatchStaged{e.index, e.epoch, dur});
      } else {
        consumer_busy_ = false;
        SourceTag tag =
            e.consumer_kind == JobKind::Cpu ? SourceTag::CpuPath : SourceTag::GdsPath;
        trace_.add({e.started, now_, tag, e.index, e.epoch});
        if (!consumer_pending_.empty()) start_consumer();
        if (e.consumer_kind == JobKind::Cpu) {
          double dur = micros_to_seconds(cfg_.profile.t_cpu_path);
          if (probe_mode_ && e.epoch == 0 && cpu_probe_count_ < kProbeCount) {
            ++cpu_probe_count_;
            feed(ev::ProbeDone{Prong::Cpu, dur});
          }
          feed(ev::CpuBatchDone{e.index, e.epoch, dur});
        } else {
          feed(ev::GdsBatchDone{e.index, e.epoch});
        }
      }
    }
    if (epochs_done_ != cfg_.epochs) {
      throw std::logic_error("simulation deadlocked: finished " +
                             std::to_string(epochs_done_) + " of " +
                             std::to_string(cfg_.epochs) + " epochs");
    }

    SimResult result;
    result.makespan = trace_.makespan();
    result.report = build_report(trace_, n_, cfg_.epochs, to_string(cfg_.policy));
    if (cfg_.policy == Policy::Mte) {
      if (probe_mode_) {
        result.calibration = scheduler_->calibration();
      } else {
        CalibrationReport rep;
        rep.t_cpu_avg = micros_to_seconds(cfg_.profile.t_cpu_path);
        rep.t_csd_avg = micros_to_seconds(cfg_.profile.t_csd_pre);
        rep.ratio = rep.t_csd_avg / rep.t_cpu_avg;
        rep.n_cpu = result.report.n_cpu_trained;
        rep.n_csd = result.report.n_csd_trained;
        result.calibration = rep;
      }
    }
    result.trace = std::move(trace_);
    return result;
  }

 private:
  void feed(const SchedulerEvent& event) {
    for (const SchedulerAction& action : scheduler_->on_event(event)) apply(action);
  }

  void apply(const SchedulerAction& action) {
    std::visit(
        [this](const auto& a) {
          using T = std::decay_t<decltype(a)>;
          if constexpr (std::is_same_v<T, act::PreprocessOnCpu>) {
            // CPU preprocess and consumption form one unit; ConsumeCpuBatch
            // carries the timing.
          } else if constexpr (std::is_same_v<T, act::ConsumeCpuBatch>) {
            consumer_pending_.push_back({JobKind::Cpu, a.batch_index, current_epoch_});
            if (!consumer_busy_) start_consumer();
          } else if constexpr (std::is_same_v<T, act::ConsumeStaged>) {
            consumer_pending_.push_back({JobKind::Gds, a.batch_index, current_epoch_});
            if (!consumer_busy_) start_consumer();
          } else if constexpr (std::is_same_v<T, act::PreprocessOnCsd>) {
            csd_pending_.push_back({a.batch_index, current_epoch_});
            if (!csd_busy_) start_csd();
          } else if constexpr (std::is_same_v<T, act::SignalCsdStop>) {
            csd_pending_.clear();
            if (csd_busy_) {
              ++csd_generation_;  // swallow the queued completion
              csd_busy_ = false;
              if (now_ > csd_started_at_) {
                // Partial progress burned real device time: keep it on the
                // trace (it shows up as waste), truncated at the stop instant.
                trace_.add({csd_started_at_, now_, SourceTag::CsdPre, csd_job_.index,
                            csd_job_.epoch});
              }
            }
          } else if constexpr (std::is_same_v<T, act::EpochDone>) {
            ++epochs_done_;
            if (a.epoch + 1 < cfg_.epochs) {
              current_epoch_ = a.epoch + 1;
              feed(ev::EpochStart{current_epoch_});
            }
          }
        },
        action);
  }

  void start_consumer() {
    ConsumerJob job = consumer_pending_.front();
    consumer_pending_.pop_front();
    Micros dur =
        job.kind == JobKind::Cpu ? cfg_.profile.t_cpu_path : cfg_.profile.t_gds_path;
    consumer_busy_ = true;
    queue_.push({now_ + dur, 1, seq_++, Completion::ConsumerDone, 0, job.kind, job.index,
                 job.epoch, now_});
  }

  void start_csd() {
    csd_job_ = csd_pending_.front();
    csd_pending_.pop_front();
    csd_busy_ = true;
    csd_started_at_ = now_;
    queue_.push({now_ + cfg_.profile.t_csd_pre, 0, seq_++, Completion::CsdDone,
                 csd_generation_, JobKind::Cpu, csd_job_.index, csd_job_.epoch, now_});
  }

  SimConfig cfg_;
  std::uint64_t n_;
  std::unique_ptr<Scheduler> scheduler_;
  bool probe_mode_ = false;

  std::priority_queue<QEntry, std::vector<QEntry>, QEntryAfter> queue_;
  std::uint64_t seq_ = 0;
  Micros now_ = 0;
  std::uint32_t current_epoch_ = 0;
  std::uint32_t epochs_done_ = 0;

  std::deque<ConsumerJob> consumer_pending_;
  bool consumer_busy_ = false;

  std::deque<CsdJob> csd_pending_;
  bool csd_busy_ = false;
  Micros csd_started_at_ = 0;
  CsdJob csd_job_;
  std::uint64_t csd_generation_ = 0;

  std::uint64_t cpu_probe_count_ = 0;
  std::uint64_t csd_probe_count_ = 0;

  Trace trace_;
};

Split oracle_split(const SimConfig& cfg, std::uint64_t n) {
  switch (cfg.policy) {
    case Policy::CpuOnly:
      return {n, 0};
    case Policy::CsdOnly:
      return {0, n};
    case Policy::Mte: {
      if (cfg.forced_split) return *cfg.forced_split;
      double ratio = static_cast<double>(cfg.profile.t_csd_pre) /
                     static_cast<double>(cfg.profile.t_cpu_path);
      return compute_split(n, ratio);
    }
    case Policy::Wrr:
      break;
  }
  throw std::logic_error("oracle_split: wrr has no static split");
}

// One epoch of the static-split policies under a fixed tick. Completions are
// handled before starts inside a tick so a staging that lands exactly when the
// consumer frees up is visible to the decision.
Micros oracle_epoch_static(const SimConfig& cfg, Split split, Micros dt) {
  const Micros tc = cfg.profile.t_cpu_path;
  const Micros tk = cfg.profile.t_csd_pre;
  const Micros tg = cfg.profile.t_gds_path;
  const std::uint64_t n_cpu = split.n_cpu;
  const std::uint64_t n_csd = split.n_csd;

  std::uint64_t cpu_started = 0, cpu_done = 0;
  std::uint64_t csd_started = 0, staged = 0;
  std::uint64_t gds_started = 0, gds_done = 0;
  bool consumer_busy = false, csd_busy = false;
  Micros consumer_end = 0, csd_end = 0;
  JobKind consumer_kind = JobKind::Cpu;
  const Micros limit = static_cast<Micros>(n_cpu + n_csd + 4) * (tc + tk + tg);

  for (Micros t = 0;; t += dt) {
    if (csd_busy && csd_end == t) {
      csd_busy = false;
      ++staged;
    }
    if (consumer_busy && consumer_end == t) {
      consumer_busy = false;
      if (consumer_kind == JobKind::Cpu)
        ++cpu_done;
      else
        ++gds_done;
    }
    if (cpu_done == n_cpu && gds_done == n_csd) return t;
    if (!csd_busy && csd_started < n_csd) {
      csd_busy = true;
      csd_end = t + tk;
      ++csd_started;
    }
    if (!consumer_busy) {
      if (cpu_started < n_cpu) {
        consumer_busy = true;
        consumer_kind = JobKind::Cpu;
        consumer_end = t + tc;
        ++cpu_started;
      } else if (cpu_done == n_cpu && gds_started < staged) {
        consumer_busy = true;
        consumer_kind = JobKind::Gds;
        consumer_end = t + tg;
        ++gds_started;
      }
    }
    if (t > limit) throw std::logic_error("step_oracle stalled (static policy)");
  }
}

// One epoch of the weighted-drain policy: before each head batch the consumer
// empties everything currently staged, newest batches never out of order.
Micros oracle_epoch_wrr(const SimConfig& cfg, Micros dt) {
  const std::uint64_t n = cfg.spec.n_batches();
  const Micros tc = cfg.profile.t_cpu_path;
  const Micros tk = cfg.profile.t_csd_pre;
  const Micros tg = cfg.profile.t_gds_path;

  std::uint64_t head = 0;
  std::uint64_t csd_low = n;
  std::uint64_t total = 0;
  std::uint64_t csd_started = 0, csd_done = 0;
  std::deque<std::uint64_t> staged;  // tail indices in production order
  bool consumer_busy = false, csd_busy = false;
  Micros consumer_end = 0, csd_end = 0;
  const Micros limit = static_cast<Micros>(n + 4) * (tc + tk + tg);

  for (Micros t = 0;; t += dt) {
    if (csd_busy && csd_end == t) {
      csd_busy = false;
      staged.push_back(n - 1 - csd_done);
      ++csd_done;
    }
    if (consumer_busy && consumer_end == t) {
      consumer_busy = false;
      ++total;
      if (total == n) return t;  // stop signal: in-flight csd work abandoned
    }
    if (!csd_busy && csd_started < n) {
      csd_busy = true;
      csd_end = t + tk;
      ++csd_started;
    }
    if (!consumer_busy) {
      while (!staged.empty() && staged.front() < head) staged.pop_front();
      if (!staged.empty()) {
        csd_low = staged.front();
        staged.pop_front();
        consumer_busy = true;
        consumer_end = t + tg;
      } else if (head < csd_low) {
        ++head;
        consumer_busy = true;
        consumer_end = t + tc;
      }
    }
    if (t > limit) throw std::logic_error("step_oracle stalled (wrr)");
  }
}

}  // namespace

SimResult simulate(const SimConfig& cfg) {
  cfg.validate();
  return SimDriver(cfg).run();
}

Micros step_oracle(const SimConfig& cfg, Micros dt) {
  cfg.validate();
  if (cfg.calibration != CalibrationMode::Exact)
    throw std::invalid_argument("step_oracle supports exact calibration only");
  if (dt <= 0) throw std::invalid_argument("step_oracle: dt must be positive");
  if (cfg.profile.t_cpu_path % dt != 0 || cfg.profile.t_csd_pre % dt != 0 ||
      cfg.profile.t_gds_path % dt != 0)
    throw std::invalid_argument("step_oracle: dt must divide all path durations");

  Micros total = 0;
  for (std::uint32_t e = 0; e < cfg.epochs; ++e) {
    if (cfg.policy == Policy::Wrr)
      total += oracle_epoch_wrr(cfg, dt);
    else
      total += oracle_epoch_static(cfg, oracle_split(cfg, cfg.spec.n_batches()), dt);
  }
  return total;
}

std::vector<std::string> verify_trace(const Trace& trace, std::uint64_t n_batches,
                                      std::uint32_t epochs) {
  std::vector<std::string> out;
  auto complain = [&out](std::string msg) { out.push_back(std::move(msg)); };

  std::vector<std::vector<std::uint8_t>> consumed(epochs,
                                                  std::vector<std::uint8_t>(n_batches, 0));
  // (epoch, index) -> staging completion time
  std::vector<std::unordered_map<std::uint64_t, Micros>> staged_end(epochs);

  std::vector<const TraceEvent*> consumer_events;
  std::vector<const TraceEvent*> csd_events;

  for (const TraceEvent& e : trace.events) {
    if (e.t_start < 0 || e.t_end < e.t_start) {
      complain("event with inverted or negative time span on batch " +
               std::to_string(e.batch_index));
      continue;
    }
    if (e.epoch >= epochs) {
      complain("event with epoch " + std::to_string(e.epoch) + " outside 0.." +
               std::to_string(epochs - 1));
      continue;
    }
    if (e.batch_index >= n_batches) {
      complain("event with batch index " + std::to_string(e.batch_index) + " outside 0.." +
               std::to_string(n_batches - 1));
      continue;
    }
    if (e.source == SourceTag::CsdPre) {
      csd_events.push_back(&e);
      auto [it, fresh] = staged_end[e.epoch].emplace(e.batch_index, e.t_end);
      if (!fresh)
        complain("batch " + std::to_string(e.batch_index) + " staged twice in epoch " +
                 std::to_string(e.epoch));
      (void)it;
    } else {
      consumer_events.push_back(&e);
      if (++consumed[e.epoch][e.batch_index] > 1)
        complain("batch " + std::to_string(e.batch_index) + " consumed twice in epoch " +
                 std::to_string(e.epoch));
    }
  }

  for (std::uint32_t e = 0; e < epochs; ++e) {
    std::uint64_t count = 0;
    for (std::uint8_t c : consumed[e]) count += c ? 1 : 0;
    if (count != n_batches)
      complain("epoch " + std::to_string(e) + " consumed " + std::to_string(count) + " of " +
               std::to_string(n_batches) + " batches");
  }

  auto check_overlap = [&complain](std::vector<const TraceEvent*>& events,
                                   const char* timeline) {
    std::sort(events.begin(), events.end(), [](const TraceEvent* a, const TraceEvent* b) {
      return a->t_start != b->t_start ? a->t_start < b->t_start : a->t_end < b->t_end;
    });
    for (std::size_t i = 1; i < events.size(); ++i) {
      if (events[i]->t_start < events[i - 1]->t_end) {
        complain(std::string(timeline) + " timeline overlaps around t=" +
                 std::to_string(micros_to_seconds(events[i]->t_start)) + "s (batches " +
                 std::to_string(events[i - 1]->batch_index) + " and " +
                 std::to_string(events[i]->batch_index) + ")");
      }
    }
  };
  check_overlap(consumer_events, "consumer");
  check_overlap(csd_events, "csd");

  for (const TraceEvent* e : consumer_events) {
    if (e->source != SourceTag::GdsPath) continue;
    auto it = staged_end[e->epoch].find(e->batch_index);
    if (it == staged_end[e->epoch].end()) {
      complain("batch " + std::to_string(e->batch_index) + " consumed from staging in epoch " +
               std::to_string(e->epoch) + " without a staging event");
    } else if (it->second > e->t_start) {
      complain("batch " + std::to_string(e->batch_index) + " consumed at t=" +
               std::to_string(micros_to_seconds(e->t_start)) +
               "s before staging finished at t=" +
               std::to_string(micros_to_seconds(it->second)) + "s");
    }
  }

  return out;
}

WhatIfReport whatif_report(const DatasetSpec& spec, const DeviceProfile& profile) {
  SimConfig cfg;
  cfg.spec = spec;
  cfg.profile = profile;
  cfg.epochs = 1;
  cfg.calibration = CalibrationMode::Exact;

  auto span = [&cfg](Policy p) {
    cfg.policy = p;
    return micros_to_seconds(simulate(cfg).makespan);
  };

  WhatIfReport rep;
  rep.ratio_cpu_csd = static_cast<double>(profile.t_csd_pre) /
                      static_cast<double>(profile.t_cpu_path);
  rep.gds_path_seconds = micros_to_seconds(profile.t_gds_path);
  rep.ratio_gds_csd = static_cast<double>(profile.t_gds_path) /
                      static_cast<double>(profile.t_csd_pre);
  rep.makespan_cpu_only = span(Policy::CpuOnly);
  rep.makespan_mte = span(Policy::Mte);
  rep.makespan_wrr = span(Policy::Wrr);
  rep.mte_speedup_vs_cpu = rep.makespan_cpu_only / rep.makespan_mte - 1.0;
  rep.wrr_speedup_vs_cpu = rep.makespan_cpu_only / rep.makespan_wrr - 1.0;
  rep.wrr_gain_vs_mte = rep.makespan_mte / rep.makespan_wrr - 1.0;
  return rep;
}

std::string WhatIfReport::to_json() const {
  nlohmann::json j;
  j["factors"]["ratio_cpu_csd"] = ratio_cpu_csd;
  j["factors"]["gds_path_seconds"] = gds_path_seconds;
  j["factors"]["ratio_gds_csd"] = ratio_gds_csd;
  j["makespan_cpu_only"] = makespan_cpu_only;
  j["makespan_mte"] = makespan_mte;
  j["makespan_wrr"] = makespan_wrr;
  j["mte_speedup_vs_cpu"] = percent_1dp(mte_speedup_vs_cpu);
  j["wrr_speedup_vs_cpu"] = percent_1dp(wrr_speedup_vs_cpu);
  j["wrr_gain_vs_mte"] = percent_1dp(wrr_gain_vs_mte);
  return j.dump(2);
}

std::string percent_1dp(double fraction) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f%%", fraction * 100.0);
  return buf;
}

}  // namespace ddlp
