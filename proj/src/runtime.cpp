#include "ddlp/runtime.hpp"

#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <set>
#include <stdexcept>
#include <thread>
#include <unordered_map>
#include <utility>
#include <variant>

#include "ddlp/staging.hpp"
#include "ddlp/wire.hpp"

namespace ddlp {

namespace {

using Clock = std::chrono::steady_clock;

Micros elapsed_micros(Clock::time_point t0) {
  return std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - t0).count();
}

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

// ---------------------------------------------------------------------------
// Ordered message passing. push() on a closed channel drops (late events from
// exiting threads are harmless); pop() returns nullopt once closed + drained.
// ---------------------------------------------------------------------------

template <typename T>
class Channel {
 public:
  void push(T v) {
    std::lock_guard lock(mu_);
    if (closed_) return;
    q_.push_back(std::move(v));
    cv_.notify_all();
  }

  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !q_.empty() || closed_; });
    return pop_locked();
  }

  std::optional<T> pop_for(std::chrono::milliseconds timeout, bool& timed_out) {
    std::unique_lock lock(mu_);
    timed_out = !cv_.wait_for(lock, timeout, [&] { return !q_.empty() || closed_; });
    if (timed_out) return std::nullopt;
    return pop_locked();
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    cv_.notify_all();
  }

 private:
  std::optional<T> pop_locked() {
    if (q_.empty()) return std::nullopt;
    T v = std::move(q_.front());
    q_.pop_front();
    return v;
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> q_;
  bool closed_ = false;
};

// ---------------------------------------------------------------------------
// Worker pool plumbing: a bounded preprocess buffer. Workers acquire a slot
// before taking an item (FIFO, so the oldest head claim is always in flight;
// with capacity >= worker count the consumer can never starve), deposit the
// finished payload, and the consumer collects it by (epoch, index).
// ---------------------------------------------------------------------------

struct WorkItem {
  std::uint64_t index = 0;
  std::uint32_t epoch = 0;
};

class PayloadBuffer {
 public:
  explicit PayloadBuffer(std::size_t capacity) : cap_(capacity) {}

  struct Slot {
    BatchPayload payload;
    double pre_seconds = 0.0;  // worker-side pipeline time
  };

  void enqueue(WorkItem item) {
    std::lock_guard lock(mu_);
    queue_.push_back(item);
    cv_.notify_all();
  }

  std::optional<WorkItem> acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return closed_ || (!queue_.empty() && in_use_ < cap_); });
    if (closed_) return std::nullopt;
    WorkItem item = queue_.front();
    queue_.pop_front();
    ++in_use_;
    return item;
  }

  void deposit(const WorkItem& item, BatchPayload payload, double pre_seconds) {
    std::lock_guard lock(mu_);
    ready_.emplace(Key{item.epoch, item.index}, Slot{std::move(payload), pre_seconds});
    cv_.notify_all();
  }

  std::optional<Slot> take(std::uint32_t epoch, std::uint64_t index) {
    std::unique_lock lock(mu_);
    const Key key{epoch, index};
    cv_.wait(lock, [&] { return closed_ || ready_.count(key) != 0; });
    auto it = ready_.find(key);
    if (it == ready_.end()) return std::nullopt;  // closed
    Slot slot = std::move(it->second);
    ready_.erase(it);
    --in_use_;
    cv_.notify_all();
    return slot;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    cv_.notify_all();
  }

 private:
  using Key = std::pair<std::uint32_t, std::uint64_t>;
  std::size_t cap_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<WorkItem> queue_;
  std::map<Key, Slot> ready_;
  std::size_t in_use_ = 0;  // in-flight + deposited
  bool closed_ = false;
};

// ---------------------------------------------------------------------------
// Controller events.
// ---------------------------------------------------------------------------

struct ConsumerDone {
  std::uint64_t index = 0;
  std::uint32_t epoch = 0;
  bool staged = false;
  std::uint64_t checksum = 0;
  double pre_seconds = 0.0;     // worker pipeline time (cpu path only)
  double active_seconds = 0.0;  // consumer time excluding the payload wait
  Micros t_start = 0;           // consumer occupancy, run-relative
  Micros t_end = 0;
};

struct CsdInbound {
  wire::Message msg;
  Micros t_recv = 0;
};

struct CsdClosed {};

struct ThreadFailure {
  std::string what;
};

using ControllerEvent = std::variant<ConsumerDone, CsdInbound, CsdClosed, ThreadFailure>;

struct Directive {
  bool staged = false;
  std::uint64_t index = 0;
  std::uint32_t epoch = 0;
  std::string path;                    // staged only
  std::uint64_t announced_checksum = 0;  // staged only
};

void sleep_seconds(double s) {
  if (s > 0.0) std::this_thread::sleep_for(std::chrono::duration<double>(s));
}

// ---------------------------------------------------------------------------
// Controller: owns the scheduler and the trace; the only event-loop mutator.
// ---------------------------------------------------------------------------

class Controller {
 public:
  explicit Controller(const RuntimeConfig& cfg)
      : cfg_(cfg),
        n_batches_(cfg.spec.n_batches()),
        probe_mode_(cfg.policy == Policy::Mte && !cfg.forced_split),
        buffer_(std::max<std::size_t>(2 * cfg.cpu_workers, cfg.cpu_workers + 2)) {}

  RuntimeResult run() {
    scheduler_ = make_scheduler(cfg_.policy, n_batches_, cfg_.forced_split);
    if (cfg_.uses_csd()) {
      csd_ = wire::connect_to(cfg_.csd_host, cfg_.csd_port);
      csd_.send_message(wire::Hello{});
      std::optional<wire::Message> reply = csd_.recv_message();
      if (!reply) throw wire::ConnectionError("csd emulator closed during handshake");
      wire::expect_hello(*reply);
      link_ = Link::Up;
    }

    t0_ = Clock::now();
    start_threads();
    try {
      loop();
    } catch (...) {
      teardown();
      throw;
    }
    teardown();

    RuntimeResult result;
    result.report = build_report(trace_, n_batches_, cfg_.epochs, to_string(cfg_.policy));
    result.report.degraded = scheduler_->degraded();
    result.calibration = scheduler_->calibration();
    result.trace = std::move(trace_);
    result.consumed = std::move(consumed_);
    return result;
  }

 private:
  enum class Link { Unused, Up, Lost };

  void start_threads() {
    for (std::uint32_t w = 0; w < cfg_.cpu_workers; ++w)
      workers_.emplace_back([this] { worker_loop(); });
    consumer_ = std::thread([this] { consumer_loop(); });
    if (link_ == Link::Up)
      reader_ = std::thread([this] { reader_loop(); });
  }

  void loop() {
    start_epoch(0);
    while (!finished_) {
      bool timed_out = false;
      std::optional<ControllerEvent> ev = events_.pop_for(std::chrono::minutes(1), timed_out);
      if (timed_out)
        throw std::runtime_error("runtime stalled: no worker/consumer/socket event for 60 s");
      if (!ev) throw std::logic_error("controller event channel closed while running");
      std::visit([&](auto&& e) { handle(std::forward<decltype(e)>(e)); }, std::move(*ev));
    }
  }

  // ---- thread bodies ------------------------------------------------------

  void worker_loop() {
    try {
      for (;;) {
        std::optional<WorkItem> item = buffer_.acquire();
        if (!item) return;
        const auto begin = Clock::now();
        std::vector<Image> samples = gen_batch(cfg_.spec, item->index);
        BatchPayload payload = run_pipeline(cfg_.pipeline, samples, cfg_.seed, item->index);
        buffer_.deposit(*item, std::move(payload), seconds_since(begin));
      }
    } catch (const std::exception& e) {
      events_.push(ThreadFailure{std::string("cpu worker: ") + e.what()});
    }
  }

  void consumer_loop() {
    try {
      for (;;) {
        std::optional<Directive> d = directives_.pop();
        if (!d) return;
        const Micros t_start = elapsed_micros(t0_);
        std::uint64_t checksum = 0;
        double pre_seconds = 0.0;
        Clock::time_point active_begin;
        if (d->staged) {
          active_begin = Clock::now();
          BatchPayload p = StagingStore::read_file(d->path);  // validates integrity
          if (p.batch_id != d->index)
            throw std::runtime_error("staged file holds batch " + std::to_string(p.batch_id) +
                                     ", expected " + std::to_string(d->index));
          if (p.checksum != d->announced_checksum)
            throw std::runtime_error("staged checksum differs from its announcement");
          checksum = p.checksum;
        } else {
          std::optional<PayloadBuffer::Slot> slot = buffer_.take(d->epoch, d->index);
          if (!slot) return;  // shutdown
          active_begin = Clock::now();
          if (slot->payload.compute_checksum() != slot->payload.checksum)
            throw std::runtime_error("cpu-path payload failed checksum verification");
          checksum = slot->payload.checksum;
          pre_seconds = slot->pre_seconds;
        }
        sleep_seconds(cfg_.consumer_cost_seconds);
        events_.push(ConsumerDone{d->index, d->epoch, d->staged, checksum, pre_seconds,
                                  seconds_since(active_begin), t_start, elapsed_micros(t0_)});
      }
    } catch (const std::exception& e) {
      events_.push(ThreadFailure{std::string("consumer: ") + e.what()});
    }
  }

  void reader_loop() {
    try {
      for (;;) {
        std::optional<wire::Message> m = csd_.recv_message();
        if (!m) break;
        events_.push(CsdInbound{std::move(*m), elapsed_micros(t0_)});
      }
    } catch (const std::exception&) {
      // Fall through: connection loss and clean close meet the same fate.
    }
    events_.push(CsdClosed{});
  }

  // ---- controller-side event handling -------------------------------------

  void handle(ConsumerDone&& d) {
    const SourceTag tag = d.staged ? SourceTag::GdsPath : SourceTag::CpuPath;
    trace_.add({d.t_start, d.t_end, tag, d.index, d.epoch});
    consumed_.push_back({d.index, d.epoch, tag, d.checksum});
    if (d.staged) {
      feed(ev::GdsBatchDone{d.index, d.epoch});
      return;
    }
    const double path_seconds = d.pre_seconds + d.active_seconds;
    if (probe_mode_ && d.epoch == 0 && cpu_probe_count_ < kProbeCount) {
      ++cpu_probe_count_;
      feed(ev::ProbeDone{Prong::Cpu, path_seconds});
    }
    feed(ev::CpuBatchDone{d.index, d.epoch, path_seconds});
  }

  void handle(CsdInbound&& in) {
    std::visit(
        [&](auto&& msg) {
          using M = std::decay_t<decltype(msg)>;
          if constexpr (std::is_same_v<M, wire::BatchStaged>) {
            handle_staged(msg, in.t_recv);
          } else if constexpr (std::is_same_v<M, wire::ProbeResp>) {
            if (scheduler_->calibrating())
              for (std::uint64_t k = 0; k < kProbeCount; ++k)
                feed(ev::ProbeDone{Prong::Csd, msg.t_avg_seconds});
          } else if constexpr (std::is_same_v<M, wire::Ack>) {
            if (awaiting_ack_ == 0) throw wire::ProtocolError("unexpected ack from csd emulator");
            if (--awaiting_ack_ == 0) resolve_barrier();
          } else {
            throw wire::ProtocolError(std::string("unexpected message from csd emulator: ") +
                                      wire::message_type_name(in.msg));
          }
        },
        std::move(in.msg));
  }

  void handle(CsdClosed&&) {
    if (!shutting_down_) lost();
  }

  [[noreturn]] void handle(ThreadFailure&& f) { throw std::runtime_error(f.what); }

  void handle_staged(const wire::BatchStaged& b, Micros t_recv) {
    staged_info_[b.batch_id] = b;
    // The producer worked [recv - duration, recv] on its own clock; clamp to
    // our receive times so the producer timeline stays non-overlapping.
    const Micros duration = seconds_to_micros(b.duration_seconds);
    const Micros t_end = std::max(t_recv, last_csd_end_);
    const Micros t_start = std::max(t_end - duration, last_csd_end_);
    trace_.add({t_start, t_end, SourceTag::CsdPre, b.batch_id, epoch_});
    last_csd_end_ = t_end;
    // Between a stop signal and its ack the epoch is already fully consumed;
    // late stagings are recorded (wasted work) but not offered for training.
    if (awaiting_ack_ == 0) feed(ev::CsdBatchStaged{b.batch_id, epoch_, b.duration_seconds});
  }

  // ---- scheduler plumbing --------------------------------------------------

  void feed(const SchedulerEvent& event) {
    const std::vector<SchedulerAction> actions = scheduler_->on_event(event);
    for (const SchedulerAction& a : actions)
      std::visit([&](const auto& act) { apply(act); }, a);
    flush_csd_claims();
  }

  void apply(const act::PreprocessOnCpu& a) { request_cpu(a.batch_index); }

  void apply(const act::ConsumeCpuBatch& a) {
    request_cpu(a.batch_index);
    directives_.push(Directive{false, a.batch_index, epoch_, {}, 0});
  }

  void apply(const act::PreprocessOnCsd& a) { csd_claims_.push_back(a.batch_index); }

  void apply(const act::ConsumeStaged& a) {
    auto it = staged_info_.find(a.batch_index);
    if (it == staged_info_.end())
      throw std::logic_error("scheduler consumed a batch that was never staged");
    directives_.push(Directive{true, a.batch_index, epoch_, it->second.path,
                               it->second.checksum});
  }

  void apply(const act::SignalCsdStop&) {
    if (link_ == Link::Up) send_stop();
  }

  void apply(const act::EpochDone& a) {
    if (a.epoch + 1 < cfg_.epochs)
      pending_epoch_ = a.epoch + 1;
    else
      pending_finish_ = true;
    if (link_ == Link::Up) {
      // Barrier: any tail work still in flight must land (as recorded waste)
      // or be abandoned before the next epoch reuses the same batch ids.
      if (awaiting_ack_ == 0) send_stop();
      if (awaiting_ack_ > 0) return;  // resolved on Ack (or on link loss)
    }
    resolve_barrier();
  }

  void request_cpu(std::uint64_t index) {
    if (!requested_.insert(index).second) return;
    buffer_.enqueue(WorkItem{index, epoch_});
  }

  void send_stop() {
    try {
      csd_.send_message(wire::Stop{});
      ++awaiting_ack_;
    } catch (const std::exception&) {
      lost();
    }
  }

  void flush_csd_claims() {
    if (csd_claims_.empty()) return;
    std::vector<std::uint64_t> ids;
    ids.swap(csd_claims_);
    if (link_ != Link::Up) return;  // claims die with the link; CsdLost reassigns
    try {
      if (probe_mode_ && !probe_sent_) {
        probe_sent_ = true;
        csd_.send_message(wire::ProbeReq{std::move(ids), to_string(cfg_.pipeline)});
      } else {
        csd_.send_message(wire::PreprocessRange{std::move(ids), to_string(cfg_.pipeline),
                                                cfg_.seed});
      }
    } catch (const std::exception&) {
      lost();
    }
  }

  void start_epoch(std::uint32_t epoch) {
    epoch_ = epoch;
    requested_.clear();
    feed(ev::EpochStart{epoch});
  }

  void resolve_barrier() {
    if (pending_epoch_) {
      const std::uint32_t next = *pending_epoch_;
      pending_epoch_.reset();
      start_epoch(next);
    } else if (pending_finish_) {
      pending_finish_ = false;
      finished_ = true;
    }
  }

  void lost() {
    if (link_ != Link::Up) return;
    link_ = Link::Lost;
    const bool barrier_was_pending = awaiting_ack_ > 0;
    awaiting_ack_ = 0;
    feed(ev::CsdLost{});
    if (barrier_was_pending) resolve_barrier();
  }

  void teardown() {
    shutting_down_ = true;
    buffer_.close();
    directives_.close();
    for (std::thread& w : workers_)
      if (w.joinable()) w.join();
    if (consumer_.joinable()) consumer_.join();
    if (csd_.valid()) csd_.shutdown_both();
    if (reader_.joinable()) reader_.join();
    csd_.close();
  }

  // ---- state ---------------------------------------------------------------

  const RuntimeConfig& cfg_;
  const std::uint64_t n_batches_;
  const bool probe_mode_;

  std::unique_ptr<Scheduler> scheduler_;
  Trace trace_;
  std::vector<ConsumedBatch> consumed_;
  Clock::time_point t0_;

  Channel<ControllerEvent> events_;
  Channel<Directive> directives_;
  PayloadBuffer buffer_;
  std::vector<std::thread> workers_;
  std::thread consumer_;
  std::thread reader_;

  wire::Socket csd_;
  Link link_ = Link::Unused;
  int awaiting_ack_ = 0;
  bool probe_sent_ = false;
  std::vector<std::uint64_t> csd_claims_;
  std::unordered_map<std::uint64_t, wire::BatchStaged> staged_info_;
  Micros last_csd_end_ = 0;

  std::uint32_t epoch_ = 0;
  std::set<std::uint64_t> requested_;  // head batches handed to the pool this epoch
  std::uint64_t cpu_probe_count_ = 0;
  std::optional<std::uint32_t> pending_epoch_;
  bool pending_finish_ = false;
  bool finished_ = false;
  bool shutting_down_ = false;
};

}  // namespace

void RuntimeConfig::validate() const {
  spec.validate();
  if (cpu_workers == 0) throw std::invalid_argument("runtime needs at least one cpu worker");
  if (consumer_cost_seconds < 0.0)
    throw std::invalid_argument("consumer cost must be >= 0");
  if (epochs == 0) throw std::invalid_argument("epochs must be >= 1");
  if (uses_csd() && staging_root.empty())
    throw std::invalid_argument("policies with a csd prong need a staging root");
  if (forced_split) {
    if (policy != Policy::Mte)
      throw std::invalid_argument("a forced split only applies to the static-split policy");
    if (forced_split->n_cpu + forced_split->n_csd != spec.n_batches())
      throw std::invalid_argument("forced split must cover every batch exactly once");
  }
  if (policy == Policy::Mte && !forced_split && spec.n_batches() < 2 * kProbeCount)
    throw std::invalid_argument("probe calibration needs at least 20 batches");
}

RuntimeResult run_learning(const RuntimeConfig& cfg) {
  cfg.validate();
  Controller controller(cfg);
  return controller.run();
}

}  // namespace ddlp
