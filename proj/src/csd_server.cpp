#include "ddlp/csd_server.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <variant>
#include <vector>

#include "ddlp/staging.hpp"
#include "ddlp/wire.hpp"

namespace ddlp {

namespace {

using Clock = std::chrono::steady_clock;

void sleep_seconds(double s) {
  if (s > 0.0) std::this_thread::sleep_for(std::chrono::duration<double>(s));
}

/// Owns the inbound side of the connection: a reader thread pulls frames into
/// a queue so the preprocessing loop can notice a Stop between batches.
class Inbox {
 public:
  explicit Inbox(wire::Socket& sock) : sock_(sock) {
    reader_ = std::thread([this] { this->run(); });
  }

  ~Inbox() {
    sock_.shutdown_both();
    if (reader_.joinable()) reader_.join();
  }

  bool stop_requested() const { return stop_requested_.load(std::memory_order_acquire); }
  void clear_stop() { stop_requested_.store(false, std::memory_order_release); }

  /// Next message, or nullopt once the peer closed and the queue drained.
  std::optional<wire::Message> next() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !queue_.empty() || closed_; });
    if (queue_.empty()) return std::nullopt;
    wire::Message m = std::move(queue_.front());
    queue_.pop_front();
    return m;
  }

 private:
  void run() {
    try {
      for (;;) {
        std::optional<wire::Message> m = sock_.recv_message();
        if (!m) break;
        if (std::holds_alternative<wire::Stop>(*m))
          stop_requested_.store(true, std::memory_order_release);
        std::lock_guard lock(mu_);
        queue_.push_back(std::move(*m));
        cv_.notify_all();
      }
    } catch (const std::exception&) {
      // Connection error: treated as peer-gone, same as a clean close.
    }
    std::lock_guard lock(mu_);
    closed_ = true;
    cv_.notify_all();
  }

  wire::Socket& sock_;
  std::thread reader_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<wire::Message> queue_;
  bool closed_ = false;
  std::atomic<bool> stop_requested_{false};
};

class Server {
 public:
  Server(const CsdServerConfig& cfg, wire::Socket sock)
      : cfg_(cfg), store_(cfg.staging_root), sock_(std::move(sock)) {}

  void run() {
    {
      std::optional<wire::Message> first = sock_.recv_message();
      if (!first) return;  // controller left before the handshake
      wire::expect_hello(*first);
      sock_.send_message(wire::Hello{wire::kProtocolVersion});
    }
    Inbox inbox(sock_);
    for (;;) {
      std::optional<wire::Message> m = inbox.next();
      if (!m || crashed_) return;
      std::visit(
          [&](auto&& msg) {
            using M = std::decay_t<decltype(msg)>;
            if constexpr (std::is_same_v<M, wire::ProbeReq>) {
              handle_probe(msg, inbox);
            } else if constexpr (std::is_same_v<M, wire::PreprocessRange>) {
              handle_range(msg, inbox);
            } else if constexpr (std::is_same_v<M, wire::Stop>) {
              inbox.clear_stop();
              sock_.send_message(wire::Ack{});
            } else {
              throw wire::ProtocolError(std::string("unexpected message: ") +
                                        wire::message_type_name(*m));
            }
          },
          *m);
      if (crashed_) return;
    }
  }

 private:
  /// Preprocess + durably stage one batch, then announce it. Returns false
  /// once the fault-injection limit drops the connection.
  bool stage_one(std::uint64_t batch_id, PipelineId pipeline, std::uint64_t seed) {
    const auto t0 = Clock::now();
    std::vector<Image> samples = gen_batch(cfg_.spec, batch_id);
    BatchPayload payload = run_pipeline(pipeline, samples, seed, batch_id);
    sleep_seconds(cfg_.throttle_seconds);
    const std::filesystem::path path = store_.put(payload);
    const double duration = std::chrono::duration<double>(Clock::now() - t0).count();
    last_duration_ = duration;
    if (cfg_.fail_after_stagings && staged_count_ >= *cfg_.fail_after_stagings) {
      // Abrupt exit: no announcement, no Ack. shutdown (not just close) so the
      // peer sees EOF even while our own reader thread still sits in recv.
      sock_.shutdown_both();
      crashed_ = true;
      return false;
    }
    sock_.send_message(
        wire::BatchStaged{batch_id, path.string(), payload.checksum, duration});
    ++staged_count_;
    return true;
  }

  void handle_probe(const wire::ProbeReq& req, Inbox& inbox) {
    const PipelineId pipeline = parse_pipeline_id(req.pipeline_id);
    double total = 0.0;
    std::uint64_t measured = 0;
    for (std::uint64_t id : req.batch_ids) {
      if (inbox.stop_requested() || crashed_) return;
      if (!stage_one(id, pipeline, cfg_.seed)) return;
      total += last_duration_;
      ++measured;
    }
    if (measured > 0)
      sock_.send_message(wire::ProbeResp{total / static_cast<double>(measured)});
  }

  void handle_range(const wire::PreprocessRange& range, Inbox& inbox) {
    const PipelineId pipeline = parse_pipeline_id(range.pipeline_id);
    for (std::uint64_t id : range.indices) {
      if (inbox.stop_requested() || crashed_) return;
      if (!stage_one(id, pipeline, range.seed)) return;
    }
  }

  const CsdServerConfig& cfg_;
  StagingStore store_;
  wire::Socket sock_;
  std::uint64_t staged_count_ = 0;
  double last_duration_ = 0.0;
  bool crashed_ = false;
};

}  // namespace

void CsdServerConfig::validate() const {
  spec.validate();
  if (staging_root.empty()) throw std::invalid_argument("csd server needs a staging root");
  if (throttle_seconds < 0.0) throw std::invalid_argument("throttle must be >= 0");
}

void csd_emulator_serve(const CsdServerConfig& cfg,
                        const std::function<void(std::uint16_t)>& on_listening) {
  cfg.validate();
  wire::Listener listener(cfg.host, cfg.port);
  if (on_listening) on_listening(listener.port());
  Server server(cfg, listener.accept_one());
  server.run();
}

}  // namespace ddlp
