#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace ddlp::wire {

// ---------------------------------------------------------------------------
// Controller <-> CSD-emulator protocol. One message per frame; a frame is a
// u32 little-endian byte length followed by a JSON body with a "type" tag and
// a fixed key set per type. Payload bytes never travel over the wire: staged
// batches are published as files and announced by path + checksum.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kProtocolVersion = 1;
/// Frames carry ids, paths and checksums only, so anything near this bound is
/// corruption, not data.
inline constexpr std::uint32_t kMaxFrameBytes = 16u << 20;

struct Hello {
  std::uint32_t version = kProtocolVersion;
};

/// Ask the emulator to preprocess + stage exactly these batches (the tail
/// probe set) and report the mean per-batch duration.
struct ProbeReq {
  std::vector<std::uint64_t> batch_ids;  // exactly 10
  std::string pipeline_id;
};

struct ProbeResp {
  double t_avg_seconds = 0.0;
};

/// Preprocess + stage `indices` one at a time, in the given order.
struct PreprocessRange {
  std::vector<std::uint64_t> indices;
  std::string pipeline_id;
  std::uint64_t seed = 0;
};

/// Published only after the staging file is fully written and synced.
struct BatchStaged {
  std::uint64_t batch_id = 0;
  std::string path;
  std::uint64_t checksum = 0;
  double duration_seconds = 0.0;
};

/// Abandon the current range after the in-flight batch; answered with Ack.
struct Stop {};
struct Ack {};

using Message = std::variant<Hello, ProbeReq, ProbeResp, PreprocessRange, BatchStaged, Stop, Ack>;

/// Malformed frame, unknown type, wrong/missing/extra keys.
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// First message not a Hello, or a Hello with the wrong version.
struct HandshakeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Socket-level failure (connect/send/recv).
struct ConnectionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Full frame (length prefix included). Deterministic: equal messages encode
/// to equal bytes. Throws std::invalid_argument on invariant violations
/// (e.g. a ProbeReq without exactly 10 ids).
std::string encode_message(const Message& m);

/// Inverse of encode_message; requires the buffer to hold exactly one
/// complete frame. Throws ProtocolError otherwise.
Message decode_message(const std::string& frame);

/// Validates the handshake message: must be Hello{kProtocolVersion}.
/// Throws HandshakeError otherwise.
void expect_hello(const Message& m);

const char* message_type_name(const Message& m);

// ---------------------------------------------------------------------------
// Minimal blocking TCP plumbing (loopback by default). Sockets own their fd.
// ---------------------------------------------------------------------------

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket();
  Socket(Socket&& other) noexcept;
  Socket& operator=(Socket&& other) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  bool valid() const { return fd_ >= 0; }
  int fd() const { return fd_; }
  void close();
  /// Unblocks a peer/thread stuck in recv on this socket.
  void shutdown_both();

  /// Writes one full frame. Throws ConnectionError on failure.
  void send_message(const Message& m);
  /// Reads one full frame. Throws ConnectionError on failure or mid-frame
  /// EOF, ProtocolError on a bad frame, and returns nullopt on a clean EOF
  /// at a frame boundary.
  std::optional<Message> recv_message();

 private:
  int fd_ = -1;
};

/// Connects to host:port. Throws ConnectionError if unreachable.
Socket connect_to(const std::string& host, std::uint16_t port);

class Listener {
 public:
  /// Binds + listens; port 0 picks an ephemeral port (see port()).
  Listener(const std::string& host, std::uint16_t port);
  ~Listener();
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;

  std::uint16_t port() const { return port_; }
  Socket accept_one();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

}  // namespace ddlp::wire
