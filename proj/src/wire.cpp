#include "ddlp/wire.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <utility>

#include <json.hpp>

namespace ddlp::wire {

using nlohmann::json;

namespace {

void require_keys(const json& j, std::initializer_list<const char*> keys) {
  for (const char* k : keys) {
    if (!j.contains(k)) throw ProtocolError(std::string("missing key: ") + k);
  }
  // "type" plus the listed keys, nothing else.
  if (j.size() != keys.size() + 1) throw ProtocolError("unexpected keys in frame body");
}

json to_json(const Message& m) {
  json j;
  std::visit(
      [&](const auto& msg) {
        using M = std::decay_t<decltype(msg)>;
        if constexpr (std::is_same_v<M, Hello>) {
          j = {{"type", "hello"}, {"version", msg.version}};
        } else if constexpr (std::is_same_v<M, ProbeReq>) {
          if (msg.batch_ids.size() != 10)
            throw std::invalid_argument("probe_req must list exactly 10 batch ids");
          j = {{"type", "probe_req"},
               {"batch_ids", msg.batch_ids},
               {"pipeline_id", msg.pipeline_id}};
        } else if constexpr (std::is_same_v<M, ProbeResp>) {
          j = {{"type", "probe_resp"}, {"t_avg_seconds", msg.t_avg_seconds}};
        } else if constexpr (std::is_same_v<M, PreprocessRange>) {
          if (msg.indices.empty())
            throw std::invalid_argument("preprocess_range must list at least one index");
          j = {{"type", "preprocess_range"},
               {"indices", msg.indices},
               {"pipeline_id", msg.pipeline_id},
               {"seed", msg.seed}};
        } else if constexpr (std::is_same_v<M, BatchStaged>) {
          j = {{"type", "batch_staged"},
               {"batch_id", msg.batch_id},
               {"path", msg.path},
               {"checksum", msg.checksum},
               {"duration_seconds", msg.duration_seconds}};
        } else if constexpr (std::is_same_v<M, Stop>) {
          j = {{"type", "stop"}};
        } else {
          static_assert(std::is_same_v<M, Ack>);
          j = {{"type", "ack"}};
        }
      },
      m);
  return j;
}

Message from_json(const json& j) {
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string())
    throw ProtocolError("frame body is not a typed object");
  const std::string type = j["type"].get<std::string>();
  if (type == "hello") {
    require_keys(j, {"version"});
    return Hello{j["version"].get<std::uint32_t>()};
  }
  if (type == "probe_req") {
    require_keys(j, {"batch_ids", "pipeline_id"});
    ProbeReq m{j["batch_ids"].get<std::vector<std::uint64_t>>(),
               j["pipeline_id"].get<std::string>()};
    if (m.batch_ids.size() != 10) throw ProtocolError("probe_req must list exactly 10 batch ids");
    return m;
  }
  if (type == "probe_resp") {
    require_keys(j, {"t_avg_seconds"});
    return ProbeResp{j["t_avg_seconds"].get<double>()};
  }
  if (type == "preprocess_range") {
    require_keys(j, {"indices", "pipeline_id", "seed"});
    PreprocessRange m{j["indices"].get<std::vector<std::uint64_t>>(),
                      j["pipeline_id"].get<std::string>(), j["seed"].get<std::uint64_t>()};
    if (m.indices.empty()) throw ProtocolError("preprocess_range lists no indices");
    return m;
  }
  if (type == "batch_staged") {
    require_keys(j, {"batch_id", "path", "checksum", "duration_seconds"});
    return BatchStaged{j["batch_id"].get<std::uint64_t>(), j["path"].get<std::string>(),
                       j["checksum"].get<std::uint64_t>(), j["duration_seconds"].get<double>()};
  }
  if (type == "stop") {
    require_keys(j, {});
    return Stop{};
  }
  if (type == "ack") {
    require_keys(j, {});
    return Ack{};
  }
  throw ProtocolError("unknown message type: " + type);
}

std::string frame_body(const Message& m) { return to_json(m).dump(); }

}  // namespace

std::string encode_message(const Message& m) {
  const std::string body = frame_body(m);
  if (body.size() > kMaxFrameBytes) throw std::invalid_argument("frame body too large");
  const std::uint32_t len = static_cast<std::uint32_t>(body.size());
  std::string out;
  out.reserve(4 + body.size());
  out.push_back(static_cast<char>(len & 0xff));
  out.push_back(static_cast<char>((len >> 8) & 0xff));
  out.push_back(static_cast<char>((len >> 16) & 0xff));
  out.push_back(static_cast<char>((len >> 24) & 0xff));
  out += body;
  return out;
}

Message decode_message(const std::string& frame) {
  if (frame.size() < 4) throw ProtocolError("frame shorter than its length prefix");
  std::uint32_t len = 0;
  for (int i = 3; i >= 0; --i) len = (len << 8) | static_cast<unsigned char>(frame[static_cast<std::size_t>(i)]);
  if (len == 0) throw ProtocolError("empty frame body");
  if (len > kMaxFrameBytes) throw ProtocolError("frame length exceeds protocol maximum");
  if (frame.size() != 4 + static_cast<std::size_t>(len))
    throw ProtocolError("frame length prefix disagrees with buffer size");
  json j = json::parse(frame.begin() + 4, frame.end(), nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw ProtocolError("frame body is not valid JSON");
  try {
    return from_json(j);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("bad field in frame body: ") + e.what());
  }
}

void expect_hello(const Message& m) {
  const Hello* h = std::get_if<Hello>(&m);
  if (h == nullptr)
    throw HandshakeError(std::string("expected hello, got ") + message_type_name(m));
  if (h->version != kProtocolVersion)
    throw HandshakeError("protocol version mismatch: ours " + std::to_string(kProtocolVersion) +
                         ", theirs " + std::to_string(h->version));
}

const char* message_type_name(const Message& m) {
  return std::visit(
      [](const auto& msg) -> const char* {
        using M = std::decay_t<decltype(msg)>;
        if constexpr (std::is_same_v<M, Hello>) return "hello";
        if constexpr (std::is_same_v<M, ProbeReq>) return "probe_req";
        if constexpr (std::is_same_v<M, ProbeResp>) return "probe_resp";
        if constexpr (std::is_same_v<M, PreprocessRange>) return "preprocess_range";
        if constexpr (std::is_same_v<M, BatchStaged>) return "batch_staged";
        if constexpr (std::is_same_v<M, Stop>) return "stop";
        if constexpr (std::is_same_v<M, Ack>) return "ack";
      },
      m);
}

// ---------------------------------------------------------------------------
// Sockets.
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void throw_errno(const std::string& what) {
  throw ConnectionError(what + ": " + std::strerror(errno));
}

void send_all(int fd, const char* data, std::size_t len) {
  std::size_t sent = 0;
  while (sent < len) {
    ssize_t n = ::send(fd, data + sent, len - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("send");
    }
    sent += static_cast<std::size_t>(n);
  }
}

/// Reads exactly len bytes; returns false on EOF before the first byte.
bool recv_all(int fd, char* data, std::size_t len) {
  std::size_t got = 0;
  while (got < len) {
    ssize_t n = ::recv(fd, data + got, len - got, 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("recv");
    }
    if (n == 0) {
      if (got == 0) return false;
      throw ConnectionError("connection closed mid-frame");
    }
    got += static_cast<std::size_t>(n);
  }
  return true;
}

sockaddr_in make_addr(const std::string& host, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
    throw ConnectionError("not an IPv4 address: " + host);
  return addr;
}

}  // namespace

Socket::~Socket() { close(); }

Socket::Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}

Socket& Socket::operator=(Socket&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = std::exchange(other.fd_, -1);
  }
  return *this;
}

void Socket::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void Socket::shutdown_both() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

void Socket::send_message(const Message& m) {
  if (fd_ < 0) throw ConnectionError("send on closed socket");
  const std::string frame = encode_message(m);
  send_all(fd_, frame.data(), frame.size());
}

std::optional<Message> Socket::recv_message() {
  if (fd_ < 0) throw ConnectionError("recv on closed socket");
  char prefix[4];
  if (!recv_all(fd_, prefix, 4)) return std::nullopt;
  std::uint32_t len = 0;
  for (int i = 3; i >= 0; --i) len = (len << 8) | static_cast<unsigned char>(prefix[i]);
  if (len == 0 || len > kMaxFrameBytes) throw ProtocolError("bad frame length on socket");
  std::string frame(4 + static_cast<std::size_t>(len), '\0');
  std::memcpy(frame.data(), prefix, 4);
  if (!recv_all(fd_, frame.data() + 4, len)) return std::nullopt;  // unreachable: throws mid-frame
  return decode_message(frame);
}

Socket connect_to(const std::string& host, std::uint16_t port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw_errno("socket");
  Socket sock(fd);
  sockaddr_in addr = make_addr(host, port);
  for (;;) {
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0) break;
    if (errno == EINTR) continue;
    throw_errno("connect to " + host + ":" + std::to_string(port));
  }
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return sock;
}

Listener::Listener(const std::string& host, std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw_errno("socket");
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr = make_addr(host, port);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    int saved = errno;
    ::close(fd_);
    fd_ = -1;
    errno = saved;
    throw_errno("bind " + host + ":" + std::to_string(port));
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  if (::listen(fd_, 1) != 0) {
    int saved = errno;
    ::close(fd_);
    fd_ = -1;
    errno = saved;
    throw_errno("listen");
  }
}

Listener::~Listener() {
  if (fd_ >= 0) ::close(fd_);
}

Socket Listener::accept_one() {
  for (;;) {
    int fd = ::accept(fd_, nullptr, nullptr);
    if (fd >= 0) {
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      return Socket(fd);
    }
    if (errno == EINTR) continue;
    throw_errno("accept");
  }
}

}  // namespace ddlp::wire
