#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <iterator>

#include "protolearn/error.hpp"
#include "protolearn/symbol.hpp"
#include "protolearn/text.hpp"

// Newline-delimited text records between the adapter and a SUL. A record is
// `RESET`, `RESET-OK`, `NIL`, or a packet record listing the concrete packet
// fields as key=value pairs in a fixed order.
namespace protolearn::wire {

inline constexpr std::string_view reset_record = "RESET";
inline constexpr std::string_view reset_ok_record = "RESET-OK";
inline constexpr std::string_view nil_record = "NIL";

namespace detail {
inline std::string opt(const std::optional<Value>& v) { return v ? std::to_string(*v) : std::string("null"); }
} // namespace detail

inline std::string encode(const ConcretePacket& p) {
  if (p.is_null) return std::string(nil_record);
  std::string s;
  s += "isNull=false";
  s += " sourcePort=" + std::to_string(p.source_port);
  s += " destinationPort=" + std::to_string(p.destination_port);
  s += " seqNumber=" + std::to_string(p.seq_number);
  s += " ackNumber=" + std::to_string(p.ack_number);
  s += " dataOffset=" + detail::opt(p.data_offset);
  s += " reserved=" + std::to_string(p.reserved);
  s += " flags=" + p.flags;
  s += " window=" + std::to_string(p.window);
  s += " checksum=" + detail::opt(p.checksum);
  s += " urgentPointer=" + std::to_string(p.urgent_pointer);
  return s;
}

inline ConcretePacket decode(std::string_view record) {
  if (record == nil_record) return ConcretePacket::null_packet();
  static constexpr std::string_view keys[] = {"isNull",   "sourcePort", "destinationPort", "seqNumber",
                                              "ackNumber", "dataOffset", "reserved",        "flags",
                                              "window",   "checksum",   "urgentPointer"};
  auto toks = text::split_ws(record);
  if (toks.size() != std::size(keys))
    throw Error(ErrorCode::parse, "packet record has " + std::to_string(toks.size()) + " fields, expected 11");
  std::string vals[std::size(keys)];
  for (std::size_t i = 0; i < toks.size(); ++i) {
    auto eq = toks[i].find('=');
    if (eq == std::string::npos || std::string_view(toks[i]).substr(0, eq) != keys[i])
      throw Error(ErrorCode::parse, "packet record field " + std::to_string(i + 1) + " should be '" +
                                        std::string(keys[i]) + "', got '" + toks[i] + "'");
    vals[i] = toks[i].substr(eq + 1);
  }
  auto num = [&](std::size_t i) {
    auto v = text::parse_int(vals[i]);
    if (!v || *v < 0) throw Error(ErrorCode::parse, std::string(keys[i]) + " is not a non-negative integer");
    return *v;
  };
  auto opt_num = [&](std::size_t i) -> std::optional<Value> {
    if (vals[i] == "null") return std::nullopt;
    return num(i);
  };
  if (vals[0] == "true") return ConcretePacket::null_packet();
  if (vals[0] != "false") throw Error(ErrorCode::parse, "isNull must be true or false");
  ConcretePacket p;
  p.source_port = num(1);
  p.destination_port = num(2);
  if (p.source_port > 65535 || p.destination_port > 65535) throw Error(ErrorCode::parse, "port out of range");
  p.seq_number = num(3);
  p.ack_number = num(4);
  p.data_offset = opt_num(5);
  p.reserved = num(6);
  p.flags = vals[7];
  p.window = num(8);
  p.checksum = opt_num(9);
  p.urgent_pointer = num(10);
  return p;
}

// Bidirectional line transport.
class Channel {
public:
  virtual ~Channel() = default;
  virtual void send_line(std::string_view line) = 0;
  // Returns nullopt when nothing arrives within `timeout`.
  virtual std::optional<std::string> receive_line(std::chrono::milliseconds timeout) = 0;
};

struct Endpoint {
  std::string host;
  std::string port;
};

// Accepts `host:port` or `tcp://host:port`.
inline Endpoint parse_endpoint(std::string_view s) {
  if (s.starts_with("tcp://")) s.remove_prefix(6);
  auto colon = s.rfind(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 1 == s.size())
    throw Error(ErrorCode::config, "endpoint must look like host:port, got '" + std::string(s) + "'");
  auto port = text::parse_int(s.substr(colon + 1));
  if (!port || *port < 0 || *port > 65535) throw Error(ErrorCode::config, "bad port in endpoint '" + std::string(s) + "'");
  return {std::string(s.substr(0, colon)), std::string(s.substr(colon + 1))};
}

// Owns a socket file descriptor.
class Socket {
public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { reset(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

private:
  int fd_ = -1;
};

// Line-buffered reader/writer over a connected stream socket.
class SocketChannel : public Channel {
public:
  explicit SocketChannel(Socket s) : sock_(std::move(s)) {
    int one = 1;
    ::setsockopt(sock_.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }

  static SocketChannel connect(const Endpoint& ep) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (int rc = ::getaddrinfo(ep.host.c_str(), ep.port.c_str(), &hints, &res); rc != 0)
      throw TransportError("cannot resolve " + ep.host + ": " + ::gai_strerror(rc), false);
    std::string last_error = "no addresses";
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
      Socket s(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
      if (!s.valid()) continue;
      if (::connect(s.fd(), ai->ai_addr, ai->ai_addrlen) == 0) {
        ::freeaddrinfo(res);
        return SocketChannel(std::move(s));
      }
      last_error = std::strerror(errno);
    }
    ::freeaddrinfo(res);
    throw TransportError("cannot connect to " + ep.host + ":" + ep.port + ": " + last_error, true);
  }

  void send_line(std::string_view line) override {
    std::string buf(line);
    buf += '\n';
    std::size_t off = 0;
    while (off < buf.size()) {
      ssize_t n = ::send(sock_.fd(), buf.data() + off, buf.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("send failed: ") + std::strerror(errno), true);
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::optional<std::string> receive_line(std::chrono::milliseconds timeout) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() < 0) return std::nullopt;
      pollfd pfd{sock_.fd(), POLLIN, 0};
      int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("poll failed: ") + std::strerror(errno), true);
      }
      if (rc == 0) return std::nullopt;
      char chunk[4096];
      ssize_t n = ::recv(sock_.fd(), chunk, sizeof(chunk), 0);
      if (n == 0) throw TransportError("peer closed the connection", true);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("recv failed: ") + std::strerror(errno), true);
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

private:
  Socket sock_;
  std::string buffer_;
};

// Listening socket bound to host:port (port 0 picks a free one).
class Listener {
public:
  explicit Listener(const Endpoint& ep) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    if (int rc = ::getaddrinfo(ep.host.c_str(), ep.port.c_str(), &hints, &res); rc != 0)
      throw TransportError("cannot resolve " + ep.host + ": " + ::gai_strerror(rc), false);
    sock_ = Socket(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
    int one = 1;
    ::setsockopt(sock_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (!sock_.valid() || ::bind(sock_.fd(), res->ai_addr, res->ai_addrlen) != 0 || ::listen(sock_.fd(), 8) != 0) {
      std::string err = std::strerror(errno);
      ::freeaddrinfo(res);
      throw TransportError("cannot listen on " + ep.host + ":" + ep.port + ": " + err, false);
    }
    ::freeaddrinfo(res);
    sockaddr_in addr{};
    socklen_t len = sizeof(addr);
    ::getsockname(sock_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }

  int port() const { return port_; }

  // Waits up to `timeout` for a connection.
  std::optional<Socket> accept(std::chrono::milliseconds timeout) {
    pollfd pfd{sock_.fd(), POLLIN, 0};
    int rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    if (rc <= 0) return std::nullopt;
    int fd = ::accept(sock_.fd(), nullptr, nullptr);
    if (fd < 0) return std::nullopt;
    return Socket(fd);
  }

private:
  Socket sock_;
  int port_ = 0;
};

} // namespace protolearn::wire
