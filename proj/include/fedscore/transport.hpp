//
// Copyright 2026 The fedscore Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

// Blocking TCP stream transport carrying protocol frames.

#ifndef FEDSCORE_TRANSPORT_HPP_
#define FEDSCORE_TRANSPORT_HPP_

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>

#include "fedscore/protocol.hpp"

namespace fedscore::transport {

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Peer closed the stream cleanly between frames.
class ConnectionClosed : public TransportError {
 public:
  ConnectionClosed() : TransportError("connection closed by peer") {}
};

class TimeoutError : public TransportError {
 public:
  TimeoutError() : TransportError("timed out waiting for peer") {}
};

inline std::string ErrnoMessage(const char* what) {
  return std::string(what) + ": " + std::strerror(errno);
}

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() { Close(); }
  Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Socket& operator=(Socket&& other) noexcept {
    if (this != &other) {
      Close();
      fd_ = std::exchange(other.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void Close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  void ShutdownWrite() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_WR);
  }

 private:
  int fd_ = -1;
};

namespace internal {

// Waits until fd is readable; timeout < 0 waits forever.
inline void WaitReadable(int fd, std::chrono::milliseconds timeout) {
  pollfd p{fd, POLLIN, 0};
  for (;;) {
    const int rc = ::poll(&p, 1, timeout.count() < 0 ? -1 : static_cast<int>(timeout.count()));
    if (rc > 0) return;
    if (rc == 0) throw TimeoutError();
    if (errno != EINTR) throw TransportError(ErrnoMessage("poll"));
  }
}

// Reads exactly n bytes. Returns false on EOF before the first byte.
inline bool ReadExact(int fd, std::uint8_t* out, std::size_t n,
                      std::chrono::milliseconds timeout) {
  std::size_t got = 0;
  while (got < n) {
    WaitReadable(fd, timeout);
    const ssize_t rc = ::recv(fd, out + got, n - got, 0);
    if (rc == 0) {
      if (got == 0) return false;
      throw TransportError("connection closed mid-frame");
    }
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw TransportError(ErrnoMessage("recv"));
    }
    got += static_cast<std::size_t>(rc);
  }
  return true;
}

}  // namespace internal

// One framed, bidirectional connection.
class FrameStream {
 public:
  explicit FrameStream(Socket socket,
                       std::chrono::milliseconds timeout = std::chrono::milliseconds(-1))
      : socket_(std::move(socket)), timeout_(timeout) {
    int one = 1;
    ::setsockopt(socket_.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }

  void set_timeout(std::chrono::milliseconds t) { timeout_ = t; }

  void WriteFrame(std::span<const std::uint8_t> frame) {
    std::size_t sent = 0;
    while (sent < frame.size()) {
      const ssize_t rc =
          ::send(socket_.fd(), frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw TransportError(ErrnoMessage("send"));
      }
      sent += static_cast<std::size_t>(rc);
    }
  }

  // Throws ConnectionClosed on a clean EOF at a frame boundary.
  protocol::Bytes ReadFrame() {
    protocol::Bytes frame(protocol::kHeaderSize);
    if (!internal::ReadExact(socket_.fd(), frame.data(), frame.size(), timeout_)) {
      throw ConnectionClosed();
    }
    const std::size_t total = *protocol::FrameSize(frame);
    frame.resize(total);
    if (!internal::ReadExact(socket_.fd(), frame.data() + protocol::kHeaderSize,
                             total - protocol::kHeaderSize, timeout_)) {
      throw TransportError("connection closed mid-frame");
    }
    return frame;
  }

  void Send(const protocol::Message& msg,
            const std::optional<protocol::SessionKey>& key = std::nullopt) {
    WriteFrame(protocol::Encode(msg, key));
  }

  protocol::Message Receive(
      const std::optional<protocol::SessionKey>& key = std::nullopt) {
    return protocol::Decode(ReadFrame(), key);
  }

  void Close() { socket_.Close(); }
  void ShutdownWrite() { socket_.ShutdownWrite(); }

 private:
  Socket socket_;
  std::chrono::milliseconds timeout_;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

inline Endpoint ParseEndpoint(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) {
    throw ConfigError("address must be host:port, got '" + text + "'");
  }
  Endpoint ep;
  ep.host = text.substr(0, colon);
  try {
    const int port = std::stoi(text.substr(colon + 1));
    if (port < 0 || port > 65535) throw std::out_of_range("port");
    ep.port = static_cast<std::uint16_t>(port);
  } catch (const std::exception&) {
    throw ConfigError("bad port in '" + text + "'");
  }
  return ep;
}

namespace internal {

inline sockaddr_in ToSockaddr(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  const std::string host = ep.host == "localhost" ? "127.0.0.1" : ep.host;
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    throw ConfigError("unsupported host '" + ep.host + "' (IPv4 literal expected)");
  }
  return addr;
}

}  // namespace internal

class Listener {
 public:
  explicit Listener(const Endpoint& ep) {
    Socket s(::socket(AF_INET, SOCK_STREAM, 0));
    if (!s.valid()) throw TransportError(ErrnoMessage("socket"));
    int one = 1;
    ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr = internal::ToSockaddr(ep);
    if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      throw TransportError(ErrnoMessage("bind"));
    }
    if (::listen(s.fd(), 64) != 0) throw TransportError(ErrnoMessage("listen"));
    socklen_t len = sizeof(addr);
    ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    endpoint_ = {ep.host, ntohs(addr.sin_port)};
    socket_ = std::move(s);
  }

  const Endpoint& endpoint() const { return endpoint_; }

  Socket Accept(std::chrono::milliseconds timeout) {
    internal::WaitReadable(socket_.fd(), timeout);
    const int fd = ::accept(socket_.fd(), nullptr, nullptr);
    if (fd < 0) throw TransportError(ErrnoMessage("accept"));
    return Socket(fd);
  }

 private:
  Socket socket_;
  Endpoint endpoint_;
};

// Connects, retrying while the server is not yet listening.
inline Socket Connect(const Endpoint& ep, std::chrono::milliseconds patience) {
  const auto deadline = std::chrono::steady_clock::now() + patience;
  sockaddr_in addr = internal::ToSockaddr(ep);
  for (;;) {
    Socket s(::socket(AF_INET, SOCK_STREAM, 0));
    if (!s.valid()) throw TransportError(ErrnoMessage("socket"));
    if (::connect(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0) {
      return s;
    }
    if (std::chrono::steady_clock::now() >= deadline) {
      throw TransportError(ErrnoMessage("connect"));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

}  // namespace fedscore::transport

#endif  // FEDSCORE_TRANSPORT_HPP_
