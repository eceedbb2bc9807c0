#include "keep/gkc/net.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <filesystem>

#include "keep/error.hpp"
#include "keep/serving/snapshot.hpp"

namespace keep::gkc {

namespace {

std::string errno_text() { return std::strerror(errno); }

// False on orderly EOF before any byte; throws on errors or mid-read EOF.
bool read_exact(int fd, char* dst, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd, dst + got, n - got, 0);
    if (r == 0) {
      if (got == 0) return false;
      throw IoError("connection closed mid-frame");
    }
    if (r < 0) {
      if (errno == EINTR) continue;
      throw IoError("recv failed: " + errno_text());
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

void write_all(int fd, const std::string& bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t r = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw IoError("send failed: " + errno_text());
    }
    sent += static_cast<std::size_t>(r);
  }
}

Frame error_frame(ErrorCode code, const std::string& message) {
  return {FrameType::kError, encode_error({code, message})};
}

[[noreturn]] void raise_error_frame(const Frame& f) {
  const auto e = decode_error(f.payload);
  switch (e.code) {
    case ErrorCode::kProtocol: throw ProtocolError("server: " + e.message);
    case ErrorCode::kVersion: throw VersionError("server: " + e.message);
    case ErrorCode::kIo: throw IoError("server: " + e.message);
    case ErrorCode::kInternal: break;
  }
  throw StateError("server: " + e.message);
}

}  // namespace

Server::Server(VersionStore& store, std::string snapshot_dir, std::uint16_t port,
               std::string host)
    : store_(store), snapshot_dir_(std::move(snapshot_dir)), host_(std::move(host)), port_(port) {}

Server::~Server() { stop(); }

void Server::start() {
  if (running_) throw StateError("server already running");
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw IoError("socket failed: " + errno_text());
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port_);
  if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    throw InvalidArgument("bad listen address '" + host_ + "'");
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 ||
      ::listen(listen_fd_, 64) < 0) {
    const auto msg = errno_text();
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw IoError("cannot listen on " + host_ + ":" + std::to_string(port_) + ": " + msg);
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  running_ = true;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void Server::stop() {
  if (!running_.exchange(false)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  if (acceptor_.joinable()) acceptor_.join();
  std::list<std::pair<int, std::thread>> conns;
  {
    std::lock_guard lock(conn_mu_);
    for (auto& [fd, t] : conns_) {
      if (fd >= 0) ::shutdown(fd, SHUT_RDWR);
    }
    conns.swap(conns_);
  }
  for (auto& [fd, t] : conns) {
    if (t.joinable()) t.join();
  }
}

void Server::accept_loop() {
  while (running_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      return;
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    std::lock_guard lock(conn_mu_);
    if (!running_) {
      ::close(fd);
      return;
    }
    // Reap connections that have finished.
    for (auto it = conns_.begin(); it != conns_.end();) {
      if (it->first < 0) {
        it->second.join();
        it = conns_.erase(it);
      } else {
        ++it;
      }
    }
    conns_.emplace_back(fd, std::thread([this, fd] { serve_connection(fd); }));
  }
}

void Server::serve_connection(int fd) {
  ++served_;
  try {
    while (running_) {
      char header[kHeaderSize];
      if (!read_exact(fd, header, kHeaderSize)) break;
      FrameHeader h;
      try {
        h = decode_header(std::string_view(header, kHeaderSize));
      } catch (const ProtocolError& e) {
        write_all(fd, encode_frame(error_frame(ErrorCode::kProtocol, e.what())));
        break;
      }
      Frame request{h.type, std::string(h.payload_len, '\0')};
      if (h.payload_len > 0 && !read_exact(fd, request.payload.data(), h.payload_len)) break;
      bool close_after = false;
      const Frame reply = handle(request, close_after);
      write_all(fd, encode_frame(reply));
      if (close_after) break;
    }
  } catch (const std::exception&) {
    // Broken connection; nothing to answer.
  }
  std::lock_guard lock(conn_mu_);
  for (auto& entry : conns_) {
    if (entry.first == fd) entry.first = -1;
  }
  ::shutdown(fd, SHUT_RDWR);
  ::close(fd);
}

Frame Server::handle(const Frame& request, bool& close_after) {
  try {
    switch (request.type) {
      case FrameType::kLookupRequest: {
        const auto q = decode_lookup_request(request.payload);
        return {FrameType::kLookupResponse, encode_lookup_response(store_.lookup(q))};
      }
      case FrameType::kPublishNotice: {
        const auto notice = decode_publish(request.payload);
        std::filesystem::path p(notice.path);
        if (p.is_relative()) p = std::filesystem::path(snapshot_dir_) / p;
        auto snap = serving::load_snapshot(p.string());
        if (snap.version != notice.version) {
          throw VersionError("snapshot file holds version " + std::to_string(snap.version) +
                             ", notice says " + std::to_string(notice.version));
        }
        const auto v = store_.publish(std::move(snap));
        return {FrameType::kPublishNotice, encode_publish({v, ""})};
      }
      default:
        close_after = true;
        return error_frame(ErrorCode::kProtocol, "unexpected frame type from client");
    }
  } catch (const ProtocolError& e) {
    close_after = true;
    return error_frame(ErrorCode::kProtocol, e.what());
  } catch (const VersionError& e) {
    return error_frame(ErrorCode::kVersion, e.what());
  } catch (const IoError& e) {
    return error_frame(ErrorCode::kIo, e.what());
  } catch (const std::exception& e) {
    return error_frame(ErrorCode::kInternal, e.what());
  }
}

Client::Client(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const auto service = std::to_string(port);
  if (::getaddrinfo(host.c_str(), service.c_str(), &hints, &res) != 0 || res == nullptr) {
    throw IoError("cannot resolve " + host);
  }
  fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd_ < 0 || ::connect(fd_, res->ai_addr, res->ai_addrlen) < 0) {
    const auto msg = errno_text();
    ::freeaddrinfo(res);
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
    throw IoError("cannot connect to " + host + ":" + service + ": " + msg);
  }
  ::freeaddrinfo(res);
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

Client::~Client() {
  if (fd_ >= 0) ::close(fd_);
}

Frame Client::read_frame() {
  char header[kHeaderSize];
  if (!read_exact(fd_, header, kHeaderSize)) throw IoError("server closed the connection");
  const auto h = decode_header(std::string_view(header, kHeaderSize));
  Frame f{h.type, std::string(h.payload_len, '\0')};
  if (h.payload_len > 0 && !read_exact(fd_, f.payload.data(), h.payload_len)) {
    throw IoError("server closed the connection");
  }
  return f;
}

Frame Client::round_trip(const Frame& f) {
  write_all(fd_, encode_frame(f));
  auto reply = read_frame();
  if (reply.type == FrameType::kError) raise_error_frame(reply);
  return reply;
}

Frame Client::exchange_raw(const std::string& bytes) {
  write_all(fd_, bytes);
  return read_frame();
}

LookupResponse Client::lookup(std::span<const Quadruple> batch) {
  const auto reply = round_trip({FrameType::kLookupRequest, encode_lookup_request(batch)});
  if (reply.type != FrameType::kLookupResponse) throw ProtocolError("expected a lookup response");
  auto resp = decode_lookup_response(reply.payload);
  if (resp.size() != batch.size()) throw ProtocolError("lookup response has the wrong count");
  return resp;
}

std::uint32_t Client::publish(std::uint32_t version, const std::string& path) {
  const auto reply = round_trip({FrameType::kPublishNotice, encode_publish({version, path})});
  if (reply.type != FrameType::kPublishNotice) throw ProtocolError("expected a publish ack");
  return decode_publish(reply.payload).version;
}

std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& text) {
  std::string rest = text;
  if (rest.rfind("gkc:", 0) == 0) rest = rest.substr(4);
  const auto colon = rest.rfind(':');
  if (colon == std::string::npos || colon == 0) {
    throw InvalidArgument("endpoint '" + text + "' is not host:port");
  }
  unsigned long port = 0;
  try {
    std::size_t used = 0;
    port = std::stoul(rest.substr(colon + 1), &used);
    if (used != rest.size() - colon - 1) throw std::invalid_argument("port");
  } catch (const std::exception&) {
    throw InvalidArgument("endpoint '" + text + "' has a bad port");
  }
  if (port == 0 || port > 65535) throw InvalidArgument("endpoint port out of range");
  return {rest.substr(0, colon), static_cast<std::uint16_t>(port)};
}

}  // namespace keep::gkc
