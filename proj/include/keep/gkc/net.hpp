#pragma once

#include <atomic>
#include <cstdint>
#include <list>
#include <mutex>
#include <string>
#include <thread>

#include "keep/gkc/protocol.hpp"
#include "keep/gkc/store.hpp"

namespace keep::gkc {

// TCP front end for a VersionStore, one thread per connection. Lookup
// frames are answered in order; publish notices load a snapshot file and
// publish it. Malformed or oversized frames get an error frame and the
// connection is closed.
class Server {
 public:
  // port 0 binds an ephemeral port (see port()).
  Server(VersionStore& store, std::string snapshot_dir, std::uint16_t port,
         std::string host = "127.0.0.1");
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  void start();
  void stop();
  std::uint16_t port() const { return port_; }
  std::size_t connections_served() const { return served_.load(); }

 private:
  void accept_loop();
  void serve_connection(int fd);
  Frame handle(const Frame& request, bool& close_after);

  VersionStore& store_;
  std::string snapshot_dir_;
  std::string host_;
  std::uint16_t port_;
  int listen_fd_ = -1;
  std::atomic<bool> running_{false};
  std::atomic<std::size_t> served_{0};
  std::thread acceptor_;
  std::mutex conn_mu_;
  std::list<std::pair<int, std::thread>> conns_;
};

class Client : public KnowledgeService {
 public:
  Client(const std::string& host, std::uint16_t port);
  ~Client() override;
  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  // Throws ProtocolError / VersionError / IoError when the server answers
  // with an error frame.
  LookupResponse lookup(std::span<const Quadruple> batch) override;
  std::uint32_t publish(std::uint32_t version, const std::string& path);

  // Sends raw bytes and returns the next frame; used to probe the server.
  Frame exchange_raw(const std::string& bytes);

 private:
  Frame round_trip(const Frame& f);
  Frame read_frame();

  int fd_ = -1;
};

// "host:port" or "gkc:host:port".
std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& text);

}  // namespace keep::gkc
