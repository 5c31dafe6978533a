#pragma once

#include <memory>
#include <string>

#include "tslc/message.hpp"

namespace tslc::proto {

/// Whole-message, in-order delivery or failure; no partial messages surface.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(const Message& m) = 0;
  virtual Message recv() = 0;  // blocks; TransportError on close/failure
  virtual void close() = 0;
};

/// Two connected in-process endpoints running the same codec bytes as TCP.
/// `capture`, when set, accumulates every encoded byte crossing the pair in
/// both directions (traffic-inspection tests).
std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>> make_inproc_pair(
    std::vector<std::uint8_t>* capture = nullptr);

class TcpListener {
 public:
  explicit TcpListener(std::uint16_t port);  // binds 127.0.0.1
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::unique_ptr<Transport> accept_one();
  std::uint16_t port() const { return port_; }
  void shutdown();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

std::unique_ptr<Transport> tcp_connect(const std::string& host, std::uint16_t port);

}  // namespace tslc::proto
