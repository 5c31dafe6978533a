#include "tslc/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>

namespace tslc::proto {

namespace {

struct InprocShared {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::vector<std::uint8_t>> a_to_b, b_to_a;
  bool closed = false;
  std::vector<std::uint8_t>* capture = nullptr;
};

class InprocTransport final : public Transport {
 public:
  InprocTransport(std::shared_ptr<InprocShared> sh, bool is_a) : sh_(std::move(sh)), is_a_(is_a) {}

  void send(const Message& m) override {
    auto bytes = encode(m);
    std::lock_guard<std::mutex> lk(sh_->mu);
    if (sh_->closed) throw TransportError("transport closed");
    if (sh_->capture)
      sh_->capture->insert(sh_->capture->end(), bytes.begin(), bytes.end());
    (is_a_ ? sh_->a_to_b : sh_->b_to_a).push_back(std::move(bytes));
    sh_->cv.notify_all();
  }

  Message recv() override {
    std::unique_lock<std::mutex> lk(sh_->mu);
    auto& q = is_a_ ? sh_->b_to_a : sh_->a_to_b;
    sh_->cv.wait(lk, [&] { return !q.empty() || sh_->closed; });
    if (q.empty()) throw TransportError("transport closed");
    auto bytes = std::move(q.front());
    q.pop_front();
    lk.unlock();
    return decode(bytes);
  }

  void close() override {
    std::lock_guard<std::mutex> lk(sh_->mu);
    sh_->closed = true;
    sh_->cv.notify_all();
  }

 private:
  std::shared_ptr<InprocShared> sh_;
  bool is_a_;
};

void write_all(int fd, const std::uint8_t* data, std::size_t len) {
  while (len > 0) {
    const ssize_t n = ::write(fd, data, len);
    if (n <= 0) throw TransportError("socket write failed");
    data += n;
    len -= static_cast<std::size_t>(n);
  }
}

void read_exact(int fd, std::uint8_t* data, std::size_t len) {
  while (len > 0) {
    const ssize_t n = ::read(fd, data, len);
    if (n <= 0) throw TransportError("socket closed mid-message");
    data += n;
    len -= static_cast<std::size_t>(n);
  }
}

class TcpTransport final : public Transport {
 public:
  explicit TcpTransport(int fd) : fd_(fd) {}
  ~TcpTransport() override { close(); }

  void send(const Message& m) override {
    if (fd_ < 0) throw TransportError("transport closed");
    const auto bytes = encode(m);
    write_all(fd_, bytes.data(), bytes.size());
  }

  Message recv() override {
    if (fd_ < 0) throw TransportError("transport closed");
    // Fixed prefix, then dims, then payload length, then payload; the
    // assembled buffer goes through the same decode() as in-process mode.
    std::vector<std::uint8_t> buf(kHeaderPrefix);
    read_exact(fd_, buf.data(), buf.size());
    const std::uint8_t ndim = buf[28];
    if (ndim > kMaxDims) throw CodecError("ndim exceeds limit", 28);
    const std::size_t dims_len = static_cast<std::size_t>(ndim) * 4;
    buf.resize(kHeaderPrefix + dims_len + 8);
    read_exact(fd_, buf.data() + kHeaderPrefix, dims_len + 8);
    std::uint64_t payload_len = 0;
    for (int i = 0; i < 8; ++i)
      payload_len |= static_cast<std::uint64_t>(buf[kHeaderPrefix + dims_len + i]) << (8 * i);
    if (payload_len > kMaxPayload)
      throw CodecError("payload exceeds cap", kHeaderPrefix + dims_len);
    const std::size_t head = buf.size();
    buf.resize(head + payload_len);
    read_exact(fd_, buf.data() + head, static_cast<std::size_t>(payload_len));
    return decode(buf);
  }

  void close() override {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_;
};

}  // namespace

std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>> make_inproc_pair(
    std::vector<std::uint8_t>* capture) {
  auto sh = std::make_shared<InprocShared>();
  sh->capture = capture;
  return {std::make_unique<InprocTransport>(sh, true),
          std::make_unique<InprocTransport>(sh, false)};
}

TcpListener::TcpListener(std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw TransportError("cannot create listener socket");
  const int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd_);
    throw TransportError("cannot bind port " + std::to_string(port));
  }
  if (::listen(fd_, 8) != 0) {
    ::close(fd_);
    throw TransportError("listen failed");
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() { shutdown(); }

void TcpListener::shutdown() {
  if (fd_ >= 0) {
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    fd_ = -1;
  }
}

std::unique_ptr<Transport> TcpListener::accept_one() {
  const int cfd = ::accept(fd_, nullptr, nullptr);
  if (cfd < 0) throw TransportError("accept failed (listener closed?)");
  return std::make_unique<TcpTransport>(cfd);
}

std::unique_ptr<Transport> tcp_connect(const std::string& host, std::uint16_t port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw TransportError("cannot create socket");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw TransportError("bad address " + host);
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd);
    throw TransportError("cannot connect to " + host + ":" + std::to_string(port));
  }
  return std::make_unique<TcpTransport>(fd);
}

}  // namespace tslc::proto
