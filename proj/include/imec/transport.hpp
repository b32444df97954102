#pragma once

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <memory>
#include <string>

#include <fcntl.h>
#include <netdb.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include "imec/error.hpp"

namespace imec {

/// Bidirectional newline-delimited byte stream.
class LineTransport {
public:
  virtual ~LineTransport() = default;
  /// Writes `line` followed by '\n'.
  virtual void send_line(const std::string& line) = 0;
  /// Reads up to the next '\n' (not included). Throws remote-unavailable on EOF.
  virtual std::string recv_line() = 0;
};

/// Line transport over a pair of file descriptors (socket, pipe ends).
/// Owns and closes both descriptors.
class FdTransport : public LineTransport {
public:
  FdTransport(int read_fd, int write_fd) : read_fd_(read_fd), write_fd_(write_fd) {}
  FdTransport(const FdTransport&) = delete;
  FdTransport& operator=(const FdTransport&) = delete;

  ~FdTransport() override {
    if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
  }

  void send_line(const std::string& line) override {
    std::string buf = line;
    buf.push_back('\n');
    std::size_t off = 0;
    while (off < buf.size()) {
      ssize_t n = send_or_write(write_fd_, buf.data() + off, buf.size() - off);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw Error("remote-unavailable", std::string("write failed: ") + std::strerror(errno));
      off += static_cast<std::size_t>(n);
    }
  }

  std::string recv_line() override {
    while (true) {
      auto pos = pending_.find('\n');
      if (pos != std::string::npos) {
        std::string line = pending_.substr(0, pos);
        pending_.erase(0, pos + 1);
        return line;
      }
      char chunk[4096];
      ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
      if (n < 0 && errno == EINTR) continue;
      if (n < 0) throw Error("remote-unavailable", std::string("read failed: ") + std::strerror(errno));
      if (n == 0) throw Error("remote-unavailable", "connection closed by peer");
      pending_.append(chunk, static_cast<std::size_t>(n));
    }
  }

protected:
  void close_write() noexcept {
    if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
    write_fd_ = -1;
  }

  static ssize_t send_or_write(int fd, const char* data, std::size_t len) {
    // MSG_NOSIGNAL keeps a dropped peer from raising SIGPIPE on sockets.
    ssize_t n = ::send(fd, data, len, MSG_NOSIGNAL);
    if (n < 0 && errno == ENOTSOCK) n = ::write(fd, data, len);
    return n;
  }

private:
  int read_fd_;
  int write_fd_;
  std::string pending_;
};

inline std::unique_ptr<LineTransport> connect_tcp(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res);
  if (rc != 0)
    throw Error("remote-unavailable", "cannot resolve " + host + ": " + ::gai_strerror(rc));
  int fd = -1;
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0)
    throw Error("remote-unavailable", "cannot connect to " + host + ":" + std::to_string(port));
  return std::make_unique<FdTransport>(fd, fd);
}

/// Runs `/bin/sh -c command` and talks to it over its stdin/stdout.
class ProcessTransport : public FdTransport {
public:
  static std::unique_ptr<ProcessTransport> spawn(const std::string& command) {
    int to_child[2], from_child[2];
    if (::pipe(to_child) != 0) throw Error("remote-unavailable", "pipe() failed");
    if (::pipe(from_child) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw Error("remote-unavailable", "pipe() failed");
    }
    pid_t pid = ::fork();
    if (pid < 0) throw Error("remote-unavailable", "fork() failed");
    if (pid == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    return std::unique_ptr<ProcessTransport>(new ProcessTransport(from_child[0], to_child[1], pid));
  }

  // Closing the child's stdin first lets it see EOF before we reap it.
  ~ProcessTransport() override {
    close_write();
    int status = 0;
    ::waitpid(pid_, &status, 0);
  }

private:
  ProcessTransport(int read_fd, int write_fd, pid_t pid) : FdTransport(read_fd, write_fd), pid_(pid) {}

  pid_t pid_;
};

}  // namespace imec
