#include "instcache/transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "instcache/error.hpp"

namespace instcache {

namespace {

// Buffered line reader over a file descriptor.
class FdLineTransport : public LineTransport {
public:
    FdLineTransport(int read_fd, int write_fd, pid_t child = -1)
        : read_fd_(read_fd), write_fd_(write_fd), child_(child) {}

    ~FdLineTransport() override { close(); }

    void send_line(std::string_view line) override {
        if (write_fd_ < 0) throw TransportError("transport is closed");
        std::string framed(line);
        framed.push_back('\n');
        size_t off = 0;
        while (off < framed.size()) {
            const ssize_t n = ::write(write_fd_, framed.data() + off, framed.size() - off);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw TransportError(std::string("write failed: ") + std::strerror(errno));
            }
            off += static_cast<size_t>(n);
        }
    }

    std::optional<std::string> recv_line() override {
        if (read_fd_ < 0) return std::nullopt;
        for (;;) {
            const size_t nl = buffer_.find('\n');
            if (nl != std::string::npos) {
                std::string line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                return line;
            }
            char chunk[4096];
            const ssize_t n = ::read(read_fd_, chunk, sizeof(chunk));
            if (n < 0) {
                if (errno == EINTR) continue;
                throw TransportError(std::string("read failed: ") + std::strerror(errno));
            }
            if (n == 0) {
                if (buffer_.empty()) return std::nullopt;
                std::string line = std::move(buffer_);
                buffer_.clear();
                return line;
            }
            buffer_.append(chunk, static_cast<size_t>(n));
        }
    }

    void close() override {
        if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
        if (read_fd_ >= 0) ::close(read_fd_);
        write_fd_ = read_fd_ = -1;
        if (child_ > 0) {
            int status = 0;
            // Give the child a moment to exit on EOF, then make sure.
            if (::waitpid(child_, &status, WNOHANG) == 0) {
                ::kill(child_, SIGTERM);
                ::waitpid(child_, &status, 0);
            }
            child_ = -1;
        }
    }

private:
    int read_fd_;
    int write_fd_;
    pid_t child_;
    std::string buffer_;
};

} // namespace

std::unique_ptr<LineTransport> connect_tcp(const std::string& host, int port, int timeout_ms) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const std::string port_str = std::to_string(port);
    if (::getaddrinfo(host.c_str(), port_str.c_str(), &hints, &res) != 0 || res == nullptr) {
        throw TransportError("cannot resolve " + host);
    }

    int fd = -1;
    for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) continue;
        timeval tv{timeout_ms / 1000, (timeout_ms % 1000) * 1000};
        ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
        ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
        ::close(fd);
        fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) {
        throw TransportError("cannot connect to " + host + ":" + port_str);
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return std::make_unique<FdLineTransport>(fd, fd);
}

std::unique_ptr<LineTransport> spawn_subprocess(const std::vector<std::string>& argv) {
    if (argv.empty()) throw InvalidArgument("subprocess argv is empty");

    int to_child[2];   // parent writes -> child stdin
    int from_child[2]; // child stdout -> parent reads
    if (::pipe(to_child) != 0 || ::pipe(from_child) != 0) {
        throw TransportError("pipe() failed");
    }

    const pid_t pid = ::fork();
    if (pid < 0) throw TransportError("fork() failed");
    if (pid == 0) {
        ::dup2(to_child[0], STDIN_FILENO);
        ::dup2(from_child[1], STDOUT_FILENO);
        ::close(to_child[0]);
        ::close(to_child[1]);
        ::close(from_child[0]);
        ::close(from_child[1]);
        std::vector<char*> args;
        args.reserve(argv.size() + 1);
        for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
        args.push_back(nullptr);
        ::execvp(args[0], args.data());
        ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    return std::make_unique<FdLineTransport>(from_child[0], to_child[1], pid);
}

TcpLineServer::TcpLineServer(const std::string& host, int port) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw TransportError("socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(listen_fd_);
        throw TransportError("bad listen address: " + host);
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(listen_fd_);
        throw TransportError("bind failed on " + host + ":" + std::to_string(port));
    }
    if (::listen(listen_fd_, 8) != 0) {
        ::close(listen_fd_);
        throw TransportError("listen failed");
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

TcpLineServer::~TcpLineServer() { close(); }

std::unique_ptr<LineTransport> TcpLineServer::accept() {
    if (listen_fd_ < 0) return nullptr;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) return nullptr;
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return std::make_unique<FdLineTransport>(fd, fd);
}

void TcpLineServer::close() {
    if (listen_fd_ >= 0) {
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        listen_fd_ = -1;
    }
}

} // namespace instcache
