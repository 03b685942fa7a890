#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace instcache {

// Bidirectional newline-delimited text channel.
class LineTransport {
public:
    virtual ~LineTransport() = default;
    virtual void send_line(std::string_view line) = 0; // appends '\n'
    virtual std::optional<std::string> recv_line() = 0; // nullopt on EOF
    virtual void close() = 0;
};

// Throws TransportError when the endpoint is unreachable.
std::unique_ptr<LineTransport> connect_tcp(const std::string& host, int port,
                                           int timeout_ms = 10000);

// Spawns argv[0] with the given arguments; the transport speaks to the
// child's stdin/stdout. The child is terminated when the transport closes.
std::unique_ptr<LineTransport> spawn_subprocess(const std::vector<std::string>& argv);

// Minimal accept loop for serving the wire protocol over TCP.
class TcpLineServer {
public:
    TcpLineServer(const std::string& host, int port); // port 0 = ephemeral
    ~TcpLineServer();

    int port() const { return port_; }
    std::unique_ptr<LineTransport> accept(); // blocking; nullptr once closed
    void close();

private:
    int listen_fd_ = -1;
    int port_ = 0;
};

} // namespace instcache
