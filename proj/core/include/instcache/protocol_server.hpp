#pragma once

#include <atomic>
#include <iosfwd>
#include <string>

#include "instcache/token_model.hpp"
#include "instcache/transport.hpp"

namespace instcache {

// Serves any TokenModel over the line-delimited JSON wire protocol (the
// counterpart of RemoteModel). One reply line per request line, in order;
// failures answer {"error": "..."} and keep the session alive.
std::string handle_protocol_line(TokenModel& model, const std::string& line);

// Blocks until EOF on `in`.
void serve_model_stream(TokenModel& model, std::istream& in, std::ostream& out);

// Blocks; accepts clients sequentially until the server is closed or
// `stop` becomes true (checked between clients).
void serve_model_tcp(TokenModel& model, TcpLineServer& server,
                     const std::atomic<bool>* stop = nullptr);

} // namespace instcache
