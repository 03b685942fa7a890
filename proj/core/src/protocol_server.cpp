#include "instcache/protocol_server.hpp"

#include <cmath>
#include <istream>
#include <memory>
#include <ostream>
#include <thread>
#include <vector>

#include "json_util.hpp"

namespace instcache {

std::string handle_protocol_line(TokenModel& model, const std::string& line) {
    using jsonio::json;
    json reply;
    try {
        json req = json::parse(line);
        const std::string op = jsonio::require<std::string>(req, "op", "request");
        if (op == "root") {
            reply["state"] = model.root_state();
        } else if (op == "dist") {
            const StateId state = jsonio::require<StateId>(req, "state", "dist request");
            const int top_k = jsonio::get_or<int>(req, "top_k", kAllTokens);
            const TokenDistribution dist = model.distribution(state, top_k);
            json tokens = json::array();
            for (const auto& e : dist.entries) {
                json t;
                t["id"] = e.token;
                t["text"] = model.token_text(e.token);
                t["logp"] = std::log(e.prob);
                tokens.push_back(std::move(t));
            }
            reply["tokens"] = std::move(tokens);
        } else if (op == "extend") {
            const StateId state = jsonio::require<StateId>(req, "state", "extend request");
            const TokenId token = jsonio::require<TokenId>(req, "token", "extend request");
            reply["state"] = model.extend(state, token);
        } else if (op == "free") {
            const StateId state = jsonio::require<StateId>(req, "state", "free request");
            model.release(state);
            reply["ok"] = true;
        } else {
            reply["error"] = "unknown op: " + op;
        }
    } catch (const std::exception& e) {
        reply = json();
        reply["error"] = e.what();
    }
    return reply.dump();
}

void serve_model_stream(TokenModel& model, std::istream& in, std::ostream& out) {
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out << handle_protocol_line(model, line) << '\n';
        out.flush();
    }
}

void serve_model_tcp(TokenModel& model, TcpLineServer& server, const std::atomic<bool>* stop) {
    std::vector<std::thread> sessions;
    for (;;) {
        if (stop != nullptr && stop->load()) break;
        auto client = server.accept();
        if (!client) break; // server closed
        // One session per connection; state lineages are per-client, the
        // model's ledgers are internally synchronized.
        sessions.emplace_back([&model, client = std::shared_ptr<LineTransport>(
                                           std::move(client))] {
            for (;;) {
                auto line = client->recv_line();
                if (!line.has_value()) break;
                if (line->empty()) continue;
                try {
                    client->send_line(handle_protocol_line(model, *line));
                } catch (const TransportError&) {
                    break; // client went away
                }
            }
        });
    }
    for (auto& t : sessions) {
        if (t.joinable()) t.join();
    }
}

} // namespace instcache
