#include "instcache/remote_model.hpp"

#include <cmath>
#include <sstream>

#include "instcache/digest.hpp"
#include "json_util.hpp"

namespace instcache {

namespace {

std::vector<std::string> split_argv(const std::string& cmd) {
    std::vector<std::string> argv;
    std::istringstream ss(cmd);
    std::string word;
    while (ss >> word) argv.push_back(word);
    return argv;
}

std::unique_ptr<LineTransport> open_endpoint(const RemoteModelConfig& cfg) {
    const size_t colon = cfg.endpoint.find(':');
    const std::string kind = cfg.endpoint.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : cfg.endpoint.substr(colon + 1);
    if (kind == "tcp") {
        const size_t port_sep = arg.rfind(':');
        if (port_sep == std::string::npos) {
            throw InvalidArgument("tcp endpoint must be tcp:host:port");
        }
        return connect_tcp(arg.substr(0, port_sep), std::stoi(arg.substr(port_sep + 1)),
                           cfg.timeout_ms);
    }
    if (kind == "cmd") {
        auto argv = split_argv(arg);
        if (argv.empty()) throw InvalidArgument("cmd endpoint needs a program");
        return spawn_subprocess(argv);
    }
    throw InvalidArgument("unknown external endpoint kind: " + kind);
}

} // namespace

struct RemoteModel::Reply {
    jsonio::json body;
};

RemoteModel::RemoteModel(const RemoteModelConfig& cfg)
    : RemoteModel(cfg, open_endpoint(cfg)) {}

RemoteModel::RemoteModel(const RemoteModelConfig& cfg, std::unique_ptr<LineTransport> transport)
    : cfg_(cfg), transport_(std::move(transport)) {
    spec_.vocab_size = 0; // discovered from the root distribution
    spec_.max_len = cfg_.max_len;
    spec_.bos_id = -2; // never on the wire
    spec_.eos_id = -1; // patched once the eos token is seen
    spec_.unk_id = -1;

    // Prime the vocabulary from the full root distribution; this also
    // verifies the endpoint speaks the protocol.
    const StateId root = root_state();
    TokenDistribution d = distribution(root, kAllTokens);
    spec_.vocab_size = static_cast<int32_t>(d.entries.size());
    if (spec_.eos_id < 0) {
        throw TransportError("external model never produced the eos token \"" + cfg_.eos_text +
                             "\"");
    }
    vocab_primed_ = true;
}

RemoteModel::~RemoteModel() {
    if (transport_) transport_->close();
}

RemoteModel::Reply RemoteModel::roundtrip(const std::string& request) {
    std::lock_guard<std::mutex> lock(mu_);
    transport_->send_line(request);
    auto line = transport_->recv_line();
    if (!line.has_value()) throw TransportError("external model closed the connection");
    Reply reply;
    reply.body = jsonio::json::parse(*line, nullptr, false);
    if (reply.body.is_discarded()) {
        throw TransportError("external model sent malformed JSON: " + *line);
    }
    if (reply.body.contains("error")) {
        throw TransportError("external model error: " +
                             reply.body["error"].get<std::string>());
    }
    return reply;
}

std::vector<RemoteModel::Reply> RemoteModel::roundtrip_batch(
    std::span<const std::string> requests) {
    std::lock_guard<std::mutex> lock(mu_);
    for (const auto& r : requests) transport_->send_line(r);
    std::vector<Reply> replies;
    replies.reserve(requests.size());
    for (size_t i = 0; i < requests.size(); ++i) {
        auto line = transport_->recv_line();
        if (!line.has_value()) throw TransportError("external model closed the connection");
        Reply reply;
        reply.body = jsonio::json::parse(*line, nullptr, false);
        if (reply.body.is_discarded()) {
            throw TransportError("external model sent malformed JSON: " + *line);
        }
        if (reply.body.contains("error")) {
            throw TransportError("external model error: " +
                                 reply.body["error"].get<std::string>());
        }
        replies.push_back(std::move(reply));
    }
    return replies;
}

int64_t RemoteModel::remote_of(StateId state) const {
    auto it = remote_states_.find(state);
    if (it == remote_states_.end()) {
        throw StateError("state " + std::to_string(state) + " is not live");
    }
    return it->second;
}

StateId RemoteModel::root_state() {
    if (root_ != 0 && ledger_.alive(root_)) return root_;
    Reply reply = roundtrip(R"({"op":"root"})");
    const int64_t remote = jsonio::require<int64_t>(reply.body, "state", "root reply");
    root_ = ledger_.create(0);
    remote_states_[root_] = remote;
    return root_;
}

void RemoteModel::learn_token(TokenId id, const std::string& text) {
    std::lock_guard<std::mutex> lock(vocab_mu_);
    auto [it, inserted] = token_texts_.emplace(id, text);
    if (inserted) {
        text_to_token_.emplace(text, id);
        if (text == cfg_.eos_text) spec_.eos_id = id;
        if (text == cfg_.unk_text) spec_.unk_id = id;
    }
}

TokenDistribution RemoteModel::parse_distribution(const Reply& reply, int top_k) {
    const auto& tokens = reply.body.contains("tokens") ? reply.body["tokens"] : jsonio::json();
    if (!tokens.is_array()) throw TransportError("dist reply lacks a tokens array");
    TokenDistribution dist;
    dist.entries.reserve(tokens.size());
    for (const auto& t : tokens) {
        const TokenId id = jsonio::require<TokenId>(t, "id", "dist token");
        const std::string text = jsonio::require<std::string>(t, "text", "dist token");
        const double logp = jsonio::require<double>(t, "logp", "dist token");
        learn_token(id, text);
        dist.entries.push_back({id, std::exp(logp)});
    }
    dist.sort_canonical();
    if (top_k == kAllTokens) {
        dist.validate(1e-6); // wire floats round-trip, allow a little slack
    } else {
        dist.truncate_top_k(top_k);
    }
    return dist;
}

TokenDistribution RemoteModel::distribution(StateId state, int top_k) {
    ledger_.check_alive(state);
    jsonio::json req;
    req["op"] = "dist";
    req["state"] = remote_of(state);
    req["top_k"] = top_k;
    Reply reply = roundtrip(req.dump());
    return parse_distribution(reply, top_k);
}

std::vector<TokenDistribution> RemoteModel::distribution_batch(std::span<const StateId> states,
                                                               int top_k) {
    std::vector<std::string> requests;
    requests.reserve(states.size());
    for (StateId s : states) {
        ledger_.check_alive(s);
        jsonio::json req;
        req["op"] = "dist";
        req["state"] = remote_of(s);
        req["top_k"] = top_k;
        requests.push_back(req.dump());
    }
    std::vector<TokenDistribution> out;
    out.reserve(states.size());
    size_t off = 0;
    while (off < requests.size()) {
        const size_t n = std::min(static_cast<size_t>(cfg_.batch_size), requests.size() - off);
        auto replies = roundtrip_batch(std::span<const std::string>(requests.data() + off, n));
        for (auto& r : replies) out.push_back(parse_distribution(r, top_k));
        off += n;
    }
    return out;
}

StateId RemoteModel::extend(StateId state, TokenId token) {
    const int parent_depth = ledger_.depth(state);
    if (token == spec_.eos_id) throw StateError("cannot extend past eos");
    jsonio::json req;
    req["op"] = "extend";
    req["state"] = remote_of(state);
    req["token"] = token;
    Reply reply = roundtrip(req.dump());
    const int64_t remote = jsonio::require<int64_t>(reply.body, "state", "extend reply");
    const StateId local = ledger_.create(parent_depth + 1);
    remote_states_[local] = remote;
    return local;
}

void RemoteModel::release(StateId state) {
    const int64_t remote = remote_of(state);
    ledger_.remove(state);
    remote_states_.erase(state);
    if (state == root_) root_ = 0;
    jsonio::json req;
    req["op"] = "free";
    req["state"] = remote;
    roundtrip(req.dump());
}

int RemoteModel::depth(StateId state) const { return ledger_.depth(state); }

std::string RemoteModel::token_text(TokenId token) const {
    std::lock_guard<std::mutex> lock(vocab_mu_);
    auto it = token_texts_.find(token);
    if (it == token_texts_.end()) {
        throw InvalidArgument("remote token " + std::to_string(token) + " has no known text");
    }
    return it->second;
}

std::optional<TokenId> RemoteModel::lookup_token(std::string_view word) const {
    std::lock_guard<std::mutex> lock(vocab_mu_);
    auto it = text_to_token_.find(std::string(word));
    if (it == text_to_token_.end()) return std::nullopt;
    return it->second;
}

std::string RemoteModel::digest() const { return digest_hex("external:" + cfg_.endpoint); }

bool RemoteModel::cloneable() const {
    return cfg_.endpoint.rfind("tcp:", 0) == 0;
}

std::unique_ptr<TokenModel> RemoteModel::clone() const {
    if (!cloneable()) {
        throw Error("a subprocess-backed external model cannot be cloned");
    }
    return std::make_unique<RemoteModel>(cfg_);
}

} // namespace instcache
